#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lesdet/attacks.hpp"
#include "lesdet/dataset.hpp"
#include "lesdet/models.hpp"
#include "lesdet/serialize.hpp"

namespace lesdet {

/// Mean absolute value of a feature map.
double energy(const Tensor& features);

/// y (e - lambda_n)^2 + (1 - y)(e - lambda_a)^2 with y = 1 for natural inputs.
double les_loss(double e, int y, double lambda_n, double lambda_a);

struct LesConfig {
  double lambda_n = 0.1;
  std::vector<double> lambda_a{0.9, 1.3, 2.3};
  int epochs = 500;  // per stage
  std::vector<double> lr{0.005, 0.005, 0.001};
  std::size_t batch = 32;  // natural/adversarial pairs per mini-batch
  AttackConfig attack;     // adversaries used for training, PGD(8,4,10)
  std::uint64_t seed = 0;

  void validate(std::size_t detector_layers) const;

  static LesConfig paper_defaults();
  static LesConfig desk_defaults();  // 50 epochs per stage
};

Json les_config_to_json(const LesConfig& c);
LesConfig les_config_from_json(const Json& j);

struct StageStats {
  std::size_t stage = 0;             // 0-based parameterized layer index
  std::vector<double> epoch_loss;
  double nat_mean = 0.0, adv_mean = 0.0;              // at the stage's own layer
  double final_nat_mean = 0.0, final_adv_mean = 0.0;  // at the detector's last layer

  double gap() const { return adv_mean - nat_mean; }
  double final_gap() const { return final_adv_mean - final_nat_mean; }
};

struct LesReport {
  std::vector<StageStats> stages;
};

struct LesHooks {
  std::function<void(const std::string&)> log;
  // Called after each stage with the detector as it stands at that point.
  std::function<void(const StageStats&, const Network&)> on_stage;
};

/// Staged training: stage i freezes every other layer and fits layer i so that
/// natural energies approach lambda_n and adversarial ones lambda_a[i].
/// Inputs of the trained layer are precomputed once per stage, which is exact
/// because the prefix is frozen.
LesReport les_train(Network& det, std::span<const Tensor> natural,
                    std::span<const Tensor> adversarial, const LesConfig& cfg,
                    const LesHooks& hooks = {});

/// Energy of every parameterized layer's raw output for one input.
std::vector<double> layer_energies(const Network& det, const Tensor& x);

/// Energy of one parameterized layer (default: the last) per image. Each image
/// is evaluated on its own so results never depend on batch composition.
std::vector<double> detector_energies(const Network& det, std::span<const Tensor> images,
                                      std::size_t layer = kNoIndex);

/// Value at 1-based rank ceil(k/100 * N) of the ascending sort.
double nearest_rank(std::vector<double> values, double k);

double calibrate_threshold(const Network& det, const SampleSet& s, double k);

struct DetectorArtifact {
  Network detector;
  double threshold = 0.0;
  double k = 95.0;
  std::string calibration_hash;
  std::uint64_t calibration_seed = 0;
  LesConfig config;
  Json provenance = Json::object();  // config hash, dataset hash, ...
};

std::string sample_set_hash(const SampleSet& s);
std::string artifact_hash(const DetectorArtifact& a);

/// Calibrates a trained detector on `s` and packages it.
DetectorArtifact make_artifact(Network det, const SampleSet& s, std::uint64_t calibration_seed,
                               double k, const LesConfig& cfg);

struct Detection {
  bool adversarial = false;
  double energy = 0.0;
};

/// Adversarial iff the final-layer energy is strictly above the threshold.
Detection detect(const DetectorArtifact& a, const Tensor& x);

void save_artifact(const DetectorArtifact& a, const std::filesystem::path& path);
DetectorArtifact load_artifact(const std::filesystem::path& path);

}  // namespace lesdet
