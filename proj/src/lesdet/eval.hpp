#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lesdet/attacks.hpp"
#include "lesdet/les.hpp"
#include "lesdet/models.hpp"

namespace lesdet {

/// P(adv > nat) + 0.5 P(adv == nat) over all pairs, computed exactly by ranking.
double roc_auc(std::span<const double> nat_scores, std::span<const double> adv_scores);

struct AccuracyError {
  double accuracy = 0.0;  // naturals classified correctly and passed by the detector
  double error = 0.0;     // adversaries misclassified and passed by the detector
  double accuracy_no_detector = 0.0;
  double error_no_detector = 0.0;
};

/// Core counting rule over precomputed predictions and detector decisions.
AccuracyError accuracy_error(std::span<const int> nat_pred, std::span<const int> nat_labels,
                             std::span<const char> nat_flagged, std::span<const int> adv_pred,
                             std::span<const int> adv_labels, std::span<const char> adv_flagged);

AccuracyError accuracy_error(const Network& classifier, const DetectorArtifact& artifact,
                             const Dataset& natural, const AdversarialSet& adv);

struct EnergySummary {
  double mean = 0.0, stddev = 0.0, min = 0.0, median = 0.0, max = 0.0;
};
EnergySummary summarize(std::span<const double> energies);

struct EvalRow {
  std::string detector;  // S_T id, or a sweep label
  std::string attack;    // canonical attack name
  AttackConfig config;
  std::string source;    // id of the model that generated the adversaries
  double auc = 0.0;
  AccuracyError ae;
  double nat_flagged = 0.0;  // fraction of naturals above the threshold
  double adv_flagged = 0.0;
  EnergySummary nat_energy, adv_energy;
};

struct EvalReport {
  std::string experiment;
  std::string dataset_id;
  std::string artifact_hash;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;
  Json extra = Json::object();  // experiment-specific fields, JSON output only

  static const char* csv_header();
  std::string to_csv() const;
  Json to_json() const;
  static EvalReport from_json(const Json& j);
};

/// Detector energies, flags and classifier predictions for one natural set,
/// reused across every attack row.
struct NaturalEval {
  std::vector<double> energies;
  std::vector<char> flagged;
  std::vector<int> predictions;
};
NaturalEval evaluate_naturals(const DetectorArtifact& a, const Network& classifier,
                              const Dataset& natural);

EvalRow evaluate_attack(const DetectorArtifact& a, const Network& classifier,
                        const Dataset& natural, const NaturalEval& nat, const AdversarialSet& adv,
                        const std::string& detector_label);

/// Spectral norm of the linear part of one conv/dense layer, by seeded power
/// iteration on A^T A through forward and adjoint passes. Stops after
/// kPowerIterations iterations or when the estimate changes by less than 1e-6
/// (relative).
inline constexpr int kPowerIterations = 2000;

double layer_spectral_norm(const Network& net, std::size_t param_layer, std::uint64_t seed = 0);

/// Product of per-layer spectral norms for parameterized layers [0, upto);
/// ReLU, max-pool and flatten contribute 1.
double lipschitz_bound(const Network& net, std::size_t upto_param_layers,
                       std::uint64_t seed = 0);

}  // namespace lesdet
