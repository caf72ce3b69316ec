#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lesdet/les.hpp"
#include "lesdet/serialize.hpp"

namespace lesdet {

inline constexpr const char* kDataRootEnv = "LESDET_DATA_ROOT";

/// Where images come from. `synth` generates them; `cifar10` reads the binary
/// batches under `path`, resolved against the data root.
struct DatasetSpec {
  std::string source = "synth";
  std::string path;
  std::string style = "gratings";
  std::size_t n_train = 10000;
  std::size_t n_test = 1000;
  int n_class = 10;
  std::size_t image_size = 32;
  std::uint64_t seed = 1;
};

struct SubstituteSpec {
  std::string name;
  std::string arch;
  int epochs = 10;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t samples = 3000;  // drawn from the training pool
  std::uint64_t seed = 0;
};

struct RoleSpec {
  std::string trainer;               // S_T: crafts the detector's training adversaries
  std::vector<std::string> victims;  // S_V: craft the evaluation adversaries
  std::string classifier;            // M_C: the protected classifier
};

struct AttackPlan {
  std::string train = "PGD(8,4,10)";
  std::vector<std::string> eval{"PGD(8,4,10)", "FGSM(8)", "GN(8)", "PGD(1,1,10)"};
  std::uint64_t seed = 3;
};

struct CalibrationSpec {
  double k = 95.0;
  std::size_t samples = kDefaultSampleSetSize;
  std::uint64_t seed = 5;
};

struct LimitedDataSpec {
  std::vector<double> fractions{0.4, 1.0};
  std::uint64_t seed = 6;
};

struct TransferSpec {
  DatasetSpec dataset;
  std::string substitute;  // spec reused to build adversaries on the target data
  std::string attack = "PGD(8,4,10)";
  std::size_t samples = 200;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  std::vector<SubstituteSpec> substitutes;
  RoleSpec roles;
  AttackPlan attacks;
  LesConfig les;
  std::vector<std::size_t> detector_channels = kDetectorChannels;
  std::uint64_t detector_seed = 7;
  CalibrationSpec calibration;
  LimitedDataSpec limited_data;
  std::optional<TransferSpec> transfer;

  const SubstituteSpec& substitute(const std::string& name) const;
  void validate() const;

  /// Seed actually used by a process: the section seed mixed with the global
  /// seed, so that `--seed` moves every stream at once.
  std::uint64_t effective_seed(std::uint64_t section_seed) const;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

Json config_to_json(const ExperimentConfig& c);
/// SHA-256 of the canonical (sorted-key, compact) JSON form.
std::string config_hash(const ExperimentConfig& c);

/// Data root from the environment, or the working directory when unset.
std::filesystem::path data_root();

struct ExperimentData {
  Dataset train;
  Dataset test;
  std::string id;  // hash over both splits
};

/// Builds or loads both splits; cifar10 paths are resolved against `root`.
ExperimentData load_experiment_data(const DatasetSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& root);

}  // namespace lesdet
