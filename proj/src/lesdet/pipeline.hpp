#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lesdet/config.hpp"
#include "lesdet/experiments.hpp"

namespace lesdet {

/// File layout of one experiment directory.
struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path substitute(const std::string& name) const;
  std::filesystem::path train_attacks() const;
  std::filesystem::path eval_attacks(const std::string& victim, const std::string& attack) const;
  std::filesystem::path detector_network() const;
  std::filesystem::path detector_artifact() const;
  std::filesystem::path les_report() const;
  std::filesystem::path report(const std::string& name, const std::string& ext) const;
  std::filesystem::path transfer_dir() const;
};

/// File-name form of an attack name, e.g. "PGD(8,4,10)" -> "PGD_8_4_10".
std::string attack_slug(const std::string& attack);

/// The experiment driver behind every CLI subcommand. Each command reads the
/// artifacts of earlier commands from the output directory and writes its own;
/// outputs depend only on the config (including its seed) and those inputs.
class Pipeline {
 public:
  using Logger = std::function<void(const std::string&)>;

  Pipeline(ExperimentConfig cfg, std::filesystem::path out, std::filesystem::path data_root,
           Logger log = {});

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const std::string& config_hash() const noexcept { return hash_; }
  const OutputLayout& layout() const noexcept { return layout_; }

  /// Trains every substitute, or only `name` when given.
  void train_substitutes(const std::string& name = "");
  void gen_attacks();
  void train_detector();
  void calibrate();
  /// suite: grid, limited-data, lambda or width.
  EvalReport evaluate(const std::string& suite = "grid");
  EvalReport transfer();
  Json lipschitz();
  /// Joins evaluation reports (default: every suite report present) into
  /// reports/summary.{csv,json}. Refuses reports from different datasets.
  Json report(const std::vector<std::filesystem::path>& inputs = {});

  static const std::vector<std::string>& suites();

 private:
  const ExperimentData& data();
  Json meta() const;
  void check_dataset(const Json& meta, const std::filesystem::path& from);
  Network load_substitute(const std::string& name);
  SuiteInputs suite_inputs(const AdversarialSet& training, const Network& classifier,
                           const std::vector<AdversarialSet>& eval_sets);
  std::vector<AdversarialSet> load_eval_sets();
  LesConfig les_config() const;
  LesHooks hooks() const;
  void write_report(const EvalReport& r, const std::string& name);
  void log(const std::string& msg) const;

  ExperimentConfig cfg_;
  std::string hash_;
  OutputLayout layout_;
  std::filesystem::path data_root_;
  Logger log_;
  std::optional<ExperimentData> data_;
};

}  // namespace lesdet
