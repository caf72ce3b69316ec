// lesdet command-line driver. Links only against the C API in lesdet.h.
//
// Exit codes (see docs/FORMATS.md):
//   0 success, 1 internal, 2 usage or invalid argument, 3 config schema,
//   4 missing/unreadable file, 5 corrupt artifact, 6 shape mismatch,
//   7 dataset mismatch between artifacts, 8 invalid state.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "lesdet/lesdet.h"

namespace {

constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::string out = "out";
  std::string data_root;
  std::uint64_t seed = 0;
  bool quiet = false;
  std::string name;
  std::string suite = "grid";
  std::vector<std::string> inputs;
};

void log_to_stderr(const char* msg, void*) { std::fprintf(stderr, "lesdet: %s\n", msg); }

int report_failure(lesdet_status s) {
  std::fprintf(stderr, "lesdet: error[%s]: %s\n", lesdet_status_name(s), lesdet_last_error());
  return static_cast<int>(s);
}

using Experiment = std::unique_ptr<lesdet_experiment, decltype(&lesdet_experiment_free)>;

int run(const std::string& command, const Options& o, bool seed_given) {
  lesdet_experiment* raw = nullptr;
  lesdet_status s = lesdet_experiment_open(o.config.c_str(), seed_given ? 1 : 0, o.seed, o.out.c_str(),
                                           o.data_root.empty() ? nullptr : o.data_root.c_str(), &raw);
  if (s != LESDET_OK) return report_failure(s);
  Experiment e(raw, &lesdet_experiment_free);
  if (!o.quiet) lesdet_experiment_set_log(e.get(), &log_to_stderr, nullptr);
  if (!o.quiet) std::fprintf(stderr, "lesdet: config %s\n", lesdet_experiment_config_hash(e.get()));

  if (command == "train-substitute") {
    s = lesdet_train_substitute(e.get(), o.name.c_str());
  } else if (command == "gen-attacks") {
    s = lesdet_gen_attacks(e.get());
  } else if (command == "train-detector") {
    s = lesdet_train_detector(e.get());
  } else if (command == "calibrate") {
    s = lesdet_calibrate(e.get());
  } else if (command == "evaluate") {
    s = lesdet_evaluate(e.get(), o.suite.c_str());
  } else if (command == "transfer") {
    s = lesdet_transfer(e.get());
  } else if (command == "lipschitz") {
    s = lesdet_lipschitz(e.get());
  } else {
    std::vector<const char*> files;
    for (const auto& f : o.inputs) files.push_back(f.c_str());
    s = lesdet_report(e.get(), files.data(), files.size());
  }
  return s == LESDET_OK ? 0 : report_failure(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise energy separation detector: training, calibration and evaluation"};
  app.set_version_flag("--version", lesdet_version());
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("--config", o.config, "Experiment config (YAML)")->required();
  auto* seed_opt = app.add_option("--seed", o.seed, "Override the config's top-level seed");
  app.add_option("--out", o.out, "Output directory for artifacts and reports")->capture_default_str();
  app.add_option("--data-root", o.data_root, "Dataset root (default: $LESDET_DATA_ROOT, then the working directory)");
  app.add_flag("-q,--quiet", o.quiet, "Suppress progress messages");

  auto* ts = app.add_subcommand("train-substitute", "Train the substitute classifiers");
  ts->add_option("--name", o.name, "Train only this substitute");
  app.add_subcommand("gen-attacks", "Craft training and evaluation adversaries");
  app.add_subcommand("train-detector", "Run staged LES training of the detector");
  app.add_subcommand("calibrate", "Select the energy threshold on natural samples");
  auto* ev = app.add_subcommand("evaluate", "Score the detector and write a report");
  ev->add_option("--suite", o.suite, "grid, limited-data, lambda or width")
      ->check(CLI::IsMember({"grid", "limited-data", "lambda", "width"}))
      ->capture_default_str();
  app.add_subcommand("transfer", "Recalibrate the threshold on the transfer dataset and score it");
  app.add_subcommand("lipschitz", "Compare Lipschitz bounds of trained and initial detectors");
  auto* rp = app.add_subcommand("report", "Join evaluation reports into a summary");
  rp->add_option("inputs", o.inputs, "Report JSON files (default: all suite reports in --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return run(app.get_subcommands().front()->get_name(), o, seed_opt->count() > 0);
}
