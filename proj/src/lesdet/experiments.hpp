#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesdet/eval.hpp"

namespace lesdet {

/// Everything needed to train, calibrate and score one detector.
struct SuiteInputs {
  const AdversarialSet* training = nullptr;         // natural/adversarial pairs from S_T
  const Dataset* test = nullptr;                    // held-out naturals
  const Network* classifier = nullptr;              // M_C
  std::vector<const AdversarialSet*> eval_sets;     // adversaries crafted on `test`
  SampleSet calibration;
  std::uint64_t calibration_seed = 0;
  double k = 95.0;
  std::uint64_t detector_seed = 0;
  Shape detector_input{3, 32, 32};
  std::vector<std::size_t> detector_channels = kDetectorChannels;
};

struct TrainedDetector {
  DetectorArtifact artifact;
  LesReport report;
};

TrainedDetector train_detector(const SuiteInputs& in, const LesConfig& cfg,
                               const LesHooks& hooks = {});

/// One row per evaluation set, all scored by the same artifact.
EvalReport evaluate_sets(const DetectorArtifact& a, const Network& classifier, const Dataset& test,
                         const std::vector<const AdversarialSet*>& sets,
                         const std::string& detector_label);

/// Pairs (naturals, adversaries) restricted to floor(fraction * N) entries in
/// their original order; fraction 1 keeps the set unchanged.
AdversarialSet subset_pairs(const AdversarialSet& s, double fraction, std::uint64_t seed);

/// Trains one detector per training set (one per S_T) and scores every
/// evaluation set whose source differs from that S_T.
EvalReport model_agnostic_suite(const std::vector<const AdversarialSet*>& training_sets,
                                const SuiteInputs& in, const LesConfig& cfg,
                                const LesHooks& hooks = {});

/// One detector per fraction of the training pairs; every seed except the
/// subset draw is shared.
EvalReport limited_data_suite(const std::vector<double>& fractions, const SuiteInputs& in,
                              const LesConfig& cfg, std::uint64_t subset_seed,
                              const LesHooks& hooks = {});

/// The seven lambda_a settings D1..D7 (lambda_n fixed).
std::vector<std::vector<double>> lambda_sweep_settings();
EvalReport lambda_sweep(const SuiteInputs& in, const LesConfig& cfg, const LesHooks& hooks = {});

/// Detector channel plans compared in the width experiment, widest first.
std::vector<std::vector<std::size_t>> width_sweep_plans();
/// Rows carry the AUC per plan; the final-layer gap is in the returned reports.
EvalReport width_sweep(const SuiteInputs& in, const LesConfig& cfg,
                       std::vector<LesReport>* reports = nullptr, const LesHooks& hooks = {});

/// Re-calibrates only the threshold on `n_calib` seeded samples of `target`.
DetectorArtifact transfer_dataset(const DetectorArtifact& a, const Dataset& target,
                                  std::size_t n_calib, double k, std::uint64_t seed);

}  // namespace lesdet
