#include "lesdet/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

namespace {

void require_inputs(const SuiteInputs& in) {
  if (!in.training || !in.test || !in.classifier) {
    throw InvalidArgument("suite inputs need training pairs, test naturals and a classifier");
  }
  if (in.eval_sets.empty()) throw InvalidArgument("suite inputs need at least one evaluation set");
}

std::string plan_label(const std::vector<std::size_t>& plan) {
  std::string s = "detector";
  for (auto c : plan) s += "-" + std::to_string(c);
  return s;
}

}  // namespace

TrainedDetector train_detector(const SuiteInputs& in, const LesConfig& cfg,
                               const LesHooks& hooks) {
  if (!in.training) throw InvalidArgument("train_detector: no training pairs");
  Network det = build_detector(in.detector_seed, in.detector_input, in.detector_channels);
  LesReport report = les_train(det, in.training->natural, in.training->adversarial, cfg, hooks);
  DetectorArtifact a = make_artifact(std::move(det), in.calibration, in.calibration_seed, in.k, cfg);
  a.provenance["training_set"] = in.training->config.name() + "@" + in.training->model_id;
  return {std::move(a), std::move(report)};
}

EvalReport evaluate_sets(const DetectorArtifact& a, const Network& classifier, const Dataset& test,
                         const std::vector<const AdversarialSet*>& sets,
                         const std::string& detector_label) {
  EvalReport r;
  r.dataset_id = short_hash(dataset_hash(test));
  r.artifact_hash = short_hash(artifact_hash(a));
  const NaturalEval nat = evaluate_naturals(a, classifier, test);
  for (const AdversarialSet* s : sets) {
    if (s->labels != test.labels || s->size() != test.size()) {
      throw MismatchError("evaluation set " + s->config.name() + " was not crafted on these naturals");
    }
    r.rows.push_back(evaluate_attack(a, classifier, test, nat, *s, detector_label));
  }
  return r;
}

AdversarialSet subset_pairs(const AdversarialSet& s, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction must lie in (0,1]");
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(s.size())));
  if (n < 1) throw InvalidArgument("fraction leaves no training pairs");
  if (n == s.size()) return s;
  auto idx = sample_indices(s.size(), n, seed);
  std::sort(idx.begin(), idx.end());
  AdversarialSet out;
  out.model_id = s.model_id;
  out.config = s.config;
  for (auto i : idx) {
    out.natural.push_back(s.natural[i]);
    out.adversarial.push_back(s.adversarial[i]);
    out.labels.push_back(s.labels[i]);
  }
  return out;
}

EvalReport model_agnostic_suite(const std::vector<const AdversarialSet*>& training_sets,
                                const SuiteInputs& in, const LesConfig& cfg,
                                const LesHooks& hooks) {
  if (training_sets.empty()) throw InvalidArgument("model_agnostic_suite: no S_T training sets");
  EvalReport out;
  out.experiment = "model-agnostic";
  for (const AdversarialSet* t : training_sets) {
    SuiteInputs local = in;
    local.training = t;
    require_inputs(local);
    std::vector<const AdversarialSet*> cells;
    for (const AdversarialSet* s : in.eval_sets) {
      if (s->model_id != t->model_id) cells.push_back(s);
    }
    TrainedDetector d = train_detector(local, cfg, hooks);
    EvalReport r = evaluate_sets(d.artifact, *in.classifier, *in.test, cells, t->model_id);
    out.dataset_id = r.dataset_id;
    out.artifact_hash = training_sets.size() == 1 ? r.artifact_hash : "multiple";
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

EvalReport limited_data_suite(const std::vector<double>& fractions, const SuiteInputs& in,
                              const LesConfig& cfg, std::uint64_t subset_seed,
                              const LesHooks& hooks) {
  require_inputs(in);
  if (fractions.empty()) throw InvalidArgument("limited_data_suite: no fractions");
  EvalReport out;
  out.experiment = "limited-data";
  out.artifact_hash = "multiple";
  for (double f : fractions) {
    const AdversarialSet part = subset_pairs(*in.training, f, subset_seed);
    SuiteInputs local = in;
    local.training = &part;
    TrainedDetector d = train_detector(local, cfg, hooks);
    char label[48];
    std::snprintf(label, sizeof label, "fraction=%.4g", f);
    EvalReport r = evaluate_sets(d.artifact, *in.classifier, *in.test, in.eval_sets, label);
    out.dataset_id = r.dataset_id;
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

std::vector<std::vector<double>> lambda_sweep_settings() {
  std::vector<std::vector<double>> out;
  for (int i = 0; i < 7; ++i) {
    out.push_back({(3 + 2 * i) / 10.0, (7 + 2 * i) / 10.0, (17 + 2 * i) / 10.0});
  }
  return out;
}

EvalReport lambda_sweep(const SuiteInputs& in, const LesConfig& cfg, const LesHooks& hooks) {
  require_inputs(in);
  EvalReport out;
  out.experiment = "lambda-sweep";
  out.artifact_hash = "multiple";
  const auto settings = lambda_sweep_settings();
  for (std::size_t i = 0; i < settings.size(); ++i) {
    LesConfig local = cfg;
    local.lambda_a = settings[i];
    TrainedDetector d = train_detector(in, local, hooks);
    char label[64];
    std::snprintf(label, sizeof label, "D%zu(%.1f;%.1f;%.1f)", i + 1, settings[i][0],
                  settings[i][1], settings[i][2]);
    EvalReport r = evaluate_sets(d.artifact, *in.classifier, *in.test, in.eval_sets, label);
    out.dataset_id = r.dataset_id;
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

std::vector<std::vector<std::size_t>> width_sweep_plans() {
  return {{3, 64, 128, 256}, {3, 32, 64, 128}, kDetectorChannels};
}

EvalReport width_sweep(const SuiteInputs& in, const LesConfig& cfg,
                       std::vector<LesReport>* reports, const LesHooks& hooks) {
  require_inputs(in);
  EvalReport out;
  out.experiment = "width-sweep";
  out.artifact_hash = "multiple";
  for (const auto& plan : width_sweep_plans()) {
    SuiteInputs local = in;
    local.detector_channels = plan;
    TrainedDetector d = train_detector(local, cfg, hooks);
    if (reports) reports->push_back(d.report);
    EvalReport r = evaluate_sets(d.artifact, *in.classifier, *in.test, in.eval_sets, plan_label(plan));
    out.dataset_id = r.dataset_id;
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

DetectorArtifact transfer_dataset(const DetectorArtifact& a, const Dataset& target,
                                  std::size_t n_calib, double k, std::uint64_t seed) {
  if (target.empty()) throw InvalidArgument("transfer target dataset is empty");
  if (target.image_shape() != a.detector.input_shape()) {
    throw ShapeError("transfer target images " + shape_string(target.image_shape()) +
                     " do not match the detector input " + shape_string(a.detector.input_shape()));
  }
  if (n_calib > target.size()) {
    throw InvalidArgument("transfer needs " + std::to_string(n_calib) + " calibration samples, target has " +
                          std::to_string(target.size()));
  }
  const SampleSet s = sample_set(target, n_calib, seed);
  DetectorArtifact out = make_artifact(a.detector, s, seed, k, a.config);
  out.provenance = a.provenance;
  out.provenance["transferred_to"] = short_hash(dataset_hash(target));
  return out;
}

}  // namespace lesdet
