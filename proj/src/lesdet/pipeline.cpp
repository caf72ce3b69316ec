#include "lesdet/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "lesdet/error.hpp"
#include "lesdet/eval.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

namespace fs = std::filesystem;

fs::path OutputLayout::substitute(const std::string& name) const {
  return root / "substitutes" / (name + ".ckpt");
}
fs::path OutputLayout::train_attacks() const { return root / "attacks" / "train.adv"; }
fs::path OutputLayout::eval_attacks(const std::string& victim, const std::string& attack) const {
  return root / "attacks" / "eval" / victim / (attack_slug(attack) + ".adv");
}
fs::path OutputLayout::detector_network() const { return root / "detector" / "network.ckpt"; }
fs::path OutputLayout::detector_artifact() const { return root / "detector" / "artifact.lesd"; }
fs::path OutputLayout::les_report() const { return root / "detector" / "les-report.json"; }
fs::path OutputLayout::report(const std::string& name, const std::string& ext) const {
  return root / "reports" / (name + "." + ext);
}
fs::path OutputLayout::transfer_dir() const { return root / "transfer"; }

std::string attack_slug(const std::string& attack) {
  std::string out;
  for (char c : attack) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') {
      out += c;
    } else if (c != ')' && !out.empty() && out.back() != '_') {
      out += '_';
    }
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Json stage_json(const StageStats& s) {
  return Json{{"stage", s.stage + 1},
              {"epoch_loss", s.epoch_loss},
              {"nat_mean", s.nat_mean},
              {"adv_mean", s.adv_mean},
              {"gap", s.gap()},
              {"final_nat_mean", s.final_nat_mean},
              {"final_adv_mean", s.final_adv_mean},
              {"final_gap", s.final_gap()}};
}

Json les_report_json(const LesReport& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) stages.push_back(stage_json(s));
  return stages;
}

}  // namespace

Pipeline::Pipeline(ExperimentConfig cfg, fs::path out, fs::path data_root, Logger log)
    : cfg_(std::move(cfg)),
      hash_(short_hash(lesdet::config_hash(cfg_))),
      layout_{std::move(out)},
      data_root_(std::move(data_root)),
      log_(std::move(log)) {
  cfg_.validate();
}

const std::vector<std::string>& Pipeline::suites() {
  static const std::vector<std::string> s{"grid", "limited-data", "lambda", "width"};
  return s;
}

void Pipeline::log(const std::string& msg) const {
  if (log_) log_(msg);
}

const ExperimentData& Pipeline::data() {
  if (!data_) {
    log("loading dataset (" + cfg_.dataset.source + ")");
    data_ = load_experiment_data(cfg_.dataset, cfg_.effective_seed(cfg_.dataset.seed), data_root_);
  }
  return *data_;
}

Json Pipeline::meta() const {
  Json m{{"config_hash", hash_}, {"seed", cfg_.seed}};
  if (data_) m["dataset"] = data_->id;
  return m;
}

void Pipeline::check_dataset(const Json& meta, const fs::path& from) {
  const std::string id = meta.value("dataset", std::string());
  if (id != data().id) {
    throw MismatchError(from.string() + " was produced from dataset " + id + ", current dataset is " +
                        data().id);
  }
}

Network Pipeline::load_substitute(const std::string& name) {
  const fs::path p = layout_.substitute(name);
  if (!fs::exists(p)) throw IoError(p.string() + " not found (run train-substitute first)");
  Json m;
  Network net = load_network(p, &m);
  check_dataset(m, p);
  return net;
}

LesConfig Pipeline::les_config() const {
  LesConfig c = cfg_.les;
  c.seed = cfg_.effective_seed(cfg_.les.seed);
  c.attack = parse_attack(cfg_.attacks.train, cfg_.effective_seed(cfg_.attacks.seed));
  return c;
}

LesHooks Pipeline::hooks() const {
  LesHooks h;
  if (log_) h.log = log_;
  return h;
}

void Pipeline::train_substitutes(const std::string& name) {
  const ExperimentData& d = data();
  bool found = name.empty();
  for (const auto& spec : cfg_.substitutes) {
    if (!name.empty() && spec.name != name) continue;
    found = true;
    if (spec.samples > d.train.size()) {
      throw ConfigError("substitute '" + spec.name + "' wants more samples than the training pool");
    }
    const std::uint64_t seed = cfg_.effective_seed(spec.seed);
    Dataset pool = spec.samples == d.train.size() ? d.train : split(d.train, spec.samples, seed).first;
    Network net = build_substitute(spec.arch, d.train.image_shape(), d.train.num_classes(), seed);
    log("training " + spec.name + " (" + spec.arch + ") on " + std::to_string(pool.size()) + " samples");
    TrainOptions opts;
    opts.epochs = spec.epochs;
    opts.lr = static_cast<float>(spec.lr);
    opts.batch = spec.batch;
    opts.seed = seed;
    const TrainReport r = train_classifier(net, pool, opts);
    Json m = meta();
    m["name"] = spec.name;
    m["train_accuracy"] = r.final_accuracy;
    m["test_accuracy"] = classification_accuracy(net, d.test);
    log(spec.name + ": train accuracy " + format_double(r.final_accuracy) + ", test accuracy " +
        format_double(m["test_accuracy"].get<double>()));
    save_network(net, layout_.substitute(spec.name), m);
  }
  if (!found) throw ConfigError("no substitute named '" + name + "'");
}

void Pipeline::gen_attacks() {
  const ExperimentData& d = data();
  const std::uint64_t seed = cfg_.effective_seed(cfg_.attacks.seed);
  {
    const Network st = load_substitute(cfg_.roles.trainer);
    NetworkClassifier m(st);
    const AttackConfig ac = parse_attack(cfg_.attacks.train, seed);
    log("crafting " + ac.name() + " training adversaries on " + cfg_.roles.trainer);
    AdversarialSet s = generate_attack_set(m, d.train, ac);
    s.model_id = cfg_.roles.trainer;
    save_adversarial_set(s, layout_.train_attacks(), meta());
  }
  for (const auto& victim : cfg_.roles.victims) {
    const Network sv = load_substitute(victim);
    NetworkClassifier m(sv);
    for (const auto& spec : cfg_.attacks.eval) {
      const AttackConfig ac = parse_attack(spec, seed);
      log("crafting " + ac.name() + " evaluation adversaries on " + victim);
      AdversarialSet s = generate_attack_set(m, d.test, ac);
      s.model_id = victim;
      save_adversarial_set(s, layout_.eval_attacks(victim, spec), meta());
    }
  }
}

void Pipeline::train_detector() {
  const fs::path src = layout_.train_attacks();
  if (!fs::exists(src)) throw IoError(src.string() + " not found (run gen-attacks first)");
  Json m;
  const AdversarialSet train = load_adversarial_set(src, &m);
  Network det = build_detector(cfg_.effective_seed(cfg_.detector_seed), train.natural.at(0).shape(),
                               cfg_.detector_channels);
  const LesConfig lc = les_config();
  log("LES training on " + std::to_string(train.size()) + " pairs, " + std::to_string(lc.epochs) +
      " epochs per stage");
  const LesReport r = les_train(det, train.natural, train.adversarial, lc, hooks());
  Json out = meta();
  out["dataset"] = m.value("dataset", std::string());
  out["training_set"] = train.config.name() + "@" + train.model_id;
  out["les"] = les_config_to_json(lc);
  out["stages"] = les_report_json(r);
  save_network(det, layout_.detector_network(), out);
  write_json(layout_.les_report(), out);
}

void Pipeline::calibrate() {
  const fs::path src = layout_.detector_network();
  if (!fs::exists(src)) throw IoError(src.string() + " not found (run train-detector first)");
  Json m;
  Network det = load_network(src, &m);
  check_dataset(m, src);
  const std::uint64_t seed = cfg_.effective_seed(cfg_.calibration.seed);
  const SampleSet s = sample_set(data().train, cfg_.calibration.samples, seed);
  DetectorArtifact a = make_artifact(std::move(det), s, seed, cfg_.calibration.k, les_config());
  a.provenance = meta();
  a.provenance["training_set"] = m.value("training_set", std::string());
  log("threshold at K=" + format_double(a.k) + ": " + format_double(a.threshold));
  save_artifact(a, layout_.detector_artifact());
}

std::vector<AdversarialSet> Pipeline::load_eval_sets() {
  std::vector<AdversarialSet> sets;
  for (const auto& victim : cfg_.roles.victims) {
    for (const auto& spec : cfg_.attacks.eval) {
      const fs::path p = layout_.eval_attacks(victim, spec);
      if (!fs::exists(p)) throw IoError(p.string() + " not found (run gen-attacks first)");
      Json m;
      sets.push_back(load_adversarial_set(p, &m));
      check_dataset(m, p);
    }
  }
  return sets;
}

SuiteInputs Pipeline::suite_inputs(const AdversarialSet& training, const Network& classifier,
                                   const std::vector<AdversarialSet>& eval_sets) {
  SuiteInputs in;
  in.training = &training;
  in.test = &data().test;
  in.classifier = &classifier;
  for (const auto& s : eval_sets) in.eval_sets.push_back(&s);
  in.calibration_seed = cfg_.effective_seed(cfg_.calibration.seed);
  in.calibration = sample_set(data().train, cfg_.calibration.samples, in.calibration_seed);
  in.k = cfg_.calibration.k;
  in.detector_seed = cfg_.effective_seed(cfg_.detector_seed);
  in.detector_input = data().train.image_shape();
  in.detector_channels = cfg_.detector_channels;
  return in;
}

void Pipeline::write_report(const EvalReport& r, const std::string& name) {
  write_file(layout_.report(name, "csv"), r.to_csv());
  write_json(layout_.report(name, "json"), r.to_json());
  log("wrote " + layout_.report(name, "csv").string());
}

EvalReport Pipeline::evaluate(const std::string& suite) {
  if (std::find(suites().begin(), suites().end(), suite) == suites().end()) {
    throw InvalidArgument("unknown suite '" + suite + "' (grid, limited-data, lambda, width)");
  }
  const Network classifier = load_substitute(cfg_.roles.classifier);
  const std::vector<AdversarialSet> sets = load_eval_sets();
  EvalReport r;
  if (suite == "grid") {
    const fs::path p = layout_.detector_artifact();
    if (!fs::exists(p)) throw IoError(p.string() + " not found (run calibrate first)");
    const DetectorArtifact a = load_artifact(p);
    check_dataset(a.provenance, p);
    std::vector<const AdversarialSet*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    r = evaluate_sets(a, classifier, data().test, ptrs, cfg_.roles.trainer);
    r.experiment = "grid";
    r.extra["threshold"] = a.threshold;
    r.extra["k"] = a.k;
  } else {
    const fs::path src = layout_.train_attacks();
    if (!fs::exists(src)) throw IoError(src.string() + " not found (run gen-attacks first)");
    Json m;
    const AdversarialSet train = load_adversarial_set(src, &m);
    check_dataset(m, src);
    const SuiteInputs in = suite_inputs(train, classifier, sets);
    if (suite == "limited-data") {
      r = limited_data_suite(cfg_.limited_data.fractions, in, les_config(),
                             cfg_.effective_seed(cfg_.limited_data.seed), hooks());
    } else if (suite == "lambda") {
      r = lambda_sweep(in, les_config(), hooks());
    } else {
      std::vector<LesReport> reports;
      r = width_sweep(in, les_config(), &reports, hooks());
      const auto plans = width_sweep_plans();
      Json widths = Json::array();
      for (std::size_t i = 0; i < reports.size(); ++i) {
        widths.push_back(Json{{"channels", plans[i]}, {"stages", les_report_json(reports[i])}});
      }
      r.extra["plans"] = widths;
    }
  }
  r.dataset_id = data().id;
  r.config_hash = hash_;
  r.seed = cfg_.seed;
  r.extra["test_set"] = short_hash(dataset_hash(data().test));
  write_report(r, suite);
  return r;
}

EvalReport Pipeline::transfer() {
  if (!cfg_.transfer) throw ConfigError("the config has no transfer section");
  const TransferSpec& t = *cfg_.transfer;
  const fs::path p = layout_.detector_artifact();
  if (!fs::exists(p)) throw IoError(p.string() + " not found (run calibrate first)");
  const DetectorArtifact a = load_artifact(p);

  log("loading transfer dataset (" + t.dataset.source + ")");
  const ExperimentData target =
      load_experiment_data(t.dataset, cfg_.effective_seed(t.dataset.seed), data_root_);
  const std::uint64_t calib_seed = cfg_.effective_seed(cfg_.calibration.seed);
  const DetectorArtifact moved =
      transfer_dataset(a, target.train, t.samples, cfg_.calibration.k, calib_seed);
  const std::string before = weights_hash(a.detector), after = weights_hash(moved.detector);
  if (before != after) throw StateError("transfer changed the detector weights");

  // A classifier for the target data, so adversaries can be crafted there.
  const SubstituteSpec& spec = cfg_.substitute(t.substitute);
  const std::uint64_t sub_seed = cfg_.effective_seed(spec.seed);
  const std::size_t n = std::min(spec.samples, target.train.size());
  Dataset pool = n == target.train.size() ? target.train : split(target.train, n, sub_seed).first;
  Network victim = build_substitute(spec.arch, target.train.image_shape(), target.train.num_classes(),
                                    sub_seed);
  log("training " + spec.name + " on the transfer dataset");
  TrainOptions opts;
  opts.epochs = spec.epochs;
  opts.lr = static_cast<float>(spec.lr);
  opts.batch = spec.batch;
  opts.seed = sub_seed;
  train_classifier(victim, pool, opts);
  NetworkClassifier m(victim);
  const AttackConfig ac = parse_attack(t.attack, cfg_.effective_seed(cfg_.attacks.seed));
  log("crafting " + ac.name() + " adversaries on the transfer dataset");
  AdversarialSet adv = generate_attack_set(m, target.test, ac);
  adv.model_id = spec.name + "@transfer";

  DetectorArtifact saved = moved;
  saved.provenance["transfer_dataset"] = target.id;
  saved.provenance["config_hash"] = hash_;
  save_artifact(saved, layout_.transfer_dir() / "artifact.lesd");
  Json sm = meta();
  sm["dataset"] = target.id;
  save_network(victim, layout_.transfer_dir() / "substitute.ckpt", sm);
  save_adversarial_set(adv, layout_.transfer_dir() / "attack.adv", sm);

  EvalReport r = evaluate_sets(a, victim, target.test, {&adv}, "source-threshold");
  const EvalReport rc = evaluate_sets(moved, victim, target.test, {&adv}, "recalibrated");
  r.rows.insert(r.rows.end(), rc.rows.begin(), rc.rows.end());
  r.experiment = "transfer";
  r.dataset_id = a.provenance.value("dataset", std::string());
  r.artifact_hash = short_hash(artifact_hash(moved));
  r.config_hash = hash_;
  r.seed = cfg_.seed;
  r.extra = Json{{"target_dataset", target.id},
                 {"source_threshold", a.threshold},
                 {"recalibrated_threshold", moved.threshold},
                 {"calibration_samples", t.samples},
                 {"weights_hash_before", before},
                 {"weights_hash_after", after}};
  write_report(r, "transfer");
  return r;
}

Json Pipeline::lipschitz() {
  const fs::path p = layout_.detector_artifact();
  if (!fs::exists(p)) throw IoError(p.string() + " not found (run calibrate first)");
  const DetectorArtifact a = load_artifact(p);
  const Network& trained = a.detector;
  const Network random = build_detector(trained.seed(), trained.input_shape(), cfg_.detector_channels);
  if (random.param_count() != trained.param_count()) {
    throw MismatchError("detector.channels differ from the trained detector");
  }
  const std::uint64_t seed = cfg_.effective_seed(cfg_.detector_seed);
  Json layers = Json::array();
  double bt = 1.0, br = 1.0;
  std::string csv = "layer,trained_norm,random_norm,trained_bound,random_bound\n";
  for (std::size_t i = 0; i < trained.num_param_layers(); ++i) {
    const double nt = layer_spectral_norm(trained, i, seed);
    const double nr = layer_spectral_norm(random, i, seed);
    bt *= nt;
    br *= nr;
    layers.push_back(Json{{"layer", i + 1},
                          {"trained_norm", nt},
                          {"random_norm", nr},
                          {"trained_bound", bt},
                          {"random_bound", br}});
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.6g,%.6g,%.6g,%.6g\n", i + 1, nt, nr, bt, br);
    csv += line;
  }
  Json j{{"experiment", "lipschitz"},
         {"dataset", a.provenance.value("dataset", std::string())},
         {"artifact", short_hash(artifact_hash(a))},
         {"config_hash", hash_},
         {"seed", cfg_.seed},
         {"layers", layers}};
  write_file(layout_.report("lipschitz", "csv"), csv);
  write_json(layout_.report("lipschitz", "json"), j);
  log("Lipschitz bound: trained " + format_double(bt) + ", random init " + format_double(br));
  return j;
}

Json Pipeline::report(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files = inputs;
  if (files.empty()) {
    for (const std::string name : {"grid", "limited-data", "lambda", "width", "transfer"}) {
      if (fs::exists(layout_.report(name, "json"))) files.push_back(layout_.report(name, "json"));
    }
    if (files.empty()) throw IoError("no evaluation reports under " + (layout_.root / "reports").string());
  }
  std::string dataset;
  std::string csv = std::string(EvalReport::csv_header()) + "\n";
  Json summary{{"config_hash", hash_}, {"reports", Json::array()}};
  for (const auto& f : files) {
    if (!fs::exists(f)) throw IoError(f.string() + " not found");
    const EvalReport r = EvalReport::from_json(read_json(f));
    if (dataset.empty()) dataset = r.dataset_id;
    if (r.dataset_id != dataset) {
      throw MismatchError(f.string() + " comes from dataset " + r.dataset_id + ", expected " + dataset);
    }
    std::string body = r.to_csv();
    csv += body.substr(body.find('\n') + 1);
    Json entry{{"file", f.filename().string()},
               {"experiment", r.experiment},
               {"config_hash", r.config_hash},
               {"artifact", r.artifact_hash},
               {"rows", Json::array()}};
    for (const auto& row : r.rows) {
      entry["rows"].push_back(Json{{"detector", row.detector},
                                   {"attack", row.attack},
                                   {"source", row.source},
                                   {"auc", row.auc},
                                   {"accuracy", row.ae.accuracy},
                                   {"error", row.ae.error}});
    }
    summary["reports"].push_back(entry);
  }
  summary["dataset"] = dataset;
  write_file(layout_.report("summary", "csv"), csv);
  write_json(layout_.report("summary", "json"), summary);
  log("wrote " + layout_.report("summary", "csv").string());
  return summary;
}

}  // namespace lesdet
