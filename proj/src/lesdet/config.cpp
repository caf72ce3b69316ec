#include "lesdet/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

namespace {

// Reads keys out of one YAML mapping and rejects whatever is left over.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.IsMap()) throw ConfigError(where() + " must be a mapping");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const YAML::Node v = std::as_const(node_)[key];
    if (!v.IsDefined() || v.IsNull()) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  YAML::Node child(const std::string& key) {
    seen_.insert(key);
    return std::as_const(node_)[key];
  }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key " + where(key));
    }
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};

DatasetSpec parse_dataset(const YAML::Node& node, const std::string& path) {
  DatasetSpec d;
  Section s(node, path);
  s.get("source", d.source);
  s.get("path", d.path);
  s.get("style", d.style);
  s.get("n_train", d.n_train);
  s.get("n_test", d.n_test);
  s.get("n_class", d.n_class);
  s.get("image_size", d.image_size);
  s.get("seed", d.seed);
  s.finish();
  return d;
}

Json dataset_json(const DatasetSpec& d) {
  return Json{{"source", d.source}, {"path", d.path},           {"style", d.style},
              {"n_train", d.n_train}, {"n_test", d.n_test},     {"n_class", d.n_class},
              {"image_size", d.image_size}, {"seed", d.seed}};
}

void validate_dataset(const DatasetSpec& d, const std::string& where) {
  if (d.source == "cifar10") {
    if (d.path.empty()) throw ConfigError(where + ".path is required for cifar10");
    if (d.image_size != 32) throw ConfigError(where + ".image_size must be 32 for cifar10");
  } else if (d.source == "synth") {
    try {
      parse_synth_style(d.style);
    } catch (const Error&) {
      throw ConfigError(where + ".style must be gratings or blobs");
    }
    if (d.n_class < 2) throw ConfigError(where + ".n_class must be at least 2");
    if (d.image_size < 8) throw ConfigError(where + ".image_size must be at least 8");
  } else {
    throw ConfigError(where + ".source must be synth or cifar10");
  }
  if (d.n_train < 1 || d.n_test < 1) throw ConfigError(where + ": n_train and n_test must be positive");
}

void check_attack(const std::string& spec, const std::string& where) {
  try {
    parse_attack(spec);
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Dataset load_cifar_files(const std::vector<std::filesystem::path>& files, const std::string& name) {
  Dataset out;
  out.name = name;
  for (const auto& f : files) {
    Dataset part = load_cifar10(f);
    out.images.insert(out.images.end(), std::make_move_iterator(part.images.begin()),
                      std::make_move_iterator(part.images.end()));
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  out.provenance = "cifar10:" + name;
  return out;
}

Dataset first_n(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n > d.size()) {
    throw ConfigError("dataset has " + std::to_string(d.size()) + " samples, " + std::to_string(n) +
                      " requested");
  }
  if (n == d.size()) return d;
  Dataset out = split(d, n, seed).first;
  out.name = d.name;
  out.provenance = d.provenance;
  return out;
}

}  // namespace

const SubstituteSpec& ExperimentConfig::substitute(const std::string& name) const {
  for (const auto& s : substitutes) {
    if (s.name == name) return s;
  }
  throw ConfigError("no substitute named '" + name + "'");
}

std::uint64_t ExperimentConfig::effective_seed(std::uint64_t section_seed) const {
  return mix64(mix64(seed) ^ section_seed);
}

void ExperimentConfig::validate() const {
  validate_dataset(dataset, "dataset");
  if (substitutes.empty()) throw ConfigError("substitutes must list at least one model");
  std::set<std::string> names;
  const auto& archs = substitute_archs();
  for (const auto& s : substitutes) {
    if (s.name.empty()) throw ConfigError("every substitute needs a name");
    if (!names.insert(s.name).second) throw ConfigError("duplicate substitute name '" + s.name + "'");
    if (std::find(archs.begin(), archs.end(), s.arch) == archs.end()) {
      throw ConfigError("substitute '" + s.name + "' has unknown arch '" + s.arch + "'");
    }
    if (s.epochs < 0 || !(s.lr > 0.0) || s.batch < 1 || s.samples < 1) {
      throw ConfigError("substitute '" + s.name + "' needs epochs >= 0, lr > 0, batch >= 1, samples >= 1");
    }
  }
  if (roles.trainer.empty() || roles.classifier.empty() || roles.victims.empty()) {
    throw ConfigError("roles needs S_T, S_V and M_C");
  }
  substitute(roles.trainer);
  substitute(roles.classifier);
  for (const auto& v : roles.victims) substitute(v);

  check_attack(attacks.train, "attacks.train");
  if (attacks.eval.empty()) throw ConfigError("attacks.eval must list at least one attack");
  for (const auto& a : attacks.eval) check_attack(a, "attacks.eval");

  if (detector_channels.size() < 2 || detector_channels[0] != 3) {
    throw ConfigError("detector.channels must start with 3 and name at least one layer");
  }
  for (auto c : detector_channels) {
    if (c < 1) throw ConfigError("detector.channels must be positive");
  }
  try {
    les.validate(detector_channels.size() - 1);
  } catch (const Error& e) {
    throw ConfigError(std::string("les: ") + e.what());
  }
  if (!(calibration.k > 0.0 && calibration.k <= 100.0)) throw ConfigError("calibration.k must lie in (0,100]");
  if (calibration.samples < 1) throw ConfigError("calibration.samples must be positive");
  if (limited_data.fractions.empty()) throw ConfigError("limited_data.fractions must not be empty");
  for (double f : limited_data.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("limited_data.fractions must lie in (0,1]");
  }
  if (transfer) {
    validate_dataset(transfer->dataset, "transfer.dataset");
    if (transfer->dataset.image_size != dataset.image_size) {
      throw ConfigError("transfer.dataset must have the same image size as dataset");
    }
    substitute(transfer->substitute);
    check_attack(transfer->attack, "transfer.attack");
    if (transfer->samples < 1) throw ConfigError("transfer.samples must be positive");
  }
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("not valid YAML: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  top.get("seed", c.seed);

  if (auto n = top.child("dataset"); n.IsDefined()) c.dataset = parse_dataset(n, "dataset");

  if (auto n = top.child("substitutes"); n.IsDefined()) {
    if (!n.IsSequence()) throw ConfigError("substitutes must be a list");
    for (std::size_t i = 0; i < n.size(); ++i) {
      SubstituteSpec s;
      Section sec(n[i], "substitutes[" + std::to_string(i) + "]");
      sec.get("name", s.name);
      sec.get("arch", s.arch);
      sec.get("epochs", s.epochs);
      sec.get("lr", s.lr);
      sec.get("batch", s.batch);
      sec.get("samples", s.samples);
      sec.get("seed", s.seed);
      sec.finish();
      c.substitutes.push_back(s);
    }
  }

  if (auto n = top.child("roles"); n.IsDefined()) {
    Section s(n, "roles");
    s.get("S_T", c.roles.trainer);
    s.get("S_V", c.roles.victims);
    s.get("M_C", c.roles.classifier);
    s.finish();
  }

  if (auto n = top.child("attacks"); n.IsDefined()) {
    Section s(n, "attacks");
    s.get("train", c.attacks.train);
    s.get("eval", c.attacks.eval);
    s.get("seed", c.attacks.seed);
    s.finish();
  }

  if (auto n = top.child("les"); n.IsDefined()) {
    Section s(n, "les");
    s.get("lambda_n", c.les.lambda_n);
    s.get("lambda_a", c.les.lambda_a);
    s.get("epochs", c.les.epochs);
    s.get("lr", c.les.lr);
    s.get("batch", c.les.batch);
    s.get("seed", c.les.seed);
    s.finish();
  }

  if (auto n = top.child("detector"); n.IsDefined()) {
    Section s(n, "detector");
    s.get("channels", c.detector_channels);
    s.get("seed", c.detector_seed);
    s.finish();
  }

  if (auto n = top.child("calibration"); n.IsDefined()) {
    Section s(n, "calibration");
    s.get("k", c.calibration.k);
    s.get("samples", c.calibration.samples);
    s.get("seed", c.calibration.seed);
    s.finish();
  }

  if (auto n = top.child("limited_data"); n.IsDefined()) {
    Section s(n, "limited_data");
    s.get("fractions", c.limited_data.fractions);
    s.get("seed", c.limited_data.seed);
    s.finish();
  }

  if (auto n = top.child("transfer"); n.IsDefined() && !n.IsNull()) {
    TransferSpec t;
    Section s(n, "transfer");
    if (auto d = s.child("dataset"); d.IsDefined()) {
      t.dataset = parse_dataset(d, "transfer.dataset");
    } else {
      throw ConfigError("transfer.dataset is required");
    }
    s.get("substitute", t.substitute);
    s.get("attack", t.attack);
    s.get("samples", t.samples);
    s.finish();
    if (t.substitute.empty() && !c.roles.victims.empty()) t.substitute = c.roles.victims.front();
    c.transfer = t;
  }
  top.finish();

  try {
    c.les.attack = parse_attack(c.attacks.train);
  } catch (const Error& e) {
    throw ConfigError(std::string("attacks.train: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

Json config_to_json(const ExperimentConfig& c) {
  Json subs = Json::array();
  for (const auto& s : c.substitutes) {
    subs.push_back(Json{{"name", s.name},   {"arch", s.arch},       {"epochs", s.epochs},
                        {"lr", s.lr},       {"batch", s.batch},     {"samples", s.samples},
                        {"seed", s.seed}});
  }
  Json les{{"lambda_n", c.les.lambda_n}, {"lambda_a", c.les.lambda_a}, {"epochs", c.les.epochs},
           {"lr", c.les.lr},             {"batch", c.les.batch},       {"seed", c.les.seed}};
  Json j{{"seed", c.seed},
         {"dataset", dataset_json(c.dataset)},
         {"substitutes", subs},
         {"roles", Json{{"S_T", c.roles.trainer}, {"S_V", c.roles.victims}, {"M_C", c.roles.classifier}}},
         {"attacks", Json{{"train", c.attacks.train}, {"eval", c.attacks.eval}, {"seed", c.attacks.seed}}},
         {"les", les},
         {"detector", Json{{"channels", c.detector_channels}, {"seed", c.detector_seed}}},
         {"calibration",
          Json{{"k", c.calibration.k}, {"samples", c.calibration.samples}, {"seed", c.calibration.seed}}},
         {"limited_data", Json{{"fractions", c.limited_data.fractions}, {"seed", c.limited_data.seed}}},
         {"transfer", nullptr}};
  if (c.transfer) {
    j["transfer"] = Json{{"dataset", dataset_json(c.transfer->dataset)},
                         {"substitute", c.transfer->substitute},
                         {"attack", c.transfer->attack},
                         {"samples", c.transfer->samples}};
  }
  return j;
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(config_to_json(c).dump()); }

std::filesystem::path data_root() {
  const char* v = std::getenv(kDataRootEnv);
  return v && *v ? std::filesystem::path(v) : std::filesystem::current_path();
}

ExperimentData load_experiment_data(const DatasetSpec& spec, std::uint64_t seed,
                                    const std::filesystem::path& root) {
  ExperimentData out;
  if (spec.source == "synth") {
    const Shape shape{3, spec.image_size, spec.image_size};
    const SynthStyle style = parse_synth_style(spec.style);
    out.train = synth_dataset({spec.n_train, spec.n_class, shape, seed, style});
    out.test = synth_dataset({spec.n_test, spec.n_class, shape, mix64(seed + 1), style});
  } else {
    const std::filesystem::path dir = root / spec.path;
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) train_files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    out.train = first_n(load_cifar_files(train_files, "cifar10-train"), spec.n_train, seed);
    out.test = first_n(load_cifar_files({dir / "test_batch.bin"}, "cifar10-test"), spec.n_test,
                       mix64(seed + 1));
  }
  out.id = short_hash(sha256_hex(dataset_hash(out.train) + dataset_hash(out.test)));
  return out;
}

}  // namespace lesdet
