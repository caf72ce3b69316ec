#include "lesdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

double roc_auc(std::span<const double> nat, std::span<const double> adv) {
  if (nat.empty() || adv.empty()) throw InvalidArgument("roc_auc needs two non-empty score lists");
  struct Item {
    double score;
    bool adversarial;
  };
  std::vector<Item> all;
  all.reserve(nat.size() + adv.size());
  for (double s : nat) all.push_back({s, false});
  for (double s : adv) all.push_back({s, true});
  for (const auto& it : all) {
    if (std::isnan(it.score)) throw InvalidArgument("roc_auc: NaN score");
  }
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Count, for every adversarial score, the naturals strictly below it plus
  // half of those tied with it. Doubled to stay in integers.
  std::uint64_t twice_wins = 0;
  std::uint64_t nat_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::uint64_t nat_tied = 0, adv_tied = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].adversarial ? adv_tied : nat_tied) += 1;
      ++j;
    }
    twice_wins += adv_tied * (2 * nat_below + nat_tied);
    nat_below += nat_tied;
    i = j;
  }
  return static_cast<double>(twice_wins) /
         (2.0 * static_cast<double>(nat.size()) * static_cast<double>(adv.size()));
}

AccuracyError accuracy_error(std::span<const int> nat_pred, std::span<const int> nat_labels,
                             std::span<const char> nat_flagged, std::span<const int> adv_pred,
                             std::span<const int> adv_labels, std::span<const char> adv_flagged) {
  if (nat_pred.size() != nat_labels.size() || nat_pred.size() != nat_flagged.size() ||
      adv_pred.size() != adv_labels.size() || adv_pred.size() != adv_flagged.size()) {
    throw InvalidArgument("accuracy_error: inconsistent lengths");
  }
  if (nat_pred.empty() || adv_pred.empty()) throw InvalidArgument("accuracy_error: empty set");
  std::size_t acc = 0, acc_nd = 0, err = 0, err_nd = 0;
  for (std::size_t i = 0; i < nat_pred.size(); ++i) {
    const bool correct = nat_pred[i] == nat_labels[i];
    acc_nd += correct;
    acc += correct && !nat_flagged[i];
  }
  for (std::size_t i = 0; i < adv_pred.size(); ++i) {
    const bool wrong = adv_pred[i] != adv_labels[i];
    err_nd += wrong;
    err += wrong && !adv_flagged[i];
  }
  const auto nn = static_cast<double>(nat_pred.size());
  const auto na = static_cast<double>(adv_pred.size());
  return {acc / nn, err / na, acc_nd / nn, err_nd / na};
}

NaturalEval evaluate_naturals(const DetectorArtifact& a, const Network& classifier,
                              const Dataset& natural) {
  NaturalEval out;
  for (std::size_t i = 0; i < natural.size(); ++i) {
    const Detection d = detect(a, natural.images[i]);
    out.energies.push_back(d.energy);
    out.flagged.push_back(d.adversarial);
    out.predictions.push_back(classifier.predict(natural.images[i]));
  }
  return out;
}

AccuracyError accuracy_error(const Network& classifier, const DetectorArtifact& artifact,
                             const Dataset& natural, const AdversarialSet& adv) {
  const NaturalEval nat = evaluate_naturals(artifact, classifier, natural);
  std::vector<int> pred;
  std::vector<char> flagged;
  for (const Tensor& x : adv.adversarial) {
    pred.push_back(classifier.predict(x));
    flagged.push_back(detect(artifact, x).adversarial);
  }
  return accuracy_error(nat.predictions, natural.labels, nat.flagged, pred, adv.labels, flagged);
}

EnergySummary summarize(std::span<const double> e) {
  if (e.empty()) return {};
  std::vector<double> v(e.begin(), e.end());
  std::sort(v.begin(), v.end());
  EnergySummary s;
  const auto n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / n);
  s.min = v.front();
  s.max = v.back();
  const std::size_t m = v.size() / 2;
  s.median = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  return s;
}

EvalRow evaluate_attack(const DetectorArtifact& a, const Network& classifier,
                        const Dataset& natural, const NaturalEval& nat, const AdversarialSet& adv,
                        const std::string& detector_label) {
  if (adv.size() == 0) throw InvalidArgument("evaluate_attack: empty adversarial set");
  EvalRow row;
  row.detector = detector_label;
  row.attack = adv.config.name();
  row.config = adv.config;
  row.source = adv.model_id;
  std::vector<double> adv_e;
  std::vector<char> adv_flag;
  std::vector<int> adv_pred;
  for (const Tensor& x : adv.adversarial) {
    const Detection d = detect(a, x);
    adv_e.push_back(d.energy);
    adv_flag.push_back(d.adversarial);
    adv_pred.push_back(classifier.predict(x));
  }
  row.auc = roc_auc(nat.energies, adv_e);
  row.ae = accuracy_error(nat.predictions, natural.labels, nat.flagged, adv_pred, adv.labels,
                          adv_flag);
  auto frac = [](const std::vector<char>& f) {
    return static_cast<double>(std::count(f.begin(), f.end(), 1)) / static_cast<double>(f.size());
  };
  row.nat_flagged = frac(nat.flagged);
  row.adv_flagged = frac(adv_flag);
  row.nat_energy = summarize(nat.energies);
  row.adv_energy = summarize(adv_e);
  return row;
}

const char* EvalReport::csv_header() {
  return "experiment,detector,attack,source,auc,accuracy,error,accuracy_no_detector,"
         "error_no_detector,nat_flagged,adv_flagged,nat_energy_mean,nat_energy_std,"
         "adv_energy_mean,adv_energy_std,attack_seed,dataset,artifact,config,seed";
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// RFC 4180 quoting for fields that contain separators or quotes.
std::string field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

Json summary_json(const EnergySummary& s) {
  return Json{{"mean", s.mean}, {"std", s.stddev}, {"min", s.min}, {"median", s.median}, {"max", s.max}};
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << csv_header() << '\n';
  for (const auto& r : rows) {
    out << field(experiment) << ',' << field(r.detector) << ',' << field(r.attack) << ','
        << field(r.source) << ','
        << num(r.auc) << ',' << num(r.ae.accuracy) << ',' << num(r.ae.error) << ','
        << num(r.ae.accuracy_no_detector) << ',' << num(r.ae.error_no_detector) << ','
        << num(r.nat_flagged) << ',' << num(r.adv_flagged) << ',' << num(r.nat_energy.mean)
        << ',' << num(r.nat_energy.stddev) << ',' << num(r.adv_energy.mean) << ','
        << num(r.adv_energy.stddev) << ',' << r.config.seed << ',' << field(dataset_id) << ','
        << field(artifact_hash) << ',' << field(config_hash) << ',' << seed << '\n';
  }
  return out.str();
}

Json EvalReport::to_json() const {
  Json j;
  j["experiment"] = experiment;
  j["dataset"] = dataset_id;
  j["artifact"] = artifact_hash;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["rows"] = Json::array();
  for (const auto& r : rows) {
    j["rows"].push_back(Json{{"detector", r.detector},
                             {"attack", r.attack},
                             {"attack_config", attack_to_json(r.config)},
                             {"source", r.source},
                             {"auc", r.auc},
                             {"accuracy", r.ae.accuracy},
                             {"error", r.ae.error},
                             {"accuracy_no_detector", r.ae.accuracy_no_detector},
                             {"error_no_detector", r.ae.error_no_detector},
                             {"nat_flagged", r.nat_flagged},
                             {"adv_flagged", r.adv_flagged},
                             {"nat_energy", summary_json(r.nat_energy)},
                             {"adv_energy", summary_json(r.adv_energy)}});
  }
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

EvalReport EvalReport::from_json(const Json& j) {
  auto summary = [](const Json& s) {
    return EnergySummary{s.at("mean").get<double>(), s.at("std").get<double>(),
                         s.at("min").get<double>(), s.at("median").get<double>(),
                         s.at("max").get<double>()};
  };
  try {
    EvalReport r;
    r.experiment = j.at("experiment").get<std::string>();
    r.dataset_id = j.at("dataset").get<std::string>();
    r.artifact_hash = j.at("artifact").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const Json& row : j.at("rows")) {
      EvalRow e;
      e.detector = row.at("detector").get<std::string>();
      e.attack = row.at("attack").get<std::string>();
      e.config = attack_from_json(row.at("attack_config"));
      e.source = row.at("source").get<std::string>();
      e.auc = row.at("auc").get<double>();
      e.ae.accuracy = row.at("accuracy").get<double>();
      e.ae.error = row.at("error").get<double>();
      e.ae.accuracy_no_detector = row.at("accuracy_no_detector").get<double>();
      e.ae.error_no_detector = row.at("error_no_detector").get<double>();
      e.nat_flagged = row.at("nat_flagged").get<double>();
      e.adv_flagged = row.at("adv_flagged").get<double>();
      e.nat_energy = summary(row.at("nat_energy"));
      e.adv_energy = summary(row.at("adv_energy"));
      r.rows.push_back(std::move(e));
    }
    if (j.contains("extra")) r.extra = j.at("extra");
    return r;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

namespace {

// Input shape seen by the layer at `position`, found by running a zero image.
Shape layer_input_shape(const Network& net, std::size_t position) {
  Graph<float> g;
  auto bound = net.bind(g, false);
  Var x = g.leaf(Tensor(net.input_shape()), false);
  return g.value(net.forward(g, x, bound, 0, position)).shape();
}

// A(v) for the layer's linear part, and A^T(u) via the adjoint of <A v, u>.
Tensor64 apply_linear(const Network& net, const Layer& l, const Tensor64& v) {
  Graph<double> g;
  Var w = g.leaf(net.params()[l.weight].value.cast<double>(), false);
  Var x = g.leaf(v, false);
  Var y = l.kind == LayerKind::Conv ? g.conv2d(x, w, l.stride, l.padding) : g.dense(x, w);
  return g.value(y);
}

Tensor64 apply_adjoint(const Network& net, const Layer& l, const Shape& in, const Tensor64& u) {
  Graph<double> g;
  Var w = g.leaf(net.params()[l.weight].value.cast<double>(), false);
  Var x = g.leaf(Tensor64(in), true);
  Var y = l.kind == LayerKind::Conv ? g.conv2d(x, w, l.stride, l.padding) : g.dense(x, w);
  g.backward(g.dot(y, u));
  return g.grad(x);
}

double norm2(const Tensor64& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

double layer_spectral_norm(const Network& net, std::size_t param_layer, std::uint64_t seed) {
  const std::size_t pos = net.param_layer_position(param_layer);
  const Layer& l = net.layers()[pos];
  const Shape in = layer_input_shape(net, pos);
  Rng rng = make_rng(seed, 0x11b + param_layer);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor64 v(in);
  for (double& x : v.data()) x = normal(rng);
  double n = norm2(v);
  for (double& x : v.data()) x /= n;

  double sigma = 0.0;
  for (int it = 0; it < kPowerIterations; ++it) {
    const Tensor64 av = apply_linear(net, l, v);
    const double next = norm2(av);
    if (next == 0.0) return 0.0;
    Tensor64 w = apply_adjoint(net, l, in, av);
    n = norm2(w);
    for (double& x : w.data()) x /= n;
    v = std::move(w);
    const bool converged = it > 0 && std::fabs(next - sigma) <= 1e-6 * next;
    sigma = next;
    if (converged) break;
  }
  return norm2(apply_linear(net, l, v));
}

double lipschitz_bound(const Network& net, std::size_t upto, std::uint64_t seed) {
  if (upto > net.num_param_layers()) throw InvalidArgument("lipschitz_bound: layer out of range");
  double bound = 1.0;
  for (std::size_t i = 0; i < upto; ++i) bound *= layer_spectral_norm(net, i, seed);
  return bound;
}

}  // namespace lesdet
