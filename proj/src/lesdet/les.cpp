#include "lesdet/les.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

namespace {

constexpr std::size_t kCacheChunk = 64;

Tensor stack_rows(std::span<const Tensor> items, std::span<const std::size_t> idx) {
  const Shape& s = items[idx[0]].shape();
  Shape full{idx.size()};
  full.insert(full.end(), s.begin(), s.end());
  Tensor out(full);
  const std::size_t per = shape_size(s);
  auto dst = out.data().begin();
  for (std::size_t i : idx) {
    std::copy(items[i].data().begin(), items[i].data().end(), dst);
    dst += static_cast<std::ptrdiff_t>(per);
  }
  return out;
}

// Applies layers [begin, end) to every item, in fixed-size chunks.
std::vector<Tensor> run_prefix(const Network& net, std::span<const Tensor> items,
                               std::size_t begin, std::size_t end) {
  if (begin == end) return {items.begin(), items.end()};
  std::vector<Tensor> out;
  out.reserve(items.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < items.size(); start += kCacheChunk) {
    const std::size_t stop = std::min(items.size(), start + kCacheChunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Graph<float> g;
    auto bound = net.bind(g, false);
    const Tensor& y = g.value(net.forward(g, g.leaf(stack_rows(items, idx), false), bound, begin, end));
    const Shape item(y.shape().begin() + 1, y.shape().end());
    const std::size_t per = shape_size(item);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto first = y.data().begin() + static_cast<std::ptrdiff_t>(i * per);
      out.emplace_back(item, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per)));
    }
  }
  return out;
}

// Energies of the stage layer and the final layer, evaluated from the cache.
void stage_statistics(const Network& det, std::span<const Tensor> cached, std::size_t begin,
                      double& stage_mean, double& final_mean) {
  double s = 0.0, f = 0.0;
  for (const Tensor& x : cached) {
    Graph<float> g;
    auto bound = det.bind(g, false);
    std::vector<Var> taps;
    det.forward(g, g.leaf_ref(x, false), bound, begin, kNoIndex, &taps);
    s += energy(g.value(taps.front()));
    f += energy(g.value(taps.back()));
  }
  stage_mean = s / static_cast<double>(cached.size());
  final_mean = f / static_cast<double>(cached.size());
}

}  // namespace

double energy(const Tensor& features) {
  if (features.empty()) throw InvalidArgument("energy of an empty feature map");
  double acc = 0.0;
  for (float v : features.data()) acc += std::fabs(static_cast<double>(v));
  return acc / static_cast<double>(features.size());
}

double les_loss(double e, int y, double lambda_n, double lambda_a) {
  if (y != 0 && y != 1) throw InvalidArgument("les_loss indicator must be 0 or 1");
  const double dn = e - lambda_n;
  const double da = e - lambda_a;
  return y * dn * dn + (1 - y) * da * da;
}

void LesConfig::validate(std::size_t detector_layers) const {
  if (lambda_a.size() != detector_layers || lr.size() != detector_layers) {
    throw InvalidArgument("LES config needs one lambda_a and one lr per detector layer (" +
                          std::to_string(detector_layers) + ")");
  }
  if (epochs < 0) throw InvalidArgument("LES epochs must be >= 0");
  if (batch < 1) throw InvalidArgument("LES batch must be >= 1");
  for (double r : lr) {
    if (!(r >= 0.0)) throw InvalidArgument("LES learning rates must be >= 0");
  }
  attack.validate();
}

LesConfig LesConfig::paper_defaults() {
  LesConfig c;
  c.attack = parse_attack("PGD(8,4,10)");
  return c;
}

LesConfig LesConfig::desk_defaults() {
  LesConfig c = paper_defaults();
  c.epochs = 50;
  return c;
}

Json les_config_to_json(const LesConfig& c) {
  return Json{{"lambda_n", c.lambda_n}, {"lambda_a", c.lambda_a}, {"epochs", c.epochs},
              {"lr", c.lr},             {"batch", c.batch},       {"seed", c.seed},
              {"attack", attack_to_json(c.attack)}};
}

LesConfig les_config_from_json(const Json& j) {
  try {
    LesConfig c;
    c.lambda_n = j.at("lambda_n").get<double>();
    c.lambda_a = j.at("lambda_a").get<std::vector<double>>();
    c.epochs = j.at("epochs").get<int>();
    c.lr = j.at("lr").get<std::vector<double>>();
    c.batch = j.at("batch").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.attack = attack_from_json(j.at("attack"));
    return c;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed LES config: ") + e.what());
  }
}

LesReport les_train(Network& det, std::span<const Tensor> natural,
                    std::span<const Tensor> adversarial, const LesConfig& cfg,
                    const LesHooks& hooks) {
  const std::size_t layers = det.num_param_layers();
  cfg.validate(layers);
  if (natural.empty()) throw InvalidArgument("les_train: no training data");
  if (natural.size() != adversarial.size()) {
    throw InvalidArgument("les_train: natural and adversarial sets differ in size");
  }
  for (std::size_t i = 0; i < natural.size(); ++i) {
    if (natural[i].shape() != det.input_shape() || adversarial[i].shape() != det.input_shape()) {
      throw ShapeError("les_train: sample " + std::to_string(i) + " does not match detector input " +
                       shape_string(det.input_shape()));
    }
  }

  const std::size_t n = natural.size();
  LesReport report;
  std::vector<Tensor> nat_cache, adv_cache;
  std::size_t cached_at = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> grads(det.params().size());

  for (std::size_t stage = 0; stage < layers; ++stage) {
    const std::size_t pos = det.param_layer_position(stage);
    if (stage == 0) {
      nat_cache = run_prefix(det, natural, 0, pos);
      adv_cache = run_prefix(det, adversarial, 0, pos);
    } else {
      nat_cache = run_prefix(det, nat_cache, cached_at, pos);
      adv_cache = run_prefix(det, adv_cache, cached_at, pos);
    }
    cached_at = pos;

    det.params().set_all_trainable(false);
    det.set_layer_trainable(stage, true);
    const auto lr = static_cast<float>(cfg.lr[stage]);
    const auto lam_n = static_cast<float>(cfg.lambda_n);
    const auto lam_a = static_cast<float>(cfg.lambda_a[stage]);

    StageStats stats;
    stats.stage = stage;
    Rng rng = make_rng(cfg.seed, 0x1e5 + stage);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < n; start += cfg.batch) {
        const std::size_t stop = std::min(n, start + cfg.batch);
        std::span<const std::size_t> idx(order.data() + start, stop - start);
        const std::size_t b = idx.size();
        Tensor nat_b = stack_rows(nat_cache, idx);
        Tensor adv_b = stack_rows(adv_cache, idx);
        Shape both = nat_b.shape();
        both[0] = 2 * b;
        std::vector<float> joined(nat_b.data().begin(), nat_b.data().end());
        joined.insert(joined.end(), adv_b.data().begin(), adv_b.data().end());
        std::vector<float> targets(2 * b, lam_a);
        std::fill(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(b), lam_n);

        Graph<float> g;
        auto bound = det.bind(g, true);
        Var x = g.leaf(Tensor(both, std::move(joined)), false);
        Var z = det.forward(g, x, bound, pos, pos + 1);
        Var loss = g.mse(g.energy(z, true), std::span<const float>(targets));
        g.backward(loss);
        for (std::size_t p = 0; p < bound.size(); ++p) {
          if (det.params()[p].trainable) grads[p] = g.grad(bound[p]);
        }
        sgd_step(det.params(), grads, lr);
        loss_sum += g.value(loss).item();
        ++batches;
      }
      stats.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }

    stage_statistics(det, nat_cache, pos, stats.nat_mean, stats.final_nat_mean);
    stage_statistics(det, adv_cache, pos, stats.adv_mean, stats.final_adv_mean);
    if (hooks.log) {
      char buf[200];
      std::snprintf(buf, sizeof buf,
                    "stage %zu/%zu: loss %.5f, energy nat %.4f adv %.4f, gap %.4f, final-layer gap %.4f",
                    stage + 1, layers, stats.epoch_loss.empty() ? NAN : stats.epoch_loss.back(),
                    stats.nat_mean, stats.adv_mean, stats.gap(), stats.final_gap());
      hooks.log(buf);
    }
    if (hooks.on_stage) hooks.on_stage(stats, det);
    report.stages.push_back(std::move(stats));
  }
  det.params().set_all_trainable(true);
  return report;
}

std::vector<double> layer_energies(const Network& det, const Tensor& x) {
  if (x.shape() != det.input_shape()) {
    throw ShapeError("detector expects input " + shape_string(det.input_shape()) + ", got " +
                     shape_string(x.shape()));
  }
  Graph<float> g;
  auto bound = det.bind(g, false);
  std::vector<Var> taps;
  det.forward(g, g.leaf_ref(x, false), bound, 0, kNoIndex, &taps);
  std::vector<double> out;
  for (Var t : taps) out.push_back(energy(g.value(t)));
  return out;
}

std::vector<double> detector_energies(const Network& det, std::span<const Tensor> images,
                                      std::size_t layer) {
  if (layer == kNoIndex) layer = det.num_param_layers() - 1;
  if (layer >= det.num_param_layers()) throw InvalidArgument("detector layer out of range");
  std::vector<double> out;
  out.reserve(images.size());
  for (const Tensor& x : images) out.push_back(layer_energies(det, x)[layer]);
  return out;
}

double nearest_rank(std::vector<double> values, double k) {
  if (values.empty()) throw InvalidArgument("percentile of an empty sample");
  if (!(k > 0.0 && k < 100.0)) throw InvalidArgument("percentile K must lie in (0,100)");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(k * n / 100.0));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

double calibrate_threshold(const Network& det, const SampleSet& s, double k) {
  if (s.size() == 0) throw InvalidArgument("calibration needs at least one sample");
  return nearest_rank(detector_energies(det, s.images), k);
}

std::string sample_set_hash(const SampleSet& s) {
  Sha256 h;
  for (const auto& t : s.images) h.update(t);
  return h.hex();
}

std::string artifact_hash(const DetectorArtifact& a) {
  Sha256 h;
  h.update(weights_hash(a.detector));
  h.update(&a.threshold, sizeof a.threshold);
  h.update(&a.k, sizeof a.k);
  h.update(a.calibration_hash);
  return h.hex();
}

DetectorArtifact make_artifact(Network det, const SampleSet& s, std::uint64_t calibration_seed,
                               double k, const LesConfig& cfg) {
  const double th = calibrate_threshold(det, s, k);
  return DetectorArtifact{std::move(det), th, k, sample_set_hash(s), calibration_seed, cfg};
}

Detection detect(const DetectorArtifact& a, const Tensor& x) {
  const double e = layer_energies(a.detector, x).back();
  return {e > a.threshold, e};
}

void save_artifact(const DetectorArtifact& a, const std::filesystem::path& path) {
  Checkpoint c;
  c.kind = "detector-artifact";
  c.meta["network"] = network_meta(a.detector);
  c.meta["threshold"] = a.threshold;
  c.meta["k"] = a.k;
  c.meta["calibration_hash"] = a.calibration_hash;
  c.meta["calibration_seed"] = a.calibration_seed;
  c.meta["les"] = les_config_to_json(a.config);
  c.meta["provenance"] = a.provenance;
  network_to_checkpoint(a.detector, c);
  write_checkpoint(c, path);
}

DetectorArtifact load_artifact(const std::filesystem::path& path) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != "detector-artifact") {
    throw FormatError("'" + path.string() + "' holds a '" + c.kind + "', expected a detector artifact");
  }
  try {
    DetectorArtifact a{network_from_checkpoint(c, c.meta.at("network")),
                       c.meta.at("threshold").get<double>(),
                       c.meta.at("k").get<double>(),
                       c.meta.at("calibration_hash").get<std::string>(),
                       c.meta.at("calibration_seed").get<std::uint64_t>(),
                       les_config_from_json(c.meta.at("les")),
                       c.meta.at("provenance")};
    return a;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("detector artifact header incomplete: ") + e.what());
  }
}

}  // namespace lesdet
