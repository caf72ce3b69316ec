#include "lesdet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>
#include <utility>

#include "lesdet/error.hpp"
#include "lesdet/util.hpp"

namespace lesdet {

namespace {

constexpr double kPixel = 255.0;
constexpr float kMomentumDecay = 1.0f;

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; });
}

// Float interval [lo, hi] of the L-inf ball around `c` intersected with
// [0,1]. The float endpoints are pulled inwards until they lie within `eps`
// of `c` in exact arithmetic.
std::pair<float, float> linf_bounds(float c, double eps) {
  float lo = static_cast<float>(c - eps), hi = static_cast<float>(c + eps);
  while (static_cast<double>(c) - lo > eps) lo = std::nextafter(lo, c);
  while (static_cast<double>(hi) - c > eps) hi = std::nextafter(hi, c);
  return {std::max(lo, 0.0f), std::min(hi, 1.0f)};
}

// Clamp `v` into the intersection of the L-inf ball around `x0` and [0,1].
void project_linf(const Tensor& x0, Tensor& v, double eps) {
  auto xs = x0.data();
  auto vs = v.data();
  for (std::size_t i = 0; i < vs.size(); ++i) {
    const auto [lo, hi] = linf_bounds(xs[i], eps);
    vs[i] = std::clamp(vs[i], lo, hi);
  }
}

double l2_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

void clip_box(Tensor& v) {
  for (float& f : v.data()) f = std::clamp(f, 0.0f, 1.0f);
}

// Scale v - x0 back onto the L2 ball, then clip to [0,1]. Clipping towards x0
// can only shrink each coordinate's offset; the final loop absorbs rounding.
void project_l2(const Tensor& x0, Tensor& v, double eps) {
  double norm = l2_distance(v, x0);
  for (int guard = 0; norm > eps && guard < 8; ++guard) {
    const double scale = eps / norm * (1.0 - 1e-7 * (guard + 1));
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = x0[i] + static_cast<float>((static_cast<double>(v[i]) - x0[i]) * scale);
    }
    clip_box(v);
    norm = l2_distance(v, x0);
  }
  clip_box(v);
  if (norm > eps) {
    // unreachable in practice; fall back to the natural image
    v = x0;
  }
}

Tensor uniform_start(const Tensor& x, double eps, Rng& rng) {
  std::uniform_real_distribution<float> u(-static_cast<float>(eps), static_cast<float>(eps));
  Tensor v = x;
  for (float& f : v.data()) f += u(rng);
  project_linf(x, v, eps);
  return v;
}

enum class Direction { Ascend, Descend };

Tensor iterate_linf(const DifferentiableModel& m, const Tensor& x, int label,
                    const AttackConfig& cfg, Tensor adv, Direction dir, bool momentum) {
  const auto alpha = static_cast<float>(cfg.alpha / kPixel);
  const float sgn = dir == Direction::Ascend ? 1.0f : -1.0f;
  Tensor grad;
  Tensor accum(x.shape());
  for (int step = 0; step < cfg.steps; ++step) {
    m.loss_and_input_grad(adv, label, grad);
    const Tensor* direction = &grad;
    if (momentum) {
      double l1 = 0.0;
      for (float g : grad.data()) l1 += std::fabs(g);
      if (l1 == 0.0) continue;
      const auto inv = static_cast<float>(1.0 / l1);
      for (std::size_t i = 0; i < accum.size(); ++i) {
        accum[i] = kMomentumDecay * accum[i] + grad[i] * inv;
      }
      direction = &accum;
    } else if (all_zero(grad)) {
      continue;
    }
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] += sgn * alpha * sign_of((*direction)[i]);
    }
    project_linf(x, adv, cfg.eps / kPixel);
  }
  return adv;
}

void check_input(const Tensor& x) {
  for (float v : x.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw InvalidArgument("attack input must lie in [0,1]");
  }
}

std::string fmt_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

const char* family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::FGSM: return "FGSM";
    case AttackFamily::FFGSM: return "FFGSM";
    case AttackFamily::BIM: return "BIM";
    case AttackFamily::PGD: return "PGD";
    case AttackFamily::TPGD: return "TPGD";
    case AttackFamily::MIFGSM: return "MIFGSM";
    case AttackFamily::PGDL2: return "PGDL2";
    case AttackFamily::SQR: return "SQR";
    case AttackFamily::GN: return "GN";
  }
  return "?";
}

AttackFamily parse_family(const std::string& name) {
  for (auto f : {AttackFamily::FGSM, AttackFamily::FFGSM, AttackFamily::BIM, AttackFamily::PGD,
                 AttackFamily::TPGD, AttackFamily::MIFGSM, AttackFamily::PGDL2,
                 AttackFamily::SQR, AttackFamily::GN}) {
    if (name == family_name(f)) return f;
  }
  throw InvalidArgument("unknown attack family '" + name + "'");
}

bool AttackConfig::gradient_based() const noexcept {
  return family != AttackFamily::SQR && family != AttackFamily::GN;
}

void AttackConfig::validate() const {
  if (!(eps >= 0.0) || !(alpha >= 0.0) || !(sigma >= 0.0)) {
    throw InvalidArgument("attack " + name() + ": eps, alpha and sigma must be >= 0");
  }
  if (steps < 0 || queries < 0) throw InvalidArgument("attack " + name() + ": negative count");
  if (target && *target < 0) throw InvalidArgument("attack target must be a class index");
}

std::string AttackConfig::name() const {
  std::string args;
  switch (family) {
    case AttackFamily::FGSM: args = fmt_number(eps); break;
    case AttackFamily::FFGSM: args = fmt_number(eps) + "," + fmt_number(alpha); break;
    case AttackFamily::SQR: args = fmt_number(eps) + "," + std::to_string(queries); break;
    case AttackFamily::GN: args = fmt_number(sigma); break;
    default:
      args = fmt_number(eps) + "," + fmt_number(alpha) + "," + std::to_string(steps);
  }
  return std::string(family_name(family)) + "(" + args + ")";
}

AttackConfig parse_attack(const std::string& spec, std::uint64_t seed) {
  static const std::regex re(R"(^\s*([A-Za-z0-9]+)\s*\(([^)]*)\)\s*$)");
  std::smatch m;
  if (!std::regex_match(spec, m, re)) {
    throw InvalidArgument("attack '" + spec + "' is not of the form NAME(a,b,...)");
  }
  AttackConfig cfg;
  cfg.family = parse_family(m[1].str());
  cfg.seed = seed;
  std::vector<double> args;
  std::stringstream ss(m[2].str());
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      args.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
    } catch (const std::logic_error&) {
      throw InvalidArgument("attack '" + spec + "': '" + item + "' is not a number");
    }
  }
  auto want = [&](std::size_t n) {
    if (args.size() != n) {
      throw InvalidArgument("attack '" + spec + "' takes " + std::to_string(n) + " arguments");
    }
  };
  auto as_int = [&](double v) {
    if (v != std::floor(v)) throw InvalidArgument("attack '" + spec + "': count must be integral");
    return static_cast<int>(v);
  };
  switch (cfg.family) {
    case AttackFamily::FGSM:
      want(1);
      cfg.eps = args[0];
      cfg.alpha = args[0];
      cfg.steps = 1;
      break;
    case AttackFamily::FFGSM:
      want(2);
      cfg.eps = args[0];
      cfg.alpha = args[1];
      cfg.steps = 1;
      break;
    case AttackFamily::SQR:
      want(2);
      cfg.eps = args[0];
      cfg.queries = as_int(args[1]);
      break;
    case AttackFamily::GN:
      want(1);
      cfg.sigma = args[0];
      break;
    default:
      want(3);
      cfg.eps = args[0];
      cfg.alpha = args[1];
      cfg.steps = as_int(args[2]);
  }
  cfg.validate();
  return cfg;
}

Tensor fgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg) {
  check_input(x);
  const auto eps = static_cast<float>(cfg.eps / kPixel);
  Tensor grad;
  m.loss_and_input_grad(x, y, grad);
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += eps * sign_of(grad[i]);
  project_linf(x, adv, cfg.eps / kPixel);
  return adv;
}

Tensor ffgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
             std::uint64_t stream) {
  check_input(x);
  const auto alpha = static_cast<float>(cfg.alpha / kPixel);
  Rng rng = make_rng(cfg.seed, stream);
  Tensor adv = cfg.random_start ? uniform_start(x, cfg.eps / kPixel, rng) : x;
  Tensor grad;
  m.loss_and_input_grad(adv, y, grad);
  if (all_zero(grad)) return adv;
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += alpha * sign_of(grad[i]);
  project_linf(x, adv, cfg.eps / kPixel);
  return adv;
}

Tensor bim(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg) {
  check_input(x);
  return iterate_linf(m, x, y, cfg, x, Direction::Ascend, false);
}

Tensor pgd(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
           std::uint64_t stream) {
  check_input(x);
  Rng rng = make_rng(cfg.seed, stream);
  Tensor start = cfg.random_start ? uniform_start(x, cfg.eps / kPixel, rng) : x;
  return iterate_linf(m, x, y, cfg, std::move(start), Direction::Ascend, false);
}

Tensor tpgd(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
            std::uint64_t stream) {
  check_input(x);
  int target = 0;
  if (cfg.target) {
    target = *cfg.target;
  } else {
    const auto classes = static_cast<int>(m.logits(x).size());
    target = (y + 1) % classes;
  }
  if (target == y) throw InvalidArgument("TPGD target must differ from the true label");
  Rng rng = make_rng(cfg.seed, stream);
  Tensor start = cfg.random_start ? uniform_start(x, cfg.eps / kPixel, rng) : x;
  return iterate_linf(m, x, target, cfg, std::move(start), Direction::Descend, false);
}

Tensor mifgsm(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg) {
  check_input(x);
  return iterate_linf(m, x, y, cfg, x, Direction::Ascend, true);
}

Tensor pgd_l2(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
              std::uint64_t stream) {
  check_input(x);
  const double eps = cfg.eps / kPixel;
  const double alpha = cfg.alpha / kPixel;
  Tensor adv = x;
  if (cfg.random_start && eps > 0.0) {
    Rng rng = make_rng(cfg.seed, stream);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> radius(0.0, 1.0);
    std::vector<double> dir(x.size());
    double norm = 0.0;
    for (double& d : dir) {
      d = normal(rng);
      norm += d * d;
    }
    const double scale = radius(rng) * eps / std::sqrt(norm);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += static_cast<float>(dir[i] * scale);
    project_l2(x, adv, eps);
  }
  Tensor grad;
  for (int step = 0; step < cfg.steps; ++step) {
    m.loss_and_input_grad(adv, y, grad);
    double norm = 0.0;
    for (float g : grad.data()) norm += static_cast<double>(g) * g;
    if (norm == 0.0) continue;
    const double scale = alpha / std::sqrt(norm);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      adv[i] += static_cast<float>(grad[i] * scale);
    }
    project_l2(x, adv, eps);
  }
  return adv;
}

double square_margin(std::span<const float> logits, int y) {
  const auto label = static_cast<std::size_t>(y);
  if (label >= logits.size()) throw InvalidArgument("label outside the model's classes");
  double other = -INFINITY;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (j != label) other = std::max(other, static_cast<double>(logits[j]));
  }
  return other - static_cast<double>(logits[label]);
}

double square_patch_fraction(int query, int total_queries, double p_init) {
  if (total_queries <= 0) return p_init;
  // progress rescaled onto a 10000-query budget
  const int it = static_cast<int>(static_cast<double>(query) / total_queries * 10000.0);
  static constexpr int kBreaks[] = {10, 50, 200, 500, 1000, 2000, 4000, 6000, 8000};
  double p = p_init;
  for (int b : kBreaks) {
    if (it > b) p /= 2.0;
  }
  return p;
}

Tensor square_attack(const ScoreModel& m, const Tensor& x, int y, const AttackConfig& cfg,
                     std::uint64_t stream, const SquareOptions& opts) {
  check_input(x);
  if (x.rank() != 3) throw ShapeError("square attack expects a [c,h,w] image");
  const auto eps = static_cast<float>(cfg.eps / kPixel);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Rng rng = make_rng(cfg.seed, stream);
  std::bernoulli_distribution coin(0.5);
  auto random_sign = [&] { return coin(rng) ? 1.0f : -1.0f; };

  Tensor best = x;
  if (opts.init) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t col = 0; col < w; ++col) {
        const float s = random_sign();
        for (std::size_t row = 0; row < h; ++row) best.at(ch, row, col) += s * eps;
      }
    }
    project_linf(x, best, cfg.eps / kPixel);
  }
  if (cfg.queries == 0) return best;

  double best_loss = square_margin(m.logits(best), y);
  const std::size_t max_side = std::max<std::size_t>(1, std::min(h, w) - (std::min(h, w) > 1));
  for (int q = 1; q < cfg.queries && best_loss <= 0.0; ++q) {
    std::size_t side = opts.fixed_side;
    if (side == 0) {
      const double p = square_patch_fraction(q, cfg.queries);
      side = static_cast<std::size_t>(std::lround(std::sqrt(p * static_cast<double>(h * w))));
      side = std::clamp<std::size_t>(side, 1, max_side);
    }
    side = std::min({side, h, w});
    std::uniform_int_distribution<std::size_t> pick_row(0, h - side);
    std::uniform_int_distribution<std::size_t> pick_col(0, w - side);
    SquareProposal prop;
    prop.query = q;
    prop.side = side;
    prop.row = pick_row(rng);
    prop.col = pick_col(rng);
    Tensor cand = best;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float s = random_sign();
      prop.signs.push_back(s);
      for (std::size_t r = prop.row; r < prop.row + side; ++r) {
        for (std::size_t cc = prop.col; cc < prop.col + side; ++cc) {
          const auto [lo, hi] = linf_bounds(x.at(ch, r, cc), cfg.eps / kPixel);
          cand.at(ch, r, cc) = std::clamp(x.at(ch, r, cc) + s * eps, lo, hi);
        }
      }
    }
    prop.loss = square_margin(m.logits(cand), y);
    prop.accepted = prop.loss > best_loss;
    if (prop.accepted) {
      best = std::move(cand);
      best_loss = prop.loss;
    }
    if (opts.trace) opts.trace(prop);
  }
  return best;
}

Tensor gaussian_noise(const Tensor& x, const AttackConfig& cfg, std::uint64_t stream) {
  check_input(x);
  if (!(cfg.sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  Tensor out = x;
  if (cfg.sigma == 0.0) return out;
  Rng rng = make_rng(cfg.seed, stream);
  std::normal_distribution<double> normal(0.0, cfg.sigma / kPixel);
  for (float& v : out.data()) v = std::clamp(static_cast<float>(v + normal(rng)), 0.0f, 1.0f);
  return out;
}

Tensor run_attack(const DifferentiableModel& m, const Tensor& x, int y, const AttackConfig& cfg,
                  std::uint64_t stream) {
  switch (cfg.family) {
    case AttackFamily::FGSM: return fgsm(m, x, y, cfg);
    case AttackFamily::FFGSM: return ffgsm(m, x, y, cfg, stream);
    case AttackFamily::BIM: return bim(m, x, y, cfg);
    case AttackFamily::PGD: return pgd(m, x, y, cfg, stream);
    case AttackFamily::TPGD: return tpgd(m, x, y, cfg, stream);
    case AttackFamily::MIFGSM: return mifgsm(m, x, y, cfg);
    case AttackFamily::PGDL2: return pgd_l2(m, x, y, cfg, stream);
    case AttackFamily::SQR: return square_attack(ScoreOnly(m), x, y, cfg, stream);
    case AttackFamily::GN: return gaussian_noise(x, cfg, stream);
  }
  throw InvalidArgument("unhandled attack family");
}

AdversarialSet generate_attack_set(const DifferentiableModel& m, const Dataset& d,
                                   const AttackConfig& cfg) {
  cfg.validate();
  AdversarialSet s;
  s.model_id = m.id();
  s.config = cfg;
  s.natural = d.images;
  s.labels = d.labels;
  s.adversarial.reserve(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    s.adversarial.push_back(run_attack(m, d.images[i], d.labels[i], cfg, i));
  }
  return s;
}

double max_constraint_violation(const AdversarialSet& s) {
  double worst = 0.0;
  const double eps = s.config.eps / kPixel;
  const bool bounded = s.config.family != AttackFamily::GN;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Tensor& a = s.adversarial[i];
    const Tensor& x = s.natural[i];
    if (a.shape() != x.shape()) return INFINITY;
    double linf = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      worst = std::max({worst, -static_cast<double>(a[k]), static_cast<double>(a[k]) - 1.0});
      linf = std::max(linf, std::fabs(static_cast<double>(a[k]) - x[k]));
    }
    if (!bounded) continue;
    const double dist = s.config.l2() ? l2_distance(a, x) : linf;
    worst = std::max(worst, dist - eps);
  }
  return worst;
}

Dataset adversarial_dataset(const AdversarialSet& s) {
  Dataset d;
  d.images = s.adversarial;
  d.labels = s.labels;
  d.name = s.config.name() + "@" + s.model_id;
  d.provenance = "attack seed " + std::to_string(s.config.seed);
  return d;
}

}  // namespace lesdet

namespace lesdet {

namespace {

Tensor stack(const std::vector<Tensor>& images) {
  if (images.empty()) throw InvalidArgument("cannot store an empty adversarial set");
  const Shape& s = images.front().shape();
  Shape full{images.size()};
  full.insert(full.end(), s.begin(), s.end());
  std::vector<float> flat;
  flat.reserve(shape_size(full));
  for (const auto& t : images) {
    if (t.shape() != s) throw ShapeError("adversarial set images differ in shape");
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(full), std::move(flat));
}

std::vector<Tensor> unstack(const Tensor& t) {
  if (t.rank() < 2) throw FormatError("stacked image tensor has too few axes");
  const Shape item(t.shape().begin() + 1, t.shape().end());
  const std::size_t per = shape_size(item);
  std::vector<Tensor> out;
  out.reserve(t.dim(0));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    auto first = t.data().begin() + static_cast<std::ptrdiff_t>(i * per);
    out.emplace_back(item, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

}  // namespace

Json attack_to_json(const AttackConfig& cfg) {
  Json j;
  j["family"] = family_name(cfg.family);
  j["name"] = cfg.name();
  j["eps"] = cfg.eps;
  j["alpha"] = cfg.alpha;
  j["steps"] = cfg.steps;
  j["sigma"] = cfg.sigma;
  j["queries"] = cfg.queries;
  j["target"] = cfg.target ? Json(*cfg.target) : Json(nullptr);
  j["seed"] = cfg.seed;
  j["random_start"] = cfg.random_start;
  return j;
}

AttackConfig attack_from_json(const Json& j) {
  try {
    AttackConfig cfg;
    cfg.family = parse_family(j.at("family").get<std::string>());
    cfg.eps = j.at("eps").get<double>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.steps = j.at("steps").get<int>();
    cfg.sigma = j.at("sigma").get<double>();
    cfg.queries = j.at("queries").get<int>();
    if (!j.at("target").is_null()) cfg.target = j.at("target").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.random_start = j.at("random_start").get<bool>();
    cfg.validate();
    return cfg;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed attack description: ") + e.what());
  }
}

void save_adversarial_set(const AdversarialSet& s, const std::filesystem::path& path,
                          const Json& extra_meta) {
  if (s.natural.size() != s.size() || s.labels.size() != s.size()) {
    throw InvalidArgument("adversarial set has inconsistent lengths");
  }
  Checkpoint c;
  c.kind = "adversarial-set";
  c.meta = extra_meta;
  c.meta["attack"] = attack_to_json(s.config);
  c.meta["model_id"] = s.model_id;
  c.meta["count"] = s.size();
  c.meta["labels"] = s.labels;
  c.tensors.emplace_back("natural", stack(s.natural));
  c.tensors.emplace_back("adversarial", stack(s.adversarial));
  write_checkpoint(c, path);
}

AdversarialSet load_adversarial_set(const std::filesystem::path& path, Json* meta_out) {
  Checkpoint c = read_checkpoint(path);
  if (c.kind != "adversarial-set") {
    throw FormatError("'" + path.string() + "' holds a '" + c.kind +
                      "', expected an adversarial set");
  }
  AdversarialSet s;
  try {
    s.config = attack_from_json(c.meta.at("attack"));
    s.model_id = c.meta.at("model_id").get<std::string>();
    s.labels = c.meta.at("labels").get<std::vector<int>>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("adversarial set header incomplete: ") + e.what());
  }
  s.natural = unstack(c.tensor("natural"));
  s.adversarial = unstack(c.tensor("adversarial"));
  if (s.natural.size() != s.labels.size() || s.adversarial.size() != s.labels.size()) {
    throw FormatError("adversarial set record counts disagree");
  }
  if (meta_out) *meta_out = c.meta;
  return s;
}

}  // namespace lesdet
