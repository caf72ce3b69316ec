#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>

#include "lesdet/error.hpp"
#include "lesdet/les.hpp"
#include "test_support.hpp"

using namespace lesdet;
using lesdet::testing::fd_relative_error;
using lesdet::testing::random_tensor;
using lesdet::testing::TempDir;

namespace {

std::vector<Tensor> noisy_copies(const std::vector<Tensor>& images, float amplitude,
                                 std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<Tensor> out;
  for (const auto& x : images) {
    Tensor a = x;
    for (float& v : a.data()) v = std::clamp(v + (coin(rng) ? amplitude : -amplitude), 0.0f, 1.0f);
    out.push_back(std::move(a));
  }
  return out;
}

LesConfig quick_config(int epochs) {
  LesConfig c = LesConfig::desk_defaults();
  c.epochs = epochs;
  c.lr = {0.5, 0.5, 0.1};
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("energy of constant and signed maps") {
  CHECK(energy(Tensor(Shape{2, 3, 3})) == 0.0);
  CHECK(energy(Tensor(Shape{4, 5, 6}, 1.0f)) == 1.0);
  CHECK(energy(Tensor(Shape{1}, 1.0f)) == 1.0);
  CHECK(energy(Tensor(Shape{1, 2, 2}, std::vector<float>{1, -1, 2, -2})) == 1.5);
  CHECK_THROWS(energy(Tensor()));
}

TEST_CASE("energy is scale-equivariant") {
  Rng rng = make_rng(4);
  for (int i = 0; i < 20; ++i) {
    const Tensor z = random_tensor({3, 5, 5}, rng, -2.0, 2.0).cast<float>();
    const double e = energy(z);
    for (float k : {2.0f, -0.5f, 4.0f, -1.0f, 0.25f}) {
      Tensor scaled = z;
      for (float& v : scaled.data()) v *= k;
      CHECK(energy(scaled) == std::fabs(static_cast<double>(k)) * e);
    }
  }
}

TEST_CASE("les loss examples") {
  CHECK(les_loss(0.1, 1, 0.1, 0.9) == 0.0);
  CHECK(les_loss(0.9, 0, 0.1, 0.9) == 0.0);
  CHECK(les_loss(0.5, 1, 0.1, 0.9) == doctest::Approx(0.16).epsilon(1e-12));
  CHECK(les_loss(0.5, 0, 0.1, 0.9) == doctest::Approx(0.16).epsilon(1e-12));
  CHECK_THROWS_AS(les_loss(0.5, 2, 0.1, 0.9), InvalidArgument);
}

TEST_CASE("graph energy and batch loss agree with the scalar definitions") {
  Rng rng = make_rng(8);
  const Tensor64 z = random_tensor({4, 2, 3, 3}, rng);
  Graph<double> g;
  Var e = g.energy(g.leaf(z, false), true);
  const std::vector<double> targets{0.1, 0.1, 1.3, 1.3};
  Var loss = g.mse(e, std::span<const double>(targets));
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 18; ++j) s += std::fabs(z[i * 18 + j]);
    CHECK(g.value(e)[i] == doctest::Approx(s / 18.0).epsilon(1e-14));
    expect += les_loss(s / 18.0, i < 2 ? 1 : 0, 0.1, 1.3) / 4.0;
  }
  CHECK(g.value(loss).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("LES loss gradient through the detector matches finite differences") {
  const Network det = build_detector(5, {3, 8, 8});
  Rng rng = make_rng(6);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<Tensor64> inputs;
    inputs.push_back(random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0));
    for (const auto& p : det.params()) {
      inputs.push_back(p.value.cast<double>());
    }
    const std::size_t layer = static_cast<std::size_t>(inst) % 3;
    auto build = [&det, layer](Graph<double>& g, const std::vector<Var>& v) {
      const std::vector<Var> bound(v.begin() + 1, v.end());
      std::vector<Var> taps;
      det.forward(g, v[0], bound, 0, kNoIndex, &taps);
      const std::vector<double> targets{0.1, 1.3};
      return g.mse(g.energy(taps[layer], true), std::span<const double>(targets));
    };
    CHECK(fd_relative_error(inputs, build, 1e-5) < 1e-4);
  }
}

TEST_CASE("nearest-rank percentile") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  std::reverse(v.begin(), v.end());
  CHECK(nearest_rank(v, 95) == 95.0);
  CHECK(nearest_rank(v, 50) == 50.0);
  CHECK(nearest_rank(v, 0.5) == 1.0);
  CHECK(nearest_rank(v, 99.5) == 100.0);
  CHECK(nearest_rank({3.25}, 10) == 3.25);
  CHECK(nearest_rank({2.0, 2.0, 2.0}, 95) == 2.0);
  CHECK_THROWS_AS(nearest_rank({}, 95), InvalidArgument);
  CHECK_THROWS_AS(nearest_rank({1.0}, 100), InvalidArgument);
  CHECK_THROWS_AS(nearest_rank({1.0}, 0), InvalidArgument);
}

TEST_CASE("detect uses a strict threshold") {
  const Network det = build_detector(2, {3, 8, 8});
  const Tensor x(Shape{3, 8, 8}, 0.4f);
  const double e = layer_energies(det, x).back();
  DetectorArtifact a{det, e, 95.0, "", 0, LesConfig::desk_defaults()};
  CHECK_FALSE(detect(a, x).adversarial);
  CHECK(detect(a, x).energy == e);
  a.threshold = std::nextafter(e, 0.0);
  CHECK(detect(a, x).adversarial);
  CHECK_THROWS_AS(detect(a, Tensor(Shape{3, 16, 16})), ShapeError);
}

TEST_CASE("detect is invariant to a shared monotone transform") {
  const Network det = build_detector(2, {3, 8, 8});
  const Dataset d = synth_dataset({40, 2, {3, 8, 8}, 1, SynthStyle::Blobs});
  const auto e = detector_energies(det, d.images);
  const double th = nearest_rank(e, 60);
  auto f = [](double v) { return std::exp(3.0 * v) + 7.0; };
  for (double v : e) CHECK((v > th) == (f(v) > f(th)));
}

TEST_CASE("calibration on 200 samples flags at most 10 of them") {
  const Network det = build_detector(3);
  const Dataset d = synth_dataset({300, 5, {3, 32, 32}, 2, SynthStyle::Gratings});
  const SampleSet s = sample_set(d, 200, 4);
  const DetectorArtifact a = make_artifact(det, s, 4, 95.0, LesConfig::desk_defaults());
  auto energies = detector_energies(det, s.images);
  std::sort(energies.begin(), energies.end());
  CHECK(a.threshold == energies[189]);
  int flagged = 0, above = 0;
  for (const auto& x : s.images) flagged += detect(a, x).adversarial;
  for (double v : energies) above += v > energies[189];
  CHECK(flagged == above);
  CHECK(flagged <= 10);
  CHECK_THROWS_AS(calibrate_threshold(det, SampleSet{}, 95), InvalidArgument);
}

TEST_CASE("les_train with zero epochs leaves parameters unchanged") {
  Network det = build_detector(1, {3, 16, 16});
  const std::string before = weights_hash(det);
  const Dataset d = synth_dataset({8, 2, {3, 16, 16}, 1, SynthStyle::Blobs});
  const auto adv = noisy_copies(d.images, 8.0f / 255.0f, 2);
  les_train(det, d.images, adv, quick_config(0));
  CHECK(weights_hash(det) == before);
  for (const auto& p : det.params()) CHECK(p.trainable);
}

TEST_CASE("les_train freezes every layer but the current one") {
  Network det = build_detector(1, {3, 16, 16});
  const Dataset d = synth_dataset({64, 2, {3, 16, 16}, 1, SynthStyle::Blobs});
  const auto adv = noisy_copies(d.images, 8.0f / 255.0f, 2);
  std::vector<std::vector<Tensor>> snapshots;
  snapshots.push_back({});
  for (const auto& p : det.params()) snapshots.back().push_back(p.value);
  LesHooks hooks;
  hooks.on_stage = [&](const StageStats& s, const Network& n) {
    std::vector<Tensor> now;
    for (const auto& p : n.params()) now.push_back(p.value);
    const auto& prev = snapshots.back();
    for (std::size_t i = 0; i < now.size(); ++i) {
      CAPTURE(i);
      if (i == s.stage) {
        CHECK(now[i] != prev[i]);
      } else {
        CHECK(now[i] == prev[i]);
      }
    }
    snapshots.push_back(std::move(now));
  };
  les_train(det, d.images, adv, quick_config(2), hooks);
  CHECK(snapshots.size() == 4);
}

TEST_CASE("les_train validates its inputs") {
  Network det = build_detector(1, {3, 16, 16});
  const Dataset d = synth_dataset({4, 2, {3, 16, 16}, 1, SynthStyle::Blobs});
  const Dataset other = synth_dataset({4, 2, {3, 8, 8}, 1, SynthStyle::Blobs});
  CHECK_THROWS_AS(les_train(det, d.images, other.images, quick_config(1)), ShapeError);
  std::vector<Tensor> three(d.images.begin(), d.images.begin() + 3);
  CHECK_THROWS_AS(les_train(det, d.images, three, quick_config(1)), InvalidArgument);
  LesConfig bad = quick_config(1);
  bad.lambda_a.pop_back();
  CHECK_THROWS_AS(les_train(det, d.images, d.images, bad), InvalidArgument);
}

TEST_CASE("training is deterministic") {
  const Dataset d = synth_dataset({32, 2, {3, 16, 16}, 1, SynthStyle::Gratings});
  const auto adv = noisy_copies(d.images, 8.0f / 255.0f, 2);
  Network a = build_detector(1, {3, 16, 16});
  Network b = build_detector(1, {3, 16, 16});
  les_train(a, d.images, adv, quick_config(2));
  les_train(b, d.images, adv, quick_config(2));
  CHECK(weights_hash(a) == weights_hash(b));
}

TEST_CASE("energy separation grows across stages on PGD adversaries") {
  const Dataset d = synth_dataset({400, 4, {3, 32, 32}, 41, SynthStyle::Gratings});
  Network sub = build_substitute("arch-A", {3, 32, 32}, 4, 2);
  TrainOptions opts;
  opts.epochs = 4;
  opts.seed = 1;
  train_classifier(sub, d, opts);
  const AdversarialSet s = generate_attack_set(NetworkClassifier(sub), d, parse_attack("PGD(8,4,10)", 3));
  Network det = build_detector(7);
  const LesReport r = les_train(det, s.natural, s.adversarial, quick_config(25));
  REQUIRE(r.stages.size() == 3);
  for (const auto& st : r.stages) MESSAGE("stage " << st.stage << " gap " << st.gap());
  CHECK(r.stages[2].gap() >= 0.95 * r.stages[0].gap());
  CHECK(r.stages[2].gap() > 0.0);
  for (std::size_t i = 1; i < 3; ++i) CHECK(r.stages[i].gap() >= r.stages[i - 1].gap() - 0.05 * std::fabs(r.stages[i - 1].gap()));
}

TEST_CASE("artifacts round-trip and reproduce decisions bit-exactly") {
  TempDir dir("artifact");
  const Dataset d = synth_dataset({60, 3, {3, 16, 16}, 5, SynthStyle::Blobs});
  Network det = build_detector(4, {3, 16, 16});
  les_train(det, d.images, noisy_copies(d.images, 0.03f, 1), quick_config(1));
  DetectorArtifact a = make_artifact(det, sample_set(d, 50, 2), 2, 95.0, quick_config(1));
  a.provenance["config_hash"] = "abc";
  save_artifact(a, dir / "a.det");
  const DetectorArtifact b = load_artifact(dir / "a.det");
  CHECK(b.threshold == a.threshold);
  CHECK(b.k == a.k);
  CHECK(b.calibration_hash == a.calibration_hash);
  CHECK(b.config.lambda_a == a.config.lambda_a);
  CHECK(b.provenance["config_hash"] == "abc");
  CHECK(artifact_hash(b) == artifact_hash(a));
  for (const auto& x : d.images) {
    const Detection p = detect(a, x), q = detect(b, x);
    CHECK(p.adversarial == q.adversarial);
    CHECK(p.energy == q.energy);
  }
  save_artifact(b, dir / "b.det");
  CHECK(read_file(dir / "a.det") == read_file(dir / "b.det"));
}

TEST_CASE("config presets") {
  const LesConfig p = LesConfig::paper_defaults();
  CHECK(p.lambda_n == 0.1);
  CHECK(p.lambda_a == std::vector<double>{0.9, 1.3, 2.3});
  CHECK(p.lr == std::vector<double>{0.005, 0.005, 0.001});
  CHECK(p.epochs == 500);
  CHECK(p.attack.name() == "PGD(8,4,10)");
  CHECK(LesConfig::desk_defaults().epochs == 50);
  const LesConfig back = les_config_from_json(les_config_to_json(p));
  CHECK(back.lr == p.lr);
  CHECK(back.attack.name() == p.attack.name());
}
