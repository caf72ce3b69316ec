#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "lesdet/error.hpp"
#include "lesdet/eval.hpp"
#include "lesdet/experiments.hpp"
#include "test_support.hpp"

using namespace lesdet;
using lesdet::testing::conv2d_oracle;

namespace {

double brute_auc(const std::vector<double>& nat, const std::vector<double>& adv) {
  double wins = 0.0;
  for (double a : adv) {
    for (double n : nat) wins += a > n ? 1.0 : (a == n ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(nat.size() * adv.size());
}

Network single_dense(const std::vector<float>& w, std::size_t out, std::size_t in) {
  ParamSet ps;
  Layer l{LayerKind::Dense};
  l.weight = ps.add("w", Tensor(Shape{out, in}, w));
  return Network("dense", {in}, {l}, ps, 0);
}

Network single_conv(const Tensor& w, Shape input, std::size_t padding) {
  ParamSet ps;
  Layer l{LayerKind::Conv};
  l.weight = ps.add("w", w);
  l.padding = padding;
  return Network("conv", std::move(input), {l}, ps, 0);
}

// Spectral norm of the explicitly materialised operator x -> conv(x, w).
double explicit_conv_norm(const Tensor& w, const Shape& in, std::size_t pad) {
  const std::size_t n_in = shape_size(in);
  const Tensor64 w64 = w.cast<double>();
  std::vector<Tensor64> columns;
  for (std::size_t j = 0; j < n_in; ++j) {
    Tensor64 e(in);
    e[j] = 1.0;
    columns.push_back(conv2d_oracle(e, w64, 1, pad));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(columns[0].size()), static_cast<Eigen::Index>(n_in));
  for (std::size_t j = 0; j < n_in; ++j) {
    for (std::size_t i = 0; i < columns[j].size(); ++i) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j][i];
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

TEST_CASE("auc examples") {
  CHECK(roc_auc(std::vector<double>{1, 2}, std::vector<double>{3, 4}) == 1.0);
  CHECK(roc_auc(std::vector<double>{1, 3}, std::vector<double>{2, 4}) == 0.75);
  CHECK(roc_auc(std::vector<double>{3, 4}, std::vector<double>{1, 2}) == 0.0);
  const std::vector<double> same{0.5, 0.1, 0.9, 0.9};
  CHECK(roc_auc(same, same) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{}, same), InvalidArgument);
  CHECK_THROWS_AS(roc_auc(same, std::vector<double>{}), InvalidArgument);
}

TEST_CASE("auc equals brute-force pair counting on 100 random instances") {
  Rng rng = make_rng(13);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  for (int inst = 0; inst < 100; ++inst) {
    // coarse integer scores force plenty of ties
    std::uniform_int_distribution<int> score(0, inst % 2 ? 20 : 100000);
    std::vector<double> nat(size(rng)), adv(size(rng));
    for (double& v : nat) v = score(rng);
    for (double& v : adv) v = score(rng) + (inst % 3);
    CHECK(roc_auc(nat, adv) == brute_auc(nat, adv));
  }
}

TEST_CASE("auc is invariant to strictly increasing transforms") {
  Rng rng = make_rng(14);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> nat(200), adv(150);
  for (double& v : nat) v = n(rng);
  for (double& v : adv) v = n(rng) + 0.7;
  const double base = roc_auc(nat, adv);
  auto tf = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(2.0 * x) + 3.0;
    return v;
  };
  CHECK(roc_auc(tf(nat), tf(adv)) == base);
}

TEST_CASE("accuracy and error counting rules") {
  const std::vector<int> labels{0, 1, 2, 3};
  const std::vector<int> pred{0, 1, 2, 0};  // 3 correct
  const std::vector<char> none(4, 0), all(4, 1);
  const std::vector<int> adv_pred{1, 1, 0, 0};  // 3 wrong
  AccuracyError r = accuracy_error(pred, labels, std::vector<char>{0, 1, 0, 0}, adv_pred, labels, none);
  CHECK(r.accuracy == 0.5);
  CHECK(r.accuracy_no_detector == 0.75);
  CHECK(r.error == 0.75);

  r = accuracy_error(pred, labels, all, adv_pred, labels, all);
  CHECK(r.accuracy == 0.0);
  CHECK(r.error == 0.0);

  r = accuracy_error(pred, labels, none, adv_pred, labels, none);
  CHECK(r.accuracy == r.accuracy_no_detector);
  CHECK(r.error == r.error_no_detector);

  Rng rng = make_rng(3);
  std::bernoulli_distribution coin(0.4);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int i = 0; i < 50; ++i) {
    std::vector<int> p(30), l(30), ap(30), al(30);
    std::vector<char> f(30), af(30);
    for (int k = 0; k < 30; ++k) {
      p[k] = cls(rng), l[k] = cls(rng), ap[k] = cls(rng), al[k] = cls(rng);
      f[k] = coin(rng), af[k] = coin(rng);
    }
    const AccuracyError e = accuracy_error(p, l, f, ap, al, af);
    CHECK(e.accuracy <= e.accuracy_no_detector);
    CHECK(e.error <= e.error_no_detector);
  }
}

TEST_CASE("spectral norm of dense layers") {
  CHECK(layer_spectral_norm(single_dense({1, 0, 0, 1}, 2, 2), 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(layer_spectral_norm(single_dense({2, 0, 0, 0.5}, 2, 2), 0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(lipschitz_bound(single_dense({2, 0, 0, 0.5}, 2, 2), 1) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(lipschitz_bound(single_dense({2, 0, 0, 0.5}, 2, 2), 0) == 1.0);
  CHECK_THROWS_AS(lipschitz_bound(single_dense({1}, 1, 1), 2), InvalidArgument);
}

TEST_CASE("power iteration matches explicit matrices on small conv layers") {
  Rng rng = make_rng(21);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t ci = 1 + inst % 3, co = 2 + inst % 2;
    const Shape in{ci, 2, 2};
    Tensor w(Shape{co, ci, 3, 3});
    for (float& v : w.data()) v = u(rng);
    const Network net = single_conv(w, in, 1);
    const double expect = explicit_conv_norm(w, in, 1);
    CHECK(layer_spectral_norm(net, 0, 5) == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("detector layer norms match explicit matrices on a tiny input") {
  // layer inputs: [3,4,4], [8,2,2], [16,1,1]
  const std::vector<Shape> inputs{{3, 4, 4}, {8, 2, 2}, {16, 1, 1}};
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Network det = build_detector(seed, {3, 4, 4});
    double product = 1.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor& w = det.params()[i].value;
      const double expect = explicit_conv_norm(w, inputs[i], 1);
      CHECK(layer_spectral_norm(det, i, seed) == doctest::Approx(expect).epsilon(1e-4));
      product *= expect;
    }
    CHECK(lipschitz_bound(det, 3, seed) == doctest::Approx(product).epsilon(1e-4));
  }
}

TEST_CASE("report serialisation carries hashes and a fixed header") {
  EvalReport r;
  r.experiment = "demo";
  r.dataset_id = "d1";
  r.artifact_hash = "a1";
  r.config_hash = "c1";
  r.seed = 7;
  EvalRow row;
  row.detector = "det";
  row.attack = "PGD(8,4,10)";
  row.source = "arch-B@x";
  row.auc = 0.9;
  r.rows.push_back(row);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind(std::string(EvalReport::csv_header()) + "\n", 0) == 0);
  CHECK(csv.find("demo,det,\"PGD(8,4,10)\",arch-B@x,0.900000") != std::string::npos);
  CHECK(csv.find(",d1,a1,c1,7\n") != std::string::npos);
  const Json j = r.to_json();
  CHECK(j["rows"][0]["auc"] == 0.9);
  CHECK(j["config_hash"] == "c1");
}

TEST_CASE("pair subsets keep order and the full fraction is the identity") {
  AdversarialSet s;
  for (int i = 0; i < 10; ++i) {
    s.natural.emplace_back(Shape{1}, static_cast<float>(i));
    s.adversarial.emplace_back(Shape{1}, static_cast<float>(i) + 0.5f);
    s.labels.push_back(i);
  }
  const AdversarialSet full = subset_pairs(s, 1.0, 3);
  CHECK(full.natural == s.natural);
  const AdversarialSet part = subset_pairs(s, 0.4, 3);
  REQUIRE(part.size() == 4);
  CHECK(std::is_sorted(part.labels.begin(), part.labels.end()));
  for (std::size_t i = 0; i < 4; ++i) CHECK(part.adversarial[i][0] == part.natural[i][0] + 0.5f);
}

TEST_CASE("lambda sweep settings") {
  const auto s = lambda_sweep_settings();
  REQUIRE(s.size() == 7);
  CHECK(s[0][0] == doctest::Approx(0.3));
  CHECK(s[3] == std::vector<double>{0.9, 1.3, 2.3});
  CHECK(s[6][2] == doctest::Approx(2.9));
}

TEST_CASE("transfer recalibrates the threshold only") {
  const Dataset src = synth_dataset({250, 3, {3, 16, 16}, 1, SynthStyle::Gratings});
  const Dataset dst = synth_dataset({250, 3, {3, 16, 16}, 2, SynthStyle::Blobs});
  const Network det = build_detector(5, {3, 16, 16});
  const SampleSet calib = sample_set(src, 200, 9);
  const DetectorArtifact a = make_artifact(det, calib, 9, 95.0, LesConfig::desk_defaults());
  const DetectorArtifact same = transfer_dataset(a, src, 200, 95.0, 9);
  CHECK(same.threshold == a.threshold);
  const DetectorArtifact moved = transfer_dataset(a, dst, 200, 95.0, 9);
  CHECK(weights_hash(moved.detector) == weights_hash(a.detector));
  CHECK(moved.threshold == calibrate_threshold(det, sample_set(dst, 200, 9), 95.0));
  CHECK_THROWS_AS(transfer_dataset(a, dst, 251, 95.0, 9), InvalidArgument);
  const Dataset wrong = synth_dataset({10, 2, {3, 8, 8}, 2, SynthStyle::Blobs});
  CHECK_THROWS_AS(transfer_dataset(a, wrong, 5, 95.0, 9), ShapeError);
}
