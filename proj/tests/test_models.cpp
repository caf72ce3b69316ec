#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <cstring>
#include <set>

#include "lesdet/error.hpp"
#include "lesdet/models.hpp"
#include "lesdet/serialize.hpp"
#include "test_support.hpp"

using namespace lesdet;
using lesdet::testing::TempDir;

TEST_CASE("detector parameter count is 5976 for any seed") {
  for (std::uint64_t seed : {0ULL, 1ULL, 12345ULL}) {
    const Network det = build_detector(seed);
    CHECK(det.param_count() == 5976);
    CHECK(det.num_param_layers() == 3);
  }
  // the same layers with bias would hold 8 + 16 + 32 more scalars
  CHECK(5976 + 8 + 16 + 32 == 6032);
}

TEST_CASE("detector initialisation is seeded") {
  const Network a = build_detector(3);
  const Network b = build_detector(3);
  const Network c = build_detector(4);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value == b.params()[i].value);
  }
  CHECK(weights_hash(a) == weights_hash(b));
  CHECK(weights_hash(a) != weights_hash(c));
}

TEST_CASE("detector init is fan-in uniform") {
  const Network det = build_detector(9);
  for (const auto& p : det.params()) {
    const auto& s = p.value.shape();
    const double bound = std::sqrt(6.0 / static_cast<double>(s[1] * s[2] * s[3]));
    for (float v : p.value.data()) REQUIRE(std::fabs(v) <= bound);
  }
}

TEST_CASE("detector output has 32 channels on 32x32 and 64x64 inputs") {
  for (std::size_t side : {32u, 64u}) {
    const Network det = build_detector(1, {3, side, side});
    Graph<float> g;
    auto bound = det.bind(g, false);
    std::vector<Var> taps;
    const Var out = det.forward(g, g.leaf(Tensor(Shape{3, side, side}, 0.5f), false), bound, 0,
                                kNoIndex, &taps);
    CHECK(g.value(out).shape() == Shape{32, side / 4, side / 4});
    REQUIRE(taps.size() == 3);
    CHECK(g.value(taps[0]).dim(0) == 8);
    CHECK(g.value(taps[1]).dim(0) == 16);
  }
}

TEST_CASE("wide detector plans build") {
  const Network wide = build_detector(1, {3, 32, 32}, {3, 64, 128, 256});
  CHECK(wide.param_count() == 9 * (3 * 64 + 64 * 128 + 128 * 256));
  CHECK_THROWS_AS(build_detector(1, {1, 32, 32}), ShapeError);
}

TEST_CASE("substitute architectures are distinct and small") {
  std::set<std::pair<std::size_t, std::size_t>> shapes;
  for (const auto& arch : substitute_archs()) {
    const Network n = build_substitute(arch, {3, 32, 32}, 10, 1);
    CHECK(n.param_count() <= 200000);
    CHECK(n.output_width() == 10);
    shapes.insert({n.num_param_layers(), n.param_count()});
  }
  CHECK(shapes.size() == 3);
  CHECK_THROWS_AS(build_substitute("arch-Z", {3, 32, 32}, 10, 1), InvalidArgument);
}

TEST_CASE("argmax takes the first index on ties") {
  CHECK(argmax_first(std::vector<float>{0, 0, 0}) == 0);
  CHECK(argmax_first(std::vector<float>{1, 3, 3}) == 1);
  CHECK_THROWS_AS(argmax_first(std::vector<float>{}), InvalidArgument);
}

TEST_CASE("predict on a zero-weight network returns class 0") {
  Network n = build_substitute("arch-A", {3, 8, 8}, 4, 1);
  for (std::size_t i = 0; i < n.params().size(); ++i) n.params()[i].value.fill(0.0f);
  CHECK(n.predict(Tensor(Shape{3, 8, 8}, 0.3f)) == 0);
}

TEST_CASE("single dense 4->3 layer with bias has 15 parameters") {
  ParamSet ps;
  Layer l{LayerKind::Dense};
  l.weight = ps.add("w", Tensor(Shape{3, 4}));
  l.bias = ps.add("b", Tensor(Shape{3}));
  const Network n("dense", {4}, {l}, ps, 0);
  CHECK(n.param_count() == 15);
}

TEST_CASE("predict rejects mismatched shapes") {
  const Network n = build_substitute("arch-B", {3, 16, 16}, 3, 1);
  CHECK_THROWS_AS(n.predict(Tensor(Shape{3, 8, 8})), ShapeError);
}

TEST_CASE("training with zero epochs leaves weights unchanged") {
  const Dataset d = synth_dataset({20, 2, {3, 16, 16}, 1, SynthStyle::Gratings});
  Network n = build_substitute("arch-A", {3, 16, 16}, 2, 3);
  const std::string before = weights_hash(n);
  TrainOptions opts;
  opts.epochs = 0;
  train_classifier(n, d, opts);
  CHECK(weights_hash(n) == before);
}

TEST_CASE("training is deterministic and validates inputs") {
  const Dataset d = synth_dataset({64, 2, {3, 16, 16}, 1, SynthStyle::Blobs});
  TrainOptions opts;
  opts.epochs = 2;
  opts.seed = 5;
  Network a = build_substitute("arch-C", {3, 16, 16}, 2, 3);
  Network b = build_substitute("arch-C", {3, 16, 16}, 2, 3);
  train_classifier(a, d, opts);
  train_classifier(b, d, opts);
  CHECK(weights_hash(a) == weights_hash(b));

  CHECK_THROWS_AS(train_classifier(a, Dataset{}, opts), InvalidArgument);
  Dataset bad = d;
  bad.labels[0] = 7;
  CHECK_THROWS_AS(train_classifier(a, bad, opts), InvalidArgument);
  Network other = build_substitute("arch-A", {3, 32, 32}, 2, 3);
  CHECK_THROWS_AS(train_classifier(other, d, opts), ShapeError);
}

TEST_CASE("classifier input gradient matches the graph") {
  const Network n = build_substitute("arch-A", {3, 8, 8}, 3, 2);
  const NetworkClassifier c(n);
  Tensor x(Shape{3, 8, 8}, 0.25f);
  Tensor grad;
  const float loss = c.loss_and_input_grad(x, 1, grad);
  CHECK(grad.shape() == x.shape());
  CHECK(loss > 0.0f);
  CHECK(c.id().rfind("arch-A@", 0) == 0);
}

TEST_CASE("network checkpoints round-trip bit-exactly") {
  TempDir dir("ckpt");
  Network n = build_substitute("arch-B", {3, 16, 16}, 5, 8);
  n.params()[0].value[0] = 0.123456789f;
  save_network(n, dir / "net.ckpt", Json{{"note", "x"}});
  Json meta;
  const Network back = load_network(dir / "net.ckpt", &meta);
  CHECK(back.arch() == "arch-B");
  CHECK(weights_hash(back) == weights_hash(n));
  CHECK(meta["note"] == "x");

  const Network det = build_detector(4, {3, 64, 64});
  save_network(det, dir / "det.ckpt");
  const Network det_back = load_network(dir / "det.ckpt");
  CHECK(det_back.input_shape() == Shape{3, 64, 64});
  CHECK(weights_hash(det_back) == weights_hash(det));

  // encoding is a pure function of the contents
  CHECK(read_file(dir / "det.ckpt") == read_file(dir / "det.ckpt"));
  save_network(det, dir / "det2.ckpt");
  CHECK(read_file(dir / "det.ckpt") == read_file(dir / "det2.ckpt"));
}

TEST_CASE("checkpoint corruption is detected") {
  TempDir dir("ckpt");
  save_network(build_detector(1), dir / "d.ckpt");
  std::string bytes = read_file(dir / "d.ckpt");
  bytes[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("LESDETv1"), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(std::string(100, 'x')), FormatError);
  CHECK_THROWS_AS(load_network(dir / "nope.ckpt"), IoError);
}

TEST_CASE("checkpoint layout: magic, header length, header, payload, digest") {
  Checkpoint c;
  c.kind = "demo";
  c.tensors.emplace_back("t", Tensor(Shape{2}, std::vector<float>{1.0f, -2.0f}));
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.substr(0, 8) == "LESDETv1");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  const Json header = Json::parse(bytes.substr(16, header_len));
  CHECK(header["kind"] == "demo");
  CHECK(header["tensors"][0]["shape"] == Json::array({2}));
  CHECK(bytes.size() == 16 + header_len + 2 * sizeof(float) + 32);
  float second = 0.0f;
  std::memcpy(&second, bytes.data() + 16 + header_len + 4, 4);
  CHECK(second == -2.0f);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.tensor("t") == c.tensors[0].second);
}

TEST_CASE("loading a checkpoint of the wrong kind fails") {
  TempDir dir("ckpt");
  Checkpoint c;
  c.kind = "other";
  write_checkpoint(c, dir / "o.ckpt");
  CHECK_THROWS_AS(load_network(dir / "o.ckpt"), FormatError);
}
