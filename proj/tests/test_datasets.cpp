#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <set>

#include "lesdet/dataset.hpp"
#include "lesdet/error.hpp"
#include "lesdet/models.hpp"
#include "test_support.hpp"

using namespace lesdet;
using lesdet::testing::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> record(unsigned char label, unsigned char pixel) {
  std::vector<unsigned char> r(kCifarRecordBytes, pixel);
  r[0] = label;
  return r;
}

}  // namespace

TEST_CASE("cifar loader decodes a saturated record") {
  TempDir dir("cifar");
  write_bytes(dir / "one.bin", record(7, 255));
  const Dataset d = load_cifar10(dir / "one.bin");
  REQUIRE(d.size() == 1);
  CHECK(d.labels[0] == 7);
  CHECK(d.images[0].shape() == Shape{3, 32, 32});
  CHECK(std::all_of(d.images[0].data().begin(), d.images[0].data().end(),
                    [](float v) { return v == 1.0f; }));
}

TEST_CASE("cifar loader maps bytes to b/255") {
  TempDir dir("cifar");
  auto bytes = record(0, 0);
  const auto zero = record(3, 0);
  bytes.insert(bytes.end(), zero.begin(), zero.end());
  bytes[1] = 128;  // first red pixel of record 0
  write_bytes(dir / "two.bin", bytes);
  const Dataset d = load_cifar10(dir / "two.bin");
  REQUIRE(d.size() == 2);
  CHECK(d.images[0].at(0, 0, 0) == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
  CHECK(d.images[0].at(0, 0, 1) == 0.0f);
  CHECK(d.labels[1] == 3);
  CHECK(std::all_of(d.images[1].data().begin(), d.images[1].data().end(),
                    [](float v) { return v == 0.0f; }));
}

TEST_CASE("cifar channel planes are red, green, blue in row-major order") {
  TempDir dir("cifar");
  auto bytes = record(1, 0);
  bytes[1 + 1024 + 32 * 2 + 5] = 255;  // green plane, row 2, column 5
  write_bytes(dir / "plane.bin", bytes);
  const Dataset d = load_cifar10(dir / "plane.bin");
  CHECK(d.images[0].at(1, 2, 5) == 1.0f);
  CHECK(d.images[0].at(0, 2, 5) == 0.0f);
}

TEST_CASE("cifar loader rejects malformed files") {
  TempDir dir("cifar");
  auto bytes = record(1, 9);
  bytes.pop_back();
  write_bytes(dir / "short.bin", bytes);
  CHECK_THROWS_AS(load_cifar10(dir / "short.bin"), FormatError);

  write_bytes(dir / "label.bin", record(10, 9));
  CHECK_THROWS_AS(load_cifar10(dir / "label.bin"), FormatError);

  write_bytes(dir / "empty.bin", {});
  CHECK_THROWS_AS(load_cifar10(dir / "empty.bin"), FormatError);

  CHECK_THROWS_AS(load_cifar10(dir / "missing.bin"), IoError);
}

TEST_CASE("cifar round trip stays within half a quantisation step") {
  TempDir dir("cifar");
  const Dataset d = synth_dataset({20, 10, {3, 32, 32}, 4, SynthStyle::Blobs});
  Dataset noisy = d;
  Rng rng = make_rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& img : noisy.images) {
    for (float& v : img.data()) v = u(rng);
  }
  save_cifar10(noisy, dir / "rt.bin");
  const Dataset back = load_cifar10(dir / "rt.bin");
  REQUIRE(back.size() == noisy.size());
  CHECK(back.labels == noisy.labels);
  double worst = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i) {
    for (std::size_t k = 0; k < back.images[i].size(); ++k) {
      worst = std::max(worst, static_cast<double>(std::fabs(back.images[i][k] - noisy.images[i][k])));
    }
  }
  CHECK(worst <= 1.0 / 510.0 + 1e-7);
}

TEST_CASE("synth datasets are deterministic and well formed") {
  for (auto style : {SynthStyle::Gratings, SynthStyle::Blobs}) {
    const SynthOptions opts{10, 2, {3, 32, 32}, 42, style};
    const Dataset a = synth_dataset(opts);
    const Dataset b = synth_dataset(opts);
    REQUIRE(a.size() == 10);
    CHECK(dataset_hash(a) == dataset_hash(b));
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.images[i] == b.images[i]);
      CHECK((a.labels[i] == 0 || a.labels[i] == 1));
      for (float v : a.images[i].data()) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
    const std::set<int> seen(a.labels.begin(), a.labels.end());
    CHECK(seen.size() == 2);
    CHECK(dataset_hash(synth_dataset({10, 2, {3, 32, 32}, 43, style})) != dataset_hash(a));
  }
}

TEST_CASE("synth supports the 64x64 shape") {
  const Dataset d = synth_dataset({12, 4, {3, 64, 64}, 1, SynthStyle::Blobs});
  CHECK(d.image_shape() == Shape{3, 64, 64});
  CHECK(d.num_classes() == 4);
}

TEST_CASE("synth rejects fewer samples than classes") {
  CHECK_THROWS_AS(synth_dataset({3, 4, {3, 32, 32}, 1, SynthStyle::Gratings}), InvalidArgument);
}

TEST_CASE("subset follows the floor rule and samples without replacement") {
  const Dataset d = synth_dataset({1000, 10, {3, 8, 8}, 3, SynthStyle::Gratings});
  const Dataset s = subset(d, 0.4, 9);
  CHECK(s.size() == 400);

  const Dataset full = subset(d, 1.0, 9);
  CHECK(full.size() == d.size());
  std::multiset<std::string> orig, perm;
  for (std::size_t i = 0; i < d.size(); ++i) {
    Sha256 h;
    orig.insert(h.update(d.images[i]).hex() + std::to_string(d.labels[i]));
    Sha256 h2;
    perm.insert(h2.update(full.images[i]).hex() + std::to_string(full.labels[i]));
  }
  CHECK(orig == perm);

  CHECK_THROWS_AS(subset(d, 0.0005, 1), InvalidArgument);
  CHECK_THROWS_AS(subset(d, 1.5, 1), InvalidArgument);
}

TEST_CASE("two subsets overlap near the hypergeometric expectation") {
  // E[overlap] = 400 * 400 / 1000 = 160; sd ~ 9.5, so +-40 is over 4 sd.
  const auto a = sample_indices(1000, 400, 1);
  const auto b = sample_indices(1000, 400, 2);
  const std::set<std::size_t> sa(a.begin(), a.end());
  CHECK(sa.size() == 400);
  std::size_t overlap = 0;
  for (auto i : b) overlap += sa.count(i);
  CHECK(overlap > 120);
  CHECK(overlap < 200);

  double mean = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto x = sample_indices(1000, 400, 100 + s);
    const auto y = sample_indices(1000, 400, 200 + s);
    const std::set<std::size_t> sx(x.begin(), x.end());
    for (auto i : y) mean += static_cast<double>(sx.count(i));
  }
  CHECK(mean / 50.0 == doctest::Approx(160.0).epsilon(0.05));
}

TEST_CASE("sample sets are seeded and bounded") {
  const Dataset d = synth_dataset({300, 3, {3, 8, 8}, 3, SynthStyle::Blobs});
  const SampleSet s = sample_set(d, kDefaultSampleSetSize, 5);
  CHECK(s.size() == 200);
  CHECK(sample_set(d, 200, 5).images == s.images);
  CHECK_THROWS_AS(sample_set(d, 301, 5), InvalidArgument);
}

TEST_CASE("split partitions the dataset") {
  const Dataset d = synth_dataset({50, 5, {3, 8, 8}, 3, SynthStyle::Gratings});
  auto [a, b] = split(d, 20, 1);
  CHECK(a.size() == 20);
  CHECK(b.size() == 30);
}

TEST_CASE("synth fitness: a substitute reaches 0.9 train accuracy in 20 epochs") {
  const Dataset d = synth_dataset({2000, 2, {3, 32, 32}, 11, SynthStyle::Gratings});
  Network net = build_substitute("arch-A", d.image_shape(), 2, 5);
  TrainOptions opts;
  opts.epochs = 20;
  opts.seed = 1;
  const TrainReport r = train_classifier(net, d, opts);
  CHECK(r.final_accuracy >= 0.9);
}
