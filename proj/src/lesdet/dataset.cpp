#include "lesdet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "lesdet/util.hpp"

namespace lesdet {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::round(c * 255.0) / 255.0);
}

struct Field {
  double cx, cy, sigma, amp[3];
};

// A few broad gaussian bumps; keeps synthetic backgrounds smooth.
std::vector<Field> random_fields(Rng& rng, std::size_t count, double side,
                                 double amp) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Field> out(count);
  for (auto& f : out) {
    f.cx = u(rng) * side;
    f.cy = u(rng) * side;
    f.sigma = side * (0.25 + 0.25 * u(rng));
    for (double& a : f.amp) a = amp * (2.0 * u(rng) - 1.0);
  }
  return out;
}

double field_value(const std::vector<Field>& fields, std::size_t ch, double x,
                   double y) {
  double v = 0.0;
  for (const auto& f : fields) {
    const double dx = x - f.cx;
    const double dy = y - f.cy;
    v += f.amp[ch] * std::exp(-(dx * dx + dy * dy) / (2.0 * f.sigma * f.sigma));
  }
  return v;
}

double tint(int label, int n_class, std::size_t ch) {
  const double phase = static_cast<double>(label) / n_class + static_cast<double>(ch) / 3.0;
  return 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * phase);
}

Tensor gratings_image(int label, int n_class, const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0 / 255.0);
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const double side = static_cast<double>(std::max(h, w));
  const double pi = std::numbers::pi;
  const double theta = pi * label / n_class + (u(rng) - 0.5) * 0.3 * pi / n_class;
  const double cycles = 1.5 + 0.75 * (label % 3) + 0.4 * (u(rng) - 0.5);
  const double phase = 2.0 * pi * u(rng);
  const double amp = 0.2 + 0.05 * u(rng);
  double base[3];
  for (double& b : base) b = 0.35 + 0.3 * u(rng);
  const auto fields = random_fields(rng, 2, side, 0.1);

  Tensor img(shape);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double t = 0.3 + 0.7 * tint(label, n_class, ch);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double proj = (x * ct + y * st) / side;
        const double v = base[ch % 3] + amp * t * std::sin(2.0 * pi * cycles * proj + phase) +
                         field_value(fields, ch % 3, x, y) + noise(rng);
        img.at(ch, y, x) = quantize(v);
      }
    }
  }
  return img;
}

Tensor blobs_image(int label, int n_class, const Shape& shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0 / 255.0);
  const std::size_t c = shape[0], h = shape[1], w = shape[2];
  const double side = static_cast<double>(std::max(h, w));
  const double pi = std::numbers::pi;
  const int blobs = 2 + label % 3;
  const double rot = 2.0 * pi * label / n_class;
  const double radius = side * (0.22 + 0.04 * (label % 2));
  const double sigma = side * (0.10 + 0.02 * u(rng));
  struct Blob {
    double x, y;
  };
  std::vector<Blob> centers;
  for (int j = 0; j < blobs; ++j) {
    const double a = rot + 2.0 * pi * j / blobs + (u(rng) - 0.5) * 0.2;
    centers.push_back({side / 2 + radius * std::cos(a) + (u(rng) - 0.5) * side / 16,
                       side / 2 + radius * std::sin(a) + (u(rng) - 0.5) * side / 16});
  }
  const double amp = 0.3 + 0.1 * u(rng);
  double base[3];
  for (double& b : base) b = 0.25 + 0.2 * u(rng);
  const auto fields = random_fields(rng, 2, side, 0.08);

  Tensor img(shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double t = 0.2 + 0.8 * tint(label, n_class, ch);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double bump = 0.0;
        for (const auto& b : centers) {
          const double dx = x - b.x, dy = y - b.y;
          bump += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        }
        const double v = base[ch % 3] + amp * t * bump + field_value(fields, ch % 3, x, y) +
                         noise(rng);
        img.at(ch, y, x) = quantize(v);
      }
    }
  }
  return img;
}

Dataset gather(const Dataset& d, std::span<const std::size_t> idx) {
  Dataset out;
  out.name = d.name;
  out.images.reserve(idx.size());
  out.labels.reserve(idx.size());
  for (auto i : idx) {
    out.images.push_back(d.images[i]);
    out.labels.push_back(d.labels[i]);
  }
  return out;
}

}  // namespace

const Shape& Dataset::image_shape() const {
  if (images.empty()) throw StateError("image_shape of empty dataset");
  return images.front().shape();
}

int Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

Dataset load_cifar10(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 file " + path.string() + " has length " +
                      std::to_string(bytes.size()) + ", not a positive multiple of 3073");
  }
  Dataset d;
  d.name = path.filename().string();
  d.provenance = "cifar10:" + path.filename().string();
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  d.images.reserve(n);
  d.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label byte " +
                        std::to_string(rec[0]));
    }
    Tensor img(Shape{3, kCifarSide, kCifarSide});
    for (std::size_t i = 0; i < kCifarPixels; ++i) {
      img[i] = static_cast<float>(rec[1 + i]) / 255.0f;
    }
    d.labels.push_back(rec[0]);
    d.images.push_back(std::move(img));
  }
  return d;
}

void save_cifar10(const Dataset& d, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(d.size() * kCifarRecordBytes);
  for (std::size_t r = 0; r < d.size(); ++r) {
    if (d.images[r].shape() != Shape{3, kCifarSide, kCifarSide}) {
      throw ShapeError("CIFAR-10 records must be 3x32x32");
    }
    if (d.labels[r] < 0 || d.labels[r] > 9) throw InvalidArgument("CIFAR-10 labels must be 0..9");
    bytes.push_back(static_cast<unsigned char>(d.labels[r]));
    for (float v : d.images[r].data()) {
      bytes.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Dataset synth_dataset(const SynthOptions& opts) {
  if (opts.n_class < 1) throw InvalidArgument("synth_dataset: n_class must be >= 1");
  if (opts.n < static_cast<std::size_t>(opts.n_class)) {
    throw InvalidArgument("synth_dataset: n must be >= n_class");
  }
  if (opts.image_shape.size() != 3) throw ShapeError("synth_dataset: image shape must be [c,h,w]");
  Dataset d;
  std::ostringstream name;
  name << "synth-" << synth_style_name(opts.style) << '-' << opts.image_shape[0] << 'x'
       << opts.image_shape[1] << 'x' << opts.image_shape[2];
  d.name = name.str();
  std::ostringstream prov;
  prov << "synth(style=" << synth_style_name(opts.style) << ",n=" << opts.n
       << ",n_class=" << opts.n_class << ",shape=" << shape_string(opts.image_shape)
       << ",seed=" << opts.seed << ')';
  d.provenance = prov.str();
  d.images.reserve(opts.n);
  d.labels.reserve(opts.n);
  Rng label_rng = make_rng(opts.seed, 0xfeed);
  std::uniform_int_distribution<int> pick(0, opts.n_class - 1);
  for (std::size_t i = 0; i < opts.n; ++i) {
    // every class appears at least once
    const int label = i < static_cast<std::size_t>(opts.n_class) ? static_cast<int>(i)
                                                                  : pick(label_rng);
    Rng rng = make_rng(opts.seed, i);
    d.labels.push_back(label);
    d.images.push_back(opts.style == SynthStyle::Gratings
                           ? gratings_image(label, opts.n_class, opts.image_shape, rng)
                           : blobs_image(label, opts.n_class, opts.image_shape, rng));
  }
  return d;
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed) {
  if (n > population) {
    throw InvalidArgument("cannot sample " + std::to_string(n) + " of " +
                          std::to_string(population) + " items without replacement");
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x5eed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  return idx;
}

Dataset subset(const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("subset fraction must be in (0,1]");
  }
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.size())));
  if (n < 1) throw InvalidArgument("subset would be empty");
  Dataset out = gather(d, sample_indices(d.size(), n, seed));
  std::ostringstream prov;
  prov << d.provenance << "|subset(fraction=" << fraction << ",seed=" << seed << ')';
  out.provenance = prov.str();
  return out;
}

SampleSet sample_set(const Dataset& d, std::size_t n, std::uint64_t seed) {
  SampleSet s;
  for (auto i : sample_indices(d.size(), n, seed)) s.images.push_back(d.images[i]);
  return s;
}

std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t n_first,
                                  std::uint64_t seed) {
  auto idx = sample_indices(d.size(), d.size(), seed);
  if (n_first > d.size()) throw InvalidArgument("split size exceeds dataset");
  std::span<const std::size_t> all(idx);
  Dataset a = gather(d, all.first(n_first));
  Dataset b = gather(d, all.subspan(n_first));
  a.provenance = d.provenance + "|split(head=" + std::to_string(n_first) + ",seed=" +
                 std::to_string(seed) + ')';
  b.provenance = d.provenance + "|split(tail=" + std::to_string(n_first) + ",seed=" +
                 std::to_string(seed) + ')';
  return {std::move(a), std::move(b)};
}

std::string dataset_hash(const Dataset& d) {
  Sha256 h;
  h.update(std::span<const int>(d.labels));
  for (const auto& img : d.images) h.update(img);
  return h.hex();
}

const char* synth_style_name(SynthStyle s) {
  return s == SynthStyle::Gratings ? "gratings" : "blobs";
}

SynthStyle parse_synth_style(const std::string& name) {
  if (name == "gratings") return SynthStyle::Gratings;
  if (name == "blobs") return SynthStyle::Blobs;
  throw InvalidArgument("unknown synth style '" + name + "' (expected gratings|blobs)");
}

}  // namespace lesdet
