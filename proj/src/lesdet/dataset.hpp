#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lesdet/tensor.hpp"

namespace lesdet {

/// Labelled images, each a [c,h,w] tensor with values in [0,1].
struct Dataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::string name;
  std::string provenance;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  const Shape& image_shape() const;
  int num_classes() const;  // max label + 1
};

/// Unlabelled natural images used for threshold calibration.
struct SampleSet {
  std::vector<Tensor> images;

  std::size_t size() const noexcept { return images.size(); }
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kDefaultSampleSetSize = 200;

Dataset load_cifar10(const std::filesystem::path& path);
// Quantizes each pixel to round(255 v).
void save_cifar10(const Dataset& d, const std::filesystem::path& path);

enum class SynthStyle {
  Gratings,  // oriented colour gratings, class sets orientation and tint
  Blobs,     // smooth gaussian blobs, class sets the layout and palette
};

struct SynthOptions {
  std::size_t n = 1000;
  int n_class = 10;
  Shape image_shape{3, 32, 32};
  std::uint64_t seed = 0;
  SynthStyle style = SynthStyle::Gratings;
};

/// Smooth, class-structured images quantized to the 8-bit grid. Deterministic
/// for a seed.
Dataset synth_dataset(const SynthOptions& opts);

// floor(fraction * N) samples drawn without replacement.
Dataset subset(const Dataset& d, double fraction, std::uint64_t seed);
// First `n` entries of a seeded permutation.
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n,
                                        std::uint64_t seed);
SampleSet sample_set(const Dataset& d, std::size_t n, std::uint64_t seed);

// Split into the first `n_first` entries of a seeded permutation and the rest.
std::pair<Dataset, Dataset> split(const Dataset& d, std::size_t n_first,
                                  std::uint64_t seed);

std::string dataset_hash(const Dataset& d);

const char* synth_style_name(SynthStyle s);
SynthStyle parse_synth_style(const std::string& name);

}  // namespace lesdet
