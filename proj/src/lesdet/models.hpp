#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lesdet/dataset.hpp"
#include "lesdet/graph.hpp"
#include "lesdet/params.hpp"

namespace lesdet {

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Dense };

struct Layer {
  LayerKind kind;
  std::size_t weight = kNoIndex;  // index into the ParamSet
  std::size_t bias = kNoIndex;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;

  bool parameterized() const { return kind == LayerKind::Conv || kind == LayerKind::Dense; }
};

/// A feed-forward stack of layers over one ParamSet. Used both for the
/// detector and for the substitute classifiers.
class Network {
 public:
  Network(std::string arch, Shape input_shape, std::vector<Layer> layers, ParamSet params,
          std::uint64_t seed);

  const std::string& arch() const noexcept { return arch_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::size_t param_count() const { return params_.scalar_count(); }
  std::size_t num_param_layers() const { return param_layers_.size(); }
  // Position in layers() of the i-th parameterized layer.
  std::size_t param_layer_position(std::size_t i) const { return param_layers_.at(i); }
  void set_layer_trainable(std::size_t param_layer, bool trainable);
  // Width of the final layer's output (class count for classifiers).
  std::size_t output_width() const;

  /// Registers every parameter as a graph leaf. Float graphs borrow the
  /// tensors; double graphs get widened copies.
  template <typename T>
  std::vector<Var> bind(Graph<T>& g, bool requires_grad) const;

  /// Runs layers [begin, end) of the stack. If `taps` is non-null the raw
  /// output of every parameterized layer in range is appended to it.
  template <typename T>
  Var forward(Graph<T>& g, Var x, std::span<const Var> bound, std::size_t begin = 0,
              std::size_t end = kNoIndex, std::vector<Var>* taps = nullptr) const;

  std::vector<float> logits(const Tensor& x) const;
  int predict(const Tensor& x) const;

 private:
  std::string arch_;
  Shape input_shape_;
  std::vector<Layer> layers_;
  ParamSet params_;
  std::uint64_t seed_;
  std::vector<std::size_t> param_layers_;
};

inline const std::vector<std::size_t> kDetectorChannels{3, 8, 16, 32};

/// Conv(3,8)-ReLU-Pool-Conv(8,16)-ReLU-Pool-Conv(16,32): 3x3 kernels, stride 1,
/// padding 1, no bias, fan-in uniform init.
Network build_detector(std::uint64_t seed, const Shape& input_shape = Shape{3, 32, 32},
                       const std::vector<std::size_t>& channels = kDetectorChannels);

/// Desk-scale classifiers: "arch-A" (3 conv), "arch-B" (4 conv), "arch-C" (5 conv).
Network build_substitute(const std::string& arch, const Shape& input_shape, int n_class,
                         std::uint64_t seed);
const std::vector<std::string>& substitute_archs();

int argmax_first(std::span<const float> values);

std::string weights_hash(const Network& net);

struct TrainOptions {
  int epochs = 20;
  float lr = 0.05f;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double final_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Mean softmax cross-entropy minimized by plain SGD over seeded shuffles.
TrainReport train_classifier(Network& net, const Dataset& d, const TrainOptions& opts);
double classification_accuracy(const Network& net, const Dataset& d);

/// Classifier that only answers score queries. Score-based and noise attacks
/// are written against this interface, so they cannot reach gradients.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual std::vector<float> logits(const Tensor& x) const = 0;
  virtual std::string id() const = 0;
};

/// Classifier with input gradients of the cross-entropy loss.
class DifferentiableModel : public ScoreModel {
 public:
  // Returns softmax_xent(logits(x), label) and writes its gradient w.r.t. x.
  virtual float loss_and_input_grad(const Tensor& x, int label, Tensor& grad) const = 0;
};

class NetworkClassifier final : public DifferentiableModel {
 public:
  explicit NetworkClassifier(const Network& net);

  std::vector<float> logits(const Tensor& x) const override { return net_.logits(x); }
  float loss_and_input_grad(const Tensor& x, int label, Tensor& grad) const override;
  std::string id() const override { return id_; }

 private:
  const Network& net_;
  std::string id_;
};

/// Score-only facade over any model.
class ScoreOnly final : public ScoreModel {
 public:
  explicit ScoreOnly(const ScoreModel& inner) : inner_(inner) {}
  std::vector<float> logits(const Tensor& x) const override { return inner_.logits(x); }
  std::string id() const override { return inner_.id(); }

 private:
  const ScoreModel& inner_;
};

}  // namespace lesdet
