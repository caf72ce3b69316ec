#include "lesdet/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lesdet/util.hpp"

namespace lesdet {

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> u(-bound, bound);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

/// Accumulates layers and their parameters while tracking the running shape.
class StackBuilder {
 public:
  StackBuilder(Shape input, std::uint64_t seed) : shape_(std::move(input)), seed_(seed) {}

  StackBuilder& conv(std::size_t out_ch, bool bias) {
    const std::size_t in_ch = shape_.at(0);
    const std::size_t k = 3;
    Rng rng = make_rng(seed_, layers_.size());
    Layer l{LayerKind::Conv};
    const std::string prefix = "conv" + std::to_string(conv_count_++);
    l.weight = params_.add(prefix + ".weight",
                           fan_in_uniform({out_ch, in_ch, k, k}, in_ch * k * k, rng));
    if (bias) l.bias = params_.add(prefix + ".bias", Tensor(Shape{out_ch}));
    l.stride = 1;
    l.padding = 1;
    layers_.push_back(l);
    shape_[0] = out_ch;
    return *this;
  }

  StackBuilder& relu() {
    layers_.push_back(Layer{LayerKind::Relu});
    return *this;
  }

  StackBuilder& pool() {
    Layer l{LayerKind::MaxPool};
    l.window = 2;
    if (shape_[1] % 2 || shape_[2] % 2) {
      throw ShapeError("input spatial size " + shape_string(shape_) + " not divisible by pooling");
    }
    shape_[1] /= 2;
    shape_[2] /= 2;
    layers_.push_back(l);
    return *this;
  }

  StackBuilder& dense(std::size_t out) {
    if (shape_.size() != 1) {
      layers_.push_back(Layer{LayerKind::Flatten});
      shape_ = Shape{shape_size(shape_)};
    }
    Rng rng = make_rng(seed_, layers_.size());
    Layer l{LayerKind::Dense};
    const std::string prefix = "dense" + std::to_string(dense_count_++);
    l.weight = params_.add(prefix + ".weight", fan_in_uniform({out, shape_[0]}, shape_[0], rng));
    l.bias = params_.add(prefix + ".bias", Tensor(Shape{out}));
    layers_.push_back(l);
    shape_ = Shape{out};
    return *this;
  }

  Network finish(std::string arch, Shape input) {
    return Network(std::move(arch), std::move(input), std::move(layers_), std::move(params_),
                   seed_);
  }

 private:
  Shape shape_;
  std::uint64_t seed_;
  std::vector<Layer> layers_;
  ParamSet params_;
  int conv_count_ = 0;
  int dense_count_ = 0;
};

Tensor stack_batch(const std::vector<Tensor>& images, std::span<const std::size_t> idx) {
  const Shape& s = images[idx[0]].shape();
  Shape bs{idx.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor out(bs);
  const std::size_t per = shape_size(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& img = images[idx[i]];
    if (img.shape() != s) throw ShapeError("images in a batch must share one shape");
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + i * per);
  }
  return out;
}

}  // namespace

Network::Network(std::string arch, Shape input_shape, std::vector<Layer> layers,
                 ParamSet params, std::uint64_t seed)
    : arch_(std::move(arch)),
      input_shape_(std::move(input_shape)),
      layers_(std::move(layers)),
      params_(std::move(params)),
      seed_(seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].parameterized()) param_layers_.push_back(i);
  }
}

void Network::set_layer_trainable(std::size_t param_layer, bool trainable) {
  const Layer& l = layers_.at(param_layers_.at(param_layer));
  params_.set_trainable(l.weight, trainable);
  if (l.bias != kNoIndex) params_.set_trainable(l.bias, trainable);
}

std::size_t Network::output_width() const {
  const Layer& last = layers_.at(param_layers_.back());
  return params_[last.weight].value.dim(0);
}

template <typename T>
std::vector<Var> Network::bind(Graph<T>& g, bool requires_grad) const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) {
    if constexpr (std::is_same_v<T, float>) {
      out.push_back(g.leaf_ref(p.value, requires_grad));
    } else {
      out.push_back(g.leaf(p.value.template cast<T>(), requires_grad));
    }
  }
  return out;
}

template <typename T>
Var Network::forward(Graph<T>& g, Var x, std::span<const Var> bound, std::size_t begin,
                     std::size_t end, std::vector<Var>* taps) const {
  if (bound.size() != params_.size()) throw InvalidArgument("forward: parameters not bound");
  end = std::min(end, layers_.size());
  // spatial activations are [c,h,w]; a fourth axis means a batch
  const bool batched = g.value(x).rank() == 4;
  for (std::size_t i = begin; i < end; ++i) {
    const Layer& l = layers_[i];
    const Var b = l.bias == kNoIndex ? Var{} : bound[l.bias];
    switch (l.kind) {
      case LayerKind::Conv:
        x = g.conv2d(x, bound[l.weight], l.stride, l.padding, b);
        if (taps) taps->push_back(x);
        break;
      case LayerKind::Relu:
        x = g.relu(x);
        break;
      case LayerKind::MaxPool:
        x = g.maxpool2d(x, l.window);
        break;
      case LayerKind::Flatten:
        x = g.flatten(x, batched ? 1 : 0);
        break;
      case LayerKind::Dense:
        x = g.dense(x, bound[l.weight], b);
        if (taps) taps->push_back(x);
        break;
    }
  }
  return x;
}

template std::vector<Var> Network::bind(Graph<float>&, bool) const;
template std::vector<Var> Network::bind(Graph<double>&, bool) const;
template Var Network::forward(Graph<float>&, Var, std::span<const Var>, std::size_t,
                              std::size_t, std::vector<Var>*) const;
template Var Network::forward(Graph<double>&, Var, std::span<const Var>, std::size_t,
                              std::size_t, std::vector<Var>*) const;

std::vector<float> Network::logits(const Tensor& x) const {
  if (x.shape() != input_shape_) {
    throw ShapeError("network " + arch_ + " expects input " + shape_string(input_shape_) +
                     ", got " + shape_string(x.shape()));
  }
  Graph<float> g;
  auto bound = bind(g, false);
  Var out = forward(g, g.leaf_ref(x, false), bound);
  return g.value(out).vec();
}

int Network::predict(const Tensor& x) const { return argmax_first(logits(x)); }

int argmax_first(std::span<const float> values) {
  if (values.empty()) throw InvalidArgument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

Network build_detector(std::uint64_t seed, const Shape& input_shape,
                       const std::vector<std::size_t>& channels) {
  if (channels.size() < 2) throw InvalidArgument("detector needs at least one conv layer");
  if (input_shape.size() != 3 || input_shape[0] != channels[0]) {
    throw ShapeError("detector input " + shape_string(input_shape) +
                     " does not match its first channel count");
  }
  StackBuilder b(input_shape, seed);
  for (std::size_t i = 1; i < channels.size(); ++i) {
    b.conv(channels[i], false);
    if (i + 1 < channels.size()) b.relu().pool();
  }
  std::string arch = "detector";
  for (auto c : channels) arch += "-" + std::to_string(c);
  return b.finish(std::move(arch), input_shape);
}

const std::vector<std::string>& substitute_archs() {
  static const std::vector<std::string> archs{"arch-A", "arch-B", "arch-C"};
  return archs;
}

Network build_substitute(const std::string& arch, const Shape& input_shape, int n_class,
                         std::uint64_t seed) {
  if (input_shape.size() != 3) throw ShapeError("substitute input must be [c,h,w]");
  if (n_class < 2) throw InvalidArgument("substitute needs at least 2 classes");
  const auto classes = static_cast<std::size_t>(n_class);
  StackBuilder b(input_shape, seed);
  if (arch == "arch-A") {
    b.conv(8, true).relu().pool();
    b.conv(16, true).relu().pool();
    b.conv(32, true).relu().pool();
  } else if (arch == "arch-B") {
    b.conv(8, true).relu().pool();
    b.conv(16, true).relu();
    b.conv(16, true).relu().pool();
    b.conv(32, true).relu().pool();
  } else if (arch == "arch-C") {
    b.conv(6, true).relu();
    b.conv(12, true).relu().pool();
    b.conv(12, true).relu().pool();
    b.conv(24, true).relu().pool();
    b.conv(24, true).relu().pool();
  } else {
    throw InvalidArgument("unknown substitute architecture '" + arch + "'");
  }
  b.dense(classes);
  return b.finish(arch, input_shape);
}

std::string weights_hash(const Network& net) {
  Sha256 h;
  h.update(net.arch());
  for (const auto& p : net.params()) {
    h.update(p.name);
    h.update(p.value);
  }
  return h.hex();
}

double classification_accuracy(const Network& net, const Dataset& d) {
  if (d.empty()) throw InvalidArgument("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (net.predict(d.images[i]) == d.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

TrainReport train_classifier(Network& net, const Dataset& d, const TrainOptions& opts) {
  if (d.empty()) throw InvalidArgument("train_classifier: empty dataset");
  if (opts.batch < 1) throw InvalidArgument("train_classifier: batch must be >= 1");
  const auto classes = static_cast<int>(net.output_width());
  for (int label : d.labels) {
    if (label < 0 || label >= classes) {
      throw InvalidArgument("train_classifier: label " + std::to_string(label) +
                            " outside the network's " + std::to_string(classes) + " classes");
    }
  }
  if (d.image_shape() != net.input_shape()) {
    throw ShapeError("train_classifier: dataset images " + shape_string(d.image_shape()) +
                     " do not match network input " + shape_string(net.input_shape()));
  }
  TrainReport report;
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(opts.seed, 0x7a11);
  std::vector<Tensor> grads(net.params().size());
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t stop = std::min(order.size(), start + opts.batch);
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(d.labels[i]);
      Graph<float> g;
      auto bound = net.bind(g, true);
      Var x = g.leaf(stack_batch(d.images, idx), false);
      Var loss = g.softmax_xent(net.forward(g, x, bound), labels);
      g.backward(loss);
      for (std::size_t p = 0; p < bound.size(); ++p) grads[p] = g.grad(bound[p]);
      sgd_step(net.params(), grads, opts.lr);
      loss_sum += g.value(loss).item();
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  report.final_accuracy = classification_accuracy(net, d);
  return report;
}

NetworkClassifier::NetworkClassifier(const Network& net)
    : net_(net), id_(net.arch() + "@" + short_hash(weights_hash(net))) {}

float NetworkClassifier::loss_and_input_grad(const Tensor& x, int label, Tensor& grad) const {
  if (x.shape() != net_.input_shape()) {
    throw ShapeError("classifier expects input " + shape_string(net_.input_shape()));
  }
  Graph<float> g;
  auto bound = net_.bind(g, false);
  Var xv = g.leaf_ref(x, true);
  Var loss = g.softmax_xent(net_.forward(g, xv, bound), label);
  g.backward(loss);
  grad = g.grad(xv);
  return g.value(loss).item();
}

}  // namespace lesdet
