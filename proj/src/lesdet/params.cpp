#include "lesdet/params.hpp"

namespace lesdet {

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
  params_.push_back(Param{std::move(name), std::move(value), trainable});
  return params_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw InvalidArgument("no parameter named '" + name + "'");
}

void ParamSet::set_all_trainable(bool trainable) {
  for (auto& p : params_) p.trainable = trainable;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void sgd_step(ParamSet& params, std::span<const Tensor> grads, float lr) {
  if (!(lr >= 0.0f)) throw InvalidArgument("sgd_step: learning rate must be >= 0");
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    if (!p.trainable) continue;
    const Tensor& g = grads[i];
    if (g.shape() != p.value.shape()) {
      throw ShapeError("sgd_step: gradient shape mismatch for " + p.name);
    }
    auto w = p.value.data();
    auto gd = g.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * gd[j];
  }
}

}  // namespace lesdet
