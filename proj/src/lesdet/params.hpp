#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lesdet/tensor.hpp"

namespace lesdet {

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Named parameter tensors of one model. Frozen entries are never written by
/// the optimizer.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](std::size_t i) { return params_.at(i); }
  const Param& operator[](std::size_t i) const { return params_.at(i); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t index_of(const std::string& name) const;
  void set_trainable(std::size_t i, bool trainable) { params_.at(i).trainable = trainable; }
  void set_all_trainable(bool trainable);

  // Number of scalar entries across all tensors.
  std::size_t scalar_count() const;

 private:
  std::vector<Param> params_;
};

/// Plain SGD: trainable t <- t - lr * grad(t). `grads` is index-aligned with
/// `params`; frozen entries are skipped.
void sgd_step(ParamSet& params, std::span<const Tensor> grads, float lr);

}  // namespace lesdet
