#include "lesdet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lesdet/blas.hpp"

namespace lesdet {

namespace {

// Allocator that leaves trivially constructible elements uninitialised; used
// for scratch buffers that are fully overwritten before being read.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Scratch = std::vector<T, DefaultInitAllocator<T>>;

struct SpatialDims {
  std::size_t n, c, h, w;
  bool batched;
};

template <typename T>
SpatialDims spatial_dims(const BasicTensor<T>& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  throw ShapeError(std::string(op) + " expects [c,h,w] or [n,c,h,w], got " +
                   shape_string(x.shape()));
}

struct ConvGeom {
  std::size_t ci, h, w, k, stride, pad, oh, ow;
};

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col, std::size_t ld,
            std::size_t offset) {
  const auto sh = static_cast<std::ptrdiff_t>(g.h);
  const auto sw = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* dst = col + ((c * g.k + ki) * g.k + kj) * ld + offset;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          T* row = dst + oy * g.ow;
          if (iy < 0 || iy >= sh) {
            std::fill(row, row + g.ow, T{0});
            continue;
          }
          const T* src = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          if (g.stride == 1) {
            // row[ox] = src[ox + kj - pad], zero outside the image
            const auto shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(g.pad);
            const auto ow = static_cast<std::ptrdiff_t>(g.ow);
            const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(-shift, 0, ow);
            const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(sw - shift, lo, ow);
            std::fill(row, row + lo, T{0});
            std::copy(src + lo + shift, src + hi + shift, row + lo);
            std::fill(row + hi, row + ow, T{0});
            continue;
          }
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            row[ox] = (ix < 0 || ix >= sw) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* img, std::size_t ld,
                std::size_t offset) {
  const auto sh = static_cast<std::ptrdiff_t>(g.h);
  const auto sw = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* src = col + ((c * g.k + ki) * g.k + kj) * ld + offset;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= sh) continue;
          T* dst = img + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* row = src + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < sw) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

int as_int(std::size_t v) { return static_cast<int>(v); }

[[maybe_unused]] const bool kBlasPinned = (blas::pin_single_thread(), true);

}  // namespace

void blas::pin_single_thread() { openblas_set_num_threads(1); }

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw InvalidArgument("unknown graph variable");
  return nodes_[v.id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw InvalidArgument("unknown graph variable");
  return nodes_[v.id];
}

template <typename T>
const BasicTensor<T>& Graph<T>::val(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.own;
}

template <typename T>
const BasicTensor<T>& Graph<T>::value(Var v) const {
  node(v);
  return val(v.id);
}

template <typename T>
bool Graph<T>::has_grad(Var v) const {
  return node(v).grad_ready;
}

template <typename T>
const BasicTensor<T>& Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad_ready) {
    throw StateError("no gradient available for graph variable " + std::to_string(v.id));
  }
  return n.grad;
}

template <typename T>
BasicTensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    n.grad = TensorT(val(id).shape(), T{0});
    n.grad_ready = true;
  }
  return n.grad;
}

template <typename T>
Var Graph<T>::push(TensorT value, bool requires_grad) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::leaf(TensorT value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

template <typename T>
Var Graph<T>::leaf_ref(const TensorT& value, bool requires_grad) {
  Node n;
  n.ref = &value;
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::conv2d(Var x, Var weight, std::size_t stride, std::size_t padding,
                     Var bias) {
  const TensorT& X = value(x);
  const TensorT& W = value(weight);
  const auto d = spatial_dims(X, "conv2d");
  if (W.rank() != 4 || W.dim(2) != W.dim(3)) {
    throw ShapeError("conv2d weight must be [c_out,c_in,k,k], got " + shape_string(W.shape()));
  }
  if (W.dim(1) != d.c) {
    throw ShapeError("conv2d input has " + std::to_string(d.c) +
                     " channels but weight expects " + std::to_string(W.dim(1)));
  }
  if (stride < 1) throw InvalidArgument("conv2d stride must be >= 1");
  const std::size_t co = W.dim(0);
  const std::size_t k = W.dim(2);
  if (k > d.h + 2 * padding || k > d.w + 2 * padding) {
    throw ShapeError("conv2d kernel larger than padded input");
  }
  if (bias.valid() && (value(bias).rank() != 1 || value(bias).dim(0) != co)) {
    throw ShapeError("conv2d bias must be [c_out]");
  }
  ConvGeom g{d.c, d.h, d.w, k, stride, padding,
             (d.h + 2 * padding - k) / stride + 1, (d.w + 2 * padding - k) / stride + 1};
  const std::size_t kdim = d.c * k * k;
  const std::size_t plane = g.oh * g.ow;
  const std::size_t cols = d.n * plane;

  Scratch<T> col(kdim * cols);
  for (std::size_t s = 0; s < d.n; ++s) {
    im2col(X.data().data() + s * d.c * d.h * d.w, g, col.data(), cols, s * plane);
  }

  Shape out_shape = d.batched ? Shape{d.n, co, g.oh, g.ow} : Shape{co, g.oh, g.ow};
  TensorT out(out_shape);
  Scratch<T> tmp(d.n > 1 ? co * cols : 0);
  T* dst = d.n > 1 ? tmp.data() : out.data().data();
  blas::gemm(false, false, as_int(co), as_int(cols), as_int(kdim), T{1},
             W.data().data(), as_int(kdim), col.data(), as_int(cols), T{0}, dst,
             as_int(cols));
  if (d.n > 1) {
    for (std::size_t s = 0; s < d.n; ++s) {
      for (std::size_t o = 0; o < co; ++o) {
        std::copy_n(tmp.data() + o * cols + s * plane, plane,
                    out.data().data() + (s * co + o) * plane);
      }
    }
  }
  if (bias.valid()) {
    const TensorT& B = value(bias);
    for (std::size_t s = 0; s < d.n; ++s) {
      for (std::size_t o = 0; o < co; ++o) {
        T* p = out.data().data() + (s * co + o) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += B[o];
      }
    }
  }

  const bool rg = needs(x) || needs(weight) || needs(bias);
  Var y = push(std::move(out), rg);
  if (!rg) return y;

  nodes_[y.id].backward = [this, x, weight, bias, y, g, d, co, kdim, plane, cols,
                           col = std::move(col)]() {
    const TensorT& G = nodes_[y.id].grad;
    Scratch<T> gather;
    const T* gt = G.data().data();
    if (d.n > 1) {
      gather.resize(co * cols);
      for (std::size_t s = 0; s < d.n; ++s) {
        for (std::size_t o = 0; o < co; ++o) {
          std::copy_n(G.data().data() + (s * co + o) * plane, plane,
                      gather.data() + o * cols + s * plane);
        }
      }
      gt = gather.data();
    }
    if (needs(weight)) {
      TensorT& dW = grad_buffer(weight.id);
      blas::gemm(false, true, as_int(co), as_int(kdim), as_int(cols), T{1}, gt,
                 as_int(cols), col.data(), as_int(cols), T{1}, dW.data().data(),
                 as_int(kdim));
    }
    if (needs(bias)) {
      TensorT& dB = grad_buffer(bias.id);
      for (std::size_t o = 0; o < co; ++o) {
        T acc{0};
        for (std::size_t i = 0; i < cols; ++i) acc += gt[o * cols + i];
        dB[o] += acc;
      }
    }
    if (needs(x)) {
      const TensorT& W = val(weight.id);
      Scratch<T> dcol(kdim * cols);
      blas::gemm(true, false, as_int(kdim), as_int(cols), as_int(co), T{1},
                 W.data().data(), as_int(kdim), gt, as_int(cols), T{0},
                 dcol.data(), as_int(cols));
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t s = 0; s < d.n; ++s) {
        col2im_add(dcol.data(), g, dX.data().data() + s * d.c * d.h * d.w, cols,
                   s * plane);
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::relu(Var x) {
  const TensorT& X = value(x);
  TensorT out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] > T{0} ? X[i] : T{0};
  const bool rg = needs(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y]() {
      const TensorT& X = val(x.id);
      const TensorT& G = nodes_[y.id].grad;
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < X.size(); ++i) {
        if (X[i] > T{0}) dX[i] += G[i];
      }
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::maxpool2d(Var x, std::size_t window) {
  const TensorT& X = value(x);
  const auto d = spatial_dims(X, "maxpool2d");
  if (window < 1 || d.h % window != 0 || d.w % window != 0) {
    throw ShapeError("maxpool2d window " + std::to_string(window) +
                     " does not divide input " + shape_string(X.shape()));
  }
  const std::size_t oh = d.h / window;
  const std::size_t ow = d.w / window;
  const std::size_t planes = d.n * d.c;
  Shape out_shape = d.batched ? Shape{d.n, d.c, oh, ow} : Shape{d.c, oh, ow};
  TensorT out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * d.h * d.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (oy * window) * d.w + ox * window;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * window + i) * d.w + ox * window + j;
            // strict comparison keeps the first occurrence on ties
            if (X[idx] > X[best]) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = X[best];
        argmax[o] = best;
      }
    }
  }
  const bool rg = needs(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y, argmax = std::move(argmax)]() {
      const TensorT& G = nodes_[y.id].grad;
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < argmax.size(); ++i) dX[argmax[i]] += G[i];
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::reshape(Var x, Shape shape) {
  const TensorT& X = value(x);
  const bool rg = needs(x);
  Var y = push(X.reshaped(std::move(shape)), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y]() {
      const TensorT& G = nodes_[y.id].grad;
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i];
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::flatten(Var x, std::size_t batch_dims) {
  const TensorT& X = value(x);
  if (batch_dims >= X.rank()) throw ShapeError("flatten: batch_dims >= rank");
  Shape s(X.shape().begin(), X.shape().begin() + static_cast<std::ptrdiff_t>(batch_dims));
  s.push_back(X.size() / shape_size(s));
  return reshape(x, std::move(s));
}

template <typename T>
Var Graph<T>::dense(Var x, Var weight, Var bias) {
  const TensorT& X = value(x);
  const TensorT& W = value(weight);
  if (W.rank() != 2) throw ShapeError("dense weight must be [out,in]");
  if (X.rank() != 1 && X.rank() != 2) throw ShapeError("dense input must be [in] or [n,in]");
  const bool batched = X.rank() == 2;
  const std::size_t n = batched ? X.dim(0) : 1;
  const std::size_t in = batched ? X.dim(1) : X.dim(0);
  const std::size_t out_dim = W.dim(0);
  if (W.dim(1) != in) {
    throw ShapeError("dense input width " + std::to_string(in) + " != weight " +
                     std::to_string(W.dim(1)));
  }
  if (bias.valid() && (value(bias).rank() != 1 || value(bias).dim(0) != out_dim)) {
    throw ShapeError("dense bias must be [out]");
  }
  TensorT out(batched ? Shape{n, out_dim} : Shape{out_dim});
  blas::gemm(false, true, as_int(n), as_int(out_dim), as_int(in), T{1},
             X.data().data(), as_int(in), W.data().data(), as_int(in), T{0},
             out.data().data(), as_int(out_dim));
  if (bias.valid()) {
    const TensorT& B = value(bias);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out_dim; ++o) out[s * out_dim + o] += B[o];
    }
  }
  const bool rg = needs(x) || needs(weight) || needs(bias);
  Var y = push(std::move(out), rg);
  if (!rg) return y;
  nodes_[y.id].backward = [this, x, weight, bias, y, n, in, out_dim]() {
    const TensorT& G = nodes_[y.id].grad;
    if (needs(x)) {
      TensorT& dX = grad_buffer(x.id);
      blas::gemm(false, false, as_int(n), as_int(in), as_int(out_dim), T{1},
                 G.data().data(), as_int(out_dim), val(weight.id).data().data(),
                 as_int(in), T{1}, dX.data().data(), as_int(in));
    }
    if (needs(weight)) {
      TensorT& dW = grad_buffer(weight.id);
      blas::gemm(true, false, as_int(out_dim), as_int(in), as_int(n), T{1},
                 G.data().data(), as_int(out_dim), val(x.id).data().data(),
                 as_int(in), T{1}, dW.data().data(), as_int(in));
    }
    if (needs(bias)) {
      TensorT& dB = grad_buffer(bias.id);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t o = 0; o < out_dim; ++o) dB[o] += G[s * out_dim + o];
      }
    }
  };
  return y;
}

template <typename T>
Var Graph<T>::energy(Var x, bool batched) {
  const TensorT& X = value(x);
  if (X.empty()) throw ShapeError("energy of empty features");
  if (batched && X.rank() < 2) throw ShapeError("batched energy needs a leading batch axis");
  const std::size_t n = batched ? X.dim(0) : 1;
  const std::size_t per = X.size() / n;
  TensorT out(batched ? Shape{n} : Shape{});
  for (std::size_t s = 0; s < n; ++s) {
    T acc{0};
    const T* p = X.data().data() + s * per;
    for (std::size_t i = 0; i < per; ++i) acc += std::abs(p[i]);
    out[s] = acc / static_cast<T>(per);
  }
  const bool rg = needs(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y, n, per]() {
      const TensorT& X = val(x.id);
      const TensorT& G = nodes_[y.id].grad;
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t s = 0; s < n; ++s) {
        const T g = G[s] / static_cast<T>(per);
        for (std::size_t i = s * per; i < (s + 1) * per; ++i) {
          if (X[i] > T{0}) {
            dX[i] += g;
          } else if (X[i] < T{0}) {
            dX[i] -= g;
          }
        }
      }
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::softmax_xent(Var logits, int label) {
  const TensorT& L = value(logits);
  if (L.rank() != 1) throw ShapeError("softmax_xent expects rank-1 logits");
  const int labels[1] = {label};
  return softmax_xent(reshape(logits, {1, L.dim(0)}), std::span<const int>(labels, 1));
}

template <typename T>
Var Graph<T>::softmax_xent(Var logits, std::span<const int> labels) {
  const TensorT& L = value(logits);
  if (L.rank() != 2) throw ShapeError("batched softmax_xent expects [n,k] logits");
  const std::size_t n = L.dim(0);
  const std::size_t k = L.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: labels/batch size mismatch");
  std::vector<T> probs(n * k);
  T total{0};
  for (std::size_t s = 0; s < n; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InvalidArgument("softmax_xent label " + std::to_string(label) +
                            " outside [0," + std::to_string(k) + ")");
    }
    const T* z = L.data().data() + s * k;
    const T zmax = *std::max_element(z, z + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
    const T log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[s * k + j] = std::exp(z[j] - zmax - log_denom);
    total += -(z[label] - zmax - log_denom);
  }
  const bool rg = needs(logits);
  Var y = push(TensorT::scalar(total / static_cast<T>(n)), rg);
  if (rg) {
    std::vector<int> labs(labels.begin(), labels.end());
    nodes_[y.id].backward = [this, logits, y, n, k, probs = std::move(probs),
                             labs = std::move(labs)]() {
      const T g = nodes_[y.id].grad[0] / static_cast<T>(n);
      TensorT& dL = grad_buffer(logits.id);
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = static_cast<int>(j) == labs[s] ? T{1} : T{0};
          dL[s * k + j] += g * (probs[s * k + j] - onehot);
        }
      }
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::mse(Var a, T target) {
  const TensorT& A = value(a);
  if (A.size() != 1) throw ShapeError("mse expects a scalar");
  const T diff = A[0] - target;
  const bool rg = needs(a);
  Var y = push(TensorT::scalar(diff * diff), rg);
  if (rg) {
    nodes_[y.id].backward = [this, a, y, diff]() {
      grad_buffer(a.id)[0] += nodes_[y.id].grad[0] * T{2} * diff;
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::mse(Var a, std::span<const T> targets) {
  const TensorT& A = value(a);
  if (A.size() != targets.size()) throw ShapeError("mse: value/target count mismatch");
  const std::size_t n = A.size();
  std::vector<T> diff(n);
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) {
    diff[i] = A[i] - targets[i];
    acc += diff[i] * diff[i];
  }
  const bool rg = needs(a);
  Var y = push(TensorT::scalar(acc / static_cast<T>(n)), rg);
  if (rg) {
    nodes_[y.id].backward = [this, a, y, n, diff = std::move(diff)]() {
      const T g = nodes_[y.id].grad[0] * T{2} / static_cast<T>(n);
      TensorT& dA = grad_buffer(a.id);
      for (std::size_t i = 0; i < n; ++i) dA[i] += g * diff[i];
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::sum(Var x) {
  const TensorT& X = value(x);
  T acc{0};
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i];
  const bool rg = needs(x);
  Var y = push(TensorT::scalar(acc), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y]() {
      const T g = nodes_[y.id].grad[0];
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += g;
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::dot(Var x, const TensorT& weights) {
  const TensorT& X = value(x);
  if (X.shape() != weights.shape()) {
    throw ShapeError("dot: " + shape_string(X.shape()) + " vs " + shape_string(weights.shape()));
  }
  T acc{0};
  for (std::size_t i = 0; i < X.size(); ++i) acc += X[i] * weights[i];
  const bool rg = needs(x);
  Var y = push(TensorT::scalar(acc), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y, weights]() {
      const T g = nodes_[y.id].grad[0];
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += g * weights[i];
    };
  }
  return y;
}

template <typename T>
Var Graph<T>::scale(Var x, T factor) {
  const TensorT& X = value(x);
  TensorT out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * factor;
  const bool rg = needs(x);
  Var y = push(std::move(out), rg);
  if (rg) {
    nodes_[y.id].backward = [this, x, y, factor]() {
      const TensorT& G = nodes_[y.id].grad;
      TensorT& dX = grad_buffer(x.id);
      for (std::size_t i = 0; i < G.size(); ++i) dX[i] += G[i] * factor;
    };
  }
  return y;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (consumed_) throw StateError("backward called on a consumed graph");
  if (value(loss).size() != 1) throw ShapeError("backward needs a scalar loss");
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad_ready && n.backward) n.backward();
  }
  for (std::size_t id = 0; id <= loss.id; ++id) {
    if (nodes_[id].requires_grad && !nodes_[id].backward) grad_buffer(id);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace lesdet
