#pragma once

// Tape-based reverse-mode differentiation over the ops the training pipeline
// uses. Nodes are appended in evaluation order, so a reverse sweep over the
// tape is a valid topological order for backpropagation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/losses.hpp"
#include "sketchforge/parallel.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
};

// Named trainable tensors plus their Adam state. Parameters have stable
// addresses for the lifetime of the set.
template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other) {
    if (this == &other) return *this;
    params_.clear();
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
    step_ = other.step_;
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  Parameter<T>& add(std::string name, BasicTensor<T> value) {
    for (const auto& p : params_)
      if (p->name == name) throw ShapeError("duplicate parameter name " + name);
    const Shape shape = value.shape();
    params_.push_back(std::make_unique<Parameter<T>>(
        Parameter<T>{std::move(name), std::move(value), BasicTensor<T>(shape), BasicTensor<T>(shape), BasicTensor<T>(shape)}));
    return *params_.back();
  }

  Parameter<T>& get(std::string_view name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    throw ShapeError("unknown parameter " + std::string(name));
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data().begin(), p->grad.data().end(), T{0});
  }

  std::size_t& step() noexcept { return step_; }
  std::size_t step() const noexcept { return step_; }

  // Order-dependent checksum of all parameter values.
  double checksum() const {
    double s = 0.0;
    std::size_t i = 0;
    for (const auto& p : params_)
      for (T v : p->value.data()) s += static_cast<double>(v) * static_cast<double>(1 + (i++ % 97));
    return s;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::size_t step_ = 0;
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;
  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  double scalar() const;
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const BasicTensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, nullptr); }

  // Borrowed constant; the tensor must outlive the tape's use of it.
  Var<T> constant_ref(const BasicTensor<T>& value) {
    Node n;
    n.ref = &value;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> param(Parameter<T>& p) {
    Node n;
    n.ref = &p.value;
    n.needs_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  // Records an op result. backward receives d(loss)/d(output) and must
  // accumulate into its inputs via accumulate().
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }
  Var<T> record(BasicTensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owned(in);
      needs = needs || nodes_[in.id()].needs_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  // Scalar op results also keep their double-precision value so that losses
  // summed from many float terms are not rounded before they are compared.
  Var<T> record_scalar(double value, std::span<const Var<T>> inputs, Backward backward) {
    Var<T> v = record(BasicTensor<T>({1}, static_cast<T>(value)), inputs, std::move(backward));
    nodes_[v.id()].exact = value;
    return v;
  }
  Var<T> record_scalar(double value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record_scalar(value, std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  double scalar_value(const Var<T>& v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    if (n.exact) return *n.exact;
    const auto& t = value(v);
    if (t.size() != 1) throw ShapeError("scalar_value: not a scalar " + to_string(t.shape()));
    return static_cast<double>(t[0]);
  }

  const BasicTensor<T>& value(const Var<T>& v) const {
    check_owned(v);
    const Node& n = nodes_[v.id()];
    return n.ref ? *n.ref : n.value;
  }

  bool needs_grad(const Var<T>& v) const { return nodes_[v.id()].needs_grad; }

  // Adds g into the gradient slot of v (allocated on first use).
  void accumulate(const Var<T>& v, const BasicTensor<T>& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  // Backpropagates from a scalar loss, accumulating into Parameter::grad, then
  // clears the tape.
  void backward(const Var<T>& loss) {
    if (nodes_.empty()) throw Error("backward called on an empty tape (no forward recorded)");
    check_owned(loss);
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar, got " + to_string(loss.shape()));
    nodes_[loss.id()].grad = BasicTensor<T>(value(loss).shape(), T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.param) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
      } else if (n.backward) {
        BasicTensor<T> g = std::move(n.grad);
        n.backward(*this, g);
      }
    }
    clear();
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    const BasicTensor<T>* ref = nullptr;
    BasicTensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    std::optional<double> exact;
    bool needs_grad = false;
  };

  Var<T> push(BasicTensor<T> value, bool needs, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owned(const Var<T>& v) const {
    if (v.tape() != this || v.id() >= nodes_.size()) throw Error("variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
};

template <class T>
const BasicTensor<T>& Var<T>::value() const {
  if (!tape_) throw Error("uninitialized variable");
  return tape_->value(*this);
}

template <class T>
double Var<T>::scalar() const {
  if (!tape_) throw Error("uninitialized variable");
  return tape_->scalar_value(*this);
}

namespace ad {

template <class T>
void require_finite(const BasicTensor<T>& t, const std::string& where) {
  for (T v : t.data())
    if (!std::isfinite(v)) throw NumericError("non-finite activation in " + where);
}

// Convolution with zero padding and bias. Weight and bias may be parameters
// or constants.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  Tape<T>& tape = *x.tape();
  BasicTensor<T> out = sketchforge::conv2d(x.value(), w.value(), b.value(), stride, pad);
  return tape.record(std::move(out), {x, w, b}, [x, w, b, stride, pad](Tape<T>& t, const BasicTensor<T>& gy) {
    const BasicTensor<T>& wv = w.value();
    const BasicTensor<T> xp = pad2d(x.value(), pad);
    const std::size_t K = wv.dim(0), C = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
    const std::size_t Hp = xp.dim(1), Wp = xp.dim(2), Ho = gy.dim(1), Wo = gy.dim(2);
    if (t.needs_grad(b)) {
      BasicTensor<T> gb({K});
      for (std::size_t k = 0; k < K; ++k) {
        T s{0};
        for (std::size_t p = 0; p < Ho * Wo; ++p) s += gy[k * Ho * Wo + p];
        gb[k] = s;
      }
      t.accumulate(b, gb);
    }
    if (t.needs_grad(w)) {
      BasicTensor<T> gw(wv.shape());
      parallel_for(K, [&](std::size_t k) {
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t bb = 0; bb < kw; ++bb) {
              T s{0};
              for (std::size_t i = 0; i < Ho; ++i) {
                const T* g = &gy(k, i, 0);
                const T* in = &xp(c, i * stride + a, bb);
                if (stride == 1) {
                  for (std::size_t j = 0; j < Wo; ++j) s += g[j] * in[j];
                } else {
                  for (std::size_t j = 0; j < Wo; ++j) s += g[j] * in[j * stride];
                }
              }
              gw(k, c, a, bb) = s;
            }
      });
      t.accumulate(w, gw);
    }
    if (t.needs_grad(x)) {
      BasicTensor<T> gxp({C, Hp, Wp});
      parallel_for(C, [&](std::size_t c) {
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t bb = 0; bb < kw; ++bb) {
              const T wk = wv(k, c, a, bb);
              for (std::size_t i = 0; i < Ho; ++i) {
                const T* g = &gy(k, i, 0);
                T* dst = &gxp(c, i * stride + a, bb);
                if (stride == 1) {
                  for (std::size_t j = 0; j < Wo; ++j) dst[j] += wk * g[j];
                } else {
                  for (std::size_t j = 0; j < Wo; ++j) dst[j * stride] += wk * g[j];
                }
              }
            }
      });
      const std::size_t H = x.value().dim(1), W = x.value().dim(2);
      BasicTensor<T> gx({C, H, W});
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < H; ++i) std::copy_n(&gxp(c, i + pad, pad), W, &gx(c, i, 0));
      t.accumulate(x, gx);
    }
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  return x.tape()->record(sketchforge::relu(x.value()), {x}, [x](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx = gy;
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > T{0})) gx[i] = T{0};
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  BasicTensor<T> y = x.value();
  for (auto& v : y.data()) v = v > T{0} ? v : slope * v;
  return x.tape()->record(std::move(y), {x}, [x, slope](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx = gy;
    const auto xv = x.value().data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > T{0})) gx[i] *= slope;
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> max_pool2(Var<T> x) {
  const BasicTensor<T>& xv = x.value();
  BasicTensor<T> y = sketchforge::max_pool2(xv);
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2), Ho = y.dim(1), Wo = y.dim(2);
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        std::size_t best = (c * H + 2 * i) * W + 2 * j;
        for (std::size_t a = 2 * i; a < std::min(H, 2 * i + 2); ++a)
          for (std::size_t b = 2 * j; b < std::min(W, 2 * j + 2); ++b) {
            const std::size_t idx = (c * H + a) * W + b;
            if (xv[idx] > xv[best]) best = idx;
          }
        argmax[(c * Ho + i) * Wo + j] = best;
      }
  return x.tape()->record(std::move(y), {x}, [x, argmax = std::move(argmax)](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx(x.value().shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax[i]] += gy[i];
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  BasicTensor<T> y = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape<T>& t, const BasicTensor<T>& gy) {
    t.accumulate(a, gy);
    t.accumulate(b, gy);
  });
}

// Logistic squash onto (0, 1).
template <class T>
Var<T> sigmoid(Var<T> x) {
  BasicTensor<T> y = x.value();
  for (auto& v : y.data()) v = T{1} / (T{1} + std::exp(-v));
  BasicTensor<T> saved = y;
  return x.tape()->record(std::move(y), {x}, [x, saved = std::move(saved)](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= saved[i] * (T{1} - saved[i]);
    t.accumulate(x, gx);
  });
}

// 1 x H x W -> 3 x H x W by channel replication; 3-channel input passes through.
template <class T>
Var<T> to_rgb(Var<T> x) {
  const auto& xv = x.value();
  if (xv.dim(0) == 3) return x;
  if (xv.dim(0) != 1) throw ShapeError("to_rgb: need 1 or 3 channels");
  const std::size_t plane = xv.dim(1) * xv.dim(2);
  BasicTensor<T> y({3, xv.dim(1), xv.dim(2)});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(xv.data().begin(), plane, y.data().begin() + c * plane);
  return x.tape()->record(std::move(y), {x}, [x, plane](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx(x.value().shape());
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) gx[p] += gy[c * plane + p];
    t.accumulate(x, gx);
  });
}

// Per-channel (x - mean) / std with constant statistics.
template <class T>
Var<T> normalize_channels(Var<T> x, std::vector<float> mean, std::vector<float> stddev) {
  BasicTensor<T> y = x.value();
  const std::size_t C = y.dim(0), plane = y.dim(1) * y.dim(2);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < plane; ++p) y[c * plane + p] = (y[c * plane + p] - mean[c]) / stddev[c];
  return x.tape()->record(std::move(y), {x}, [x, C, plane, stddev](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> gx = gy;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) gx[c * plane + p] /= stddev[c];
    t.accumulate(x, gx);
  });
}

template <class T>
BasicTensor<T> scalar(double v) {
  return BasicTensor<T>({1}, T(v));
}

// Sum over patches of ||patch_j(fm) - target_j||^2, target being an
// m x C x k x k constant.
template <class T>
Var<T> pseudo_feature_loss(Var<T> fm, const Tensor& target, std::size_t k) {
  const BasicTensor<T>& f = fm.value();
  const PatchGrid grid = PatchGrid::for_map(f.dim(1), f.dim(2), k);
  if (target.rank() != 4 || target.dim(0) != grid.count() || target.dim(1) != f.dim(0) || target.dim(2) != k) {
    throw ShapeError("pseudo_feature_loss: target " + to_string(target.shape()) + " does not fit feature map " +
                     to_string(f.shape()));
  }
  const std::size_t C = f.dim(0);
  double total = 0.0;
  for (std::size_t j = 0; j < grid.count(); ++j) {
    auto [r0, c0] = grid.origin(j);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const double d = static_cast<double>(f(c, r0 + a, c0 + b)) - target(j, c, a, b);
          total += d * d;
        }
  }
  return fm.tape()->record_scalar(total, {fm}, [fm, target, grid, k, C](Tape<T>& t, const BasicTensor<T>& gy) {
    const BasicTensor<T>& f = fm.value();
    BasicTensor<T> gx(f.shape());
    const T g = gy[0];
    for (std::size_t j = 0; j < grid.count(); ++j) {
      auto [r0, c0] = grid.origin(j);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b)
            gx(c, r0 + a, c0 + b) += T{2} * g * (f(c, r0 + a, c0 + b) - static_cast<T>(target(j, c, a, b)));
    }
    t.accumulate(fm, gx);
  });
}

template <class T>
Var<T> tv_loss(Var<T> x) {
  const BasicTensor<T>& xv = x.value();
  return x.tape()->record_scalar(sketchforge::tv_loss(xv), {x}, [x](Tape<T>& t, const BasicTensor<T>& gy) {
    const BasicTensor<T>& v = x.value();
    BasicTensor<T> gx(v.shape());
    const T g = gy[0];
    for (std::size_t c = 0; c < v.dim(0); ++c)
      for (std::size_t u = 0; u < v.dim(1); ++u)
        for (std::size_t w = 0; w < v.dim(2); ++w) {
          if (u + 1 < v.dim(1)) {
            const T d = T{2} * g * (v(c, u + 1, w) - v(c, u, w));
            gx(c, u + 1, w) += d;
            gx(c, u, w) -= d;
          }
          if (w + 1 < v.dim(2)) {
            const T d = T{2} * g * (v(c, u, w + 1) - v(c, u, w));
            gx(c, u, w + 1) += d;
            gx(c, u, w) -= d;
          }
        }
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> weighted_sum(const std::vector<std::pair<double, Var<T>>>& terms);

namespace detail {

// coeff * mean over all cells of (s - target)^2, as a recorded scalar.
template <class T>
Var<T> scaled_mse(const std::vector<Var<T>>& scores, double target, double coeff) {
  if (scores.empty()) throw ShapeError("lsgan loss: empty score set");
  std::size_t n = 0;
  double sum = 0.0;
  for (const auto& s : scores) {
    for (T v : s.value().data()) sum += (v - target) * (v - target);
    n += s.value().size();
  }
  const double scale = coeff / static_cast<double>(n);
  return scores.front().tape()->record_scalar(
      scale * sum, std::span<const Var<T>>(scores), [scores, target, scale](Tape<T>& t, const BasicTensor<T>& gy) {
        for (const auto& s : scores) {
          BasicTensor<T> g = s.value();
          for (auto& v : g.data()) v = static_cast<T>(2.0 * scale * (v - target)) * gy[0];
          t.accumulate(s, g);
        }
      });
}

}  // namespace detail

template <class T>
Var<T> lsgan_g_loss(const std::vector<Var<T>>& fake) {
  return detail::scaled_mse(fake, 1.0, 1.0);
}

template <class T>
Var<T> lsgan_d_loss(const std::vector<Var<T>>& real, const std::vector<Var<T>>& fake) {
  Var<T> r = detail::scaled_mse(real, 1.0, 0.5);
  Var<T> f = detail::scaled_mse(fake, 0.0, 0.5);
  return weighted_sum<T>({{1.0, r}, {1.0, f}});
}

// sum_i coeff_i * term_i over scalar terms.
template <class T>
Var<T> weighted_sum(const std::vector<std::pair<double, Var<T>>>& terms) {
  if (terms.empty()) throw ShapeError("weighted_sum: no terms");
  double total = 0.0;
  std::vector<Var<T>> vars;
  std::vector<double> coeffs;
  for (const auto& [c, v] : terms) {
    if (v.value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += c * v.scalar();
    vars.push_back(v);
    coeffs.push_back(c);
  }
  return vars.front().tape()->record_scalar(total, std::span<const Var<T>>(vars),
                                     [vars, coeffs](Tape<T>& t, const BasicTensor<T>& gy) {
                                       for (std::size_t i = 0; i < vars.size(); ++i)
                                         t.accumulate(vars[i], scalar<T>(coeffs[i] * gy[0]));
                                     });
}

template <class T>
Var<T> sum_squares(Var<T> x) {
  double s = 0.0;
  for (T v : x.value().data()) s += static_cast<double>(v) * v;
  return x.tape()->record_scalar(s, {x}, [x](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> g = x.value();
    for (auto& v : g.data()) v *= T{2} * gy[0];
    t.accumulate(x, g);
  });
}

// sum_i x_i * w_i with constant weights; projects a tensor-valued op onto a
// scalar for gradient checking.
template <class T>
Var<T> dot(Var<T> x, BasicTensor<T> w) {
  if (x.shape() != w.shape()) throw ShapeError("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(x.value()[i]) * w[i];
  return x.tape()->record_scalar(s, {x}, [x, w = std::move(w)](Tape<T>& t, const BasicTensor<T>& gy) {
    BasicTensor<T> g = w;
    for (auto& v : g.data()) v *= gy[0];
    t.accumulate(x, g);
  });
}

}  // namespace ad

// Extractor weights in tape precision.
template <class T>
struct ExtractorWeights {
  ExtractorSpec spec;
  std::vector<BasicTensor<T>> kernels;
  std::vector<BasicTensor<T>> biases;
  std::optional<Normalization> norm;

  static ExtractorWeights from(const Extractor& e) {
    ExtractorWeights w{e.spec(), {}, {}, e.normalization()};
    for (const auto& c : e.convs()) {
      w.kernels.push_back(c.kernel.template cast<T>());
      w.biases.push_back(c.bias.template cast<T>());
    }
    return w;
  }
};

// Differentiable feature extraction: the same layer sequence as extract(), with
// the extractor weights held constant.
template <class T>
std::map<int, Var<T>> tape_features(Tape<T>& tape, const ExtractorWeights<T>& weights, Var<T> image,
                                    const std::set<int>& taps) {
  const auto& spec = weights.spec;
  std::size_t last = 0;
  for (int t : taps) {
    auto it = spec.taps.find(t);
    if (it == spec.taps.end()) throw ShapeError("tape_features: unknown tap " + std::to_string(t));
    last = std::max(last, it->second);
  }
  std::map<int, Var<T>> out;
  if (taps.empty()) return out;
  Var<T> x = ad::to_rgb(image);
  if (weights.norm) x = ad::normalize_channels(x, weights.norm->mean, weights.norm->stddev);
  std::size_t conv = 0;
  for (std::size_t i = 0; i <= last; ++i) {
    switch (spec.layers[i].kind) {
      case LayerKind::Conv3x3:
        x = ad::conv2d(x, tape.constant_ref(weights.kernels[conv]), tape.constant_ref(weights.biases[conv]), 1, 1);
        ++conv;
        break;
      case LayerKind::Relu:
        x = ad::relu(x);
        break;
      case LayerKind::MaxPool2:
        x = ad::max_pool2(x);
        break;
    }
    for (int t : taps)
      if (spec.taps.at(t) == i) out.emplace(t, x);
  }
  return out;
}

}  // namespace sketchforge
