#pragma once

// Residual generator and patch discriminator.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sketchforge/autodiff.hpp"
#include "sketchforge/rng.hpp"

namespace sketchforge {

struct GeneratorConfig {
  std::size_t features = 32;
  std::size_t blocks = 4;
};

struct DiscriminatorConfig {
  std::size_t features = 32;
  std::size_t strided_layers = 4;  // followed by one stride-1 scoring conv
};

namespace detail {

template <class T>
void add_conv(ParamSet<T>& params, Rng& rng, const std::string& name, std::size_t in, std::size_t out,
              double gain) {
  BasicTensor<T> w({out, in, 3, 3});
  const double std = std::sqrt(gain / static_cast<double>(in * 9));
  for (auto& v : w.data()) v = static_cast<T>(rng.normal() * std);
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", BasicTensor<T>({out}));
}

// frozen: weights enter the tape as constants and receive no gradient.
template <class T>
Var<T> conv(Tape<T>& tape, ParamSet<T>& params, const std::string& name, Var<T> x, std::size_t stride = 1,
            bool frozen = false) {
  auto& w = params.get(name + ".w");
  auto& b = params.get(name + ".b");
  Var<T> y = frozen ? ad::conv2d(x, tape.constant_ref(w.value), tape.constant_ref(b.value), stride, 1)
                    : ad::conv2d(x, tape.param(w), tape.param(b), stride, 1);
  ad::require_finite(y.value(), name);
  return y;
}

}  // namespace detail

// Forward passes over an explicit parameter set, shared by the network classes
// and by the gradient checker.
template <class T>
Var<T> generator_forward(Tape<T>& tape, ParamSet<T>& params, const GeneratorConfig& config, Var<T> photo) {
  Var<T> x = ad::to_rgb(photo);
  Var<T> stem = ad::relu(detail::conv(tape, params, "g.stem", x));
  Var<T> h = stem;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::string p = "g.block" + std::to_string(b);
    Var<T> r = ad::relu(detail::conv(tape, params, p + ".conv0", h));
    r = detail::conv(tape, params, p + ".conv1", r);
    h = ad::add(h, r);
  }
  if (config.blocks > 0) h = ad::add(h, stem);
  return ad::sigmoid(detail::conv(tape, params, "g.head", h));
}

template <class T>
Var<T> discriminator_forward(Tape<T>& tape, ParamSet<T>& params, const DiscriminatorConfig& config, Var<T> sketch,
                             bool frozen) {
  Var<T> x = sketch;
  for (std::size_t i = 0; i < config.strided_layers; ++i) {
    x = ad::leaky_relu(detail::conv(tape, params, "d.conv" + std::to_string(i), x, 2, frozen), T(0.2));
  }
  return detail::conv(tape, params, "d.score", x, 1, frozen);
}

// stem conv (3->F) + relu, B residual blocks (conv, relu, conv, identity skip),
// a long skip from the stem output around all blocks, then a 1-channel head
// conv squashed onto (0, 1) by a logistic.
template <class T>
class Generator {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed) : config_(config) {
    Rng rng(seed);
    const std::size_t F = config.features;
    detail::add_conv(params_, rng, "g.stem", 3, F, 2.0);
    for (std::size_t b = 0; b < config.blocks; ++b) {
      detail::add_conv(params_, rng, "g.block" + std::to_string(b) + ".conv0", F, F, 2.0);
      // Small second conv keeps each residual branch close to identity at init.
      detail::add_conv(params_, rng, "g.block" + std::to_string(b) + ".conv1", F, F, 0.1);
    }
    detail::add_conv(params_, rng, "g.head", F, 1, 1.0);
  }

  Var<T> forward(Tape<T>& tape, Var<T> photo) { return generator_forward(tape, params_, config_, photo); }

  BasicTensor<T> forward(const BasicTensor<T>& photo) {
    Tape<T> tape;
    return forward(tape, tape.constant(photo)).value();
  }

  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  const GeneratorConfig& config() const noexcept { return config_; }

 private:
  GeneratorConfig config_;
  ParamSet<T> params_;
};

// Strided 3x3 convs with leaky relu (slope 0.2) ending in a raw 1-channel
// score map.
template <class T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig config, std::uint64_t seed) : config_(config) {
    Rng rng(seed);
    std::size_t in = 1, width = config.features;
    for (std::size_t i = 0; i < config.strided_layers; ++i) {
      detail::add_conv(params_, rng, "d.conv" + std::to_string(i), in, width, 2.0);
      in = width;
      width *= 2;
    }
    detail::add_conv(params_, rng, "d.score", in, 1, 1.0);
  }

  Var<T> forward(Tape<T>& tape, Var<T> sketch, bool frozen = false) {
    return discriminator_forward(tape, params_, config_, sketch, frozen);
  }

  BasicTensor<T> forward(const BasicTensor<T>& sketch) {
    Tape<T> tape;
    return forward(tape, tape.constant(sketch)).value();
  }

  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  const DiscriminatorConfig& config() const noexcept { return config_; }

 private:
  DiscriminatorConfig config_;
  ParamSet<T> params_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of every parameter from its grad slot.
template <class T>
void adam_step(ParamSet<T>& params, double lr, const AdamOptions& opt = {}) {
  const std::size_t t = ++params.step();
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const double g = p.grad[e];
      const double m = opt.beta1 * p.adam_m[e] + (1.0 - opt.beta1) * g;
      const double v = opt.beta2 * p.adam_v[e] + (1.0 - opt.beta2) * g * g;
      p.adam_m[e] = static_cast<T>(m);
      p.adam_v[e] = static_cast<T>(v);
      p.value[e] = static_cast<T>(p.value[e] - lr * (m / c1) / (std::sqrt(v / c2) + opt.eps));
    }
  }
}

}  // namespace sketchforge
