#pragma once

// Finite-difference verification of the reverse-mode gradients.
//
// Each component builds a scalar objective over a few leaf tensors. The
// analytic gradient is taken in the precision under test; the numerical one is
// a central difference of the same objective re-evaluated in double precision
// with the step size of the precision under test. Coordinates whose stencil
// straddles a non-differentiable point (relu kink, pooling tie) are detected
// from the difference quotients at steps h and h/2; they are retried at
// smaller h and reported as skipped only if no smooth step is found.
//
// Error metric: |analytic - numeric| / max(1, |analytic|, |numeric|).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sketchforge/autodiff.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/losses.hpp"
#include "sketchforge/nets.hpp"
#include "sketchforge/rng.hpp"
#include "sketchforge/train.hpp"

namespace sketchforge {

struct GradCheckReport {
  std::string component;
  bool double_precision = false;
  std::size_t trials = 0;
  std::size_t checked = 0;  // coordinates compared
  std::size_t refined = 0;  // compared at a reduced step after a kink was detected
  std::size_t skipped = 0;  // coordinates at non-differentiable points
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const noexcept { return checked > 0 && max_rel_error <= tolerance; }
};

inline const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names{
      "conv2d",       "relu",  "leaky_relu",   "max_pool2", "residual_add", "squash",    "pseudo_feature_loss",
      "lsgan_g",      "lsgan_d", "tv_loss",    "generator", "discriminator", "pipeline"};
  return names;
}

template <class T>
constexpr double gradcheck_step() {
  return sizeof(T) == sizeof(float) ? 1e-3 : 1e-5;
}

template <class T>
constexpr double gradcheck_tolerance() {
  return sizeof(T) == sizeof(float) ? 1e-3 : 1e-6;
}

namespace detail {

template <class U>
struct GradProblem {
  ParamSet<U> leaves;
  std::function<Var<U>(Tape<U>&, ParamSet<U>&)> objective;
};

// All random draws are rounded to float so that the float and double
// instances of a problem hold identical values.
inline float draw(Rng& rng, double lo, double hi) { return static_cast<float>(rng.uniform(lo, hi)); }

template <class U>
BasicTensor<U> draw_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  BasicTensor<U> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<U>(draw(rng, lo, hi));
  return t;
}

// Values bounded away from zero so that relu-type kinks stay out of reach.
template <class U>
BasicTensor<U> draw_off_kink(Rng& rng, Shape shape) {
  BasicTensor<U> t(std::move(shape));
  for (auto& v : t.data()) {
    const float mag = draw(rng, 0.05, 1.0);
    v = static_cast<U>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

// Distinct values at least 1/(2n) apart, so pooling windows have clear maxima.
template <class U>
BasicTensor<U> draw_distinct(Rng& rng, Shape shape) {
  BasicTensor<U> t(std::move(shape));
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<U>(static_cast<float>(perm[i]) / static_cast<float>(t.size()) - 0.5f);
  return t;
}

template <class U>
void round_through_float(ParamSet<U>& params) {
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto& v : params[i].value.data()) v = static_cast<U>(static_cast<float>(v));
}

inline std::vector<int> pipeline_layers(std::size_t extent, std::size_t k) {
  std::vector<int> layers;
  for (int l = 1; l <= 5; ++l) {
    const std::size_t f = std::size_t{1} << (l - 1);
    if ((extent + f - 1) / f >= k) layers.push_back(l);
  }
  return layers;
}

template <class U>
GradProblem<U> build_problem(const std::string& component, std::uint64_t seed, std::size_t extent) {
  Rng rng(seed);
  const std::size_t E = std::max<std::size_t>(extent, 3);
  GradProblem<U> p;
  auto projection = [&](const Shape& s) { return draw_tensor<U>(rng, s); };

  if (component == "conv2d") {
    const std::size_t stride = 1 + rng.index(2);
    p.leaves.add("x", draw_tensor<U>(rng, {2, E, E}));
    p.leaves.add("w", draw_tensor<U>(rng, {3, 2, 3, 3}));
    p.leaves.add("b", draw_tensor<U>(rng, {3}));
    const std::size_t Eo = (E + 2 - 3) / stride + 1;
    auto r = projection({3, Eo, Eo});
    p.objective = [r, stride](Tape<U>& t, ParamSet<U>& ps) {
      return ad::dot(ad::conv2d(t.param(ps.get("x")), t.param(ps.get("w")), t.param(ps.get("b")), stride, 1), r);
    };
  } else if (component == "relu" || component == "leaky_relu" || component == "squash") {
    p.leaves.add("x", component == "squash" ? draw_tensor<U>(rng, {1, E, E}, -3, 3) : draw_off_kink<U>(rng, {1, E, E}));
    auto r = projection({1, E, E});
    p.objective = [r, component](Tape<U>& t, ParamSet<U>& ps) {
      Var<U> x = t.param(ps.get("x"));
      Var<U> y = component == "relu" ? ad::relu(x) : component == "leaky_relu" ? ad::leaky_relu(x, U(0.2)) : ad::sigmoid(x);
      return ad::dot(y, r);
    };
  } else if (component == "max_pool2") {
    const std::size_t H = E - (E % 2 == 0 ? 1 : 0);  // odd extent exercises truncated windows
    p.leaves.add("x", draw_distinct<U>(rng, {2, H, E}));
    auto r = projection({2, (H + 1) / 2, (E + 1) / 2});
    p.objective = [r](Tape<U>& t, ParamSet<U>& ps) { return ad::dot(ad::max_pool2(t.param(ps.get("x"))), r); };
  } else if (component == "residual_add") {
    // h + conv(relu(conv(h))), the generator's residual block.
    p.leaves.add("h", draw_tensor<U>(rng, {2, E, E}));
    p.leaves.add("w0", draw_tensor<U>(rng, {2, 2, 3, 3}));
    p.leaves.add("w1", draw_tensor<U>(rng, {2, 2, 3, 3}));
    p.leaves.add("b", draw_tensor<U>(rng, {2}));
    auto r = projection({2, E, E});
    p.objective = [r](Tape<U>& t, ParamSet<U>& ps) {
      Var<U> h = t.param(ps.get("h"));
      Var<U> b = t.param(ps.get("b"));
      Var<U> branch = ad::conv2d(ad::relu(ad::conv2d(h, t.param(ps.get("w0")), b, 1, 1)), t.param(ps.get("w1")), b, 1, 1);
      return ad::dot(ad::add(h, branch), r);
    };
  } else if (component == "pseudo_feature_loss") {
    p.leaves.add("fm", draw_tensor<U>(rng, {3, E, E}));
    const auto grid = PatchGrid::for_map(E, E, 3);
    Tensor target = draw_tensor<float>(rng, {grid.count(), 3, 3, 3});
    p.objective = [target](Tape<U>& t, ParamSet<U>& ps) {
      return ad::pseudo_feature_loss(t.param(ps.get("fm")), target, 3);
    };
  } else if (component == "lsgan_g" || component == "lsgan_d") {
    p.leaves.add("real0", draw_tensor<U>(rng, {1, E / 2, E / 2}, -0.5, 1.5));
    p.leaves.add("real1", draw_tensor<U>(rng, {1, E / 2, E / 2}, -0.5, 1.5));
    p.leaves.add("fake0", draw_tensor<U>(rng, {1, E / 2, E / 2}, -0.5, 1.5));
    p.leaves.add("fake1", draw_tensor<U>(rng, {1, E / 2, E / 2}, -0.5, 1.5));
    const bool gen = component == "lsgan_g";
    p.objective = [gen](Tape<U>& t, ParamSet<U>& ps) {
      std::vector<Var<U>> fake{t.param(ps.get("fake0")), t.param(ps.get("fake1"))};
      if (gen) return ad::lsgan_g_loss(fake);
      std::vector<Var<U>> real{t.param(ps.get("real0")), t.param(ps.get("real1"))};
      return ad::lsgan_d_loss(real, fake);
    };
  } else if (component == "tv_loss") {
    p.leaves.add("x", draw_tensor<U>(rng, {1, E, E}, 0, 1));
    p.objective = [](Tape<U>& t, ParamSet<U>& ps) { return ad::tv_loss(t.param(ps.get("x"))); };
  } else if (component == "generator" || component == "discriminator") {
    const bool gen = component == "generator";
    auto input = draw_tensor<U>(rng, {gen ? std::size_t{3} : std::size_t{1}, E, E}, 0, 1);
    const std::uint64_t net_seed = rng.next();
    const GeneratorConfig gc{3, 1};
    const DiscriminatorConfig dc{3, 2};
    BasicTensor<U> r;
    if (gen) {
      p.leaves = Generator<U>(gc, net_seed).params();
      r = projection({1, E, E});
    } else {
      p.leaves = Discriminator<U>(dc, net_seed).params();
      Tape<U> probe;
      r = projection(discriminator_forward(probe, p.leaves, dc, probe.constant(input), true).shape());
    }
    round_through_float(p.leaves);
    p.objective = [input, r, gen, gc, dc](Tape<U>& t, ParamSet<U>& ps) {
      Var<U> x = t.constant(input);
      if (gen) return ad::dot(generator_forward(t, ps, gc, x), r);
      return ad::dot(discriminator_forward(t, ps, dc, x, false), r);
    };
  } else if (component == "pipeline") {
    // Full L_G: generator -> frozen extractor -> pseudo feature loss, plus the
    // frozen discriminator's LSGAN term and total variation, over a batch of 2.
    const std::size_t S = std::max<std::size_t>(E, 6);
    const std::vector<int> layers = pipeline_layers(S, 3);
    auto extractor = std::make_shared<ExtractorWeights<U>>(
        ExtractorWeights<U>::from(Extractor::random(ExtractorSpec::vgg19({3, 4, 4, 4, 4}), rng.next())));
    const GeneratorConfig gc{3, 1};
    p.leaves = Generator<U>(gc, rng.next()).params();
    round_through_float(p.leaves);
    auto disc = std::make_shared<Discriminator<U>>(DiscriminatorConfig{3, 2}, rng.next());
    round_through_float(disc->params());
    std::vector<BasicTensor<U>> photos{draw_tensor<U>(rng, {3, S, S}, 0, 1), draw_tensor<U>(rng, {3, S, S}, 0, 1)};
    auto pseudo = std::make_shared<std::vector<PseudoFeatures>>(2);
    for (auto& pf : *pseudo) {
      std::size_t extent_l = S;
      for (int l = 1; l <= 5; ++l) {
        const std::size_t C = extractor->spec.taps.count(l) ? extractor->spec.layers[extractor->spec.taps.at(l)].out_channels : 0;
        if (std::find(layers.begin(), layers.end(), l) != layers.end()) {
          const auto grid = PatchGrid::for_map(extent_l, extent_l, 3, l);
          pf[l] = PseudoSketchFeature{l, grid, draw_tensor<float>(rng, {grid.count(), C, 3, 3}, 0, 1), {}};
        }
        extent_l = (extent_l + 1) / 2;
      }
    }
    LossWeights w;
    w.layers = layers;
    w.lambda_tv = 1e-2;
    p.objective = [photos, pseudo, extractor, disc, w, gc](Tape<U>& t, ParamSet<U>& ps) {
      std::vector<Var<U>> sketches;
      for (const auto& ph : photos) sketches.push_back(generator_forward(t, ps, gc, t.constant(ph)));
      std::vector<const PseudoFeatures*> targets{&(*pseudo)[0], &(*pseudo)[1]};
      return generator_loss(t, sketches, targets, *disc, *extractor, w, 3).total;
    };
  } else {
    throw Error("gradient_check: unknown component '" + component + "'");
  }
  return p;
}

}  // namespace detail

// Runs the check for one component over `trials` random instances of spatial
// extent `extent`.
template <class T>
GradCheckReport gradient_check(const std::string& component, std::size_t trials, std::size_t extent = 6,
                               std::uint64_t seed = 7) {
  const auto& names = gradcheck_components();
  if (std::find(names.begin(), names.end(), component) == names.end()) {
    throw Error("gradient_check: unknown component '" + component + "'");
  }
  GradCheckReport report{component, sizeof(T) == sizeof(double), trials, 0, 0, 0, 0.0, gradcheck_tolerance<T>()};
  const double eps = gradcheck_step<T>();
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::uint64_t s = seed * 1000003ULL + trial;
    auto analytic = detail::build_problem<T>(component, s, extent);
    {
      Tape<T> tape;
      Var<T> loss = analytic.objective(tape, analytic.leaves);
      analytic.leaves.zero_grad();
      tape.backward(loss);
    }
    auto reference = detail::build_problem<double>(component, s, extent);
    auto eval = [&]() {
      Tape<double> tape;
      return reference.objective(tape, reference.leaves).scalar();
    };
    const double f0 = eval();
    for (std::size_t li = 0; li < reference.leaves.size(); ++li) {
      auto& leaf = reference.leaves[li];
      for (std::size_t e = 0; e < leaf.value.size(); ++e) {
        const double x0 = leaf.value[e];
        auto at = [&](double dx) {
          leaf.value[e] = x0 + dx;
          const double f = eval();
          leaf.value[e] = x0;
          return f;
        };
        // A stencil that straddles a kink is retried with smaller steps; the
        // double-precision reference keeps those quotients accurate.
        double numeric = 0.0;
        bool smooth = false;
        for (int refine = 0; refine < 4 && !smooth; ++refine) {
          const double h = eps * std::pow(0.1, refine);
          const double fp = at(h), fm = at(-h), fph = at(h / 2), fmh = at(-h / 2);
          const double n1 = (fp - fm) / (2 * h), n2 = (fph - fmh) / h;
          const double d1 = (fp - f0) / h - (f0 - fm) / h;
          const double d2 = (fph - f0) / (h / 2) - (f0 - fmh) / (h / 2);
          const double kink_tol = report.tolerance * std::max({1.0, std::abs(n1), std::abs(n2)}) / 4;
          smooth = std::abs(n1 - n2) <= kink_tol && std::abs(d1 - 2 * d2) <= kink_tol;
          numeric = n1;
          if (smooth && refine > 0) ++report.refined;
        }
        if (!smooth) {
          ++report.skipped;
          continue;
        }
        const double a = analytic.leaves[li].grad[e];
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        report.max_rel_error = std::max(report.max_rel_error, err);
        ++report.checked;
      }
    }
  }
  return report;
}

}  // namespace sketchforge
