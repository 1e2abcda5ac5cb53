#pragma once

// Null-space linear discriminant analysis and the recognition-rate-vs-dimension
// protocol built on it.
//
// Fitting works inside the span of the centered training data: the null space
// of the within-class scatter outside that span carries no between-class
// scatter either, so nothing discriminative is lost. This keeps every
// eigenproblem at most n x n for n training samples, independent of the feature
// dimension.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

using FeatureVector = std::vector<double>;

struct LabeledSet {
  std::vector<FeatureVector> x;
  std::vector<int> labels;

  void validate(const char* what) const {
    if (x.size() != labels.size())
      throw ShapeError(std::string(what) + ": " + std::to_string(x.size()) + " samples but " +
                       std::to_string(labels.size()) + " labels");
    for (const auto& v : x)
      if (v.size() != x.front().size()) throw ShapeError(std::string(what) + ": inconsistent feature dimension");
  }
};

struct NldaModel {
  FeatureVector mean;               // training mean
  std::vector<FeatureVector> axes;  // orthonormal discriminant directions, strongest first
  std::vector<double> strengths;    // between-class scatter along each axis

  std::size_t dims() const noexcept { return axes.size(); }

  // Coordinates along the first d axes.
  FeatureVector project(const FeatureVector& v, std::size_t d) const {
    if (v.size() != mean.size()) throw ShapeError("nlda project: feature dimension mismatch");
    d = std::min(d, axes.size());
    FeatureVector out(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) s += axes[k][i] * (v[i] - mean[i]);
      out[k] = s;
    }
    return out;
  }
};

namespace detail {

inline double dot(const FeatureVector& a, const FeatureVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline NldaModel nlda_fit(const LabeledSet& train) {
  train.validate("nlda_fit");
  const std::size_t n = train.x.size();
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[train.labels[i]].push_back(i);
  if (classes.size() < 2) throw ShapeError("nlda_fit: need at least 2 classes, got " + std::to_string(classes.size()));
  const std::size_t d = train.x.front().size();

  NldaModel model;
  model.mean.assign(d, 0.0);
  for (const auto& v : train.x)
    for (std::size_t i = 0; i < d; ++i) model.mean[i] += v[i] / static_cast<double>(n);
  std::vector<FeatureVector> centered(n, FeatureVector(d));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < d; ++i) centered[s][i] = train.x[s][i] - model.mean[i];

  // Orthonormal basis Q of the centered data span from the Gram matrix.
  TensorD gram({n, n});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) gram(a, b) = gram(b, a) = detail::dot(centered[a], centered[b]);
  const auto ge = eig_sym(gram);
  const double gtol = std::max(ge.values.front(), 0.0) * 1e-10;
  std::vector<FeatureVector> basis;
  for (std::size_t k = 0; k < n; ++k) {
    if (ge.values[k] <= gtol || ge.values[k] <= 0.0) break;
    FeatureVector q(d, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double w = ge.vectors(s, k);
      for (std::size_t i = 0; i < d; ++i) q[i] += w * centered[s][i];
    }
    const double norm = std::sqrt(detail::dot(q, q));
    for (auto& v : q) v /= norm;
    basis.push_back(std::move(q));
  }
  const std::size_t r = basis.size();
  if (r == 0) throw ShapeError("nlda_fit: training samples are all identical");

  // Training samples in basis coordinates.
  std::vector<FeatureVector> z(n, FeatureVector(r));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < r; ++k) z[s][k] = detail::dot(basis[k], centered[s]);

  std::map<int, FeatureVector> class_mean;
  for (const auto& [label, idx] : classes) {
    FeatureVector m(r, 0.0);
    for (auto s : idx)
      for (std::size_t k = 0; k < r; ++k) m[k] += z[s][k] / static_cast<double>(idx.size());
    class_mean[label] = std::move(m);
  }
  TensorD sw({r, r}), sb({r, r});
  double trace_st = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& m = class_mean[train.labels[s]];
    for (std::size_t a = 0; a < r; ++a) {
      trace_st += z[s][a] * z[s][a];
      for (std::size_t b = 0; b < r; ++b) sw(a, b) += (z[s][a] - m[a]) * (z[s][b] - m[b]);
    }
  }
  for (const auto& [label, idx] : classes) {
    const auto& m = class_mean[label];
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) sb(a, b) += static_cast<double>(idx.size()) * m[a] * m[b];
  }

  const auto we = eig_sym(sw);
  const double wtol = 1e-10 * std::max(trace_st, 1e-300);
  std::vector<std::size_t> null_cols;
  for (std::size_t k = 0; k < r; ++k)
    if (we.values[k] <= wtol) null_cols.push_back(k);
  if (null_cols.empty()) {
    throw ShapeError("nlda_fit: within-class scatter has no null space inside the data span (data rank " +
                     std::to_string(r) + ", within-class rank " + std::to_string(r) + ")");
  }
  const std::size_t m = null_cols.size();

  // Between-class scatter restricted to the null space.
  TensorD nb({m, m});
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j) s += we.vectors(i, null_cols[a]) * sb(i, j) * we.vectors(j, null_cols[b]);
      nb(a, b) = s;
    }
  const auto be = eig_sym(nb);
  for (std::size_t k = 0; k < m; ++k) {
    FeatureVector axis(d, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
      double coef = 0.0;
      for (std::size_t a = 0; a < m; ++a) coef += we.vectors(i, null_cols[a]) * be.vectors(a, k);
      for (std::size_t t = 0; t < d; ++t) axis[t] += coef * basis[i][t];
    }
    model.axes.push_back(std::move(axis));
    model.strengths.push_back(be.values[k]);
  }
  return model;
}

struct RecognitionCurve {
  std::vector<std::size_t> dims;   // requested dimensions
  std::vector<std::size_t> used;   // min(requested, available discriminants)
  std::vector<double> accuracy;
};

// For each d: project gallery and probes on the top-d discriminants and assign
// each probe the label of its nearest gallery sample (Euclidean). NLDA is fit
// on `train` when given, otherwise on the gallery alone; probes never enter the
// fit.
inline RecognitionCurve recognition_curve(const LabeledSet& probes, const LabeledSet& gallery,
                                          const std::vector<std::size_t>& dims, const LabeledSet* train = nullptr) {
  probes.validate("recognition_curve probes");
  gallery.validate("recognition_curve gallery");
  if (probes.x.empty() || gallery.x.empty()) throw ShapeError("recognition_curve: empty probe or gallery set");
  if (probes.x.front().size() != gallery.x.front().size())
    throw ShapeError("recognition_curve: probe and gallery feature dimensions differ");
  for (int label : probes.labels)
    if (std::find(gallery.labels.begin(), gallery.labels.end(), label) == gallery.labels.end())
      throw ShapeError("recognition_curve: probe label " + std::to_string(label) + " has no gallery entry");

  const NldaModel model = nlda_fit(train ? *train : gallery);
  const std::size_t full = model.dims();
  std::vector<FeatureVector> gp, pp;
  for (const auto& v : gallery.x) gp.push_back(model.project(v, full));
  for (const auto& v : probes.x) pp.push_back(model.project(v, full));

  RecognitionCurve curve;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("recognition_curve: dimension must be positive");
    const std::size_t u = std::min(d, full);
    std::size_t correct = 0;
    for (std::size_t p = 0; p < pp.size(); ++p) {
      double best = INFINITY;
      int label = 0;
      for (std::size_t g = 0; g < gp.size(); ++g) {
        double dist = 0.0;
        for (std::size_t k = 0; k < u; ++k) dist += (pp[p][k] - gp[g][k]) * (pp[p][k] - gp[g][k]);
        if (dist < best) {
          best = dist;
          label = gallery.labels[g];
        }
      }
      if (label == probes.labels[p]) ++correct;
    }
    curve.dims.push_back(d);
    curve.used.push_back(u);
    curve.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(pp.size()));
  }
  return curve;
}

// Flattens a C x H x W image into a feature vector.
inline FeatureVector image_features(const Tensor& img) { return FeatureVector(img.data().begin(), img.data().end()); }

}  // namespace sketchforge
