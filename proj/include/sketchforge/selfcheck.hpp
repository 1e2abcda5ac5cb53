#pragma once

// Runtime self-verification: gradient checks for every differentiable
// component, the correlation matcher against a brute-force cosine search, and
// the patch-count formula.

#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sketchforge/gradcheck.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/rng.hpp"

namespace sketchforge {

struct SelfCheckItem {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline PatchMatch brute_force_best(const Tensor& q, std::size_t qr, std::size_t qc, const ReferenceStore& store,
                                   int layer) {
  const std::size_t k = store.k, C = q.dim(0);
  PatchMatch best{0, 0, -2.0};
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& ref = store.photo_map(i, layer);
    const auto grid = PatchGrid::for_map(ref.dim(1), ref.dim(2), k);
    for (std::size_t p = 0; p < grid.count(); ++p) {
      auto [rr, rc] = grid.origin(p);
      double dot = 0, nq = 0, nr = 0;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const double x = q(c, qr + a, qc + b), y = ref(c, rr + a, rc + b);
            dot += x * y;
            nq += x * x;
            nr += y * y;
          }
      const double s = (nq == 0 || nr == 0) ? 0.0 : dot / std::sqrt(nq * nr);
      if (s > best.score) best = {i, p, s};
    }
  }
  return best;
}

inline Tensor random_map(Rng& rng, std::size_t C, std::size_t H, std::size_t W) {
  Tensor t({C, H, W});
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

}  // namespace detail

// Random instances with C <= 4, H, W <= 10, N <= 3 and k = 3. Returns the
// number of disagreeing patches; max score error goes to *max_err.
inline std::size_t matcher_oracle_mismatches(std::size_t instances, std::uint64_t seed, double* max_err = nullptr) {
  Rng rng(seed);
  std::size_t bad = 0;
  double worst = 0.0;
  const int layer = 3;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t C = 1 + rng.index(4), N = 1 + rng.index(3);
    ReferenceStore store{{layer}, 3, {}};
    for (std::size_t i = 0; i < N; ++i) {
      ReferencePair p;
      p.id = "r" + std::to_string(i);
      p.photo_features[layer] = detail::random_map(rng, C, 3 + rng.index(8), 3 + rng.index(8));
      p.sketch_features[layer] = p.photo_features[layer];
      store.pairs.push_back(std::move(p));
    }
    const Tensor q = detail::random_map(rng, C, 3 + rng.index(8), 3 + rng.index(8));
    std::vector<std::size_t> all(N);
    std::iota(all.begin(), all.end(), 0);
    const auto got = match_patches(extract_patches(q, 3, layer), store, all, layer);
    for (std::size_t j = 0; j < got.matches.size(); ++j) {
      auto [qr, qc] = got.query_grid.origin(j);
      const PatchMatch want = detail::brute_force_best(q, qr, qc, store, layer);
      const auto& m = got.matches[j];
      const double err = std::abs(m.score - want.score);
      worst = std::max(worst, err);
      if (m.pair != want.pair || m.patch != want.patch || err > 1e-5) ++bad;
    }
  }
  if (max_err) *max_err = worst;
  return bad;
}

// Exhaustive check of (H - 2*floor(k/2)) * (W - 2*floor(k/2)) for H, W in 5..12, k in {1, 3, 5}.
inline std::size_t patch_count_mismatches() {
  std::size_t bad = 0;
  for (std::size_t H = 5; H <= 12; ++H)
    for (std::size_t W = 5; W <= 12; ++W)
      for (std::size_t k : {1u, 3u, 5u}) {
        const std::size_t want = (H - 2 * (k / 2)) * (W - 2 * (k / 2));
        if (extract_patches(Tensor({1, H, W}), k, 1).patches.dim(0) != want) ++bad;
      }
  return bad;
}

inline std::vector<SelfCheckItem> run_selfcheck(const std::function<void(const SelfCheckItem&)>& on_item = {}) {
  std::vector<SelfCheckItem> items;
  auto add = [&](SelfCheckItem it) {
    if (on_item) on_item(it);
    items.push_back(std::move(it));
  };
  for (const auto& comp : gradcheck_components()) {
    for (bool dbl : {false, true}) {
      const auto r = dbl ? gradient_check<double>(comp, 2) : gradient_check<float>(comp, 2);
      std::ostringstream d;
      d << "checked " << r.checked << " skipped " << r.skipped << " max rel err " << r.max_rel_error << " (tol "
        << r.tolerance << ")";
      add({"gradcheck " + comp + (dbl ? " double" : " float"), r.passed(), d.str()});
    }
  }
  double err = 0.0;
  const std::size_t bad = matcher_oracle_mismatches(100, 2024, &err);
  add({"matcher oracle", bad == 0, std::to_string(bad) + " mismatched patches, max score err " + std::to_string(err)});
  const std::size_t pc = patch_count_mismatches();
  add({"patch count", pc == 0, std::to_string(pc) + " mismatches"});
  return items;
}

}  // namespace sketchforge
