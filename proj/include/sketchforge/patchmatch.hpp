#pragma once

// Pseudo sketch feature generation: dense k x k patch matching in feature
// space between a query photo and a reference set of aligned photo/sketch
// pairs, with the sketch-side patches at the matched positions forming the
// supervision target.
//
// Store file layout (u32/f32 little-endian):
//   "SKRS" | version=1 | N | tap count | taps... | k
//   per pair: id (u32 length + bytes)
//             photo feature map per tap, sketch feature map per tap
//               (each: C | H | W | f32 data)
//             signature: zero flag | length | f32 values
//             sketch image: u32 length + binary PGM bytes

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sketchforge/binary_io.hpp"
#include "sketchforge/error.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/image.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

inline constexpr std::uint32_t kStoreFileVersion = 1;

// Centers of all k x k windows (stride 1) that fit inside an H x W map,
// enumerated row-major.
struct PatchGrid {
  std::size_t k = 3;
  std::size_t map_h = 0, map_w = 0;
  std::size_t rows = 0, cols = 0;
  int layer = 0;

  static PatchGrid for_map(std::size_t h, std::size_t w, std::size_t k, int layer = 0) {
    if (k % 2 == 0) throw ShapeError("patch size k must be odd, got " + std::to_string(k));
    if (k > h || k > w) {
      throw ShapeError("patch size " + std::to_string(k) + " exceeds map " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    const std::size_t half = k / 2;
    return {k, h, w, h - 2 * half, w - 2 * half, layer};
  }

  std::size_t count() const noexcept { return rows * cols; }
  std::size_t stride() const noexcept { return 1; }
  // Top-left corner of patch j in map coordinates; its center is offset by k/2.
  std::pair<std::size_t, std::size_t> origin(std::size_t j) const { return {j / cols, j % cols}; }
  std::pair<std::size_t, std::size_t> center(std::size_t j) const {
    return {j / cols + k / 2, j % cols + k / 2};
  }

  bool operator==(const PatchGrid&) const = default;
};

struct PatchSet {
  PatchGrid grid;
  Tensor patches;  // m x C x k x k
};

template <class T>
PatchSet extract_patches(const BasicTensor<T>& fm, std::size_t k, int layer = 0) {
  detail::require_rank(fm, 3, "extract_patches");
  const std::size_t C = fm.dim(0);
  PatchGrid grid = PatchGrid::for_map(fm.dim(1), fm.dim(2), k, layer);
  Tensor patches({grid.count(), C, k, k});
  for (std::size_t j = 0; j < grid.count(); ++j) {
    auto [r0, c0] = grid.origin(j);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) patches(j, c, a, b) = static_cast<float>(fm(c, r0 + a, c0 + b));
  }
  return {grid, std::move(patches)};
}

struct ReferencePair {
  std::string id;
  std::map<int, Tensor> photo_features;
  std::map<int, Tensor> sketch_features;
  Signature signature;
  Tensor sketch;  // 1 x H x W, for pixel-level projection
};

struct ReferenceStore {
  std::vector<int> taps;  // matched layers
  std::size_t k = 3;
  std::vector<ReferencePair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }

  const Tensor& photo_map(std::size_t pair, int layer) const { return lookup(pairs.at(pair).photo_features, pair, layer); }
  const Tensor& sketch_map(std::size_t pair, int layer) const {
    return lookup(pairs.at(pair).sketch_features, pair, layer);
  }

 private:
  static const Tensor& lookup(const std::map<int, Tensor>& maps, std::size_t pair, int layer) {
    auto it = maps.find(layer);
    if (it == maps.end()) {
      throw ShapeError("reference pair " + std::to_string(pair) + " has no features at " + tap_name(layer));
    }
    return it->second;
  }
};

struct PatchMatch {
  std::size_t pair = 0;   // i'
  std::size_t patch = 0;  // j' in the reference grid
  double score = 0.0;     // cosine similarity in [-1, 1]
};

struct MatchResult {
  int layer = 0;
  PatchGrid query_grid;
  std::size_t store_size = 0;
  std::vector<PatchMatch> matches;  // one per query patch
};

struct PseudoSketchFeature {
  int layer = 0;
  PatchGrid grid;
  Tensor patches;  // m x C x k x k, sketch-side patches at the matched positions
  MatchResult match;
};

using PseudoFeatures = std::map<int, PseudoSketchFeature>;

struct Preselection {
  std::vector<std::size_t> indices;  // best first
  std::vector<double> scores;
};

// Top k_ref pairs by cosine similarity of relu5_1 signatures; ties go to the
// lower pair index.
inline Preselection preselect_references(const Signature& query, const ReferenceStore& store, std::size_t k_ref) {
  if (store.pairs.empty()) throw ShapeError("preselect_references: empty reference store");
  if (k_ref == 0) throw ShapeError("preselect_references: k_ref must be >= 1");
  std::vector<double> score(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) score[i] = cosine(query.values, store.pairs[i].signature.values);
  std::vector<std::size_t> order(store.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] > score[b]; });
  order.resize(std::min(k_ref, order.size()));
  Preselection out{order, {}};
  for (auto i : order) out.scores.push_back(score[i]);
  return out;
}

// Cosine matching expressed as a correlation: unit-norm query patches act as
// kernels over each candidate reference map, and the response is divided by
// the reference window norms. Exact ties resolve to the lowest (pair, patch).
inline MatchResult match_patches(const PatchSet& query, const ReferenceStore& store,
                                 std::span<const std::size_t> candidates, int layer) {
  if (candidates.empty()) throw ShapeError("match_patches: empty candidate list");
  const std::size_t m = query.grid.count();
  const std::size_t C = query.patches.dim(1), k = query.grid.k;
  if (k != store.k) {
    throw ShapeError("match_patches: query patch size " + std::to_string(k) + " != store patch size " +
                     std::to_string(store.k));
  }

  TensorD kernels = query.patches.cast<double>();
  const std::size_t patch_len = C * k * k;
  for (std::size_t j = 0; j < m; ++j) {
    double n2 = 0.0;
    for (std::size_t e = 0; e < patch_len; ++e) n2 += kernels[j * patch_len + e] * kernels[j * patch_len + e];
    const double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (std::size_t e = 0; e < patch_len; ++e) kernels[j * patch_len + e] *= inv;
  }

  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  MatchResult result{layer, query.grid, store.size(),
                     std::vector<PatchMatch>(m, PatchMatch{0, 0, -std::numeric_limits<double>::infinity()})};
  constexpr std::size_t kChunk = 256;
  const TensorD ones({1, C, k, k}, 1.0);
  for (std::size_t pair : order) {
    if (pair >= store.size()) throw ShapeError("match_patches: candidate " + std::to_string(pair) + " out of range");
    const TensorD ref = store.photo_map(pair, layer).cast<double>();
    if (ref.dim(0) != C) throw ShapeError("match_patches: channel mismatch against reference " + std::to_string(pair));
    TensorD squared = ref;
    for (auto& v : squared.data()) v *= v;
    TensorD window_norm = conv2d_valid(squared, ones);
    for (auto& v : window_norm.data()) v = std::sqrt(v);
    const std::size_t positions = window_norm.size();

    for (std::size_t start = 0; start < m; start += kChunk) {
      const std::size_t count = std::min(kChunk, m - start);
      TensorD chunk({count, C, k, k},
                    std::vector<double>(kernels.data().begin() + static_cast<std::ptrdiff_t>(start * patch_len),
                                        kernels.data().begin() + static_cast<std::ptrdiff_t>((start + count) * patch_len)));
      const TensorD dots = conv2d_valid(ref, chunk);
      for (std::size_t q = 0; q < count; ++q) {
        PatchMatch& best = result.matches[start + q];
        const double* row = dots.data().data() + q * positions;
        for (std::size_t p = 0; p < positions; ++p) {
          const double s = window_norm[p] > 0.0 ? std::clamp(row[p] / window_norm[p], -1.0, 1.0) : 0.0;
          if (s > best.score) best = {pair, p, s};
        }
      }
    }
  }
  return result;
}

inline PseudoSketchFeature compose_pseudo_feature(const MatchResult& match, const ReferenceStore& store, int layer) {
  if (match.layer != layer) {
    throw ShapeError("compose_pseudo_feature: match was computed at " + tap_name(match.layer) + ", not " +
                     tap_name(layer));
  }
  if (match.store_size != store.size()) {
    throw ShapeError("compose_pseudo_feature: store changed size since matching (" +
                     std::to_string(match.store_size) + " -> " + std::to_string(store.size()) + ")");
  }
  const std::size_t k = match.query_grid.k;
  std::size_t C = 0;
  PseudoSketchFeature out{layer, match.query_grid, Tensor(), match};
  for (std::size_t j = 0; j < match.matches.size(); ++j) {
    const auto& pm = match.matches[j];
    if (pm.pair >= store.size()) throw ShapeError("compose_pseudo_feature: dangling pair index " + std::to_string(pm.pair));
    const Tensor& sk = store.sketch_map(pm.pair, layer);
    const PatchGrid ref_grid = PatchGrid::for_map(sk.dim(1), sk.dim(2), k, layer);
    if (pm.patch >= ref_grid.count()) {
      throw ShapeError("compose_pseudo_feature: dangling patch index " + std::to_string(pm.patch) + " for pair " +
                       std::to_string(pm.pair));
    }
    if (out.patches.empty()) {
      C = sk.dim(0);
      out.patches = Tensor({match.matches.size(), C, k, k});
    } else if (sk.dim(0) != C) {
      throw ShapeError("compose_pseudo_feature: inconsistent channel count across pairs");
    }
    auto [r0, c0] = ref_grid.origin(pm.patch);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) out.patches(j, c, a, b) = sk(c, r0 + a, c0 + b);
  }
  return out;
}

// Pixel-level projection of a match field: every query patch pastes the sketch
// region under its matched reference patch (feature cells scaled by
// 2^(layer-1)); overlaps are averaged and uncovered pixels take the value of
// the nearest covered one.
inline Tensor naive_reconstruction(const MatchResult& match, const ReferenceStore& store, std::size_t H,
                                   std::size_t W) {
  if (H == 0 || W == 0) throw ShapeError("naive_reconstruction: empty output extent");
  const std::size_t scale = std::size_t{1} << (match.layer - 1);
  const std::size_t k = match.query_grid.k;
  std::vector<double> sum(H * W, 0.0), weight(H * W, 0.0);
  std::size_t cov_r0 = H, cov_r1 = 0, cov_c0 = W, cov_c1 = 0;
  for (std::size_t j = 0; j < match.matches.size(); ++j) {
    const auto& pm = match.matches[j];
    if (pm.pair >= store.size()) throw ShapeError("naive_reconstruction: dangling pair index");
    const Tensor& sketch = store.pairs[pm.pair].sketch;
    const Tensor& sk_map = store.sketch_map(pm.pair, match.layer);
    const PatchGrid ref_grid = PatchGrid::for_map(sk_map.dim(1), sk_map.dim(2), k, match.layer);
    auto [qr, qc] = match.query_grid.origin(j);
    auto [rr, rc] = ref_grid.origin(pm.patch);
    for (std::size_t dy = 0; dy < k * scale; ++dy) {
      const std::size_t oy = qr * scale + dy, sy = rr * scale + dy;
      if (oy >= H || sy >= sketch.dim(1)) continue;
      for (std::size_t dx = 0; dx < k * scale; ++dx) {
        const std::size_t ox = qc * scale + dx, sx = rc * scale + dx;
        if (ox >= W || sx >= sketch.dim(2)) continue;
        sum[oy * W + ox] += sketch(0, sy, sx);
        weight[oy * W + ox] += 1.0;
        cov_r0 = std::min(cov_r0, oy);
        cov_r1 = std::max(cov_r1, oy);
        cov_c0 = std::min(cov_c0, ox);
        cov_c1 = std::max(cov_c1, ox);
      }
    }
  }
  Tensor out({1, H, W});
  if (cov_r0 > cov_r1) return out;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t idx = y * W + x;
      if (weight[idx] == 0.0) idx = std::clamp(y, cov_r0, cov_r1) * W + std::clamp(x, cov_c0, cov_c1);
      out(0, y, x) = weight[idx] > 0.0 ? static_cast<float>(sum[idx] / weight[idx]) : 0.0f;
    }
  }
  return out;
}

struct ReferenceInput {
  Tensor photo;
  Tensor sketch;
  std::string id;
};

inline std::set<int> with_signature_tap(const std::vector<int>& taps) {
  std::set<int> all(taps.begin(), taps.end());
  all.insert(5);
  return all;
}

inline ReferenceStore build_reference_store(const std::vector<ReferenceInput>& inputs, const Extractor& extractor,
                                            std::vector<int> taps, std::size_t k) {
  if (inputs.empty()) throw ShapeError("build_reference_store: no reference pairs");
  if (k % 2 == 0) throw ShapeError("build_reference_store: patch size must be odd");
  std::sort(taps.begin(), taps.end());
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
  const std::size_t H = inputs.front().photo.dim(1), W = inputs.front().photo.dim(2);
  for (const auto& in : inputs) {
    for (const Tensor* img : {&in.photo, &in.sketch}) {
      if (img->rank() != 3 || img->dim(1) != H || img->dim(2) != W) {
        throw ShapeError("build_reference_store: pair '" + in.id + "' has extent " + to_string(img->shape()) +
                         ", expected " + std::to_string(H) + "x" + std::to_string(W));
      }
    }
  }
  ReferenceStore store{taps, k, std::vector<ReferencePair>(inputs.size())};
  const auto photo_taps = with_signature_tap(taps);
  const std::set<int> sketch_taps(taps.begin(), taps.end());
  parallel_for(inputs.size(), [&](std::size_t i) {
    const auto& in = inputs[i];
    FeatureSet pf = extract(extractor, in.photo, photo_taps, in.id);
    FeatureSet sf = extract(extractor, in.sketch, sketch_taps, in.id);
    ReferencePair& pair = store.pairs[i];
    pair.id = in.id;
    pair.signature = preselect_signature(pf);
    for (int t : taps) {
      pair.photo_features[t] = pf.maps.at(t);
      pair.sketch_features[t] = sf.maps.at(t);
      PatchGrid::for_map(pf.maps.at(t).dim(1), pf.maps.at(t).dim(2), k, t);  // validates k fits
    }
    // Stored at 8-bit precision so a reloaded store is identical.
    pair.sketch = decode_pnm(encode_pnm(to_gray(in.sketch)));
  });
  return store;
}

inline std::string encode_store(const ReferenceStore& store) {
  ByteWriter w;
  w.bytes("SKRS");
  w.u32(kStoreFileVersion);
  w.u32(static_cast<std::uint32_t>(store.size()));
  w.u32(static_cast<std::uint32_t>(store.taps.size()));
  for (int t : store.taps) w.u32(static_cast<std::uint32_t>(t));
  w.u32(static_cast<std::uint32_t>(store.k));
  for (const auto& pair : store.pairs) {
    w.str(pair.id);
    for (int t : store.taps) w.feature_map(pair.photo_features.at(t));
    for (int t : store.taps) w.feature_map(pair.sketch_features.at(t));
    w.u32(pair.signature.zero ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(pair.signature.values.size()));
    w.f32s<float>(pair.signature.values);
    w.str(encode_pnm(pair.sketch));
  }
  return w.buffer();
}

inline ReferenceStore decode_store(std::string_view data, const std::string& source) {
  ByteReader r(data, source);
  if (data.size() < 4 || r.bytes(4) != "SKRS") {
    throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic (expected SKRS)");
  }
  const auto version = r.u32();
  if (version != kStoreFileVersion) {
    throw FormatError(FormatError::Kind::BadVersion, source + ": store file version " + std::to_string(version) +
                                                         ", this build reads version " +
                                                         std::to_string(kStoreFileVersion));
  }
  ReferenceStore store;
  const auto n = r.u32();
  const auto tap_count = r.u32();
  for (std::uint32_t i = 0; i < tap_count; ++i) {
    const auto t = r.u32();
    if (t < 1 || t > 5) throw FormatError(FormatError::Kind::Malformed, source + ": invalid tap " + std::to_string(t));
    store.taps.push_back(static_cast<int>(t));
  }
  store.k = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ReferencePair pair;
    pair.id = r.str();
    for (int t : store.taps) pair.photo_features[t] = r.feature_map();
    for (int t : store.taps) pair.sketch_features[t] = r.feature_map();
    pair.signature.zero = r.u32() != 0;
    pair.signature.values.resize(r.u32());
    r.f32s(pair.signature.values);
    pair.sketch = decode_pnm(r.str(), source + " pair " + pair.id);
    store.pairs.push_back(std::move(pair));
  }
  if (!r.at_end()) throw FormatError(FormatError::Kind::Malformed, source + ": trailing bytes after last pair");
  if (store.pairs.empty()) throw FormatError(FormatError::Kind::Malformed, source + ": store holds no pairs");
  return store;
}

inline void save_store(const std::filesystem::path& path, const ReferenceStore& store) {
  write_file_atomic(path, encode_store(store));
}

inline ReferenceStore load_store(const std::filesystem::path& path) {
  return decode_store(read_file(path), path.string());
}

// Full pseudo sketch feature construction for one query photo: preselect the
// k_ref most similar pairs, then match and compose at every requested layer.
inline PseudoFeatures pseudo_sketch_features(const FeatureSet& query, const ReferenceStore& store,
                                             std::size_t k_ref, const std::vector<int>& layers) {
  const Preselection pre = preselect_references(preselect_signature(query), store, k_ref);
  PseudoFeatures out;
  for (int l : layers) {
    const PatchSet patches = extract_patches(query.at(l), store.k, l);
    out[l] = compose_pseudo_feature(match_patches(patches, store, pre.indices, l), store, l);
  }
  return out;
}

}  // namespace sketchforge
