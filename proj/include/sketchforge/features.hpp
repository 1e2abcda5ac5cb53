#pragma once

// VGG-19-topology feature extractor (up to relu5_1) with portable weight files.
//
// Weight file layout (all integers u32 little-endian, floats f32 little-endian):
//   "SKFW" | version=1 | conv layer count
//   per conv layer: out | in | kh | kw | kernel[out*in*kh*kw] | bias[out]
//   zero or more trailing blocks: tag[4] | payload length | payload
// The "NORM" block holds per-channel input normalization:
//   channels | mean[channels] | std[channels]

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sketchforge/binary_io.hpp"
#include "sketchforge/error.hpp"
#include "sketchforge/image.hpp"
#include "sketchforge/rng.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

inline constexpr std::uint32_t kWeightFileVersion = 1;
inline constexpr std::size_t kMinExtractInput = 32;

// Taps are identified by level 1..5 (relu1_1 .. relu5_1).
inline std::string tap_name(int level) { return "relu" + std::to_string(level) + "_1"; }

inline int parse_tap(std::string_view name) {
  if (name.size() == 1 && name[0] >= '1' && name[0] <= '5') return name[0] - '0';
  for (int l = 1; l <= 5; ++l)
    if (name == tap_name(l)) return l;
  throw ShapeError("unknown tap name '" + std::string(name) + "'");
}

enum class LayerKind { Conv3x3, Relu, MaxPool2 };

struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels;
  std::size_t out_channels;
};

struct ExtractorSpec {
  std::vector<LayerSpec> layers;
  std::map<int, std::size_t> taps;  // tap level -> index of its relu layer

  // VGG-19 prefix through relu5_1: blocks of {2,2,4,4,1} convs separated by
  // max pooling. Widths default to the published 64,128,256,512,512.
  static ExtractorSpec vgg19(std::array<std::size_t, 5> widths = {64, 128, 256, 512, 512}) {
    constexpr std::array<int, 5> convs_per_block{2, 2, 4, 4, 1};
    ExtractorSpec spec;
    std::size_t channels = 3;
    for (int block = 0; block < 5; ++block) {
      if (block > 0) spec.layers.push_back({LayerKind::MaxPool2, channels, channels});
      for (int i = 0; i < convs_per_block[block]; ++i) {
        spec.layers.push_back({LayerKind::Conv3x3, channels, widths[block]});
        channels = widths[block];
        spec.layers.push_back({LayerKind::Relu, channels, channels});
        if (i == 0) spec.taps[block + 1] = spec.layers.size() - 1;
      }
    }
    spec.validate();
    return spec;
  }

  std::array<std::size_t, 5> widths() const {
    std::array<std::size_t, 5> w{};
    for (auto [level, idx] : taps) w[level - 1] = layers[idx].out_channels;
    return w;
  }

  std::vector<std::size_t> conv_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::Conv3x3) out.push_back(i);
    return out;
  }

  void validate() const {
    if (layers.empty() || layers.front().in_channels != 3) throw ShapeError("extractor must start from 3 channels");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
      if (layers[i].out_channels != layers[i + 1].in_channels) {
        throw ShapeError("extractor channel chain broken at layer " + std::to_string(i + 1));
      }
    }
    for (auto [level, idx] : taps) {
      if (level < 1 || level > 5 || idx >= layers.size()) throw ShapeError("invalid tap " + tap_name(level));
    }
  }
};

struct ConvWeights {
  Tensor kernel;  // out x in x kh x kw
  Tensor bias;    // out
};

struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

// Decoded weight file: conv layers plus opaque tagged trailing blocks.
struct WeightFile {
  std::vector<ConvWeights> convs;
  std::vector<std::pair<std::string, std::string>> blocks;

  const std::string* block(std::string_view tag) const {
    for (const auto& [t, payload] : blocks)
      if (t == tag) return &payload;
    return nullptr;
  }
};

inline std::string encode_weight_file(const WeightFile& file) {
  ByteWriter w;
  w.bytes("SKFW");
  w.u32(kWeightFileVersion);
  w.u32(static_cast<std::uint32_t>(file.convs.size()));
  for (const auto& conv : file.convs) {
    for (std::size_t d = 0; d < 4; ++d) w.u32(static_cast<std::uint32_t>(conv.kernel.dim(d)));
    w.f32s<float>(conv.kernel.data());
    w.f32s<float>(conv.bias.data());
  }
  for (const auto& [tag, payload] : file.blocks) {
    if (tag.size() != 4) throw FormatError(FormatError::Kind::Malformed, "block tag must be 4 bytes: " + tag);
    w.bytes(tag);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.bytes(payload);
  }
  return w.buffer();
}

inline WeightFile decode_weight_file(std::string_view data, const std::string& source) {
  ByteReader r(data, source);
  if (data.size() < 4 || r.bytes(4) != "SKFW") {
    throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic (expected SKFW)");
  }
  const auto version = r.u32();
  if (version != kWeightFileVersion) {
    throw FormatError(FormatError::Kind::BadVersion, source + ": weight file version " + std::to_string(version) +
                                                         ", this build reads version " +
                                                         std::to_string(kWeightFileVersion));
  }
  WeightFile file;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t out = r.u32(), in = r.u32(), kh = r.u32(), kw = r.u32();
    if (out == 0 || in == 0 || kh == 0 || kw == 0) {
      throw FormatError(FormatError::Kind::Malformed, source + ": zero extent in conv layer " + std::to_string(i));
    }
    ConvWeights conv{Tensor({out, in, kh, kw}), Tensor({out})};
    r.f32s(conv.kernel.data());
    r.f32s(conv.bias.data());
    file.convs.push_back(std::move(conv));
  }
  while (!r.at_end()) {
    std::string tag(r.bytes(4));
    const auto len = r.u32();
    file.blocks.emplace_back(std::move(tag), std::string(r.bytes(len)));
  }
  return file;
}

class Extractor {
 public:
  Extractor(ExtractorSpec spec, std::vector<ConvWeights> convs, std::optional<Normalization> norm = std::nullopt)
      : spec_(std::move(spec)), convs_(std::move(convs)), norm_(std::move(norm)) {
    spec_.validate();
    const auto idx = spec_.conv_indices();
    if (idx.size() != convs_.size()) {
      throw FormatError(FormatError::Kind::ShapeMismatch, "extractor expects " + std::to_string(idx.size()) +
                                                              " conv layers, got " + std::to_string(convs_.size()));
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& ls = spec_.layers[idx[i]];
      const Shape want{ls.out_channels, ls.in_channels, 3, 3};
      if (convs_[i].kernel.shape() != want || convs_[i].bias.shape() != Shape{ls.out_channels}) {
        throw FormatError(FormatError::Kind::ShapeMismatch,
                          "shape mismatch at conv layer " + std::to_string(i) + " (spec layer " +
                              std::to_string(idx[i]) + "): expected " + to_string(want) + ", got " +
                              to_string(convs_[i].kernel.shape()));
      }
    }
    if (norm_ && (norm_->mean.size() != 3 || norm_->stddev.size() != 3)) {
      throw FormatError(FormatError::Kind::ShapeMismatch, "normalization block must have 3 channels");
    }
  }

  // He-normal kernels, zero biases.
  static Extractor random(const ExtractorSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<ConvWeights> convs;
    for (auto i : spec.conv_indices()) {
      const auto& ls = spec.layers[i];
      ConvWeights c{Tensor({ls.out_channels, ls.in_channels, 3, 3}), Tensor({ls.out_channels})};
      const double std = std::sqrt(2.0 / static_cast<double>(ls.in_channels * 9));
      for (auto& v : c.kernel.data()) v = static_cast<float>(rng.normal() * std);
      convs.push_back(std::move(c));
    }
    return Extractor(spec, std::move(convs));
  }

  const ExtractorSpec& spec() const noexcept { return spec_; }
  const std::vector<ConvWeights>& convs() const noexcept { return convs_; }
  const std::optional<Normalization>& normalization() const noexcept { return norm_; }

  WeightFile to_weight_file() const {
    WeightFile file{convs_, {}};
    if (norm_) {
      ByteWriter w;
      w.u32(3);
      w.f32s<float>(norm_->mean);
      w.f32s<float>(norm_->stddev);
      file.blocks.emplace_back("NORM", w.buffer());
    }
    return file;
  }

 private:
  ExtractorSpec spec_;
  std::vector<ConvWeights> convs_;
  std::optional<Normalization> norm_;
};

inline void save_weights(const std::filesystem::path& path, const Extractor& extractor) {
  write_file_atomic(path, encode_weight_file(extractor.to_weight_file()));
}

inline Extractor extractor_from_weight_file(WeightFile file, const ExtractorSpec& spec, const std::string& source) {
  std::optional<Normalization> norm;
  if (const auto* payload = file.block("NORM")) {
    ByteReader r(*payload, source + " NORM block");
    const auto channels = r.u32();
    if (channels != 3) throw FormatError(FormatError::Kind::ShapeMismatch, source + ": NORM block needs 3 channels");
    Normalization n{std::vector<float>(3), std::vector<float>(3)};
    r.f32s(n.mean);
    r.f32s(n.stddev);
    norm = std::move(n);
  }
  try {
    return Extractor(spec, std::move(file.convs), std::move(norm));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), source + ": " + e.what());
  }
}

inline Extractor load_weights(const std::filesystem::path& path, const ExtractorSpec& spec) {
  return extractor_from_weight_file(decode_weight_file(read_file(path), path.string()), spec, path.string());
}

// Infers block widths from the file, assuming the VGG-19 prefix layout.
inline Extractor load_weights(const std::filesystem::path& path) {
  auto file = decode_weight_file(read_file(path), path.string());
  const auto expected = ExtractorSpec::vgg19().conv_indices().size();
  if (file.convs.size() != expected) {
    throw FormatError(FormatError::Kind::ShapeMismatch, path.string() + ": expected " + std::to_string(expected) +
                                                            " conv layers, found " +
                                                            std::to_string(file.convs.size()));
  }
  constexpr std::array<std::size_t, 5> block_start{0, 2, 4, 8, 12};
  std::array<std::size_t, 5> widths{};
  for (std::size_t b = 0; b < 5; ++b) widths[b] = file.convs[block_start[b]].kernel.dim(0);
  return extractor_from_weight_file(std::move(file), ExtractorSpec::vgg19(widths), path.string());
}

struct FeatureSet {
  std::map<int, Tensor> maps;  // tap level -> C x H x W
  std::string source_id;

  const Tensor& at(int level) const {
    auto it = maps.find(level);
    if (it == maps.end()) throw ShapeError("feature set lacks tap " + tap_name(level));
    return it->second;
  }
};

// Grayscale replication to 3 channels plus the optional mean/std block.
inline Tensor prepare_input(const Extractor& extractor, const Tensor& image) {
  Tensor x = to_rgb(image);
  if (const auto& norm = extractor.normalization()) {
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) x[c * plane + p] = (x[c * plane + p] - norm->mean[c]) / norm->stddev[c];
  }
  return x;
}

inline FeatureSet extract(const Extractor& extractor, const Tensor& image, const std::set<int>& taps,
                          std::string source_id = {}) {
  detail::require_rank(image, 3, "extract");
  if (image.dim(1) < kMinExtractInput || image.dim(2) < kMinExtractInput) {
    throw ShapeError("extract: image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " is smaller than " + std::to_string(kMinExtractInput) + "x" +
                     std::to_string(kMinExtractInput));
  }
  const auto& spec = extractor.spec();
  std::size_t last = 0;
  for (int t : taps) {
    auto it = spec.taps.find(t);
    if (it == spec.taps.end()) throw ShapeError("extract: unknown tap " + std::to_string(t));
    last = std::max(last, it->second);
  }
  FeatureSet out{{}, std::move(source_id)};
  if (taps.empty()) return out;
  Tensor x = prepare_input(extractor, image);
  std::size_t conv = 0;
  for (std::size_t i = 0; i <= last; ++i) {
    switch (spec.layers[i].kind) {
      case LayerKind::Conv3x3:
        x = conv2d(x, extractor.convs()[conv].kernel, extractor.convs()[conv].bias, 1, 1);
        ++conv;
        break;
      case LayerKind::Relu:
        x = relu(std::move(x));
        break;
      case LayerKind::MaxPool2:
        x = max_pool2(x);
        break;
    }
    for (int t : taps)
      if (spec.taps.at(t) == i) out.maps[t] = x;
  }
  return out;
}

struct Signature {
  std::vector<float> values;
  bool zero = false;  // the relu5_1 map was identically zero
};

// Flattened relu5_1 map scaled to unit L2 norm.
inline Signature preselect_signature(const FeatureSet& features) {
  const Tensor& map = features.at(5);
  double norm2 = 0.0;
  for (float v : map.data()) norm2 += static_cast<double>(v) * v;
  Signature sig{std::vector<float>(map.size(), 0.0f), norm2 == 0.0};
  if (!sig.zero) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t i = 0; i < map.size(); ++i) sig.values[i] = static_cast<float>(map[i] * inv);
  }
  return sig;
}

inline double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace sketchforge
