#pragma once

// Binary PGM/PPM (P5/P6, 8-bit) I/O. Images are C x H x W tensors in [0,1].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <string>
#include <string_view>

#include "sketchforge/binary_io.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

namespace detail {

inline std::size_t pnm_token(std::string_view data, std::size_t& pos, const std::string& source) {
  for (;;) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos < data.size() && data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t start = pos;
  while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) ++pos;
  if (start == pos) throw FormatError(FormatError::Kind::Malformed, source + ": bad PNM header");
  return std::stoul(std::string(data.substr(start, pos - start)));
}

}  // namespace detail

inline Tensor decode_pnm(std::string_view data, const std::string& source = "<memory>") {
  if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '6')) {
    throw FormatError(FormatError::Kind::BadMagic, source + ": not a binary PGM/PPM (P5/P6)");
  }
  const std::size_t channels = data[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t w = detail::pnm_token(data, pos, source);
  const std::size_t h = detail::pnm_token(data, pos, source);
  const std::size_t maxval = detail::pnm_token(data, pos, source);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw FormatError(FormatError::Kind::Malformed, source + ": unsupported PNM extent or maxval");
  }
  ++pos;  // single whitespace byte after maxval
  if (data.size() < pos + w * h * channels) {
    throw FormatError(FormatError::Kind::Truncated, source + ": truncated PNM pixel data");
  }
  Tensor img({channels, h, w});
  const auto* px = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < channels; ++c)
        img(c, i, j) = static_cast<float>(px[(i * w + j) * channels + c]) / static_cast<float>(maxval);
  return img;
}

inline std::string encode_pnm(const Tensor& img) {
  detail::require_rank(img, 3, "encode_pnm");
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (C != 1 && C != 3) throw ShapeError("encode_pnm: need 1 or 3 channels, got " + std::to_string(C));
  std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + C * H * W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const float v = std::clamp(img(c, i, j), 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
      }
  return out;
}

inline Tensor read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path), path.string()); }

inline void write_pnm(const std::filesystem::path& path, const Tensor& img) {
  write_file_atomic(path, encode_pnm(img));
}

// ITU-R BT.601 luma.
inline Tensor to_gray(const Tensor& img) {
  detail::require_rank(img, 3, "to_gray");
  if (img.dim(0) == 1) return img;
  if (img.dim(0) != 3) throw ShapeError("to_gray: need 1 or 3 channels");
  Tensor out({1, img.dim(1), img.dim(2)});
  for (std::size_t i = 0; i < img.dim(1); ++i)
    for (std::size_t j = 0; j < img.dim(2); ++j)
      out(0, i, j) = 0.299f * img(0, i, j) + 0.587f * img(1, i, j) + 0.114f * img(2, i, j);
  return out;
}

inline Tensor to_rgb(const Tensor& img) {
  detail::require_rank(img, 3, "to_rgb");
  if (img.dim(0) == 3) return img;
  if (img.dim(0) != 1) throw ShapeError("to_rgb: need 1 or 3 channels");
  const std::size_t plane = img.dim(1) * img.dim(2);
  Tensor out({3, img.dim(1), img.dim(2)});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(img.data().begin(), plane, out.data().begin() + c * plane);
  return out;
}

}  // namespace sketchforge
