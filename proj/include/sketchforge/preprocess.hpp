#pragma once

// Face alignment: a two-point similarity transform that puts the eye centers at
// fixed canvas positions, followed by a bilinear warp into a 250x200 crop.
// Coordinates are (x = column, y = row) with the origin at the top-left pixel.

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/image.hpp"
#include "sketchforge/parallel.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline constexpr std::size_t kAlignedHeight = 250;
inline constexpr std::size_t kAlignedWidth = 200;
inline constexpr Point kLeftEyeTarget{75.0, 125.0};
inline constexpr Point kRightEyeTarget{125.0, 125.0};

struct LandmarkSet {
  static constexpr std::size_t kCount = 68;
  std::array<Point, kCount> points{};
  std::string id;

  void validate() const {
    for (std::size_t i = 0; i < kCount; ++i) {
      if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
        throw ShapeError("landmark " + std::to_string(i + 1) + " of '" + id + "' is not finite");
    }
  }
};

// 68 lines of "x y".
inline LandmarkSet parse_landmarks(const std::string& text, const std::string& id) {
  LandmarkSet lm;
  lm.id = id;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (n == LandmarkSet::kCount)
      throw FormatError(FormatError::Kind::Malformed, id + ": more than 68 landmark lines");
    std::istringstream row(line);
    Point p;
    std::string extra;
    if (!(row >> p.x >> p.y) || (row >> extra))
      throw FormatError(FormatError::Kind::Malformed, id + ": bad landmark line " + std::to_string(n + 1));
    lm.points[n++] = p;
  }
  if (n != LandmarkSet::kCount)
    throw FormatError(FormatError::Kind::Malformed, id + ": expected 68 landmarks, got " + std::to_string(n));
  try {
    lm.validate();
  } catch (const ShapeError& e) {
    throw FormatError(FormatError::Kind::Malformed, e.what());
  }
  return lm;
}

inline LandmarkSet read_landmarks(const std::filesystem::path& path) {
  return parse_landmarks(read_file(path), path.stem().string());
}

// Means of points 37-42 and 43-48 in the usual 1-based 68-point numbering.
inline std::pair<Point, Point> eye_centers(const LandmarkSet& lm) {
  auto mean = [&](std::size_t first) {
    Point c;
    for (std::size_t i = first; i < first + 6; ++i) {
      c.x += lm.points[i - 1].x;
      c.y += lm.points[i - 1].y;
    }
    return Point{c.x / 6.0, c.y / 6.0};
  };
  return {mean(37), mean(43)};
}

// p' = s * R(theta) * p + t
struct SimilarityTransform {
  double scale = 1.0;
  double theta = 0.0;
  double tx = 0.0;
  double ty = 0.0;

  Point apply(Point p) const {
    const double c = std::cos(theta) * scale, s = std::sin(theta) * scale;
    return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
  }

  SimilarityTransform inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.theta = -theta;
    const double c = std::cos(inv.theta) * inv.scale, s = std::sin(inv.theta) * inv.scale;
    inv.tx = -(c * tx - s * ty);
    inv.ty = -(s * tx + c * ty);
    return inv;
  }
};

// Unique similarity sending left -> kLeftEyeTarget and right -> kRightEyeTarget.
inline SimilarityTransform estimate_similarity(Point left, Point right) {
  const double dx = right.x - left.x, dy = right.y - left.y;
  const double d2 = dx * dx + dy * dy;
  if (!(d2 > 0.0)) throw ShapeError("estimate_similarity: eye centers coincide");
  const double ex = kRightEyeTarget.x - kLeftEyeTarget.x, ey = kRightEyeTarget.y - kLeftEyeTarget.y;
  // Complex quotient a = (target difference) / (source difference).
  const double ar = (ex * dx + ey * dy) / d2, ai = (ey * dx - ex * dy) / d2;
  SimilarityTransform t;
  t.scale = std::hypot(ar, ai);
  t.theta = std::atan2(ai, ar);
  t.tx = kLeftEyeTarget.x - (ar * left.x - ai * left.y);
  t.ty = kLeftEyeTarget.y - (ai * left.x + ar * left.y);
  return t;
}

inline SimilarityTransform estimate_similarity(const std::pair<Point, Point>& eyes) {
  return estimate_similarity(eyes.first, eyes.second);
}

// Bilinear sample with edge replication.
inline float sample_bilinear(const Tensor& img, std::size_t c, double x, double y) {
  const double W = static_cast<double>(img.dim(2)), H = static_cast<double>(img.dim(1));
  x = std::clamp(x, 0.0, W - 1.0);
  y = std::clamp(y, 0.0, H - 1.0);
  const auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, img.dim(2) - 1), y1 = std::min(y0 + 1, img.dim(1) - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  const double top = fx == 0.0 ? img(c, y0, x0) : (1.0 - fx) * img(c, y0, x0) + fx * img(c, y0, x1);
  if (fy == 0.0) return static_cast<float>(top);
  const double bot = fx == 0.0 ? img(c, y1, x0) : (1.0 - fx) * img(c, y1, x0) + fx * img(c, y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

// Output pixel (x, y) takes the source value at T^-1(x, y).
inline Tensor warp_crop(const Tensor& image, const SimilarityTransform& t,
                        std::size_t height = kAlignedHeight, std::size_t width = kAlignedWidth) {
  detail::require_rank(image, 3, "warp_crop");
  if (!(t.scale > 0.0) || !std::isfinite(t.theta) || !std::isfinite(t.tx) || !std::isfinite(t.ty))
    throw ShapeError("warp_crop: invalid transform");
  const SimilarityTransform inv = t.inverse();
  Tensor out({image.dim(0), height, width});
  parallel_for(height, [&](std::size_t y) {
    for (std::size_t x = 0; x < width; ++x) {
      const Point src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      for (std::size_t c = 0; c < image.dim(0); ++c) out(c, y, x) = sample_bilinear(image, c, src.x, src.y);
    }
  });
  return out;
}

inline Tensor align_face(const Tensor& image, const LandmarkSet& lm) {
  lm.validate();
  return warp_crop(image, estimate_similarity(eye_centers(lm)));
}

struct PrepReport {
  std::vector<std::string> aligned;
  std::vector<std::string> skipped;  // no landmark file
};

// Aligns every .pgm/.ppm in photos_dir whose stem has a matching <stem>.txt in
// landmarks_dir, writing <stem>.<ext> to out_dir. Photos without landmarks are
// skipped and reported through warn.
inline PrepReport prepare_directory(const std::filesystem::path& photos_dir, const std::filesystem::path& landmarks_dir,
                                    const std::filesystem::path& out_dir,
                                    const std::function<void(const std::string&)>& warn = {}) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(photos_dir))
    throw FormatError(FormatError::Kind::Io, "photo directory not found: " + photos_dir.string());
  std::vector<fs::path> photos;
  for (const auto& e : fs::directory_iterator(photos_dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) photos.push_back(e.path());
  }
  std::sort(photos.begin(), photos.end());
  fs::create_directories(out_dir);
  PrepReport report;
  for (const auto& p : photos) {
    const fs::path lm_path = landmarks_dir / (p.stem().string() + ".txt");
    if (!fs::exists(lm_path)) {
      report.skipped.push_back(p.stem().string());
      if (warn) warn("no landmarks for " + p.filename().string() + ", skipped");
      continue;
    }
    write_pnm(out_dir / p.filename(), align_face(read_pnm(p), read_landmarks(lm_path)));
    report.aligned.push_back(p.stem().string());
  }
  return report;
}

}  // namespace sketchforge
