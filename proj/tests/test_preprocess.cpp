#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "sketchforge/preprocess.hpp"
#include "test_util.hpp"

namespace sf = sketchforge;

namespace {

sf::LandmarkSet landmarks_with_eyes(sf::Point left, sf::Point right) {
  sf::LandmarkSet lm;
  lm.id = "synthetic";
  for (std::size_t i = 0; i < 68; ++i) lm.points[i] = {100.0 + i, 200.0 - i};
  for (std::size_t i = 36; i < 42; ++i) lm.points[i] = left;
  for (std::size_t i = 42; i < 48; ++i) lm.points[i] = right;
  return lm;
}

sf::Tensor smooth_image(std::size_t H, std::size_t W) {
  sf::Tensor img({3, H, W});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        img(c, y, x) = static_cast<float>(0.5 + 0.2 * std::sin(x / 9.0 + c) * std::cos(y / 11.0) + 0.001 * c);
  return img;
}

void expect_point(sf::Point p, sf::Point q, double tol) {
  EXPECT_NEAR(p.x, q.x, tol);
  EXPECT_NEAR(p.y, q.y, tol);
}

}  // namespace

TEST(EyeCenters, EqualPoints) {
  auto [l, r] = sf::eye_centers(landmarks_with_eyes({60, 120}, {140, 120}));
  EXPECT_EQ(l.x, 60);
  EXPECT_EQ(l.y, 120);
  EXPECT_EQ(r.x, 140);
  EXPECT_EQ(r.y, 120);
}

TEST(EyeCenters, SymmetricFaceGivesSymmetricCenters) {
  sf::Rng rng(3);
  sf::LandmarkSet lm = landmarks_with_eyes({0, 0}, {0, 0});
  // Mirror pairs of the 68-point scheme: 37<->46, 38<->45, 39<->44, 40<->43, 41<->48, 42<->47.
  const int mirror[6] = {46, 45, 44, 43, 48, 47};
  for (int i = 0; i < 6; ++i) {
    sf::Point p{rng.uniform(50, 90), rng.uniform(100, 130)};
    lm.points[36 + i] = p;
    lm.points[mirror[i] - 1] = {200.0 - p.x, p.y};
  }
  auto [l, r] = sf::eye_centers(lm);
  EXPECT_NEAR(l.x + r.x, 200.0, 1e-12);
  EXPECT_NEAR(l.y, r.y, 1e-12);
}

TEST(EyeCenters, ShiftByMeanPerturbation) {
  sf::Rng rng(5);
  auto lm = landmarks_with_eyes({60, 120}, {140, 120});
  double dlx = 0, dly = 0;
  for (std::size_t i = 36; i < 42; ++i) {
    const double dx = rng.uniform(-1, 1), dy = rng.uniform(-1, 1);
    lm.points[i].x += dx;
    lm.points[i].y += dy;
    dlx += dx / 6;
    dly += dy / 6;
  }
  auto [l, r] = sf::eye_centers(lm);
  expect_point(l, {60 + dlx, 120 + dly}, 1e-12);
  expect_point(r, {140, 120}, 0);
}

TEST(Similarity, ExamplesFromHandSolution) {
  auto id = sf::estimate_similarity({75, 125}, {125, 125});
  EXPECT_EQ(id.scale, 1.0);
  EXPECT_EQ(id.theta, 0.0);
  EXPECT_EQ(id.tx, 0.0);
  EXPECT_EQ(id.ty, 0.0);

  auto half = sf::estimate_similarity({50, 100}, {150, 100});
  EXPECT_NEAR(half.scale, 0.5, 1e-15);
  EXPECT_NEAR(half.theta, 0.0, 1e-15);
  EXPECT_NEAR(half.tx, 50, 1e-12);
  EXPECT_NEAR(half.ty, 75, 1e-12);

  // Targets rotated by +90 degrees about (100, 125).
  auto rot = sf::estimate_similarity({100, 100}, {100, 150});
  EXPECT_NEAR(rot.theta, -std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(rot.scale, 1.0, 1e-12);
  expect_point(rot.apply({100, 100}), sf::kLeftEyeTarget, 1e-9);
  expect_point(rot.apply({100, 150}), sf::kRightEyeTarget, 1e-9);
}

TEST(Similarity, RejectsCoincidentEyes) {
  EXPECT_THROW(sf::estimate_similarity({10, 10}, {10, 10}), sf::ShapeError);
}

TEST(Similarity, RandomEyesLandOnTargetsAndInverseComposes) {
  sf::Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    sf::Point l{rng.uniform(0, 500), rng.uniform(0, 500)}, r{rng.uniform(0, 500), rng.uniform(0, 500)};
    if (std::hypot(l.x - r.x, l.y - r.y) < 1) continue;
    auto t = sf::estimate_similarity(l, r);
    EXPECT_GT(t.scale, 0);
    expect_point(t.apply(l), sf::kLeftEyeTarget, 1e-9);
    expect_point(t.apply(r), sf::kRightEyeTarget, 1e-9);
    auto inv = t.inverse();
    sf::Point p{rng.uniform(-300, 300), rng.uniform(-300, 300)};
    expect_point(inv.apply(t.apply(p)), p, 1e-9);
    expect_point(t.apply(inv.apply(p)), p, 1e-9);
  }
}

TEST(WarpCrop, IdentityIsBitwise) {
  sf::Rng rng(1);
  auto img = sf::testing::random_tensor(sf::Shape{3, 250, 200}, rng, 0, 1);
  EXPECT_EQ(sf::warp_crop(img, {}), img);
}

TEST(WarpCrop, IntegerTranslationIsExactInInterior) {
  sf::Rng rng(2);
  auto img = sf::testing::random_tensor(sf::Shape{1, 250, 200}, rng, 0, 1);
  sf::SimilarityTransform t;
  t.tx = 10;
  auto out = sf::warp_crop(img, t);
  for (std::size_t y = 0; y < 250; ++y) {
    for (std::size_t x = 10; x < 200; ++x) ASSERT_EQ(out(0, y, x), img(0, y, x - 10));
    for (std::size_t x = 0; x < 10; ++x) ASSERT_EQ(out(0, y, x), img(0, y, 0));
  }
}

TEST(WarpCrop, ZoomOnRampMatchesAnalytic) {
  sf::Tensor ramp({1, 520, 420});
  for (std::size_t y = 0; y < 520; ++y)
    for (std::size_t x = 0; x < 420; ++x) ramp(0, y, x) = static_cast<float>((x + 2.0 * y) / 1500.0);
  sf::SimilarityTransform t;
  t.scale = 0.5;
  t.tx = 0.25;
  t.ty = 0.25;
  auto out = sf::warp_crop(ramp, t);
  for (std::size_t y = 1; y < 250; ++y)
    for (std::size_t x = 1; x < 200; ++x) {
      const double sx = 2.0 * x - 0.5, sy = 2.0 * y - 0.5;
      ASSERT_NEAR(out(0, y, x), (sx + 2 * sy) / 1500.0, 1e-3);
    }
}

TEST(WarpCrop, ExtentIsFixed) {
  sf::Rng rng(4);
  for (auto shape : {sf::Shape{3, 40, 30}, sf::Shape{1, 600, 500}, sf::Shape{3, 1, 1}}) {
    auto img = sf::testing::random_tensor(shape, rng, 0, 1);
    auto out = sf::warp_crop(img, sf::estimate_similarity({10, 20}, {30, 22}));
    EXPECT_EQ(out.shape(), (sf::Shape{shape[0], 250, 200}));
  }
  sf::SimilarityTransform bad;
  bad.scale = 0;
  EXPECT_THROW(sf::warp_crop(sf::Tensor({1, 4, 4}), bad), sf::ShapeError);
}

TEST(WarpCrop, ForwardThenInverseWithinTwoLevels) {
  auto img = smooth_image(250, 200);
  sf::SimilarityTransform t;
  t.scale = 1.08;
  t.theta = 0.17;
  const sf::Point c{100, 125};
  // Rotate/scale about the canvas center.
  const sf::Point moved = t.apply(c);
  t.tx = c.x - moved.x;
  t.ty = c.y - moved.y;
  auto back = sf::warp_crop(sf::warp_crop(img, t), t.inverse());
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t y = 40; y < 210; ++y)
      for (std::size_t x = 40; x < 160; ++x) ASSERT_NEAR(back(k, y, x), img(k, y, x), 2.0 / 255.0);
}

TEST(WarpCrop, EyeBlobsLandOnTargets) {
  const sf::Point le{183.4, 211.7}, re{262.9, 190.2};
  sf::Tensor img({1, 400, 420});
  for (std::size_t y = 0; y < 400; ++y)
    for (std::size_t x = 0; x < 420; ++x) {
      double v = 0;
      for (auto e : {le, re}) v += std::exp(-(std::pow(x - e.x, 2) + std::pow(y - e.y, 2)) / (2 * 3.0 * 3.0));
      img(0, y, x) = static_cast<float>(v);
    }
  auto out = sf::align_face(img, landmarks_with_eyes(le, re));
  for (auto target : {sf::kLeftEyeTarget, sf::kRightEyeTarget}) {
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t y = 0; y < 250; ++y)
      for (std::size_t x = 0; x < 200; ++x) {
        if (std::hypot(x - target.x, y - target.y) > 15) continue;
        const double w = out(0, y, x);
        sw += w;
        sx += w * x;
        sy += w * y;
      }
    expect_point({sx / sw, sy / sw}, target, 0.5);
  }
}

TEST(Landmarks, ParseAndReject) {
  std::string text;
  for (int i = 0; i < 68; ++i) text += std::to_string(i) + ".5 " + std::to_string(2 * i) + "\n";
  auto lm = sf::parse_landmarks(text, "face");
  EXPECT_EQ(lm.points[67].x, 67.5);
  EXPECT_EQ(lm.points[67].y, 134.0);
  EXPECT_EQ(lm.id, "face");
  EXPECT_THROW(sf::parse_landmarks("1 2\n", "short"), sf::FormatError);
  EXPECT_THROW(sf::parse_landmarks(text + "1 2\n", "long"), sf::FormatError);
  EXPECT_THROW(sf::parse_landmarks("a b\n" + text, "bad"), sf::FormatError);
  EXPECT_THROW(sf::parse_landmarks("1 2 3\n" + text, "three"), sf::FormatError);
  std::string with_nan = "nan 1\n" + text.substr(text.find('\n') + 1);
  EXPECT_THROW(sf::parse_landmarks(with_nan, "nan"), sf::FormatError);
}

TEST(Prepare, AlignsAndSkipsMissingLandmarks) {
  auto dir = sf::testing::scratch_dir("prep");
  std::filesystem::create_directories(dir / "photos");
  std::filesystem::create_directories(dir / "lm");
  sf::write_pnm(dir / "photos" / "a.ppm", smooth_image(300, 260));
  sf::write_pnm(dir / "photos" / "b.ppm", smooth_image(300, 260));
  std::ofstream f(dir / "lm" / "a.txt");
  for (int i = 0; i < 68; ++i) {
    if (i >= 36 && i < 42) f << "110 140\n";
    else if (i >= 42 && i < 48) f << "170 142\n";
    else f << "130 " << 100 + i << "\n";
  }
  f.close();
  std::vector<std::string> warnings;
  auto rep = sf::prepare_directory(dir / "photos", dir / "lm", dir / "out",
                                   [&](const std::string& w) { warnings.push_back(w); });
  EXPECT_EQ(rep.aligned, std::vector<std::string>{"a"});
  EXPECT_EQ(rep.skipped, std::vector<std::string>{"b"});
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("b.ppm"), std::string::npos);
  EXPECT_EQ(sf::read_pnm(dir / "out" / "a.ppm").shape(), (sf::Shape{3, 250, 200}));
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "b.ppm"));
}
