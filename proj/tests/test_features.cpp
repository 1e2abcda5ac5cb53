#include <gtest/gtest.h>

#include <cmath>

#include "sketchforge/features.hpp"
#include "test_util.hpp"

namespace sf = sketchforge;
using sf::testing::random_tensor;
using sf::testing::slim_extractor;

namespace {

// Layer-by-layer recomposition with explicit padding, independent of extract().
std::map<int, sf::Tensor> recompose(const sf::Extractor& ex, const sf::Tensor& image) {
  const auto& spec = ex.spec();
  sf::Tensor x = sf::to_rgb(image);
  std::map<int, sf::Tensor> out;
  std::size_t conv = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto kind = spec.layers[i].kind;
    if (kind == sf::LayerKind::Conv3x3) {
      sf::Tensor padded({x.dim(0), x.dim(1) + 2, x.dim(2) + 2});
      for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t r = 0; r < x.dim(1); ++r)
          for (std::size_t q = 0; q < x.dim(2); ++q) padded(c, r + 1, q + 1) = x(c, r, q);
      x = sf::conv2d_valid(padded, ex.convs()[conv].kernel);
      const std::size_t plane = x.dim(1) * x.dim(2);
      for (std::size_t k = 0; k < x.dim(0); ++k)
        for (std::size_t p = 0; p < plane; ++p) x[k * plane + p] += ex.convs()[conv].bias[k];
      ++conv;
    } else if (kind == sf::LayerKind::Relu) {
      x = sf::relu(x);
    } else {
      x = sf::max_pool2(x);
    }
    for (auto [level, idx] : spec.taps)
      if (idx == i) out[level] = x;
  }
  return out;
}

const std::set<int> kAllTaps{1, 2, 3, 4, 5};

}  // namespace

TEST(Features, TapNames) {
  EXPECT_EQ(sf::tap_name(3), "relu3_1");
  EXPECT_EQ(sf::parse_tap("relu4_1"), 4);
  EXPECT_EQ(sf::parse_tap("5"), 5);
  EXPECT_THROW(sf::parse_tap("relu6_1"), sf::Error);
}

TEST(Features, DefaultTopologyExtentsOn250x200) {
  // Extents depend only on topology, so slim widths give the same geometry.
  auto ex = slim_extractor();
  auto fs = sf::extract(ex, sf::Tensor({3, 250, 200}, 0.5f), kAllTaps);
  EXPECT_EQ(fs.at(3).shape(), (sf::Shape{8, 63, 50}));
  EXPECT_EQ(fs.at(4).shape(), (sf::Shape{8, 32, 25}));
  EXPECT_EQ(fs.at(5).shape(), (sf::Shape{8, 16, 13}));
  for (int l = 1; l <= 5; ++l) {
    const std::size_t f = std::size_t{1} << (l - 1);
    EXPECT_EQ(fs.at(l).dim(1), (250 + f - 1) / f);
    EXPECT_EQ(fs.at(l).dim(2), (200 + f - 1) / f);
  }
}

TEST(Features, FullWidthRelu3On256) {
  auto ex = sf::Extractor::random(sf::ExtractorSpec::vgg19(), 3);
  sf::Rng rng(1);
  auto img = random_tensor(sf::Shape{3, 256, 256}, rng, 0, 1);
  auto fs = sf::extract(ex, img, {3});
  EXPECT_EQ(fs.at(3).shape(), (sf::Shape{256, 64, 64}));
}

TEST(Features, ZeroImageZeroFeatures) {
  auto ex = slim_extractor();
  auto fs = sf::extract(ex, sf::Tensor({3, 40, 36}), kAllTaps);
  for (auto& [l, m] : fs.maps)
    for (float v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Features, MatchesLayerByLayerOracle) {
  auto ex = slim_extractor(5);
  sf::Rng rng(2);
  auto img = random_tensor(sf::Shape{3, 37, 45}, rng, 0, 1);
  auto fs = sf::extract(ex, img, kAllTaps);
  auto oracle = recompose(ex, img);
  for (int l = 1; l <= 5; ++l) {
    ASSERT_EQ(fs.at(l).shape(), oracle.at(l).shape());
    EXPECT_LE(sf::testing::max_abs_diff(fs.at(l), oracle.at(l)), 1e-5) << sf::tap_name(l);
  }
}

TEST(Features, DeterministicAndGrayReplication) {
  auto ex = slim_extractor();
  sf::Rng rng(3);
  auto gray = random_tensor(sf::Shape{1, 33, 34}, rng, 0, 1);
  auto a = sf::extract(ex, gray, kAllTaps), b = sf::extract(ex, gray, kAllTaps);
  auto c = sf::extract(ex, sf::to_rgb(gray), kAllTaps);
  for (int l = 1; l <= 5; ++l) {
    EXPECT_EQ(a.at(l), b.at(l));
    EXPECT_EQ(a.at(l), c.at(l));
  }
}

TEST(Features, RejectsSmallInputAndUnknownTap) {
  auto ex = slim_extractor();
  EXPECT_THROW(sf::extract(ex, sf::Tensor({3, 31, 64}), {3}), sf::ShapeError);
  EXPECT_THROW(sf::extract(ex, sf::Tensor({3, 32, 32}), {6}), sf::ShapeError);
}

TEST(Features, WeightRoundTrip) {
  auto dir = sf::testing::scratch_dir("weights");
  auto ex = slim_extractor(9);
  sf::save_weights(dir / "w.skfw", ex);
  auto loaded = sf::load_weights(dir / "w.skfw");
  EXPECT_EQ(loaded.spec().widths(), ex.spec().widths());
  sf::Rng rng(4);
  auto img = random_tensor(sf::Shape{3, 40, 40}, rng, 0, 1);
  auto a = sf::extract(ex, img, kAllTaps), b = sf::extract(loaded, img, kAllTaps);
  for (int l = 1; l <= 5; ++l) EXPECT_EQ(a.at(l), b.at(l));
  // Byte-level comparison of re-serialized weights stands in for a cross-machine check.
  EXPECT_EQ(sf::encode_weight_file(ex.to_weight_file()), sf::encode_weight_file(loaded.to_weight_file()));
}

TEST(Features, NormalizationBlockRoundTrip) {
  auto base = slim_extractor(9);
  sf::Extractor ex(base.spec(), base.convs(), sf::Normalization{{0.5f, 0.4f, 0.3f}, {0.2f, 0.25f, 0.3f}});
  auto decoded = sf::extractor_from_weight_file(
      sf::decode_weight_file(sf::encode_weight_file(ex.to_weight_file()), "mem"), ex.spec(), "mem");
  ASSERT_TRUE(decoded.normalization());
  EXPECT_EQ(decoded.normalization()->mean, ex.normalization()->mean);
  auto x = sf::prepare_input(decoded, sf::Tensor({1, 2, 2}, 0.5f));
  EXPECT_FLOAT_EQ(x(1, 0, 0), (0.5f - 0.4f) / 0.25f);
}

TEST(Features, WeightFileErrorsAreDistinct) {
  auto ex = slim_extractor();
  const std::string good = sf::encode_weight_file(ex.to_weight_file());
  auto kind_of = [&](const std::string& bytes) {
    try {
      sf::extractor_from_weight_file(sf::decode_weight_file(bytes, "mem"), ex.spec(), "mem");
    } catch (const sf::FormatError& e) {
      return e.kind();
    }
    return sf::FormatError::Kind::Io;
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), sf::FormatError::Kind::BadMagic);
  std::string bad_version = good;
  bad_version[4] = 7;
  EXPECT_EQ(kind_of(bad_version), sf::FormatError::Kind::BadVersion);
  EXPECT_EQ(kind_of(good.substr(0, good.size() - 3)), sf::FormatError::Kind::Truncated);

  // Block 3 (conv index 4) gets the wrong width.
  auto wf = ex.to_weight_file();
  wf.convs[4].kernel = sf::Tensor({9, 8, 3, 3});
  wf.convs[4].bias = sf::Tensor({9});
  try {
    sf::extractor_from_weight_file(wf, ex.spec(), "mem");
    FAIL() << "expected shape mismatch";
  } catch (const sf::FormatError& e) {
    EXPECT_EQ(e.kind(), sf::FormatError::Kind::ShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("conv layer 4"), std::string::npos) << e.what();
  }
}

TEST(Signature, UnitNormAndScaleInvariant) {
  sf::Rng rng(5);
  sf::FeatureSet fs;
  fs.maps[5] = random_tensor(sf::Shape{4, 3, 3}, rng, 0, 1);
  auto sig = sf::preselect_signature(fs);
  double n2 = 0;
  for (float v : sig.values) n2 += double(v) * v;
  EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-6);
  sf::FeatureSet scaled = fs;
  for (auto& v : scaled.maps[5].data()) v *= 7.0f;
  auto sig7 = sf::preselect_signature(scaled);
  for (std::size_t i = 0; i < sig.values.size(); ++i) EXPECT_NEAR(sig.values[i], sig7.values[i], 1e-7);

  sf::FeatureSet zero;
  zero.maps[5] = sf::Tensor({2, 2, 2});
  EXPECT_TRUE(sf::preselect_signature(zero).zero);
  EXPECT_THROW(sf::preselect_signature(sf::FeatureSet{}), sf::ShapeError);
}

TEST(Signature, CosineMatchesDirectFormula) {
  sf::Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    sf::FeatureSet a, b;
    a.maps[5] = random_tensor(sf::Shape{3, 4, 4}, rng);
    b.maps[5] = random_tensor(sf::Shape{3, 4, 4}, rng);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.maps[5].size(); ++i) {
      dot += double(a.maps[5][i]) * b.maps[5][i];
      na += double(a.maps[5][i]) * a.maps[5][i];
      nb += double(b.maps[5][i]) * b.maps[5][i];
    }
    EXPECT_NEAR(sf::cosine(sf::preselect_signature(a).values, sf::preselect_signature(b).values),
                dot / std::sqrt(na * nb), 1e-6);
  }
}
