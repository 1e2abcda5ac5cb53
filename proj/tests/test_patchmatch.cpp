#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sketchforge/patchmatch.hpp"
#include "test_util.hpp"

namespace sf = sketchforge;
using sf::testing::exhaustive_match;
using sf::testing::map_store;
using sf::testing::random_tensor;

TEST(PatchGrid, CountFormula) {
  for (std::size_t H = 5; H <= 12; ++H)
    for (std::size_t W = 5; W <= 12; ++W)
      for (std::size_t k : {1u, 3u, 5u}) {
        auto ps = sf::extract_patches(sf::Tensor({2, H, W}), k);
        EXPECT_EQ(ps.grid.count(), (H - 2 * (k / 2)) * (W - 2 * (k / 2)));
        EXPECT_EQ(ps.patches.dim(0), ps.grid.count());
      }
  EXPECT_EQ(sf::extract_patches(sf::Tensor({1, 8, 8}), 3).grid.count(), 36u);
  EXPECT_THROW(sf::extract_patches(sf::Tensor({1, 8, 8}), 2), sf::ShapeError);
  EXPECT_THROW(sf::extract_patches(sf::Tensor({1, 4, 8}), 5), sf::ShapeError);
}

TEST(PatchGrid, PatchesEqualLoopWindows) {
  sf::Rng rng(1);
  auto fm = random_tensor(sf::Shape{3, 7, 9}, rng);
  auto k1 = sf::extract_patches(fm, 1);
  for (std::size_t j = 0; j < k1.grid.count(); ++j)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(k1.patches(j, c, 0, 0), fm(c, j / 9, j % 9));
  auto ps = sf::extract_patches(fm, 3);
  std::size_t j = 0;
  for (std::size_t r = 1; r + 1 < 7; ++r)
    for (std::size_t q = 1; q + 1 < 9; ++q, ++j) {
      EXPECT_EQ(ps.grid.center(j), (std::pair<std::size_t, std::size_t>{r, q}));
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t a = 0; a < 3; ++a)
          for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(ps.patches(j, c, a, b), fm(c, r - 1 + a, q - 1 + b));
    }
}

TEST(Matcher, AgreesWithExhaustiveSearch) {
  sf::Rng rng(2);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t C = 1 + rng.index(4), N = 1 + rng.index(3);
    std::vector<sf::Tensor> refs;
    for (std::size_t i = 0; i < N; ++i) refs.push_back(random_tensor(sf::Shape{C, 3 + rng.index(8), 3 + rng.index(8)}, rng));
    auto store = map_store(refs, {}, 3, 3);
    auto q = random_tensor(sf::Shape{C, 3 + rng.index(8), 3 + rng.index(8)}, rng);
    std::vector<std::size_t> all(N);
    std::iota(all.begin(), all.end(), 0);
    auto got = sf::match_patches(sf::extract_patches(q, 3, 3), store, all, 3);
    auto want = exhaustive_match(q, store, all, 3, 3);
    ASSERT_EQ(got.matches.size(), want.size());
    for (std::size_t j = 0; j < want.size(); ++j) {
      EXPECT_EQ(got.matches[j].pair, want[j].pair);
      EXPECT_EQ(got.matches[j].patch, want[j].patch);
      EXPECT_NEAR(got.matches[j].score, want[j].score, 1e-5);
    }
  }
}

TEST(Matcher, TiesGoToLowestPairThenPatch) {
  // Two identical references with repeated content: every query ties across both.
  sf::Tensor ref({1, 5, 5}, 1.0f);
  auto store = map_store({ref, ref}, {}, 3, 3);
  std::vector<std::size_t> cand{1, 0};
  auto got = sf::match_patches(sf::extract_patches(sf::Tensor({1, 4, 4}, 2.0f), 3, 3), store, cand, 3);
  for (const auto& m : got.matches) {
    EXPECT_EQ(m.pair, 0u);
    EXPECT_EQ(m.patch, 0u);
    EXPECT_NEAR(m.score, 1.0, 1e-12);
  }
}

TEST(Matcher, ZeroPatchesScoreZero) {
  sf::Rng rng(3);
  auto ref = random_tensor(sf::Shape{2, 5, 5}, rng);
  auto store = map_store({ref}, {}, 3, 3);
  std::vector<std::size_t> cand{0};
  auto got = sf::match_patches(sf::extract_patches(sf::Tensor({2, 3, 3}), 3, 3), store, cand, 3);
  EXPECT_EQ(got.matches[0].score, 0.0);
  EXPECT_EQ(got.matches[0].patch, 0u);
  EXPECT_THROW(sf::match_patches(sf::extract_patches(ref, 3, 3), store, {}, 3), sf::ShapeError);
}

TEST(Matcher, ScaleInvariantArgmax) {
  sf::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<sf::Tensor> refs{random_tensor(sf::Shape{3, 8, 8}, rng), random_tensor(sf::Shape{3, 7, 9}, rng)};
    auto q = random_tensor(sf::Shape{3, 6, 6}, rng);
    std::vector<std::size_t> all{0, 1};
    auto base = sf::match_patches(sf::extract_patches(q, 3, 3), map_store(refs, {}, 3, 3), all, 3);
    // Powers of two scale exactly, so the argmax cannot shift through rounding.
    for (auto& r : refs)
      for (auto& v : r.data()) v *= 4.0f;
    auto scaled = sf::match_patches(sf::extract_patches(q, 3, 3), map_store(refs, {}, 3, 3), all, 3);
    for (std::size_t j = 0; j < base.matches.size(); ++j) {
      EXPECT_EQ(base.matches[j].pair, scaled.matches[j].pair);
      EXPECT_EQ(base.matches[j].patch, scaled.matches[j].patch);
    }
  }
}

TEST(Matcher, SelfMatchIdentityOnRandomMaps) {
  sf::Rng rng(5);
  std::vector<sf::Tensor> refs;
  for (int i = 0; i < 3; ++i) refs.push_back(random_tensor(sf::Shape{4, 9, 10}, rng));
  auto store = map_store(refs, {}, 4, 3);
  std::vector<std::size_t> all{0, 1, 2};
  for (std::size_t i = 0; i < 3; ++i) {
    auto r = sf::match_patches(sf::extract_patches(refs[i], 3, 4), store, all, 4);
    for (std::size_t j = 0; j < r.matches.size(); ++j) {
      EXPECT_EQ(r.matches[j].pair, i);
      EXPECT_EQ(r.matches[j].patch, j);
      EXPECT_NEAR(r.matches[j].score, 1.0, 1e-5);
    }
  }
}

TEST(Preselect, OrderingAndLimits) {
  sf::Rng rng(6);
  std::vector<sf::Tensor> refs;
  for (int i = 0; i < 20; ++i) refs.push_back(random_tensor(sf::Shape{2, 3, 3}, rng, 0, 1));
  auto store = map_store(refs, {}, 5, 3);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    sf::FeatureSet fs;
    fs.maps[5] = refs[i];
    store.pairs[i].signature = sf::preselect_signature(fs);
  }
  sf::FeatureSet qf;
  qf.maps[5] = random_tensor(sf::Shape{2, 3, 3}, rng, 0, 1);
  auto q = sf::preselect_signature(qf);
  auto pre = sf::preselect_references(q, store, 5);
  std::vector<std::pair<double, std::size_t>> oracle;
  for (std::size_t i = 0; i < 20; ++i) oracle.push_back({-sf::cosine(q.values, store.pairs[i].signature.values), i});
  std::sort(oracle.begin(), oracle.end());
  ASSERT_EQ(pre.indices.size(), 5u);
  for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(pre.indices[r], oracle[r].second);

  auto self = sf::preselect_references(store.pairs[2].signature, store, 5);
  EXPECT_EQ(self.indices[0], 2u);
  EXPECT_NEAR(self.scores[0], 1.0, 1e-6);

  store.pairs.resize(3);
  EXPECT_EQ(sf::preselect_references(q, store, 5).indices.size(), 3u);
}

TEST(Preselect, RestrictedMatchingEqualsFullWhenBestIsKept) {
  sf::Rng rng(7);
  std::vector<sf::Tensor> refs;
  for (int i = 0; i < 8; ++i) refs.push_back(random_tensor(sf::Shape{2, 6, 6}, rng));
  auto store = map_store(refs, {}, 3, 3);
  auto q = random_tensor(sf::Shape{2, 6, 6}, rng);
  std::vector<std::size_t> all(8);
  std::iota(all.begin(), all.end(), 0);
  auto full = sf::match_patches(sf::extract_patches(q, 3, 3), store, all, 3);
  std::set<std::size_t> used;
  for (auto& m : full.matches) used.insert(m.pair);
  std::vector<std::size_t> subset(used.begin(), used.end());
  for (std::size_t i : all)
    if (!used.count(i)) {
      subset.push_back(i);  // one pair that never wins
      break;
    }
  auto restricted = sf::match_patches(sf::extract_patches(q, 3, 3), store, subset, 3);
  for (std::size_t j = 0; j < full.matches.size(); ++j) {
    EXPECT_EQ(full.matches[j].pair, restricted.matches[j].pair);
    EXPECT_EQ(full.matches[j].patch, restricted.matches[j].patch);
    EXPECT_EQ(full.matches[j].score, restricted.matches[j].score);
  }
}

TEST(Compose, SelfMatchGivesOwnSketchPatches) {
  sf::Rng rng(8);
  std::vector<sf::Tensor> photos, sketches;
  for (int i = 0; i < 2; ++i) {
    photos.push_back(random_tensor(sf::Shape{3, 7, 7}, rng));
    sketches.push_back(random_tensor(sf::Shape{3, 7, 7}, rng));
  }
  auto store = map_store(photos, sketches, 3, 3);
  std::vector<std::size_t> all{0, 1};
  auto match = sf::match_patches(sf::extract_patches(photos[1], 3, 3), store, all, 3);
  auto pseudo = sf::compose_pseudo_feature(match, store, 3);
  EXPECT_EQ(pseudo.patches, sf::extract_patches(sketches[1], 3, 3).patches);
  EXPECT_EQ(pseudo.patches.dim(0), match.query_grid.count());
  EXPECT_THROW(sf::compose_pseudo_feature(match, store, 4), sf::ShapeError);
  auto dangling = match;
  dangling.matches[0].patch = 999;
  EXPECT_THROW(sf::compose_pseudo_feature(dangling, store, 3), sf::ShapeError);
  auto shrunk = store;
  shrunk.pairs.pop_back();
  EXPECT_THROW(sf::compose_pseudo_feature(match, shrunk, 3), sf::ShapeError);
}

TEST(Compose, RandomCaseUsesOracleIndices) {
  sf::Rng rng(9);
  std::vector<sf::Tensor> photos, sketches;
  for (int i = 0; i < 3; ++i) {
    photos.push_back(random_tensor(sf::Shape{2, 6, 7}, rng));
    sketches.push_back(random_tensor(sf::Shape{2, 6, 7}, rng));
  }
  auto store = map_store(photos, sketches, 3, 3);
  auto q = random_tensor(sf::Shape{2, 5, 6}, rng);
  std::vector<std::size_t> all{0, 1, 2};
  auto pseudo = sf::compose_pseudo_feature(sf::match_patches(sf::extract_patches(q, 3, 3), store, all, 3), store, 3);
  auto oracle = exhaustive_match(q, store, all, 3, 3);
  for (std::size_t j = 0; j < oracle.size(); ++j) {
    auto [r0, c0] = sf::PatchGrid::for_map(6, 7, 3).origin(oracle[j].patch);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
          EXPECT_EQ(pseudo.patches(j, c, a, b), sketches[oracle[j].pair](c, r0 + a, c0 + b));
  }

  auto constant = map_store({photos[0]}, {sf::Tensor({2, 6, 7}, 0.25f)}, 3, 3);
  std::vector<std::size_t> one{0};
  auto flat = sf::compose_pseudo_feature(sf::match_patches(sf::extract_patches(q, 3, 3), constant, one, 3), constant, 3);
  for (float v : flat.patches.data()) EXPECT_EQ(v, 0.25f);
}

TEST(NaiveReconstruction, SelfMatchAtLayerOneReproducesSketch) {
  sf::Rng rng(10);
  auto photo = random_tensor(sf::Shape{3, 8, 9}, rng);
  auto store = map_store({photo}, {}, 1, 1);
  store.pairs[0].sketch = random_tensor(sf::Shape{1, 8, 9}, rng, 0, 1);
  std::vector<std::size_t> one{0};
  auto match = sf::match_patches(sf::extract_patches(photo, 1, 1), store, one, 1);
  auto rec = sf::naive_reconstruction(match, store, 8, 9);
  EXPECT_EQ(rec, store.pairs[0].sketch);
}

TEST(NaiveReconstruction, ConstantSketchAndTwoHalves) {
  sf::Rng rng(11);
  // Orthogonal channel content: ref A lives in channel 0, ref B in channel 1.
  sf::Tensor a({2, 6, 6}), b({2, 6, 6});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      a(0, y, x) = static_cast<float>(1.0 + rng.uniform());
      b(1, y, x) = static_cast<float>(1.0 + rng.uniform());
    }
  auto store = map_store({a, b}, {}, 1, 3);
  store.pairs[0].sketch = sf::Tensor({1, 6, 6}, 0.2f);
  store.pairs[1].sketch = sf::Tensor({1, 6, 6}, 0.9f);
  sf::Tensor q({2, 6, 12});
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      q(0, y, x) = a(0, y, x);
      q(1, y, x + 6) = b(1, y, x);
    }
  std::vector<std::size_t> both{0, 1};
  auto rec = sf::naive_reconstruction(sf::match_patches(sf::extract_patches(q, 3, 1), store, both, 1), store, 6, 12);
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(rec(0, y, x), 0.2f, 1e-6);
    for (std::size_t x = 8; x < 12; ++x) EXPECT_NEAR(rec(0, y, x), 0.9f, 1e-6);
  }

  auto white = map_store({a}, {}, 2, 3);
  white.pairs[0].sketch = sf::Tensor({1, 12, 12}, 1.0f);
  std::vector<std::size_t> one{0};
  auto w = sf::naive_reconstruction(sf::match_patches(sf::extract_patches(a, 3, 2), white, one, 2), white, 12, 12);
  for (float v : w.data()) EXPECT_EQ(v, 1.0f);
}

TEST(ReferenceStore, BuildRoundTripAndSignatures) {
  auto ex = sf::testing::slim_extractor();
  auto inputs = sf::testing::fixture_pairs(5, 40, 36);
  auto store = sf::build_reference_store(inputs, ex, {3, 4}, 3);
  ASSERT_EQ(store.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    auto fs = sf::extract(ex, inputs[i].photo, {5});
    EXPECT_EQ(store.pairs[i].signature.values, sf::preselect_signature(fs).values);
  }
  auto dir = sf::testing::scratch_dir("store");
  sf::save_store(dir / "ref.skrs", store);
  auto loaded = sf::load_store(dir / "ref.skrs");
  EXPECT_EQ(loaded.taps, store.taps);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(loaded.pairs[i].id, store.pairs[i].id);
    for (int t : {3, 4}) {
      EXPECT_EQ(loaded.photo_map(i, t), store.photo_map(i, t));
      EXPECT_EQ(loaded.sketch_map(i, t), store.sketch_map(i, t));
    }
    EXPECT_EQ(loaded.pairs[i].sketch, store.pairs[i].sketch);
  }

  auto single = sf::build_reference_store({inputs[0]}, ex, {3}, 3);
  sf::FeatureSet q = sf::extract(ex, inputs[3].photo, {5});
  EXPECT_EQ(sf::preselect_references(sf::preselect_signature(q), single, 5).indices, std::vector<std::size_t>{0});
}

TEST(ReferenceStore, ErrorsNameTheOffender) {
  auto ex = sf::testing::slim_extractor();
  auto inputs = sf::testing::fixture_pairs(2, 40, 36);
  inputs[1].sketch = sf::Tensor({1, 40, 40});
  try {
    sf::build_reference_store(inputs, ex, {3}, 3);
    FAIL();
  } catch (const sf::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("pair1"), std::string::npos);
  }
  auto good = sf::build_reference_store(sf::testing::fixture_pairs(1, 40, 36), ex, {3}, 3);
  std::string bytes = sf::encode_store(good);
  bytes[4] = 2;
  try {
    sf::decode_store(bytes, "mem");
    FAIL();
  } catch (const sf::FormatError& e) {
    EXPECT_EQ(e.kind(), sf::FormatError::Kind::BadVersion);
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_THROW(sf::decode_store(sf::encode_store(good).substr(0, 50), "mem"), sf::FormatError);
}
