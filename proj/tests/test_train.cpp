#include <gtest/gtest.h>

#include <cstdlib>

#include "fixtures.hpp"
#include "sketchforge/train.hpp"
#include "test_util.hpp"

namespace sf = sketchforge;
using sf::testing::random_tensor;

namespace {

struct SmallSetup {
  sf::Extractor extractor = sf::testing::slim_extractor(11, {4, 8, 8, 8, 8});
  std::vector<sf::ReferenceInput> inputs = sf::testing::fixture_pairs(3, 32, 32);
  sf::ReferenceStore store = sf::build_reference_store(inputs, extractor, {3, 4}, 3);
  std::vector<sf::Tensor> photos;

  SmallSetup() {
    for (auto& in : inputs) photos.push_back(in.photo);
  }

  static sf::TrainConfig config() {
    sf::TrainConfig cfg;
    cfg.batch = 2;
    cfg.iterations = 3;
    cfg.generator = {4, 1};
    cfg.discriminator = {4, 2};
    cfg.seed = 5;
    cfg.weights.layers = {3, 4};
    return cfg;
  }
};

}  // namespace

TEST(Augment, IdentityAndClamp) {
  sf::Rng rng(1);
  auto photo = random_tensor(sf::Shape{3, 9, 8}, rng, 0, 1);
  EXPECT_EQ(sf::apply_augment(photo, {}), photo);
  sf::AugmentParams bright;
  bright.brightness = 0.2;
  auto out = sf::apply_augment(sf::Tensor({3, 4, 4}, 0.9f), bright);
  for (float v : out.data()) EXPECT_EQ(v, 1.0f);
  sf::AugmentConfig off{false, false, false, false};
  EXPECT_EQ(sf::augment(photo, off, rng), photo);
}

TEST(Augment, RangeAndDeterminism) {
  sf::Rng a(7), b(7), src(2);
  auto photo = random_tensor(sf::Shape{3, 10, 10}, src, 0, 1);
  for (int i = 0; i < 5; ++i) {
    auto x = sf::augment(photo, {}, a), y = sf::augment(photo, {}, b);
    EXPECT_EQ(x, y);
    for (float v : x.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  sf::Rng r(3);
  for (int i = 0; i < 50; ++i) {
    auto p = sf::sample_augment({}, r);
    EXPECT_LE(std::abs(p.brightness), 0.2);
    for (double f : {p.contrast, p.saturation, p.sharpness}) {
      EXPECT_GE(f, 0.8);
      EXPECT_LE(f, 1.2);
    }
  }
}

TEST(Augment, EachOperationChangesTextureAsExpected) {
  sf::Rng rng(4);
  auto photo = random_tensor(sf::Shape{3, 8, 8}, rng, 0.3, 0.7);
  sf::AugmentParams p;
  p.contrast = 1.2;
  auto c = sf::apply_augment(photo, p);
  double spread_in = 0, spread_out = 0, mean = 0;
  for (float v : photo.data()) mean += v;
  mean /= photo.size();
  for (std::size_t i = 0; i < photo.size(); ++i) {
    spread_in += std::abs(photo[i] - mean);
    spread_out += std::abs(c[i] - mean);
  }
  EXPECT_NEAR(spread_out, 1.2 * spread_in, 1e-4);
  sf::AugmentParams desat;
  desat.saturation = 0.8;
  auto s = sf::apply_augment(photo, desat);
  auto luma = sf::to_gray(photo);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_NEAR(s(0, y, x) - luma(0, y, x), 0.8 * (photo(0, y, x) - luma(0, y, x)), 1e-6);
}

TEST(Schedule, DecadeDrops) {
  sf::TrainConfig cfg;
  cfg.iterations = 100;
  EXPECT_EQ(sf::learning_rate(cfg, 0), 1e-3);
  EXPECT_EQ(sf::learning_rate(cfg, 39), 1e-3);
  EXPECT_NEAR(sf::learning_rate(cfg, 40), 1e-4, 1e-18);
  EXPECT_NEAR(sf::learning_rate(cfg, 80), 1e-5, 1e-18);
  EXPECT_NEAR(sf::learning_rate(cfg, 99), 1e-5, 1e-18);
  cfg.batch = 0;
  EXPECT_THROW(cfg.validate(), sf::ShapeError);
}

TEST(Trainer, ZeroIterationsWritesOnlyInitialCheckpoint) {
  SmallSetup s;
  auto cfg = SmallSetup::config();
  cfg.iterations = 0;
  cfg.checkpoint_dir = sf::testing::scratch_dir("train_zero");
  sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
  tr.run();
  EXPECT_TRUE(tr.history().empty());
  std::size_t files = 0;
  for (auto& e : std::filesystem::directory_iterator(cfg.checkpoint_dir)) {
    ++files;
    EXPECT_EQ(e.path().filename(), "checkpoint_000000.skfw");
  }
  EXPECT_EQ(files, 1u);
}

TEST(Trainer, AlternationShapesAndFiniteLosses) {
  SmallSetup s;
  sf::Trainer tr(SmallSetup::config(), s.photos, s.store, s.extractor);
  std::vector<sf::Shape> shapes;
  for (std::size_t i = 0; i < tr.generator().params().size(); ++i) shapes.push_back(tr.generator().params()[i].value.shape());
  for (int i = 0; i < 3; ++i) {
    auto st = tr.step();
    EXPECT_EQ(st.g_checksum_before_d, st.g_checksum_after_d);
    EXPECT_EQ(st.d_checksum_before_g, st.d_checksum_after_g);
    for (double v : {st.row.l_p, st.row.l_gan_g, st.row.l_gan_d, st.row.l_tv}) EXPECT_TRUE(std::isfinite(v));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) EXPECT_EQ(tr.generator().params()[i].value.shape(), shapes[i]);
  EXPECT_EQ(tr.history().size(), 3u);
  EXPECT_EQ(tr.history().back().iter, 3u);
}

TEST(Trainer, DeterministicHistoryAndCheckpoints) {
  SmallSetup s;
  auto run = [&](const std::string& dir) {
    auto cfg = SmallSetup::config();
    cfg.checkpoint_dir = sf::testing::scratch_dir(dir);
    sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
    tr.run();
    return std::make_pair(sf::history_csv(tr.history()), sf::read_file(tr.checkpoint_path(3)));
  };
  auto a = run("det_a"), b = run("det_b");
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(Trainer, TenStepsIndependentOfThreadCount) {
  SmallSetup s;
  auto run = [&](const char* threads) {
    ::setenv("SKETCHFORGE_THREADS", threads, 1);
    auto cfg = SmallSetup::config();
    cfg.iterations = 10;
    sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
    tr.run();
    ::unsetenv("SKETCHFORGE_THREADS");
    return std::make_pair(sf::history_csv(tr.history()), sf::encode_checkpoint(tr.checkpoint()));
  };
  auto one = run("1"), four = run("4");
  EXPECT_EQ(one.first, four.first);
  EXPECT_EQ(one.second, four.second);
}

TEST(Trainer, CheckpointRoundTrip) {
  SmallSetup s;
  auto cfg = SmallSetup::config();
  cfg.iterations = 2;
  cfg.checkpoint_every = 1;
  cfg.checkpoint_dir = sf::testing::scratch_dir("train_ckpt");
  sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
  tr.run();
  for (std::size_t it : {0u, 1u, 2u}) EXPECT_TRUE(std::filesystem::exists(tr.checkpoint_path(it)));
  auto ck = sf::load_checkpoint(tr.checkpoint_path(2));
  EXPECT_EQ(ck.iteration, 2u);
  EXPECT_EQ(ck.generator.features, 4u);
  EXPECT_EQ(ck.g_params.step(), 2u);
  for (std::size_t i = 0; i < ck.g_params.size(); ++i) {
    EXPECT_EQ(ck.g_params[i].value, tr.generator().params()[i].value);
    EXPECT_EQ(ck.g_params[i].adam_v, tr.generator().params()[i].adam_v);
  }
  for (std::size_t i = 0; i < ck.d_params.size(); ++i) EXPECT_EQ(ck.d_params[i].value, tr.discriminator().params()[i].value);
  auto g = sf::generator_from(ck);
  EXPECT_EQ(g.forward(s.photos[0]), tr.generator().forward(s.photos[0]));

  std::string bytes = sf::encode_checkpoint(ck);
  bytes[4] = 9;
  try {
    sf::decode_checkpoint(bytes, "ck");
    FAIL();
  } catch (const sf::FormatError& e) {
    EXPECT_EQ(e.kind(), sf::FormatError::Kind::BadVersion);
  }
  EXPECT_THROW(sf::decode_checkpoint(sf::encode_weight_file(s.extractor.to_weight_file()), "w"), sf::FormatError);
}

TEST(Trainer, RejectsStoreMismatch) {
  SmallSetup s;
  auto cfg = SmallSetup::config();
  cfg.weights.layers = {2, 3};
  EXPECT_THROW(sf::Trainer(cfg, s.photos, s.store, s.extractor), sf::ShapeError);
  cfg = SmallSetup::config();
  cfg.patch_k = 1;
  EXPECT_THROW(sf::Trainer(cfg, s.photos, s.store, s.extractor), sf::ShapeError);
  EXPECT_THROW(sf::Trainer(SmallSetup::config(), {}, s.store, s.extractor), sf::ShapeError);
}

TEST(Trainer, NonFiniteLossAbortsAndKeepsLastCheckpoint) {
  SmallSetup s;
  auto cfg = SmallSetup::config();
  cfg.checkpoint_dir = sf::testing::scratch_dir("train_nan");
  sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
  tr.save_checkpoint();
  const std::string before = sf::read_file(tr.checkpoint_path(0));
  tr.generator().params().get("g.head.b").value[0] = NAN;
  EXPECT_THROW(tr.step(), sf::NumericError);
  EXPECT_EQ(sf::read_file(tr.checkpoint_path(0)), before);
  sf::load_checkpoint(tr.checkpoint_path(0));
}

TEST(Trainer, SelfMatchLossDecreasesWithoutAdversary) {
  SmallSetup s;
  auto cfg = SmallSetup::config();
  cfg.iterations = 30;
  cfg.batch = 3;
  cfg.generator = {8, 1};
  cfg.weights.lambda_adv = 0;
  cfg.weights.lambda_tv = 0;
  cfg.augment = {false, false, false, false};
  sf::Trainer tr(cfg, s.photos, s.store, s.extractor);
  tr.run();
  EXPECT_LT(tr.history().back().l_p, 0.8 * tr.history().front().l_p);
}
