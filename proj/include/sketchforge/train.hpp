#pragma once

// Alternating LSGAN training of the generator against pseudo sketch features.
// Each iteration updates the discriminator once on L_D and then the generator
// once on L_G. Pseudo targets are recomputed from the augmented photos and are
// constants within the iteration.
//
// Checkpoints use the weight-file container: generator convs then
// discriminator convs (parameter order), followed by tagged blocks
//   ARCH: u32 G features | u32 G blocks | u32 D features | u32 D strided layers
//         | u64 completed iterations
//   ADMG, ADMD: u64 Adam step | per parameter: f32 first moments, f32 second
//         moments (extents implied by the conv shapes)

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sketchforge/augment.hpp"
#include "sketchforge/autodiff.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/losses.hpp"
#include "sketchforge/nets.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/rng.hpp"

namespace sketchforge {

struct TrainConfig {
  std::size_t batch = 6;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  std::size_t iterations = 1000;
  std::uint64_t seed = 1;
  std::size_t k_ref = 5;
  std::size_t patch_k = 3;
  AugmentConfig augment;
  LossWeights weights;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  AdamOptions adam;
  std::size_t checkpoint_every = 0;  // 0: initial and final checkpoints only
  std::filesystem::path checkpoint_dir;

  void validate() const {
    if (batch < 1) throw ShapeError("train: batch must be >= 1");
    if (!(lr_start > 0) || !(lr_end > 0) || lr_end > lr_start) throw ShapeError("train: need 0 < lr_end <= lr_start");
    if (k_ref < 1) throw ShapeError("train: k_ref must be >= 1");
    if (patch_k % 2 == 0) throw ShapeError("train: patch_k must be odd");
    if (generator.features < 1) throw ShapeError("train: generator needs at least one feature channel");
    if (discriminator.features < 1) throw ShapeError("train: discriminator needs at least one feature channel");
    weights.validate();
  }
};

// Decade drops at 40% and 80% of the run, never below lr_end.
inline double learning_rate(const TrainConfig& cfg, std::size_t iter) {
  double lr = cfg.lr_start;
  const double t = cfg.iterations ? static_cast<double>(iter) / static_cast<double>(cfg.iterations) : 0.0;
  if (t >= 0.4) lr *= 0.1;
  if (t >= 0.8) lr *= 0.1;
  return std::max(lr, cfg.lr_end);
}

struct HistoryRow {
  std::size_t iter = 0;
  double l_p = 0, l_gan_g = 0, l_gan_d = 0, l_tv = 0, lr = 0;
};

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream out;
  out << "iter,L_p,L_GAN_G,L_GAN_D,L_tv,lr\n" << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.iter << ',' << r.l_p << ',' << r.l_gan_g << ',' << r.l_gan_d << ',' << r.l_tv << ',' << r.lr << '\n';
  }
  return out.str();
}

template <class T>
struct GeneratorLoss {
  Var<T> total;
  double l_p = 0, l_gan_g = 0, l_tv = 0;
};

// L_G over a batch of generated sketches. L_p and L_tv are averaged over the
// batch; the LSGAN term averages over batch and score cells. The discriminator
// is frozen. A zero adversarial weight skips the discriminator on the tape and
// only reports the value.
template <class T>
GeneratorLoss<T> generator_loss(Tape<T>& tape, const std::vector<Var<T>>& sketches,
                                const std::vector<const PseudoFeatures*>& pseudo, Discriminator<T>& disc,
                                const ExtractorWeights<T>& extractor, const LossWeights& w, std::size_t k) {
  if (sketches.empty() || sketches.size() != pseudo.size()) throw ShapeError("generator_loss: batch mismatch");
  const double inv_b = 1.0 / static_cast<double>(sketches.size());
  const std::set<int> taps(w.layers.begin(), w.layers.end());
  std::vector<std::pair<double, Var<T>>> terms;
  GeneratorLoss<T> out;
  std::vector<Var<T>> scores;
  std::vector<BasicTensor<T>> score_values;
  for (std::size_t b = 0; b < sketches.size(); ++b) {
    auto feats = tape_features(tape, extractor, sketches[b], taps);
    for (int l : w.layers) {
      auto it = pseudo[b]->find(l);
      if (it == pseudo[b]->end()) throw ShapeError("generator_loss: no pseudo feature at " + tap_name(l));
      Var<T> lp = ad::pseudo_feature_loss(feats.at(l), it->second.patches, k);
      out.l_p += inv_b * lp.scalar();
      if (w.lambda_p != 0) terms.emplace_back(w.lambda_p * inv_b, lp);
    }
    Var<T> tv = ad::tv_loss(sketches[b]);
    out.l_tv += inv_b * tv.scalar();
    if (w.lambda_tv != 0) terms.emplace_back(w.lambda_tv * inv_b, tv);
    if (w.lambda_adv != 0) {
      scores.push_back(disc.forward(tape, sketches[b], true));
    } else {
      score_values.push_back(disc.forward(sketches[b].value()));
    }
  }
  if (w.lambda_adv != 0) {
    Var<T> g = ad::lsgan_g_loss(scores);
    out.l_gan_g = g.scalar();
    terms.emplace_back(w.lambda_adv, g);
  } else {
    out.l_gan_g = lsgan_g_loss<T>(std::span<const BasicTensor<T>>(score_values));
  }
  generator_total(out.l_p, out.l_gan_g, out.l_tv, w);
  if (terms.empty()) terms.emplace_back(0.0, sketches.front().tape()->constant(ad::scalar<T>(0.0)));
  out.total = ad::weighted_sum(terms);
  return out;
}

struct Checkpoint {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  std::size_t iteration = 0;
  ParamSet<float> g_params;
  ParamSet<float> d_params;
};

namespace detail {

inline void append_convs(WeightFile& file, const ParamSet<float>& params) {
  for (std::size_t i = 0; i + 1 < params.size(); i += 2) file.convs.push_back({params[i].value, params[i + 1].value});
}

inline std::string adam_block(const ParamSet<float>& params) {
  ByteWriter w;
  w.u64(params.step());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.f32s<float>(params[i].adam_m.data());
    w.f32s<float>(params[i].adam_v.data());
  }
  return w.buffer();
}

inline void load_params(ParamSet<float>& params, const std::vector<ConvWeights>& convs, std::size_t first,
                        const std::string* adam, const std::string& source, const char* net) {
  if (first + params.size() / 2 > convs.size()) {
    throw FormatError(FormatError::Kind::ShapeMismatch, source + ": too few conv layers for the " + net);
  }
  for (std::size_t i = 0; i < params.size(); i += 2) {
    const ConvWeights& c = convs[first + i / 2];
    if (c.kernel.shape() != params[i].value.shape() || c.bias.shape() != params[i + 1].value.shape()) {
      throw FormatError(FormatError::Kind::ShapeMismatch, source + ": " + net + " conv " + std::to_string(i / 2) +
                                                              " is " + to_string(c.kernel.shape()) + ", expected " +
                                                              to_string(params[i].value.shape()));
    }
    params[i].value = c.kernel;
    params[i + 1].value = c.bias;
  }
  if (!adam) return;
  ByteReader r(*adam, source + " Adam state");
  params.step() = r.u64();
  for (std::size_t i = 0; i < params.size(); ++i) {
    r.f32s(params[i].adam_m.data());
    r.f32s(params[i].adam_v.data());
  }
  if (!r.at_end()) throw FormatError(FormatError::Kind::Malformed, source + ": trailing bytes in Adam state");
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  WeightFile file;
  detail::append_convs(file, ck.g_params);
  detail::append_convs(file, ck.d_params);
  ByteWriter arch;
  arch.u32(static_cast<std::uint32_t>(ck.generator.features));
  arch.u32(static_cast<std::uint32_t>(ck.generator.blocks));
  arch.u32(static_cast<std::uint32_t>(ck.discriminator.features));
  arch.u32(static_cast<std::uint32_t>(ck.discriminator.strided_layers));
  arch.u64(ck.iteration);
  file.blocks.emplace_back("ARCH", arch.buffer());
  file.blocks.emplace_back("ADMG", detail::adam_block(ck.g_params));
  file.blocks.emplace_back("ADMD", detail::adam_block(ck.d_params));
  return encode_weight_file(file);
}

inline Checkpoint decode_checkpoint(std::string_view data, const std::string& source) {
  WeightFile file = decode_weight_file(data, source);
  const std::string* arch = file.block("ARCH");
  if (!arch) throw FormatError(FormatError::Kind::Malformed, source + ": not a checkpoint (no ARCH block)");
  ByteReader r(*arch, source + " ARCH block");
  Checkpoint ck;
  ck.generator.features = r.u32();
  ck.generator.blocks = r.u32();
  ck.discriminator.features = r.u32();
  ck.discriminator.strided_layers = r.u32();
  ck.iteration = r.u64();
  if (ck.generator.features == 0 || ck.discriminator.features == 0) {
    throw FormatError(FormatError::Kind::Malformed, source + ": zero network width in ARCH block");
  }
  ck.g_params = Generator<float>(ck.generator, 0).params();
  ck.d_params = Discriminator<float>(ck.discriminator, 0).params();
  const std::size_t g_convs = ck.g_params.size() / 2;
  if (file.convs.size() != g_convs + ck.d_params.size() / 2) {
    throw FormatError(FormatError::Kind::ShapeMismatch,
                      source + ": checkpoint holds " + std::to_string(file.convs.size()) +
                          " conv layers, architecture needs " + std::to_string(g_convs + ck.d_params.size() / 2));
  }
  detail::load_params(ck.g_params, file.convs, 0, file.block("ADMG"), source, "generator");
  detail::load_params(ck.d_params, file.convs, g_convs, file.block("ADMD"), source, "discriminator");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

inline Generator<float> generator_from(const Checkpoint& ck) {
  Generator<float> g(ck.generator, 0);
  g.params() = ck.g_params;
  return g;
}

struct StepStats {
  HistoryRow row;
  double g_checksum_before_d = 0, g_checksum_after_d = 0;  // generator untouched by the D step
  double d_checksum_before_g = 0, d_checksum_after_g = 0;  // discriminator untouched by the G step
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<Tensor> trainset, const ReferenceStore& store, const Extractor& extractor)
      : cfg_(std::move(cfg)),
        trainset_(std::move(trainset)),
        store_(store),
        extractor_(extractor),
        weights_(ExtractorWeights<float>::from(extractor)),
        rng_(cfg_.seed),
        gen_(cfg_.generator, cfg_.seed ^ 0x9e3779b97f4a7c15ULL),
        disc_(cfg_.discriminator, cfg_.seed ^ 0xc2b2ae3d27d4eb4fULL) {
    cfg_.validate();
    if (trainset_.empty()) throw ShapeError("train: empty training set");
    if (store_.k != cfg_.patch_k) {
      throw ShapeError("train: store patch size " + std::to_string(store_.k) + " != configured " +
                       std::to_string(cfg_.patch_k));
    }
    for (int l : cfg_.weights.layers) {
      if (std::find(store_.taps.begin(), store_.taps.end(), l) == store_.taps.end()) {
        throw ShapeError("train: loss layer " + tap_name(l) + " is not in the reference store");
      }
    }
    for (const auto& p : trainset_) {
      if (p.rank() != 3 || (p.dim(0) != 1 && p.dim(0) != 3)) throw ShapeError("train: photos must be 1 or 3 x H x W");
    }
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  std::size_t iteration() const noexcept { return iter_; }
  const std::vector<HistoryRow>& history() const noexcept { return history_; }
  Generator<float>& generator() noexcept { return gen_; }
  Discriminator<float>& discriminator() noexcept { return disc_; }

  StepStats step() {
    StepStats stats;
    const double lr = learning_rate(cfg_, iter_);
    const std::size_t B = cfg_.batch;
    const std::set<int> photo_taps = with_signature_tap(cfg_.weights.layers);

    std::vector<Tensor> photos(B);
    for (std::size_t b = 0; b < B; ++b) {
      photos[b] = cfg_.augment.any() ? augment(trainset_[next_index()], cfg_.augment, rng_) : trainset_[next_index()];
    }
    std::vector<PseudoFeatures> pseudo(B);
    parallel_for(B, [&](std::size_t b) {
      pseudo[b] = pseudo_sketch_features(extract(extractor_, photos[b], photo_taps), store_, cfg_.k_ref,
                                         cfg_.weights.layers);
    });

    Tape<float> g_tape;
    std::vector<Var<float>> fakes;
    for (const auto& p : photos) fakes.push_back(gen_.forward(g_tape, g_tape.constant(p)));

    // Discriminator step on real reference sketches vs detached generator output.
    stats.g_checksum_before_d = gen_.params().checksum();
    {
      Tape<float> d_tape;
      std::vector<Var<float>> real, fake;
      for (std::size_t b = 0; b < B; ++b) {
        const Tensor& sketch = store_.pairs[rng_.index(store_.size())].sketch;
        real.push_back(disc_.forward(d_tape, d_tape.constant_ref(sketch)));
        fake.push_back(disc_.forward(d_tape, d_tape.constant_ref(fakes[b].value())));
      }
      Var<float> l_d = ad::lsgan_d_loss(real, fake);
      stats.row.l_gan_d = discriminator_total(l_d.scalar());
      disc_.params().zero_grad();
      d_tape.backward(l_d);
      adam_step(disc_.params(), lr, cfg_.adam);
    }
    stats.g_checksum_after_d = gen_.params().checksum();

    // Generator step against the updated, frozen discriminator.
    stats.d_checksum_before_g = disc_.params().checksum();
    std::vector<const PseudoFeatures*> targets;
    for (const auto& p : pseudo) targets.push_back(&p);
    auto loss = generator_loss(g_tape, fakes, targets, disc_, weights_, cfg_.weights, cfg_.patch_k);
    gen_.params().zero_grad();
    g_tape.backward(loss.total);
    adam_step(gen_.params(), lr, cfg_.adam);
    stats.d_checksum_after_g = disc_.params().checksum();

    ++iter_;
    stats.row.iter = iter_;
    stats.row.l_p = loss.l_p;
    stats.row.l_gan_g = loss.l_gan_g;
    stats.row.l_tv = loss.l_tv;
    stats.row.lr = lr;
    history_.push_back(stats.row);
    return stats;
  }

  Checkpoint checkpoint() const {
    return {cfg_.generator, cfg_.discriminator, iter_, gen_.params(), disc_.params()};
  }

  std::filesystem::path checkpoint_path(std::size_t iter) const {
    std::ostringstream name;
    name << "checkpoint_" << std::setw(6) << std::setfill('0') << iter << ".skfw";
    return cfg_.checkpoint_dir / name.str();
  }

  void save_checkpoint() const {
    if (cfg_.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg_.checkpoint_dir);
    write_file_atomic(checkpoint_path(iter_), encode_checkpoint(checkpoint()));
  }

  // Runs the configured iterations, checkpointing at iteration 0, every
  // checkpoint_every iterations and at the end. A non-finite loss stops the run;
  // checkpoints already on disk are left as they are.
  void run(const std::function<void(const StepStats&)>& on_step = {}) {
    save_checkpoint();
    while (iter_ < cfg_.iterations) {
      const StepStats stats = step();
      if (on_step) on_step(stats);
      const bool cadence = cfg_.checkpoint_every && iter_ % cfg_.checkpoint_every == 0;
      if (cadence || iter_ == cfg_.iterations) save_checkpoint();
    }
  }

 private:
  std::size_t next_index() {
    if (cursor_ == order_.size()) {
      order_.resize(trainset_.size());
      std::iota(order_.begin(), order_.end(), 0);
      for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.index(i)]);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  TrainConfig cfg_;
  std::vector<Tensor> trainset_;
  const ReferenceStore& store_;
  const Extractor& extractor_;
  ExtractorWeights<float> weights_;
  Rng rng_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t iter_ = 0;
  std::vector<HistoryRow> history_;
};

}  // namespace sketchforge
