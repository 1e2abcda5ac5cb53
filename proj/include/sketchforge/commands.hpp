#pragma once

// Subcommand bodies shared by the CLI and its tests. Each takes a validated
// configuration, writes its outputs atomically and reports progress through a
// log callback. Bad invocations raise UsageError; data problems raise the
// library's other Error types.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sketchforge/config.hpp"
#include "sketchforge/image.hpp"
#include "sketchforge/metrics.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/preprocess.hpp"
#include "sketchforge/train.hpp"

namespace sketchforge {

using Log = std::function<void(const std::string&)>;

namespace detail {

inline void emit(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

inline bool is_pnm(const std::filesystem::path& p) { return p.extension() == ".pgm" || p.extension() == ".ppm"; }

// Sorted .pgm/.ppm files of a directory, or the single file itself.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return {path};
  if (!fs::is_directory(path)) throw UsageError("no such image file or directory: " + path.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && is_pnm(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::filesystem::path find_by_stem(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* ext : {".pgm", ".ppm"}) {
    auto p = dir / (stem + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return {};
}

}  // namespace detail

// ---------------------------------------------------------------- prep

// Aligns every photo with a landmark file and writes manifest.txt listing
// "aligned <stem>" and "skipped <stem>" lines.
inline PrepReport cmd_prep(const std::filesystem::path& photos, const std::filesystem::path& landmarks,
                           const std::filesystem::path& out, const Log& log = {}) {
  if (!std::filesystem::is_directory(photos)) throw UsageError("photo directory not found: " + photos.string());
  if (!std::filesystem::is_directory(landmarks))
    throw UsageError("landmark directory not found: " + landmarks.string());
  if (out.empty()) throw UsageError("missing output directory");
  auto report = prepare_directory(photos, landmarks, out, [&](const std::string& w) { detail::emit(log, "warning: " + w); });
  std::string manifest;
  for (const auto& s : report.aligned) manifest += "aligned " + s + "\n";
  for (const auto& s : report.skipped) manifest += "skipped " + s + "\n";
  write_file_atomic(out / "manifest.txt", manifest);
  detail::emit(log, "aligned " + std::to_string(report.aligned.size()) + ", skipped " +
                        std::to_string(report.skipped.size()));
  return report;
}

// ---------------------------------------------------------------- build-ref

// Pairs photos/<stem> with sketches/<stem> and saves the reference store.
inline ReferenceStore cmd_build_ref(const RunConfig& cfg, const Log& log = {}) {
  const auto& photos = cfg.require_dir("photos");
  const auto& sketches = cfg.require_dir("sketches");
  if (cfg.store.empty()) throw UsageError("missing store path (set 'store')");
  const Extractor extractor = cfg.extractor();
  std::vector<ReferenceInput> inputs;
  for (const auto& p : detail::list_images(photos)) {
    const auto sk = detail::find_by_stem(sketches, p.stem().string());
    if (sk.empty()) throw FormatError(FormatError::Kind::Io, "no sketch for reference photo " + p.filename().string());
    inputs.push_back({read_pnm(p), read_pnm(sk), p.stem().string()});
  }
  if (inputs.empty()) throw UsageError("no reference photos in " + photos.string());
  ReferenceStore store = build_reference_store(inputs, extractor, cfg.train.weights.layers, cfg.train.patch_k);
  save_store(cfg.store, store);
  std::string taps;
  for (int t : store.taps) taps += (taps.empty() ? "" : ",") + tap_name(t);
  detail::emit(log, "stored " + std::to_string(store.size()) + " pairs at " + taps + " (k=" +
                        std::to_string(store.k) + ") in " + cfg.store.string());
  return store;
}

// ---------------------------------------------------------------- match

struct MatchSummary {
  std::vector<std::string> preselected;  // pair ids, best first
  MatchResult match;
  double mean_score = 0.0;
};

// Matches one photo against the store at `layer`; with dump set, writes the
// naive pixel-level reconstruction of the match field as a PGM.
inline MatchSummary cmd_match(const RunConfig& cfg, const std::filesystem::path& photo, int layer,
                              const std::filesystem::path& dump = {}, const Log& log = {}) {
  const auto& store_path = cfg.require_file("store");
  if (!std::filesystem::is_regular_file(photo)) throw UsageError("photo not found: " + photo.string());
  const ReferenceStore store = load_store(store_path);
  if (std::find(store.taps.begin(), store.taps.end(), layer) == store.taps.end())
    throw UsageError("store has no features at " + tap_name(layer));
  const Extractor extractor = cfg.extractor();
  const Tensor img = read_pnm(photo);
  const FeatureSet fs = extract(extractor, img, with_signature_tap({layer}));
  const Preselection pre = preselect_references(preselect_signature(fs), store, cfg.train.k_ref);
  MatchSummary s;
  for (auto i : pre.indices) s.preselected.push_back(store.pairs[i].id);
  s.match = match_patches(extract_patches(fs.at(layer), store.k, layer), store, pre.indices, layer);
  for (const auto& m : s.match.matches) s.mean_score += m.score;
  s.mean_score /= static_cast<double>(std::max<std::size_t>(1, s.match.matches.size()));
  std::ostringstream msg;
  msg << s.match.matches.size() << " patches at " << tap_name(layer) << ", mean cosine " << s.mean_score
      << ", preselected";
  for (const auto& id : s.preselected) msg << ' ' << id;
  detail::emit(log, msg.str());
  if (!dump.empty()) {
    const Tensor recon = naive_reconstruction(s.match, store, img.dim(1), img.dim(2));
    write_file_atomic(dump, encode_pnm(recon));
    detail::emit(log, "wrote " + dump.string());
  }
  return s;
}

// ---------------------------------------------------------------- train

// Trains on every photo under `photos`, checkpointing into `checkpoints` and
// writing history.csv there.
inline std::vector<HistoryRow> cmd_train(const RunConfig& cfg, const Log& log = {}) {
  const auto& store_path = cfg.require_file("store");
  const auto& photos_dir = cfg.require_dir("photos");
  if (cfg.checkpoints.empty()) throw UsageError("missing checkpoints path (set 'checkpoints')");
  try {
    cfg.train.validate();
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
  const ReferenceStore store = load_store(store_path);
  const Extractor extractor = cfg.extractor();
  std::vector<Tensor> photos;
  for (const auto& p : detail::list_images(photos_dir)) photos.push_back(read_pnm(p));
  if (photos.empty()) throw UsageError("no training photos in " + photos_dir.string());

  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = cfg.checkpoints;
  Trainer trainer(tc, std::move(photos), store, extractor);
  const std::size_t every = std::max<std::size_t>(1, tc.iterations / 20);
  auto write_history = [&] {
    std::filesystem::create_directories(tc.checkpoint_dir);
    write_file_atomic(tc.checkpoint_dir / "history.csv", history_csv(trainer.history()));
  };
  try {
    trainer.run([&](const StepStats& s) {
      if (s.row.iter % every == 0 || s.row.iter == tc.iterations) {
        std::ostringstream msg;
        msg << "iter " << s.row.iter << " L_p " << s.row.l_p << " L_GAN_G " << s.row.l_gan_g << " L_GAN_D "
            << s.row.l_gan_d << " L_tv " << s.row.l_tv << " lr " << s.row.lr;
        detail::emit(log, msg.str());
      }
    });
  } catch (const NumericError&) {
    write_history();
    throw;
  }
  write_history();
  return trainer.history();
}

// ---------------------------------------------------------------- synth

// One forward pass per photo; writes <out>/<stem>.pgm.
inline std::vector<std::filesystem::path> cmd_synth(const std::filesystem::path& checkpoint,
                                                    const std::filesystem::path& inputs,
                                                    const std::filesystem::path& out, const Log& log = {}) {
  if (!std::filesystem::is_regular_file(checkpoint)) throw UsageError("checkpoint not found: " + checkpoint.string());
  if (out.empty()) throw UsageError("missing output directory");
  const auto files = detail::list_images(inputs);
  Generator<float> gen = generator_from(load_checkpoint(checkpoint));
  std::filesystem::create_directories(out);
  std::vector<std::filesystem::path> written;
  for (const auto& f : files) {
    const auto dst = out / (f.stem().string() + ".pgm");
    write_file_atomic(dst, encode_pnm(gen.forward(read_pnm(f))));
    written.push_back(dst);
  }
  detail::emit(log, "synthesized " + std::to_string(written.size()) + " sketches into " + out.string());
  return written;
}

// ---------------------------------------------------------------- eval

// Pair list: one "synthesized reference" path pair per line, relative paths
// resolved against the list's directory, '#' comments allowed. Pairs are named
// by the synthesized file's stem.
inline std::vector<EvalPair> read_eval_pairs(const std::filesystem::path& list) {
  if (!std::filesystem::is_regular_file(list)) throw UsageError("pair list not found: " + list.string());
  const auto base = list.parent_path();
  std::istringstream in(read_file(list));
  std::string line;
  std::vector<EvalPair> pairs;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream row(line);
    std::string a, b, extra;
    if (!(row >> a)) continue;
    if (!(row >> b) || (row >> extra))
      throw UsageError(list.string() + ":" + std::to_string(lineno) + ": expected '<synthesized> <reference>'");
    auto resolve = [&](const std::string& s) {
      std::filesystem::path p(s);
      return p.is_absolute() ? p : base / p;
    };
    const auto sp = resolve(a), rp = resolve(b);
    pairs.push_back({sp.stem().string(), to_gray(read_pnm(sp)), to_gray(read_pnm(rp))});
  }
  return pairs;
}

inline MetricReport cmd_eval(const std::filesystem::path& list, bool smooth, const BilateralParams& bp = {},
                             const Log& log = {}) {
  const auto pairs = read_eval_pairs(list);
  if (pairs.empty()) throw UsageError("pair list is empty: " + list.string());
  auto rep = evaluate_pairs(pairs, smooth, bp);
  detail::emit(log, "evaluated " + std::to_string(rep.pairs.size()) + " pairs");
  return rep;
}

}  // namespace sketchforge
