// sketchforge command-line interface. Exit status: 0 success, 1 runtime
// failure, 2 usage error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sketchforge/sketchforge.hpp"

namespace sf = sketchforge;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

// --config FILE, repeated --set key=value, and per-command shortcuts for
// individual keys. Precedence: file, then --set, then shortcuts.
struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> shortcuts;

  void attach(CLI::App* sub, const std::vector<std::pair<std::string, std::string>>& keys) {
    sub->add_option("--config", file, "key = value configuration file");
    sub->add_option("--set", sets, "override one config key (key=value), repeatable");
    for (const auto& [key, help] : keys) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      sub->add_option_function<std::string>(flag, [this, key = key](const std::string& v) { shortcuts[key] = v; }, help);
    }
  }

  sf::RunConfig resolve() const {
    sf::RunConfig cfg = file.empty() ? sf::RunConfig{} : sf::load_run_config(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw sf::UsageError("--set expects key=value, got '" + s + "'");
      cfg.set(sf::detail::trim(s.substr(0, eq)), s.substr(eq + 1));
    }
    for (const auto& [k, v] : shortcuts) cfg.set(k, v);
    return cfg;
  }
};

const std::vector<std::pair<std::string, std::string>> kExtractorKeys{
    {"weights", "extractor weight file"}, {"random_weights_seed", "use random extractor weights with this seed"}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face sketch synthesis from photos with patch-matched pseudo sketch features"};
  app.require_subcommand(1);
  std::optional<std::size_t> threads;
  app.add_option("--threads", threads, "worker cap (sets SKETCHFORGE_THREADS)")->check(CLI::PositiveNumber);

  // prep
  auto* prep = app.add_subcommand("prep", "align photos to 250x200 crops using 68-point landmarks");
  std::string prep_photos, prep_landmarks, prep_out;
  prep->add_option("--photos", prep_photos, "directory of .pgm/.ppm photos")->required();
  prep->add_option("--landmarks", prep_landmarks, "directory of <stem>.txt landmark files")->required();
  prep->add_option("--out", prep_out, "output directory")->required();

  // build-ref
  auto* build = app.add_subcommand("build-ref", "precompute the reference feature store");
  ConfigOptions build_cfg;
  auto build_keys = kExtractorKeys;
  build_keys.insert(build_keys.end(), {{"photos", "reference photo directory"},
                                       {"sketches", "reference sketch directory"},
                                       {"store", "output store file"},
                                       {"pm_layers", "matched layers, e.g. 3,4,5"},
                                       {"patch_k", "patch size"}});
  build_cfg.attach(build, build_keys);

  // match
  auto* match = app.add_subcommand("match", "match one photo against the store");
  ConfigOptions match_cfg;
  auto match_keys = kExtractorKeys;
  match_keys.insert(match_keys.end(), {{"store", "reference store file"}, {"k_ref", "preselected pairs"}});
  match_cfg.attach(match, match_keys);
  std::string match_photo, match_dump;
  int match_layer = 3;
  match->add_option("--photo", match_photo, "query photo")->required();
  match->add_option("--layer", match_layer, "layer to match (1..5)")->check(CLI::Range(1, 5));
  match->add_option("--dump-pixels", match_dump, "write the pixel-level reconstruction of the match field (PGM)");

  // train
  auto* train = app.add_subcommand("train", "train the generator");
  ConfigOptions train_cfg;
  auto train_keys = kExtractorKeys;
  train_keys.insert(train_keys.end(), {{"store", "reference store file"},
                                       {"photos", "training photo directory"},
                                       {"checkpoints", "checkpoint directory"},
                                       {"iterations", "training iterations"},
                                       {"batch", "batch size"},
                                       {"seed", "random seed"}});
  train_cfg.attach(train, train_keys);

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize sketches with a trained generator");
  std::string synth_ckpt, synth_photos, synth_out;
  synth->add_option("--checkpoint", synth_ckpt, "checkpoint file")->required();
  synth->add_option("--photos", synth_photos, "photo file or directory")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "SSIM/FSIM of synthesized vs reference sketches");
  ConfigOptions eval_cfg;
  eval_cfg.attach(eval, {{"bilateral_sigma_spatial", "bilateral spatial sigma (px)"},
                         {"bilateral_sigma_range", "bilateral range sigma"},
                         {"bilateral_radius", "bilateral window radius (px)"}});
  std::string eval_pairs, eval_out;
  bool eval_smooth = false;
  eval->add_option("--pairs", eval_pairs, "list of '<synthesized> <reference>' lines")->required();
  eval->add_flag("--smooth", eval_smooth, "also score bilateral-smoothed synthesized sketches");
  eval->add_option("--out", eval_out, "CSV output file (default stdout)");

  // selfcheck
  auto* selfcheck = app.add_subcommand("selfcheck", "run gradient checks and the matcher oracle");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (threads) ::setenv("SKETCHFORGE_THREADS", std::to_string(*threads).c_str(), 1);

  try {
    if (*prep) {
      sf::cmd_prep(prep_photos, prep_landmarks, prep_out, log_line);
    } else if (*build) {
      sf::cmd_build_ref(build_cfg.resolve(), log_line);
    } else if (*match) {
      sf::cmd_match(match_cfg.resolve(), match_photo, match_layer, match_dump, log_line);
    } else if (*train) {
      sf::cmd_train(train_cfg.resolve(), log_line);
    } else if (*synth) {
      sf::cmd_synth(synth_ckpt, synth_photos, synth_out, log_line);
    } else if (*eval) {
      const auto cfg = eval_cfg.resolve();
      const auto csv = sf::metrics_csv(sf::cmd_eval(eval_pairs, eval_smooth, cfg.bilateral, log_line));
      if (eval_out.empty()) std::cout << csv;
      else sf::write_file_atomic(eval_out, csv);
    } else if (*selfcheck) {
      bool ok = true;
      sf::run_selfcheck([&](const sf::SelfCheckItem& it) {
        std::cout << (it.passed ? "PASS " : "FAIL ") << it.name << ": " << it.detail << std::endl;
        ok = ok && it.passed;
      });
      return ok ? kOk : kFailure;
    }
  } catch (const sf::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
