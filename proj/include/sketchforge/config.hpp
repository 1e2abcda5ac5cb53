#pragma once

// Run configuration: a plain-text `key = value` file (one pair per line, `#`
// starts a comment) with a fixed schema. Unknown or repeated keys are errors.
// Command-line flags are applied on top through the same set() entry point.

#include <array>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/metrics.hpp"
#include "sketchforge/train.hpp"

namespace sketchforge {

// Bad invocation or configuration; the CLI maps it to exit status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  // Paths.
  std::filesystem::path photos, sketches, landmarks, store, checkpoints, weights;

  // Extractor used when no weight file is given.
  std::optional<std::uint64_t> random_weights_seed;
  std::array<std::size_t, 5> extractor_widths{64, 128, 256, 512, 512};

  TrainConfig train;
  BilateralParams bilateral;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{
        "photos", "sketches", "landmarks", "store", "checkpoints", "weights", "random_weights_seed",
        "extractor_widths", "batch", "lr_start", "lr_end", "iterations", "seed", "k_ref", "patch_k", "augment",
        "checkpoint_every", "generator_features", "generator_blocks", "discriminator_features",
        "discriminator_layers", "lambda_p", "lambda_adv", "lambda_tv", "pm_layers", "bilateral_sigma_spatial",
        "bilateral_sigma_range", "bilateral_radius"};
    return k;
  }

  void set(const std::string& key, const std::string& value);

  // Extractor from `weights` if set, else random weights from `random_weights_seed`.
  Extractor extractor() const {
    if (!weights.empty()) {
      if (!std::filesystem::is_regular_file(weights)) throw UsageError("weight file not found: " + weights.string());
      return load_weights(weights);
    }
    if (random_weights_seed) return Extractor::random(ExtractorSpec::vgg19(extractor_widths), *random_weights_seed);
    throw UsageError("no extractor configured (set 'weights' or 'random_weights_seed')");
  }

  const std::filesystem::path& require_dir(const std::string& key) const { return require(key, true); }
  const std::filesystem::path& require_file(const std::string& key) const { return require(key, false); }

 private:
  const std::filesystem::path& path_for(const std::string& key) const {
    if (key == "photos") return photos;
    if (key == "sketches") return sketches;
    if (key == "landmarks") return landmarks;
    if (key == "store") return store;
    if (key == "checkpoints") return checkpoints;
    if (key == "weights") return weights;
    throw UsageError("not a path key: " + key);
  }

  const std::filesystem::path& require(const std::string& key, bool dir) const {
    const auto& p = path_for(key);
    if (p.empty()) throw UsageError("missing " + key + " path (set '" + key + "')");
    if (dir ? !std::filesystem::is_directory(p) : !std::filesystem::is_regular_file(p))
      throw UsageError(key + " " + (dir ? "directory" : "file") + " not found: " + p.string());
    return p;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& raw) {
  using detail::parse_number;
  const std::string value = detail::trim(raw);
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "photos") photos = value;
  else if (key == "sketches") sketches = value;
  else if (key == "landmarks") landmarks = value;
  else if (key == "store") store = value;
  else if (key == "checkpoints") checkpoints = value;
  else if (key == "weights") weights = value;
  else if (key == "random_weights_seed") random_weights_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "extractor_widths") {
    const auto items = detail::split_list(value);
    if (items.size() != 5) throw UsageError("config key 'extractor_widths': expected 5 comma-separated widths");
    for (std::size_t i = 0; i < 5; ++i) extractor_widths[i] = parse_number<std::size_t>(key, items[i]);
  } else if (key == "batch") train.batch = size();
  else if (key == "lr_start") train.lr_start = real();
  else if (key == "lr_end") train.lr_end = real();
  else if (key == "iterations") train.iterations = size();
  else if (key == "seed") train.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "k_ref") train.k_ref = size();
  else if (key == "patch_k") train.patch_k = size();
  else if (key == "augment") {
    const bool on = detail::parse_bool(key, value);
    train.augment.brightness = train.augment.contrast = train.augment.saturation = train.augment.sharpness = on;
  } else if (key == "checkpoint_every") train.checkpoint_every = size();
  else if (key == "generator_features") train.generator.features = size();
  else if (key == "generator_blocks") train.generator.blocks = size();
  else if (key == "discriminator_features") train.discriminator.features = size();
  else if (key == "discriminator_layers") train.discriminator.strided_layers = size();
  else if (key == "lambda_p") train.weights.lambda_p = real();
  else if (key == "lambda_adv") train.weights.lambda_adv = real();
  else if (key == "lambda_tv") train.weights.lambda_tv = real();
  else if (key == "pm_layers") {
    std::vector<int> layers;
    for (const auto& item : detail::split_list(value)) {
      try {
        layers.push_back(item.rfind("relu", 0) == 0 ? parse_tap(item) : parse_number<int>(key, item));
      } catch (const ShapeError& e) {
        throw UsageError("config key 'pm_layers': " + std::string(e.what()));
      }
      if (layers.back() < 1 || layers.back() > 5) throw UsageError("config key 'pm_layers': layer out of range 1..5");
    }
    if (layers.empty()) throw UsageError("config key 'pm_layers': empty layer list");
    train.weights.layers = layers;
  } else if (key == "bilateral_sigma_spatial") bilateral.sigma_spatial = real();
  else if (key == "bilateral_sigma_range") bilateral.sigma_range = real();
  else if (key == "bilateral_radius") bilateral.radius = size();
  else throw UsageError("unknown config key '" + key + "'");
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>") {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw UsageError(source + ":" + std::to_string(lineno) + ": repeated key '" + key + "'");
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw UsageError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw UsageError("config file not found: " + path.string());
  return parse_run_config(read_file(path), path.string());
}

}  // namespace sketchforge
