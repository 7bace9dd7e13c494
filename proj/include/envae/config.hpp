#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "envae/dataset.hpp"
#include "envae/training.hpp"

namespace envae {

enum class TcSource { mean, sample };

struct RunConfig {
  // Data: a CSV file, or the synthetic generator when `data` is empty.
  std::string data;
  std::string label = "label";
  SyntheticSpec synthetic;

  TrainConfig train;
  CvOptions cv;
  ClassifierConfig classifier;
  std::size_t classifier_seeds = 5;
  LatentReduction latent_reduction = LatentReduction::poe_full;

  TcSource tc_source = TcSource::mean;
  std::string tc_split = "all";  // all | train | valid | test
  double tc_jitter = 1e-6;

  std::vector<std::size_t> sweep_experts{1, 2, 4, 6, 8};

  // Resolves dependent defaults and checks consistency; throws ConfigError.
  void finalize();
};

// Ordered (key, value) pairs covering every setting, in the file grammar.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& cfg);
std::string config_to_string(const RunConfig& cfg);

// Applies one key=value setting. Throws ConfigError for an unknown key or
// an unparsable value.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" lines; '#' starts a comment.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

// File settings (if any) and then overrides, in order, then finalize().
RunConfig parse_config(const std::filesystem::path* file,
                       const std::vector<std::pair<std::string, std::string>>& overrides = {});

// Loads the CSV or generates the synthetic dataset.
Dataset load_dataset(const RunConfig& cfg);

// One-line description of every key and its default.
std::string config_help();

}  // namespace envae
