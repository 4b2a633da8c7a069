#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "boxformer/model.hpp"
#include "boxformer/trainer.hpp"

namespace boxformer {

struct RunPaths {
  std::string data_a;
  std::string data_b;
  std::string out;
};

/// Everything a training run needs, serialized as one JSON document with
/// the sections scale, backbone, aggregator, nce, weights, train, paths.
struct RunConfig {
  std::string scale = "desk";  // "desk" or "paper": selects the defaults
  ModelConfig model;
  TrainConfig train;
  RunPaths paths;

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing keys keep their defaults; unknown keys and wrongly typed values
/// throw ConfigError naming the key (e.g. "train.lr").
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

/// Defaults-filled JSON; parse_run_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& cfg);

}  // namespace boxformer
