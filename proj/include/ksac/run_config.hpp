#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ksac/model.hpp"
#include "ksac/train_eval.hpp"

namespace ksac {

/// Everything a CLI invocation needs. The textual form is line-oriented
/// `key = value` with `#` comments; keys match the long flag names.
struct RunConfig {
  std::string subcommand;

  std::string head = "ksac";
  std::vector<std::int64_t> rates{6, 12, 18};
  std::int64_t output_stride = 16;
  bool decoder = false;
  std::int64_t classes = 4;
  std::int64_t cin = 64;
  std::int64_t cout = 256;

  std::int64_t crop = 97;
  std::int64_t scene_size = 97;
  std::int64_t max_shapes = 5;
  std::uint64_t seed = 1;
  std::int64_t count = 8;
  std::int64_t eval_count = 0;
  bool symmetric = false;

  std::int64_t iterations = 100;
  std::int64_t batch_size = 4;
  double lr = 2e-3;
  double momentum = 0.9;
  std::int64_t eval_every = 0;
  bool augment = true;

  std::string strategy = "single";
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  int threads = 1;

  std::string checkpoint_in;
  std::string checkpoint_out;
  std::string manifest;
  std::string out_dir = ".";
  std::string input;
  std::string branch = "all";

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  /// Sets one field from its textual value; throws ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value);

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  EvalOptions eval_options() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

}  // namespace ksac
