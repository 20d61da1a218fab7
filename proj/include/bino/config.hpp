#pragma once

// One `key = value` document for a whole experiment. Keys are dotted
// (encoder.dim, distill.tau_t, bench.preset, ...); '#' starts a comment.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bino/distill.hpp"
#include "bino/encoder.hpp"
#include "bino/mech_probe.hpp"
#include "bino/stereo_probe.hpp"
#include "bino/synthbench.hpp"

namespace bino {

struct ExperimentConfig {
  EncoderConfig encoder;
  DistillConfig distill;
  BenchConfig bench;
  StereoParams stereo;
  double mech_temperature = 0.07;
  Counterfactual mech_counterfactual = Counterfactual::none;
  std::size_t retrieval_hard_subset = 16;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 100;

  // Throws ConfigError on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  // Every key with its current value, sorted by key.
  std::vector<std::pair<std::string, std::string>> echo() const;
  std::string echo_text() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies "key=value" overrides in order.
void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides);

// The encoder part of a config echo (as stored in checkpoints).
EncoderConfig encoder_from_echo(const std::string& echo_text);

}  // namespace bino
