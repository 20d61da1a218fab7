#pragma once

// Subcommand bodies, callable in-process. Each returns the JSON report it
// wrote; errors surface as ConfigError / DataError / NumericalError.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bino/checkpoint.hpp"
#include "bino/config.hpp"
#include "json.hpp"

namespace bino {

inline constexpr const char* kCodeVersion = "bino 0.1.0";

using Json = nlohmann::json;

// Where probe commands take encoder weights from.
struct ModelSource {
  std::optional<std::filesystem::path> checkpoint;  // empty: step-0 weights from config + seed
  bool use_student = false;                          // default: teacher
};

struct LoadedModel {
  EncoderConfig encoder;
  ParamSet params;
  Json provenance;
};
LoadedModel load_model(const ExperimentConfig& cfg, const ModelSource& src);

// Checkpoint layout: student/*, teacher/*, center, adam.m/*, adam.v/*.
Checkpoint make_checkpoint(const DistillState& state, const ExperimentConfig& cfg);
DistillState restore_state(const Checkpoint& ckpt);

Json cmd_gen_bench(const ExperimentConfig& cfg, const std::filesystem::path& out, std::size_t n);

struct PretrainArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> resume;
  std::optional<std::int64_t> stop_after;  // stop once this many total steps are done
};
Json cmd_pretrain(const ExperimentConfig& cfg, const PretrainArgs& args);

Json cmd_export_desc(const ExperimentConfig& cfg, const ModelSource& model, const std::filesystem::path& data,
                     const std::filesystem::path& out);
Json cmd_probe_stereo(const ExperimentConfig& cfg, const ModelSource& model, const std::filesystem::path& data,
                      const std::filesystem::path& out);
Json cmd_probe_mech(const ExperimentConfig& cfg, const ModelSource& model, const std::filesystem::path& data,
                    const std::filesystem::path& out);
Json cmd_eval_synth(const ExperimentConfig& cfg, const ModelSource& model, const std::filesystem::path& data,
                    const std::filesystem::path& out);

// Row-wise nearest neighbour over the whole row: pred = p - argmax_p' cos(L[r,p], R[r,p']).
std::vector<double> nearest_neighbour_disparity(const DescriptorMap& left, const DescriptorMap& right);

// Full command line entry point; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace bino
