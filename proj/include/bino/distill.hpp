#pragma once

// One-view masked EMA teacher-student token distillation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bino/encoder.hpp"
#include "bino/image.hpp"
#include "bino/optim.hpp"
#include "bino/params.hpp"
#include "bino/rng.hpp"

namespace bino {

enum class PhotometricMode { shared, independent };

struct NuisanceConfig {
  bool occlusion = false;
  std::size_t occlusion_count_min = 1;
  std::size_t occlusion_count_max = 2;
  double occlusion_area_min = 0.02;  // fraction of the image per rectangle
  double occlusion_area_max = 0.08;

  bool photometric = false;
  PhotometricMode photometric_mode = PhotometricMode::independent;
  double brightness = 0.1;  // offset drawn from [-brightness, brightness]
  double contrast_min = 0.8;
  double contrast_max = 1.2;
  double gamma_min = 0.8;
  double gamma_max = 1.25;

  bool noise = false;
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 0.03;

  void validate() const;
  static NuisanceConfig none() { return {}; }
  // Occlusion + photometric + noise, the strongest recipe.
  static NuisanceConfig full_hard(PhotometricMode mode = PhotometricMode::independent);
  friend bool operator==(const NuisanceConfig&, const NuisanceConfig&) = default;
};

struct Rect {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

// One occlusion rectangle with area fraction drawn from the configured range.
Rect sample_occlusion(std::size_t height, std::size_t width, const NuisanceConfig& cfg, Rng& rng);

struct PhotometricParams {
  double brightness = 0.0, contrast = 1.0, gamma = 1.0;
};
// clip(clip(x * contrast + brightness) ^ gamma)
void apply_photometric(Image& img, const PhotometricParams& p);

ImagePair apply_nuisance(const ImagePair& pair, const NuisanceConfig& cfg, Rng& rng);

struct MaskSchedule {
  double start = 0.3;
  double end = 0.7;
  double ramp_fraction = 0.8;  // of total steps
  friend bool operator==(const MaskSchedule&, const MaskSchedule&) = default;
};

// Linear start -> end over the ramp, then constant.
double mask_ratio_at(std::int64_t step, std::int64_t steps, const MaskSchedule& schedule);
// Cosine from `start` (step 0) to `end` (last step).
double ema_momentum_at(std::int64_t step, std::int64_t steps, double start, double end);
// Linear warmup then cosine decay to zero.
double learning_rate_at(std::int64_t step, std::int64_t steps, double base, std::int64_t warmup);

struct DistillConfig {
  double tau_t = 0.04;
  double tau_s = 0.1;
  double center_momentum = 0.9;
  double ema_start = 0.996;
  double ema_end = 1.0;
  MaskSchedule mask;
  bool mask_both_views = false;  // ablation only
  std::size_t proj_dim = 512;
  std::size_t head_hidden = 256;
  NuisanceConfig nuisance = NuisanceConfig::full_hard();
  std::int64_t steps = 1000;
  std::size_t batch = 4;
  std::int64_t warmup_steps = 0;
  AdamWConfig optim;

  void validate() const;
  // Non-fatal oddities (e.g. a teacher temperature that does not sharpen).
  std::vector<std::string> warnings() const;
  friend bool operator==(const DistillConfig&, const DistillConfig&) = default;
};

// Two-layer MLP head: fc1 -> gelu -> fc2, parameters named "head.*".
void add_token_head(ParamSet& model, std::size_t dim, std::size_t hidden, std::size_t proj_dim, Rng& rng);
Var<float> token_head(const ParamVars& params, Var<float> tokens);

// softmax((z_t - center) / tau_t), row-wise.
Tensor teacher_distribution(const Tensor& teacher_logits, const Tensor& center, double tau_t);
// -(1/N) sum_j p_t[j] . log softmax(z_s[j] / tau_s); the teacher side is a constant.
Var<float> distill_loss(Var<float> student_logits, const Tensor& teacher_probs, double tau_s);
double distill_loss_value(const Tensor& teacher_logits, const Tensor& student_logits, const Tensor& center,
                          double tau_t, double tau_s);

// center' = m * center + (1 - m) * mean over all rows of all batches.
Tensor update_center(const Tensor& center, std::span<const Tensor> teacher_logits, double momentum);
// teacher <- m * teacher + (1 - m) * student, elementwise.
void update_teacher(ParamSet& teacher, const ParamSet& student, double momentum);

struct DistillState {
  ParamSet student;
  ParamSet teacher;
  Tensor center;
  AdamWMoments moments;
  std::int64_t step = 0;
};

DistillState init_distill(const EncoderConfig& enc, const DistillConfig& cfg, std::uint64_t seed);

struct TapeAudit {
  std::size_t teacher_grad_nodes = 0;    // nodes on the teacher tape that would take a gradient
  std::size_t foreign_grad_leaves = 0;   // leaves outside the student parameters that received a gradient
};

struct StepReport {
  std::int64_t step = 0;  // step index that was executed
  double loss = 0.0;
  double mask_ratio = 0.0;
  double ema_momentum = 0.0;
  double lr = 0.0;
  std::size_t left_masked = 0;
  std::size_t right_masked = 0;
  TapeAudit audit;
};

// Teacher forward on Phi(L, R); student forward with one view masked; loss;
// optimizer step on the student; EMA teacher update; center update.
StepReport train_step(DistillState& state, std::span<const ImagePair> batch, const EncoderConfig& enc,
                      const DistillConfig& cfg, Rng& rng);

std::vector<std::pair<std::string, std::string>> echo(const DistillConfig& cfg);

}  // namespace bino
