#include "bino/distill.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "bino/errors.hpp"
#include "bino/fusion.hpp"

namespace bino {

double mask_ratio_at(std::int64_t step, std::int64_t steps, const MaskSchedule& s) {
  const double ramp = s.ramp_fraction * static_cast<double>(steps);
  if (ramp <= 0.0) return s.end;
  const double t = std::min(1.0, static_cast<double>(step) / ramp);
  return s.start + (s.end - s.start) * t;
}

double ema_momentum_at(std::int64_t step, std::int64_t steps, double start, double end) {
  if (steps <= 0) return end;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(steps), 0.0, 1.0);
  return end - (end - start) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

double learning_rate_at(std::int64_t step, std::int64_t steps, double base, std::int64_t warmup) {
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, steps - warmup));
  const double t = std::clamp(static_cast<double>(step - warmup) / span, 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void DistillConfig::validate() const {
  nuisance.validate();
  if (!(tau_t > 0.0) || !(tau_s > 0.0)) throw ConfigError("temperatures must be positive");
  auto momentum_ok = [](double m) { return m > 0.0 && m <= 1.0; };
  if (!momentum_ok(center_momentum) || !momentum_ok(ema_start) || !momentum_ok(ema_end))
    throw ConfigError("momenta must lie in (0, 1]");
  auto ratio_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!ratio_ok(mask.start) || !ratio_ok(mask.end) || mask.ramp_fraction < 0.0)
    throw ConfigError("mask schedule out of range");
  if (proj_dim == 0 || head_hidden == 0) throw ConfigError("projection head extents must be positive");
  if (steps < 0 || batch == 0) throw ConfigError("steps must be >= 0 and batch >= 1");
  if (optim.lr < 0.0 || optim.weight_decay < 0.0) throw ConfigError("optimizer settings must be nonnegative");
}

std::vector<std::string> DistillConfig::warnings() const {
  std::vector<std::string> out;
  if (tau_t >= tau_s) out.push_back("teacher temperature is not below student temperature; teacher is not sharpened");
  if (mask_both_views) out.push_back("mask_both_views is an ablation; the student loses its intact view");
  return out;
}

namespace {
Tensor trunc_normal(Shape shape, Rng& rng, double std) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (float& v : t.data()) {
    double x = dist(rng);
    while (std::abs(x) > 2.0 * std) x = dist(rng);
    v = static_cast<float>(x);
  }
  return t;
}
}  // namespace

void add_token_head(ParamSet& model, std::size_t dim, std::size_t hidden, std::size_t proj_dim, Rng& rng) {
  model.add("head.ln.g", Tensor({dim}, 1.0f));
  model.add("head.ln.b", Tensor({dim}));
  model.add("head.fc1.w", trunc_normal({dim, hidden}, rng, 0.02));
  model.add("head.fc1.b", Tensor({hidden}));
  model.add("head.fc2.w", trunc_normal({hidden, proj_dim}, rng, 0.02));
  model.add("head.fc2.b", Tensor({proj_dim}));
}

Var<float> token_head(const ParamVars& pv, Var<float> tokens) {
  // the encoder has no output norm; token scale stays near init without one
  const Var<float> x = ag::layernorm(tokens, pv["head.ln.g"], pv["head.ln.b"]);
  const Var<float> h = ag::activation(ag::linear(x, pv["head.fc1.w"], pv["head.fc1.b"]), ag::Activation::gelu);
  return ag::linear(h, pv["head.fc2.w"], pv["head.fc2.b"]);
}

Tensor teacher_distribution(const Tensor& z, const Tensor& center, double tau_t) {
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (center.size() != k) throw ShapeError("center length does not match projection size");
  Tensor out(z.shape());
  std::vector<double> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = (static_cast<double>(z.at(i, j)) - center[j]) / tau_t;
      mx = std::max(mx, row[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = static_cast<float>(row[j] / s);
  }
  return out;
}

Var<float> distill_loss(Var<float> student_logits, const Tensor& teacher_probs, double tau_s) {
  if (student_logits.shape() != teacher_probs.shape()) throw ShapeError("distill_loss: logits shape mismatch");
  Tape<float>& tape = student_logits.tape();
  const Var<float> logp = ag::log_softmax(ag::scale(student_logits, static_cast<float>(1.0 / tau_s)));
  const Var<float> target = tape.input(teacher_probs, false);
  const auto n = static_cast<double>(teacher_probs.dim(0));
  return ag::scale(ag::sum(ag::mul(logp, target)), static_cast<float>(-1.0 / n));
}

double distill_loss_value(const Tensor& zt, const Tensor& zs, const Tensor& center, double tau_t, double tau_s) {
  if (zt.shape() != zs.shape()) throw ShapeError("distill_loss_value: logits shape mismatch");
  const Tensor pt = teacher_distribution(zt, center, tau_t);
  const std::size_t n = zs.dim(0), k = zs.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, zs.at(i, j) / tau_s);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(zs.at(i, j) / tau_s - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) total -= pt.at(i, j) * (zs.at(i, j) / tau_s - lse);
  }
  return total / static_cast<double>(n);
}

Tensor update_center(const Tensor& center, std::span<const Tensor> logits, double momentum) {
  const std::size_t k = center.size();
  std::vector<double> acc(k, 0.0);
  std::size_t rows = 0;
  for (const Tensor& z : logits) {
    if (z.rank() != 2 || z.dim(1) != k) throw ShapeError("update_center: logits width mismatch");
    for (std::size_t i = 0; i < z.dim(0); ++i)
      for (std::size_t j = 0; j < k; ++j) acc[j] += z.at(i, j);
    rows += z.dim(0);
  }
  if (rows == 0) return center;
  Tensor out(center.shape());
  for (std::size_t j = 0; j < k; ++j)
    out[j] = static_cast<float>(momentum * center[j] + (1.0 - momentum) * acc[j] / static_cast<double>(rows));
  return out;
}

void update_teacher(ParamSet& teacher, const ParamSet& student, double momentum) {
  if (!teacher.same_layout(student)) throw ShapeError("update_teacher: parameter layouts differ");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher.tensor(i);
    const Tensor& s = student.tensor(i);
    for (std::size_t j = 0; j < t.size(); ++j)
      t[j] = static_cast<float>(momentum * t[j] + (1.0 - momentum) * s[j]);
  }
}

DistillState init_distill(const EncoderConfig& enc, const DistillConfig& cfg, std::uint64_t seed) {
  enc.validate();
  cfg.validate();
  Rng rng = derive_rng(seed, 0x1417);
  DistillState state;
  state.student = init_encoder(enc, rng);
  add_token_head(state.student, enc.dim, cfg.head_hidden, cfg.proj_dim, rng);
  state.teacher = state.student;
  state.center = Tensor({cfg.proj_dim});
  state.moments = AdamWMoments::zeros_like(state.student.pointers());
  return state;
}

namespace {

Tensor teacher_logits(const ParamSet& teacher, const FusedImage& fused, const EncoderConfig& enc,
                      TapeAudit& audit) {
  Tape<float> tape;
  const ParamVars pv(tape, teacher, false);
  const EncoderVars ev = encoder_forward(tape, pv, fused, enc);
  const Var<float> z = token_head(pv, ev.depos);
  for (const auto& node : tape.nodes()) audit.teacher_grad_nodes += node.requires_grad ? 1 : 0;
  return z.value();
}

}  // namespace

StepReport train_step(DistillState& state, std::span<const ImagePair> batch, const EncoderConfig& enc,
                      const DistillConfig& cfg, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step needs a non-empty batch");
  StepReport report;
  report.step = state.step;
  report.mask_ratio = mask_ratio_at(state.step, cfg.steps, cfg.mask);
  report.ema_momentum = ema_momentum_at(state.step, cfg.steps, cfg.ema_start, cfg.ema_end);
  report.lr = learning_rate_at(state.step, cfg.steps, cfg.optim.lr, cfg.warmup_steps);

  Tape<float> tape;
  const ParamVars student(tape, state.student, true);
  std::vector<Tensor> all_teacher_logits;
  Var<float> total;
  for (const ImagePair& raw : batch) {
    const ImagePair pair = apply_nuisance(raw, cfg.nuisance, rng);
    const Tensor zt = teacher_logits(state.teacher, fuse(pair, enc.geometry), enc, report.audit);
    const Tensor pt = teacher_distribution(zt, state.center, cfg.tau_t);

    ImagePair masked = pair;
    if (cfg.mask_both_views) {
      const ViewMask ml = sample_view_mask(enc.geometry, View::left, report.mask_ratio, rng);
      const ViewMask mr = sample_view_mask(enc.geometry, View::right, report.mask_ratio, rng);
      apply_mask(masked, ml, enc.geometry);
      apply_mask(masked, mr, enc.geometry);
      ++report.left_masked;
      ++report.right_masked;
    } else {
      const ViewMask m = sample_one_view_mask(enc.geometry, report.mask_ratio, rng);
      apply_mask(masked, m, enc.geometry);
      ++(m.which == View::left ? report.left_masked : report.right_masked);
    }
    const EncoderVars ev = encoder_forward(tape, student, fuse(masked, enc.geometry), enc);
    const Var<float> loss = distill_loss(token_head(student, ev.depos), pt, cfg.tau_s);
    total = total.valid() ? ag::add(total, loss) : loss;
    all_teacher_logits.push_back(zt);
  }
  total = ag::scale(total, static_cast<float>(1.0 / static_cast<double>(batch.size())));
  report.loss = total.value()[0];
  if (!std::isfinite(report.loss)) throw NumericalError("non-finite distillation loss at step " + std::to_string(state.step));

  tape.backward(total);
  std::vector<const Tensor*> grads;
  std::vector<Tensor> zero_grads;
  zero_grads.reserve(student.size());
  for (std::size_t i = 0; i < student.size(); ++i) {
    const Var<float> v = student.at(i);
    if (v.grad().empty()) {
      zero_grads.emplace_back(v.shape());
      grads.push_back(&zero_grads.back());
    } else {
      grads.push_back(&v.grad());
    }
  }
  // Leaves that are not student parameters must never receive a gradient.
  std::vector<bool> is_param(tape.size(), false);
  for (std::size_t i = 0; i < student.size(); ++i) is_param[static_cast<std::size_t>(student.at(i).id())] = true;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto& node = tape.node(static_cast<int>(id));
    if (node.op == "input" && !is_param[id] && !node.grad.empty()) ++report.audit.foreign_grad_leaves;
  }

  AdamWConfig opt = cfg.optim;
  opt.lr = report.lr;
  adamw_step(state.student.pointers(), grads, state.moments, opt);
  update_teacher(state.teacher, state.student, report.ema_momentum);
  state.center = update_center(state.center, all_teacher_logits, cfg.center_momentum);
  state.step += 1;
  return report;
}

std::vector<std::pair<std::string, std::string>> echo(const DistillConfig& c) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  const auto& n = c.nuisance;
  return {
      {"distill.tau_t", num(c.tau_t)},
      {"distill.tau_s", num(c.tau_s)},
      {"distill.center_momentum", num(c.center_momentum)},
      {"distill.ema_start", num(c.ema_start)},
      {"distill.ema_end", num(c.ema_end)},
      {"distill.mask_start", num(c.mask.start)},
      {"distill.mask_end", num(c.mask.end)},
      {"distill.mask_ramp", num(c.mask.ramp_fraction)},
      {"distill.mask_both_views", c.mask_both_views ? "true" : "false"},
      {"distill.proj_dim", std::to_string(c.proj_dim)},
      {"distill.head_hidden", std::to_string(c.head_hidden)},
      {"distill.steps", std::to_string(c.steps)},
      {"distill.batch", std::to_string(c.batch)},
      {"distill.warmup_steps", std::to_string(c.warmup_steps)},
      {"distill.lr", num(c.optim.lr)},
      {"distill.weight_decay", num(c.optim.weight_decay)},
      {"distill.beta1", num(c.optim.beta1)},
      {"distill.beta2", num(c.optim.beta2)},
      {"distill.adam_eps", num(c.optim.eps)},
      {"nuisance.occlusion", n.occlusion ? "true" : "false"},
      {"nuisance.occlusion_count_min", std::to_string(n.occlusion_count_min)},
      {"nuisance.occlusion_count_max", std::to_string(n.occlusion_count_max)},
      {"nuisance.occlusion_area_min", num(n.occlusion_area_min)},
      {"nuisance.occlusion_area_max", num(n.occlusion_area_max)},
      {"nuisance.photometric", n.photometric ? "true" : "false"},
      {"nuisance.photometric_mode", n.photometric_mode == PhotometricMode::shared ? "shared" : "independent"},
      {"nuisance.brightness", num(n.brightness)},
      {"nuisance.contrast_min", num(n.contrast_min)},
      {"nuisance.contrast_max", num(n.contrast_max)},
      {"nuisance.gamma_min", num(n.gamma_min)},
      {"nuisance.gamma_max", num(n.gamma_max)},
      {"nuisance.noise", n.noise ? "true" : "false"},
      {"nuisance.noise_sigma_min", num(n.noise_sigma_min)},
      {"nuisance.noise_sigma_max", num(n.noise_sigma_max)},
  };
}

}  // namespace bino
