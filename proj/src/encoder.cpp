#include "bino/encoder.hpp"

#include <cmath>
#include <random>

#include "bino/errors.hpp"

namespace bino {

std::string to_string(PosVariant v) {
  switch (v) {
    case PosVariant::patch_phase_2d: return "patch-phase-2d";
    case PosVariant::one_d: return "1d";
    case PosVariant::factorized_2d: return "factorized-2d";
    case PosVariant::full_2d_grid: return "full-2d-grid";
    case PosVariant::deinterleaved_center_2d: return "deinterleaved-center-2d";
  }
  return "?";
}

PosVariant parse_pos_variant(const std::string& s) {
  for (PosVariant v : {PosVariant::patch_phase_2d, PosVariant::one_d, PosVariant::factorized_2d,
                       PosVariant::full_2d_grid, PosVariant::deinterleaved_center_2d})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown positional variant '" + s + "'");
}

std::string to_string(ag::Activation a) { return a == ag::Activation::gelu ? "gelu" : "swiglu"; }

ag::Activation parse_activation(const std::string& s) {
  if (s == "gelu") return ag::Activation::gelu;
  if (s == "swiglu") return ag::Activation::swiglu;
  throw ConfigError("unknown ffn kind '" + s + "'");
}

void EncoderConfig::validate() const {
  geometry.validate();
  if (dim == 0 || heads == 0 || dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (head_dim() % 2 != 0) throw ConfigError("encoder head_dim must be even");
  if (pos_variant == PosVariant::patch_phase_2d && head_dim() % 4 != 0)
    throw ConfigError("patch-phase-2d splits head_dim into two rotary halves; head_dim must be divisible by 4");
  if (ffn_ratio == 0) throw ConfigError("ffn_ratio must be positive");
  if (!(rope_base > 1.0)) throw ConfigError("rope_base must exceed 1");
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

std::string block_name(std::size_t i, const char* leaf) { return "block" + std::to_string(i) + "." + leaf; }

// Rows of the additive positional table used by each non-rotary variant, and
// the table row of every token.
std::size_t pos_table_rows(const EncoderConfig& cfg) {
  const auto& g = cfg.geometry;
  switch (cfg.pos_variant) {
    case PosVariant::patch_phase_2d: return 0;
    case PosVariant::one_d:
    case PosVariant::full_2d_grid: return g.token_count();
    case PosVariant::factorized_2d: return g.fused_cols();
    case PosVariant::deinterleaved_center_2d: return g.patch_cols();
  }
  return 0;
}

std::vector<std::size_t> pos_table_index(const EncoderConfig& cfg) {
  const auto& g = cfg.geometry;
  const std::size_t cols = g.fused_cols();
  std::vector<std::size_t> idx(g.token_count());
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const std::size_t c = n % cols;
    switch (cfg.pos_variant) {
      case PosVariant::one_d:
      case PosVariant::full_2d_grid: idx[n] = n; break;
      case PosVariant::factorized_2d: idx[n] = c; break;
      case PosVariant::deinterleaved_center_2d:
        idx[n] = g.fusion == FusionMode::concat ? c % g.patch_cols() : phase_decompose(c).p;
        break;
      case PosVariant::patch_phase_2d: idx[n] = 0; break;
    }
  }
  return idx;
}

std::vector<std::size_t> row_index(const EncoderConfig& cfg) {
  const std::size_t cols = cfg.geometry.fused_cols();
  std::vector<std::size_t> idx(cfg.geometry.token_count());
  for (std::size_t n = 0; n < idx.size(); ++n) idx[n] = n / cols;
  return idx;
}

}  // namespace

ParamSet init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t hidden = cfg.ffn_ratio * d;
  const std::size_t fc1_out = cfg.ffn_kind == ag::Activation::swiglu ? 2 * hidden : hidden;
  constexpr double kStd = 0.02;
  ParamSet p;
  p.add("patch.w", trunc_normal({cfg.cell_dim(), d}, rng, kStd));
  p.add("patch.b", Tensor({d}));
  p.add("row_embed", trunc_normal({cfg.geometry.token_rows(), d}, rng, kStd));
  if (const std::size_t rows = pos_table_rows(cfg)) p.add("pos.table", trunc_normal({rows, d}, rng, kStd));
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    p.add(block_name(i, "ln1.g"), Tensor({d}, 1.0f));
    p.add(block_name(i, "ln1.b"), Tensor({d}));
    p.add(block_name(i, "attn.qkv.w"), trunc_normal({d, 3 * d}, rng, kStd));
    p.add(block_name(i, "attn.qkv.b"), Tensor({3 * d}));
    p.add(block_name(i, "attn.out.w"), trunc_normal({d, d}, rng, kStd));
    p.add(block_name(i, "attn.out.b"), Tensor({d}));
    p.add(block_name(i, "ln2.g"), Tensor({d}, 1.0f));
    p.add(block_name(i, "ln2.b"), Tensor({d}));
    p.add(block_name(i, "ffn.fc1.w"), trunc_normal({d, fc1_out}, rng, kStd));
    p.add(block_name(i, "ffn.fc1.b"), Tensor({fc1_out}));
    p.add(block_name(i, "ffn.fc2.w"), trunc_normal({hidden, d}, rng, kStd));
    p.add(block_name(i, "ffn.fc2.b"), Tensor({d}));
  }
  return p;
}

Tensor patchify(const FusedImage& fused, const EncoderConfig& cfg) {
  const auto& g = cfg.geometry;
  const Image& x = fused.data;
  if (x.channels != 3 || x.height != g.image_h || x.width != 2 * g.image_w)
    throw ShapeError("fused image does not match encoder geometry");
  const std::size_t rows = g.token_rows(), cols = g.fused_cols();
  Tensor out({rows * cols, cfg.cell_dim()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      float* dst = out.ptr() + (r * cols + c) * cfg.cell_dim();
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < g.patch_h; ++y)
          for (std::size_t xx = 0; xx < g.patch_w; ++xx)
            *dst++ = x.at(ch, r * g.patch_h + y, c * g.patch_w + xx);
    }
  return out;
}

Tensor rope_angles(const EncoderConfig& cfg) {
  const auto& g = cfg.geometry;
  const std::size_t hd = cfg.head_dim();
  const std::size_t pairs = hd / 2;
  Tensor out({g.token_count(), pairs});
  if (cfg.pos_variant != PosVariant::patch_phase_2d) return out;
  const std::size_t per_axis = pairs / 2;
  const std::size_t cols = g.fused_cols();
  for (std::size_t n = 0; n < g.token_count(); ++n) {
    const std::size_t r = n / cols;
    const std::size_t c = n % cols;
    const std::size_t p = g.fusion == FusionMode::concat ? c % g.patch_cols() : phase_decompose(c).p;
    for (std::size_t j = 0; j < per_axis; ++j) {
      const double freq = std::pow(cfg.rope_base, -static_cast<double>(j) / static_cast<double>(per_axis));
      out[n * pairs + j] = static_cast<float>(static_cast<double>(r) * freq);
      out[n * pairs + per_axis + j] = static_cast<float>(static_cast<double>(p) * freq);
    }
  }
  return out;
}

EncoderVars encoder_forward(Tape<float>& tape, const ParamVars& pv, const FusedImage& fused,
                            const EncoderConfig& cfg) {
  const std::size_t d = cfg.dim;
  const Var<float> cells = tape.input(patchify(fused, cfg), false);
  const auto rows = row_index(cfg);

  EncoderVars out;
  Var<float> x = ag::add_indexed(ag::linear(cells, pv["patch.w"], pv["patch.b"]), pv["row_embed"], rows);
  if (cfg.pos_variant != PosVariant::patch_phase_2d) x = ag::add_indexed(x, pv["pos.table"], pos_table_index(cfg));
  out.layers.push_back(x);

  const Tensor angles = rope_angles(cfg);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    try {
      Var<float> h = ag::layernorm(x, pv[block_name(i, "ln1.g")], pv[block_name(i, "ln1.b")]);
      const Var<float> qkv = ag::linear(h, pv[block_name(i, "attn.qkv.w")], pv[block_name(i, "attn.qkv.b")]);
      const Var<float> q = ag::split_heads(ag::slice_cols(qkv, 0, d), cfg.heads);
      const Var<float> k = ag::split_heads(ag::slice_cols(qkv, d, 2 * d), cfg.heads);
      const Var<float> v = ag::split_heads(ag::slice_cols(qkv, 2 * d, 3 * d), cfg.heads);
      const Var<float> a = ag::merge_heads(ag::attention(q, k, v, angles));
      x = ag::add(x, ag::linear(a, pv[block_name(i, "attn.out.w")], pv[block_name(i, "attn.out.b")]));
      h = ag::layernorm(x, pv[block_name(i, "ln2.g")], pv[block_name(i, "ln2.b")]);
      h = ag::activation(ag::linear(h, pv[block_name(i, "ffn.fc1.w")], pv[block_name(i, "ffn.fc1.b")]), cfg.ffn_kind);
      x = ag::add(x, ag::linear(h, pv[block_name(i, "ffn.fc2.w")], pv[block_name(i, "ffn.fc2.b")]));
    } catch (const NumericalError& e) {
      throw NumericalError("encoder block " + std::to_string(i) + ": " + e.what());
    }
    out.layers.push_back(x);
  }
  out.depos = ag::add_indexed(x, ag::scale(pv["row_embed"], -1.0f), rows);
  return out;
}

EncoderState encode(const FusedImage& fused, const EncoderConfig& cfg, const ParamSet& params) {
  Tape<float> tape;
  const ParamVars pv(tape, params, false);
  const EncoderVars vars = encoder_forward(tape, pv, fused, cfg);
  EncoderState state;
  for (const auto& v : vars.layers) state.per_layer_tokens.push_back(v.value());
  state.row_embed = params.at("row_embed");
  state.final_depos = vars.depos.value();
  return state;
}

std::vector<std::pair<std::string, std::string>> echo(const EncoderConfig& cfg) {
  const auto& g = cfg.geometry;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {
      {"encoder.depth", std::to_string(cfg.depth)},
      {"encoder.dim", std::to_string(cfg.dim)},
      {"encoder.heads", std::to_string(cfg.heads)},
      {"encoder.ffn_ratio", std::to_string(cfg.ffn_ratio)},
      {"encoder.ffn_kind", to_string(cfg.ffn_kind)},
      {"encoder.pos_variant", to_string(cfg.pos_variant)},
      {"encoder.rope_base", num(cfg.rope_base)},
      {"encoder.image_h", std::to_string(g.image_h)},
      {"encoder.image_w", std::to_string(g.image_w)},
      {"encoder.patch_h", std::to_string(g.patch_h)},
      {"encoder.patch_w", std::to_string(g.patch_w)},
      {"encoder.fusion", to_string(g.fusion)},
      {"encoder.interleave_stride", std::to_string(g.interleave_stride)},
  };
}

}  // namespace bino
