#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bino/autograd.hpp"
#include "bino/fusion.hpp"
#include "bino/params.hpp"
#include "bino/rng.hpp"

namespace bino {

enum class PosVariant { patch_phase_2d, one_d, factorized_2d, full_2d_grid, deinterleaved_center_2d };

std::string to_string(PosVariant v);
PosVariant parse_pos_variant(const std::string& s);
std::string to_string(ag::Activation a);
ag::Activation parse_activation(const std::string& s);

struct EncoderConfig {
  std::size_t depth = 4;
  std::size_t dim = 96;
  std::size_t heads = 4;
  std::size_t ffn_ratio = 4;
  ag::Activation ffn_kind = ag::Activation::gelu;
  PosVariant pos_variant = PosVariant::patch_phase_2d;
  double rope_base = 10000.0;
  TokenGridGeometry geometry;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t cell_dim() const { return 3 * geometry.patch_h * geometry.patch_w; }
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Token states of one forward pass. Token n sits at (r, c) = (n / C, n % C)
// with C = fused token columns; every tensor is [tokens x dim].
struct EncoderState {
  std::vector<Tensor> per_layer_tokens;  // depth + 1 entries, embedding first
  Tensor row_embed;                      // [token_rows x dim]
  Tensor final_depos;                    // last layer minus a_r
};

// Truncated-normal(0.02) weights, zero biases, unit LayerNorm gains.
ParamSet init_encoder(const EncoderConfig& cfg, Rng& rng);

// Flattens each micro cell of the fused image (channel, row, column order).
Tensor patchify(const FusedImage& fused, const EncoderConfig& cfg);

// Rotation phases [tokens x head_dim/2]. For patch-phase-2d the first half of
// the channel pairs rotates with the token row r and the second half with the
// patch column p = c / 2; other variants get zero angles.
Tensor rope_angles(const EncoderConfig& cfg);

// Differentiable forward. `layers` holds depth+1 taps; `depos` = last - a_r.
struct EncoderVars {
  std::vector<Var<float>> layers;
  Var<float> depos;
};
EncoderVars encoder_forward(Tape<float>& tape, const ParamVars& params, const FusedImage& fused,
                            const EncoderConfig& cfg);

// Convenience wrapper without gradient tracking.
EncoderState encode(const FusedImage& fused, const EncoderConfig& cfg, const ParamSet& params);

// Key/value echo of the configuration (stable order).
std::vector<std::pair<std::string, std::string>> echo(const EncoderConfig& cfg);

}  // namespace bino
