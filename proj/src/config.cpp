#include "bino/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "bino/errors.hpp"

namespace bino {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(std::int64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class Ref>
Field field(std::string key, Ref ref) {
  Field f;
  f.key = key;
  f.set = [key, ref](ExperimentConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>)
      ref(c) = parse_bool(key, v);
    else
      ref(c) = parse_number<T>(key, v);
  };
  f.get = [ref](const ExperimentConfig& c) { return fmt(ref(const_cast<ExperimentConfig&>(c))); };
  return f;
}

template <class Parse, class Show>
Field custom(std::string key, Parse parse, Show show) {
  return Field{std::move(key), parse, show};
}

#define BINO_FIELD(T, key, expr) field<T>(key, [](ExperimentConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        BINO_FIELD(std::size_t, "encoder.depth", c.encoder.depth),
        BINO_FIELD(std::size_t, "encoder.dim", c.encoder.dim),
        BINO_FIELD(std::size_t, "encoder.heads", c.encoder.heads),
        BINO_FIELD(std::size_t, "encoder.ffn_ratio", c.encoder.ffn_ratio),
        custom(
            "encoder.ffn_kind", [](ExperimentConfig& c, const std::string& v) { c.encoder.ffn_kind = parse_activation(v); },
            [](const ExperimentConfig& c) { return to_string(c.encoder.ffn_kind); }),
        custom(
            "encoder.pos_variant",
            [](ExperimentConfig& c, const std::string& v) { c.encoder.pos_variant = parse_pos_variant(v); },
            [](const ExperimentConfig& c) { return to_string(c.encoder.pos_variant); }),
        BINO_FIELD(double, "encoder.rope_base", c.encoder.rope_base),
        BINO_FIELD(std::size_t, "encoder.image_h", c.encoder.geometry.image_h),
        BINO_FIELD(std::size_t, "encoder.image_w", c.encoder.geometry.image_w),
        BINO_FIELD(std::size_t, "encoder.patch_h", c.encoder.geometry.patch_h),
        BINO_FIELD(std::size_t, "encoder.patch_w", c.encoder.geometry.patch_w),
        custom(
            "encoder.fusion",
            [](ExperimentConfig& c, const std::string& v) { c.encoder.geometry.fusion = parse_fusion_mode(v); },
            [](const ExperimentConfig& c) { return to_string(c.encoder.geometry.fusion); }),
        BINO_FIELD(std::size_t, "encoder.interleave_stride", c.encoder.geometry.interleave_stride),

        BINO_FIELD(double, "distill.tau_t", c.distill.tau_t),
        BINO_FIELD(double, "distill.tau_s", c.distill.tau_s),
        BINO_FIELD(double, "distill.center_momentum", c.distill.center_momentum),
        BINO_FIELD(double, "distill.ema_start", c.distill.ema_start),
        BINO_FIELD(double, "distill.ema_end", c.distill.ema_end),
        BINO_FIELD(double, "distill.mask_start", c.distill.mask.start),
        BINO_FIELD(double, "distill.mask_end", c.distill.mask.end),
        BINO_FIELD(double, "distill.mask_ramp", c.distill.mask.ramp_fraction),
        BINO_FIELD(bool, "distill.mask_both_views", c.distill.mask_both_views),
        BINO_FIELD(std::size_t, "distill.proj_dim", c.distill.proj_dim),
        BINO_FIELD(std::size_t, "distill.head_hidden", c.distill.head_hidden),
        BINO_FIELD(std::int64_t, "distill.steps", c.distill.steps),
        BINO_FIELD(std::size_t, "distill.batch", c.distill.batch),
        BINO_FIELD(std::int64_t, "distill.warmup_steps", c.distill.warmup_steps),
        BINO_FIELD(double, "distill.lr", c.distill.optim.lr),
        BINO_FIELD(double, "distill.weight_decay", c.distill.optim.weight_decay),
        BINO_FIELD(double, "distill.beta1", c.distill.optim.beta1),
        BINO_FIELD(double, "distill.beta2", c.distill.optim.beta2),
        BINO_FIELD(double, "distill.adam_eps", c.distill.optim.eps),
        BINO_FIELD(std::int64_t, "distill.checkpoint_every", c.checkpoint_every),

        BINO_FIELD(bool, "nuisance.occlusion", c.distill.nuisance.occlusion),
        BINO_FIELD(std::size_t, "nuisance.occlusion_count_min", c.distill.nuisance.occlusion_count_min),
        BINO_FIELD(std::size_t, "nuisance.occlusion_count_max", c.distill.nuisance.occlusion_count_max),
        BINO_FIELD(double, "nuisance.occlusion_area_min", c.distill.nuisance.occlusion_area_min),
        BINO_FIELD(double, "nuisance.occlusion_area_max", c.distill.nuisance.occlusion_area_max),
        BINO_FIELD(bool, "nuisance.photometric", c.distill.nuisance.photometric),
        custom(
            "nuisance.photometric_mode",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "shared")
                c.distill.nuisance.photometric_mode = PhotometricMode::shared;
              else if (v == "independent")
                c.distill.nuisance.photometric_mode = PhotometricMode::independent;
              else
                throw ConfigError("invalid value '" + v + "' for nuisance.photometric_mode");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.distill.nuisance.photometric_mode == PhotometricMode::shared ? "shared"
                                                                                               : "independent");
            }),
        BINO_FIELD(double, "nuisance.brightness", c.distill.nuisance.brightness),
        BINO_FIELD(double, "nuisance.contrast_min", c.distill.nuisance.contrast_min),
        BINO_FIELD(double, "nuisance.contrast_max", c.distill.nuisance.contrast_max),
        BINO_FIELD(double, "nuisance.gamma_min", c.distill.nuisance.gamma_min),
        BINO_FIELD(double, "nuisance.gamma_max", c.distill.nuisance.gamma_max),
        BINO_FIELD(bool, "nuisance.noise", c.distill.nuisance.noise),
        BINO_FIELD(double, "nuisance.noise_sigma_min", c.distill.nuisance.noise_sigma_min),
        BINO_FIELD(double, "nuisance.noise_sigma_max", c.distill.nuisance.noise_sigma_max),

        custom(
            "bench.source_manifest", [](ExperimentConfig& c, const std::string& v) { c.bench.source_manifest = v; },
            [](const ExperimentConfig& c) { return c.bench.source_manifest.string(); }),
        BINO_FIELD(std::size_t, "bench.crop_h", c.bench.crop_h),
        BINO_FIELD(std::size_t, "bench.crop_w", c.bench.crop_w),
        BINO_FIELD(std::size_t, "bench.patch_h", c.bench.patch_h),
        BINO_FIELD(std::size_t, "bench.patch_w", c.bench.patch_w),
        BINO_FIELD(double, "bench.d_min", c.bench.d_min),
        BINO_FIELD(double, "bench.d_max", c.bench.d_max),
        // Setting a preset resets the shift range and nuisance switches.
        custom(
            "bench.preset", [](ExperimentConfig& c, const std::string& v) { c.bench.apply_preset(parse_preset(v)); },
            [](const ExperimentConfig& c) { return to_string(c.bench.preset); }),
        BINO_FIELD(bool, "bench.occlusion", c.bench.occlusion),
        BINO_FIELD(bool, "bench.photometric", c.bench.photometric),

        BINO_FIELD(std::size_t, "stereo.dmax", c.stereo.dmax),
        BINO_FIELD(double, "stereo.p1", c.stereo.p1),
        BINO_FIELD(double, "stereo.p2", c.stereo.p2),
        BINO_FIELD(std::size_t, "stereo.refine_window", c.stereo.refine_window),
        BINO_FIELD(double, "stereo.refine_temperature", c.stereo.refine_temperature),
        BINO_FIELD(double, "stereo.lr_tol", c.stereo.lr_tol),
        BINO_FIELD(std::size_t, "retrieval.hard_subset", c.retrieval_hard_subset),

        BINO_FIELD(double, "mech.temperature", c.mech_temperature),
        custom(
            "mech.counterfactual",
            [](ExperimentConfig& c, const std::string& v) { c.mech_counterfactual = parse_counterfactual(v); },
            [](const ExperimentConfig& c) { return to_string(c.mech_counterfactual); }),

        BINO_FIELD(std::uint64_t, "seed", c.seed),
    };
    std::sort(f.begin(), f.end(), [](const Field& a, const Field& b) { return a.key < b.key; });
    return f;
  }();
  return table;
}

#undef BINO_FIELD

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const auto& f = fields();
  auto it = std::lower_bound(f.begin(), f.end(), key, [](const Field& a, const std::string& k) { return a.key < k; });
  if (it == f.end() || it->key != key) throw ConfigError("unknown config key '" + key + "'");
  it->set(*this, value);
  if (key == "seed") bench.seed = seed;
}

void ExperimentConfig::validate() const {
  encoder.validate();
  distill.validate();
  bench.validate();
  if (!(mech_temperature > 0.0)) throw ConfigError("mech.temperature must be positive");
  if (!(stereo.p1 >= 0.0) || stereo.p2 < stereo.p1) throw ConfigError("stereo penalties need p2 >= p1 >= 0");
  if (stereo.dmax == 0) throw ConfigError("stereo.dmax must be positive");
  if (stereo.refine_window == 0) throw ConfigError("stereo.refine_window must be positive");
  if (checkpoint_every < 0) throw ConfigError("distill.checkpoint_every must be >= 0");
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

std::string ExperimentConfig::echo_text() const {
  std::string s;
  for (const auto& [k, v] : echo()) s += k + " = " + v + "\n";
  return s;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool has_preset = false;
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (key == "bench.preset") has_preset = true;
    entries.emplace_back(std::move(key), std::move(value));
  }
  // A preset resets the shift range and nuisance flags, so it is applied first
  // regardless of where it appears; explicit keys then override it.
  if (has_preset)
    for (const auto& [k, v] : entries)
      if (k == "bench.preset") cfg.set(k, v);
  for (const auto& [k, v] : entries) {
    if (k == "bench.preset") continue;
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_overrides(ExperimentConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
}

EncoderConfig encoder_from_echo(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq));
    if (key.rfind("encoder.", 0) == 0) cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg.encoder;
}

}  // namespace bino
