#include "bino/distill.hpp"

#include <algorithm>
#include <cmath>

#include "bino/errors.hpp"

namespace bino {

void NuisanceConfig::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(occlusion_area_min) || !in01(occlusion_area_max) || occlusion_area_min > occlusion_area_max)
    throw ConfigError("occlusion area fractions must satisfy 0 <= min <= max <= 1");
  if (occlusion_count_min > occlusion_count_max) throw ConfigError("occlusion count range is inverted");
  if (contrast_min > contrast_max || gamma_min > gamma_max || gamma_min <= 0.0)
    throw ConfigError("photometric ranges are invalid");
  if (brightness < 0.0) throw ConfigError("brightness jitter must be nonnegative");
  if (noise_sigma_min < 0.0 || noise_sigma_min > noise_sigma_max) throw ConfigError("noise sigma range is invalid");
}

NuisanceConfig NuisanceConfig::full_hard(PhotometricMode mode) {
  NuisanceConfig c;
  c.occlusion = true;
  c.photometric = true;
  c.photometric_mode = mode;
  c.noise = true;
  return c;
}

Rect sample_occlusion(std::size_t height, std::size_t width, const NuisanceConfig& cfg, Rng& rng) {
  const double area = uniform(rng, cfg.occlusion_area_min, cfg.occlusion_area_max) *
                      static_cast<double>(height * width);
  const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));  // w / h
  Rect r;
  r.h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(area / aspect))), 1, height);
  r.w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(area / static_cast<double>(r.h))), 1, width);
  r.y = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(height - r.h)));
  r.x = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(width - r.w)));
  return r;
}

void apply_photometric(Image& img, const PhotometricParams& p) {
  for (float& v : img.data) {
    const double lin = std::clamp(static_cast<double>(v) * p.contrast + p.brightness, 0.0, 1.0);
    v = static_cast<float>(std::clamp(std::pow(lin, p.gamma), 0.0, 1.0));
  }
}

namespace {

PhotometricParams draw_photometric(const NuisanceConfig& cfg, Rng& rng) {
  PhotometricParams p;
  p.brightness = uniform(rng, -cfg.brightness, cfg.brightness);
  p.contrast = uniform(rng, cfg.contrast_min, cfg.contrast_max);
  p.gamma = uniform(rng, cfg.gamma_min, cfg.gamma_max);
  return p;
}

void add_noise(Image& img, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  std::normal_distribution<double> dist(0.0, sigma);
  for (float& v : img.data) v = static_cast<float>(std::clamp(static_cast<double>(v) + dist(rng), 0.0, 1.0));
}

void fill_rect(Image& img, const Rect& r) {
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = r.y; y < r.y + r.h; ++y)
      for (std::size_t x = r.x; x < r.x + r.w; ++x) img.at(c, y, x) = 0.0f;
}

}  // namespace

ImagePair apply_nuisance(const ImagePair& pair, const NuisanceConfig& cfg, Rng& rng) {
  ImagePair out = pair;
  if (cfg.photometric) {
    const PhotometricParams left = draw_photometric(cfg, rng);
    const PhotometricParams right =
        cfg.photometric_mode == PhotometricMode::shared ? left : draw_photometric(cfg, rng);
    apply_photometric(out.left, left);
    apply_photometric(out.right, right);
  }
  if (cfg.noise) {
    add_noise(out.left, uniform(rng, cfg.noise_sigma_min, cfg.noise_sigma_max), rng);
    add_noise(out.right, uniform(rng, cfg.noise_sigma_min, cfg.noise_sigma_max), rng);
  }
  if (cfg.occlusion) {
    const auto count = uniform_int(rng, static_cast<std::int64_t>(cfg.occlusion_count_min),
                                   static_cast<std::int64_t>(cfg.occlusion_count_max));
    for (std::int64_t i = 0; i < count; ++i) {
      Image& target = coin(rng) ? out.right : out.left;
      fill_rect(target, sample_occlusion(target.height, target.width, cfg, rng));
    }
  }
  return out;
}

}  // namespace bino
