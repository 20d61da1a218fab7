#include "bino/synthbench.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

#include "bino/errors.hpp"
#include "bino/parallel.hpp"

namespace bino {

namespace {
constexpr std::uint64_t kSampleTag = 0x5b5b;

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("bad number for " + key + ": " + s);
  return v;
}

std::size_t parse_size(const std::string& s, const std::string& key) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw DataError("bad integer for " + key + ": " + s);
  return v;
}
}  // namespace

std::string to_string(Preset p) {
  switch (p) {
    case Preset::easy_s1: return "EASY_S1";
    case Preset::hard_s1: return "HARD_S1";
    case Preset::hard_s2: return "HARD_S2";
  }
  return "?";
}

Preset parse_preset(const std::string& s) {
  for (Preset p : {Preset::easy_s1, Preset::hard_s1, Preset::hard_s2})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown preset '" + s + "' (EASY_S1, HARD_S1, HARD_S2)");
}

void BenchConfig::apply_preset(Preset p) {
  preset = p;
  d_min = 2.0;
  d_max = p == Preset::hard_s2 ? 24.0 : 12.0;
  occlusion = photometric = p != Preset::easy_s1;
}

BenchConfig BenchConfig::for_preset(Preset p) {
  BenchConfig c;
  c.apply_preset(p);
  return c;
}

std::vector<std::size_t> BenchConfig::shift_tokens() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; static_cast<double>(k * pitch()) <= d_max; ++k)
    if (static_cast<double>(k * pitch()) >= d_min) out.push_back(k);
  return out;
}

NuisanceConfig BenchConfig::nuisance() const {
  NuisanceConfig n = NuisanceConfig::full_hard();
  n.occlusion = occlusion;
  n.photometric = photometric;
  n.noise = photometric;
  return n;
}

void BenchConfig::validate() const {
  if (crop_h == 0 || crop_w == 0 || patch_h == 0 || patch_w == 0) throw ConfigError("bench extents must be positive");
  if (crop_h % patch_h != 0 || crop_w % patch_w != 0) throw ConfigError("bench crop must tile into patches");
  if (patch_w % 2 != 0) throw ConfigError("bench patch_w must be even");
  if (d_min < 0.0 || d_min > d_max) throw ConfigError("bench displacement range is invalid");
  if (d_max >= static_cast<double>(crop_w)) throw ConfigError("bench d_max must be below the crop width");
  if (shift_tokens().empty()) throw ConfigError("bench displacement range contains no whole-patch shift");
}

Image shift_reflect(const Image& left, std::size_t s) {
  Image right(left.channels, left.height, left.width);
  const std::size_t w = left.width;
  for (std::size_t x = 0; x < w; ++x) {
    std::size_t src = x + s;
    // Reflect about the last column (…, w-2, w-1, w-2, …), period 2(w-1).
    if (w > 1) {
      const std::size_t period = 2 * (w - 1);
      src %= period;
      if (src >= w) src = period - src;
    } else {
      src = 0;
    }
    for (std::size_t c = 0; c < left.channels; ++c)
      for (std::size_t y = 0; y < left.height; ++y) right.at(c, y, x) = left.at(c, y, src);
  }
  return right;
}

DisparityGrid constant_disparity(std::size_t rows, std::size_t cols, std::size_t shift_tokens, std::size_t pitch) {
  DisparityGrid g;
  g.rows = rows;
  g.cols = cols;
  g.disp_px.assign(rows * cols, 0.0f);
  g.valid.assign(rows * cols, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = shift_tokens; p < cols; ++p) {
      g.valid[r * cols + p] = 1;
      g.disp_px[r * cols + p] = static_cast<float>(shift_tokens * pitch);
    }
  return g;
}

namespace {

// Bilinear value noise with smoothstep weights on a lattice of `cell` pixels.
void add_value_noise(Image& img, std::size_t cell, double amp, Rng& rng) {
  const std::size_t gh = img.height / cell + 2, gw = img.width / cell + 2;
  for (std::size_t c = 0; c < img.channels; ++c) {
    std::vector<double> lattice(gh * gw);
    for (double& v : lattice) v = uniform(rng, -1.0, 1.0);
    for (std::size_t y = 0; y < img.height; ++y) {
      const double fy = static_cast<double>(y) / static_cast<double>(cell);
      const auto y0 = static_cast<std::size_t>(fy);
      double ty = fy - static_cast<double>(y0);
      ty = ty * ty * (3 - 2 * ty);
      for (std::size_t x = 0; x < img.width; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(cell);
        const auto x0 = static_cast<std::size_t>(fx);
        double tx = fx - static_cast<double>(x0);
        tx = tx * tx * (3 - 2 * tx);
        const double a = lattice[y0 * gw + x0], b = lattice[y0 * gw + x0 + 1];
        const double d = lattice[(y0 + 1) * gw + x0], e = lattice[(y0 + 1) * gw + x0 + 1];
        const double v = (a * (1 - tx) + b * tx) * (1 - ty) + (d * (1 - tx) + e * tx) * ty;
        img.at(c, y, x) += static_cast<float>(amp * v);
      }
    }
  }
}

}  // namespace

Image procedural_source(std::size_t height, std::size_t width, Rng& rng) {
  Image img(3, height, width);
  std::array<double, 3> base{};
  for (double& b : base) b = uniform(rng, 0.3, 0.7);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < height * width; ++i) img.data[c * height * width + i] = static_cast<float>(base[c]);
  add_value_noise(img, 32, 0.20, rng);
  add_value_noise(img, 12, 0.15, rng);
  add_value_noise(img, 5, 0.12, rng);
  add_value_noise(img, 2, 0.06, rng);

  const auto shapes = uniform_int(rng, 6, 14);
  for (std::int64_t s = 0; s < shapes; ++s) {
    std::array<float, 3> color{};
    for (float& v : color) v = static_cast<float>(uniform(rng, 0.0, 1.0));
    const double cy = uniform(rng, 0.0, static_cast<double>(height));
    const double cx = uniform(rng, 0.0, static_cast<double>(width));
    const double ry = uniform(rng, 2.0, static_cast<double>(height) / 4.0);
    const double rx = uniform(rng, 2.0, static_cast<double>(width) / 8.0);
    const bool disc = coin(rng);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
  }
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return quantize8(img);
}

namespace {

struct SourcePool {
  std::vector<Image> images;
};

SourcePool load_sources(const BenchConfig& cfg) {
  SourcePool pool;
  if (cfg.source_manifest.empty()) return pool;
  std::ifstream in(cfg.source_manifest);
  if (!in) throw DataError("cannot open source manifest " + cfg.source_manifest.string());
  const auto dir = cfg.source_manifest.parent_path();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::filesystem::path p(line);
    Image img = read_pnm(p.is_absolute() ? p : dir / p);
    if (img.height < cfg.crop_h || img.width < cfg.crop_w)
      throw DataError("source " + line + " is smaller than the " + std::to_string(cfg.crop_h) + "x" +
                      std::to_string(cfg.crop_w) + " crop");
    pool.images.push_back(std::move(img));
  }
  if (pool.images.empty()) throw DataError("source manifest lists no images");
  return pool;
}

Image crop(const Image& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  Image out(src.channels, h, w);
  for (std::size_t c = 0; c < src.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

Image base_crop(const BenchConfig& cfg, const SourcePool& pool, Rng& rng) {
  if (pool.images.empty()) {
    const Image src = procedural_source(cfg.crop_h * 3 / 2, cfg.crop_w * 3 / 2, rng);
    const auto y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(src.height - cfg.crop_h)));
    const auto x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(src.width - cfg.crop_w)));
    return crop(src, y0, x0, cfg.crop_h, cfg.crop_w);
  }
  const auto& src = pool.images[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<std::int64_t>(pool.images.size()) - 1))];
  const auto y0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(src.height - cfg.crop_h)));
  const auto x0 = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(src.width - cfg.crop_w)));
  return crop(src, y0, x0, cfg.crop_h, cfg.crop_w);
}

BenchSample make_sample(const BenchConfig& cfg, const SourcePool& pool, std::size_t index,
                        std::optional<std::size_t> forced_shift_px) {
  Rng rng = derive_rng(cfg.seed, kSampleTag, index);
  BenchSample s;
  s.index = index;
  s.seed = cfg.seed;
  s.preset = cfg.preset;
  const Image left = base_crop(cfg, pool, rng);
  const auto shifts = cfg.shift_tokens();
  const std::size_t k = shifts[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(shifts.size()) - 1))];
  std::size_t shift_px = k * cfg.pitch();
  if (forced_shift_px) shift_px = *forced_shift_px;
  s.shift_px = static_cast<double>(shift_px);
  s.shift_tokens = shift_px / cfg.pitch();
  s.pair.left = left;
  s.pair.right = shift_reflect(left, shift_px);
  if (!forced_shift_px) {
    s.pair = apply_nuisance(s.pair, cfg.nuisance(), rng);
    s.pair.left = quantize8(s.pair.left);
    s.pair.right = quantize8(s.pair.right);
  }
  DisparityGrid gt = constant_disparity(cfg.grid_rows(), cfg.grid_cols(), s.shift_tokens, cfg.pitch());
  if (shift_px % cfg.pitch() != 0)
    for (std::size_t i = 0; i < gt.disp_px.size(); ++i)
      if (gt.valid[i]) gt.disp_px[i] = static_cast<float>(shift_px);
  s.pair.gt = std::move(gt);
  return s;
}

}  // namespace

BenchSample generate_one(const BenchConfig& cfg, std::size_t index) {
  cfg.validate();
  return make_sample(cfg, load_sources(cfg), index, std::nullopt);
}

BenchSample generate_with_shift(const BenchConfig& cfg, std::size_t index, std::size_t shift_px) {
  cfg.validate();
  if (shift_px >= cfg.crop_w) throw ConfigError("shift must be below the crop width");
  return make_sample(cfg, load_sources(cfg), index, shift_px);
}

std::vector<BenchSample> generate(const BenchConfig& cfg, std::size_t n) {
  cfg.validate();
  const SourcePool pool = load_sources(cfg);
  std::vector<BenchSample> out(n);
  parallel_for(n, [&](std::size_t i) { out[i] = make_sample(cfg, pool, i, std::nullopt); });
  return out;
}

std::vector<std::pair<std::string, std::string>> echo(const BenchConfig& c) {
  return {
      {"bench.source_manifest", c.source_manifest.string()},
      {"bench.crop_h", std::to_string(c.crop_h)},
      {"bench.crop_w", std::to_string(c.crop_w)},
      {"bench.patch_h", std::to_string(c.patch_h)},
      {"bench.patch_w", std::to_string(c.patch_w)},
      {"bench.d_min", fmt_double(c.d_min)},
      {"bench.d_max", fmt_double(c.d_max)},
      {"bench.preset", to_string(c.preset)},
      {"bench.occlusion", c.occlusion ? "true" : "false"},
      {"bench.photometric", c.photometric ? "true" : "false"},
      {"bench.seed", std::to_string(c.seed)},
  };
}

namespace {

BenchConfig bench_from_echo(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("dataset manifest lacks " + k);
    return it->second;
  };
  auto flag = [&](const std::string& k) {
    const std::string& v = get(k);
    if (v != "true" && v != "false") throw DataError("bad boolean for " + k);
    return v == "true";
  };
  BenchConfig c;
  c.source_manifest = get("bench.source_manifest");
  c.crop_h = parse_size(get("bench.crop_h"), "bench.crop_h");
  c.crop_w = parse_size(get("bench.crop_w"), "bench.crop_w");
  c.patch_h = parse_size(get("bench.patch_h"), "bench.patch_h");
  c.patch_w = parse_size(get("bench.patch_w"), "bench.patch_w");
  c.d_min = parse_double(get("bench.d_min"), "bench.d_min");
  c.d_max = parse_double(get("bench.d_max"), "bench.d_max");
  try {
    c.preset = parse_preset(get("bench.preset"));
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  c.occlusion = flag("bench.occlusion");
  c.photometric = flag("bench.photometric");
  c.seed = parse_size(get("bench.seed"), "bench.seed");
  return c;
}

std::string stem(std::size_t index) { return std::to_string(index); }

}  // namespace

void write_dataset(const std::filesystem::path& root, const BenchConfig& cfg, const std::vector<BenchSample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw DataError("cannot create " + root.string() + ": " + ec.message());
  nlohmann::json manifest;
  nlohmann::json cfg_json = nlohmann::json::object();
  for (const auto& [k, v] : echo(cfg)) cfg_json[k] = v;
  manifest["config"] = cfg_json;
  manifest["seed"] = cfg.seed;
  manifest["count"] = samples.size();
  nlohmann::json entries = nlohmann::json::array();
  for (const BenchSample& s : samples) {
    const std::string base = stem(s.index);
    write_ppm(root / (base + "_L.ppm"), s.pair.left);
    write_ppm(root / (base + "_R.ppm"), s.pair.right);
    std::ofstream gt(root / (base + "_gt.csv"), std::ios::binary);
    if (!gt) throw DataError("cannot write " + (root / (base + "_gt.csv")).string());
    gt << "row,col,disp_tokens\n";
    const DisparityGrid& g = *s.pair.gt;
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t p = 0; p < g.cols; ++p)
        if (g.is_valid(r, p)) gt << r << ',' << p << ',' << fmt_double(g.at(r, p) / static_cast<double>(cfg.pitch())) << '\n';
    if (!gt) throw DataError("write failed for " + base + "_gt.csv");
    nlohmann::json e;
    e["index"] = s.index;
    e["shift_px"] = s.shift_px;
    e["shift_tokens"] = s.shift_tokens;
    e["files"] = {base + "_L.ppm", base + "_R.ppm", base + "_gt.csv"};
    entries.push_back(e);
  }
  manifest["samples"] = entries;
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write manifest in " + root.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("manifest write failed in " + root.string());
}

Dataset load_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + root.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  Dataset ds;
  try {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : manifest.at("config").items()) kv[k] = v.get<std::string>();
    ds.config = bench_from_echo(kv);
    for (const auto& e : manifest.at("samples")) {
      BenchSample s;
      s.index = e.at("index").get<std::size_t>();
      s.shift_px = e.at("shift_px").get<double>();
      s.shift_tokens = e.at("shift_tokens").get<std::size_t>();
      s.seed = ds.config.seed;
      s.preset = ds.config.preset;
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  const BenchConfig& cfg = ds.config;
  for (BenchSample& s : ds.samples) {
    const std::string base = stem(s.index);
    s.pair.left = read_pnm(root / (base + "_L.ppm"));
    s.pair.right = read_pnm(root / (base + "_R.ppm"));
    if (s.pair.left.height != cfg.crop_h || s.pair.left.width != cfg.crop_w || !s.pair.left.same_shape(s.pair.right))
      throw DataError("sample " + base + " does not match the manifest crop size");
    DisparityGrid g;
    g.rows = cfg.grid_rows();
    g.cols = cfg.grid_cols();
    g.disp_px.assign(g.rows * g.cols, 0.0f);
    g.valid.assign(g.rows * g.cols, 0);
    std::ifstream gt(root / (base + "_gt.csv"));
    if (!gt) throw DataError("missing " + base + "_gt.csv");
    std::string line;
    std::getline(gt, line);
    if (line != "row,col,disp_tokens") throw DataError(base + "_gt.csv has an unexpected header");
    while (std::getline(gt, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b, c;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c))
        throw DataError("malformed line in " + base + "_gt.csv: " + line);
      const std::size_t r = parse_size(a, "row"), p = parse_size(b, "col");
      if (r >= g.rows || p >= g.cols) throw DataError("gt cell out of range in " + base + "_gt.csv");
      g.disp_px[r * g.cols + p] = static_cast<float>(parse_double(c, "disp_tokens") * static_cast<double>(cfg.pitch()));
      g.valid[r * g.cols + p] = 1;
    }
    s.pair.gt = std::move(g);
  }
  return ds;
}

MatchScores score_matching(const std::vector<double>& pred_tokens, const DisparityGrid& gt, std::size_t pitch) {
  if (pred_tokens.size() != gt.rows * gt.cols) throw ShapeError("score_matching: prediction grid shape mismatch");
  MatchScores s;
  std::size_t hit0 = 0, hit1 = 0, hit2 = 0;
  double err_sum = 0.0;
  for (std::size_t i = 0; i < pred_tokens.size(); ++i) {
    if (!gt.valid[i]) continue;
    const double err = std::abs(pred_tokens[i] - static_cast<double>(gt.disp_px[i]) / static_cast<double>(pitch));
    hit0 += err <= 0.0 ? 1 : 0;
    hit1 += err <= 1.0 ? 1 : 0;
    hit2 += err <= 2.0 ? 1 : 0;
    err_sum += err;
    ++s.count;
  }
  if (s.count == 0) throw DataError("score_matching: no valid tokens");
  const double n = static_cast<double>(s.count);
  s.pck0 = 100.0 * static_cast<double>(hit0) / n;
  s.pck1 = 100.0 * static_cast<double>(hit1) / n;
  s.pck2 = 100.0 * static_cast<double>(hit2) / n;
  s.epe = err_sum / n;
  return s;
}

}  // namespace bino
