#include "bino/commands.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "bino/errors.hpp"
#include "bino/kernels.hpp"
#include "bino/parallel.hpp"

namespace bino {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kBatchTag = 0xba7c;
constexpr std::uint64_t kStepTag = 0x57e9;
constexpr std::uint64_t kProbeTag = 0x9e0b;

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Json config_json(const ExperimentConfig& cfg) {
  Json j = Json::object();
  for (const auto& [k, v] : cfg.echo()) j[k] = v;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw DataError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

// Written before work starts and finalized afterwards; timestamps live here and
// never in reports.
class RunManifest {
 public:
  RunManifest(fs::path file, const std::string& command, const ExperimentConfig& cfg, std::vector<std::string> outputs)
      : file_(std::move(file)) {
    j_["command"] = command;
    j_["config"] = config_json(cfg);
    j_["seed"] = cfg.seed;
    j_["code_version"] = kCodeVersion;
    j_["started_at"] = utc_now();
    j_["outputs"] = outputs;
    j_["status"] = "running";
    write_json(file_, j_);
  }
  void add_output(const fs::path& path) { j_["outputs"].push_back(path.string()); }
  void finish(const std::string& status) {
    j_["status"] = status;
    j_["finished_at"] = utc_now();
    write_json(file_, j_);
  }

 private:
  fs::path file_;
  Json j_;
};

fs::path manifest_for_file(const fs::path& out) { return fs::path(out.string() + ".run.json"); }

Json report_header(const std::string& command, const ExperimentConfig& cfg) {
  Json j;
  j["command"] = command;
  j["config"] = config_json(cfg);
  j["seed"] = cfg.seed;
  return j;
}

void check_geometry(const EncoderConfig& enc, const BenchConfig& bench) {
  const auto& g = enc.geometry;
  if (g.image_h != bench.crop_h || g.image_w != bench.crop_w)
    throw ConfigError("checkpoint/config geometry mismatch: encoder expects " + std::to_string(g.image_h) + "x" +
                      std::to_string(g.image_w) + ", dataset crops are " + std::to_string(bench.crop_h) + "x" +
                      std::to_string(bench.crop_w));
  if (g.patch_w != bench.patch_w || g.patch_h != bench.patch_h)
    throw ConfigError("checkpoint/config geometry mismatch: patch size differs from the dataset token grid");
}

template <class F>
Json run_reported(const std::string& command, const ExperimentConfig& cfg, const fs::path& out, F body) {
  RunManifest manifest(manifest_for_file(out), command, cfg, {out.string()});
  try {
    Json report = body();
    write_json(out, report);
    manifest.finish("ok");
    return report;
  } catch (...) {
    manifest.finish("failed");
    throw;
  }
}

}  // namespace

LoadedModel load_model(const ExperimentConfig& cfg, const ModelSource& src) {
  LoadedModel m;
  const char* which = src.use_student ? "student/" : "teacher/";
  if (src.checkpoint) {
    const Checkpoint ck = load_checkpoint(*src.checkpoint);
    try {
      m.encoder = encoder_from_echo(ck.config_echo);
    } catch (const ConfigError& e) {
      throw DataError(std::string("checkpoint config echo is unusable: ") + e.what());
    }
    m.params = extract_prefixed(ck.tensors, which);
    if (m.params.size() == 0) throw DataError("checkpoint holds no " + std::string(which) + " tensors");
    m.provenance["source"] = src.checkpoint->filename().string();
    const std::string* step = ck.find_meta("step");
    m.provenance["step"] = step ? *step : "?";
  } else {
    m.encoder = cfg.encoder;
    m.params = init_distill(cfg.encoder, cfg.distill, cfg.seed).teacher;
    m.provenance["source"] = "random-init";
    m.provenance["step"] = "0";
  }
  m.provenance["weights"] = src.use_student ? "student" : "teacher";
  m.encoder.validate();
  return m;
}

Checkpoint make_checkpoint(const DistillState& state, const ExperimentConfig& cfg) {
  Checkpoint ck;
  ck.config_echo = cfg.echo_text();
  ck.meta = {{"step", std::to_string(state.step)},
             {"adam_step", std::to_string(state.moments.step)},
             {"seed", std::to_string(cfg.seed)},
             {"code_version", kCodeVersion}};
  insert_prefixed(ck.tensors, state.student, "student/");
  insert_prefixed(ck.tensors, state.teacher, "teacher/");
  ck.tensors.add("center", state.center);
  for (std::size_t i = 0; i < state.student.size(); ++i) {
    ck.tensors.add("adam.m/" + state.student.name(i), state.moments.m[i]);
    ck.tensors.add("adam.v/" + state.student.name(i), state.moments.v[i]);
  }
  return ck;
}

DistillState restore_state(const Checkpoint& ck) {
  DistillState s;
  s.student = extract_prefixed(ck.tensors, "student/");
  s.teacher = extract_prefixed(ck.tensors, "teacher/");
  if (s.student.size() == 0 || !s.student.same_layout(s.teacher)) throw DataError("checkpoint lacks a student/teacher pair");
  if (!ck.tensors.contains("center")) throw DataError("checkpoint lacks the teacher center");
  s.center = ck.tensors.at("center");
  const ParamSet m = extract_prefixed(ck.tensors, "adam.m/");
  const ParamSet v = extract_prefixed(ck.tensors, "adam.v/");
  if (!m.same_layout(s.student) || !v.same_layout(s.student)) throw DataError("checkpoint optimizer state is incomplete");
  for (std::size_t i = 0; i < m.size(); ++i) {
    s.moments.m.push_back(m.tensor(i));
    s.moments.v.push_back(v.tensor(i));
  }
  auto meta_int = [&](const std::string& key) {
    const std::string* v = ck.find_meta(key);
    if (!v) throw DataError("checkpoint lacks meta '" + key + "'");
    std::int64_t out = 0;
    auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc()) throw DataError("checkpoint meta '" + key + "' is not an integer");
    return out;
  };
  s.step = meta_int("step");
  s.moments.step = meta_int("adam_step");
  return s;
}

Json cmd_gen_bench(const ExperimentConfig& cfg, const fs::path& out, std::size_t n) {
  cfg.bench.validate();
  RunManifest manifest(out / "run.json", "gen-bench", cfg, {(out / "manifest.json").string()});
  try {
    const auto samples = generate(cfg.bench, n);
    write_dataset(out, cfg.bench, samples);
    manifest.finish("ok");
  } catch (...) {
    manifest.finish("failed");
    throw;
  }
  Json j = report_header("gen-bench", cfg);
  j["count"] = n;
  return j;
}

Json cmd_pretrain(const ExperimentConfig& cfg, const PretrainArgs& args) {
  cfg.validate();
  for (const std::string& w : cfg.distill.warnings()) std::cerr << "warning: " << w << "\n";
  const Dataset ds = load_dataset(args.data);
  check_geometry(cfg.encoder, ds.config);
  if (ds.samples.empty()) throw DataError("training set is empty");

  std::error_code ec;
  fs::create_directories(args.out, ec);
  if (ec) throw DataError("cannot create " + args.out.string() + ": " + ec.message());
  RunManifest manifest(args.out / "run.json", "pretrain", cfg,
                       {(args.out / "log.csv").string(), (args.out / "final.ckpt").string()});

  DistillState state;
  if (args.resume) {
    const Checkpoint ck = load_checkpoint(*args.resume);
    if (encoder_from_echo(ck.config_echo) != cfg.encoder)
      throw ConfigError("resume checkpoint was trained with a different encoder configuration");
    state = restore_state(ck);
  } else {
    state = init_distill(cfg.encoder, cfg.distill, cfg.seed);
  }

  const fs::path log_path = args.out / "log.csv";
  const bool append = args.resume && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app | std::ios::binary : std::ios::binary);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (!append) log << "step,loss,mask_ratio,ema_momentum\n";

  const std::int64_t last = args.stop_after ? std::min(*args.stop_after, cfg.distill.steps) : cfg.distill.steps;
  std::vector<double> losses;
  try {
    while (state.step < last) {
      Rng brng = derive_rng(cfg.seed, kBatchTag, static_cast<std::uint64_t>(state.step));
      std::vector<ImagePair> batch;
      for (std::size_t b = 0; b < cfg.distill.batch; ++b) {
        const auto idx = static_cast<std::size_t>(uniform_int(brng, 0, static_cast<std::int64_t>(ds.samples.size()) - 1));
        batch.push_back(ds.samples[idx].pair);
      }
      Rng rng = derive_rng(cfg.seed, kStepTag, static_cast<std::uint64_t>(state.step));
      const StepReport rep = train_step(state, batch, cfg.encoder, cfg.distill, rng);
      losses.push_back(rep.loss);
      log << rep.step << ',' << fmt(rep.loss) << ',' << fmt(rep.mask_ratio) << ',' << fmt(rep.ema_momentum) << '\n';
      log.flush();
      if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
        std::ostringstream name;
        name << "ckpt_" << std::setw(6) << std::setfill('0') << state.step << ".ckpt";
        save_checkpoint(args.out / name.str(), make_checkpoint(state, cfg));
        manifest.add_output(args.out / name.str());
      }
    }
    save_checkpoint(args.out / "final.ckpt", make_checkpoint(state, cfg));
  } catch (const NumericalError&) {
    manifest.finish("aborted: non-finite value");
    throw;
  } catch (...) {
    manifest.finish("failed");
    throw;
  }
  manifest.finish("ok");
  Json j = report_header("pretrain", cfg);
  j["steps_done"] = state.step;
  j["losses"] = losses;
  return j;
}

namespace {

struct ProbeInputs {
  LoadedModel model;
  Dataset data;
};

ProbeInputs prepare(const ExperimentConfig& cfg, const ModelSource& src, const fs::path& data) {
  ProbeInputs in;
  in.model = load_model(cfg, src);
  in.data = load_dataset(data);
  check_geometry(in.model.encoder, in.data.config);
  if (in.data.samples.empty()) throw DataError("dataset is empty");
  return in;
}

struct PairDescriptors {
  DescriptorMap left, right;
};

std::vector<PairDescriptors> export_all(const ProbeInputs& in) {
  std::vector<PairDescriptors> out(in.data.samples.size());
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& s = in.data.samples[i];
    out[i].left = export_descriptors(in.model.params, in.model.encoder, s.pair.left, true, std::to_string(s.index) + "_L");
    out[i].right = export_descriptors(in.model.params, in.model.encoder, s.pair.right, true, std::to_string(s.index) + "_R");
  });
  return out;
}

Json scores_json(const MatchScores& s) {
  return Json{{"pck0", s.pck0}, {"pck1", s.pck1}, {"pck2", s.pck2}, {"epe", s.epe}, {"count", s.count}};
}

// Token-weighted pooling of per-sample scores.
struct ScorePool {
  double h0 = 0, h1 = 0, h2 = 0, err = 0;
  std::size_t n = 0;
  void add(const MatchScores& s) {
    const auto c = static_cast<double>(s.count);
    h0 += s.pck0 * c;
    h1 += s.pck1 * c;
    h2 += s.pck2 * c;
    err += s.epe * c;
    n += s.count;
  }
  MatchScores mean() const {
    MatchScores s;
    s.count = n;
    if (n == 0) return s;
    const auto c = static_cast<double>(n);
    s.pck0 = h0 / c;
    s.pck1 = h1 / c;
    s.pck2 = h2 / c;
    s.epe = err / c;
    return s;
  }
};

void write_descriptor_file(const fs::path& path, const DescriptorMap& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("BINODESC", 8);
  auto u32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  u32(static_cast<std::uint32_t>(m.rows));
  u32(static_cast<std::uint32_t>(m.cols));
  u32(static_cast<std::uint32_t>(m.dim));
  for (float f : m.desc) u32(std::bit_cast<std::uint32_t>(f));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

std::vector<double> nearest_neighbour_disparity(const DescriptorMap& left, const DescriptorMap& right) {
  if (left.rows != right.rows || left.cols != right.cols || left.dim != right.dim)
    throw ShapeError("nearest_neighbour_disparity: descriptor maps differ in shape");
  std::vector<double> out(left.rows * left.cols);
  for (std::size_t r = 0; r < left.rows; ++r)
    for (std::size_t p = 0; p < left.cols; ++p) {
      std::size_t best = 0;
      double best_sim = -INFINITY;
      for (std::size_t q = 0; q < right.cols; ++q) {
        const double s = kernels::dot(left.at(r, p), right.at(r, q), left.dim);
        if (s > best_sim) {
          best_sim = s;
          best = q;
        }
      }
      out[r * left.cols + p] = static_cast<double>(p) - static_cast<double>(best);
    }
  return out;
}

Json cmd_export_desc(const ExperimentConfig& cfg, const ModelSource& src, const fs::path& data, const fs::path& out) {
  const ProbeInputs in = prepare(cfg, src, data);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create " + out.string() + ": " + ec.message());
  std::vector<std::string> files;
  for (const auto& s : in.data.samples) {
    files.push_back((out / (std::to_string(s.index) + "_L.desc")).string());
    files.push_back((out / (std::to_string(s.index) + "_R.desc")).string());
  }
  files.push_back((out / "index.json").string());
  RunManifest manifest(out / "run.json", "export-desc", cfg, files);
  try {
    const auto descs = export_all(in);
    Json j = report_header("export-desc", cfg);
    j["model"] = in.model.provenance;
    Json entries = Json::array();
    for (std::size_t i = 0; i < descs.size(); ++i) {
      const std::string base = std::to_string(in.data.samples[i].index);
      write_descriptor_file(out / (base + "_L.desc"), descs[i].left);
      write_descriptor_file(out / (base + "_R.desc"), descs[i].right);
      entries.push_back(Json{{"index", in.data.samples[i].index},
                             {"left", base + "_L.desc"},
                             {"right", base + "_R.desc"},
                             {"rows", descs[i].left.rows},
                             {"cols", descs[i].left.cols},
                             {"dim", descs[i].left.dim}});
    }
    j["descriptors"] = entries;
    write_json(out / "index.json", j);
    manifest.finish("ok");
    return j;
  } catch (...) {
    manifest.finish("failed");
    throw;
  }
}

Json cmd_probe_stereo(const ExperimentConfig& cfg, const ModelSource& src, const fs::path& data, const fs::path& out) {
  const ProbeInputs in = prepare(cfg, src, data);
  return run_reported("probe-stereo", cfg, out, [&] {
    const auto descs = export_all(in);
    const double token_px = static_cast<double>(in.model.encoder.geometry.column_pitch());
    std::vector<StereoOutput> outs(descs.size());
    parallel_for(descs.size(), [&](std::size_t i) { outs[i] = run_stereo(descs[i].left, descs[i].right, cfg.stereo); });

    Json pairs = Json::array();
    double wta_epe = 0, sgm_epe = 0, sgm_bad = 0, sgm_d1 = 0, keep = 0, wta_bad = 0;
    for (std::size_t i = 0; i < descs.size(); ++i) {
      const DisparityGrid& gt = *in.data.samples[i].pair.gt;
      const std::vector<double> wta_d(outs[i].wta.begin(), outs[i].wta.end());
      const DisparityErrors ew = disparity_metrics(wta_d, gt, token_px);
      const DisparityErrors es = disparity_metrics(outs[i].refined, gt, token_px);
      pairs.push_back(Json{{"index", in.data.samples[i].index},
                           {"gt_wta_epe", ew.epe_px},
                           {"gt_wta_bad1tok", ew.bad1tok},
                           {"gt_sgmloc_epe", es.epe_px},
                           {"gt_sgmloc_bad1tok", es.bad1tok},
                           {"gt_sgmloc_d1", es.d1},
                           {"lr_keep", outs[i].lr.keep}});
      wta_epe += ew.epe_px;
      wta_bad += ew.bad1tok;
      sgm_epe += es.epe_px;
      sgm_bad += es.bad1tok;
      sgm_d1 += es.d1;
      keep += outs[i].lr.keep;
    }
    const auto n = static_cast<double>(descs.size());
    std::vector<std::vector<float>> lp, rp;
    for (const auto& d : descs) {
      lp.push_back(mean_pool(d.left));
      rp.push_back(mean_pool(d.right));
    }
    Json j = report_header("probe-stereo", cfg);
    j["model"] = in.model.provenance;
    j["token_px"] = token_px;
    j["pairs"] = pairs;
    j["aggregate"] = Json{{"gt_wta_epe", wta_epe / n},     {"gt_wta_bad1tok", wta_bad / n},
                          {"gt_sgmloc_epe", sgm_epe / n},  {"gt_sgmloc_bad1tok", sgm_bad / n},
                          {"gt_sgmloc_d1", sgm_d1 / n},    {"lr_keep", keep / n},
                          {"pairs", descs.size()}};
    if (descs.size() >= 2) {
      Rng rng = derive_rng(cfg.seed, kProbeTag, 1);
      const RetrievalResult rr = retrieval_eval(lp, rp, cfg.retrieval_hard_subset, rng);
      j["retrieval"] = Json{{"top1", rr.top1},   {"top5", rr.top5},     {"hard1", rr.hard1},
                            {"hard5", rr.hard5}, {"margin", rr.margin}, {"subset", rr.subset}};
    }
    return j;
  });
}

Json cmd_probe_mech(const ExperimentConfig& cfg, const ModelSource& src, const fs::path& data, const fs::path& out) {
  const ProbeInputs in = prepare(cfg, src, data);
  return run_reported("probe-mech", cfg, out, [&] {
    std::vector<ProbeSample> pool;
    for (const auto& s : in.data.samples) pool.push_back({s.pair, s.shift_tokens});
    std::vector<ProbeSample> probes;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      Rng rng = derive_rng(cfg.seed, kProbeTag + 1, i);
      probes.push_back(apply_counterfactual(pool, i, cfg.mech_counterfactual, in.model.encoder.geometry, rng));
    }
    const auto layers = layerwise_sweep(in.model.params, in.model.encoder, probes, cfg.mech_temperature);
    Json arr = Json::array();
    for (const auto& l : layers) {
      const auto& m = l.metrics;
      arr.push_back(Json{{"layer", l.name},      {"row_conc", m.row_conc}, {"gt_at_0", m.gt_at_0},
                         {"gt_at_1", m.gt_at_1}, {"mrr", m.mrr},           {"entropy", m.entropy},
                         {"acc_at_0", m.acc_at_0}, {"acc_at_1", m.acc_at_1}, {"queries", m.queries}});
    }
    Json j = report_header("probe-mech", cfg);
    j["model"] = in.model.provenance;
    j["temperature"] = cfg.mech_temperature;
    j["counterfactual"] = to_string(cfg.mech_counterfactual);
    j["layers"] = arr;
    return j;
  });
}

Json cmd_eval_synth(const ExperimentConfig& cfg, const ModelSource& src, const fs::path& data, const fs::path& out) {
  const ProbeInputs in = prepare(cfg, src, data);
  return run_reported("eval-synth", cfg, out, [&] {
    const auto descs = export_all(in);
    const std::size_t pitch = in.data.config.pitch();
    ScorePool nn, w, s;
    for (std::size_t i = 0; i < descs.size(); ++i) {
      const DisparityGrid& gt = *in.data.samples[i].pair.gt;
      nn.add(score_matching(nearest_neighbour_disparity(descs[i].left, descs[i].right), gt, pitch));
      const StereoOutput so = run_stereo(descs[i].left, descs[i].right, cfg.stereo);
      w.add(score_matching(std::vector<double>(so.wta.begin(), so.wta.end()), gt, pitch));
      s.add(score_matching(std::vector<double>(so.sgm.begin(), so.sgm.end()), gt, pitch));
    }
    Json j = report_header("eval-synth", cfg);
    j["model"] = in.model.provenance;
    j["pairs"] = descs.size();
    j["nearest_neighbour"] = scores_json(nn.mean());
    j["wta"] = scores_json(w.mean());
    j["sgm"] = scores_json(s.mean());
    return j;
  });
}

}  // namespace bino
