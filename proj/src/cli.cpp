#include <iostream>

#include "CLI11.hpp"
#include "bino/commands.hpp"
#include "bino/errors.hpp"

namespace bino {

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value config file");
  sub->add_option("--set", c.overrides, "override, key=value (repeatable)");
  sub->add_option("--seed", c.seed, "run seed");
}

struct ModelFlags {
  std::string ckpt;
  bool random_init = false;
  bool student = false;
};

void add_model(CLI::App* sub, ModelFlags& m) {
  sub->add_option("--ckpt", m.ckpt, "checkpoint file");
  sub->add_flag("--random-init", m.random_init, "use step-0 weights from the config and seed");
  sub->add_flag("--student", m.student, "read student instead of teacher weights");
}

ExperimentConfig build_config(const Common& c, const std::vector<std::string>& extra) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  apply_overrides(cfg, c.overrides);
  apply_overrides(cfg, extra);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  return cfg;
}

ModelSource model_source(const ModelFlags& m) {
  if (m.ckpt.empty() == !m.random_init) throw ConfigError("give exactly one of --ckpt or --random-init");
  ModelSource src;
  if (!m.ckpt.empty()) src.checkpoint = m.ckpt;
  src.use_student = m.student;
  return src;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Binocular token encoder: synthetic benchmark, distillation and probes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kCodeVersion);

  Common common;
  ModelFlags model;
  std::string out, data, resume, preset, counterfactual;
  std::size_t n = 8;
  std::optional<std::int64_t> steps;
  std::optional<std::size_t> dmax;
  std::optional<double> p1, p2, lr_tol, temp;

  auto* gen = app.add_subcommand("gen-bench", "generate a synthetic stereo benchmark");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--n", n, "number of pairs");
  gen->add_option("--preset", preset, "EASY_S1 | HARD_S1 | HARD_S2");

  auto* pre = app.add_subcommand("pretrain", "masked teacher-student distillation");
  add_common(pre, common);
  pre->add_option("--data", data, "synthbench directory")->required();
  pre->add_option("--out", out, "run directory")->required();
  pre->add_option("--steps", steps, "total optimizer steps");
  pre->add_option("--resume", resume, "checkpoint to resume from");

  auto* exp = app.add_subcommand("export-desc", "export frozen descriptors");
  add_common(exp, common);
  add_model(exp, model);
  exp->add_option("--data", data, "synthbench directory")->required();
  exp->add_option("--out", out, "output directory")->required();

  auto* ps = app.add_subcommand("probe-stereo", "frozen cost volume stereo probe");
  add_common(ps, common);
  add_model(ps, model);
  ps->add_option("--data", data, "synthbench directory")->required();
  ps->add_option("--out", out, "report path")->required();
  ps->add_option("--dmax", dmax, "disparity range in tokens");
  ps->add_option("--p1", p1, "SGM small penalty");
  ps->add_option("--p2", p2, "SGM large penalty");
  ps->add_option("--lr-tol", lr_tol, "left-right tolerance in tokens");

  auto* pm = app.add_subcommand("probe-mech", "layerwise phase-similarity geometry");
  add_common(pm, common);
  add_model(pm, model);
  pm->add_option("--data", data, "synthbench directory")->required();
  pm->add_option("--out", out, "report path")->required();
  pm->add_option("--temp", temp, "softmax temperature");
  pm->add_option("--counterfactual", counterfactual, "none | replace-right | row-shuffle-right | duplicate-left");

  auto* ev = app.add_subcommand("eval-synth", "matching accuracy on a synthbench set");
  add_common(ev, common);
  add_model(ev, model);
  ev->add_option("--data", data, "synthbench directory")->required();
  ev->add_option("--out", out, "report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };

  try {
    std::vector<std::string> extra;
    if (!preset.empty()) extra.push_back("bench.preset=" + preset);
    if (steps) extra.push_back("distill.steps=" + std::to_string(*steps));
    if (dmax) extra.push_back("stereo.dmax=" + std::to_string(*dmax));
    if (p1) extra.push_back("stereo.p1=" + fmt(*p1));
    if (p2) extra.push_back("stereo.p2=" + fmt(*p2));
    if (lr_tol) extra.push_back("stereo.lr_tol=" + fmt(*lr_tol));
    if (temp) extra.push_back("mech.temperature=" + fmt(*temp));
    if (!counterfactual.empty()) extra.push_back("mech.counterfactual=" + counterfactual);
    const ExperimentConfig cfg = build_config(common, extra);

    if (gen->parsed()) {
      cmd_gen_bench(cfg, out, n);
    } else if (pre->parsed()) {
      PretrainArgs a;
      a.data = data;
      a.out = out;
      if (!resume.empty()) a.resume = resume;
      cmd_pretrain(cfg, a);
    } else if (exp->parsed()) {
      cmd_export_desc(cfg, model_source(model), data, out);
    } else if (ps->parsed()) {
      cmd_probe_stereo(cfg, model_source(model), data, out);
    } else if (pm->parsed()) {
      cmd_probe_mech(cfg, model_source(model), data, out);
    } else if (ev->parsed()) {
      cmd_eval_synth(cfg, model_source(model), data, out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config);
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::data);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::numerical);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace bino
