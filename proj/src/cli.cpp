#include "ncfkkt/cli.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncfkkt/harness.hpp"
#include "ncfkkt/kernels.hpp"
#include "ncfkkt/kkt_factory.hpp"
#include "ncfkkt/serialize.hpp"

namespace ncfkkt {

namespace {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

json checks_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const Check& c : checks)
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return arr;
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

Check at_most(const std::string& name, double value, double limit) {
  return {name, value <= limit, fmt(value) + " <= " + fmt(limit)};
}
Check at_least(const std::string& name, double value, double limit) {
  return {name, value >= limit, fmt(value) + " >= " + fmt(limit)};
}

// Inline flags that mirror config-file fields. When --config is given the file
// wins and every inline flag that was also given is reported and ignored.
class InlineFlags {
 public:
  template <class T>
  void add(CLI::App* sub, const std::string& flag, T& target, const std::string& help,
           std::function<void(ExperimentConfig&, const T&)> apply) {
    CLI::Option* opt = sub->add_option(flag, target, help);
    entries_.push_back({opt, [&target, apply](ExperimentConfig& c) { apply(c, target); }});
  }
  void apply(ExperimentConfig& c, bool from_file, std::ostream& err) const {
    for (const auto& [opt, fn] : entries_) {
      if (opt->count() == 0) continue;
      if (from_file)
        err << "warning: " << opt->get_name() << " ignored, the config file takes precedence\n";
      else
        fn(c);
    }
  }

 private:
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> entries_;
};

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out_dir = "out";
  bool json_out = false;
};

ExperimentConfig load_config(const Globals& g, ExperimentConfig base, const InlineFlags& flags,
                             std::ostream& err) {
  const bool from_file = !g.config.empty();
  if (from_file) {
    from_json(read_json_file(g.config), base);
    if (g.seed_opt->count() > 0)
      err << "warning: --seed ignored, the config file takes precedence\n";
  } else if (g.seed_opt->count() > 0) {
    base.seeds = {g.seed};
  }
  flags.apply(base, from_file, err);
  base.out_dir = g.out_dir;
  base.validate();
  return base;
}

void print_checks(std::ostream& out, const std::vector<Check>& checks) {
  for (const Check& c : checks)
    out << "  " << (c.passed ? "ok   " : "FAIL ") << c.name << "  " << c.detail << '\n';
}

int finish(std::ostream& out, std::ostream& err, const Globals& g, json body,
           const std::vector<Check>& checks, const std::function<void()>& human) {
  bool ok = true;
  for (const Check& c : checks) ok = ok && c.passed;
  if (g.json_out) {
    body["checks"] = checks_json(checks);
    body["passed"] = ok;
    out << body.dump(2) << '\n';
  } else {
    human();
    print_checks(out, checks);
    out << (ok ? "all checks passed" : "checks failed") << '\n';
  }
  for (const Check& c : checks)
    if (!c.passed) err << "failed: " << c.name << " (" << c.detail << ")\n";
  return ok ? 0 : 1;
}

std::string cell_name(const NetSpec& s) {
  std::ostringstream os;
  os << 'L' << s.depth() << "_p" << s.p << "_a" << s.alpha;
  return os.str();
}

// Problem shared by the construct/verify/report commands.
struct KktArgs {
  int L = 3;
  int p = 2;
  double alpha = 0.0;
  std::size_t n = 100;
  std::size_t d = 10;
  std::size_t width = 10;
  std::string inputs;  // empty: per-case default
  std::string labels;
  std::string input;
};

// Gaussian data except for kinked p = 1 networks, where the small problem is
// piecewise linear and Gaussian data rarely has a KKT point off the kinks.
std::pair<InputDistribution, LabelSource> kkt_data(const KktArgs& a, const NetSpec& spec) {
  const bool cone = spec.nonsmooth();
  return {a.inputs.empty() ? (cone ? InputDistribution::HalfNormal : InputDistribution::Gaussian)
                           : parse_input(a.inputs),
          a.labels.empty() ? (cone ? LabelSource::HalfNormal : LabelSource::Gaussian)
                           : parse_label(a.labels)};
}

NetSpec kkt_spec(const KktArgs& a) {
  std::vector<std::size_t> widths{a.d};
  for (int l = 1; l < a.L; ++l) widths.push_back(a.width);
  widths.push_back(1);
  NetSpec s{widths, a.alpha, a.p};
  s.validate();
  return s;
}

json problem_json(const NetSpec& spec, std::size_t n, std::uint64_t seed,
                  std::pair<InputDistribution, LabelSource> data) {
  return {{"spec", spec},
          {"n", n},
          {"seed", seed},
          {"inputs", input_name(data.first)},
          {"labels", label_name(data.second)}};
}

NcfProblem problem_from_json(const json& j) {
  return random_ncf_problem(j.at("spec").get<NetSpec>(), j.at("n").get<std::size_t>(),
                            j.at("seed").get<std::uint64_t>(),
                            parse_input(j.value("inputs", std::string("gaussian"))),
                            parse_label(j.value("labels", std::string("gaussian"))));
}

void write_kkt_meta(const std::filesystem::path& dir, const std::string& command,
                    const json& problem) {
  std::filesystem::create_directories(dir);
  const NetSpec spec = problem.at("spec").get<NetSpec>();
  write_json_file(dir / "meta.json", {{"build", build_id()},
                                      {"kernels", kernels::active().name},
                                      {"generator", kRngName},
                                      {"nonsmooth", spec.nonsmooth()},
                                      {"command", command},
                                      {"problem", problem}});
}

void apply_kkt_config(const Globals& g, KktArgs& a, std::uint64_t& seed, std::ostream& err,
                      const std::vector<CLI::Option*>& inline_opts) {
  if (g.config.empty()) return;
  for (CLI::Option* o : inline_opts)
    if (o->count() > 0)
      err << "warning: " << o->get_name() << " ignored, the config file takes precedence\n";
  if (g.seed_opt->count() > 0) err << "warning: --seed ignored, the config file takes precedence\n";
  const json j = read_json_file(g.config);
  a.L = j.value("L", a.L);
  a.p = j.value("p", a.p);
  a.alpha = j.value("alpha", a.alpha);
  a.n = j.value("n", a.n);
  a.d = j.value("d", a.d);
  a.width = j.value("width", a.width);
  a.inputs = j.value("inputs", a.inputs);
  a.labels = j.value("labels", a.labels);
  seed = j.value("seed", seed);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural correlation function dynamics and KKT point tools", "ncfkkt"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config file; wins over inline flags");
  g.seed_opt = app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out-dir", g.out_dir, "Directory for all artifacts")->capture_default_str();
  app.add_flag("--json", g.json_out, "Machine-readable JSON on stdout");

  // early-phase
  auto* early = app.add_subcommand("early-phase", "Small-initialization teacher-student run");
  std::string preset = "squared-relu";
  early->add_option("--preset", preset, "squared-relu or relu3")
      ->check(CLI::IsMember({"squared-relu", "relu3"}))
      ->capture_default_str();
  InlineFlags early_flags;
  double e_delta = 0, e_step = 0, e_scale = 0;
  std::size_t e_iters = 0, e_stride = 0;
  early_flags.add<double>(early, "--delta", e_delta, "Initialization scale",
                          [](ExperimentConfig& c, const double& v) { c.delta = v; });
  early_flags.add<double>(early, "--step", e_step, "Gradient descent step",
                          [](ExperimentConfig& c, const double& v) { c.step = v; });
  early_flags.add<std::size_t>(early, "--iters", e_iters, "Iterations",
                               [](ExperimentConfig& c, const std::size_t& v) { c.iters = v; });
  early_flags.add<std::size_t>(early, "--stride", e_stride, "Snapshot stride",
                               [](ExperimentConfig& c, const std::size_t& v) { c.stride = v; });
  early_flags.add<double>(early, "--loss-scale", e_scale, "Gradient multiplier on the summed loss",
                          [](ExperimentConfig& c, const double& v) { c.loss_scale = v; });

  // table-sweep
  auto* table = app.add_subcommand("table-sweep", "kappa / rho over random KKT points");
  bool grid = false;
  table->add_flag("--grid", grid, "All cells: layers {2,3} x p {1,2} x alpha {0,0.1,1}");
  InlineFlags table_flags;
  std::size_t t_layers = 2, t_seeds = 30, t_max = 0, t_polish = 0;
  int t_p = 2;
  double t_alpha = 0, t_step = 0;
  unsigned t_threads = 0;
  CLI::Option* layers_opt = table->add_option("--layers", t_layers, "Number of layers L");
  CLI::Option* p_opt = table->add_option("--p", t_p, "Activation power");
  CLI::Option* alpha_opt = table->add_option("--alpha", t_alpha, "Leaky slope");
  CLI::Option* nseeds_opt = table->add_option("--seeds", t_seeds, "Number of seeds");
  table_flags.add<std::size_t>(table, "--max-iters", t_max, "Ascent iteration cap",
                               [](ExperimentConfig& c, const std::size_t& v) { c.sweep.max_iters = v; });
  table_flags.add<std::size_t>(table, "--polish-iters", t_polish, "Full-batch steps after a p = 1 run",
                               [](ExperimentConfig& c, const std::size_t& v) { c.sweep.polish_iters = v; });
  table_flags.add<double>(table, "--step", t_step, "Ascent step",
                          [](ExperimentConfig& c, const double& v) { c.step = v; });
  table_flags.add<unsigned>(table, "--threads", t_threads, "Worker threads, 0 = all cores",
                            [](ExperimentConfig& c, const unsigned& v) { c.sweep.threads = v; });

  // gd-vs-pga
  auto* gdp = app.add_subcommand("gd-vs-pga", "Projected versus adaptive-step ascent identity");
  InlineFlags gdp_flags;
  std::size_t g_steps = 50;
  double g_step = 0, g_tol = 0;
  gdp_flags.add<std::size_t>(gdp, "--steps", g_steps, "Ascent steps",
                             [](ExperimentConfig& c, const std::size_t& v) { c.iters = v; });
  gdp_flags.add<double>(gdp, "--step", g_step, "Ascent step",
                        [](ExperimentConfig& c, const double& v) { c.step = v; });
  CLI::Option* tol_opt = gdp->add_option("--tol", g_tol, "Deviation tolerance (1e-10 up to 50 steps, else 1e-8)");

  // blowup-rate
  auto* blow = app.add_subcommand("blowup-rate", "Escape-rate fit on deep scalar linear flows");
  InlineFlags blow_flags;
  std::vector<int> b_depths;
  double b_step = 0;
  blow_flags.add<std::vector<int>>(blow, "--depths", b_depths, "Depths L >= 3",
                                   [](ExperimentConfig& c, const std::vector<int>& v) { c.depths = v; });
  blow_flags.add<double>(blow, "--step", b_step, "RK4 step",
                         [](ExperimentConfig& c, const double& v) { c.step = v; });

  // rescale-gap
  auto* gap = app.add_subcommand("rescale-gap", "Rescaled training flow versus NCF flow");
  InlineFlags gap_flags;
  std::vector<double> r_deltas;
  double r_frac = 0, r_step = 0;
  gap_flags.add<std::vector<double>>(gap, "--deltas", r_deltas, "Initialization scales",
                                     [](ExperimentConfig& c, const std::vector<double>& v) { c.rescale.deltas = v; });
  gap_flags.add<double>(gap, "--horizon-fraction", r_frac, "Horizon as a fraction of the NCF escape time",
                        [](ExperimentConfig& c, const double& v) { c.rescale.horizon_fraction = v; });
  gap_flags.add<double>(gap, "--flow-step", r_step, "RK4 step in NCF time",
                        [](ExperimentConfig& c, const double& v) { c.rescale.flow_step = v; });

  // construct-kkt / verify-kkt / kkt-report
  KktArgs ka;
  std::vector<CLI::Option*> kka_opts;
  auto add_problem_flags = [&](CLI::App* sub) {
    kka_opts.push_back(sub->add_option("--L", ka.L, "Number of layers")->capture_default_str());
    kka_opts.push_back(sub->add_option("--p", ka.p, "Activation power")->capture_default_str());
    kka_opts.push_back(sub->add_option("--alpha", ka.alpha, "Leaky slope")->capture_default_str());
    kka_opts.push_back(sub->add_option("--n", ka.n, "Examples")->capture_default_str());
    kka_opts.push_back(sub->add_option("--d", ka.d, "Input dimension")->capture_default_str());
    kka_opts.push_back(sub->add_option("--width", ka.width, "Hidden width")->capture_default_str());
    kka_opts.push_back(sub->add_option("--inputs", ka.inputs, "gaussian, unit_sphere or half_normal"));
    kka_opts.push_back(sub->add_option("--labels", ka.labels, "gaussian or half_normal"));
  };
  auto* construct = app.add_subcommand("construct-kkt", "Build and certify a rank-one KKT point");
  add_problem_flags(construct);
  auto* verify = app.add_subcommand("verify-kkt", "Re-certify a constructed KKT point from JSON");
  verify->add_option("--input", ka.input, "JSON written by construct-kkt")->required();
  auto* report = app.add_subcommand("kkt-report", "KKT diagnostics of weights stored in JSON");
  report->add_option("--input", ka.input, "JSON with problem and weights")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }

  const std::filesystem::path root = g.out_dir;
  try {
    if (early->parsed()) {
      ExperimentConfig base = preset == "relu3" ? relu_teacher_preset() : early_phase_preset();
      ExperimentConfig cfg = load_config(g, base, early_flags, err);
      const bool relu3 = g.config.empty() && preset == "relu3";
      const bool squared = g.config.empty() && preset == "squared-relu";
      const EarlyPhaseResult r = run_early_phase(cfg, cfg.seeds.front());
      const auto dir = root / "early_phase";
      write_early_phase(dir, cfg, r);
      std::vector<Check> checks{{"not_diverged", !r.diverged, r.diverged ? "diverged" : "finite"},
                                {"norm_ratio_finite", std::isfinite(r.max_norm_ratio),
                                 fmt(r.max_norm_ratio)}};
      if (squared) {
        checks.push_back(at_least("final_alignment", r.final_alignment, 0.99));
        checks.push_back({"loss_ratio_band",
                          r.final_loss_ratio >= 0.99 && r.final_loss_ratio <= 1.01,
                          fmt(r.final_loss_ratio) + " in [0.99, 1.01]"});
        checks.push_back(at_most("final_hidden_kappa", r.final_hidden_kappa, 0.05));
      }
      if (relu3) {
        for (std::size_t l = 0; l < r.top2_normalized.size(); ++l) {
          const auto [s1, s2] = r.top2_normalized[l];
          checks.push_back(at_least("s1_over_s2_W" + std::to_string(l + 1), s1 / s2, 15.0));
        }
        checks.push_back(at_least("final_alignment", r.final_alignment, 0.98));
      }
      return finish(out, err, g, to_summary(r), checks, [&] {
        out << "early-phase seed " << r.seed << " -> " << dir.string() << '\n'
            << "  final alignment   " << fmt(r.final_alignment) << '\n'
            << "  final loss ratio  " << fmt(r.final_loss_ratio) << '\n'
            << "  max ||w||/delta   " << fmt(r.max_norm_ratio) << '\n'
            << "  hidden kappa      " << fmt(r.final_hidden_kappa) << '\n'
            << "  peak alignment with loss ratio in [0.99, 1.01]  "
            << fmt(r.peak_alignment_in_band) << '\n';
        for (std::size_t l = 0; l < r.top2_normalized.size(); ++l)
          out << "  W" << l + 1 << "/||w|| top-2 singular values  "
              << fmt(r.top2_normalized[l].first) << ", " << fmt(r.top2_normalized[l].second)
              << '\n';
      });
    }

    if (table->parsed()) {
      std::vector<ExperimentConfig> cfgs;
      auto seeded = [&](ExperimentConfig c) {
        if (g.config.empty()) {
          const std::uint64_t first = g.seed_opt->count() > 0 ? g.seed : 1;
          c.seeds.clear();
          for (std::size_t i = 0; i < t_seeds; ++i) c.seeds.push_back(first + i);
        }
        return c;
      };
      if (!g.config.empty()) {
        for (CLI::Option* o : {layers_opt, p_opt, alpha_opt, nseeds_opt})
          if (o->count() > 0)
            err << "warning: " << o->get_name() << " ignored, the config file takes precedence\n";
      }
      if (grid) {
        for (std::size_t L : {2, 3})
          for (int p : {1, 2})
            for (double a : {0.0, 0.1, 1.0}) {
              ExperimentConfig c = load_config(g, table_preset(L, p, a), table_flags, err);
              if (g.config.empty()) c.spec = table_preset(L, p, a).spec;
              cfgs.push_back(seeded(c));
            }
      } else {
        cfgs.push_back(seeded(load_config(g, table_preset(t_layers, t_p, t_alpha), table_flags, err)));
      }
      const std::vector<SweepResult> results = run_table_sweeps(cfgs);
      std::vector<Check> checks;
      json cells = json::array();
      for (std::size_t i = 0; i < results.size(); ++i) {
        const SweepResult& r = results[i];
        const std::string name = cell_name(r.spec);
        write_sweep(root / "table_kappa_rho" / name, cfgs[i], r);
        cells.push_back(to_summary(r));
        checks.push_back({name + ".converged", r.converged > 0,
                          std::to_string(r.converged) + " converged, " +
                              std::to_string(r.unconverged) + " excluded"});
        if (r.converged > 0) {
          checks.push_back(at_most(name + ".max_kappa", r.max_kappa, 1e-6));
          if (r.spec.alpha != 1.0) checks.push_back(at_most(name + ".max_rho", r.max_rho, 1e-4));
        }
      }
      return finish(out, err, g, json{{"cells", cells}}, checks, [&] {
        out << "cell            conv  excl  max kappa     max rho       unconv kappa  unconv rho\n";
        for (const SweepResult& r : results)
          out << std::left << std::setw(16) << cell_name(r.spec) << std::setw(6) << r.converged
              << std::setw(6) << r.unconverged << std::setw(14) << fmt(r.max_kappa)
              << std::setw(14) << fmt(r.max_rho) << std::setw(14) << fmt(r.unconverged_max_kappa)
              << fmt(r.unconverged_max_rho) << std::right << '\n';
        for (const SweepResult& r : results)
          if (r.unconverged > 0)
            err << "warning: " << cell_name(r.spec) << ": " << r.unconverged
                << " seeds did not reach the stopping alignment and were excluded\n";
      });
    }

    if (gdp->parsed()) {
      ExperimentConfig cfg = load_config(g, gd_vs_pga_preset(g_steps), gdp_flags, err);
      const double tol = tol_opt->count() > 0 ? g_tol : (cfg.iters <= 50 ? 1e-10 : 1e-8);
      std::vector<Check> checks;
      json runs = json::array();
      GdVsPgaResult worst;
      for (std::uint64_t s : cfg.seeds) {
        const GdVsPgaResult r = run_gd_vs_pga(cfg, s);
        write_gd_vs_pga(root / "gd_vs_pga" / ("seed_" + std::to_string(s)), cfg, r);
        json item = to_summary(r);
        item["seed"] = s;
        runs.push_back(item);
        checks.push_back(at_most("deviation.seed_" + std::to_string(s), r.max_relative_deviation, tol));
        if (r.max_relative_deviation >= worst.max_relative_deviation) worst = r;
      }
      return finish(out, err, g, json{{"runs", runs}}, checks, [&] {
        out << "gd-vs-pga " << cfg.iters << " steps, " << cfg.seeds.size()
            << " instances, worst relative deviation " << fmt(worst.max_relative_deviation) << '\n';
      });
    }

    if (blow->parsed()) {
      ExperimentConfig cfg = load_config(g, blowup_preset(), blow_flags, err);
      const auto runs = run_blowup(cfg);
      write_blowup(root / "blowup_rate", cfg, runs);
      std::vector<Check> checks;
      for (const BlowupRun& run : runs) {
        const std::string n = "L" + std::to_string(run.depth);
        checks.push_back(at_most(n + ".exponent_error",
                                 std::abs(run.report.fitted_exponent - run.expected_exponent), 0.05));
        checks.push_back(at_least(n + ".r_squared", run.report.r_squared, 0.99));
      }
      return finish(out, err, g, to_summary(runs), checks, [&] {
        for (const BlowupRun& run : runs)
          out << "L=" << run.depth << "  T* " << fmt(run.report.t_star_estimate) << "  exponent "
              << fmt(run.report.fitted_exponent) << " (expected " << fmt(run.expected_exponent)
              << ")  r^2 " << fmt(run.report.r_squared) << '\n';
      });
    }

    if (gap->parsed()) {
      ExperimentConfig cfg = load_config(g, rescale_gap_preset(), gap_flags, err);
      const RescaleGapResult r = run_rescale_gap(cfg, cfg.seeds.front());
      write_rescale_gap(root / "rescale_gap", cfg, r);
      std::vector<Check> checks{{"monotone_in_delta", r.monotone, "sup gap shrinks with delta"}};
      return finish(out, err, g, to_summary(r), checks, [&] {
        out << "NCF escape time " << fmt(r.ncf_escape_time) << ", horizon " << fmt(r.horizon) << '\n';
        for (std::size_t i = 0; i < r.deltas.size(); ++i)
          out << "  delta " << fmt(r.deltas[i]) << "  sup gap " << fmt(r.sup_gaps[i]) << '\n';
      });
    }

    if (construct->parsed()) {
      std::uint64_t seed = g.seed_opt->count() > 0 ? g.seed : 1;
      apply_kkt_config(g, ka, seed, err, kka_opts);
      const NetSpec spec = kkt_spec(ka);
      const auto data_kind = kkt_data(ka, spec);
      const NcfProblem prob =
          random_ncf_problem(spec, ka.n, seed, data_kind.first, data_kind.second);
      const auto [b1, small] = solve_small_problem(SmallProblem::from(prob), seed);
      const RankOneKKT k = construct_rank_one(spec, b1);
      const TheoremVerdict v = verify_theorem_conditions(k, prob);
      const Weights w = assemble_weights(k);
      json doc{{"problem", problem_json(spec, ka.n, seed, data_kind)},
               {"kkt", k},
               {"weights", w.vector()},
               {"verdict", v}};
      write_kkt_meta(root, "construct-kkt", doc.at("problem"));
      write_json_file(root / "kkt.json", doc);
      std::vector<Check> checks;
      for (const VerdictItem& it : v.items)
        checks.push_back({it.name, it.passed, fmt(it.deviation) + " <= " + fmt(it.tolerance)});
      return finish(out, err, g, doc, checks, [&] {
        out << "rank-one KKT point, L=" << ka.L << " p=" << ka.p << " alpha=" << ka.alpha
            << " seed " << seed << " -> " << (root / "kkt.json").string() << '\n'
            << "  NCF value " << fmt(v.full.ncf_value) << ", KKT residual "
            << fmt(v.full.residual) << ", balance deviation " << fmt(v.balance.max_deviation)
            << '\n';
      });
    }

    if (verify->parsed()) {
      const json doc = read_json_file(ka.input);
      const NcfProblem prob = problem_from_json(doc.at("problem"));
      const RankOneKKT k = doc.at("kkt").get<RankOneKKT>();
      const TheoremVerdict v = verify_theorem_conditions(k, prob);
      write_kkt_meta(root / "verify_kkt", "verify-kkt", doc.at("problem"));
      write_json_file(root / "verify_kkt" / "verdict.json", json(v));
      std::vector<Check> checks;
      for (const VerdictItem& it : v.items)
        checks.push_back({it.name, it.passed, fmt(it.deviation) + " <= " + fmt(it.tolerance)});
      return finish(out, err, g, json{{"verdict", v}}, checks, [&] {
        out << "verified " << ka.input << ": KKT residual " << fmt(v.full.residual) << '\n';
      });
    }

    if (report->parsed()) {
      const json doc = read_json_file(ka.input);
      const NcfProblem prob = problem_from_json(doc.at("problem"));
      const Weights w(prob.spec, doc.at("weights").get<Vector>());
      const KktReport r = kkt_report(prob, w);
      write_kkt_meta(root / "kkt_report", "kkt-report", doc.at("problem"));
      write_json_file(root / "kkt_report" / "report.json", json(r));
      std::vector<Check> checks{
          {"nonnegative_kkt", r.is_nonnegative_kkt, "residual " + fmt(r.residual)}};
      return finish(out, err, g, json{{"report", r}}, checks, [&] {
        out << "N " << fmt(r.ncf_value) << "  lambda " << fmt(r.lambda_estimate) << "  residual "
            << fmt(r.residual) << "  alignment " << fmt(r.alignment)
            << (r.nonsmooth ? "  (nonsmooth selection)" : "") << '\n';
      });
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  err << app.help();
  return 2;
}

}  // namespace ncfkkt
