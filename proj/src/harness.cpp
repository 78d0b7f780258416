#include "ncfkkt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#if defined(__x86_64__) || defined(__i386__)
#include <xmmintrin.h>
#endif

#include "ncfkkt/kernels.hpp"
#include "ncfkkt/metrics.hpp"
#include "ncfkkt/ncf.hpp"

#ifndef NCFKKT_BUILD_ID
#define NCFKKT_BUILD_ID "unknown"
#endif

namespace ncfkkt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::uint32_t kStreamInputs = 0;
constexpr std::uint32_t kStreamLabels = 1;
constexpr std::uint32_t kStreamInit = 2;
constexpr std::uint32_t kStreamShuffle = 3;

// Worker threads flush subnormals to zero when asked; p = 1 ascent otherwise
// spends most of its time in denormal arithmetic on dead units.
void set_flush_denormals(bool on) {
#if defined(__x86_64__) || defined(__i386__)
  if (on) _mm_setcsr(_mm_getcsr() | 0x8040);
#else
  (void)on;
#endif
}

template <class Job>
void run_pool(std::size_t jobs, unsigned threads, bool flush, const Job& job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      set_flush_denormals(flush);
      for (std::size_t j = next++; j < jobs; j = next++) {
        try {
          job(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Weights positive_unit_start(const NcfProblem& prob, Rng& rng) {
  const std::size_t k = prob.spec.parameter_count();
  NcfEvaluator eval(prob);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Weights u(prob.spec, random_unit(rng, k));
    if (eval.value(u) > 0.0) return u;
  }
  throw std::runtime_error("no initial point with positive NCF value in 10000 draws");
}

double max_or_nan(const std::vector<double>& v) {
  double m = kNaN;
  for (double x : v)
    if (!std::isnan(x)) m = std::isnan(m) ? x : std::max(m, x);
  return m;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

void write_meta(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "meta.json", experiment_meta(cfg));
}

}  // namespace

const char* input_name(InputDistribution d) {
  switch (d) {
    case InputDistribution::Gaussian:
      return "gaussian";
    case InputDistribution::UnitSphere:
      return "unit_sphere";
    case InputDistribution::HalfNormal:
      return "half_normal";
  }
  return "gaussian";
}

InputDistribution parse_input(const std::string& s) {
  if (s == "gaussian") return InputDistribution::Gaussian;
  if (s == "unit_sphere") return InputDistribution::UnitSphere;
  if (s == "half_normal") return InputDistribution::HalfNormal;
  throw std::invalid_argument("unknown input distribution '" + s + "'");
}

const char* label_name(LabelSource s) {
  switch (s) {
    case LabelSource::Gaussian:
      return "gaussian";
    case LabelSource::HalfNormal:
      return "half_normal";
    case LabelSource::Teacher:
      return "teacher";
    case LabelSource::TeacherAbsScaled:
      return "teacher_abs_x10";
  }
  return "gaussian";
}

LabelSource parse_label(const std::string& s) {
  if (s == "gaussian") return LabelSource::Gaussian;
  if (s == "half_normal") return LabelSource::HalfNormal;
  if (s == "teacher") return LabelSource::Teacher;
  if (s == "teacher_abs_x10") return LabelSource::TeacherAbsScaled;
  throw std::invalid_argument("unknown label source '" + s + "'");
}

std::string_view experiment_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::EarlyPhase:
      return "early_phase";
    case ExperimentKind::TableKappaRho:
      return "table_kappa_rho";
    case ExperimentKind::GdVsPga:
      return "gd_vs_pga";
    case ExperimentKind::BlowupRate:
      return "blowup_rate";
    case ExperimentKind::RescaleGap:
      return "rescale_gap";
  }
  return "unknown";
}

ExperimentKind parse_experiment(std::string_view name) {
  for (auto k : {ExperimentKind::EarlyPhase, ExperimentKind::TableKappaRho,
                 ExperimentKind::GdVsPga, ExperimentKind::BlowupRate, ExperimentKind::RescaleGap})
    if (experiment_name(k) == name) return k;
  throw std::invalid_argument("unknown experiment kind '" + std::string(name) + "'");
}

double ExperimentConfig::effective_loss_scale() const {
  return loss_scale ? *loss_scale : 2.0 / static_cast<double>(data.n);
}

void ExperimentConfig::validate() const {
  spec.validate();
  if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be non-empty");
  if (data.n == 0) throw std::invalid_argument("ExperimentConfig: n must be >= 1");
  if (data.d != spec.input_dim())
    throw std::invalid_argument("ExperimentConfig: d = " + std::to_string(data.d) +
                                " but the network expects " + std::to_string(spec.input_dim()));
  if (data.labels == LabelSource::Teacher || data.labels == LabelSource::TeacherAbsScaled) {
    data.teacher.validate();
    if (data.teacher.input_dim() != data.d)
      throw std::invalid_argument("ExperimentConfig: teacher input dimension differs from d");
  }
  if (kind == ExperimentKind::EarlyPhase && !(delta > 0.0))
    throw std::invalid_argument("ExperimentConfig: delta must be > 0");
  if (!(step > 0.0)) throw std::invalid_argument("ExperimentConfig: step must be > 0");
  if (stride == 0) throw std::invalid_argument("ExperimentConfig: stride must be >= 1");
  if (loss_scale && !(*loss_scale > 0.0))
    throw std::invalid_argument("ExperimentConfig: loss_scale must be > 0");
  if (kind == ExperimentKind::RescaleGap) {
    if (rescale.deltas.empty()) throw std::invalid_argument("ExperimentConfig: no deltas");
    for (double d : rescale.deltas)
      if (!(d > 0.0)) throw std::invalid_argument("ExperimentConfig: deltas must be > 0");
    if (!(rescale.horizon_fraction > 0.0 && rescale.horizon_fraction < 1.0))
      throw std::invalid_argument("ExperimentConfig: horizon_fraction must be in (0, 1)");
  }
  if (kind == ExperimentKind::BlowupRate)
    for (int L : depths)
      if (L < 3) throw std::invalid_argument("ExperimentConfig: blow-up depths must be >= 3");
  if (sweep.batch == 0 || sweep.check_every == 0)
    throw std::invalid_argument("ExperimentConfig: batch and check_every must be >= 1");
}

ExperimentConfig early_phase_preset() {
  ExperimentConfig c;
  c.kind = ExperimentKind::EarlyPhase;
  c.spec = NetSpec{{10, 20, 1}, 0.0, 2};
  c.data.n = 100;
  c.data.d = 10;
  c.data.inputs = InputDistribution::UnitSphere;
  c.data.labels = LabelSource::Teacher;
  c.data.teacher = NetSpec{{10, 2, 1}, 0.0, 2};
  c.delta = 0.05;
  c.step = 2e-2;
  c.iters = 50360;
  c.stride = 20;
  return c;
}

ExperimentConfig relu_teacher_preset() {
  ExperimentConfig c;
  c.kind = ExperimentKind::EarlyPhase;
  c.spec = NetSpec{{20, 20, 30, 1}, 0.0, 1};
  c.data.n = 100;
  c.data.d = 20;
  c.data.inputs = InputDistribution::UnitSphere;
  c.data.labels = LabelSource::TeacherAbsScaled;
  c.data.teacher = NetSpec{{20, 2, 2, 1}, 0.0, 1};
  c.delta = 0.01;
  c.step = 5e-3;
  c.iters = 64900;
  c.stride = 100;
  return c;
}

ExperimentConfig table_preset(std::size_t layers, int p, double alpha) {
  if (layers < 2) throw std::invalid_argument("table_preset: layers must be >= 2");
  ExperimentConfig c;
  c.kind = ExperimentKind::TableKappaRho;
  std::vector<std::size_t> widths{10};
  for (std::size_t l = 1; l < layers; ++l) widths.push_back(10);
  widths.push_back(1);
  c.spec = NetSpec{widths, alpha, p};
  c.data = DatasetRecipe{};
  c.step = 1e-2;
  c.seeds.clear();
  for (std::uint64_t s = 1; s <= 30; ++s) c.seeds.push_back(s);
  return c;
}

ExperimentConfig gd_vs_pga_preset(std::size_t steps) {
  ExperimentConfig c;
  c.kind = ExperimentKind::GdVsPga;
  c.spec = NetSpec{{10, 10, 1}, 0.0, 2};
  c.data = DatasetRecipe{};
  c.data.inputs = InputDistribution::UnitSphere;
  c.step = 5e-3;
  c.iters = steps;
  c.seeds = {1, 2, 3};
  return c;
}

ExperimentConfig blowup_preset() {
  ExperimentConfig c;
  c.kind = ExperimentKind::BlowupRate;
  c.spec = NetSpec{{1, 1, 1, 1}, 1.0, 1};
  c.data.n = 1;
  c.data.d = 1;
  c.step = 1e-3;
  c.depths = {3, 4};
  return c;
}

ExperimentConfig rescale_gap_preset() {
  ExperimentConfig c = early_phase_preset();
  c.kind = ExperimentKind::RescaleGap;
  c.rescale = RescaleOptions{};
  return c;
}

ExperimentConfig preset_for(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::EarlyPhase:
      return early_phase_preset();
    case ExperimentKind::TableKappaRho:
      return table_preset(2, 2, 0.0);
    case ExperimentKind::GdVsPga:
      return gd_vs_pga_preset(50);
    case ExperimentKind::BlowupRate:
      return blowup_preset();
    case ExperimentKind::RescaleGap:
      return rescale_gap_preset();
  }
  return early_phase_preset();
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json::object();
  j["kind"] = experiment_name(c.kind);
  j["spec"] = c.spec;
  j["data"] = {{"n", c.data.n},
               {"d", c.data.d},
               {"inputs", input_name(c.data.inputs)},
               {"labels", label_name(c.data.labels)},
               {"teacher", c.data.teacher}};
  j["delta"] = c.delta;
  j["loss"] = loss_name(c.loss);
  j["loss_scale"] = c.effective_loss_scale();
  j["step"] = c.step;
  j["iters"] = c.iters;
  j["stride"] = c.stride;
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir.string();
  j["sweep"] = {{"max_iters", c.sweep.max_iters},
                {"polish_iters", c.sweep.polish_iters},
                {"batch", c.sweep.batch},
                {"check_every", c.sweep.check_every},
                {"stop_alignment", c.sweep.stop_alignment},
                {"threads", c.sweep.threads},
                {"flush_denormals", c.sweep.flush_denormals}};
  j["rescale"] = {{"deltas", c.rescale.deltas},
                  {"horizon_fraction", c.rescale.horizon_fraction},
                  {"flow_step", c.rescale.flow_step}};
  j["depths"] = c.depths;
}

void from_json(const json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
  if (j.contains("kind")) c.kind = parse_experiment(j.at("kind").get<std::string>());
  if (j.contains("spec")) c.spec = j.at("spec").get<NetSpec>();
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (d.contains("n")) c.data.n = d.at("n").get<std::size_t>();
    if (d.contains("d")) c.data.d = d.at("d").get<std::size_t>();
    if (d.contains("inputs")) c.data.inputs = parse_input(d.at("inputs").get<std::string>());
    if (d.contains("labels")) c.data.labels = parse_label(d.at("labels").get<std::string>());
    if (d.contains("teacher")) c.data.teacher = d.at("teacher").get<NetSpec>();
  }
  if (j.contains("delta")) c.delta = j.at("delta").get<double>();
  if (j.contains("loss")) c.loss = parse_loss(j.at("loss").get<std::string>());
  if (j.contains("loss_scale")) c.loss_scale = j.at("loss_scale").get<double>();
  if (j.contains("step")) c.step = j.at("step").get<double>();
  if (j.contains("iters")) c.iters = j.at("iters").get<std::size_t>();
  if (j.contains("stride")) c.stride = j.at("stride").get<std::size_t>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    if (s.contains("max_iters")) c.sweep.max_iters = s.at("max_iters").get<std::size_t>();
    if (s.contains("polish_iters")) c.sweep.polish_iters = s.at("polish_iters").get<std::size_t>();
    if (s.contains("batch")) c.sweep.batch = s.at("batch").get<std::size_t>();
    if (s.contains("check_every")) c.sweep.check_every = s.at("check_every").get<std::size_t>();
    if (s.contains("stop_alignment")) c.sweep.stop_alignment = s.at("stop_alignment").get<double>();
    if (s.contains("threads")) c.sweep.threads = s.at("threads").get<unsigned>();
    if (s.contains("flush_denormals")) c.sweep.flush_denormals = s.at("flush_denormals").get<bool>();
  }
  if (j.contains("rescale")) {
    const json& r = j.at("rescale");
    if (r.contains("deltas")) c.rescale.deltas = r.at("deltas").get<std::vector<double>>();
    if (r.contains("horizon_fraction"))
      c.rescale.horizon_fraction = r.at("horizon_fraction").get<double>();
    if (r.contains("flow_step")) c.rescale.flow_step = r.at("flow_step").get<double>();
  }
  if (j.contains("depths")) c.depths = j.at("depths").get<std::vector<int>>();
}

Rng stream_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return Rng(seq);
}

Dataset sample_dataset(const DatasetRecipe& recipe, std::uint64_t seed) {
  Rng rng = stream_rng(seed, kStreamInputs);
  Matrix X(recipe.n, recipe.d);
  for (std::size_t i = 0; i < recipe.n; ++i) {
    Vector x = recipe.inputs == InputDistribution::UnitSphere ? random_unit(rng, recipe.d)
                                                               : gaussian_vector(rng, recipe.d);
    if (recipe.inputs == InputDistribution::HalfNormal)
      for (double& v : x) v = std::abs(v);
    std::copy(x.begin(), x.end(), X.row(i).begin());
  }
  Vector y(recipe.n, 0.0);
  if (recipe.labels == LabelSource::Gaussian || recipe.labels == LabelSource::HalfNormal) {
    Rng lr = stream_rng(seed, kStreamLabels);
    y = gaussian_vector(lr, recipe.n);
    if (recipe.labels == LabelSource::HalfNormal)
      for (double& v : y) v = std::abs(v);
  }
  return Dataset(std::move(X), std::move(y));
}

Vector make_teacher_labels(const NetSpec& teacher, std::uint64_t seed, const Dataset& data,
                           LabelSource variant) {
  Rng rng = stream_rng(seed, kStreamLabels);
  Weights tw(teacher, gaussian_vector(rng, teacher.parameter_count()));
  if (variant == LabelSource::TeacherAbsScaled) {
    if (teacher.depth() < 3)
      throw std::invalid_argument("make_teacher_labels: |W_2| variant needs at least 3 layers");
    for (double& x : tw.layer(1).flat()) x = std::abs(x);
  }
  Vector y = outputs(teacher, tw, data);
  if (variant == LabelSource::TeacherAbsScaled)
    for (double& v : y) v *= 10.0;
  return y;
}

Dataset build_dataset(const DatasetRecipe& recipe, std::uint64_t seed) {
  Dataset data = sample_dataset(recipe, seed);
  if (recipe.labels == LabelSource::Teacher || recipe.labels == LabelSource::TeacherAbsScaled)
    data.y = make_teacher_labels(recipe.teacher, seed, data, recipe.labels);
  return data;
}

NcfProblem random_ncf_problem(const NetSpec& spec, std::size_t n, std::uint64_t seed,
                              InputDistribution inputs, LabelSource labels) {
  if (labels == LabelSource::Teacher || labels == LabelSource::TeacherAbsScaled)
    throw std::invalid_argument("random_ncf_problem: labels must be gaussian or half_normal");
  DatasetRecipe recipe;
  recipe.n = n;
  recipe.d = spec.input_dim();
  recipe.inputs = inputs;
  recipe.labels = labels;
  Dataset data = sample_dataset(recipe, seed);
  Vector z = data.y;
  return NcfProblem(spec, std::move(data), std::move(z));
}

std::vector<Matrix> hidden_layers(const Weights& w) {
  std::vector<Matrix> layers = w.to_layers();
  layers.pop_back();
  return layers;
}

std::vector<Matrix> canonical_factors(const Weights& w) {
  std::vector<Matrix> out;
  const std::vector<Matrix> hidden = hidden_layers(w);
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    const RankOneFactors f = factor_rank_one(view(hidden[l]));
    if (l == 0)
      out.push_back(as_column(f.a));
    else
      out.push_back(Matrix::outer(f.a, f.b));
  }
  return out;
}

EarlyPhaseResult run_early_phase(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.kind != ExperimentKind::EarlyPhase)
    throw std::invalid_argument("run_early_phase: config kind is not early_phase");
  cfg.validate();
  const Dataset data = build_dataset(cfg.data, seed);
  Rng init = stream_rng(seed, kStreamInit);
  const Weights w0(cfg.spec, random_unit(init, cfg.spec.parameter_count()));

  const Trajectory tr = gradient_descent(cfg.spec, w0, cfg.delta,
                                         cfg.step * cfg.effective_loss_scale(), cfg.iters, data,
                                         cfg.loss, cfg.stride);
  const NcfProblem prob(cfg.spec, data, ncf_target(cfg.loss, data.y));

  EarlyPhaseResult r;
  r.seed = seed;
  r.diverged = tr.terminated_by == Termination::BlowUp;
  r.iterations = tr.times;
  r.alignment = directional_alignment_series(prob, tr);
  NetEvaluator net(cfg.spec, data);
  double loss0 = 0.0;
  r.peak_alignment_in_band = kNaN;
  for (std::size_t j = 0; j < tr.size(); ++j) {
    const Weights w(cfg.spec, tr.states[j]);
    const auto out = net.forward(w);
    const double loss = total_loss(cfg.loss, out, data.y);
    if (j == 0) loss0 = loss;
    const double ratio = loss / loss0;
    r.loss_ratio.push_back(ratio);
    const double nr = norm2(tr.states[j]) / cfg.delta;
    r.norm_ratio.push_back(nr);
    r.max_norm_ratio = std::max(r.max_norm_ratio, nr);
    if (ratio >= 0.99 && ratio <= 1.01 && !std::isnan(r.alignment[j]))
      r.peak_alignment_in_band = std::isnan(r.peak_alignment_in_band)
                                     ? r.alignment[j]
                                     : std::max(r.peak_alignment_in_band, r.alignment[j]);
  }
  r.final_alignment = r.alignment.back();
  r.final_loss_ratio = r.loss_ratio.back();
  if (r.diverged) r.max_norm_ratio = std::numeric_limits<double>::infinity();

  const Weights wf(cfg.spec, tr.back());
  const std::vector<Matrix> hidden = hidden_layers(wf);
  r.final_hidden_kappa = kappa(hidden);
  const double wn = norm2(wf.flat());
  for (const Matrix& m : hidden) {
    if (std::min(m.rows, m.cols) < 2) continue;
    Matrix scaled_m = m;
    scale_in_place(scaled_m.data, 1.0 / wn);
    r.top2_normalized.push_back(top2_singular(view(scaled_m)));
  }
  r.heatmap = hidden.front();
  double peak = 0.0;
  for (double& x : r.heatmap.data) {
    x = std::abs(x);
    peak = std::max(peak, x);
  }
  if (peak > 0.0) scale_in_place(r.heatmap.data, 1.0 / peak);
  return r;
}

SweepRecord run_sweep_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  Dataset data = build_dataset(cfg.data, seed);
  Vector z = data.y;
  const NcfProblem prob(cfg.spec, std::move(data), std::move(z));
  Rng init = stream_rng(seed, kStreamInit);
  Weights u = positive_unit_start(prob, init);

  const SweepOptions& o = cfg.sweep;
  SweepRecord rec;
  rec.seed = seed;
  NcfEvaluator eval(prob);
  auto aligned = [&](const Weights& w) {
    return kkt_report(eval, w.flat()).alignment >= o.stop_alignment;
  };

  if (cfg.spec.p == 1) {
    StochasticPgaOptions so;
    so.batch = o.batch;
    so.stride = std::max<std::size_t>(o.max_iters, 1);
    so.check_every = o.check_every;
    so.stop_alignment = o.stop_alignment;
    so.seed = stream_rng(seed, kStreamShuffle)();
    const Trajectory tr = stochastic_projected_gradient_ascent(prob, u, cfg.step, o.max_iters, so);
    rec.iterations += tr.scale_factors.size();
    u = Weights(cfg.spec, tr.back());
    if (!aligned(u) && o.polish_iters > 0) {
      PgaOptions po;
      po.stride = o.polish_iters;
      po.stop_alignment = o.stop_alignment;
      const Trajectory pt = projected_gradient_ascent(prob, u, cfg.step, o.polish_iters, po);
      rec.iterations += pt.scale_factors.size();
      u = Weights(cfg.spec, pt.back());
    }
  } else {
    PgaOptions po;
    po.stride = std::max<std::size_t>(o.max_iters, 1);
    po.stop_alignment = o.stop_alignment;
    const Trajectory tr = projected_gradient_ascent(prob, u, cfg.step, o.max_iters, po);
    rec.iterations = tr.scale_factors.size();
    u = Weights(cfg.spec, tr.back());
  }

  const KktReport rep = kkt_report(eval, u.flat());
  rec.alignment = rep.alignment;
  rec.ncf_value = rep.ncf_value;
  rec.kkt_residual = rep.residual;
  rec.converged = rep.alignment >= o.stop_alignment;
  rec.kappa = kappa(hidden_layers(u));
  rec.rho = cfg.spec.alpha == 1.0 ? kNaN : rho(canonical_factors(u));
  return rec;
}

SweepResult aggregate(const NetSpec& spec, std::vector<SweepRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const SweepRecord& a, const SweepRecord& b) { return a.seed < b.seed; });
  SweepResult r;
  r.spec = spec;
  std::vector<double> k_ok, r_ok, k_bad, r_bad;
  for (const SweepRecord& rec : records) {
    if (rec.converged) {
      ++r.converged;
      k_ok.push_back(rec.kappa);
      r_ok.push_back(rec.rho);
    } else {
      ++r.unconverged;
      k_bad.push_back(rec.kappa);
      r_bad.push_back(rec.rho);
    }
  }
  r.max_kappa = max_or_nan(k_ok);
  r.max_rho = max_or_nan(r_ok);
  r.unconverged_max_kappa = max_or_nan(k_bad);
  r.unconverged_max_rho = max_or_nan(r_bad);
  r.records = std::move(records);
  return r;
}

std::vector<SweepResult> run_table_sweeps(const std::vector<ExperimentConfig>& cfgs) {
  std::vector<std::pair<std::size_t, std::uint64_t>> jobs;
  unsigned threads = 0;
  bool flush = false;
  for (std::size_t c = 0; c < cfgs.size(); ++c) {
    if (cfgs[c].kind != ExperimentKind::TableKappaRho)
      throw std::invalid_argument("run_table_sweep: config kind is not table_kappa_rho");
    cfgs[c].validate();
    for (std::uint64_t s : cfgs[c].seeds) jobs.emplace_back(c, s);
    threads = std::max(threads, cfgs[c].sweep.threads);
    flush = flush || cfgs[c].sweep.flush_denormals;
  }
  std::vector<SweepRecord> out(jobs.size());
  run_pool(jobs.size(), threads, flush, [&](std::size_t j) {
    out[j] = run_sweep_seed(cfgs[jobs[j].first], jobs[j].second);
  });
  std::vector<std::vector<SweepRecord>> per(cfgs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) per[jobs[j].first].push_back(out[j]);
  std::vector<SweepResult> results;
  for (std::size_t c = 0; c < cfgs.size(); ++c)
    results.push_back(aggregate(cfgs[c].spec, std::move(per[c])));
  return results;
}

SweepResult run_table_sweep(const ExperimentConfig& cfg) {
  return run_table_sweeps({cfg}).front();
}

GdVsPgaResult run_gd_vs_pga(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.kind != ExperimentKind::GdVsPga)
    throw std::invalid_argument("run_gd_vs_pga: config kind is not gd_vs_pga");
  cfg.validate();
  const Dataset data = build_dataset(cfg.data, seed);
  const NcfProblem prob(cfg.spec, data, data.y);
  Rng init = stream_rng(seed, kStreamInit);
  const Weights u0 = positive_unit_start(prob, init);

  const Trajectory pga = projected_gradient_ascent(prob, u0, cfg.step, cfg.iters);
  const std::size_t steps = pga.scale_factors.size();
  const Trajectory ada =
      adaptive_gradient_ascent(prob, u0, cfg.step, pga.scale_factors, steps);

  GdVsPgaResult r;
  r.steps = steps;
  double prod = 1.0;
  for (std::size_t t = 0; t <= steps; ++t) {
    if (t > 0) prod *= pga.scale_factors[t - 1];
    const Vector& v = pga.states[t];
    const Vector& u = ada.states[t];
    double diff = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double e = v[i] - prod * u[i];
      diff += e * e;
    }
    const double dev = std::sqrt(diff) / norm2(v);
    r.deviation.push_back(dev);
    r.max_relative_deviation = std::max(r.max_relative_deviation, dev);
  }
  return r;
}

std::vector<BlowupRun> run_blowup(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::BlowupRate)
    throw std::invalid_argument("run_blowup: config kind is not blowup_rate");
  cfg.validate();
  std::vector<BlowupRun> runs;
  for (int L : cfg.depths) {
    NetSpec spec{std::vector<std::size_t>(static_cast<std::size_t>(L) + 1, 1), 1.0, 1};
    Dataset data(Matrix(1, 1, 1.0), Vector{1.0});
    const Weights u0(spec, Vector(static_cast<std::size_t>(L), 1.0 / std::sqrt(double(L))));
    // u' = u^(L-1) from u0 escapes at u0^(2-L) / (L-2).
    const double t_star = std::pow(1.0 / std::sqrt(double(L)), 2 - L) / (L - 2);
    IntegratorConfig ic;
    ic.step = cfg.step;
    ic.horizon = 2.0 * t_star;
    ic.step_shrink_near_blowup = true;
    const Trajectory tr = integrate_ncf_flow(spec, u0, data.y, data, ic);
    BlowupRun run;
    run.depth = L;
    run.expected_exponent = 1.0 / (L - 2);
    run.report = fit_blowup_rate(tr, homogeneity_order(spec));
    runs.push_back(run);
  }
  return runs;
}

RescaleGapResult run_rescale_gap(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.kind != ExperimentKind::RescaleGap)
    throw std::invalid_argument("run_rescale_gap: config kind is not rescale_gap");
  cfg.validate();
  const Dataset data = build_dataset(cfg.data, seed);
  const NcfProblem prob(cfg.spec, data, ncf_target(cfg.loss, data.y));
  Rng init = stream_rng(seed, kStreamInit);
  const Weights w0 = positive_unit_start(prob, init);
  const int order = prob.order();
  if (order <= 2) throw std::invalid_argument("run_rescale_gap: needs homogeneity order > 2");

  IntegratorConfig probe;
  probe.step = cfg.rescale.flow_step;
  probe.horizon = 1e4;
  probe.snapshot_stride = 1000000;
  probe.step_shrink_near_blowup = true;
  const Trajectory escape = integrate_ncf_flow(prob, w0, probe);
  if (escape.terminated_by != Termination::BlowUp || !std::isfinite(escape.t_star_estimate))
    throw std::runtime_error("run_rescale_gap: NCF flow did not escape within the probe horizon");

  RescaleGapResult r;
  r.seed = seed;
  r.ncf_escape_time = escape.t_star_estimate;
  r.horizon = cfg.rescale.horizon_fraction * r.ncf_escape_time;

  IntegratorConfig uc;
  uc.step = cfg.rescale.flow_step;
  uc.horizon = r.horizon;
  const Trajectory u = integrate_ncf_flow(prob, w0, uc);

  for (double delta : cfg.rescale.deltas) {
    const double scale = std::pow(delta, order - 2);
    IntegratorConfig wc;
    wc.step = cfg.rescale.flow_step / scale;
    wc.horizon = r.horizon / scale;
    wc.blowup_norm_cap = std::numeric_limits<double>::max();
    const Trajectory s =
        rescale_trajectory(integrate_training_flow(cfg.spec, w0, delta, data, cfg.loss, wc), delta,
                           order);
    double gap = 0.0;
    const std::size_t m = std::min(s.size(), u.size());
    for (std::size_t j = 0; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < s.states[j].size(); ++i) {
        const double e = s.states[j][i] - u.states[j][i];
        d2 += e * e;
      }
      gap = std::max(gap, std::sqrt(d2));
    }
    if (s.size() != u.size()) gap = std::numeric_limits<double>::infinity();
    r.deltas.push_back(delta);
    r.sup_gaps.push_back(gap);
  }
  r.monotone = true;
  for (std::size_t i = 1; i < r.deltas.size(); ++i) {
    const bool smaller_delta = r.deltas[i] < r.deltas[i - 1];
    const bool ok = smaller_delta ? r.sup_gaps[i] < r.sup_gaps[i - 1]
                                  : r.sup_gaps[i] > r.sup_gaps[i - 1];
    r.monotone = r.monotone && ok;
  }
  return r;
}

std::string build_id() { return NCFKKT_BUILD_ID; }

json experiment_meta(const ExperimentConfig& cfg) {
  json j;
  j["build"] = build_id();
  j["kernels"] = kernels::active().name;
  j["generator"] = kRngName;
  j["nonsmooth"] = cfg.spec.nonsmooth();
  j["config"] = cfg;
  return j;
}

json to_summary(const EarlyPhaseResult& r) {
  json j;
  j["seed"] = r.seed;
  j["diverged"] = r.diverged;
  j["final_alignment"] = number(r.final_alignment);
  j["final_loss_ratio"] = number(r.final_loss_ratio);
  j["max_norm_ratio"] = number(r.max_norm_ratio);
  j["final_hidden_kappa"] = number(r.final_hidden_kappa);
  j["peak_alignment_in_loss_band"] = number(r.peak_alignment_in_band);
  json top = json::array();
  for (const auto& [s1, s2] : r.top2_normalized)
    top.push_back({{"s1", number(s1)}, {"s2", number(s2)}, {"ratio", number(s1 / s2)}});
  j["hidden_top2_normalized"] = top;
  return j;
}

json to_summary(const SweepResult& r) {
  json j;
  j["spec"] = r.spec;
  j["converged"] = r.converged;
  j["unconverged"] = r.unconverged;
  j["max_kappa"] = number(r.max_kappa);
  j["max_rho"] = number(r.max_rho);
  j["unconverged_max_kappa"] = number(r.unconverged_max_kappa);
  j["unconverged_max_rho"] = number(r.unconverged_max_rho);
  json recs = json::array();
  for (const SweepRecord& rec : r.records)
    recs.push_back({{"seed", rec.seed},
                    {"converged", rec.converged},
                    {"iterations", rec.iterations},
                    {"alignment", number(rec.alignment)},
                    {"ncf_value", number(rec.ncf_value)},
                    {"kkt_residual", number(rec.kkt_residual)},
                    {"kappa", number(rec.kappa)},
                    {"rho", number(rec.rho)}});
  j["records"] = recs;
  return j;
}

json to_summary(const GdVsPgaResult& r) {
  return {{"steps", r.steps}, {"max_relative_deviation", number(r.max_relative_deviation)}};
}

json to_summary(const std::vector<BlowupRun>& runs) {
  json arr = json::array();
  for (const BlowupRun& run : runs) {
    json item = run.report;
    item["depth"] = run.depth;
    item["expected_exponent"] = run.expected_exponent;
    arr.push_back(item);
  }
  return {{"runs", arr}};
}

json to_summary(const RescaleGapResult& r) {
  json gaps = json::array();
  for (std::size_t i = 0; i < r.deltas.size(); ++i)
    gaps.push_back({{"delta", r.deltas[i]}, {"sup_gap", number(r.sup_gaps[i])}});
  return {{"seed", r.seed},
          {"ncf_escape_time", number(r.ncf_escape_time)},
          {"horizon", number(r.horizon)},
          {"gaps", gaps},
          {"monotone", r.monotone}};
}

void write_early_phase(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                       const EarlyPhaseResult& r) {
  write_meta(dir, cfg);
  auto os = open_out(dir / "series.csv");
  os << "iteration,loss_ratio,norm_ratio,alignment\n";
  for (std::size_t j = 0; j < r.iterations.size(); ++j)
    os << r.iterations[j] << ',' << r.loss_ratio[j] << ',' << r.norm_ratio[j] << ','
       << r.alignment[j] << '\n';
  auto hm = open_out(dir / "heatmap.csv");
  for (std::size_t i = 0; i < r.heatmap.rows; ++i) {
    for (std::size_t c = 0; c < r.heatmap.cols; ++c) hm << (c ? "," : "") << r.heatmap(i, c);
    hm << '\n';
  }
  write_json_file(dir / "summary.json", to_summary(r));
}

void write_sweep(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                 const SweepResult& r) {
  write_meta(dir, cfg);
  auto os = open_out(dir / "series.csv");
  os << "seed,converged,iterations,alignment,ncf_value,kkt_residual,kappa,rho\n";
  for (const SweepRecord& rec : r.records)
    os << rec.seed << ',' << rec.converged << ',' << rec.iterations << ',' << rec.alignment << ','
       << rec.ncf_value << ',' << rec.kkt_residual << ',' << rec.kappa << ',' << rec.rho << '\n';
  write_json_file(dir / "summary.json", to_summary(r));
}

void write_gd_vs_pga(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                     const GdVsPgaResult& r) {
  write_meta(dir, cfg);
  auto os = open_out(dir / "series.csv");
  os << "step,relative_deviation\n";
  for (std::size_t t = 0; t < r.deviation.size(); ++t) os << t << ',' << r.deviation[t] << '\n';
  write_json_file(dir / "summary.json", to_summary(r));
}

void write_blowup(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                  const std::vector<BlowupRun>& runs) {
  write_meta(dir, cfg);
  auto os = open_out(dir / "series.csv");
  os << "depth,t_star,exponent,expected_exponent,kappa_rate,r_squared,samples\n";
  for (const BlowupRun& run : runs)
    os << run.depth << ',' << run.report.t_star_estimate << ',' << run.report.fitted_exponent
       << ',' << run.expected_exponent << ',' << run.report.kappa_rate << ','
       << run.report.r_squared << ',' << run.report.samples << '\n';
  write_json_file(dir / "summary.json", to_summary(runs));
}

void write_rescale_gap(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                       const RescaleGapResult& r) {
  write_meta(dir, cfg);
  auto os = open_out(dir / "series.csv");
  os << "delta,sup_gap\n";
  for (std::size_t i = 0; i < r.deltas.size(); ++i) os << r.deltas[i] << ',' << r.sup_gaps[i] << '\n';
  write_json_file(dir / "summary.json", to_summary(r));
}

}  // namespace ncfkkt
