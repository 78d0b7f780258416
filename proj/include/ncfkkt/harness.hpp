#pragma once

// Experiment orchestration: teacher-student early-phase runs, kappa/rho
// sweeps over random instances, the projected/adaptive ascent identity, blow-up
// rate fits and the small-initialization rescaling gap.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ncfkkt/flow.hpp"
#include "ncfkkt/loss.hpp"
#include "ncfkkt/net.hpp"
#include "ncfkkt/rng.hpp"
#include "ncfkkt/serialize.hpp"

namespace ncfkkt {

enum class ExperimentKind { EarlyPhase, TableKappaRho, GdVsPga, BlowupRate, RescaleGap };
std::string_view experiment_name(ExperimentKind k);
ExperimentKind parse_experiment(std::string_view name);

enum class InputDistribution { Gaussian, UnitSphere, HalfNormal };
// HalfNormal draws |N(0, 1)|.
enum class LabelSource { Gaussian, HalfNormal, Teacher, TeacherAbsScaled };

struct DatasetRecipe {
  std::size_t n = 100;
  std::size_t d = 10;
  InputDistribution inputs = InputDistribution::Gaussian;
  LabelSource labels = LabelSource::Gaussian;
  NetSpec teacher{{10, 2, 1}, 0.0, 2};  // used by the teacher label sources
};

struct SweepOptions {
  std::size_t max_iters = 5000000;
  // Full-batch steps after the stochastic phase of a p = 1 run.
  std::size_t polish_iters = 100000;
  std::size_t batch = 10;
  std::size_t check_every = 100;
  double stop_alignment = 1.0 - 1e-10;
  unsigned threads = 0;  // 0 = hardware concurrency
  bool flush_denormals = true;
};

struct RescaleOptions {
  std::vector<double> deltas{0.2, 0.1, 0.05};
  // Horizon in NCF time as a fraction of the escape time of the NCF flow.
  double horizon_fraction = 0.5;
  double flow_step = 1e-3;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::EarlyPhase;
  NetSpec spec{{10, 20, 1}, 0.0, 2};
  DatasetRecipe data;
  double delta = 0.05;
  LossKind loss = LossKind::Square;
  // Gradient multiplier on the summed loss; empty means 2/n (mean of squares).
  std::optional<double> loss_scale;
  double step = 2e-2;
  std::size_t iters = 50360;
  std::size_t stride = 20;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path out_dir = "out";
  SweepOptions sweep;
  RescaleOptions rescale;
  std::vector<int> depths{3, 4};  // blow-up runs

  double effective_loss_scale() const;
  void validate() const;
};

// Squared-ReLU student with a 2-unit teacher on 100 unit-sphere points in R^10.
ExperimentConfig early_phase_preset();
// Three-layer ReLU student with an |W_2|, x10 teacher.
ExperimentConfig relu_teacher_preset();
ExperimentConfig table_preset(std::size_t layers, int p, double alpha);
ExperimentConfig gd_vs_pga_preset(std::size_t steps);
ExperimentConfig blowup_preset();
ExperimentConfig rescale_gap_preset();
ExperimentConfig preset_for(ExperimentKind kind);

void to_json(json& j, const ExperimentConfig& c);
// Missing keys keep the values already in c.
void from_json(const json& j, ExperimentConfig& c);

// Independent generator per (seed, stream).
Rng stream_rng(std::uint64_t seed, std::uint32_t stream);

// Inputs and, for the Gaussian and HalfNormal label sources, random labels;
// teacher labels are filled in by make_teacher_labels.
Dataset sample_dataset(const DatasetRecipe& recipe, std::uint64_t seed);

// Teacher with standard normal weights evaluated on data. TeacherAbsScaled
// takes |W_2| and multiplies the output by 10.
Vector make_teacher_labels(const NetSpec& teacher, std::uint64_t seed, const Dataset& data,
                           LabelSource variant = LabelSource::Teacher);

// Data and labels of one seed.
Dataset build_dataset(const DatasetRecipe& recipe, std::uint64_t seed);

// Random inputs and labels with z = y. Gaussian/Gaussian is the instance family
// of the sweeps.
NcfProblem random_ncf_problem(const NetSpec& spec, std::size_t n, std::uint64_t seed,
                              InputDistribution inputs = InputDistribution::Gaussian,
                              LabelSource labels = LabelSource::Gaussian);

const char* input_name(InputDistribution d);
InputDistribution parse_input(const std::string& s);
const char* label_name(LabelSource s);
LabelSource parse_label(const std::string& s);

struct EarlyPhaseResult {
  std::uint64_t seed = 0;
  Vector iterations, loss_ratio, norm_ratio, alignment;
  double final_alignment = 0.0;
  double final_loss_ratio = 0.0;
  double max_norm_ratio = 0.0;
  double final_hidden_kappa = 0.0;
  // Largest alignment among snapshots whose loss ratio is in [0.99, 1.01].
  double peak_alignment_in_band = 0.0;
  std::vector<std::pair<double, double>> top2_normalized;  // per hidden layer
  Matrix heatmap;  // |W_1| / max |W_1|
  bool diverged = false;
};

EarlyPhaseResult run_early_phase(const ExperimentConfig& cfg, std::uint64_t seed);

struct SweepRecord {
  std::uint64_t seed = 0;
  bool converged = false;
  std::size_t iterations = 0;
  double alignment = 0.0;
  double ncf_value = 0.0;
  double kkt_residual = 0.0;
  double kappa = 0.0;
  double rho = 0.0;  // NaN when alpha = 1
};

struct SweepResult {
  NetSpec spec;
  std::vector<SweepRecord> records;  // sorted by seed
  std::size_t converged = 0;
  std::size_t unconverged = 0;
  // Maxima over converged records; NaN when none converged (rho also NaN for alpha = 1).
  double max_kappa = 0.0;
  double max_rho = 0.0;
  // Maxima over the final iterates of unconverged records.
  double unconverged_max_kappa = 0.0;
  double unconverged_max_rho = 0.0;
};

// Hidden layers W_1 .. W_{L-1}.
std::vector<Matrix> hidden_layers(const Weights& w);
// a_1 and a_l b_l^T for l >= 2 from the balanced rank-one factors of each
// hidden layer.
std::vector<Matrix> canonical_factors(const Weights& w);

SweepRecord run_sweep_seed(const ExperimentConfig& cfg, std::uint64_t seed);
SweepResult aggregate(const NetSpec& spec, std::vector<SweepRecord> records);
SweepResult run_table_sweep(const ExperimentConfig& cfg);
// Every (config, seed) pair in one worker pool; results in config order.
std::vector<SweepResult> run_table_sweeps(const std::vector<ExperimentConfig>& cfgs);

struct GdVsPgaResult {
  std::size_t steps = 0;
  double max_relative_deviation = 0.0;
  Vector deviation;  // per step, entry 0 is the initial point
};

GdVsPgaResult run_gd_vs_pga(const ExperimentConfig& cfg, std::uint64_t seed);

struct BlowupRun {
  int depth = 0;
  double expected_exponent = 0.0;
  BlowupReport report;
};
std::vector<BlowupRun> run_blowup(const ExperimentConfig& cfg);

struct RescaleGapResult {
  std::uint64_t seed = 0;
  double ncf_escape_time = 0.0;
  double horizon = 0.0;  // NCF time
  std::vector<double> deltas;
  std::vector<double> sup_gaps;
  bool monotone = false;
};
RescaleGapResult run_rescale_gap(const ExperimentConfig& cfg, std::uint64_t seed);

// meta.json content: build id, generator, config echo.
json experiment_meta(const ExperimentConfig& cfg);
std::string build_id();

// Writers for the experiment directories. Each creates the directory.
void write_early_phase(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                       const EarlyPhaseResult& r);
void write_sweep(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                 const SweepResult& r);
void write_gd_vs_pga(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                     const GdVsPgaResult& r);
void write_blowup(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                  const std::vector<BlowupRun>& runs);
void write_rescale_gap(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                       const RescaleGapResult& r);

json to_summary(const EarlyPhaseResult& r);
json to_summary(const SweepResult& r);
json to_summary(const GdVsPgaResult& r);
json to_summary(const std::vector<BlowupRun>& runs);
json to_summary(const RescaleGapResult& r);

}  // namespace ncfkkt
