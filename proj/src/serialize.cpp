#include "ncfkkt/serialize.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace ncfkkt {

json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

void to_json(json& j, const NetSpec& s) {
  j = json{{"widths", s.widths}, {"alpha", s.alpha}, {"p", s.p}};
}

void from_json(const json& j, NetSpec& s) {
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.alpha = j.value("alpha", 0.0);
  s.p = j.value("p", 1);
  s.validate();
}

void to_json(json& j, const KktReport& r) {
  j = json{{"ncf_value", number(r.ncf_value)},
           {"lambda_estimate", number(r.lambda_estimate)},
           {"residual", number(r.residual)},
           {"alignment", number(r.alignment)},
           {"gradient_norm", number(r.gradient_norm)},
           {"is_nonnegative_kkt", r.is_nonnegative_kkt},
           {"nonsmooth", r.nonsmooth}};
}

void to_json(json& j, const SmallSolveReport& r) {
  j = json{{"value", number(r.value)},       {"residual", number(r.residual)},
           {"alignment", number(r.alignment)}, {"gradient_norm", number(r.gradient_norm)},
           {"attempts", r.attempts},         {"iterations", r.iterations}};
}

void to_json(json& j, const RankOneKKT& k) {
  j = json{{"spec", k.spec}, {"p_hat", k.p_hat}, {"q", k.q},
           {"a", k.a},       {"b", k.b},         {"w_bar", k.w_bar}};
}

void from_json(const json& j, RankOneKKT& k) {
  k.spec = j.at("spec").get<NetSpec>();
  k.p_hat = j.at("p_hat").get<long long>();
  k.q = j.at("q").get<std::vector<int>>();
  k.a = j.at("a").get<std::vector<Vector>>();
  k.b = j.at("b").get<std::vector<Vector>>();
  k.w_bar = j.at("w_bar").get<Vector>();
  const std::size_t L = k.spec.depth();
  if (k.a.size() + 1 != L || k.b.size() + 1 != L || k.q.size() + 1 != L)
    throw std::invalid_argument("RankOneKKT json: a, b and q need L-1 entries");
}

void to_json(json& j, const TheoremVerdict& v) {
  json items = json::array();
  for (const VerdictItem& i : v.items)
    items.push_back({{"name", i.name},
                     {"passed", i.passed},
                     {"deviation", number(i.deviation)},
                     {"tolerance", i.tolerance}});
  j = json{{"all_passed", v.all_passed()},
           {"items", items},
           {"full_kkt", v.full},
           {"small_problem", v.small},
           {"balance_per_layer", v.balance.per_layer}};
}

void to_json(json& j, const BlowupReport& r) {
  j = json{{"t_star_estimate", number(r.t_star_estimate)},
           {"fitted_exponent", number(r.fitted_exponent)},
           {"kappa_rate", number(r.kappa_rate)},
           {"r_squared", number(r.r_squared)},
           {"samples", r.samples}};
}

void to_json(json& j, const IntegratorConfig& c) {
  j = json{{"step", c.step},
           {"horizon", c.horizon},
           {"snapshot_stride", c.snapshot_stride},
           {"blowup_norm_cap", c.blowup_norm_cap},
           {"zero_floor", c.zero_floor},
           {"step_shrink_near_blowup", c.step_shrink_near_blowup},
           {"zero_patience", c.zero_patience}};
}

void from_json(const json& j, IntegratorConfig& c) {
  c.step = j.value("step", c.step);
  c.horizon = j.value("horizon", c.horizon);
  c.snapshot_stride = j.value("snapshot_stride", c.snapshot_stride);
  c.blowup_norm_cap = j.value("blowup_norm_cap", c.blowup_norm_cap);
  c.zero_floor = j.value("zero_floor", c.zero_floor);
  c.step_shrink_near_blowup = j.value("step_shrink_near_blowup", c.step_shrink_near_blowup);
  c.zero_patience = j.value("zero_patience", c.zero_patience);
  c.validate();
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t k = traj.states.empty() ? 0 : traj.states.front().size();
  os << "t";
  for (std::size_t i = 0; i < k; ++i) os << ",w_" << i;
  os << '\n';
  os << std::setprecision(17);
  for (std::size_t j = 0; j < traj.size(); ++j) {
    os << traj.times[j];
    for (double x : traj.states[j]) os << ',' << x;
    os << '\n';
  }
}

json trajectory_sidecar(const Trajectory& traj, const TrajectoryMeta& meta) {
  return json{{"spec", meta.spec},
              {"delta", meta.delta},
              {"seed", meta.seed},
              {"terminated_by", std::string(termination_name(traj.terminated_by))},
              {"t_star_estimate", number(traj.t_star_estimate)},
              {"nonsmooth", traj.nonsmooth},
              {"snapshots", traj.size()}};
}

void write_trajectory(const std::filesystem::path& stem, const Trajectory& traj,
                      const TrajectoryMeta& meta) {
  std::filesystem::path csv = stem, side = stem;
  csv += ".csv";
  side += ".json";
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  std::ofstream os(csv);
  if (!os) throw std::runtime_error("cannot write " + csv.string());
  write_trajectory_csv(os, traj);
  write_json_file(side, trajectory_sidecar(traj, meta));
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return json::parse(is);
}

}  // namespace ncfkkt
