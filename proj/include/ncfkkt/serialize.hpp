#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "ncfkkt/flow.hpp"
#include "ncfkkt/kkt_factory.hpp"
#include "ncfkkt/metrics.hpp"
#include "ncfkkt/ncf.hpp"
#include "ncfkkt/net.hpp"

namespace ncfkkt {

using json = nlohmann::ordered_json;

void to_json(json& j, const NetSpec& s);
void from_json(const json& j, NetSpec& s);
void to_json(json& j, const KktReport& r);
void to_json(json& j, const SmallSolveReport& r);
void to_json(json& j, const RankOneKKT& k);
void from_json(const json& j, RankOneKKT& k);
void to_json(json& j, const TheoremVerdict& v);
void to_json(json& j, const BlowupReport& r);
void to_json(json& j, const IntegratorConfig& c);
void from_json(const json& j, IntegratorConfig& c);

// NaN and infinities become null.
json number(double x);

// Header "t,w_0,...,w_{k-1}", one row per snapshot, 17 significant digits.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

struct TrajectoryMeta {
  NetSpec spec;
  double delta = 1.0;
  std::uint64_t seed = 0;
};
json trajectory_sidecar(const Trajectory& traj, const TrajectoryMeta& meta);

// Writes `<stem>.csv` and `<stem>.json`.
void write_trajectory(const std::filesystem::path& stem, const Trajectory& traj,
                      const TrajectoryMeta& meta);

void write_json_file(const std::filesystem::path& path, const json& j);
json read_json_file(const std::filesystem::path& path);

}  // namespace ncfkkt
