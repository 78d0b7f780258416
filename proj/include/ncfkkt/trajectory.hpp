#pragma once

#include <cstddef>
#include <limits>
#include <string_view>
#include <vector>

#include "ncfkkt/linalg.hpp"

namespace ncfkkt {

enum class Termination { Horizon, BlowUp, ConvergedToZero };

std::string_view termination_name(Termination t);

// Time-stamped snapshots of a flattened parameter vector.
struct Trajectory {
  Vector times;
  std::vector<Vector> states;
  Termination terminated_by = Termination::Horizon;
  double t_star_estimate = std::numeric_limits<double>::quiet_NaN();
  bool nonsmooth = false;
  // Per-step normalization factors c_t of a projected ascent run; empty otherwise.
  Vector scale_factors;

  std::size_t size() const { return states.size(); }
  const Vector& back() const { return states.back(); }
  void push(double t, Vector state) {
    times.push_back(t);
    states.push_back(std::move(state));
  }
};

}  // namespace ncfkkt
