#pragma once

#include <span>
#include <string_view>

#include "ncfkkt/linalg.hpp"

namespace ncfkkt {

enum class LossKind { Square, Logistic };

std::string_view loss_name(LossKind kind);
// Accepts "square" or "logistic"; throws std::invalid_argument otherwise.
LossKind parse_loss(std::string_view name);

// 0.5 (yhat - y)^2  or  log(1 + exp(-yhat y))
double loss_value(LossKind kind, double yhat, double y);
// d loss / d yhat
double loss_prime(LossKind kind, double yhat, double y);

// -loss_prime(kind, 0, y_i) for every i. This is the z of the early-phase NCF.
Vector ncf_target(LossKind kind, std::span<const double> y);

// Sum over examples.
double total_loss(LossKind kind, std::span<const double> yhat, std::span<const double> y);

}  // namespace ncfkkt
