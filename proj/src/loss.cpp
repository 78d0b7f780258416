#include "ncfkkt/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ncfkkt {

std::string_view loss_name(LossKind kind) {
  return kind == LossKind::Square ? "square" : "logistic";
}

LossKind parse_loss(std::string_view name) {
  if (name == "square") return LossKind::Square;
  if (name == "logistic") return LossKind::Logistic;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

double loss_value(LossKind kind, double yhat, double y) {
  switch (kind) {
    case LossKind::Square: {
      const double r = yhat - y;
      return 0.5 * r * r;
    }
    case LossKind::Logistic: {
      const double m = -yhat * y;
      // log1p(exp(m)) without overflow for large margins
      return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    }
  }
  return 0.0;
}

double loss_prime(LossKind kind, double yhat, double y) {
  switch (kind) {
    case LossKind::Square:
      return yhat - y;
    case LossKind::Logistic: {
      const double m = -yhat * y;
      // e^m / (1 + e^m), the logistic sigmoid of m
      const double s = m > 0.0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m));
      return -y * s;
    }
  }
  return 0.0;
}

Vector ncf_target(LossKind kind, std::span<const double> y) {
  Vector z(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) z[i] = -loss_prime(kind, 0.0, y[i]);
  return z;
}

double total_loss(LossKind kind, std::span<const double> yhat, std::span<const double> y) {
  if (yhat.size() != y.size()) throw std::invalid_argument("total_loss: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += loss_value(kind, yhat[i], y[i]);
  return s;
}

}  // namespace ncfkkt
