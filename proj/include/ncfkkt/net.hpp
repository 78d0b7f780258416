#pragma once

// Bias-free feed-forward networks H(x; W_1..W_L) = W_L s(W_{L-1} ... s(W_1 x))
// with the leaky power activation s(x) = max(x, alpha x)^p.
//
// Layers are indexed from 0 in code: layer(0) is W_1 (k_1 x k_0) and
// layer(L-1) is the 1 x k_{L-1} output row.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ncfkkt/linalg.hpp"

namespace ncfkkt {

struct NetSpec {
  std::vector<std::size_t> widths;  // k_0 (input dim) .. k_L (= 1)
  double alpha = 0.0;
  int p = 1;

  std::size_t depth() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t input_dim() const { return widths.front(); }
  std::size_t parameter_count() const;
  // Throws std::invalid_argument when L < 2, k_L != 1, p < 1 or a width is 0.
  void validate() const;
  // p == 1 with a kink; gradients there are a fixed Clarke selection.
  bool nonsmooth() const { return p == 1 && alpha != 1.0; }

  bool operator==(const NetSpec&) const = default;
};

// Raised when weights, inputs or coefficients do not match a NetSpec.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(std::size_t layer, const std::string& what)
      : std::invalid_argument("layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  // 1-based layer index as written in W_l; 0 means the input.
  std::size_t layer() const { return layer_; }

 private:
  std::size_t layer_;
};

struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const LayerShape&) const = default;
};

// All layer matrices stored back to back in one flat vector, layer-major and
// row-major inside a layer. flat() is the parameter vector w in R^k.
class Weights {
 public:
  Weights() = default;
  explicit Weights(const NetSpec& spec);  // zero weights
  Weights(const NetSpec& spec, std::vector<double> flat);
  static Weights from_layers(const std::vector<Matrix>& layers);

  std::vector<Matrix> to_layers() const;

  std::size_t depth() const { return shapes_.size(); }
  std::size_t size() const { return flat_.size(); }
  const std::vector<LayerShape>& shapes() const { return shapes_; }

  std::span<const double> flat() const { return flat_; }
  std::span<double> flat() { return flat_; }
  const std::vector<double>& vector() const { return flat_; }

  MatrixView layer(std::size_t l) const {
    return {flat_.data() + offsets_[l], shapes_[l].rows, shapes_[l].cols};
  }
  MutMatrixView layer(std::size_t l) {
    return {flat_.data() + offsets_[l], shapes_[l].rows, shapes_[l].cols};
  }

  void set_zero();
  bool same_shape(const Weights& other) const { return shapes_ == other.shapes_; }

 private:
  void build_offsets();

  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> flat_;
};

// Inputs are held one example per row (the transpose of X in R^{d x n}).
struct Dataset {
  Matrix inputs;  // n x d
  Vector y;       // n

  Dataset() = default;
  Dataset(Matrix x_rows, Vector targets);

  std::size_t size() const { return inputs.rows; }
  std::size_t dim() const { return inputs.cols; }
  std::span<const double> x(std::size_t i) const { return inputs.row(i); }
};

struct ForwardTrace {
  // Entry l-1 holds layer l for l = 1..L-1.
  std::vector<Vector> pre;    // h^l
  std::vector<Vector> post;   // phi^l = s(h^l)
  std::vector<Vector> slope;  // diagonal of A^l
  double output = 0.0;
};

double activation(double x, double alpha, int p);
// Active-branch derivative; at x = 0 with p = 1 this returns alpha.
double activation_derivative(double x, double alpha, int p);
// s composed with itself `times` times; times = 0 is the identity.
double iterated_activation(double x, double alpha, int p, int times);
double iterated_activation_derivative(double x, double alpha, int p, int times);

// sum_{l=0}^{L-1} p^l
int homogeneity_order(const NetSpec& spec);

void check_compatible(const NetSpec& spec, const Weights& w);

std::pair<double, ForwardTrace> forward(const NetSpec& spec, const Weights& w,
                                        std::span<const double> x);

Vector outputs(const NetSpec& spec, const Weights& w, const Dataset& data);

// sum_i coeffs_i * grad_w H(x_i; w), accumulated in example order.
Weights gradient(const NetSpec& spec, const Weights& w, const Dataset& data,
                 std::span<const double> coeffs);

// Reusable forward/backward workspace over a fixed dataset. The dataset must
// outlive the evaluator. Not thread-safe; use one per thread.
class NetEvaluator {
 public:
  NetEvaluator(NetSpec spec, const Dataset& data);

  const NetSpec& spec() const { return spec_; }
  const Dataset& data() const { return *data_; }

  // Forward pass over every example; returns H(X; w).
  std::span<const double> forward(const Weights& w);
  // Gradient of sum_i coeffs_i H(x_i; w) at the weights of the last forward().
  void backward(std::span<const double> coeffs, Weights& grad);

 private:
  NetSpec spec_;
  const Dataset* data_;
  const Weights* last_ = nullptr;
  std::vector<Vector> pre_, post_, slope_;  // per hidden layer, n x k_l
  Vector out_;
  Vector err_, tmp_;
};

}  // namespace ncfkkt
