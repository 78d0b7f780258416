#include "ncfkkt/net.hpp"

#include <cmath>

#include "ncfkkt/kernels.hpp"

namespace ncfkkt {

std::size_t NetSpec::parameter_count() const {
  std::size_t k = 0;
  for (std::size_t l = 1; l < widths.size(); ++l) k += widths[l] * widths[l - 1];
  return k;
}

void NetSpec::validate() const {
  if (widths.size() < 3) throw std::invalid_argument("NetSpec: depth L must be >= 2");
  if (widths.back() != 1) throw std::invalid_argument("NetSpec: output width k_L must be 1");
  if (p < 1) throw std::invalid_argument("NetSpec: activation power p must be >= 1");
  for (std::size_t w : widths)
    if (w == 0) throw std::invalid_argument("NetSpec: widths must be >= 1");
  if (!std::isfinite(alpha)) throw std::invalid_argument("NetSpec: alpha must be finite");
}

Weights::Weights(const NetSpec& spec) {
  spec.validate();
  for (std::size_t l = 1; l < spec.widths.size(); ++l)
    shapes_.push_back({spec.widths[l], spec.widths[l - 1]});
  build_offsets();
}

Weights::Weights(const NetSpec& spec, std::vector<double> flat) : Weights(spec) {
  if (flat.size() != flat_.size())
    throw DimensionError(0, "flat weight vector has " + std::to_string(flat.size()) +
                                " entries, spec needs " + std::to_string(flat_.size()));
  flat_ = std::move(flat);
}

Weights Weights::from_layers(const std::vector<Matrix>& layers) {
  Weights w;
  for (const Matrix& m : layers) w.shapes_.push_back({m.rows, m.cols});
  w.build_offsets();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0 && layers[l].cols != layers[l - 1].rows)
      throw DimensionError(l + 1, "columns do not match rows of the previous layer");
    std::copy(layers[l].data.begin(), layers[l].data.end(), w.flat_.begin() + w.offsets_[l]);
  }
  return w;
}

std::vector<Matrix> Weights::to_layers() const {
  std::vector<Matrix> out;
  for (std::size_t l = 0; l < depth(); ++l) {
    Matrix m(shapes_[l].rows, shapes_[l].cols);
    auto src = layer(l).flat();
    std::copy(src.begin(), src.end(), m.data.begin());
    out.push_back(std::move(m));
  }
  return out;
}

void Weights::set_zero() { std::fill(flat_.begin(), flat_.end(), 0.0); }

void Weights::build_offsets() {
  offsets_.clear();
  std::size_t off = 0;
  for (const LayerShape& s : shapes_) {
    offsets_.push_back(off);
    off += s.rows * s.cols;
  }
  flat_.assign(off, 0.0);
}

Dataset::Dataset(Matrix x_rows, Vector targets) : inputs(std::move(x_rows)), y(std::move(targets)) {
  if (inputs.rows != y.size())
    throw std::invalid_argument("Dataset: " + std::to_string(inputs.rows) + " inputs but " +
                                std::to_string(y.size()) + " targets");
}

double activation(double x, double alpha, int p) {
  const double m = x > alpha * x ? x : alpha * x;
  double r = 1.0;
  for (int k = 0; k < p; ++k) r *= m;
  return r;
}

double activation_derivative(double x, double alpha, int p) {
  double phi = 0.0, slope = 0.0;
  kernels::scalar_table().activate(&x, &phi, &slope, 1, alpha, p);
  return slope;
}

double iterated_activation(double x, double alpha, int p, int times) {
  for (int t = 0; t < times; ++t) x = activation(x, alpha, p);
  return x;
}

double iterated_activation_derivative(double x, double alpha, int p, int times) {
  double d = 1.0;
  for (int t = 0; t < times; ++t) {
    d *= activation_derivative(x, alpha, p);
    x = activation(x, alpha, p);
  }
  return d;
}

int homogeneity_order(const NetSpec& spec) {
  int order = 0;
  int pw = 1;
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    order += pw;
    pw *= spec.p;
  }
  return order;
}

void check_compatible(const NetSpec& spec, const Weights& w) {
  spec.validate();
  if (w.depth() != spec.depth())
    throw DimensionError(w.depth(), "weights have " + std::to_string(w.depth()) +
                                        " layers, spec has " + std::to_string(spec.depth()));
  for (std::size_t l = 0; l < w.depth(); ++l) {
    const LayerShape& s = w.shapes()[l];
    if (s.rows != spec.widths[l + 1] || s.cols != spec.widths[l])
      throw DimensionError(l + 1, "shape " + std::to_string(s.rows) + "x" +
                                      std::to_string(s.cols) + ", expected " +
                                      std::to_string(spec.widths[l + 1]) + "x" +
                                      std::to_string(spec.widths[l]));
  }
}

std::pair<double, ForwardTrace> forward(const NetSpec& spec, const Weights& w,
                                        std::span<const double> x) {
  check_compatible(spec, w);
  if (x.size() != spec.input_dim())
    throw DimensionError(0, "input has " + std::to_string(x.size()) + " entries, expected " +
                                std::to_string(spec.input_dim()));
  ForwardTrace trace;
  Vector cur(x.begin(), x.end());
  const auto& k = kernels::active();
  for (std::size_t l = 0; l + 1 < spec.depth(); ++l) {
    MatrixView W = w.layer(l);
    Vector h(W.rows), phi(W.rows), s(W.rows);
    k.gemv(W.data, W.rows, W.cols, cur.data(), h.data());
    k.activate(h.data(), phi.data(), s.data(), h.size(), spec.alpha, spec.p);
    trace.pre.push_back(h);
    trace.post.push_back(phi);
    trace.slope.push_back(s);
    cur = std::move(phi);
  }
  MatrixView W_out = w.layer(spec.depth() - 1);
  const double out = k.dot(W_out.data, cur.data(), W_out.cols);
  trace.output = out;
  return {out, std::move(trace)};
}

Vector outputs(const NetSpec& spec, const Weights& w, const Dataset& data) {
  NetEvaluator eval(spec, data);
  auto out = eval.forward(w);
  return Vector(out.begin(), out.end());
}

Weights gradient(const NetSpec& spec, const Weights& w, const Dataset& data,
                 std::span<const double> coeffs) {
  NetEvaluator eval(spec, data);
  eval.forward(w);
  Weights grad(spec);
  eval.backward(coeffs, grad);
  return grad;
}

NetEvaluator::NetEvaluator(NetSpec spec, const Dataset& data)
    : spec_(std::move(spec)), data_(&data) {
  spec_.validate();
  if (data.dim() != spec_.input_dim())
    throw DimensionError(0, "input dimension " + std::to_string(data.dim()) +
                                " does not match k_0 = " + std::to_string(spec_.input_dim()));
  const std::size_t n = data.size();
  const std::size_t hidden = spec_.depth() - 1;
  pre_.resize(hidden);
  post_.resize(hidden);
  slope_.resize(hidden);
  std::size_t widest = 0;
  for (std::size_t l = 0; l < hidden; ++l) {
    const std::size_t k = spec_.widths[l + 1];
    pre_[l].assign(n * k, 0.0);
    post_[l].assign(n * k, 0.0);
    slope_[l].assign(n * k, 0.0);
  }
  for (std::size_t wdt : spec_.widths) widest = std::max(widest, wdt);
  out_.assign(n, 0.0);
  err_.assign(widest, 0.0);
  tmp_.assign(widest, 0.0);
}

std::span<const double> NetEvaluator::forward(const Weights& w) {
  check_compatible(spec_, w);
  const auto& k = kernels::active();
  const std::size_t n = data_->size();
  const std::size_t hidden = spec_.depth() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = data_->x(i).data();
    for (std::size_t l = 0; l < hidden; ++l) {
      MatrixView W = w.layer(l);
      double* h = pre_[l].data() + i * W.rows;
      k.gemv(W.data, W.rows, W.cols, in, h);
      double* phi = post_[l].data() + i * W.rows;
      k.activate(h, phi, slope_[l].data() + i * W.rows, W.rows, spec_.alpha, spec_.p);
      in = phi;
    }
    MatrixView out_row = w.layer(hidden);
    out_[i] = k.dot(out_row.data, in, out_row.cols);
  }
  last_ = &w;
  return out_;
}

void NetEvaluator::backward(std::span<const double> coeffs, Weights& grad) {
  if (last_ == nullptr) throw std::logic_error("NetEvaluator::backward before forward");
  const std::size_t n = data_->size();
  if (coeffs.size() != n)
    throw DimensionError(spec_.depth(), "coefficient vector has " +
                                            std::to_string(coeffs.size()) + " entries for " +
                                            std::to_string(n) + " examples");
  if (!grad.same_shape(*last_)) grad = Weights(spec_);
  grad.set_zero();

  const auto& k = kernels::active();
  const Weights& w = *last_;
  const std::size_t L = spec_.depth();
  for (std::size_t i = 0; i < n; ++i) {
    const double c = coeffs[i];
    if (c == 0.0) continue;
    // Output layer: grad W_L += c * phi^{L-1}.
    const std::size_t top = L - 1;
    const std::size_t k_top = spec_.widths[top];
    const double* phi_top = post_[top - 1].data() + i * k_top;
    k.axpy(c, phi_top, grad.layer(top).data, k_top);

    // e^{L-1} = A^{L-1} W_L^T c
    const double* s_top = slope_[top - 1].data() + i * k_top;
    MatrixView W_out = w.layer(top);
    for (std::size_t j = 0; j < k_top; ++j) err_[j] = s_top[j] * c * W_out.data[j];

    for (std::size_t l = top; l-- > 0;) {
      // layer index l (W_{l+1}) has rows k_{l+1}, input phi^{l} (x when l == 0)
      const std::size_t rows = spec_.widths[l + 1];
      const std::size_t cols = spec_.widths[l];
      const double* in = l == 0 ? data_->x(i).data() : post_[l - 1].data() + i * cols;
      k.ger(grad.layer(l).data, rows, cols, 1.0, err_.data(), in);
      if (l == 0) break;
      MatrixView W = w.layer(l);
      k.gemv_t(W.data, rows, cols, err_.data(), tmp_.data());
      const double* s = slope_[l - 1].data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) err_[j] = s[j] * tmp_[j];
    }
  }
}

}  // namespace ncfkkt
