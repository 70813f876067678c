#include "headprobe/probe_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "headprobe/common.hpp"

namespace headprobe {

using Eigen::VectorXd;

ProbeConfig ProbeConfig::mlp() {
  ProbeConfig cfg;
  cfg.kind = ProbeKind::Mlp;
  cfg.l2 = 10.0;
  cfg.max_iterations = 30;
  cfg.learning_rate = 5e-3;
  return cfg;
}

void ProbeConfig::validate() const {
  if (!(l2 >= 0.0)) throw InvalidArgument("probe l2 strength must be >= 0");
  if (!(tolerance > 0.0)) throw InvalidArgument("probe tolerance must be > 0");
  if (max_iterations < 0) throw InvalidArgument("probe max_iterations must be >= 0");
  if (kind == ProbeKind::Mlp) {
    if (hidden.empty()) throw InvalidArgument("MLP probe needs at least one hidden layer");
    for (int w : hidden) {
      if (w < 1) throw InvalidArgument("MLP hidden widths must be >= 1");
    }
    if (!(learning_rate > 0.0)) throw InvalidArgument("MLP learning rate must be > 0");
    if (batch_size < 1) throw InvalidArgument("MLP batch size must be >= 1");
  }
}

FeatureScaler FeatureScaler::fit(const FeatureMatrix& x) {
  FeatureScaler s;
  const auto n = static_cast<double>(x.rows());
  s.mean = x.colwise().mean().transpose();
  s.scale.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
    s.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

FeatureMatrix FeatureScaler::transform(const FeatureMatrix& x) const {
  FeatureMatrix out = x;
  out.rowwise() -= mean.transpose();
  out.array().rowwise() /= scale.transpose().array();
  return out;
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_inputs(const FeatureMatrix& x, std::span<const int> y, std::size_t min_rows) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw InvalidArgument("feature rows (" + std::to_string(x.rows()) + ") and labels (" +
                          std::to_string(y.size()) + ") differ");
  }
  if (y.size() < min_rows) {
    throw InvalidArgument("probe needs at least " + std::to_string(min_rows) + " samples");
  }
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v == 0) {
      has0 = true;
    } else if (v == 1) {
      has1 = true;
    } else {
      throw InvalidArgument("probe labels must be 0 or 1");
    }
  }
  if (!has0 || !has1) throw InvalidArgument("probe training labels contain a single class");
  if (!x.allFinite()) throw NumericalError("probe features contain non-finite values");
}

VectorXd to_vector(std::span<const int> y) {
  VectorXd v(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = y[i];
  return v;
}

FeatureMatrix scaled(const Probe& probe, const FeatureMatrix& x) {
  return probe.scaler ? probe.scaler->transform(x) : x;
}

// Objective and full gradient (w then b) on already-scaled features.
double linear_objective(const FeatureMatrix& xs, const VectorXd& y, const VectorXd& w, double b, double l2,
                        VectorXd* grad) {
  const auto n = static_cast<double>(xs.rows());
  VectorXd z = (xs * w).array() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z(i)) - y(i) * z(i);
  loss = (loss + 0.5 * l2 * w.squaredNorm()) / n;
  if (grad != nullptr) {
    VectorXd r = z.unaryExpr([](double v) { return sigmoid(v); }) - y;
    grad->resize(w.size() + 1);
    grad->head(w.size()) = (xs.transpose() * r + l2 * w) / n;
    (*grad)(w.size()) = r.sum() / n;
  }
  return loss;
}

}  // namespace

VectorXd Probe::logits(const FeatureMatrix& x) const {
  FeatureMatrix xs = scaled(*this, x);
  if (kind == ProbeKind::Linear) return (xs * weights).array() + bias;
  FeatureMatrix a = xs;
  for (std::size_t k = 0; k < layer_weights.size(); ++k) {
    FeatureMatrix next = a * layer_weights[k].transpose();
    next.rowwise() += layer_biases[k].transpose();
    if (k + 1 < layer_weights.size()) next = next.cwiseMax(0.0);
    a = std::move(next);
  }
  return a.col(0);
}

VectorXd Probe::predict_proba(const FeatureMatrix& x) const {
  return logits(x).unaryExpr([](double v) { return sigmoid(v); });
}

std::vector<int> Probe::predict(const FeatureMatrix& x) const {
  VectorXd p = predict_proba(x);
  std::vector<int> out(static_cast<std::size_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) > 0.5 ? 1 : 0;
  return out;
}

Probe train_linear_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg) {
  cfg.validate();
  if (cfg.kind != ProbeKind::Linear) throw InvalidArgument("train_linear_probe needs a linear config");
  check_inputs(x, y, 4);
  Probe probe;
  probe.kind = ProbeKind::Linear;
  if (cfg.standardize) probe.scaler = FeatureScaler::fit(x);
  const FeatureMatrix xs = scaled(probe, x);
  const VectorXd yv = to_vector(y);
  const auto d = xs.cols();
  const auto n = static_cast<double>(xs.rows());

  VectorXd w = VectorXd::Zero(d);
  double b = 0.0;
  VectorXd grad;
  double loss = linear_objective(xs, yv, w, b, cfg.l2, &grad);
  int it = 0;
  for (; it < cfg.max_iterations && grad.norm() > cfg.tolerance; ++it) {
    VectorXd z = (xs * w).array() + b;
    VectorXd s = z.unaryExpr([](double v) {
      const double p = sigmoid(v);
      return p * (1.0 - p);
    });
    Eigen::MatrixXd hess(d + 1, d + 1);
    hess.topLeftCorner(d, d) = xs.transpose() * s.asDiagonal() * xs;
    hess.topLeftCorner(d, d).diagonal().array() += cfg.l2;
    hess.topRightCorner(d, 1) = xs.transpose() * s;
    hess.bottomLeftCorner(1, d) = hess.topRightCorner(d, 1).transpose();
    hess(d, d) = s.sum();
    hess /= n;
    hess.diagonal().array() += 1e-12;
    VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite() || step.dot(grad) <= 0.0) step = grad;

    double t = 1.0;
    VectorXd w_new;
    double b_new = 0.0;
    double loss_new = loss;
    for (int ls = 0; ls < 50; ++ls, t *= 0.5) {
      w_new = w - t * step.head(d);
      b_new = b - t * step(d);
      loss_new = linear_objective(xs, yv, w_new, b_new, cfg.l2, nullptr);
      if (loss_new <= loss - 1e-4 * t * step.dot(grad)) break;
    }
    if (!(loss_new <= loss)) break;  // no further progress possible in floating point
    w = std::move(w_new);
    b = b_new;
    loss = linear_objective(xs, yv, w, b, cfg.l2, &grad);
    if (!std::isfinite(loss)) throw NumericalError("non-finite probe loss at iteration " + std::to_string(it));
  }
  probe.weights = std::move(w);
  probe.bias = b;
  probe.iterations = it;
  return probe;
}

Probe train_mlp_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg) {
  cfg.validate();
  if (cfg.kind != ProbeKind::Mlp) throw InvalidArgument("train_mlp_probe needs an MLP config");
  check_inputs(x, y, 4);
  Probe probe;
  probe.kind = ProbeKind::Mlp;
  if (cfg.standardize) probe.scaler = FeatureScaler::fit(x);
  const FeatureMatrix xs = scaled(probe, x);
  const VectorXd yv = to_vector(y);
  const auto n = static_cast<std::size_t>(xs.rows());

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> widths{static_cast<int>(xs.cols())};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t k = 0; k < n_layers; ++k) {
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / widths[k]));
    FeatureMatrix w(widths[k + 1], widths[k]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init(rng);
    probe.layer_weights.push_back(std::move(w));
    probe.layer_biases.push_back(VectorXd::Zero(widths[k + 1]));
  }

  struct Moments {
    FeatureMatrix mw, vw;
    VectorXd mb, vb;
  };
  std::vector<Moments> adam(n_layers);
  for (std::size_t k = 0; k < n_layers; ++k) {
    adam[k].mw = adam[k].vw = FeatureMatrix::Zero(widths[k + 1], widths[k]);
    adam[k].mb = adam[k].vb = VectorXd::Zero(widths[k + 1]);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::size_t step = 0;
  std::vector<FeatureMatrix> acts(n_layers + 1);
  for (int epoch = 0; epoch < cfg.max_iterations; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t m = std::min(batch, n - start);
      FeatureMatrix xb(static_cast<Eigen::Index>(m), xs.cols());
      VectorXd yb(static_cast<Eigen::Index>(m));
      for (std::size_t i = 0; i < m; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = xs.row(static_cast<Eigen::Index>(order[start + i]));
        yb(static_cast<Eigen::Index>(i)) = yv(static_cast<Eigen::Index>(order[start + i]));
      }
      acts[0] = xb;
      for (std::size_t k = 0; k < n_layers; ++k) {
        FeatureMatrix z = acts[k] * probe.layer_weights[k].transpose();
        z.rowwise() += probe.layer_biases[k].transpose();
        acts[k + 1] = (k + 1 < n_layers) ? FeatureMatrix(z.cwiseMax(0.0)) : z;
      }
      const VectorXd out = acts[n_layers].col(0);
      double loss = 0.0;
      for (Eigen::Index i = 0; i < out.size(); ++i) loss += softplus(out(i)) - yb(i) * out(i);
      if (!std::isfinite(loss)) throw NumericalError("non-finite MLP probe loss at step " + std::to_string(step));

      FeatureMatrix delta(static_cast<Eigen::Index>(m), 1);
      delta.col(0) = (out.unaryExpr([](double v) { return sigmoid(v); }) - yb) / static_cast<double>(m);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t k = n_layers; k-- > 0;) {
        FeatureMatrix gw = delta.transpose() * acts[k] + (cfg.l2 / static_cast<double>(n)) * probe.layer_weights[k];
        VectorXd gb = delta.colwise().sum().transpose();
        if (k > 0) {
          FeatureMatrix prev = delta * probe.layer_weights[k];
          delta = prev.cwiseProduct((acts[k].array() > 0.0).cast<double>().matrix());
        }
        auto& a = adam[k];
        a.mw = beta1 * a.mw + (1 - beta1) * gw;
        a.vw = beta2 * a.vw + (1 - beta2) * gw.cwiseAbs2();
        a.mb = beta1 * a.mb + (1 - beta1) * gb;
        a.vb = beta2 * a.vb + (1 - beta2) * gb.cwiseAbs2();
        probe.layer_weights[k].array() -=
            cfg.learning_rate * (a.mw.array() / c1) / ((a.vw.array() / c2).sqrt() + eps);
        probe.layer_biases[k].array() -=
            cfg.learning_rate * (a.mb.array() / c1) / ((a.vb.array() / c2).sqrt() + eps);
      }
    }
  }
  probe.iterations = cfg.max_iterations;
  return probe;
}

Probe train_probe(const FeatureMatrix& x, std::span<const int> y, const ProbeConfig& cfg) {
  return cfg.kind == ProbeKind::Linear ? train_linear_probe(x, y, cfg) : train_mlp_probe(x, y, cfg);
}

ProbeMetrics evaluate(const Probe& probe, const FeatureMatrix& x, std::span<const int> y) {
  auto pred = probe.predict(x);
  return compute_metrics(y, pred);
}

double linear_probe_loss(const Probe& probe, const FeatureMatrix& x, std::span<const int> y, double l2) {
  return linear_objective(scaled(probe, x), to_vector(y), probe.weights, probe.bias, l2, nullptr);
}

VectorXd linear_probe_gradient(const Probe& probe, const FeatureMatrix& x, std::span<const int> y, double l2) {
  VectorXd grad;
  linear_objective(scaled(probe, x), to_vector(y), probe.weights, probe.bias, l2, &grad);
  return grad;
}

double metric_value(const ProbeMetrics& m, SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::Accuracy: return m.accuracy;
    case SelectionMetric::F1High: return m.f1_high;
    case SelectionMetric::F1Low: return m.f1_low;
    case SelectionMetric::MacroF1: return m.macro_f1;
    case SelectionMetric::WeightedF1: return m.weighted_f1;
  }
  return m.accuracy;
}

std::string_view metric_name(SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::Accuracy: return "accuracy";
    case SelectionMetric::F1High: return "f1_high";
    case SelectionMetric::F1Low: return "f1_low";
    case SelectionMetric::MacroF1: return "macro_f1";
    case SelectionMetric::WeightedF1: return "weighted_f1";
  }
  return "accuracy";
}

SelectionMetric parse_metric(std::string_view name) {
  for (auto m : {SelectionMetric::Accuracy, SelectionMetric::F1High, SelectionMetric::F1Low,
                 SelectionMetric::MacroF1, SelectionMetric::WeightedF1}) {
    if (metric_name(m) == name) return m;
  }
  throw InvalidArgument("unknown metric: " + std::string(name));
}

std::optional<CellIndex> SweepResult::best_cell(SelectionMetric metric) const {
  std::optional<CellIndex> best;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const auto& c = at(l, h);
      if (!c.ok()) continue;
      const double v = metric_value(*c.metrics, metric);
      if (v > best_value) {
        best_value = v;
        best = CellIndex{l, h};
      }
    }
  }
  return best;
}

std::vector<double> SweepResult::layer_curve(SelectionMetric metric) const {
  std::vector<double> curve(static_cast<std::size_t>(n_layers), std::numeric_limits<double>::quiet_NaN());
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const auto& c = at(l, h);
      if (!c.ok()) continue;
      const double v = metric_value(*c.metrics, metric);
      if (std::isnan(curve[l]) || v > curve[l]) curve[l] = v;
    }
  }
  return curve;
}

FeatureMatrix cell_features(const ActivationSet& acts, int layer, int head, std::span<const std::size_t> rows) {
  FeatureMatrix x(static_cast<Eigen::Index>(rows.size()), acts.dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto v = acts.vector_at(rows[r], static_cast<std::size_t>(layer), static_cast<std::size_t>(head));
    for (std::uint32_t k = 0; k < acts.dim; ++k) x(static_cast<Eigen::Index>(r), k) = v[k];
  }
  return x;
}

namespace {

FeatureMatrix layer_features(const ActivationSet& acts, int layer, std::span<const std::size_t> rows) {
  const Eigen::Index width = static_cast<Eigen::Index>(acts.n_heads) * acts.dim;
  FeatureMatrix x(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const float* src = acts.data.data() + acts.cell_offset(rows[r], static_cast<std::size_t>(layer), 0);
    for (Eigen::Index k = 0; k < width; ++k) x(static_cast<Eigen::Index>(r), k) = src[k];
  }
  return x;
}

void check_split(const ActivationSet& acts, std::span<const int> labels, const SplitAssignment& split) {
  if (labels.size() != acts.n_samples) {
    throw InvalidArgument("label vector length does not match activation samples");
  }
  for (auto idx : {&split.train_indices, &split.test_indices}) {
    if (idx->empty()) throw InvalidArgument("split has an empty partition");
    for (std::size_t i : *idx) {
      if (i >= acts.n_samples) throw InvalidArgument("split index out of range");
    }
  }
}

std::vector<int> gather(std::span<const int> labels, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

template <typename FeatureFn>
SweepResult run_sweep(SweepResult result, std::span<const int> labels, const SplitAssignment& split,
                      const ProbeConfig& cfg, unsigned workers, FeatureFn features) {
  cfg.validate();
  const auto y_train = gather(labels, split.train_indices);
  const auto y_test = gather(labels, split.test_indices);
  result.cells.resize(static_cast<std::size_t>(result.n_layers) * result.n_heads);
  result.split_seed = split.seed;
  result.config = cfg;
  parallel_for(result.cells.size(), workers, [&](std::size_t i) {
    const int layer = static_cast<int>(i) / result.n_heads;
    const int head = static_cast<int>(i) % result.n_heads;
    CellResult& cell = result.cells[i];
    try {
      ProbeConfig cell_cfg = cfg;
      cell_cfg.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(head));
      const Probe probe = train_probe(features(layer, head, split.train_indices), y_train, cell_cfg);
      cell.metrics = evaluate(probe, features(layer, head, split.test_indices), y_test);
    } catch (const std::exception& e) {
      cell.metrics.reset();
      cell.error = e.what();
    }
  });
  return result;
}

}  // namespace

SweepResult sweep_heads(const ActivationSet& acts, std::span<const int> labels, const SplitAssignment& split,
                        const ProbeConfig& cfg, unsigned workers) {
  if (acts.tap != TapKind::HeadPreProjection) throw InvalidArgument("sweep_heads needs a head tap");
  check_split(acts, labels, split);
  SweepResult result;
  result.construct = split.target;
  result.tap = acts.tap;
  result.n_layers = static_cast<int>(acts.n_layers);
  result.n_heads = static_cast<int>(acts.n_heads);
  return run_sweep(std::move(result), labels, split, cfg, workers,
                   [&](int l, int h, const std::vector<std::size_t>& rows) { return cell_features(acts, l, h, rows); });
}

SweepResult sweep_layers(const ActivationSet& acts, std::span<const int> labels, const SplitAssignment& split,
                         const ProbeConfig& cfg, unsigned workers, bool concat_heads) {
  if (!is_residual(acts.tap) && !concat_heads) {
    throw InvalidArgument("sweep_layers needs a residual tap, or concat_heads with a head tap");
  }
  if (is_residual(acts.tap) && concat_heads) {
    throw InvalidArgument("concat_heads applies only to head taps");
  }
  check_split(acts, labels, split);
  SweepResult result;
  result.construct = split.target;
  result.tap = acts.tap;
  result.concat_heads = concat_heads;
  result.n_layers = static_cast<int>(acts.n_layers);
  result.n_heads = 1;
  return run_sweep(std::move(result), labels, split, cfg, workers,
                   [&](int l, int, const std::vector<std::size_t>& rows) { return layer_features(acts, l, rows); });
}

std::vector<BestEntry> best_per_construct(std::span<const SweepResult> sweeps, SelectionMetric metric) {
  if (sweeps.empty()) throw InvalidArgument("best_per_construct needs at least one sweep");
  for (const auto& s : sweeps) {
    if (s.tap != sweeps[0].tap || s.n_layers != sweeps[0].n_layers || s.n_heads != sweeps[0].n_heads) {
      throw InvalidArgument("sweeps disagree on tap kind or grid shape");
    }
  }
  std::vector<BestEntry> table;
  for (const auto& s : sweeps) {
    BestEntry e;
    e.construct = s.construct;
    if (auto cell = s.best_cell(metric)) {
      e.cell = *cell;
      e.metrics = *s.at(cell->layer, cell->head).metrics;
      e.best = metric_value(e.metrics, metric);
    } else {
      e.best = std::numeric_limits<double>::quiet_NaN();
    }
    table.push_back(std::move(e));
  }
  std::stable_sort(table.begin(), table.end(), [](const BestEntry& a, const BestEntry& b) {
    if (std::isnan(a.best)) return false;
    if (std::isnan(b.best)) return true;
    return a.best > b.best;
  });
  return table;
}

}  // namespace headprobe
