#include "advconform/theory.hpp"

#include "advconform/attack.hpp"
#include "advconform/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace advconform {

void validate(const ErrorBudget& budget)
{
  for (double v : { budget.e_train, budget.d_cal, budget.e_cal })
    if (!std::isfinite(v) || v < 0.0)
      throw ArgumentError("error budget terms must be finite and >= 0");
}

void validate(const LocalGeometry& geom)
{
  for (double v : { geom.grad_norm, geom.c, geom.density_at_q })
    if (!std::isfinite(v) || v < 0.0)
      throw ArgumentError("local geometry terms must be finite and >= 0");
}

double estimate_grad_norm(const Classifier& model, const LabeledDataset& ds, std::span<const std::size_t> idx)
{
  if (idx.empty())
    throw ArgumentError("estimate_grad_norm needs a non-empty index list");
  const Matrix grads = batch_grad_prob_input(model, ds.gather(idx), ds.gather_labels(idx));
  double total = 0.0;
  for (Eigen::Index r = 0; r < grads.rows(); ++r)
    total += grads.row(r).norm();
  return total / static_cast<double>(idx.size());
}

double estimate_density_at(std::span<const double> values, double point, double bandwidth)
{
  if (values.size() < 50)
    throw ArgumentError(fmt::format("density estimate needs >= 50 values, got {}", values.size()));
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
    throw ArgumentError(fmt::format("bandwidth must be positive, got {}", bandwidth));
  double total = 0.0;
  for (double v : values) {
    const double z = (point - v) / bandwidth;
    total += std::exp(-0.5 * z * z);
  }
  return total / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
}

double silverman_bandwidth(std::span<const double> values)
{
  if (values.size() < 2)
    throw ArgumentError("bandwidth selection needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values)
    ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = empirical_quantile(values, 0.75) - empirical_quantile(values, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0))
    spread = sd > 0.0 ? sd : 1e-3;
  return 0.9 * spread * std::pow(n, -0.2);
}

double estimate_c(const Classifier& model,
                  const LabeledDataset& ds,
                  std::span<const std::size_t> idx,
                  double q,
                  double window)
{
  if (!(window > 0.0))
    throw ArgumentError(fmt::format("window must be positive, got {}", window));
  if (idx.empty())
    throw ArgumentError("estimate_c needs a non-empty index list");
  const Matrix x = ds.gather(idx);
  const std::vector<int> y = ds.gather_labels(idx);
  const Matrix probs = model.predict_proba(x);
  const Matrix grads = batch_grad_prob_input(model, x, y);
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (std::abs(probs(r, y[static_cast<std::size_t>(r)]) - q) <= window) {
      total += grads.row(r).norm();
      ++count;
    }
  }
  if (count < 20)
    throw InsufficientDataError(
      fmt::format("only {} samples with |f_y(x) - {}| <= {} (window {}); need 20", count, q, window, window));
  return total / static_cast<double>(count);
}

double coverage_deviation_bound(const ErrorBudget& budget, const LocalGeometry& geom, double eps_cal, double eps_test)
{
  const double drift = (2.0 * eps_test - eps_cal) * geom.grad_norm - eps_cal * geom.c;
  return budget.total() + drift * geom.density_at_q;
}

ToleranceBand tolerance_band(const ErrorBudget& budget, const LocalGeometry& geom, double eps_cal, double beta)
{
  validate(budget);
  validate(geom);
  if (!(beta > 0.0))
    throw ArgumentError(fmt::format("beta must be positive, got {}", beta));
  if (geom.grad_norm == 0.0 || geom.density_at_q == 0.0)
    throw DegenerateGeometryError("tolerance band needs a positive gradient norm and density");

  const double scale = 2.0 * geom.grad_norm * geom.density_at_q;
  const double shift = (geom.c + geom.grad_norm) * eps_cal / (2.0 * geom.grad_norm);
  ToleranceBand band;
  band.beta = beta;
  band.eps_lo = (-beta - budget.total()) / scale + shift;
  band.eps_hi = (beta - budget.total()) / scale + shift;
  band.length = 2.0 * beta / scale;
  return band;
}

double empirical_quantile(std::span<const double> values, double level)
{
  if (values.empty())
    throw ArgumentError("quantile of an empty sample");
  const std::size_t n = values.size();
  const double k = std::ceil(level * static_cast<double>(n) - 1e-9);
  const auto pos = static_cast<std::size_t>(std::clamp(k, 1.0, static_cast<double>(n))) - 1;
  std::vector<double> v(values.begin(), values.end());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(pos), v.end());
  return v[pos];
}

QuantileShiftReport quantile_shift_check(const JointSampler& sampler,
                                         double alpha,
                                         std::span<const double> eps_grid,
                                         std::size_t n_mc,
                                         std::uint64_t seed)
{
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
  if (n_mc < 100000)
    throw ArgumentError(fmt::format("quantile_shift_check needs n_mc >= 1e5, got {}", n_mc));
  if (eps_grid.empty())
    throw ArgumentError("quantile_shift_check needs a non-empty eps grid");
  for (double e : eps_grid)
    if (!(e > 0.0 && e <= 0.05))
      throw ArgumentError(fmt::format("eps {} outside (0, 0.05]", e));

  std::vector<double> f(n_mc);
  std::vector<double> g(n_mc);
  Rng rng(seed);
  for (std::size_t i = 0; i < n_mc; ++i)
    std::tie(f[i], g[i]) = sampler(rng);

  QuantileShiftReport report;
  report.alpha = alpha;
  report.n_mc = n_mc;
  const double level = 1.0 - alpha;
  report.base_quantile = empirical_quantile(f, level);

  // E[g | f = q] from the sqrt(n) nearest ranks on either side of q
  std::vector<std::size_t> order(n_mc);
  std::iota(order.begin(), order.end(), std::size_t{ 0 });
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a] < f[b]; });
  const auto centre = static_cast<std::size_t>(std::lower_bound(order.begin(), order.end(), report.base_quantile,
                                                                [&](std::size_t i, double q) { return f[i] < q; }) -
                                               order.begin());
  const auto half = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_mc))));
  const std::size_t lo = centre > half ? centre - half : 0;
  const std::size_t hi = std::min(n_mc, centre + half + 1);
  double g_sum = 0.0;
  for (std::size_t r = lo; r < hi; ++r)
    g_sum += g[order[r]];
  report.conditional_mean = g_sum / static_cast<double>(hi - lo);

  std::vector<double> z(n_mc);
  double num = 0.0;
  double den = 0.0;
  for (double eps : eps_grid) {
    for (std::size_t i = 0; i < n_mc; ++i)
      z[i] = f[i] - eps * g[i];
    QuantileShiftPoint p{ eps, empirical_quantile(z, level), report.base_quantile - eps * report.conditional_mean };
    num += eps * (p.empirical_quantile - report.base_quantile);
    den += eps * eps;
    report.max_abs_deviation = std::max(report.max_abs_deviation, std::abs(p.empirical_quantile - p.predicted_quantile));
    report.points.push_back(p);
  }
  report.fitted_slope = num / den;
  return report;
}

double set_size_ratio(double q_hat, double p_true)
{
  if (!(p_true >= 0.0 && p_true < 1.0))
    throw DegenerateGeometryError(fmt::format("p_true must lie in [0, 1), got {}", p_true));
  return (1.0 - q_hat) / (1.0 - p_true);
}

double set_size_bound(double alpha, double h, int num_classes, double q_hat, double p_true)
{
  if (num_classes < 3)
    throw ArgumentError(fmt::format("set-size bound needs K >= 3, got {}", num_classes));
  const double ratio = std::clamp(set_size_ratio(q_hat, p_true), 0.0, 1.0);
  return 1.0 - alpha + h + (num_classes - 1) * std::pow(1.0 - ratio, num_classes - 2);
}

namespace {

ModelSummary summarize(const Classifier& model,
                       const LabeledDataset& ds,
                       const SplitIndices& split,
                       double alpha,
                       double eps_cal,
                       double eps_test,
                       std::uint64_t seed)
{
  const CalibrationResult cal =
    calibrate(model, ds, split.cal, alpha, ScoreKind::hps, AttackSpec{ Norm::linf, eps_cal }, seed);
  const Evaluation ev = evaluate(model, ds, split.test, cal, AttackSpec{ Norm::linf, eps_test }, seed);
  ModelSummary s;
  s.q_hat = cal.q_hat;
  double score_sum = 0.0;
  for (double v : cal.cal_scores)
    score_sum += v;
  s.p_true = 1.0 - score_sum / static_cast<double>(cal.cal_scores.size());
  s.ratio = set_size_ratio(s.q_hat, s.p_true);
  s.bound = set_size_bound(alpha, 0.0, model.num_classes(), s.q_hat, s.p_true);
  s.coverage = ev.coverage;
  s.mean_set_size = ev.mean_set_size;
  return s;
}

} // namespace

SetSizeReport compare_set_sizes(std::span<const SetSizeTrial> trials,
                                const LabeledDataset& ds,
                                double alpha,
                                double eps_cal,
                                double eps_test)
{
  SetSizeReport report;
  report.alpha = alpha;
  report.eps_cal = eps_cal;
  report.eps_test = eps_test;
  for (const SetSizeTrial& t : trials) {
    SetSizeSeedRow row;
    row.seed = t.seed;
    row.clean = summarize(t.clean, ds, t.split, alpha, eps_cal, eps_test, t.seed);
    row.adversarial = summarize(t.adversarial, ds, t.split, alpha, eps_cal, eps_test, t.seed);
    row.size_diff = row.adversarial.mean_set_size - row.clean.mean_set_size;
    row.ratio_diff = row.adversarial.ratio - row.clean.ratio;
    row.bound_diff = row.adversarial.bound - row.clean.bound;
    const bool smaller = row.size_diff < 0.0;
    report.smaller_sets += smaller ? 1 : 0;
    report.ratio_smaller += row.ratio_diff < 0.0 ? 1 : 0;
    report.bound_agrees += (row.bound_diff < 0.0) == smaller ? 1 : 0;
    report.ratio_agrees_size += (smaller && row.ratio_diff > 0.0) ? 1 : 0;
    report.rows.push_back(std::move(row));
  }
  return report;
}

} // namespace advconform
