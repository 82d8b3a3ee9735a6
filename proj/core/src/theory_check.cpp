#include "advconform/theory_check.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace advconform {

namespace {

enum Stream : std::uint64_t
{
  kCalibrate = 1,
  kEvaluate = 2,
  kShift = 3
};

nlohmann::json optional_json(const std::optional<double>& v)
{
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string optional_text(const std::optional<double>& v)
{
  return v ? fmt::format("{}", *v) : std::string("n/a");
}

} // namespace

void validate(const TheorySettings& settings)
{
  validate(settings.budget);
  if (!(settings.c_window > 0.0))
    throw ArgumentError(fmt::format("c_window must be positive, got {}", settings.c_window));
  if (!(settings.kde_bandwidth >= 0.0) || !std::isfinite(settings.kde_bandwidth))
    throw ArgumentError(fmt::format("kde_bandwidth must be >= 0, got {}", settings.kde_bandwidth));
  if (settings.shift_mc < 100000)
    throw ArgumentError(fmt::format("shift_mc must be >= 100000, got {}", settings.shift_mc));
}

TheoryCheckReport theory_check(const Classifier& model,
                               const LabeledDataset& ds,
                               const SplitIndices& split,
                               const TheoryCheckConfig& cfg)
{
  validate(cfg.settings);
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw ArgumentError(fmt::format("alpha must lie in (0, 1), got {}", cfg.alpha));
  if (!(cfg.beta > 0.0))
    throw ArgumentError(fmt::format("beta must be positive, got {}", cfg.beta));
  if (cfg.eps_test.empty())
    throw ArgumentError("theory check needs at least one eps_test value");
  if (split.cal.empty() || split.test.empty())
    throw ArgumentError("theory check needs calibration and test rows");

  TheoryCheckReport report;
  report.alpha = cfg.alpha;
  report.beta = cfg.beta;
  report.eps_cal = cfg.eps_cal;
  report.norm = cfg.norm;
  report.budget = cfg.settings.budget;

  // clean true-label probabilities and their gradient norms on the calibration rows
  const Matrix x_cal = ds.gather(split.cal);
  const std::vector<int> y_cal = ds.gather_labels(split.cal);
  const Matrix probs = model.predict_proba(x_cal);
  const Matrix grads = batch_grad_prob_input(model, x_cal, y_cal);
  std::vector<double> f(split.cal.size());
  std::vector<double> g(split.cal.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    f[i] = probs(r, y_cal[i]);
    g[i] = grads.row(r).norm();
  }
  std::vector<double> clean_scores(f.size());
  std::transform(f.begin(), f.end(), clean_scores.begin(), [](double v) { return 1.0 - v; });
  report.clean_q_hat = conformal_quantile(clean_scores, cfg.alpha);
  report.prob_quantile = std::isfinite(report.clean_q_hat) ? 1.0 - report.clean_q_hat : 0.0;

  report.bandwidth = cfg.settings.kde_bandwidth > 0.0 ? cfg.settings.kde_bandwidth : silverman_bandwidth(f);
  report.geometry.grad_norm = estimate_grad_norm(model, ds, split.test);
  report.geometry.density_at_q = estimate_density_at(f, report.prob_quantile, report.bandwidth);
  try {
    report.geometry.c = estimate_c(model, ds, split.cal, report.prob_quantile, cfg.settings.c_window);
  } catch (const InsufficientDataError& e) {
    report.geometry.c = report.geometry.grad_norm;
    report.c_note = e.what();
  }

  try {
    report.band = tolerance_band(report.budget, report.geometry, cfg.eps_cal, cfg.beta);
  } catch (const DegenerateGeometryError& e) {
    report.band_note = e.what();
  }

  const CalibrationResult cal =
    calibrate(model, ds, split.cal, cfg.alpha, ScoreKind::hps, AttackSpec{ cfg.norm, cfg.eps_cal },
              derive_seed(cfg.seed, { kCalibrate, seed_coordinate(cfg.eps_cal) }));
  report.q_hat = cal.q_hat;
  double score_sum = 0.0;
  for (double s : cal.cal_scores)
    score_sum += s;
  report.p_true = 1.0 - score_sum / static_cast<double>(cal.cal_scores.size());
  if (report.p_true < 1.0 && std::isfinite(cal.q_hat))
    report.ratio = set_size_ratio(cal.q_hat, report.p_true);

  // quantile shift of f - eps g with (f, g) resampled from the calibration rows
  const std::vector<double> shift_grid{ 0.01, 0.02, 0.03, 0.04, 0.05 };
  const JointSampler sampler = [&](Rng& rng) {
    const auto i = static_cast<std::size_t>(rng.below(f.size()));
    return std::pair{ f[i], g[i] };
  };
  report.quantile_shift = quantile_shift_check(sampler, cfg.alpha, shift_grid, cfg.settings.shift_mc, derive_seed(cfg.seed, { kShift }));

  const double lo = 1.0 - cfg.alpha - cfg.beta;
  const double hi = 1.0 - cfg.alpha + cfg.beta;
  for (double eps : cfg.eps_test) {
    const Evaluation ev = evaluate(model, ds, split.test, cal, AttackSpec{ cfg.norm, eps },
                                   derive_seed(cfg.seed, { kEvaluate, seed_coordinate(cfg.eps_cal), seed_coordinate(eps) }));
    TheoryCheckPoint p;
    p.eps_test = eps;
    p.coverage = ev.coverage;
    p.deviation = std::abs(ev.coverage - (1.0 - cfg.alpha));
    p.coverage_bound = coverage_deviation_bound(report.budget, report.geometry, cfg.eps_cal, eps);
    p.mean_set_size = ev.mean_set_size;
    if (model.num_classes() >= 3 && report.ratio)
      p.set_size_bound = set_size_bound(cfg.alpha, std::max(0.0, p.coverage_bound), model.num_classes(),
                                                cal.q_hat, report.p_true);
    p.in_band = ev.coverage >= lo && ev.coverage <= hi;
    p.predicted_in_band = report.band && eps >= report.band->eps_lo && eps <= report.band->eps_hi;
    report.points.push_back(p);
  }
  return report;
}

std::string theory_check_text(const TheoryCheckReport& r)
{
  std::string out;
  auto line = [&](std::string_view key, const auto& value) { out += fmt::format("{}: {}\n", key, value); };
  line("alpha", r.alpha);
  line("beta", r.beta);
  line("norm", to_string(r.norm));
  line("eps_cal", format_epsilon(r.eps_cal));
  line("e_train", r.budget.e_train);
  line("d_cal", r.budget.d_cal);
  line("e_cal", r.budget.e_cal);
  line("clean_q_hat", r.clean_q_hat);
  line("prob_quantile", r.prob_quantile);
  line("bandwidth", r.bandwidth);
  line("grad_norm", r.geometry.grad_norm);
  line("c", r.geometry.c);
  if (r.c_note)
    line("c_note", *r.c_note);
  line("density_at_q", r.geometry.density_at_q);
  if (r.band) {
    line("band_eps_lo", r.band->eps_lo);
    line("band_eps_hi", r.band->eps_hi);
    line("band_length", r.band->length);
  } else {
    line("band_note", r.band_note.value_or("unavailable"));
  }
  line("q_hat", r.q_hat);
  line("p_true", r.p_true);
  line("ratio", optional_text(r.ratio));
  line("shift_base_quantile", r.quantile_shift.base_quantile);
  line("shift_conditional_mean", r.quantile_shift.conditional_mean);
  line("shift_fitted_slope", r.quantile_shift.fitted_slope);
  line("shift_predicted_slope", -r.quantile_shift.conditional_mean);
  line("shift_max_abs_deviation", r.quantile_shift.max_abs_deviation);
  for (const TheoryCheckPoint& p : r.points) {
    const std::string eps = format_epsilon(p.eps_test);
    line(fmt::format("eps_test[{}].coverage", eps), p.coverage);
    line(fmt::format("eps_test[{}].deviation", eps), p.deviation);
    line(fmt::format("eps_test[{}].coverage_bound", eps), p.coverage_bound);
    line(fmt::format("eps_test[{}].mean_set_size", eps), p.mean_set_size);
    line(fmt::format("eps_test[{}].set_size_bound", eps), optional_text(p.set_size_bound));
    line(fmt::format("eps_test[{}].in_band", eps), p.in_band);
    line(fmt::format("eps_test[{}].predicted_in_band", eps), p.predicted_in_band);
  }
  return out;
}

std::string theory_check_json(const TheoryCheckReport& r)
{
  nlohmann::json shift_points = nlohmann::json::array();
  for (const QuantileShiftPoint& p : r.quantile_shift.points)
    shift_points.push_back({ { "eps", p.eps },
                             { "empirical_quantile", p.empirical_quantile },
                             { "predicted_quantile", p.predicted_quantile } });
  nlohmann::json points = nlohmann::json::array();
  for (const TheoryCheckPoint& p : r.points)
    points.push_back({ { "eps_test", format_epsilon(p.eps_test) },
                       { "coverage", p.coverage },
                       { "deviation", p.deviation },
                       { "coverage_bound", p.coverage_bound },
                       { "mean_set_size", p.mean_set_size },
                       { "set_size_bound", optional_json(p.set_size_bound) },
                       { "in_band", p.in_band },
                       { "predicted_in_band", p.predicted_in_band } });
  nlohmann::json band = nullptr;
  if (r.band)
    band = { { "beta", r.band->beta },
             { "eps_lo", r.band->eps_lo },
             { "eps_hi", r.band->eps_hi },
             { "length", r.band->length } };
  nlohmann::json doc = {
    { "alpha", r.alpha },
    { "beta", r.beta },
    { "norm", to_string(r.norm) },
    { "eps_cal", format_epsilon(r.eps_cal) },
    { "budget", { { "e_train", r.budget.e_train }, { "d_cal", r.budget.d_cal }, { "e_cal", r.budget.e_cal } } },
    { "clean_q_hat", r.clean_q_hat },
    { "prob_quantile", r.prob_quantile },
    { "bandwidth", r.bandwidth },
    { "geometry",
      { { "grad_norm", r.geometry.grad_norm }, { "c", r.geometry.c }, { "density_at_q", r.geometry.density_at_q } } },
    { "band", band },
    { "q_hat", r.q_hat },
    { "p_true", r.p_true },
    { "ratio", optional_json(r.ratio) },
    { "quantile_shift",
      { { "alpha", r.quantile_shift.alpha },
        { "n_mc", r.quantile_shift.n_mc },
        { "base_quantile", r.quantile_shift.base_quantile },
        { "conditional_mean", r.quantile_shift.conditional_mean },
        { "fitted_slope", r.quantile_shift.fitted_slope },
        { "max_abs_deviation", r.quantile_shift.max_abs_deviation },
        { "points", shift_points } } },
    { "points", points },
  };
  if (r.c_note)
    doc["c_note"] = *r.c_note;
  if (r.band_note)
    doc["band_note"] = *r.band_note;
  return doc.dump(2);
}

} // namespace advconform
