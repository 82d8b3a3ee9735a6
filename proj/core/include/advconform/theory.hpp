#pragma once

#include "advconform/conformal.hpp"
#include "advconform/dataio.hpp"
#include "advconform/model.hpp"
#include "advconform/random.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace advconform {

//! Concentration/stability constants whose sum bounds the exchangeable
//! coverage error. Supplied by the user; never estimated here.
struct ErrorBudget
{
  double e_train = 0.0;
  double d_cal = 0.0;
  double e_cal = 0.0;

  double total() const noexcept { return e_train + d_cal + e_cal; }
};

//! Local sensitivity of the true-class probability around the quantile.
struct LocalGeometry
{
  double grad_norm = 0.0;    // mean ||grad_x f_y(x)||_2
  double c = 0.0;            // E[||grad_x f_y|| | f_y = quantile]
  double density_at_q = 0.0; // density of f_y(x) at the probability-scale quantile
};

struct ToleranceBand
{
  double beta = 0.0;
  double eps_lo = 0.0;
  double eps_hi = 0.0;
  double length = 0.0;
};

void validate(const ErrorBudget& budget);
void validate(const LocalGeometry& geom);

//! Mean l2 norm of grad_prob_input at the true label over `idx`.
double estimate_grad_norm(const Classifier& model, const LabeledDataset& ds, std::span<const std::size_t> idx);

//! Gaussian kernel density estimate at `point`. Needs at least 50 values.
double estimate_density_at(std::span<const double> values, double point, double bandwidth);

//! Silverman's rule: 0.9 min(sd, IQR/1.34) n^(-1/5).
double silverman_bandwidth(std::span<const double> values);

//! Mean grad-prob norm over samples with |f_y(x) - q| <= window. Throws
//! InsufficientDataError when fewer than 20 samples fall in the window.
double estimate_c(const Classifier& model,
                  const LabeledDataset& ds,
                  std::span<const std::size_t> idx,
                  double q,
                  double window);

//! Coverage-deviation bound without the o(.) remainder:
//! budget + ((2 eps_test - eps_cal) grad_norm - eps_cal c) density_at_q.
//! The gradient term may be negative.
double coverage_deviation_bound(const ErrorBudget& budget, const LocalGeometry& geom, double eps_cal, double eps_test);

//! Range of eps_test keeping coverage inside [1 - alpha - beta, 1 - alpha + beta].
//! eps_lo = (-beta - E)/s + d, eps_hi = (beta - E)/s + d with s = 2 grad_norm
//! density_at_q, d = (c + grad_norm) eps_cal / (2 grad_norm); length is beta /
//! (grad_norm density_at_q), E the budget total. Throws DegenerateGeometryError
//! on zero grad_norm or density.
ToleranceBand tolerance_band(const ErrorBudget& budget, const LocalGeometry& geom, double eps_cal, double beta);

using JointSampler = std::function<std::pair<double, double>(Rng&)>;

struct QuantileShiftPoint
{
  double eps;
  double empirical_quantile; // Q_{1-alpha}(f - eps g)
  double predicted_quantile; // Q_{1-alpha}(f) - eps E[g | f = Q]
};

struct QuantileShiftReport
{
  double alpha = 0.0;
  std::size_t n_mc = 0;
  double base_quantile = 0.0;    // Q_{1-alpha}(f)
  double conditional_mean = 0.0; // estimated E[g | f = base_quantile]
  double fitted_slope = 0.0;     // least squares of shift on eps, through 0
  double max_abs_deviation = 0.0;
  std::vector<QuantileShiftPoint> points;
};

//! Monte-Carlo check of the first-order quantile shift of f - eps g.
//! eps values must be positive and at most 0.05; n_mc at least 1e5.
QuantileShiftReport quantile_shift_check(const JointSampler& sampler,
                                         double alpha,
                                         std::span<const double> eps_grid,
                                         std::size_t n_mc,
                                         std::uint64_t seed);

//! Empirical (1 - alpha) quantile (ceil(level n)-th order statistic).
double empirical_quantile(std::span<const double> values, double level);

//! Expected prediction-set size bound for K >= 3 under uniformly spread
//! wrong-class mass: 1 - alpha + h + (K - 1)(1 - r)^(K - 2) with
//! r = (1 - q_hat)/(1 - p_true) clamped to [0, 1].
double set_size_bound(double alpha, double h, int num_classes, double q_hat, double p_true);

//! (1 - q_hat)/(1 - p_true) as used by the bound (unclamped).
double set_size_ratio(double q_hat, double p_true);

struct ModelSummary
{
  double q_hat = 0.0;
  double p_true = 0.0; // mean true-label probability on the attacked calibration rows
  double ratio = 0.0;
  double bound = 0.0; // set_size_bound with h = 0
  double coverage = 0.0;
  double mean_set_size = 0.0;
};

struct SetSizeTrial
{
  Classifier clean;
  Classifier adversarial;
  SplitIndices split;
  std::uint64_t seed = 0;
};

struct SetSizeSeedRow
{
  std::uint64_t seed = 0;
  ModelSummary clean;
  ModelSummary adversarial;
  double size_diff = 0.0;  // adversarial - clean
  double ratio_diff = 0.0; // adversarial - clean
  double bound_diff = 0.0; // adversarial - clean
};

struct SetSizeReport
{
  double alpha = 0.0;
  double eps_cal = 0.0;
  double eps_test = 0.0;
  std::vector<SetSizeSeedRow> rows;
  int smaller_sets = 0;      // seeds with adversarial mean set size < clean
  int ratio_smaller = 0;     // seeds with adversarial ratio < clean ratio
  int bound_agrees = 0;      // seeds where the bound orders the models like the set sizes
  int ratio_agrees_size = 0; // seeds with smaller sets and a larger adversarial ratio
};

//! Calibrates both models of every trial at eps_cal, evaluates them at
//! eps_test (HPS, linf) and compares set sizes with the bound's ratio.
SetSizeReport compare_set_sizes(std::span<const SetSizeTrial> trials,
                                const LabeledDataset& ds,
                                double alpha,
                                double eps_cal,
                                double eps_test);

} // namespace advconform
