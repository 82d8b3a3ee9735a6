#pragma once

#include "advconform/attack.hpp"
#include "advconform/conformal.hpp"
#include "advconform/dataio.hpp"
#include "advconform/model.hpp"
#include "advconform/theory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace advconform {

//! Estimator settings and user-supplied error budget for the theory report.
struct TheorySettings
{
  ErrorBudget budget;
  double c_window = 0.05;         // probability-scale window for estimate_c
  double kde_bandwidth = 0.0;     // 0 selects Silverman's rule
  std::size_t shift_mc = 200000;  // bootstrap draws for the quantile-shift check
};

void validate(const TheorySettings& settings);

struct TheoryCheckConfig
{
  double alpha = 0.1;
  double beta = 0.02;
  double eps_cal = 0.0;
  std::vector<double> eps_test;
  Norm norm = Norm::l2;
  TheorySettings settings;
  std::uint64_t seed = 0;
};

struct TheoryCheckPoint
{
  double eps_test = 0.0;
  double coverage = 0.0;
  double deviation = 0.0;     // |coverage - (1 - alpha)|
  double coverage_bound = 0.0; // signed bound on the deviation
  double mean_set_size = 0.0;
  std::optional<double> set_size_bound; // needs K >= 3
  bool in_band = false;       // coverage within [1 - alpha - beta, 1 - alpha + beta]
  bool predicted_in_band = false;
};

struct TheoryCheckReport
{
  double alpha = 0.0;
  double beta = 0.0;
  double eps_cal = 0.0;
  Norm norm = Norm::l2;
  ErrorBudget budget;
  double clean_q_hat = 0.0;   // score quantile of the unattacked calibration rows
  double prob_quantile = 0.0; // 1 - clean_q_hat
  double bandwidth = 0.0;
  LocalGeometry geometry;
  std::optional<std::string> c_note; // set when c fell back to grad_norm
  std::optional<ToleranceBand> band;
  std::optional<std::string> band_note;
  double q_hat = 0.0;         // quantile at eps_cal
  double p_true = 0.0;        // mean true-label probability on attacked calibration rows
  std::optional<double> ratio;
  QuantileShiftReport quantile_shift;
  std::vector<TheoryCheckPoint> points;
};

//! Estimates the local geometry of `model` on the calibration rows, evaluates
//! the coverage bound, tolerance band, set-size bound and the first-order
//! quantile shift, and pairs each with the measured coverage at every eps_test.
TheoryCheckReport theory_check(const Classifier& model,
                               const LabeledDataset& ds,
                               const SplitIndices& split,
                               const TheoryCheckConfig& cfg);

//! One `key: value` per line.
std::string theory_check_text(const TheoryCheckReport& report);
std::string theory_check_json(const TheoryCheckReport& report);

} // namespace advconform
