#pragma once

#include "advconform/attack.hpp"
#include "advconform/dataio.hpp"
#include "advconform/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace advconform {

enum class ScoreKind
{
  hps, // 1 - f_y(x)
  aps  // mass of strictly more probable classes + u * f_y(x)
};

std::string_view to_string(ScoreKind kind) noexcept;
ScoreKind parse_score_kind(std::string_view text);

struct CalibrationResult
{
  double q_hat = 0.0; // +inf when the quantile level exceeds 1
  double alpha = 0.1;
  ScoreKind score_kind = ScoreKind::hps;
  double eps_cal = 0.0;
  std::vector<double> cal_scores; // ascending

  bool operator==(const CalibrationResult&) const = default;
};

//! Nonconformity score of label y given the class probabilities.
double score_from_probs(const Vector& probs, int y, ScoreKind kind, double u);

double score(const Classifier& model, const Vector& x, int y, ScoreKind kind, double u);

//! The ceil((1 - alpha)(1 + 1/n) n)-th smallest score, or +inf when
//! (1 - alpha)(1 + 1/n) > 1.
double conformal_quantile(std::span<const double> scores, double alpha);

//! Attacks the calibration rows with `attack` (epsilon = eps_cal), scores
//! them and thresholds at the conformal quantile. APS draws one uniform per
//! (sample, class) from `seed`, sample-major.
CalibrationResult calibrate(const Classifier& model,
                            const LabeledDataset& ds,
                            std::span<const std::size_t> cal_idx,
                            double alpha,
                            ScoreKind kind,
                            const AttackSpec& attack,
                            std::uint64_t seed);

//! Labels whose score is <= q_hat. `u` holds one uniform per class and is
//! only read for APS. May be empty.
std::vector<int> prediction_set(const Classifier& model,
                                const Vector& x,
                                const CalibrationResult& result,
                                std::span<const double> u = {});

std::vector<int> prediction_set_from_probs(const Vector& probs,
                                           const CalibrationResult& result,
                                           std::span<const double> u = {});

struct Evaluation
{
  double coverage;
  double mean_set_size;
};

//! Attacks each test row with `attack` (epsilon = eps_test), forms its
//! prediction set and reports coverage and mean cardinality.
Evaluation evaluate(const Classifier& model,
                    const LabeledDataset& ds,
                    std::span<const std::size_t> test_idx,
                    const CalibrationResult& result,
                    const AttackSpec& attack,
                    std::uint64_t seed);

//! Text record: header, alpha, score kind, eps_cal, q_hat, scores.
void save_calibration(const CalibrationResult& result, const std::filesystem::path& path);
CalibrationResult load_calibration(const std::filesystem::path& path);

} // namespace advconform
