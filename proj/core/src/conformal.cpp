#include "advconform/conformal.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

namespace advconform {

namespace {

constexpr const char* kCalibrationHeader = "advconform-calibration-v1";
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_alpha(double alpha)
{
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ArgumentError(fmt::format("alpha must lie in (0, 1), got {}", alpha));
}

std::vector<double> draw_uniforms(Rng& rng, int k)
{
  std::vector<double> u(static_cast<std::size_t>(k));
  for (double& v : u)
    v = rng.uniform();
  return u;
}

} // namespace

std::string_view to_string(ScoreKind kind) noexcept
{
  return kind == ScoreKind::hps ? "hps" : "aps";
}

ScoreKind parse_score_kind(std::string_view text)
{
  if (text == "hps" || text == "HPS")
    return ScoreKind::hps;
  if (text == "aps" || text == "APS")
    return ScoreKind::aps;
  throw ArgumentError(fmt::format("unknown score kind '{}', expected hps or aps", text));
}

double score_from_probs(const Vector& probs, int y, ScoreKind kind, double u)
{
  if (y < 0 || y >= probs.size())
    throw ArgumentError(fmt::format("label {} outside [0, {})", y, probs.size()));
  const double fy = probs(y);
  if (kind == ScoreKind::hps)
    return 1.0 - fy;
  double above = 0.0;
  for (Eigen::Index j = 0; j < probs.size(); ++j)
    if (probs(j) > fy)
      above += probs(j);
  return std::min(1.0, above + fy * u);
}

double score(const Classifier& model, const Vector& x, int y, ScoreKind kind, double u)
{
  return score_from_probs(model.forward(x), y, kind, u);
}

double conformal_quantile(std::span<const double> scores, double alpha)
{
  check_alpha(alpha);
  if (scores.empty())
    throw ArgumentError("conformal_quantile needs at least one score");
  const std::size_t n = scores.size();
  // level * n = (1 - alpha)(n + 1); the slack absorbs rounding in 1 - alpha
  const double rank = (1.0 - alpha) * static_cast<double>(n + 1);
  const double k = std::ceil(rank - 1e-9);
  if (k > static_cast<double>(n))
    return kInf;
  const auto pos = static_cast<std::size_t>(std::max(1.0, k)) - 1;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(pos), sorted.end());
  return sorted[pos];
}

CalibrationResult calibrate(const Classifier& model,
                            const LabeledDataset& ds,
                            std::span<const std::size_t> cal_idx,
                            double alpha,
                            ScoreKind kind,
                            const AttackSpec& attack,
                            std::uint64_t seed)
{
  check_alpha(alpha);
  if (cal_idx.empty())
    throw ArgumentError("calibration index list is empty");
  const Matrix x = ds.gather(cal_idx);
  const std::vector<int> y = ds.gather_labels(cal_idx);
  const Matrix probs = model.predict_proba(perturb_batch(model, x, y, attack));

  CalibrationResult result;
  result.alpha = alpha;
  result.score_kind = kind;
  result.eps_cal = attack.epsilon;
  result.cal_scores.reserve(cal_idx.size());
  Rng rng(seed);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int label = y[static_cast<std::size_t>(r)];
    double u = 0.0;
    if (kind == ScoreKind::aps)
      u = draw_uniforms(rng, model.num_classes())[static_cast<std::size_t>(label)];
    result.cal_scores.push_back(score_from_probs(probs.row(r).transpose(), label, kind, u));
  }
  std::sort(result.cal_scores.begin(), result.cal_scores.end());
  result.q_hat = conformal_quantile(result.cal_scores, alpha);
  return result;
}

std::vector<int> prediction_set_from_probs(const Vector& probs,
                                           const CalibrationResult& result,
                                           std::span<const double> u)
{
  if (result.score_kind == ScoreKind::aps && u.size() != static_cast<std::size_t>(probs.size()))
    throw ArgumentError(fmt::format("APS needs {} uniforms, got {}", probs.size(), u.size()));
  std::vector<int> set;
  for (int c = 0; c < probs.size(); ++c) {
    const double uc = result.score_kind == ScoreKind::aps ? u[static_cast<std::size_t>(c)] : 0.0;
    if (result.q_hat == kInf || score_from_probs(probs, c, result.score_kind, uc) <= result.q_hat)
      set.push_back(c);
  }
  return set;
}

std::vector<int> prediction_set(const Classifier& model,
                                const Vector& x,
                                const CalibrationResult& result,
                                std::span<const double> u)
{
  return prediction_set_from_probs(model.forward(x), result, u);
}

Evaluation evaluate(const Classifier& model,
                    const LabeledDataset& ds,
                    std::span<const std::size_t> test_idx,
                    const CalibrationResult& result,
                    const AttackSpec& attack,
                    std::uint64_t seed)
{
  if (test_idx.empty())
    throw ArgumentError("test index list is empty");
  const Matrix x = ds.gather(test_idx);
  const std::vector<int> y = ds.gather_labels(test_idx);
  const Matrix probs = model.predict_proba(perturb_batch(model, x, y, attack));

  Rng rng(seed);
  std::size_t covered = 0;
  std::size_t total_size = 0;
  std::vector<double> u;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    if (result.score_kind == ScoreKind::aps)
      u = draw_uniforms(rng, model.num_classes());
    const std::vector<int> set = prediction_set_from_probs(probs.row(r).transpose(), result, u);
    total_size += set.size();
    if (std::find(set.begin(), set.end(), y[static_cast<std::size_t>(r)]) != set.end())
      ++covered;
  }
  const double n = static_cast<double>(test_idx.size());
  return Evaluation{ static_cast<double>(covered) / n, static_cast<double>(total_size) / n };
}

void save_calibration(const CalibrationResult& result, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << kCalibrationHeader << '\n';
  out << fmt::format("alpha {}\n", result.alpha);
  out << fmt::format("score_kind {}\n", to_string(result.score_kind));
  out << fmt::format("eps_cal {}\n", format_epsilon(result.eps_cal));
  out << fmt::format("q_hat {}\n", result.q_hat);
  out << fmt::format("n_scores {}\n", result.cal_scores.size());
  for (double s : result.cal_scores)
    out << fmt::format("{}\n", s);
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

namespace {

double to_real(const std::string& token, const std::filesystem::path& path)
{
  if (token == "inf")
    return kInf;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size())
    throw FormatError(fmt::format("{}: bad number '{}'", path.string(), token));
  return v;
}

std::string expect_field(std::istream& in, const char* key, const std::filesystem::path& path)
{
  std::string name;
  std::string value;
  if (!(in >> name >> value))
    throw IoError(fmt::format("{}: truncated before '{}'", path.string(), key));
  if (name != key)
    throw FormatError(fmt::format("{}: expected '{}', found '{}'", path.string(), key, name));
  return value;
}

} // namespace

CalibrationResult load_calibration(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError(fmt::format("cannot open {}", path.string()));
  std::string header;
  std::getline(in, header);
  if (header != kCalibrationHeader)
    throw FormatError(fmt::format("{}: expected header '{}'", path.string(), kCalibrationHeader));
  CalibrationResult result;
  result.alpha = to_real(expect_field(in, "alpha", path), path);
  result.score_kind = parse_score_kind(expect_field(in, "score_kind", path));
  result.eps_cal = parse_epsilon(expect_field(in, "eps_cal", path));
  result.q_hat = to_real(expect_field(in, "q_hat", path), path);
  const auto count = static_cast<std::size_t>(std::stoull(expect_field(in, "n_scores", path)));
  std::string token;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> token))
      throw IoError(fmt::format("{}: expected {} scores, found {}", path.string(), count, i));
    result.cal_scores.push_back(to_real(token, path));
  }
  return result;
}

} // namespace advconform
