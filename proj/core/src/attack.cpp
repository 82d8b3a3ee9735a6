#include "advconform/attack.hpp"

#include "advconform/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>

namespace advconform {

void validate(const AttackSpec& spec)
{
  if (!std::isfinite(spec.epsilon) || spec.epsilon < 0.0)
    throw ArgumentError(fmt::format("attack epsilon must be finite and >= 0, got {}", spec.epsilon));
}

namespace {

// Pulls a coordinate back toward its origin until |x' - x| <= eps holds in
// floating point; rounding in x + eps can overshoot by an ulp.
double within(double origin, double moved, double eps)
{
  if (std::abs(moved - origin) > 2.0 * eps)
    moved = origin + std::copysign(eps, moved - origin);
  while (std::abs(moved - origin) > eps)
    moved = std::nextafter(moved, origin);
  return moved;
}

Vector clip_and_bound(const Vector& x, Vector moved, const AttackSpec& spec)
{
  if (spec.clip_unit_box)
    moved = moved.cwiseMax(0.0).cwiseMin(1.0);
  if (spec.norm == Norm::linf) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      moved(i) = within(x(i), moved(i), spec.epsilon);
    return moved;
  }
  Vector delta = moved - x;
  const double length = delta.norm();
  double scale = length > spec.epsilon ? spec.epsilon / length : 1.0;
  Vector out = x + scale * delta;
  // shrink by 2^-50, 2^-49, ... until rounding in x + scale * delta no longer overshoots
  for (double cut = 0x1.0p-50; (out - x).norm() > spec.epsilon; cut = std::min(2.0 * cut, 0.5)) {
    scale *= 1.0 - cut;
    out = x + scale * delta;
  }
  return out;
}

} // namespace

Vector step_along(const Vector& x, const Vector& gradient, const AttackSpec& spec)
{
  validate(spec);
  if (gradient.size() != x.size())
    throw ArgumentError(fmt::format("gradient length {} does not match input {}", gradient.size(), x.size()));
  if (spec.epsilon == 0.0)
    return x;
  Vector moved = x;
  if (spec.norm == Norm::linf) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double g = gradient(i);
      if (g > 0.0)
        moved(i) = x(i) + spec.epsilon;
      else if (g < 0.0)
        moved(i) = x(i) - spec.epsilon;
    }
  } else {
    const double norm = gradient.norm();
    if (norm < 1e-12)
      return x;
    moved = x + (spec.epsilon / norm) * gradient;
  }
  return clip_and_bound(x, std::move(moved), spec);
}

Vector perturb(const Classifier& model, const Vector& x, int y, const AttackSpec& spec)
{
  validate(spec);
  if (x.size() != model.input_dim())
    throw ArgumentError(fmt::format("input width {} does not match model input {}", x.size(), model.input_dim()));
  if (spec.epsilon == 0.0)
    return x;
  return step_along(x, grad_input(model, x, y), spec);
}

Matrix perturb_batch(const Classifier& model, const Matrix& x, std::span<const int> y, const AttackSpec& spec)
{
  validate(spec);
  if (spec.epsilon == 0.0 || x.rows() == 0) {
    if (x.cols() != model.input_dim())
      throw ArgumentError(fmt::format("input width {} does not match model input {}", x.cols(), model.input_dim()));
    return x;
  }
  const Matrix grads = batch_grad_input(model, x, y);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out.row(r) = step_along(x.row(r).transpose(), grads.row(r).transpose(), spec).transpose();
  return out;
}

LabeledDataset attack_dataset(const Classifier& model,
                              const LabeledDataset& ds,
                              std::span<const std::size_t> indices,
                              const AttackSpec& spec)
{
  validate(spec);
  const Matrix x = ds.gather(indices);
  if (spec.epsilon == 0.0)
    return ds;
  const std::vector<int> y = ds.gather_labels(indices);
  return ds.with_rows(indices, perturb_batch(model, x, y, spec));
}

std::string_view to_string(Norm norm) noexcept
{
  return norm == Norm::linf ? "linf" : "l2";
}

Norm parse_norm(std::string_view text)
{
  if (text == "linf")
    return Norm::linf;
  if (text == "l2")
    return Norm::l2;
  throw ArgumentError(fmt::format("unknown norm '{}', expected linf or l2", text));
}

namespace {

double parse_number(std::string_view text, std::string_view whole)
{
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw ArgumentError(fmt::format("cannot parse epsilon '{}'", whole));
  return v;
}

std::string_view trim(std::string_view s)
{
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

} // namespace

double parse_epsilon(std::string_view text)
{
  const std::string_view t = trim(text);
  double value = 0.0;
  if (auto slash = t.find('/'); slash != std::string_view::npos) {
    const double num = parse_number(trim(t.substr(0, slash)), text);
    const double den = parse_number(trim(t.substr(slash + 1)), text);
    if (den == 0.0)
      throw ArgumentError(fmt::format("epsilon '{}' has a zero denominator", text));
    value = num / den;
  } else {
    value = parse_number(t, text);
  }
  if (!std::isfinite(value) || value < 0.0)
    throw ArgumentError(fmt::format("epsilon '{}' must be finite and >= 0", text));
  return value + 0.0;
}

std::string format_epsilon(double value)
{
  const double k = std::round(value * 255.0);
  if (std::isfinite(value) && k >= 0.0 && k < 1e9 && k / 255.0 == value)
    return fmt::format("{}/255", static_cast<long long>(k));
  return fmt::format("{}", value);
}

} // namespace advconform
