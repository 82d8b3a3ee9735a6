#pragma once

#include "advconform/dataio.hpp"
#include "advconform/model.hpp"

#include <span>
#include <string>
#include <string_view>

namespace advconform {

enum class Norm
{
  linf,
  l2
};

struct AttackSpec
{
  Norm norm = Norm::linf;
  double epsilon = 0.0;
  //! Clamp perturbed features to [0, 1]. Off by default: clamping shrinks
  //! the effective radius of the norm ball.
  bool clip_unit_box = false;
};

//! Validates epsilon (finite, >= 0); throws ArgumentError otherwise.
void validate(const AttackSpec& spec);

//! Moves x by epsilon along the sign (linf) or the unit direction (l2) of
//! `gradient`. The returned point satisfies ||x' - x|| <= epsilon as
//! evaluated in floating point. A zero l2 gradient leaves x unchanged.
Vector step_along(const Vector& x, const Vector& gradient, const AttackSpec& spec);

//! Single-step attack on the cross-entropy of the true label.
Vector perturb(const Classifier& model, const Vector& x, int y, const AttackSpec& spec);

//! Batched perturb: row i attacked with label y[i].
Matrix perturb_batch(const Classifier& model, const Matrix& x, std::span<const int> y, const AttackSpec& spec);

//! Copy of `ds` with the rows in `indices` attacked using their own labels.
LabeledDataset attack_dataset(const Classifier& model,
                              const LabeledDataset& ds,
                              std::span<const std::size_t> indices,
                              const AttackSpec& spec);

std::string_view to_string(Norm norm) noexcept;
Norm parse_norm(std::string_view text);

//! Parses "k/255"-style rationals or plain decimals. "k/255" yields the
//! correctly rounded double nearest to k/255.
double parse_epsilon(std::string_view text);

//! Inverse of parse_epsilon: "k/255" when the value equals k/255.0
//! exactly for an integer k, else the shortest round-trip decimal.
std::string format_epsilon(double value);

} // namespace advconform
