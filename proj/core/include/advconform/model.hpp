#pragma once

#include "advconform/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace advconform {

struct Layer
{
  Eigen::MatrixXd weights; // out x in
  Eigen::VectorXd bias;    // out

  bool operator==(const Layer& other) const
  {
    return weights.rows() == other.weights.rows() && weights.cols() == other.weights.cols() &&
           weights == other.weights && bias.size() == other.bias.size() && bias == other.bias;
  }
};

//! Gradient with the same layout as the classifier's layers.
using ParamGradient = std::vector<Layer>;

//! Per-layer values of one forward pass over a batch (rows = samples).
struct ForwardTrace
{
  std::vector<Matrix> pre_activations; // one per layer
  std::vector<Matrix> activations;     // input first, then each hidden output
  Matrix probabilities;                // batch x K
};

//! Dense softmax network with at most one hidden rectifier layer.
class Classifier
{
public:
  explicit Classifier(std::vector<Layer> layers);

  //! Random init scaled by 1/sqrt(fan_in); hidden_width == 0 gives a linear model.
  static Classifier create(int input_dim, int hidden_width, int num_classes, std::uint64_t seed);
  static Classifier zeros(int input_dim, int hidden_width, int num_classes);

  int input_dim() const noexcept { return static_cast<int>(layers_.front().weights.cols()); }
  int num_classes() const noexcept { return static_cast<int>(layers_.back().weights.rows()); }
  int hidden_width() const noexcept
  {
    return layers_.size() == 1 ? 0 : static_cast<int>(layers_.front().weights.rows());
  }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  Vector forward(const Vector& x) const;
  Matrix predict_proba(const Matrix& x) const;
  ForwardTrace trace(const Matrix& x) const;

  //! theta <- theta - step * gradient
  void apply_update(const ParamGradient& gradient, double step);

  std::size_t parameter_count() const noexcept;

  bool operator==(const Classifier&) const = default;

private:
  std::vector<Layer> layers_;
};

//! Cross-entropy -log f_y(x) evaluated through log-sum-exp.
double loss(const Classifier& model, const Vector& x, int y);

//! Per-row cross-entropy for a batch.
Vector batch_losses(const Classifier& model, const Matrix& x, std::span<const int> y);

ParamGradient grad_params(const Classifier& model, const Vector& x, int y);
Vector grad_input(const Classifier& model, const Vector& x, int y);
//! Gradient of the class-y probability f_y(x) (not of the loss).
Vector grad_prob_input(const Classifier& model, const Vector& x, int y);

//! Row i: gradient of the loss of sample i with respect to its input.
Matrix batch_grad_input(const Classifier& model, const Matrix& x, std::span<const int> y);
//! Row i: gradient of f_{y_i}(x_i) with respect to x_i.
Matrix batch_grad_prob_input(const Classifier& model, const Matrix& x, std::span<const int> y);

struct LossAndGradient
{
  double mean_loss;
  ParamGradient gradient; // gradient of the mean loss
};

LossAndGradient mean_loss_and_gradient(const Classifier& model, const Matrix& x, std::span<const int> y);

//! Text checkpoint headed by "advconform-model-v1"; parameters row-major.
void save_checkpoint(const Classifier& model, const std::filesystem::path& path);
Classifier load_checkpoint(const std::filesystem::path& path);

} // namespace advconform
