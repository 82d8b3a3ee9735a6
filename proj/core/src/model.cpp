#include "advconform/model.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace advconform {

namespace {

constexpr const char* kCheckpointHeader = "advconform-model-v1";

void softmax_rows(Matrix& z)
{
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const double m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

// Backpropagates d(objective)/d(logits) through the network. Fills the
// parameter gradient (summed over rows) and/or the per-row input gradient.
void backward(const Classifier& model,
              const ForwardTrace& tr,
              Matrix delta,
              ParamGradient* params,
              Matrix* input)
{
  const auto& layers = model.layers();
  if (params)
    params->resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Layer& layer = layers[l];
    if (params) {
      (*params)[l].weights = delta.transpose() * tr.activations[l];
      (*params)[l].bias = delta.colwise().sum().transpose();
    }
    if (l > 0) {
      Matrix back = delta * layer.weights;
      // rectifier subgradient at 0 is 0
      back.array() *= (tr.pre_activations[l - 1].array() > 0.0).cast<double>();
      delta = std::move(back);
    } else if (input) {
      *input = delta * layer.weights;
    }
  }
}

void check_batch(const Classifier& model, const Matrix& x, std::span<const int> y)
{
  if (x.cols() != model.input_dim())
    throw ArgumentError(fmt::format("input width {} does not match model input {}", x.cols(), model.input_dim()));
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw ArgumentError(fmt::format("{} inputs but {} labels", x.rows(), y.size()));
  for (int label : y)
    if (label < 0 || label >= model.num_classes())
      throw ArgumentError(fmt::format("label {} outside [0, {})", label, model.num_classes()));
}

Matrix one_hot_residual(const Matrix& probs, std::span<const int> y)
{
  Matrix delta = probs;
  for (Eigen::Index r = 0; r < delta.rows(); ++r)
    delta(r, y[static_cast<std::size_t>(r)]) -= 1.0;
  return delta;
}

double row_loss(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int y)
{
  Eigen::Index top = 0;
  const double m = logits.maxCoeff(&top);
  double tail = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (j != top)
      tail += std::exp(logits(j) - m);
  return (m - logits(y)) + std::log1p(tail);
}

Matrix as_row(const Vector& x)
{
  return x.transpose();
}

} // namespace

Classifier::Classifier(std::vector<Layer> layers)
  : layers_(std::move(layers))
{
  if (layers_.empty() || layers_.size() > 2)
    throw ArgumentError(fmt::format("classifier needs 1 or 2 layers, got {}", layers_.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weights.rows() < 1 || layer.weights.cols() < 1)
      throw ArgumentError(fmt::format("layer {} has an empty weight matrix", l));
    if (layer.bias.size() != layer.weights.rows())
      throw ArgumentError(fmt::format("layer {} bias length {} != {} outputs", l, layer.bias.size(),
                                      layer.weights.rows()));
    if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows())
      throw ArgumentError(fmt::format("layer {} expects {} inputs but previous layer has {} outputs", l,
                                      layer.weights.cols(), layers_[l - 1].weights.rows()));
    if (!layer.weights.allFinite() || !layer.bias.allFinite())
      throw ArgumentError(fmt::format("layer {} has non-finite parameters", l));
  }
  if (layers_.back().weights.rows() < 2)
    throw ArgumentError("output layer needs at least two classes");
}

Classifier Classifier::zeros(int input_dim, int hidden_width, int num_classes)
{
  if (input_dim < 1 || hidden_width < 0 || num_classes < 2)
    throw ArgumentError("invalid classifier shape");
  std::vector<Layer> layers;
  if (hidden_width > 0) {
    layers.push_back({ Eigen::MatrixXd::Zero(hidden_width, input_dim), Eigen::VectorXd::Zero(hidden_width) });
    layers.push_back({ Eigen::MatrixXd::Zero(num_classes, hidden_width), Eigen::VectorXd::Zero(num_classes) });
  } else {
    layers.push_back({ Eigen::MatrixXd::Zero(num_classes, input_dim), Eigen::VectorXd::Zero(num_classes) });
  }
  return Classifier(std::move(layers));
}

Classifier Classifier::create(int input_dim, int hidden_width, int num_classes, std::uint64_t seed)
{
  Classifier model = zeros(input_dim, hidden_width, num_classes);
  Rng rng(seed);
  for (Layer& layer : model.layers_) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        layer.weights(i, j) = scale * rng.normal();
  }
  return model;
}

ForwardTrace Classifier::trace(const Matrix& x) const
{
  if (x.cols() != input_dim())
    throw ArgumentError(fmt::format("input width {} does not match model input {}", x.cols(), input_dim()));
  ForwardTrace tr;
  tr.activations.push_back(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix pre = tr.activations.back() * layers_[l].weights.transpose();
    pre.rowwise() += layers_[l].bias.transpose();
    if (l + 1 < layers_.size())
      tr.activations.push_back(pre.cwiseMax(0.0));
    tr.pre_activations.push_back(std::move(pre));
  }
  tr.probabilities = tr.pre_activations.back();
  softmax_rows(tr.probabilities);
  return tr;
}

Matrix Classifier::predict_proba(const Matrix& x) const
{
  return trace(x).probabilities;
}

Vector Classifier::forward(const Vector& x) const
{
  return predict_proba(as_row(x)).row(0).transpose();
}

void Classifier::apply_update(const ParamGradient& gradient, double step)
{
  if (gradient.size() != layers_.size())
    throw ArgumentError("gradient layout does not match the classifier");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weights -= step * gradient[l].weights;
    layers_[l].bias -= step * gradient[l].bias;
  }
}

std::size_t Classifier::parameter_count() const noexcept
{
  std::size_t count = 0;
  for (const Layer& layer : layers_)
    count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  return count;
}

Vector batch_losses(const Classifier& model, const Matrix& x, std::span<const int> y)
{
  check_batch(model, x, y);
  const ForwardTrace tr = model.trace(x);
  const Matrix& logits = tr.pre_activations.back();
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out(r) = row_loss(logits.row(r), y[static_cast<std::size_t>(r)]);
  return out;
}

double loss(const Classifier& model, const Vector& x, int y)
{
  return batch_losses(model, as_row(x), std::span<const int>(&y, 1))(0);
}

Matrix batch_grad_input(const Classifier& model, const Matrix& x, std::span<const int> y)
{
  check_batch(model, x, y);
  const ForwardTrace tr = model.trace(x);
  Matrix input;
  backward(model, tr, one_hot_residual(tr.probabilities, y), nullptr, &input);
  return input;
}

Matrix batch_grad_prob_input(const Classifier& model, const Matrix& x, std::span<const int> y)
{
  check_batch(model, x, y);
  const ForwardTrace tr = model.trace(x);
  // d f_y / d z = f_y (e_y - p)
  Matrix delta = -one_hot_residual(tr.probabilities, y);
  for (Eigen::Index r = 0; r < delta.rows(); ++r)
    delta.row(r) *= tr.probabilities(r, y[static_cast<std::size_t>(r)]);
  Matrix input;
  backward(model, tr, std::move(delta), nullptr, &input);
  return input;
}

ParamGradient grad_params(const Classifier& model, const Vector& x, int y)
{
  return mean_loss_and_gradient(model, as_row(x), std::span<const int>(&y, 1)).gradient;
}

Vector grad_input(const Classifier& model, const Vector& x, int y)
{
  return batch_grad_input(model, as_row(x), std::span<const int>(&y, 1)).row(0).transpose();
}

Vector grad_prob_input(const Classifier& model, const Vector& x, int y)
{
  return batch_grad_prob_input(model, as_row(x), std::span<const int>(&y, 1)).row(0).transpose();
}

LossAndGradient mean_loss_and_gradient(const Classifier& model, const Matrix& x, std::span<const int> y)
{
  check_batch(model, x, y);
  if (x.rows() == 0)
    throw ArgumentError("empty batch");
  const ForwardTrace tr = model.trace(x);
  const Matrix& logits = tr.pre_activations.back();
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    total += row_loss(logits.row(r), y[static_cast<std::size_t>(r)]);

  LossAndGradient out;
  const double inv = 1.0 / static_cast<double>(x.rows());
  out.mean_loss = total * inv;
  backward(model, tr, one_hot_residual(tr.probabilities, y) * inv, &out.gradient, nullptr);
  return out;
}

void save_checkpoint(const Classifier& model, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << kCheckpointHeader << '\n';
  out << "layers " << model.layers().size() << '\n';
  for (const Layer& layer : model.layers()) {
    out << fmt::format("layer {} {}\n", layer.weights.rows(), layer.weights.cols());
    for (Eigen::Index i = 0; i < layer.weights.rows(); ++i) {
      std::string line;
      for (Eigen::Index j = 0; j < layer.weights.cols(); ++j)
        line += fmt::format("{}{}", j == 0 ? "" : " ", layer.weights(i, j));
      out << line << '\n';
    }
    std::string line;
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
      line += fmt::format("{}{}", i == 0 ? "" : " ", layer.bias(i));
    out << line << '\n';
  }
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

namespace {

double parse_real(const std::string& token, const std::filesystem::path& path)
{
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size())
    throw FormatError(fmt::format("{}: bad number '{}'", path.string(), token));
  return v;
}

} // namespace

Classifier load_checkpoint(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError(fmt::format("cannot open {}", path.string()));
  std::string header;
  std::getline(in, header);
  if (header != kCheckpointHeader)
    throw FormatError(fmt::format("{}: expected header '{}', found '{}'", path.string(), kCheckpointHeader, header));

  std::string word;
  std::size_t count = 0;
  if (!(in >> word >> count) || word != "layers")
    throw FormatError(fmt::format("{}: missing layer count", path.string()));
  std::vector<Layer> layers;
  for (std::size_t l = 0; l < count; ++l) {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(in >> word >> rows >> cols) || word != "layer" || rows < 1 || cols < 1)
      throw FormatError(fmt::format("{}: bad shape line for layer {}", path.string(), l));
    Layer layer{ Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows) };
    std::string token;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        if (!(in >> token))
          throw IoError(fmt::format("{}: truncated weights in layer {}", path.string(), l));
        layer.weights(i, j) = parse_real(token, path);
      }
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!(in >> token))
        throw IoError(fmt::format("{}: truncated bias in layer {}", path.string(), l));
      layer.bias(i) = parse_real(token, path);
    }
    layers.push_back(std::move(layer));
  }
  return Classifier(std::move(layers));
}

} // namespace advconform
