#pragma once

#include "advconform/attack.hpp"
#include "advconform/model.hpp"
#include "advconform/random.hpp"
#include "advconform/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace testsupport {

using advconform::Classifier;
using advconform::Layer;
using advconform::Matrix;
using advconform::Rng;
using advconform::Vector;

inline Vector random_vector(Rng& rng, int n, double scale = 1.0)
{
  Vector v(n);
  for (int i = 0; i < n; ++i)
    v(i) = scale * rng.normal();
  return v;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale = 1.0)
{
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = scale * rng.normal();
  return m;
}

inline int random_int(Rng& rng, int lo, int hi)
{
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

//! Random network with 0 or 1 hidden layers and random biases.
inline Classifier random_classifier(Rng& rng, int in, int hidden, int k, double scale = 1.0)
{
  std::vector<Layer> layers;
  int prev = in;
  if (hidden > 0) {
    layers.push_back(Layer{ random_matrix(rng, hidden, in, scale), random_vector(rng, hidden, scale) });
    prev = hidden;
  }
  layers.push_back(Layer{ random_matrix(rng, k, prev, scale), random_vector(rng, k, scale) });
  return Classifier(std::move(layers));
}

inline Classifier linear_classifier(const Eigen::MatrixXd& w, const Eigen::VectorXd& b)
{
  return Classifier({ Layer{ w, b } });
}

//! Softmax computed independently of the library, in long double.
inline std::vector<long double> softmax_ld(const std::vector<long double>& z)
{
  long double m = z[0];
  for (long double v : z)
    m = std::max(m, v);
  long double total = 0.0L;
  std::vector<long double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    total += p[i];
  }
  for (long double& v : p)
    v /= total;
  return p;
}

//! Reference forward pass written directly from the layer definitions.
inline std::vector<long double> reference_probs(const Classifier& model, const Vector& x)
{
  std::vector<long double> a(x.data(), x.data() + x.size());
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weights;
    std::vector<long double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      long double s = layers[l].bias(r);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        s += static_cast<long double>(w(r, c)) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = s;
    }
    if (l + 1 < layers.size())
      for (long double& v : z)
        v = v > 0.0L ? v : 0.0L;
    a = std::move(z);
  }
  return softmax_ld(a);
}

inline double reference_loss(const Classifier& model, const Vector& x, int y)
{
  return static_cast<double>(-std::log(reference_probs(model, x)[static_cast<std::size_t>(y)]));
}

inline double reference_prob(const Classifier& model, const Vector& x, int y)
{
  return static_cast<double>(reference_probs(model, x)[static_cast<std::size_t>(y)]);
}

//! Central finite differences of f at x with step h.
template<typename F>
Vector fd_gradient(F&& f, const Vector& x, double h = 1e-5)
{
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x;
    Vector xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

//! Relative error with an absolute floor, so that tiny gradients compare sensibly.
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-6)
{
  return (a - b).norm() / std::max({ a.norm(), b.norm(), floor });
}

//! Flattened parameter vector and its inverse, used for finite differences.
inline Vector flatten(const std::vector<Layer>& layers)
{
  std::vector<double> out;
  for (const Layer& l : layers) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
        out.push_back(l.weights(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r)
      out.push_back(l.bias(r));
  }
  return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline std::vector<Layer> unflatten(const Vector& theta, std::vector<Layer> shape)
{
  Eigen::Index k = 0;
  for (Layer& l : shape) {
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c)
        l.weights(r, c) = theta(k++);
    for (Eigen::Index r = 0; r < l.bias.size(); ++r)
      l.bias(r) = theta(k++);
  }
  return shape;
}

//! Random attack input with heavy-tailed magnitudes, occasional zero
//! gradient coordinates and occasional all-zero gradients.
struct AttackCase
{
  Vector x;
  Vector grad;
  advconform::AttackSpec spec;
};

inline AttackCase random_case(Rng& rng)
{
  const int n = random_int(rng, 1, 40);
  const double x_scale = std::pow(10.0, random_int(rng, -3, 6));
  const double g_scale = std::pow(10.0, random_int(rng, -8, 8));
  Vector x = random_vector(rng, n, x_scale);
  Vector g = random_vector(rng, n, g_scale);
  for (int i = 0; i < n; ++i)
    if (rng.below(5) == 0)
      g(i) = 0.0;
  if (rng.below(20) == 0)
    g.setZero();
  advconform::AttackSpec spec;
  spec.norm = rng.below(2) == 0 ? advconform::Norm::linf : advconform::Norm::l2;
  switch (rng.below(4)) {
    case 0:
      spec.epsilon = static_cast<double>(rng.below(256)) / 255.0;
      break;
    case 1:
      spec.epsilon = rng.uniform() * 1e-6;
      break;
    case 2:
      spec.epsilon = rng.uniform() * 100.0;
      break;
    default:
      spec.epsilon = rng.uniform();
  }
  return { std::move(x), std::move(g), spec };
}

//! Smallest score s with (#scores <= s) / n >= (1000 - a)(n + 1) / (1000 n), by exhaustive
//! scan in integer arithmetic; +inf when no score qualifies.
inline double brute_force_quantile(std::span<const double> scores, int alpha_per_mille)
{
  const auto n = static_cast<long long>(scores.size());
  double best = std::numeric_limits<double>::infinity();
  for (double s : scores) {
    long long at_most = 0;
    for (double t : scores)
      at_most += t <= s ? 1 : 0;
    if (1000 * at_most >= (1000 - alpha_per_mille) * (n + 1) && s < best)
      best = s;
  }
  return best;
}

//! Scratch directory removed on destruction.
class TempDir
{
public:
  explicit TempDir(const std::string& tag)
  {
    Rng rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() / ("advconform-" + tag + "-" + std::to_string(rng.next()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes)
{
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void append_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

inline std::string read_all(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace testsupport
