#pragma once

#include "advconform/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace advconform {

//! Feature matrix, integer labels in [0, K) and the class count K.
//! Immutable after construction; the constructor enforces the invariants.
class LabeledDataset
{
public:
  LabeledDataset(Matrix features, std::vector<int> labels, int num_classes);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
  int num_classes() const noexcept { return num_classes_; }

  const Matrix& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  Vector sample(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)).transpose(); }
  int label(std::size_t i) const { return labels_[i]; }

  //! Rows `idx` gathered into a matrix, in the given order.
  Matrix gather(std::span<const std::size_t> idx) const;
  std::vector<int> gather_labels(std::span<const std::size_t> idx) const;

  //! Copy with rows `idx` replaced by the rows of `replacement` (same order).
  LabeledDataset with_rows(std::span<const std::size_t> idx, const Matrix& replacement) const;

  bool operator==(const LabeledDataset&) const = default;

private:
  Matrix features_;
  std::vector<int> labels_;
  int num_classes_;
};

struct SplitIndices
{
  IndexList train;
  IndexList cal;
  IndexList test;

  bool operator==(const SplitIndices&) const = default;
};

//! Gaussian mixture with unit-variance isotropic noise. Class means sit on a
//! circle (dim == 2) or on the vertices of a regular simplex embedded in the
//! first K coordinates (dim >= K - 1), scaled so adjacent means are
//! `class_separation` apart. Labels are balanced within one sample.
LabeledDataset generate_gaussian_mixture(int num_classes,
                                         int dim,
                                         std::size_t n,
                                         double class_separation,
                                         std::uint64_t seed);

//! The class means used by generate_gaussian_mixture (K x dim).
Matrix mixture_means(int num_classes, int dim, double class_separation);

//! IDX image/label pair (magics 0x803 / 0x801). Pixels are scaled by 1/255.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

//! Writes features (clamped to [0, 1], quantized to bytes) and labels as an
//! IDX pair. Images are written as n x 1 x dim unless `image_shape` gives a
//! rows x cols factorization of dim.
void write_idx(const LabeledDataset& ds,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path,
               std::array<std::uint32_t, 2> image_shape = { 0, 0 });

//! Plain-text dataset: one `label,f0,f1,...` line per sample, preceded by a
//! `# classes=K` line. Reals are written with round-trip precision.
void write_dataset_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset_csv(const std::filesystem::path& path);

//! Uniform random permutation cut into train/cal/test. Each part gets
//! floor(f_i * n) samples; leftovers go to train first, then cal.
SplitIndices split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed);

inline SplitIndices split_dataset(const LabeledDataset& ds,
                                  std::array<double, 3> fractions,
                                  std::uint64_t seed)
{
  return split_dataset(ds.size(), fractions, seed);
}

} // namespace advconform
