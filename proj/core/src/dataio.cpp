#include "advconform/dataio.hpp"

#include "advconform/errors.hpp"
#include "advconform/random.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace advconform {

LabeledDataset::LabeledDataset(Matrix features, std::vector<int> labels, int num_classes)
  : features_(std::move(features))
  , labels_(std::move(labels))
  , num_classes_(num_classes)
{
  if (num_classes_ < 2)
    throw ArgumentError(fmt::format("num_classes must be >= 2, got {}", num_classes_));
  if (labels_.empty())
    throw ArgumentError("dataset must contain at least one sample");
  if (static_cast<std::size_t>(features_.rows()) != labels_.size())
    throw ArgumentError(fmt::format("{} feature rows but {} labels", features_.rows(), labels_.size()));
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes_)
      throw ArgumentError(fmt::format("label {} at sample {} outside [0, {})", labels_[i], i, num_classes_));
  }
}

Matrix LabeledDataset::gather(std::span<const std::size_t> idx) const
{
  Matrix out(static_cast<Eigen::Index>(idx.size()), features_.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size())
      throw ArgumentError(fmt::format("index {} out of range for {} samples", idx[r], size()));
    out.row(static_cast<Eigen::Index>(r)) = features_.row(static_cast<Eigen::Index>(idx[r]));
  }
  return out;
}

std::vector<int> LabeledDataset::gather_labels(std::span<const std::size_t> idx) const
{
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    if (i >= size())
      throw ArgumentError(fmt::format("index {} out of range for {} samples", i, size()));
    out.push_back(labels_[i]);
  }
  return out;
}

LabeledDataset LabeledDataset::with_rows(std::span<const std::size_t> idx, const Matrix& replacement) const
{
  if (static_cast<std::size_t>(replacement.rows()) != idx.size() || replacement.cols() != features_.cols())
    throw ArgumentError("replacement block does not match the selected rows");
  Matrix features = features_;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size())
      throw ArgumentError(fmt::format("index {} out of range for {} samples", idx[r], size()));
    features.row(static_cast<Eigen::Index>(idx[r])) = replacement.row(static_cast<Eigen::Index>(r));
  }
  return LabeledDataset(std::move(features), labels_, num_classes_);
}

Matrix mixture_means(int num_classes, int dim, double class_separation)
{
  const Eigen::Index k = num_classes;
  Matrix means = Matrix::Zero(k, dim);
  if (dim == 2 && num_classes > 2) {
    const double radius = class_separation / (2.0 * std::sin(std::numbers::pi / num_classes));
    for (Eigen::Index c = 0; c < k; ++c) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / num_classes;
      means(c, 0) = radius * std::cos(angle);
      means(c, 1) = radius * std::sin(angle);
    }
    return means;
  }
  if (dim >= num_classes - 1) {
    // centered standard simplex: pairwise distance sqrt(2) before scaling
    Eigen::MatrixXd simplex = Eigen::MatrixXd::Identity(k, k);
    simplex.rowwise() -= simplex.colwise().mean();
    simplex *= class_separation / std::sqrt(2.0);
    if (dim >= num_classes) {
      means.leftCols(k) = simplex;
    } else {
      // express the (K-1)-dimensional affine hull in an orthonormal basis
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(simplex.transpose());
      Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(k, k - 1);
      means = simplex * basis;
    }
    return means;
  }
  for (Eigen::Index c = 0; c < k; ++c)
    means(c, 0) = class_separation * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
  return means;
}

LabeledDataset generate_gaussian_mixture(int num_classes,
                                         int dim,
                                         std::size_t n,
                                         double class_separation,
                                         std::uint64_t seed)
{
  if (num_classes < 2)
    throw ArgumentError("num_classes must be >= 2");
  if (dim < 1)
    throw ArgumentError("dim must be >= 1");
  if (n < static_cast<std::size_t>(num_classes))
    throw ArgumentError(fmt::format("n = {} is smaller than num_classes = {}", n, num_classes));
  if (!(class_separation > 0.0) || !std::isfinite(class_separation))
    throw ArgumentError("class_separation must be positive and finite");

  const Matrix means = mixture_means(num_classes, dim, class_separation);
  Rng rng(seed);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i)
    labels[i] = static_cast<int>(i % static_cast<std::size_t>(num_classes));
  rng.shuffle(labels);

  Matrix features(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < dim; ++j)
      features(r, j) = means(labels[i], j) + rng.normal();
  }
  return LabeledDataset(std::move(features), std::move(labels), num_classes);
}

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic = 0x00000803;

std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(fmt::format("cannot open {}", path.string()));
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

class ByteReader
{
public:
  ByteReader(const std::vector<unsigned char>& bytes, const std::filesystem::path& path)
    : bytes_(bytes)
    , path_(path)
  {
  }

  std::uint32_t u32()
  {
    require(4);
    std::uint32_t v = (std::uint32_t{ bytes_[pos_] } << 24) | (std::uint32_t{ bytes_[pos_ + 1] } << 16) |
                      (std::uint32_t{ bytes_[pos_ + 2] } << 8) | std::uint32_t{ bytes_[pos_ + 3] };
    pos_ += 4;
    return v;
  }

  const unsigned char* take(std::size_t count)
  {
    require(count);
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += count;
    return p;
  }

private:
  void require(std::size_t count) const
  {
    if (bytes_.size() - pos_ < count)
      throw IoError(fmt::format("{} is truncated: needed {} more bytes at offset {}", path_.string(), count, pos_));
  }

  const std::vector<unsigned char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v)
{
  const char b[4] = { static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                      static_cast<char>(v) };
  out.write(b, 4);
}

} // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
  const auto label_bytes = read_file(labels_path);
  ByteReader labels_in(label_bytes, labels_path);
  const std::uint32_t label_magic = labels_in.u32();
  if (label_magic != kLabelMagic)
    throw FormatError(fmt::format("{}: label magic 0x{:08x}, expected 0x{:08x}", labels_path.string(), label_magic,
                                  kLabelMagic));
  const std::uint32_t label_count = labels_in.u32();

  const auto image_bytes = read_file(images_path);
  ByteReader images_in(image_bytes, images_path);
  const std::uint32_t image_magic = images_in.u32();
  if (image_magic != kImageMagic)
    throw FormatError(fmt::format("{}: image magic 0x{:08x}, expected 0x{:08x}", images_path.string(), image_magic,
                                  kImageMagic));
  const std::uint32_t image_count = images_in.u32();
  const std::uint32_t rows = images_in.u32();
  const std::uint32_t cols = images_in.u32();

  if (image_count != label_count)
    throw ConsistencyError(fmt::format("{} images but {} labels", image_count, label_count));
  if (image_count == 0)
    throw FormatError("IDX files contain no samples");

  const unsigned char* label_payload = labels_in.take(label_count);
  std::vector<int> labels(label_payload, label_payload + label_count);
  const int num_classes = std::max(2, *std::max_element(labels.begin(), labels.end()) + 1);

  const std::size_t width = std::size_t{ rows } * cols;
  const unsigned char* pixels = images_in.take(std::size_t{ image_count } * width);
  Matrix features(static_cast<Eigen::Index>(image_count), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < image_count; ++i)
    for (std::size_t j = 0; j < width; ++j)
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = pixels[i * width + j] / 255.0;

  return LabeledDataset(std::move(features), std::move(labels), num_classes);
}

void write_idx(const LabeledDataset& ds,
               const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path,
               std::array<std::uint32_t, 2> image_shape)
{
  if (ds.num_classes() > 256)
    throw ArgumentError("IDX labels are single bytes; at most 256 classes");
  std::uint32_t rows = image_shape[0];
  std::uint32_t cols = image_shape[1];
  if (rows == 0 && cols == 0) {
    rows = 1;
    cols = static_cast<std::uint32_t>(ds.dim());
  }
  if (std::size_t{ rows } * cols != ds.dim())
    throw ArgumentError(fmt::format("image shape {}x{} does not match dim {}", rows, cols, ds.dim()));

  std::ofstream images(images_path, std::ios::binary);
  std::ofstream labels(labels_path, std::ios::binary);
  if (!images)
    throw IoError(fmt::format("cannot write {}", images_path.string()));
  if (!labels)
    throw IoError(fmt::format("cannot write {}", labels_path.string()));

  const auto n = static_cast<std::uint32_t>(ds.size());
  put_u32(images, kImageMagic);
  put_u32(images, n);
  put_u32(images, rows);
  put_u32(images, cols);
  std::vector<char> row(ds.dim());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      const double v = std::clamp(ds.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), 0.0, 1.0);
      row[j] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    images.write(row.data(), static_cast<std::streamsize>(row.size()));
  }

  put_u32(labels, kLabelMagic);
  put_u32(labels, n);
  for (int y : ds.labels()) {
    const char b = static_cast<char>(static_cast<unsigned char>(y));
    labels.write(&b, 1);
  }
  if (!images || !labels)
    throw IoError("failed writing IDX files");
}

void write_dataset_csv(const LabeledDataset& ds, const std::filesystem::path& path)
{
  std::ofstream out(path);
  if (!out)
    throw IoError(fmt::format("cannot write {}", path.string()));
  out << fmt::format("# classes={}\n", ds.num_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::string line = fmt::format("{}", ds.label(i));
    for (std::size_t j = 0; j < ds.dim(); ++j)
      line += fmt::format(",{}", ds.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << line << '\n';
  }
  if (!out)
    throw IoError(fmt::format("failed writing {}", path.string()));
}

LabeledDataset load_dataset_csv(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line) || line.rfind("# classes=", 0) != 0)
    throw FormatError(fmt::format("{}: missing '# classes=K' header", path.string()));
  const int num_classes = std::stoi(line.substr(10));

  std::vector<int> labels;
  std::vector<double> values;
  std::size_t width = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(std::stoi(cell));
    std::size_t count = 0;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw FormatError(fmt::format("{}:{}: bad value '{}'", path.string(), line_no, cell));
      values.push_back(v);
      ++count;
    }
    if (labels.size() == 1)
      width = count;
    else if (count != width)
      throw FormatError(fmt::format("{}:{}: expected {} features, found {}", path.string(), line_no, width, count));
  }
  if (labels.empty() || width == 0)
    throw FormatError(fmt::format("{}: no samples", path.string()));
  Matrix features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(labels.size()),
                                       static_cast<Eigen::Index>(width));
  return LabeledDataset(std::move(features), std::move(labels), num_classes);
}

SplitIndices split_dataset(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed)
{
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0))
      throw ArgumentError("split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw ArgumentError(fmt::format("split fractions sum to {}, expected 1", total));

  std::array<std::size_t, 3> sizes{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    sizes[i] = static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(n) + 1e-9));
    assigned += sizes[i];
  }
  // at most two samples are left over by the floors
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 2, ++assigned)
    ++sizes[i];

  IndexList perm(n);
  for (std::size_t i = 0; i < n; ++i)
    perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);

  SplitIndices split;
  auto first = perm.begin();
  split.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  split.cal.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(first, perm.end());
  return split;
}

} // namespace advconform
