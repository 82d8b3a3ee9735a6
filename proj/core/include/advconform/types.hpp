#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace advconform {

using Vector = Eigen::VectorXd;
// One sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::vector<std::size_t>;

} // namespace advconform
