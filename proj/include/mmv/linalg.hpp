#pragma once

#include <Eigen/Dense>

namespace mmv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace mmv
