#pragma once

#include <complex>

#include <Eigen/Dense>

namespace hybridkoop {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

}  // namespace hybridkoop
