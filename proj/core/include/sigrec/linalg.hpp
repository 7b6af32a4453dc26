#pragma once

#include <Eigen/Core>

namespace sigrec {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatXf = MatX<float>;
using MatXd = MatX<double>;
using VecXf = VecX<float>;
using VecXd = VecX<double>;

}  // namespace sigrec
