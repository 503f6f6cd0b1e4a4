#pragma once

#include <cstring>

#include "relate3d/autodiff.hpp"

namespace relate3d {

// Exact bit-level equality (distinguishes -0.0 from 0.0, unlike ==).
inline bool bitwise_equal(const nn::Matrix& a, const nn::Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool bitwise_equal(const nn::Parameters& a, const nn::Parameters& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!bitwise_equal(a.layers[i].weight, b.layers[i].weight) ||
        !bitwise_equal(a.layers[i].bias, b.layers[i].bias)) {
      return false;
    }
  }
  return true;
}

inline bool exactly_equal(const Eigen::Matrix<double, 7, 1>& a,
                          const Eigen::Matrix<double, 7, 1>& b) {
  return (a.array() == b.array()).all();
}

}  // namespace relate3d
