#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>

#include "handmim/error.hpp"

namespace handmim {

// All dense numeric state in the library is double precision, row-major.
// Row-major keeps reshapes between [h*w, c] feature maps and flat parameter
// vectors trivially copy-free in index arithmetic, and makes the serialized
// byte layout of the container format equal to the in-memory layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

// Row-major reshape; total element count must match.
inline Mat reshape_rm(const Mat& m, int rows, int cols) {
  HM_CHECK(static_cast<long long>(rows) * cols == static_cast<long long>(m.rows()) * m.cols(),
           InvariantError,
           "reshape size mismatch: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
               " -> " + std::to_string(rows) + "x" + std::to_string(cols));
  return Eigen::Map<const Mat>(m.data(), rows, cols);
}

// Numerically shifted rowwise softmax; rows sum to 1.
inline Mat softmax_rows_val(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

// Shannon entropy (nats) of one probability row; tolerates exact zeros.
inline double entropy_row(const Mat& p, int row) {
  double h = 0.0;
  for (int c = 0; c < p.cols(); ++c) {
    double v = p(row, c);
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

// FNV-1a over the raw bytes. Used by tests to assert bit-identity of
// parameter blocks without storing full copies.
inline std::uint64_t hash_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t hash_mat(const Mat& m) {
  return hash_bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

}  // namespace handmim
