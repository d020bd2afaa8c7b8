#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace eikinv {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Index = std::ptrdiff_t;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Base class of everything the library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable input files.
class ParseError : public Error {
public:
  using Error::Error;
};

/// Files that cannot be opened or written.
class IoError : public Error {
public:
  using Error::Error;
};

/// Mesh or model data that violates a structural invariant.
class MeshError : public Error {
public:
  using Error::Error;
};

/// Numerical failure: non-convergence, NaN, singular systems.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Invalid arguments passed to an operation.
class ArgumentError : public Error {
public:
  using Error::Error;
};

/// Number of stored entries of a symmetric d x d tensor (upper triangle).
constexpr int sym_size(int d) { return d * (d + 1) / 2; }

/// Unpacks row-major upper-triangular entries into a full symmetric matrix.
inline MatrixXd unpack_symmetric(const std::vector<double>& upper, int d) {
  if (static_cast<int>(upper.size()) != sym_size(d))
    throw ArgumentError("symmetric tensor needs " + std::to_string(sym_size(d)) +
                        " entries, got " + std::to_string(upper.size()));
  MatrixXd m(d, d);
  int k = 0;
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c) {
      m(r, c) = upper[k];
      m(c, r) = upper[k];
      ++k;
    }
  return m;
}

inline std::vector<double> pack_symmetric(const MatrixXd& m) {
  const auto d = static_cast<int>(m.rows());
  std::vector<double> out;
  out.reserve(sym_size(d));
  for (int r = 0; r < d; ++r)
    for (int c = r; c < d; ++c) out.push_back(m(r, c));
  return out;
}

/// ||x||_D = sqrt(<D x, x>)
inline double metric_norm(const MatrixXd& D, const VectorXd& x) {
  return std::sqrt(x.dot(D * x));
}

}  // namespace eikinv
