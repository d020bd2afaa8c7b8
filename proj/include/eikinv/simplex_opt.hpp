#pragma once

// Local upwind problem on one element face:
//
//   min_{alpha in unit simplex}  <alpha, Phi> + ||A alpha||_2
//
// solved by accelerated proximal gradient (FISTA) where the proximal step of
// the linear term plus the simplex indicator is a shifted Euclidean
// projection onto the simplex.

#include "eikinv/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace eikinv {

/// Value substituted for +inf face-vertex values inside the local solve (ms).
inline constexpr double kUnreachedSentinel = 1e9;

/// Euclidean projection onto {a : <a,1> = 1, a >= 0} by sorting and thresholding.
template <class Derived>
typename Derived::PlainObject project_simplex(const Eigen::MatrixBase<Derived>& v) {
  using Plain = typename Derived::PlainObject;
  const Index n = v.size();
  if (n < 1) throw ArgumentError("project_simplex: empty vector");
  Plain sorted = v;
  std::sort(sorted.data(), sorted.data() + n, std::greater<>());
  double theta = 0.0;
  double running = 0.0;
  for (Index j = 0; j < n; ++j) {
    running += sorted[j];
    const double t = (running - 1.0) / static_cast<double>(j + 1);
    if (sorted[j] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

/// Gradient of h(alpha) = ||A alpha|| : A^T A alpha / ||A alpha||.
template <class MatA, class VecA>
typename VecA::PlainObject grad_h(const Eigen::MatrixBase<MatA>& A,
                                  const Eigen::MatrixBase<VecA>& alpha) {
  const typename VecA::PlainObject Aa = A * alpha;
  const double h = Aa.norm();
  if (h < 1e-14) throw NumericalError("grad_h: ||A alpha|| vanishes (collapsed element)");
  return (A.transpose() * Aa) / h;
}

template <class MatA, class VecA, class VecP>
double local_objective(const Eigen::MatrixBase<MatA>& A, const Eigen::MatrixBase<VecP>& phi,
                       const Eigen::MatrixBase<VecA>& alpha) {
  return alpha.dot(phi) + (A * alpha).norm();
}

enum class Acceleration { fista, none };

template <int Dim>
struct LocalSolutionT {
  Eigen::Matrix<double, Dim, 1> alpha;
  double value = kInf;
  /// Largest weight alpha places on a +inf (sentinel) vertex.
  double sentinel_weight = 0.0;
};

using LocalSolution = LocalSolutionT<Eigen::Dynamic>;

/// alpha_hat_0 = 1/d; repeat n_f times: gradient step on h, shift by Phi/L,
/// simplex projection, momentum with beta_k = (k-1)/(k+1). No early exit.
///
/// Phi is shifted by its smallest finite entry before iterating; the projection
/// is invariant under uniform shifts so the iterates are unchanged, but large
/// activation times no longer swamp the O(edge) gradient terms.
template <int Dim, class MatA, class VecP>
LocalSolutionT<Dim> solve_local_t(const Eigen::MatrixBase<MatA>& A, double L,
                                  const Eigen::MatrixBase<VecP>& phi, int n_f,
                                  Acceleration accel = Acceleration::fista) {
  using Vec = Eigen::Matrix<double, Dim, 1>;
  if (n_f < 1) throw ArgumentError("solve_local: iteration count must be >= 1");
  if (!(L > 0.0)) throw ArgumentError("solve_local: Lipschitz constant must be positive");
  const Index d = phi.size();

  LocalSolutionT<Dim> out;
  double shift = kInf;
  for (Index n = 0; n < d; ++n)
    if (std::isfinite(phi[n])) shift = std::min(shift, phi[n]);
  if (!std::isfinite(shift)) {
    out.alpha = Vec::Constant(d, 1.0 / static_cast<double>(d));
    out.value = kInf;
    out.sentinel_weight = 1.0;
    return out;
  }
  Vec shifted(d);
  for (Index n = 0; n < d; ++n)
    shifted[n] = std::isfinite(phi[n]) ? phi[n] - shift : kUnreachedSentinel;

  const double inv_L = 1.0 / L;
  Vec alpha_hat = Vec::Constant(d, 1.0 / static_cast<double>(d));
  Vec alpha_prev = alpha_hat;
  Vec alpha = alpha_hat;
  for (int k = 1; k <= n_f; ++k) {
    const Vec Aa = A * alpha_hat;
    const double h = Aa.norm();
    const Vec grad = (A.transpose() * Aa) / h;
    const Vec trial = alpha_hat - inv_L * grad - inv_L * shifted;
    alpha = project_simplex(trial);
    if (accel == Acceleration::fista) {
      const double beta = static_cast<double>(k - 1) / static_cast<double>(k + 1);
      alpha_hat = alpha + beta * (alpha - alpha_prev);
    } else {
      alpha_hat = alpha;
    }
    alpha_prev = alpha;
  }

  out.alpha = alpha;
  double lin = 0.0;
  for (Index n = 0; n < d; ++n) {
    if (!std::isfinite(phi[n])) {
      out.sentinel_weight = std::max(out.sentinel_weight, alpha[n]);
      lin += alpha[n] * (shift + kUnreachedSentinel);
    } else {
      lin += alpha[n] * phi[n];
    }
  }
  out.value = lin + (A * alpha).norm();
  return out;
}

inline LocalSolution solve_local(const MatrixXd& A, double L, const VectorXd& phi, int n_f,
                                 Acceleration accel = Acceleration::fista) {
  if (A.rows() != A.cols() || A.rows() != phi.size())
    throw ArgumentError("solve_local: A must be d x d with d = |Phi|");
  return solve_local_t<Eigen::Dynamic>(A, L, phi, n_f, accel);
}

/// Smallest k >= 0 with 2 L diameter^2 / (k+1)^2 <= tol (no clamping).
inline long fista_iteration_bound(double L, double diameter, double tol) {
  if (!(L > 0.0) || !(diameter > 0.0) || !(tol > 0.0))
    throw ArgumentError("fista_iteration_bound: inputs must be positive");
  const auto bound = [&](long k) {
    const double kp1 = static_cast<double>(k + 1);
    return 2.0 * L * diameter * diameter / (kp1 * kp1);
  };
  if (std::isinf(tol)) return 0;
  long k = std::max(0L, static_cast<long>(std::ceil(std::sqrt(2.0 * L / tol) * diameter)) - 1);
  while (bound(k) > tol) ++k;
  while (k > 0 && bound(k - 1) <= tol) --k;
  return k;
}

/// FISTA iteration count from the convergence-rate bound, clamped to [3, 50].
inline int default_iterations(double L, double diameter, double tol) {
  const long k = fista_iteration_bound(L, diameter, tol);
  return static_cast<int>(std::clamp(k, 3L, 50L));
}

}  // namespace eikinv
