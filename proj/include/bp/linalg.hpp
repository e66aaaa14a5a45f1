#pragma once

#include <Eigen/Dense>

namespace bp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Relative threshold on singular values used for every numerical-rank decision.
inline constexpr double kRankTolerance = 1e-10;

// Numerical rank of `m`: singular values above kRankTolerance times the largest.
int numerical_rank(const Matrix& m);

// True when the N x d volatility matrix has rank N.
bool full_row_rank(const Matrix& sigma);

// Minimum-norm least-squares solution of m x = b via the SVD pseudoinverse.
Vector min_norm_solve(const Matrix& m, const Vector& b);

// Orthogonal projection of b onto ker(m'), i.e. the part of b outside range(m).
Vector project_onto_left_kernel(const Matrix& m, const Vector& b);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace bp
