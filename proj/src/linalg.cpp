#include "bp/linalg.hpp"

#include <cmath>

namespace bp {

int numerical_rank(const Matrix& m) {
    if (m.size() == 0) {
        return 0;
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) {
        return 0;
    }
    int rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > kRankTolerance * s(0)) {
            ++rank;
        }
    }
    return rank;
}

bool full_row_rank(const Matrix& sigma) {
    if (sigma.rows() > sigma.cols()) {
        return false;
    }
    if (sigma.rows() == 1) {
        return sigma.norm() > 0.0;
    }
    return numerical_rank(sigma) == sigma.rows();
}

Vector min_norm_solve(const Matrix& m, const Vector& b) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    Vector x = Vector::Zero(m.cols());
    if (s.size() == 0 || s(0) == 0.0) {
        return x;
    }
    const Vector ub = svd.matrixU().transpose() * b;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > kRankTolerance * s(0)) {
            x += svd.matrixV().col(i) * (ub(i) / s(i));
        }
    }
    return x;
}

Vector project_onto_left_kernel(const Matrix& m, const Vector& b) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU);
    const auto& s = svd.singularValues();
    const Matrix& u = svd.matrixU();
    Vector p = Vector::Zero(b.size());
    const double smax = s.size() > 0 ? s(0) : 0.0;
    for (Eigen::Index i = 0; i < u.cols(); ++i) {
        const bool in_range = i < s.size() && smax > 0.0 && s(i) > kRankTolerance * smax;
        if (!in_range) {
            p += u.col(i) * u.col(i).dot(b);
        }
    }
    return p;
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace bp
