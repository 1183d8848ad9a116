#pragma once

// Products against spike matrices. With the Heaviside spike function every
// entry of z is exactly 0 or 1, so only active columns need to be touched.

#include <Eigen/Dense>

namespace brf {

/// out += w * z
inline void add_product(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z, Eigen::MatrixXd& out, bool dense) {
    if (dense) {
        out.noalias() += w * z;
        return;
    }
    for (Eigen::Index b = 0; b < z.cols(); ++b) {
        const double* zc = z.col(b).data();
        auto oc = out.col(b);
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            if (zc[j] != 0.0) oc += w.col(j);
        }
    }
}

/// grad += adjoint * z^T
inline void add_outer(const Eigen::MatrixXd& adjoint, const Eigen::MatrixXd& z, Eigen::MatrixXd& grad, bool dense) {
    if (dense) {
        grad.noalias() += adjoint * z.transpose();
        return;
    }
    for (Eigen::Index b = 0; b < z.cols(); ++b) {
        const double* zc = z.col(b).data();
        const auto ac = adjoint.col(b);
        for (Eigen::Index j = 0; j < z.rows(); ++j) {
            if (zc[j] != 0.0) grad.col(j) += ac;
        }
    }
}

}  // namespace brf
