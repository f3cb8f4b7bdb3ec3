#pragma once

#include <Eigen/Dense>

namespace dlm {

template <typename S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S> using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Mat = MatX<float>;
using Vec = VecX<float>;
using Row = RowX<float>;

// exact GeLU: x * Phi(x)
template <typename S> inline S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865476)));
}

// d/dx gelu = Phi(x) + x * phi(x)
template <typename S> inline S gelu_grad(S x) {
    S phi = S(0.3989422804014327) * std::exp(S(-0.5) * x * x);
    S Phi = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
    return Phi + x * phi;
}

// In-place row softmax; -inf entries become exact zeros.
template <typename S> inline void softmax_rows(MatX<S> & m) {
    for (Eigen::Index r = 0; r < m.rows(); r++) {
        S mx = m.row(r).maxCoeff();
        S sum = S(0);
        for (Eigen::Index c = 0; c < m.cols(); c++) {
            S e = std::exp(m(r, c) - mx);
            m(r, c) = e;
            sum += e;
        }
        m.row(r) /= sum;
    }
}

}  // namespace dlm
