#include "dlm/optimizer.hpp"

#include <cmath>

namespace dlm {

AdamW::AdamW(double beta1, double beta2, double eps, double weight_decay)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::step(std::vector<NamedTensor<float>> & params, double lr) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto & p : params) {
            m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
        }
    }
    t_++;
    const float bc1 = 1.0f - static_cast<float>(std::pow(beta1_, t_));
    const float bc2 = 1.0f - static_cast<float>(std::pow(beta2_, t_));
    const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const float eps = static_cast<float>(eps_);

    for (size_t i = 0; i < params.size(); i++) {
        auto & p = params[i];
        m_[i] = b1 * m_[i] + (1.0f - b1) * p.grad;
        v_[i] = b2 * v_[i] + (1.0f - b2) * p.grad.cwiseProduct(p.grad);

        bool decayed = p.value.rows() > 1;  // weight matrices; biases and norm scales are [1, d]
        if (decayed && weight_decay_ > 0.0) {
            p.value -= static_cast<float>(lr * weight_decay_) * p.value;
        }
        Mat mhat = m_[i] / bc1;
        Mat vhat = v_[i] / bc2;
        p.value.array() -= static_cast<float>(lr) * mhat.array() / (vhat.array().sqrt() + eps);
    }
}

double clip_grad_norm(std::vector<NamedTensor<float>> & params, double max_norm) {
    double sq = 0.0;
    for (const auto & p : params) {
        sq += static_cast<double>(p.grad.squaredNorm());
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        float scale = static_cast<float>(max_norm / norm);
        for (auto & p : params) {
            p.grad *= scale;
        }
    }
    return norm;
}

}  // namespace dlm
