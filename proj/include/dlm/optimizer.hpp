#pragma once

#include <vector>

#include "dlm/backbone.hpp"

namespace dlm {

// Adam with decoupled weight decay. Norm parameters and biases are excluded
// from decay.
class AdamW {
  public:
    AdamW(double beta1, double beta2, double eps, double weight_decay);

    void step(std::vector<NamedTensor<float>> & params, double lr);

    int64_t steps_taken() const { return t_; }

  private:
    double           beta1_, beta2_, eps_, weight_decay_;
    int64_t          t_ = 0;
    std::vector<Mat> m_, v_;
};

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_grad_norm(std::vector<NamedTensor<float>> & params, double max_norm);

}  // namespace dlm
