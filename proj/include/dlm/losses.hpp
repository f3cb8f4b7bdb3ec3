#pragma once

#include <vector>

#include "dlm/grid.hpp"
#include "dlm/noising.hpp"
#include "dlm/tensor.hpp"

namespace dlm {

template <typename S> struct LossOutput {
    double               loss = 0.0;
    MatX<S>              dlogits;        // d(loss)/d(logits), same shape as logits
    std::vector<double>  per_row;        // per-row weighted loss
    int64_t              masked_tokens = 0;
};

// Masked-diffusion objective. logits is [B*L, V] aligned to noised.x_t.
// Per row: (1 / (t * n)) * sum over masked loss-eligible positions of the
// clean-token cross entropy, with n the row's loss-eligible count; the batch
// value averages rows that have any loss-eligible positions.
template <typename S>
LossOutput<S> mdlm_loss(const MatX<S> & logits, const NoisedBatch & noised, const Batch & batch);

// Block-diffusion objective over two-stream logits [B*2L, V] ([x_t ; x_0]
// rows). The loss reads the noised stream only; each block carries its own
// 1/t_k weight.
template <typename S>
LossOutput<S> bd3lm_loss(const MatX<S> & logits, const NoisedBatch & noised, const Batch & batch,
                         const BlockLayout & layout);

// [x_t ; x_0] concatenation for the two-stream forward.
TokenGrid concat_streams(const TokenGrid & x_t, const TokenGrid & x_0);

// Duplicates a [B, L] padding mask to [B, 2L] for two-stream attention.
BoolGrid duplicate_padding(const BoolGrid & pad);

extern template struct LossOutput<float>;
extern template struct LossOutput<double>;
extern template LossOutput<float>  mdlm_loss<float>(const MatX<float> &, const NoisedBatch &, const Batch &);
extern template LossOutput<double> mdlm_loss<double>(const MatX<double> &, const NoisedBatch &, const Batch &);
extern template LossOutput<float>  bd3lm_loss<float>(const MatX<float> &, const NoisedBatch &, const Batch &,
                                                     const BlockLayout &);
extern template LossOutput<double> bd3lm_loss<double>(const MatX<double> &, const NoisedBatch &, const Batch &,
                                                      const BlockLayout &);

}  // namespace dlm
