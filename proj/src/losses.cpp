#include "dlm/losses.hpp"

#include <cmath>

#include "dlm/error.hpp"

namespace dlm {

namespace {

// log softmax of one row evaluated at target, plus the softmax itself
template <typename S>
double row_cross_entropy(const MatX<S> & logits, Eigen::Index r, int32_t target, RowX<S> & softmax_out) {
    S mx = logits.row(r).maxCoeff();
    softmax_out = (logits.row(r).array() - mx).exp();
    S sum = softmax_out.sum();
    softmax_out /= sum;
    double logprob = static_cast<double>(logits(r, target) - mx) - std::log(static_cast<double>(sum));
    return -logprob;
}

}  // namespace

template <typename S>
LossOutput<S> mdlm_loss(const MatX<S> & logits, const NoisedBatch & noised, const Batch & batch) {
    const int B = batch.rows();
    const int L = batch.cols();
    check(logits.rows() == static_cast<Eigen::Index>(B) * L, ErrorKind::config,
          "mdlm_loss: logits not aligned to the batch");
    check(noised.t.cols == 1, ErrorKind::config, "mdlm_loss: expected one noise level per row");

    LossOutput<S> out;
    out.dlogits = MatX<S>::Zero(logits.rows(), logits.cols());
    out.per_row.assign(B, 0.0);

    int active_rows = 0;
    for (int r = 0; r < B; r++) {
        int n = 0;
        for (int c = 0; c < L; c++) {
            n += batch.loss_mask.at(r, c) != 0;
        }
        if (n > 0) {
            active_rows++;
        }
    }
    if (active_rows == 0) {
        return out;
    }

    RowX<S> sm;
    for (int r = 0; r < B; r++) {
        int n = 0;
        for (int c = 0; c < L; c++) {
            n += batch.loss_mask.at(r, c) != 0;
        }
        if (n == 0) {
            continue;
        }
        double t = noised.t.at(r, 0);
        if (t < kTimeFloor) {
            fail(ErrorKind::numeric, "mdlm_loss: row " + std::to_string(r) + " has t=" + std::to_string(t) +
                                         " below the floor " + std::to_string(kTimeFloor));
        }
        double w = 1.0 / (t * n);
        double row_sum = 0.0;
        for (int c = 0; c < L; c++) {
            if (!batch.loss_mask.at(r, c) || !noised.mask_indicator.at(r, c)) {
                continue;
            }
            int32_t target = batch.labels.at(r, c);
            check(target >= 0 && target < logits.cols(), ErrorKind::data,
                  "mdlm_loss: loss-eligible position carries an invalid label");
            Eigen::Index li = static_cast<Eigen::Index>(r) * L + c;
            row_sum += row_cross_entropy(logits, li, target, sm);
            // d(-log p[target])/dlogits = softmax - onehot
            S g = static_cast<S>(w / active_rows);
            out.dlogits.row(li) += sm * g;
            out.dlogits(li, target) -= g;
            out.masked_tokens++;
        }
        out.per_row[r] = w * row_sum;
        out.loss += out.per_row[r] / active_rows;
    }
    return out;
}

template <typename S>
LossOutput<S> bd3lm_loss(const MatX<S> & logits, const NoisedBatch & noised, const Batch & batch,
                         const BlockLayout & layout) {
    const int B = batch.rows();
    const int L = batch.cols();
    check(layout.seq_len == L, ErrorKind::config,
          "bd3lm_loss: layout seq_len " + std::to_string(layout.seq_len) + " != batch width " + std::to_string(L));
    check(logits.rows() == static_cast<Eigen::Index>(B) * 2 * L, ErrorKind::config,
          "bd3lm_loss: expected two-stream logits of 2L rows per batch row");
    check(noised.t.cols == layout.num_blocks, ErrorKind::config,
          "bd3lm_loss: noise grid does not carry one t per block");

    LossOutput<S> out;
    out.dlogits = MatX<S>::Zero(logits.rows(), logits.cols());
    out.per_row.assign(B, 0.0);

    int active_rows = 0;
    for (int r = 0; r < B; r++) {
        int n = 0;
        for (int c = 0; c < L; c++) {
            n += batch.loss_mask.at(r, c) != 0;
        }
        if (n > 0) {
            active_rows++;
        }
    }
    if (active_rows == 0) {
        return out;
    }

    RowX<S> sm;
    for (int r = 0; r < B; r++) {
        int n = 0;
        for (int c = 0; c < L; c++) {
            n += batch.loss_mask.at(r, c) != 0;
        }
        if (n == 0) {
            continue;
        }
        double row_total = 0.0;
        for (int c = 0; c < L; c++) {
            if (!batch.loss_mask.at(r, c) || !noised.mask_indicator.at(r, c)) {
                continue;
            }
            double t = noised.t.at(r, layout.block_of(c));
            if (t < kTimeFloor) {
                fail(ErrorKind::numeric, "bd3lm_loss: row " + std::to_string(r) + " block " +
                                             std::to_string(layout.block_of(c)) + " has t below the floor");
            }
            double  w      = 1.0 / (t * n);
            int32_t target = batch.labels.at(r, c);
            check(target >= 0 && target < logits.cols(), ErrorKind::data,
                  "bd3lm_loss: loss-eligible position carries an invalid label");
            // noised stream occupies the first L rows of each 2L segment
            Eigen::Index li = static_cast<Eigen::Index>(r) * 2 * L + c;
            row_total += w * row_cross_entropy(logits, li, target, sm);
            S g = static_cast<S>(w / active_rows);
            out.dlogits.row(li) += sm * g;
            out.dlogits(li, target) -= g;
            out.masked_tokens++;
        }
        out.per_row[r] = row_total;
        out.loss += row_total / active_rows;
    }
    return out;
}

TokenGrid concat_streams(const TokenGrid & x_t, const TokenGrid & x_0) {
    check(x_t.rows == x_0.rows && x_t.cols == x_0.cols, ErrorKind::config, "concat_streams: shape mismatch");
    TokenGrid out(x_t.rows, 2 * x_t.cols);
    for (int r = 0; r < x_t.rows; r++) {
        for (int c = 0; c < x_t.cols; c++) {
            out.at(r, c)             = x_t.at(r, c);
            out.at(r, x_t.cols + c)  = x_0.at(r, c);
        }
    }
    return out;
}

BoolGrid duplicate_padding(const BoolGrid & pad) {
    BoolGrid out(pad.rows, 2 * pad.cols);
    for (int r = 0; r < pad.rows; r++) {
        for (int c = 0; c < pad.cols; c++) {
            out.at(r, c)            = pad.at(r, c);
            out.at(r, pad.cols + c) = pad.at(r, c);
        }
    }
    return out;
}

template struct LossOutput<float>;
template struct LossOutput<double>;
template LossOutput<float>  mdlm_loss<float>(const MatX<float> &, const NoisedBatch &, const Batch &);
template LossOutput<double> mdlm_loss<double>(const MatX<double> &, const NoisedBatch &, const Batch &);
template LossOutput<float>  bd3lm_loss<float>(const MatX<float> &, const NoisedBatch &, const Batch &,
                                              const BlockLayout &);
template LossOutput<double> bd3lm_loss<double>(const MatX<double> &, const NoisedBatch &, const Batch &,
                                               const BlockLayout &);

}  // namespace dlm
