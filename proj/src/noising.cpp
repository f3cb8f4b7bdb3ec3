#include "dlm/noising.hpp"

#include <algorithm>

#include "dlm/error.hpp"

namespace dlm {

BlockLayout::BlockLayout(int seq_len_, int block_size_) : seq_len(seq_len_), block_size(block_size_) {
    check(block_size > 0, ErrorKind::config, "BlockLayout: block_size must be positive");
    check(seq_len >= 0, ErrorKind::config, "BlockLayout: seq_len must be non-negative");
    num_blocks = (seq_len + block_size - 1) / block_size;
}

std::vector<double> sample_time(int rows, SplitRng & rng, double t_floor) {
    std::vector<double> t(rows);
    for (int r = 0; r < rows; r++) {
        t[r] = rng.uniform(t_floor, 1.0);
    }
    return t;
}

bool position_maskable(const Batch & batch, int row, int col, MaskablePolicy policy) {
    if (policy == MaskablePolicy::loss_eligible_only) {
        return batch.loss_mask.at(row, col) != 0;
    }
    if (batch.attention_mask) {
        return batch.attention_mask->at(row, col) != 0;
    }
    return batch.input_ids.at(row, col) != VocabSpec::pad_id;
}

NoisedBatch forward_mask(const Batch & batch, const std::vector<double> & t, SplitRng & rng, MaskablePolicy policy) {
    check(static_cast<int>(t.size()) == batch.rows(), ErrorKind::config,
          "forward_mask: t vector not aligned to batch rows");

    NoisedBatch nb;
    nb.x_t            = batch.input_ids;
    nb.mask_indicator = BoolGrid(batch.rows(), batch.cols(), 0);
    nb.t              = Grid<double>(batch.rows(), 1, 0.0);
    nb.source         = &batch;

    for (int r = 0; r < batch.rows(); r++) {
        nb.t.at(r, 0) = t[r];
        SplitRng row_rng = rng.split(static_cast<uint64_t>(r));
        for (int c = 0; c < batch.cols(); c++) {
            if (!position_maskable(batch, r, c, policy)) {
                continue;
            }
            if (row_rng.uniform() < t[r]) {
                nb.x_t.at(r, c)            = VocabSpec::mask_id;
                nb.mask_indicator.at(r, c) = 1;
            }
        }
    }
    return nb;
}

NoisedBatch block_forward_mask(const Batch & batch, const BlockLayout & layout, SplitRng & rng, MaskablePolicy policy,
                               bool shared_t) {
    check(layout.seq_len == batch.cols(), ErrorKind::config,
          "block_forward_mask: layout seq_len " + std::to_string(layout.seq_len) + " != batch width " +
              std::to_string(batch.cols()));

    NoisedBatch nb;
    nb.x_t            = batch.input_ids;
    nb.mask_indicator = BoolGrid(batch.rows(), batch.cols(), 0);
    nb.t              = Grid<double>(batch.rows(), layout.num_blocks, 0.0);
    nb.source         = &batch;

    for (int r = 0; r < batch.rows(); r++) {
        SplitRng row_rng  = rng.split(static_cast<uint64_t>(r));
        SplitRng time_rng = row_rng.split("time");
        SplitRng mask_rng = row_rng.split("mask");

        if (shared_t) {
            double shared = time_rng.uniform(kTimeFloor, 1.0);
            for (int k = 0; k < layout.num_blocks; k++) {
                nb.t.at(r, k) = shared;
            }
        } else {
            for (int k = 0; k < layout.num_blocks; k++) {
                nb.t.at(r, k) = time_rng.uniform(kTimeFloor, 1.0);
            }
        }

        for (int c = 0; c < batch.cols(); c++) {
            if (!position_maskable(batch, r, c, policy)) {
                continue;
            }
            if (mask_rng.uniform() < nb.t.at(r, layout.block_of(c))) {
                nb.x_t.at(r, c)            = VocabSpec::mask_id;
                nb.mask_indicator.at(r, c) = 1;
            }
        }
    }
    return nb;
}

}  // namespace dlm
