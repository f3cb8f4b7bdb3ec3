#pragma once

#include <algorithm>
#include <vector>

#include "dlm/batch.hpp"
#include "dlm/rng.hpp"

namespace dlm {

// Noise levels are clamped away from zero so the 1/t loss weight stays
// bounded (at 1000x).
inline constexpr double kTimeFloor = 1e-3;

// Contiguous, non-overlapping blocks covering [0, seq_len).
struct BlockLayout {
    int seq_len    = 0;
    int block_size = 0;
    int num_blocks = 0;

    BlockLayout(int seq_len, int block_size);

    int block_of(int i) const { return i / block_size; }

    int block_begin(int k) const { return k * block_size; }

    int block_end(int k) const { return std::min(seq_len, (k + 1) * block_size); }
};

enum class MaskablePolicy {
    all_non_pad,         // pretraining
    loss_eligible_only,  // SFT: the prompt is conditioning, never corrupted
};

// Corrupted view of a Batch. t is [rows, num_blocks] (one column for the
// whole-sequence case).
struct NoisedBatch {
    TokenGrid    x_t;
    BoolGrid     mask_indicator;
    Grid<double> t;
    const Batch * source = nullptr;
};

// rows independent draws from U[t_floor, 1].
std::vector<double> sample_time(int rows, SplitRng & rng, double t_floor = kTimeFloor);

// Each maskable position is independently replaced by mask_id with its
// row's probability t. Callers may pass t values below the floor (test
// hook); sample_time never produces them.
NoisedBatch forward_mask(const Batch & batch, const std::vector<double> & t, SplitRng & rng, MaskablePolicy policy);

// Independent t_k per (row, block); shared_t reuses one draw per row across
// blocks (ablation mode).
NoisedBatch block_forward_mask(const Batch & batch, const BlockLayout & layout, SplitRng & rng, MaskablePolicy policy,
                               bool shared_t = false);

// True where the policy allows corruption.
bool position_maskable(const Batch & batch, int row, int col, MaskablePolicy policy);

}  // namespace dlm
