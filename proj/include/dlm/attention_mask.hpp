#pragma once

#include <optional>

#include "dlm/grid.hpp"

namespace dlm {

enum class MaskKind {
    full_bidirectional,
    causal,
    block_causal,
    bd3lm_two_stream,
};

// Declarative attention pattern. For bd3lm_two_stream the mask spans the
// concatenated [noised | clean] streams (2L x 2L).
struct AttentionMaskSpec {
    MaskKind                kind       = MaskKind::full_bidirectional;
    int                     block_size = 0;
    std::optional<BoolGrid> explicit_mask;

    static AttentionMaskSpec full() { return {}; }

    static AttentionMaskSpec causal() { return {MaskKind::causal, 0, {}}; }

    static AttentionMaskSpec block_causal(int block_size) { return {MaskKind::block_causal, block_size, {}}; }

    static AttentionMaskSpec two_stream(int block_size) { return {MaskKind::bd3lm_two_stream, block_size, {}}; }

    static AttentionMaskSpec explicit_grid(BoolGrid mask) {
        AttentionMaskSpec s;
        s.explicit_mask = std::move(mask);
        return s;
    }

    bool is_two_stream() const { return kind == MaskKind::bd3lm_two_stream && !explicit_mask; }
};

// Materializes the [L', L'] visibility matrix (L' = 2L for the two-stream
// kind). Entry (i, j) is true when query i may attend key j:
//   full_bidirectional: always
//   causal:             j <= i
//   block_causal(B):    block(j) <= block(i)
//   bd3lm_two_stream(B) over [noised | clean]:
//       noised->noised  same block
//       noised->clean   block(j) <  block(i)
//       clean ->clean   block(j) <= block(i)
//       clean ->noised  never
BoolGrid build_attention_mask(const AttentionMaskSpec & spec, int seq_len);

}  // namespace dlm
