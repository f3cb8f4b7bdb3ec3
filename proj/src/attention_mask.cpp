#include "dlm/attention_mask.hpp"

#include "dlm/error.hpp"

namespace dlm {

BoolGrid build_attention_mask(const AttentionMaskSpec & spec, int seq_len) {
    if (spec.explicit_mask) {
        const BoolGrid & m = *spec.explicit_mask;
        check(m.rows == seq_len && m.cols == seq_len, ErrorKind::config,
              "explicit attention mask shape does not match seq_len");
        return m;
    }

    switch (spec.kind) {
        case MaskKind::full_bidirectional: {
            return BoolGrid(seq_len, seq_len, 1);
        }
        case MaskKind::causal: {
            BoolGrid m(seq_len, seq_len, 0);
            for (int i = 0; i < seq_len; i++) {
                for (int j = 0; j <= i; j++) {
                    m.at(i, j) = 1;
                }
            }
            return m;
        }
        case MaskKind::block_causal: {
            check(spec.block_size > 0, ErrorKind::config, "block_causal: block_size must be positive");
            BoolGrid m(seq_len, seq_len, 0);
            for (int i = 0; i < seq_len; i++) {
                for (int j = 0; j < seq_len; j++) {
                    m.at(i, j) = (j / spec.block_size) <= (i / spec.block_size);
                }
            }
            return m;
        }
        case MaskKind::bd3lm_two_stream: {
            check(spec.block_size > 0, ErrorKind::config, "bd3lm_two_stream: block_size must be positive");
            int      n = 2 * seq_len;
            BoolGrid m(n, n, 0);
            auto     blk = [&](int pos) { return pos / spec.block_size; };
            for (int i = 0; i < n; i++) {
                bool i_clean = i >= seq_len;
                int  bi      = blk(i_clean ? i - seq_len : i);
                for (int j = 0; j < n; j++) {
                    bool j_clean = j >= seq_len;
                    int  bj      = blk(j_clean ? j - seq_len : j);
                    bool visible = false;
                    if (!i_clean && !j_clean) {
                        visible = bi == bj;
                    } else if (!i_clean && j_clean) {
                        visible = bj < bi;
                    } else if (i_clean && j_clean) {
                        visible = bj <= bi;
                    }
                    m.at(i, j) = visible;
                }
            }
            return m;
        }
    }
    fail(ErrorKind::config, "build_attention_mask: unknown mask kind");
}

}  // namespace dlm
