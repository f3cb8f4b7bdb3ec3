#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dlm/attention_mask.hpp"
#include "dlm/grid.hpp"
#include "dlm/rng.hpp"
#include "dlm/tensor.hpp"
#include "dlm/vocab.hpp"

namespace dlm {

struct BackboneConfig {
    int32_t vocab_size  = VocabSpec::vocab_size;
    int32_t d_model     = 256;
    int32_t n_layers    = 6;
    int32_t n_heads     = 8;
    int32_t d_ff        = 1024;
    int32_t max_seq_len = 1024;
    float   rope_base   = 10000.0f;
    // Reads logits for position i from hidden position i-1 (position 0 keeps
    // its own output). Lets a next-token-trained model act as a denoiser.
    bool right_shift_logits = false;

    void validate() const;

    int head_dim() const { return d_model / n_heads; }

    // CPU-friendly default used by the training recipes.
    static BackboneConfig desk_scale() { return {}; }

    static BackboneConfig tiny() {
        BackboneConfig c;
        c.d_model     = 8;
        c.n_layers    = 1;
        c.n_heads     = 2;
        c.d_ff        = 16;
        c.max_seq_len = 64;
        return c;
    }

    bool operator==(const BackboneConfig &) const = default;
};

template <typename S> struct NamedTensor {
    std::string name;
    MatX<S>     value;
    MatX<S>     grad;
};

// Per-layer key/value rows for a prefix of absolute positions (RoPE already
// applied to k). Exact caches carry the token ids they were computed from;
// approximate caches are explicitly tagged and skip content validation.
template <typename S> struct KVCacheT {
    struct Layer {
        MatX<S> k, v;  // [capacity, d_model]
    };

    std::vector<Layer>   layers;
    int                  len = 0;  // valid rows
    std::vector<int32_t> tag_tokens;
    bool                 approximate = false;

    int capacity() const { return layers.empty() ? 0 : static_cast<int>(layers[0].k.rows()); }
};

using KVCache = KVCacheT<float>;

// Visibility of freshly appended cache rows during extend_cache.
enum class CacheExtend {
    prefix_plus_self,      // row sees [0, end): all prior positions and its own chunk
    block_causal_anchored  // row at pos p sees j with block(j) <= block(p), grid anchored at 0
};

// Inference surface shared by samplers and the evaluator; lets tests swap in
// fixture models with hand-built logits.
class Denoiser {
  public:
    virtual ~Denoiser() = default;

    virtual const BackboneConfig & config() const = 0;

    // tokens [B, L] -> logits [B*L', vocab] (L' = 2L for the two-stream mask)
    virtual Mat logits(const TokenGrid & tokens, const AttentionMaskSpec & spec,
                       const BoolGrid * key_padding = nullptr) = 0;
};

// Pre-norm transformer denoiser: rotary positions, GeLU feed-forward, untied
// output head. Templated on scalar so gradient checks can run in double.
template <typename S> class BackboneT : public Denoiser {
  public:
    explicit BackboneT(BackboneConfig cfg);
    ~BackboneT() override;

    BackboneT(const BackboneT &)             = delete;
    BackboneT & operator=(const BackboneT &) = delete;
    BackboneT(BackboneT &&) noexcept;
    BackboneT & operator=(BackboneT &&) noexcept;

    const BackboneConfig & config() const override { return cfg_; }

    void init_parameters(SplitRng rng);

    // Full forward. record=true tapes activations for backward().
    MatX<S> forward(const TokenGrid & tokens, const AttentionMaskSpec & spec, const BoolGrid * key_padding = nullptr,
                    bool record = false);

    Mat logits(const TokenGrid & tokens, const AttentionMaskSpec & spec,
               const BoolGrid * key_padding = nullptr) override;

    // Accumulates parameter gradients from dL/dlogits of the last recorded
    // forward. Requires a taped forward.
    void backward(const MatX<S> & dlogits);

    std::vector<NamedTensor<S>> &       parameters() { return params_; }
    const std::vector<NamedTensor<S>> & parameters() const { return params_; }

    void    zero_grads();
    int64_t parameter_count() const;

    // token-positions pushed through the stack so far (instrumentation)
    int64_t forward_positions() const { return forward_positions_; }

    // --- incremental inference ---

    KVCacheT<S> make_cache(int capacity) const;

    // Computes K/V for tokens at absolute positions [cache.len, cache.len+n)
    // and appends them. block_size only matters for block_causal_anchored.
    void extend_cache(KVCacheT<S> & cache, std::span<const int32_t> tokens, CacheExtend mode, int block_size = 0);

    // Full forward that also (re)fills cache rows [0, B*L). Single-row
    // batches only.
    MatX<S> forward_capture(KVCacheT<S> & cache, const TokenGrid & tokens, const AttentionMaskSpec & spec);

    // Logits for the block rows [block_begin, block_begin+n) attending
    // columns [0, attend_len), where the block's own K/V are recomputed from
    // block_tokens and every other column reads the cache. full_row is the
    // caller's current sequence, used to validate exact caches.
    MatX<S> forward_block(KVCacheT<S> & cache, std::span<const int32_t> full_row, int block_begin, int block_len,
                          int attend_len);

  private:
    struct Tape;

    MatX<S> &       param(int idx) { return params_[idx].value; }
    const MatX<S> & param(int idx) const { return params_[idx].value; }
    MatX<S> &       grad(int idx) { return params_[idx].grad; }

    int  add_param(const std::string & name, int rows, int cols);
    void build_params();

    void rope_apply(MatX<S> & x, std::span<const int> positions, bool inverse) const;

    // shared worker for extend_cache / forward_block
    MatX<S> run_rows(KVCacheT<S> & cache, std::span<const int32_t> row_tokens, int row_begin, int attend_len,
                     CacheExtend mode, int block_size, bool store, bool want_logits);

    void validate_cache(const KVCacheT<S> & cache, std::span<const int32_t> full_row, int skip_begin, int skip_end,
                        int attend_len) const;

    BackboneConfig              cfg_;
    std::vector<NamedTensor<S>> params_;

    // parameter indices
    struct LayerIdx {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        int ln2_g, ln2_b, w1, b1, w2, b2;
    };

    std::vector<LayerIdx> layer_idx_;
    int                   embed_idx_ = -1, lnf_g_idx_ = -1, lnf_b_idx_ = -1, head_w_idx_ = -1, head_b_idx_ = -1;

    // rope tables (constants, not parameters)
    MatX<S> rope_cos_, rope_sin_;  // [max_seq_len, head_dim/2]

    std::unique_ptr<Tape> tape_;
    KVCacheT<S> *         capture_request_   = nullptr;
    int64_t               forward_positions_ = 0;
};

using Backbone = BackboneT<float>;

extern template class BackboneT<float>;
extern template class BackboneT<double>;

}  // namespace dlm
