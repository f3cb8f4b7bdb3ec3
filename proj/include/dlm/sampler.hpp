#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dlm/backbone.hpp"
#include "dlm/checkpoint.hpp"
#include "dlm/rng.hpp"

namespace dlm {

struct SamplerConfig {
    int      max_new_tokens       = 64;
    int      steps                = 64;
    double   temperature          = 0.0;
    double   top_p                = 1.0;
    double   cfg_scale            = 0.0;
    int      min_new_tokens       = 0;    // EOS suppressed below this offset
    int      tokens_per_step      = 1;    // >1 overrides the even-split schedule
    double   confidence_threshold = 1.0;  // tau for parallel decoding
    int      cache_block_size     = 32;
    bool     cache_enabled        = true;
    bool     parallel_enabled     = true;
    uint64_t seed                 = 0;

    void validate() const;
};

struct DecodeStep {
    std::vector<int32_t> positions;  // window-relative, each finalized exactly once
    std::vector<int32_t> tokens;
    std::vector<double>  confidences;
    int32_t              masked_remaining = 0;
};

struct DecodeHistory {
    std::vector<int32_t>    prompt;
    int32_t                 window = 0;  // generated region length
    std::vector<DecodeStep> steps;
};

// Structured error on malformed histories (double finalization, positions
// outside the window, inconsistent remaining counts).
void validate_history(const DecodeHistory & history);

// Applies the steps over an all-masked window; the result is the generated
// region the history describes.
std::vector<int32_t> replay_history(const DecodeHistory & history);

struct SampleResult {
    std::vector<int32_t> tokens;  // prompt ++ generated window
    DecodeHistory        history;
};

class Sampler {
  public:
    virtual ~Sampler() = default;

    virtual SampleResult sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) = 0;
};

// CFG + EOS suppression on raw logits: l = cond + scale * (cond - uncond),
// then the EOS column is forced to -inf when suppress_eos is set.
Row adjust_logits(const Row & cond, const Row * uncond, double cfg_scale, bool suppress_eos);

// temperature == 0 picks the argmax (ties to the lowest index) with the
// plain softmax probability as confidence; otherwise samples from the
// nucleus-filtered tempered softmax and reports the renormalized probability
// of the chosen token.
std::pair<int32_t, double> pick_token(const Row & adjusted, double temperature, double top_p, SplitRng & rng);

// n_s per step: floor(W*s/S) - floor(W*(s-1)/S), or a fixed tokens_per_step
// override.
std::vector<int> unmask_schedule(int window, int steps, int tokens_per_step);

// Vanilla reverse process: the full pre-allocated window is re-scored by a
// bidirectional forward every step; the n_s most confident masked positions
// finalize.
class MdlmSampler : public Sampler {
  public:
    explicit MdlmSampler(Denoiser & model) : model_(model) {}

    SampleResult sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) override;

  private:
    Denoiser & model_;
};

// Accelerated sampler: the window is decoded block by block; entering a
// block refreshes an approximate KV cache for everything outside it, inner
// steps forward only the block, and every masked position whose confidence
// clears the threshold finalizes at once.
class FastDllmSampler : public Sampler {
  public:
    explicit FastDllmSampler(Backbone & model) : model_(model) {}

    SampleResult sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) override;

  private:
    Backbone & model_;
};

// Block-autoregressive decoding for bd3lm-trained models: blocks are
// appended left to right, each produced by the inner MDLM loop over exact
// cached history; generation stops early once a block is all EOS.
class Bd3lmSampler : public Sampler {
  public:
    Bd3lmSampler(Backbone & model, int trained_block_size = 0)
        : model_(model), trained_block_size_(trained_block_size) {}

    SampleResult sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) override;

  private:
    Backbone & model_;
    int        trained_block_size_;
};

std::unique_ptr<Sampler> make_sampler(const std::string & kind, Backbone & model, const TrainMeta & meta);

}  // namespace dlm
