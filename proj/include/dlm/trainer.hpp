#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dlm/backbone.hpp"
#include "dlm/batch.hpp"
#include "dlm/checkpoint.hpp"
#include "dlm/losses.hpp"
#include "dlm/optimizer.hpp"

namespace dlm {

enum class Objective { mdlm, bd3lm };

struct TrainConfig {
    Objective objective  = Objective::mdlm;
    int       block_size = 32;  // bd3lm only

    double   lr_peak        = 3e-4;
    double   warmup_frac    = 0.10;
    int64_t  total_steps    = 1000;
    int      batch_rows     = 8;
    int      grad_accum     = 1;
    double   weight_decay   = 0.01;
    double   beta1          = 0.9;
    double   beta2          = 0.95;
    double   adam_eps       = 1e-8;
    double   grad_clip_norm = 1.0;
    uint64_t seed           = 0;
    int64_t  eval_every     = 0;
    int64_t  checkpoint_every = 0;
    int64_t  log_every      = 10;
    int      max_len        = 256;

    // collator stack toggles
    bool drop_attention_mask = false;  // keep padding visible
    bool eos_fill            = false;  // train EOS targets on padding
    bool prepend_bos         = false;  // AR-adaptation wrapper
    bool shared_block_t      = false;  // bd3lm ablation: one t per row

    void validate() const;
};

struct TrainReport {
    int64_t               step = 0;
    double                loss = 0.0;
    double                lr   = 0.0;
    int64_t               tokens_seen = 0;
    double                wall_time   = 0.0;  // seconds since train start
    std::optional<double> eval_loss;
};

// Linear warmup to lr_peak over round(warmup_frac * total_steps) steps, then
// cosine decay to zero over the remainder.
double cosine_lr(int64_t step, const TrainConfig & cfg);

struct Dataset {
    enum class Kind { sft, pretrain };

    Kind                              kind = Kind::sft;
    std::vector<SftExample>           sft;
    std::vector<std::vector<int32_t>> docs;

    size_t size() const { return kind == Kind::sft ? sft.size() : docs.size(); }

    static Dataset from_sft_file(const std::string & path);
    static Dataset from_text_file(const std::string & path);
};

class Trainer {
  public:
    Trainer(Backbone & model, Dataset dataset, TrainConfig cfg, std::string run_dir = "");

    // Runs the optimization loop; emits reports through on_report and, when a
    // run dir is set, appends them to report.jsonl and writes periodic
    // checkpoints under step-<n>/.
    void train(const std::function<void(const TrainReport &)> & on_report = {});

    // Deterministic batch assembly (exposed for tests and evaluation).
    Batch assemble_batch(SplitRng & rng) const;

    // One noising + forward + loss evaluation without touching gradients.
    double eval_loss(const Batch & batch, SplitRng & rng);

    const TrainConfig & config() const { return cfg_; }

    TrainMeta meta() const;

  private:
    struct StepOutcome {
        double  loss = 0.0;
        int64_t tokens = 0;
    };

    StepOutcome accumulate_micro_batch(const Batch & batch, SplitRng & rng, double scale);

    Backbone &  model_;
    Dataset     data_;
    TrainConfig cfg_;
    std::string run_dir_;
};

}  // namespace dlm
