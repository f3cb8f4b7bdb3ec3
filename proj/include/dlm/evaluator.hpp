#pragma once

#include <map>
#include <string>
#include <vector>

#include "dlm/sampler.hpp"

namespace dlm {

enum class TaskKind { generative_exact_match, multiple_choice };

struct TaskRecord {
    std::string              prompt;
    std::string              target;   // generative
    std::vector<std::string> options;  // multiple choice
    int                      gold = -1;
};

struct TaskSpec {
    std::string                        name;
    TaskKind                           kind = TaskKind::generative_exact_match;
    std::vector<TaskRecord>            records;
    std::string                        extraction_rule;  // regex; first match (group 1 if present)
    std::map<std::string, std::string> sampler_overrides;

    void validate() const;
};

// JSON Lines with an optional leading {"task": {...}} config block, then one
// record per line: {"prompt","target"} or {"prompt","options","gold"}.
TaskSpec load_task_jsonl(const std::string & path);
void     write_task_jsonl(const TaskSpec & task, const std::string & path);

struct EvalReport {
    std::string task;
    std::string metric;
    double      value   = 0.0;
    int64_t     records = 0;
    std::string config_snapshot;  // fully-resolved sampler config
    double      tokens_per_s = 0.0;
    uint64_t    seed         = 0;
};

// Valid knob names for overrides and sweeps.
std::vector<std::string> sampler_knob_names();

// Applies "knob=value" pairs; unknown knobs raise a structured error listing
// the valid names.
SamplerConfig apply_knob(SamplerConfig cfg, const std::string & knob, const std::string & value);
SamplerConfig apply_overrides(SamplerConfig cfg, const std::map<std::string, std::string> & overrides);

std::string sampler_config_snapshot(const SamplerConfig & cfg);

// Samples every record through the chat template, extracts the answer per
// the task's rule (whole trimmed output when absent) and scores exact match.
// A sampler failure scores the record 0 and the run continues. timing=false
// zeroes the tokens/s field for byte-stable reports.
EvalReport eval_generative(Sampler & sampler, const TaskSpec & task, const SamplerConfig & cfg, bool timing = false);

// Scores each option by a Monte-Carlo estimate of the masked-diffusion
// objective restricted to the option span (antithetic noise-level pairs,
// common noise across options); predicts the argmin.
EvalReport eval_multiple_choice(Denoiser & model, const TaskSpec & task, int mc_samples, uint64_t seed);

// Per-option NLL estimates for one record (exposed for tests).
std::vector<double> mc_option_nll(Denoiser & model, const TaskRecord & record, int mc_samples, uint64_t seed);

struct BenchResult {
    double              tokens_per_s   = 0.0;
    int64_t             tokens         = 0;
    double              wall_seconds   = 0.0;
    double              warmup_seconds = 0.0;
    int                 generations    = 0;
    std::vector<double> per_generation;  // seconds
    double              speedup = 0.0;   // vs baseline tokens/s when given
};

// Strictly serial timing; warmup generations are excluded from the clock.
BenchResult bench_throughput(Sampler & sampler, const std::vector<std::string> & prompts, const SamplerConfig & cfg,
                             int warmup = 1, const double * baseline_tps = nullptr);

// One report per value with every other knob held at base.
std::vector<EvalReport> sweep(Sampler & sampler, const TaskSpec & task, const std::string & knob,
                              const std::vector<std::string> & values, const SamplerConfig & base,
                              bool timing = false);

std::string format_report_table(const std::vector<EvalReport> & reports);

}  // namespace dlm
