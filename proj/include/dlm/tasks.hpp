#pragma once

#include <string>
#include <vector>

#include "dlm/evaluator.hpp"
#include "dlm/trainer.hpp"

namespace dlm {

struct TaskGenOptions {
    int      count   = 100;
    uint64_t seed    = 0;
    int      min_len = 4;
    int      max_len = 12;
};

// Built-in desk-scale tasks. copy/reverse/addition are generative; retrieval
// is 4-option multiple choice over key-value lookups.
TaskSpec gen_task(const std::string & kind, const TaskGenOptions & opts);

// SFT dataset with one user/assistant turn per record (prompt -> target).
Dataset sft_dataset_from_task(const TaskSpec & task);

void write_sft_jsonl(const TaskSpec & task, const std::string & path);

}  // namespace dlm
