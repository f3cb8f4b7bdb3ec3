#include "dlm/tasks.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "dlm/error.hpp"
#include "dlm/rng.hpp"

namespace dlm {

namespace {

std::string random_word(SplitRng & rng, int min_len, int max_len) {
    int         n = min_len + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(max_len - min_len + 1)));
    std::string s;
    for (int i = 0; i < n; i++) {
        s.push_back(static_cast<char>('a' + rng.uniform_index(26)));
    }
    return s;
}

}  // namespace

TaskSpec gen_task(const std::string & kind, const TaskGenOptions & opts) {
    check(opts.count > 0, ErrorKind::config, "gen_task: count must be positive");
    check(opts.min_len >= 1 && opts.max_len >= opts.min_len, ErrorKind::config, "gen_task: bad length range");

    SplitRng rng(opts.seed);
    TaskSpec task;
    task.name = kind;

    if (kind == "copy") {
        for (int i = 0; i < opts.count; i++) {
            SplitRng r = rng.split(static_cast<uint64_t>(i));
            std::string w = random_word(r, opts.min_len, opts.max_len);
            task.records.push_back({w, w, {}, -1});
        }
    } else if (kind == "reverse") {
        for (int i = 0; i < opts.count; i++) {
            SplitRng r = rng.split(static_cast<uint64_t>(i));
            std::string w = random_word(r, opts.min_len, opts.max_len);
            std::string rev(w.rbegin(), w.rend());
            task.records.push_back({w, rev, {}, -1});
        }
    } else if (kind == "addition") {
        for (int i = 0; i < opts.count; i++) {
            SplitRng r = rng.split(static_cast<uint64_t>(i));
            int      a = 10 + static_cast<int>(r.uniform_index(90));
            int      b = 10 + static_cast<int>(r.uniform_index(90));
            task.records.push_back({std::to_string(a) + "+" + std::to_string(b) + "=", std::to_string(a + b), {}, -1});
        }
    } else if (kind == "retrieval") {
        task.kind = TaskKind::multiple_choice;
        const std::string keys = "abcd";
        for (int i = 0; i < opts.count; i++) {
            SplitRng r = rng.split(static_cast<uint64_t>(i));
            // four distinct single-digit values
            std::vector<int> values;
            while (values.size() < 4) {
                int v = static_cast<int>(r.uniform_index(10));
                if (std::find(values.begin(), values.end(), v) == values.end()) {
                    values.push_back(v);
                }
            }
            int         q = static_cast<int>(r.uniform_index(4));
            std::string prompt;
            for (int k = 0; k < 4; k++) {
                if (k) {
                    prompt += " ";
                }
                prompt += std::string(1, keys[k]) + "=" + std::to_string(values[k]);
            }
            prompt += "\n" + std::string(1, keys[q]) + "=?";
            TaskRecord rec;
            rec.prompt = prompt;
            for (int k = 0; k < 4; k++) {
                rec.options.push_back(std::to_string(values[k]));
            }
            rec.gold = q;
            task.records.push_back(std::move(rec));
        }
    } else {
        fail(ErrorKind::config, "gen_task: unknown kind \"" + kind + "\" (expected copy, reverse, addition or retrieval)");
    }
    return task;
}

Dataset sft_dataset_from_task(const TaskSpec & task) {
    check(task.kind == TaskKind::generative_exact_match, ErrorKind::config,
          "sft_dataset_from_task: only generative tasks convert to SFT data");
    Dataset d;
    d.kind = Dataset::Kind::sft;
    for (const auto & r : task.records) {
        d.sft.push_back(conversation_to_example({{Role::user, r.prompt}, {Role::assistant, r.target}}));
    }
    return d;
}

void write_sft_jsonl(const TaskSpec & task, const std::string & path) {
    check(task.kind == TaskKind::generative_exact_match, ErrorKind::config,
          "write_sft_jsonl: only generative tasks convert to SFT data");
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open SFT file for writing: " + path);
    }
    for (const auto & r : task.records) {
        nlohmann::json j;
        j["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", r.prompt}},
                                               {{"role", "assistant"}, {"content", r.target}}});
        out << j.dump() << "\n";
    }
}

}  // namespace dlm
