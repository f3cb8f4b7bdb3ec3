#include "dlm/evaluator.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "dlm/batch.hpp"
#include "dlm/chat.hpp"
#include "dlm/error.hpp"
#include "dlm/losses.hpp"
#include "dlm/noising.hpp"

namespace dlm {

using nlohmann::json;

void TaskSpec::validate() const {
    check(!records.empty(), ErrorKind::data, "task \"" + name + "\" has no records");
    if (kind == TaskKind::multiple_choice) {
        for (size_t i = 0; i < records.size(); i++) {
            const auto & r = records[i];
            if (r.options.size() < 2 || r.gold < 0 || r.gold >= static_cast<int>(r.options.size())) {
                fail(ErrorKind::data, "task \"" + name + "\" record " + std::to_string(i) +
                                          ": multiple choice needs >= 2 options and a valid gold index");
            }
        }
    }
}

TaskSpec load_task_jsonl(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::io, "cannot open task file: " + path);
    }

    TaskSpec spec;
    // default name: file stem
    size_t slash = path.find_last_of('/');
    size_t dot   = path.find_last_of('.');
    spec.name    = path.substr(slash == std::string::npos ? 0 : slash + 1,
                               dot == std::string::npos || dot < slash ? std::string::npos
                                                                       : dot - (slash == std::string::npos ? 0 : slash + 1));

    std::string line;
    size_t      lineno   = 0;
    bool        saw_kind = false;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": invalid JSON");
        }
        if (j.contains("task")) {
            const json & t = j["task"];
            spec.name      = t.value("name", spec.name);
            std::string k  = t.value("kind", "generative_exact_match");
            if (k == "generative_exact_match") {
                spec.kind = TaskKind::generative_exact_match;
            } else if (k == "multiple_choice") {
                spec.kind = TaskKind::multiple_choice;
            } else {
                fail(ErrorKind::data, path + ": unknown task kind \"" + k + "\"");
            }
            saw_kind             = true;
            spec.extraction_rule = t.value("extraction_rule", "");
            if (t.contains("sampler_overrides")) {
                for (auto & [key, val] : t["sampler_overrides"].items()) {
                    spec.sampler_overrides[key] = val.is_string() ? val.get<std::string>() : val.dump();
                }
            }
            continue;
        }
        TaskRecord r;
        r.prompt = j.value("prompt", "");
        if (j.contains("options")) {
            r.options = j["options"].get<std::vector<std::string>>();
            r.gold    = j.value("gold", -1);
            if (!saw_kind) {
                spec.kind = TaskKind::multiple_choice;
            }
        } else {
            r.target = j.value("target", "");
        }
        spec.records.push_back(std::move(r));
    }
    spec.validate();
    return spec;
}

void write_task_jsonl(const TaskSpec & task, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open task file for writing: " + path);
    }
    json header;
    header["task"] = json{{"name", task.name},
                          {"kind", task.kind == TaskKind::multiple_choice ? "multiple_choice"
                                                                          : "generative_exact_match"}};
    if (!task.extraction_rule.empty()) {
        header["task"]["extraction_rule"] = task.extraction_rule;
    }
    if (!task.sampler_overrides.empty()) {
        header["task"]["sampler_overrides"] = task.sampler_overrides;
    }
    out << header.dump() << "\n";
    for (const auto & r : task.records) {
        if (task.kind == TaskKind::multiple_choice) {
            out << json{{"prompt", r.prompt}, {"options", r.options}, {"gold", r.gold}}.dump() << "\n";
        } else {
            out << json{{"prompt", r.prompt}, {"target", r.target}}.dump() << "\n";
        }
    }
}

std::vector<std::string> sampler_knob_names() {
    return {"max_new_tokens", "steps",          "temperature",       "top_p",
            "cfg_scale",      "min_new_tokens", "tokens_per_step",   "confidence_threshold",
            "cache_block_size", "cache_enabled", "parallel_enabled", "seed"};
}

SamplerConfig apply_knob(SamplerConfig cfg, const std::string & knob, const std::string & value) {
    auto as_int = [&] { return std::stoll(value); };
    auto as_dbl = [&] { return std::stod(value); };
    auto as_bool = [&] {
        if (value == "true" || value == "1") {
            return true;
        }
        if (value == "false" || value == "0") {
            return false;
        }
        fail(ErrorKind::config, "knob " + knob + ": expected a boolean, got \"" + value + "\"");
    };

    try {
        if (knob == "max_new_tokens") {
            cfg.max_new_tokens = static_cast<int>(as_int());
        } else if (knob == "steps") {
            cfg.steps = static_cast<int>(as_int());
        } else if (knob == "temperature") {
            cfg.temperature = as_dbl();
        } else if (knob == "top_p") {
            cfg.top_p = as_dbl();
        } else if (knob == "cfg_scale") {
            cfg.cfg_scale = as_dbl();
        } else if (knob == "min_new_tokens") {
            cfg.min_new_tokens = static_cast<int>(as_int());
        } else if (knob == "tokens_per_step") {
            cfg.tokens_per_step = static_cast<int>(as_int());
        } else if (knob == "confidence_threshold") {
            cfg.confidence_threshold = as_dbl();
        } else if (knob == "cache_block_size") {
            cfg.cache_block_size = static_cast<int>(as_int());
        } else if (knob == "cache_enabled") {
            cfg.cache_enabled = as_bool();
        } else if (knob == "parallel_enabled") {
            cfg.parallel_enabled = as_bool();
        } else if (knob == "seed") {
            cfg.seed = static_cast<uint64_t>(as_int());
        } else {
            std::string valid;
            for (const auto & n : sampler_knob_names()) {
                valid += valid.empty() ? n : ", " + n;
            }
            fail(ErrorKind::config, "unknown sampler knob \"" + knob + "\" (valid: " + valid + ")");
        }
    } catch (const std::invalid_argument &) {
        fail(ErrorKind::config, "knob " + knob + ": cannot parse value \"" + value + "\"");
    } catch (const std::out_of_range &) {
        fail(ErrorKind::config, "knob " + knob + ": value \"" + value + "\" out of range");
    }
    return cfg;
}

SamplerConfig apply_overrides(SamplerConfig cfg, const std::map<std::string, std::string> & overrides) {
    for (const auto & [k, v] : overrides) {
        cfg = apply_knob(cfg, k, v);
    }
    return cfg;
}

std::string sampler_config_snapshot(const SamplerConfig & cfg) {
    json j{{"max_new_tokens", cfg.max_new_tokens},
           {"steps", cfg.steps},
           {"temperature", cfg.temperature},
           {"top_p", cfg.top_p},
           {"cfg_scale", cfg.cfg_scale},
           {"min_new_tokens", cfg.min_new_tokens},
           {"tokens_per_step", cfg.tokens_per_step},
           {"confidence_threshold", cfg.confidence_threshold},
           {"cache_block_size", cfg.cache_block_size},
           {"cache_enabled", cfg.cache_enabled},
           {"parallel_enabled", cfg.parallel_enabled},
           {"seed", cfg.seed}};
    return j.dump();
}

namespace {

std::string trim(const std::string & s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    size_t e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, e - b + 1);
}

std::string extract_answer(const std::string & output, const std::string & rule) {
    if (rule.empty()) {
        return trim(output);
    }
    std::regex  re(rule, std::regex::ECMAScript);
    std::smatch m;
    if (std::regex_search(output, m, re)) {
        if (m.size() > 1 && m[1].matched) {
            return trim(m[1].str());
        }
        return trim(m[0].str());
    }
    return "";
}

int64_t generated_token_count(const DecodeHistory & h) {
    int64_t n = 0;
    for (const auto & st : h.steps) {
        n += static_cast<int64_t>(st.positions.size());
    }
    return n;
}

}  // namespace

EvalReport eval_generative(Sampler & sampler, const TaskSpec & task, const SamplerConfig & cfg, bool timing) {
    check(task.kind == TaskKind::generative_exact_match, ErrorKind::config,
          "eval_generative: task \"" + task.name + "\" is not generative");
    task.validate();

    int64_t matches = 0;
    int64_t tokens  = 0;
    auto    t0      = std::chrono::steady_clock::now();

    for (size_t i = 0; i < task.records.size(); i++) {
        const TaskRecord & r = task.records[i];
        try {
            std::vector<int32_t> prompt =
                apply_chat_template({{Role::user, r.prompt}}, /*add_generation_prompt=*/true);
            SampleResult res = sampler.sample(prompt, cfg);
            tokens += generated_token_count(res.history);
            std::span<const int32_t> window(res.tokens.data() + prompt.size(), res.tokens.size() - prompt.size());
            std::string              text   = decode_trim_eos(window);
            std::string              answer = extract_answer(text, task.extraction_rule);
            if (answer == trim(r.target)) {
                matches++;
            }
        } catch (const Error & e) {
            std::fprintf(stderr, "eval: record %zu failed (%s); scored 0\n", i, e.what());
        }
    }

    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    EvalReport rep;
    rep.task            = task.name;
    rep.metric          = "exact_match";
    rep.value           = static_cast<double>(matches) / static_cast<double>(task.records.size());
    rep.records         = static_cast<int64_t>(task.records.size());
    rep.config_snapshot = sampler_config_snapshot(cfg);
    rep.tokens_per_s    = timing && wall > 0.0 ? static_cast<double>(tokens) / wall : 0.0;
    rep.seed            = cfg.seed;
    return rep;
}

std::vector<double> mc_option_nll(Denoiser & model, const TaskRecord & record, int mc_samples, uint64_t seed) {
    check(mc_samples >= 1, ErrorKind::config, "eval_multiple_choice: mc_samples must be >= 1");

    std::vector<int32_t> prompt = apply_chat_template({{Role::user, record.prompt}}, true);

    std::vector<SftExample> rows;
    int                     longest = 0;
    for (const auto & opt : record.options) {
        SftExample ex;
        ex.prompt   = prompt;
        ex.response = encode(opt);
        longest     = std::max<int>(longest, static_cast<int>(ex.prompt.size() + ex.response.size()));
        rows.push_back(std::move(ex));
    }
    Batch batch = collate_sft(rows, std::max(longest, 2));

    const BoolGrid * pad = batch.attention_mask ? &*batch.attention_mask : nullptr;

    std::vector<double> nll(record.options.size(), 0.0);
    SplitRng            root(seed);

    for (int s = 0; s < mc_samples; s++) {
        // antithetic pairs: draws 2k and 2k+1 share one uniform
        SplitRng pair_rng = root.split("time").split(static_cast<uint64_t>(s / 2));
        double   u        = pair_rng.uniform();
        if (s % 2 == 1) {
            u = 1.0 - u;
        }
        double t = kTimeFloor + (1.0 - kTimeFloor) * u;

        std::vector<double> t_rows(batch.rows(), t);  // common noise across options
        SplitRng            mask_rng = root.split("mask").split(static_cast<uint64_t>(s));
        NoisedBatch         noised   = forward_mask(batch, t_rows, mask_rng, MaskablePolicy::loss_eligible_only);

        Mat logits = model.logits(noised.x_t, AttentionMaskSpec::full(), pad);

        MatX<float>       lf = logits;
        LossOutput<float> lo = mdlm_loss(lf, noised, batch);
        for (size_t o = 0; o < nll.size(); o++) {
            nll[o] += lo.per_row[o] / mc_samples;
        }
    }
    return nll;
}

EvalReport eval_multiple_choice(Denoiser & model, const TaskSpec & task, int mc_samples, uint64_t seed) {
    check(task.kind == TaskKind::multiple_choice, ErrorKind::config,
          "eval_multiple_choice: task \"" + task.name + "\" is not multiple choice");
    task.validate();
    check(mc_samples >= 1, ErrorKind::config, "eval_multiple_choice: mc_samples must be >= 1");

    int64_t  correct = 0;
    SplitRng root(seed);
    for (size_t i = 0; i < task.records.size(); i++) {
        std::vector<double> nll = mc_option_nll(model, task.records[i], mc_samples, root.split(i).next_u64());

        int best = 0;
        for (size_t o = 1; o < nll.size(); o++) {
            if (nll[o] < nll[best]) {  // ties keep the lowest index
                best = static_cast<int>(o);
            }
        }
        if (best == task.records[i].gold) {
            correct++;
        }
    }

    EvalReport rep;
    rep.task            = task.name;
    rep.metric          = "accuracy";
    rep.value           = static_cast<double>(correct) / static_cast<double>(task.records.size());
    rep.records         = static_cast<int64_t>(task.records.size());
    rep.config_snapshot = "{\"mc_samples\":" + std::to_string(mc_samples) + "}";
    rep.seed            = seed;
    return rep;
}

BenchResult bench_throughput(Sampler & sampler, const std::vector<std::string> & prompts, const SamplerConfig & cfg,
                             int warmup, const double * baseline_tps) {
    check(!prompts.empty(), ErrorKind::config, "bench: need at least one prompt");
    check(cfg.max_new_tokens > 0, ErrorKind::config, "bench: zero-length generations cannot be timed");
    check(warmup >= 1, ErrorKind::config, "bench: at least one warmup generation is required");

    std::vector<std::vector<int32_t>> token_prompts;
    for (const auto & p : prompts) {
        token_prompts.push_back(apply_chat_template({{Role::user, p}}, true));
    }

    BenchResult res;

    auto w0 = std::chrono::steady_clock::now();
    for (int i = 0; i < warmup; i++) {
        sampler.sample(token_prompts[i % token_prompts.size()], cfg);
    }
    res.warmup_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - w0).count();

    for (const auto & prompt : token_prompts) {
        auto         g0  = std::chrono::steady_clock::now();
        SampleResult out = sampler.sample(prompt, cfg);
        double       dt  = std::chrono::duration<double>(std::chrono::steady_clock::now() - g0).count();
        res.per_generation.push_back(dt);
        res.wall_seconds += dt;
        res.tokens += generated_token_count(out.history);
        res.generations++;
    }

    check(res.tokens > 0, ErrorKind::numeric, "bench: no tokens were generated");
    res.tokens_per_s = static_cast<double>(res.tokens) / res.wall_seconds;
    if (baseline_tps && *baseline_tps > 0.0) {
        res.speedup = res.tokens_per_s / *baseline_tps;
    }
    return res;
}

std::vector<EvalReport> sweep(Sampler & sampler, const TaskSpec & task, const std::string & knob,
                              const std::vector<std::string> & values, const SamplerConfig & base, bool timing) {
    check(!values.empty(), ErrorKind::config, "sweep: no values given");
    std::vector<EvalReport> reports;
    for (const auto & v : values) {
        SamplerConfig cfg = apply_knob(base, knob, v);
        EvalReport    rep = eval_generative(sampler, task, cfg, timing);
        rep.task          = task.name + "[" + knob + "=" + v + "]";
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::string format_report_table(const std::vector<EvalReport> & reports) {
    size_t name_w = 4;
    for (const auto & r : reports) {
        name_w = std::max(name_w, r.task.size());
    }
    std::ostringstream out;
    char               buf[256];
    std::snprintf(buf, sizeof(buf), "%-*s  %-12s  %8s  %8s  %10s\n", static_cast<int>(name_w), "task", "metric",
                  "value", "records", "tok/s");
    out << buf;
    for (const auto & r : reports) {
        std::snprintf(buf, sizeof(buf), "%-*s  %-12s  %8.4f  %8lld  %10.2f\n", static_cast<int>(name_w),
                      r.task.c_str(), r.metric.c_str(), r.value, static_cast<long long>(r.records), r.tokens_per_s);
        out << buf;
    }
    return out.str();
}

}  // namespace dlm
