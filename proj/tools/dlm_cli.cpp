#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "dlm/chat.hpp"
#include "dlm/checkpoint.hpp"
#include "dlm/config.hpp"
#include "dlm/error.hpp"
#include "dlm/evaluator.hpp"
#include "dlm/history_io.hpp"
#include "dlm/sampler.hpp"
#include "dlm/tasks.hpp"
#include "dlm/trainer.hpp"
#include "dlm/visualizer.hpp"
#include "dlm/vocab.hpp"

namespace {

using namespace dlm;

std::string run_root() {
    const char * env = std::getenv("DLM_RUN_ROOT");
    return env && *env ? env : "runs";
}

// sampler knobs shared by sample/chat/eval/bench
struct SamplerFlags {
    SamplerConfig cfg;
    std::string   kind = "auto";  // auto picks bd3lm for bd3lm checkpoints

    void attach(CLI::App * app) {
        app->add_option("--sampler", kind, "Sampler: mdlm, fastdllm, bd3lm or auto")->capture_default_str();
        app->add_option("--max-new-tokens", cfg.max_new_tokens, "Generated window length")->capture_default_str();
        app->add_option("--steps", cfg.steps, "Denoising steps")->capture_default_str();
        app->add_option("--temperature", cfg.temperature, "Softmax temperature (0 = greedy)")->capture_default_str();
        app->add_option("--top-p", cfg.top_p, "Nucleus mass")->capture_default_str();
        app->add_option("--cfg", cfg.cfg_scale, "Classifier-free guidance scale")->capture_default_str();
        app->add_option("--min-new-tokens", cfg.min_new_tokens, "Suppress EOS below this offset")
            ->capture_default_str();
        app->add_option("--tokens-per-step", cfg.tokens_per_step, "Fixed finalizations per step")
            ->capture_default_str();
        app->add_option("--threshold", cfg.confidence_threshold, "Parallel-decode confidence threshold")
            ->capture_default_str();
        app->add_option("--cache-block", cfg.cache_block_size, "Decode block size")->capture_default_str();
        app->add_option("--seed", cfg.seed, "Sampling seed")->capture_default_str();
        app->add_flag("--no-cache", [this](int64_t) { cfg.cache_enabled = false; }, "Disable KV caching");
        app->add_flag("--no-parallel", [this](int64_t) { cfg.parallel_enabled = false; },
                      "Disable threshold-parallel finalization");
    }

    std::unique_ptr<Sampler> make(Backbone & model, const TrainMeta & meta) const {
        std::string k = kind;
        if (k == "auto") {
            k = meta.objective == "bd3lm" ? "bd3lm" : "mdlm";
        }
        return make_sampler(k, model, meta);
    }

    SamplerConfig resolved(const TrainMeta & meta) const {
        SamplerConfig c = cfg;
        if (meta.objective == "bd3lm" && meta.block_size > 0 && kind == "auto") {
            c.cache_block_size = meta.block_size;
        }
        return c;
    }
};

std::vector<int32_t> prompt_tokens(const std::string & text, bool raw) {
    if (raw) {
        std::vector<int32_t> t{VocabSpec::bos_id};
        for (int32_t id : encode(text)) {
            t.push_back(id);
        }
        return t;
    }
    return apply_chat_template({{Role::user, text}}, /*add_generation_prompt=*/true);
}

// ---------------------------------------------------------------- train ---

void model_right_shift_note(const Backbone & model, const BackboneConfig & requested) {
    if (model.config().right_shift_logits != requested.right_shift_logits) {
        std::fprintf(stderr, "note: right_shift_logits=%d taken from the checkpoint\n",
                     model.config().right_shift_logits ? 1 : 0);
    }
}

struct TrainCli {
    std::string   config_path;
    std::string   data_path;
    std::string   run_dir;
    std::string   name = "run";
    std::string   init_from;
    bool          timing   = false;
    CLI::Option * data_opt = nullptr;

    ResolvedConfig rc;

    // typed mirrors for CLI11; applied into rc when the flag was passed
    struct Mirror {
        CLI::Option *         opt = nullptr;
        std::string           key;
        std::function<std::string()> get;
    };

    std::vector<Mirror> mirrors;

    template <typename T> void bind(CLI::App * app, const std::string & flag, const std::string & key, T & var,
                                    const std::string & help) {
        rc.set_default(key, [&]() {
            if constexpr (std::is_same_v<T, bool>) {
                return std::string(var ? "true" : "false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                return var;
            } else {
                std::ostringstream os;
                os << var;
                return os.str();
            }
        }());
        CLI::Option * opt;
        if constexpr (std::is_same_v<T, bool>) {
            opt = app->add_flag(flag, var, help);
        } else {
            opt = app->add_option(flag, var, help)->capture_default_str();
        }
        mirrors.push_back({opt, key, [&var]() {
                               if constexpr (std::is_same_v<T, bool>) {
                                   return std::string(var ? "true" : "false");
                               } else if constexpr (std::is_same_v<T, std::string>) {
                                   return var;
                               } else {
                                   std::ostringstream os;
                                   os << var;
                                   return os.str();
                               }
                           }});
    }

    // storage for bound values
    std::string objective = "mdlm";
    TrainConfig tc;
    BackboneConfig bc = BackboneConfig::desk_scale();
};

int cmd_train(TrainCli & t) {
    // file layer first, then flags that were explicitly passed
    if (!t.config_path.empty()) {
        t.rc.load_file(t.config_path);
    }
    for (const auto & m : t.mirrors) {
        if (m.opt->count() > 0) {
            t.rc.set_cli(m.key, m.get());
        }
    }
    if (t.data_opt != nullptr && t.data_opt->count() > 0) {
        t.rc.set_cli("data.path", t.data_path);
    }

    // pull the resolved view back into typed configs
    TrainConfig cfg;
    cfg.objective  = t.rc.str("train.objective") == "bd3lm" ? Objective::bd3lm : Objective::mdlm;
    if (t.rc.str("train.objective") != "mdlm" && t.rc.str("train.objective") != "bd3lm") {
        fail(ErrorKind::config, "train.objective must be mdlm or bd3lm");
    }
    cfg.block_size          = static_cast<int>(t.rc.integer("train.block_size"));
    cfg.lr_peak             = t.rc.real("train.lr_peak");
    cfg.warmup_frac         = t.rc.real("train.warmup_frac");
    cfg.total_steps         = t.rc.integer("train.total_steps");
    cfg.batch_rows          = static_cast<int>(t.rc.integer("train.batch_rows"));
    cfg.grad_accum          = static_cast<int>(t.rc.integer("train.grad_accum"));
    cfg.weight_decay        = t.rc.real("train.weight_decay");
    cfg.beta1               = t.rc.real("train.beta1");
    cfg.beta2               = t.rc.real("train.beta2");
    cfg.grad_clip_norm      = t.rc.real("train.grad_clip_norm");
    cfg.seed                = static_cast<uint64_t>(t.rc.integer("train.seed"));
    cfg.eval_every          = t.rc.integer("train.eval_every");
    cfg.checkpoint_every    = t.rc.integer("train.checkpoint_every");
    cfg.log_every           = t.rc.integer("train.log_every");
    cfg.max_len             = static_cast<int>(t.rc.integer("train.max_len"));
    cfg.drop_attention_mask = t.rc.boolean("train.no_attention_mask");
    cfg.eos_fill            = t.rc.boolean("train.eos_fill");
    cfg.prepend_bos         = t.rc.boolean("train.prepend_bos");
    cfg.shared_block_t      = t.rc.boolean("train.shared_block_t");
    cfg.validate();

    BackboneConfig bc;
    bc.d_model            = static_cast<int>(t.rc.integer("model.d_model"));
    bc.n_layers           = static_cast<int>(t.rc.integer("model.n_layers"));
    bc.n_heads            = static_cast<int>(t.rc.integer("model.n_heads"));
    bc.d_ff               = static_cast<int>(t.rc.integer("model.d_ff"));
    bc.max_seq_len        = static_cast<int>(t.rc.integer("model.max_seq_len"));
    bc.rope_base          = static_cast<float>(t.rc.real("model.rope_base"));
    bc.right_shift_logits = t.rc.boolean("model.right_shift_logits");

    std::string data_path = t.rc.str("data.path");
    if (data_path.empty()) {
        fail(ErrorKind::config, "train: --data is required");
    }
    std::string kind = t.rc.str("data.kind");
    if (kind == "auto") {
        kind = data_path.ends_with(".jsonl") ? "sft" : "pretrain";
    }

    std::string run_dir = t.run_dir.empty() ? run_root() + "/" + t.name : t.run_dir;
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot create run dir " + run_dir + ": " + ec.message());
    }

    {
        std::ofstream snap(run_dir + "/config.snapshot", std::ios::trunc);
        if (!snap) {
            fail(ErrorKind::io, "cannot write config snapshot under " + run_dir);
        }
        snap << t.rc.snapshot();
    }

    Dataset data = kind == "sft" ? Dataset::from_sft_file(data_path) : Dataset::from_text_file(data_path);

    Backbone model(bc);
    if (!t.init_from.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(t.init_from, &bc);
        model                   = std::move(loaded.model);
        model_right_shift_note(model, bc);
    } else {
        model.init_parameters(SplitRng(cfg.seed).split("init"));
    }

    Trainer trainer(model, std::move(data), cfg, run_dir);
    trainer.train([&](const TrainReport & rep) {
        std::printf("step=%lld loss=%.6f lr=%.3e tokens=%lld", static_cast<long long>(rep.step), rep.loss, rep.lr,
                    static_cast<long long>(rep.tokens_seen));
        if (rep.eval_loss) {
            std::printf(" eval_loss=%.6f", *rep.eval_loss);
        }
        if (t.timing) {
            double tps = rep.wall_time > 0 ? static_cast<double>(rep.tokens_seen) / rep.wall_time : 0.0;
            std::printf(" tok/s=%.1f", tps);
        }
        std::printf("\n");
        std::fflush(stdout);
        std::fprintf(stderr, "[%.1fs] step %lld done\n", rep.wall_time, static_cast<long long>(rep.step));
    });

    return 0;
}

// --------------------------------------------------------------- sample ---

int cmd_sample(const std::string & ckpt, std::string prompt, bool prompt_given, bool raw, const SamplerFlags & sf,
               const std::string & history_out) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt);

    if (!prompt_given) {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        prompt = ss.str();
        while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r')) {
            prompt.pop_back();
        }
    }

    auto          sampler = sf.make(loaded.model, loaded.meta);
    SamplerConfig cfg     = sf.resolved(loaded.meta);

    std::vector<int32_t> ptoks = prompt_tokens(prompt, raw);
    SampleResult         res   = sampler->sample(ptoks, cfg);

    std::span<const int32_t> window(res.tokens.data() + ptoks.size(), res.tokens.size() - ptoks.size());
    std::printf("%s\n", decode_trim_eos(window).c_str());

    if (!history_out.empty()) {
        write_history(res.history, history_out);
    }
    return 0;
}

// ----------------------------------------------------------------- chat ---

int cmd_chat(const std::string & ckpt, const SamplerFlags & sf) {
    LoadedCheckpoint loaded  = load_checkpoint(ckpt);
    auto             sampler = sf.make(loaded.model, loaded.meta);
    SamplerConfig    cfg     = sf.resolved(loaded.meta);

    std::vector<Message> conversation;
    std::string          line;
    std::fprintf(stderr, "chat: enter a message, /quit to leave\n");
    while (true) {
        std::fprintf(stderr, "> ");
        if (!std::getline(std::cin, line)) {
            break;
        }
        if (line == "/quit" || line == "/exit") {
            break;
        }
        if (line.empty()) {
            continue;
        }
        conversation.push_back({Role::user, line});

        std::vector<int32_t> ptoks = apply_chat_template(conversation, true);
        SampleResult         res   = sampler->sample(ptoks, cfg);

        std::span<const int32_t> window(res.tokens.data() + ptoks.size(), res.tokens.size() - ptoks.size());
        // the reply ends at the first EOS; everything after is surplus window
        std::vector<int32_t> reply;
        for (int32_t id : window) {
            if (id == VocabSpec::eos_id) {
                break;
            }
            reply.push_back(id);
        }
        std::string text = decode(reply);
        std::printf("%s\n", text.c_str());
        std::fflush(stdout);
        conversation.push_back({Role::assistant, text});
    }
    return 0;
}

// ----------------------------------------------------------------- eval ---

int cmd_eval(const std::string & ckpt, const std::string & task_path, const SamplerFlags & sf, int mc_samples,
             const std::string & sweep_knob, const std::string & sweep_values, bool timing,
             const std::string & report_out) {
    LoadedCheckpoint loaded = load_checkpoint(ckpt);
    TaskSpec         task   = load_task_jsonl(task_path);

    std::vector<EvalReport> reports;
    if (task.kind == TaskKind::multiple_choice) {
        reports.push_back(eval_multiple_choice(loaded.model, task, mc_samples, sf.cfg.seed));
    } else {
        auto          sampler = sf.make(loaded.model, loaded.meta);
        SamplerConfig base    = apply_overrides(sf.resolved(loaded.meta), task.sampler_overrides);
        if (!sweep_knob.empty()) {
            std::vector<std::string> values;
            std::stringstream        ss(sweep_values);
            std::string              v;
            while (std::getline(ss, v, ',')) {
                values.push_back(v);
            }
            reports = sweep(*sampler, task, sweep_knob, values, base, timing);
        } else {
            reports.push_back(eval_generative(*sampler, task, base, timing));
        }
    }

    std::fputs(format_report_table(reports).c_str(), stdout);

    if (!report_out.empty()) {
        std::ofstream out(report_out, std::ios::trunc);
        if (!out) {
            fail(ErrorKind::io, "cannot write report file: " + report_out);
        }
        for (const auto & r : reports) {
            nlohmann::json j{{"task", r.task},       {"metric", r.metric},
                             {"value", r.value},     {"records", r.records},
                             {"config", r.config_snapshot}, {"tokens_per_s", r.tokens_per_s},
                             {"seed", r.seed}};
            out << j.dump() << "\n";
        }
    }
    return 0;
}

// ---------------------------------------------------------------- bench ---

int cmd_bench(const std::string & ckpt, const SamplerFlags & sf, const std::string & prompts_path, int warmup,
              const std::string & baseline_path, const std::string & out_path) {
    LoadedCheckpoint loaded  = load_checkpoint(ckpt);
    auto             sampler = sf.make(loaded.model, loaded.meta);
    SamplerConfig    cfg     = sf.resolved(loaded.meta);

    std::vector<std::string> prompts;
    if (!prompts_path.empty()) {
        std::ifstream in(prompts_path);
        if (!in) {
            fail(ErrorKind::io, "cannot open prompts file: " + prompts_path);
        }
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) {
                prompts.push_back(line);
            }
        }
        check(!prompts.empty(), ErrorKind::data, "prompts file is empty: " + prompts_path);
    } else {
        prompts = {"benchmark prompt"};
    }

    double  baseline_tps = 0.0;
    bool    have_base    = false;
    if (!baseline_path.empty()) {
        std::ifstream in(baseline_path);
        if (!in) {
            fail(ErrorKind::io, "cannot open baseline report: " + baseline_path);
        }
        nlohmann::json j;
        in >> j;
        baseline_tps = j.value("tokens_per_s", 0.0);
        have_base    = true;
    }

    BenchResult res = bench_throughput(*sampler, prompts, cfg, warmup, have_base ? &baseline_tps : nullptr);

    std::printf("generations=%d tokens=%lld wall=%.3fs tok/s=%.2f", res.generations,
                static_cast<long long>(res.tokens), res.wall_seconds, res.tokens_per_s);
    if (have_base) {
        std::printf(" speedup=%.2fx", res.speedup);
    }
    std::printf("\n");

    if (!out_path.empty()) {
        nlohmann::json j{{"tokens_per_s", res.tokens_per_s},
                         {"tokens", res.tokens},
                         {"wall_seconds", res.wall_seconds},
                         {"warmup_seconds", res.warmup_seconds},
                         {"generations", res.generations},
                         {"per_generation", res.per_generation}};
        if (have_base) {
            j["speedup"] = res.speedup;
        }
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) {
            fail(ErrorKind::io, "cannot write bench report: " + out_path);
        }
        out << j.dump(2) << "\n";
    }
    return 0;
}

// ------------------------------------------------------------ visualize ---

int cmd_visualize(const std::string & history_path, const std::string & mode, int width, int delay_ms, bool no_color) {
    DecodeHistory history = read_history(history_path);

    RenderOptions opts;
    opts.width = width;
    opts.color = !no_color;
    if (mode == "replay") {
        opts.mode = RenderMode::replay;
    } else if (mode == "summary") {
        opts.mode = RenderMode::summary;
    } else {
        fail(ErrorKind::config, "visualize: --mode must be replay or summary");
    }

    std::string prompt_text = decode(history.prompt);
    std::printf("prompt: %s\n", prompt_text.c_str());

    std::vector<std::string> frames = render_history(history, opts);
    for (size_t i = 0; i < frames.size(); i++) {
        if (opts.mode == RenderMode::replay && opts.color) {
            std::printf("\033[2J\033[H");
        }
        std::printf("%s\n", frames[i].c_str());
        if (opts.mode == RenderMode::replay && !opts.color && i + 1 != frames.size()) {
            std::printf("---\n");
        }
        std::fflush(stdout);
        if (delay_ms > 0 && i + 1 != frames.size()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
        }
    }
    return 0;
}

// ------------------------------------------------------------ make-task ---

int cmd_make_task(const std::string & kind, int n, uint64_t seed, int min_len, int max_len, const std::string & out,
                  const std::string & sft_out) {
    TaskGenOptions opts;
    opts.count   = n;
    opts.seed    = seed;
    opts.min_len = min_len;
    opts.max_len = max_len;

    TaskSpec task = gen_task(kind, opts);
    if (!out.empty()) {
        write_task_jsonl(task, out);
        std::fprintf(stderr, "wrote %zu records to %s\n", task.records.size(), out.c_str());
    }
    if (!sft_out.empty()) {
        write_sft_jsonl(task, sft_out);
        std::fprintf(stderr, "wrote SFT data to %s\n", sft_out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"desk-scale diffusion language modeling toolkit"};
    app.require_subcommand(1);

    // ---- train
    TrainCli    t;
    CLI::App *  train = app.add_subcommand("train", "Train a model");
    train->add_option("--config", t.config_path, "Key-value config file");
    t.data_opt = train->add_option("--data", t.data_path, "Dataset path (.jsonl SFT or .txt corpus)");
    train->add_option("--run-dir", t.run_dir, "Run directory (overrides --name)");
    train->add_option("--name", t.name, "Run name under the run root")->capture_default_str();
    train->add_option("--init-from", t.init_from, "Start from an existing checkpoint");
    train->add_flag("--timing", t.timing, "Print wall-clock throughput on stdout");

    t.bind(train, "--objective", "train.objective", t.objective, "Objective: mdlm or bd3lm");
    t.bind(train, "--block-size", "train.block_size", t.tc.block_size, "bd3lm block size");
    t.bind(train, "--lr-peak", "train.lr_peak", t.tc.lr_peak, "Peak learning rate");
    t.bind(train, "--warmup-frac", "train.warmup_frac", t.tc.warmup_frac, "Warmup fraction of total steps");
    t.bind(train, "--total-steps", "train.total_steps", t.tc.total_steps, "Optimizer steps");
    t.bind(train, "--batch-rows", "train.batch_rows", t.tc.batch_rows, "Rows per micro-batch");
    t.bind(train, "--grad-accum", "train.grad_accum", t.tc.grad_accum, "Micro-batches per step");
    t.bind(train, "--weight-decay", "train.weight_decay", t.tc.weight_decay, "Decoupled weight decay");
    t.bind(train, "--beta1", "train.beta1", t.tc.beta1, "Adam beta1");
    t.bind(train, "--beta2", "train.beta2", t.tc.beta2, "Adam beta2");
    t.bind(train, "--grad-clip", "train.grad_clip_norm", t.tc.grad_clip_norm, "Gradient clip norm");
    t.bind(train, "--seed", "train.seed", t.tc.seed, "Training seed");
    t.bind(train, "--eval-every", "train.eval_every", t.tc.eval_every, "Held-out eval interval (0 = off)");
    t.bind(train, "--checkpoint-every", "train.checkpoint_every", t.tc.checkpoint_every,
           "Checkpoint interval (0 = final only)");
    t.bind(train, "--log-every", "train.log_every", t.tc.log_every, "Report interval");
    t.bind(train, "--max-len", "train.max_len", t.tc.max_len, "Row length cap");
    t.bind(train, "--no-attention-mask", "train.no_attention_mask", t.tc.drop_attention_mask,
           "Drop the padding mask (keeps padding visible)");
    t.bind(train, "--eos-fill", "train.eos_fill", t.tc.eos_fill, "Train EOS targets on padding");
    t.bind(train, "--prepend-bos", "train.prepend_bos", t.tc.prepend_bos, "Prepend BOS to every row");
    t.bind(train, "--shared-block-t", "train.shared_block_t", t.tc.shared_block_t,
           "bd3lm ablation: one noise level per row");

    static std::string data_kind = "auto";
    t.bind(train, "--data-kind", "data.kind", data_kind, "sft, pretrain or auto");
    t.rc.set_default("data.path", "");

    t.bind(train, "--d-model", "model.d_model", t.bc.d_model, "Model width");
    t.bind(train, "--n-layers", "model.n_layers", t.bc.n_layers, "Transformer layers");
    t.bind(train, "--n-heads", "model.n_heads", t.bc.n_heads, "Attention heads");
    t.bind(train, "--d-ff", "model.d_ff", t.bc.d_ff, "Feed-forward width");
    t.bind(train, "--max-seq-len", "model.max_seq_len", t.bc.max_seq_len, "Context limit");
    t.bind(train, "--rope-base", "model.rope_base", t.bc.rope_base, "Rotary base");
    t.bind(train, "--right-shift", "model.right_shift_logits", t.bc.right_shift_logits,
           "Read logits from the previous position (AR adaptation)");

    // ---- sample
    CLI::App *   sample = app.add_subcommand("sample", "Generate from a checkpoint");
    std::string  s_ckpt, s_prompt, s_history;
    bool         s_raw = false;
    SamplerFlags s_flags;
    sample->add_option("--ckpt", s_ckpt, "Checkpoint path")->required();
    CLI::Option * s_prompt_opt = sample->add_option("--prompt", s_prompt, "Prompt text (stdin when absent)");
    sample->add_flag("--raw", s_raw, "Skip the chat template");
    sample->add_option("--history-out", s_history, "Write the decode history to this file");
    s_flags.attach(sample);

    // ---- chat
    CLI::App *   chat = app.add_subcommand("chat", "Interactive chat loop");
    std::string  c_ckpt;
    SamplerFlags c_flags;
    chat->add_option("--ckpt", c_ckpt, "Checkpoint path")->required();
    c_flags.attach(chat);

    // ---- eval
    CLI::App *   eval = app.add_subcommand("eval", "Evaluate a checkpoint on a task file");
    std::string  e_ckpt, e_task, e_sweep_knob, e_sweep_values, e_report;
    int          e_mc_samples = 128;
    bool         e_timing     = false;
    SamplerFlags e_flags;
    eval->add_option("--ckpt", e_ckpt, "Checkpoint path")->required();
    eval->add_option("--task", e_task, "Task JSONL file")->required();
    eval->add_option("--mc-samples", e_mc_samples, "Monte-Carlo draws per option")->capture_default_str();
    eval->add_option("--sweep", e_sweep_knob, "Sweep this sampler knob");
    eval->add_option("--values", e_sweep_values, "Comma-separated sweep values");
    eval->add_option("--report-out", e_report, "Write reports as JSON lines");
    eval->add_flag("--timing", e_timing, "Record real tokens/s in reports");
    e_flags.attach(eval);

    // ---- bench
    CLI::App *   bench = app.add_subcommand("bench", "Measure generation throughput");
    std::string  b_ckpt, b_prompts, b_baseline, b_out;
    int          b_warmup = 1;
    SamplerFlags b_flags;
    bench->add_option("--ckpt", b_ckpt, "Checkpoint path")->required();
    bench->add_option("--prompts", b_prompts, "Prompt file, one per line");
    bench->add_option("--warmup", b_warmup, "Untimed warmup generations")->capture_default_str();
    bench->add_option("--baseline", b_baseline, "Baseline bench report for speedup");
    bench->add_option("--out", b_out, "Write the bench report here");
    b_flags.attach(bench);

    // ---- visualize
    CLI::App *  vis = app.add_subcommand("visualize", "Render a decode history");
    std::string v_history, v_mode = "replay";
    int         v_width = 80, v_delay = 0;
    bool        v_no_color = false;
    vis->add_option("--history", v_history, "History record file")->required();
    vis->add_option("--mode", v_mode, "replay or summary")->capture_default_str();
    vis->add_option("--width", v_width, "Cells per line")->capture_default_str();
    vis->add_option("--delay-ms", v_delay, "Frame delay in replay mode")->capture_default_str();
    vis->add_flag("--no-color", v_no_color, "Plain output without escape sequences");

    // ---- make-task
    CLI::App *  mk = app.add_subcommand("make-task", "Generate a synthetic task / SFT dataset");
    std::string m_kind = "copy", m_out, m_sft_out;
    int         m_n = 100, m_min = 4, m_max = 12;
    uint64_t    m_seed = 0;
    mk->add_option("--kind", m_kind, "copy, reverse, addition or retrieval")->capture_default_str();
    mk->add_option("--n", m_n, "Record count")->capture_default_str();
    mk->add_option("--seed", m_seed, "Generator seed")->capture_default_str();
    mk->add_option("--min-len", m_min, "Minimum word length")->capture_default_str();
    mk->add_option("--max-len", m_max, "Maximum word length")->capture_default_str();
    mk->add_option("--out", m_out, "Task file to write");
    mk->add_option("--sft-out", m_sft_out, "SFT JSONL to write");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            return cmd_train(t);
        }
        if (sample->parsed()) {
            return cmd_sample(s_ckpt, s_prompt, s_prompt_opt->count() > 0, s_raw, s_flags, s_history);
        }
        if (chat->parsed()) {
            return cmd_chat(c_ckpt, c_flags);
        }
        if (eval->parsed()) {
            return cmd_eval(e_ckpt, e_task, e_flags, e_mc_samples, e_sweep_knob, e_sweep_values, e_timing, e_report);
        }
        if (bench->parsed()) {
            return cmd_bench(b_ckpt, b_flags, b_prompts, b_warmup, b_baseline, b_out);
        }
        if (vis->parsed()) {
            return cmd_visualize(v_history, v_mode, v_width, v_delay, v_no_color);
        }
        if (mk->parsed()) {
            return cmd_make_task(m_kind, m_n, m_seed, m_min, m_max, m_out, m_sft_out);
        }
    } catch (const dlm::Error & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
