#include "dlm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dlm/error.hpp"

namespace dlm {

void TrainConfig::validate() const {
    check(warmup_frac >= 0.0 && warmup_frac < 1.0, ErrorKind::config, "train: warmup_frac must be in [0, 1)");
    check(grad_accum >= 1, ErrorKind::config, "train: grad_accum must be >= 1");
    check(batch_rows >= 1, ErrorKind::config, "train: batch_rows must be >= 1");
    check(total_steps >= 0, ErrorKind::config, "train: total_steps must be >= 0");
    check(lr_peak >= 0.0, ErrorKind::config, "train: lr_peak must be >= 0");
    check(max_len >= 2, ErrorKind::config, "train: max_len must be >= 2");
    if (objective == Objective::bd3lm) {
        check(block_size >= 1, ErrorKind::config, "train: bd3lm needs block_size >= 1");
    }
}

double cosine_lr(int64_t step, const TrainConfig & cfg) {
    check(step >= 0 && step <= cfg.total_steps, ErrorKind::config,
          "cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.total_steps) + "]");
    int64_t warmup = std::llround(cfg.warmup_frac * static_cast<double>(cfg.total_steps));
    if (warmup > 0 && step < warmup) {
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    int64_t rest = cfg.total_steps - warmup;
    if (rest <= 0) {
        return cfg.lr_peak;
    }
    double progress = static_cast<double>(step - warmup) / static_cast<double>(rest);
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(3.141592653589793 * progress));
}

Dataset Dataset::from_sft_file(const std::string & path) {
    Dataset d;
    d.kind = Kind::sft;
    for (const auto & conv : read_sft_jsonl(path)) {
        d.sft.push_back(conversation_to_example(conv));
    }
    check(!d.sft.empty(), ErrorKind::data, "SFT dataset is empty: " + path);
    return d;
}

Dataset Dataset::from_text_file(const std::string & path) {
    Dataset d;
    d.kind = Kind::pretrain;
    for (const auto & doc : read_text_documents(path)) {
        std::vector<int32_t> row;
        row.push_back(VocabSpec::bos_id);
        for (int32_t id : encode(doc)) {
            row.push_back(id);
        }
        row.push_back(VocabSpec::eos_id);
        d.docs.push_back(std::move(row));
    }
    check(!d.docs.empty(), ErrorKind::data, "text corpus is empty: " + path);
    return d;
}

Trainer::Trainer(Backbone & model, Dataset dataset, TrainConfig cfg, std::string run_dir)
    : model_(model), data_(std::move(dataset)), cfg_(cfg), run_dir_(std::move(run_dir)) {
    cfg_.validate();
    check(data_.size() > 0, ErrorKind::data, "trainer: dataset is empty");
}

TrainMeta Trainer::meta() const {
    TrainMeta m;
    m.objective  = cfg_.objective == Objective::mdlm ? "mdlm" : "bd3lm";
    m.block_size = cfg_.objective == Objective::bd3lm ? cfg_.block_size : 0;
    return m;
}

Batch Trainer::assemble_batch(SplitRng & rng) const {
    // leave room for the BOS wrapper so rows never exceed max_len
    int   room = cfg_.prepend_bos ? cfg_.max_len - 1 : cfg_.max_len;
    Batch batch;
    if (data_.kind == Dataset::Kind::sft) {
        std::vector<SftExample> rows;
        for (int i = 0; i < cfg_.batch_rows; i++) {
            rows.push_back(data_.sft[rng.uniform_index(data_.sft.size())]);
        }
        batch = collate_sft(rows, room);
    } else {
        std::vector<std::vector<int32_t>> rows;
        for (int i = 0; i < cfg_.batch_rows; i++) {
            rows.push_back(data_.docs[rng.uniform_index(data_.docs.size())]);
        }
        batch = collate_pretrain(rows, room);
    }

    if (cfg_.eos_fill) {
        batch = eos_label_fill(std::move(batch));
    }
    if (cfg_.drop_attention_mask) {
        batch = wrap_no_attention_mask(std::move(batch));
    }
    if (cfg_.prepend_bos) {
        batch = wrap_prepend_bos(std::move(batch), cfg_.max_len);
    }
    return batch;
}

Trainer::StepOutcome Trainer::accumulate_micro_batch(const Batch & batch, SplitRng & rng, double scale) {
    const MaskablePolicy policy =
        data_.kind == Dataset::Kind::sft ? MaskablePolicy::loss_eligible_only : MaskablePolicy::all_non_pad;
    const BoolGrid * pad = batch.attention_mask ? &*batch.attention_mask : nullptr;

    StepOutcome out;
    for (int r = 0; r < batch.rows(); r++) {
        for (int c = 0; c < batch.cols(); c++) {
            if (!pad || pad->at(r, c)) {
                out.tokens++;
            }
        }
    }

    if (cfg_.objective == Objective::mdlm) {
        SplitRng    time_rng = rng.split("time");
        SplitRng    mask_rng = rng.split("mask");
        auto        t        = sample_time(batch.rows(), time_rng);
        NoisedBatch noised   = forward_mask(batch, t, mask_rng, policy);

        Mat logits = model_.forward(noised.x_t, AttentionMaskSpec::full(), pad, /*record=*/true);
        LossOutput<float> lo = mdlm_loss(logits, noised, batch);
        out.loss             = lo.loss;
        if (lo.masked_tokens > 0) {
            lo.dlogits *= static_cast<float>(scale);
            model_.backward(lo.dlogits);
        }
    } else {
        BlockLayout layout(batch.cols(), cfg_.block_size);
        SplitRng    mask_rng = rng.split("mask");
        NoisedBatch noised   = block_forward_mask(batch, layout, mask_rng, policy, cfg_.shared_block_t);

        TokenGrid cat = concat_streams(noised.x_t, batch.input_ids);
        std::optional<BoolGrid> pad2;
        if (pad) {
            pad2 = duplicate_padding(*pad);
        }
        Mat logits = model_.forward(cat, AttentionMaskSpec::two_stream(cfg_.block_size),
                                    pad2 ? &*pad2 : nullptr, /*record=*/true);
        LossOutput<float> lo = bd3lm_loss(logits, noised, batch, layout);
        out.loss             = lo.loss;
        if (lo.masked_tokens > 0) {
            lo.dlogits *= static_cast<float>(scale);
            model_.backward(lo.dlogits);
        }
    }
    return out;
}

double Trainer::eval_loss(const Batch & batch, SplitRng & rng) {
    const MaskablePolicy policy =
        data_.kind == Dataset::Kind::sft ? MaskablePolicy::loss_eligible_only : MaskablePolicy::all_non_pad;
    const BoolGrid * pad = batch.attention_mask ? &*batch.attention_mask : nullptr;

    if (cfg_.objective == Objective::mdlm) {
        SplitRng    time_rng = rng.split("time");
        SplitRng    mask_rng = rng.split("mask");
        auto        t        = sample_time(batch.rows(), time_rng);
        NoisedBatch noised   = forward_mask(batch, t, mask_rng, policy);
        Mat         logits   = model_.forward(noised.x_t, AttentionMaskSpec::full(), pad, false);
        return mdlm_loss(logits, noised, batch).loss;
    }
    BlockLayout layout(batch.cols(), cfg_.block_size);
    SplitRng    mask_rng = rng.split("mask");
    NoisedBatch noised   = block_forward_mask(batch, layout, mask_rng, policy, cfg_.shared_block_t);
    TokenGrid   cat      = concat_streams(noised.x_t, batch.input_ids);
    std::optional<BoolGrid> pad2;
    if (pad) {
        pad2 = duplicate_padding(*pad);
    }
    Mat logits = model_.forward(cat, AttentionMaskSpec::two_stream(cfg_.block_size), pad2 ? &*pad2 : nullptr, false);
    return bd3lm_loss(logits, noised, batch, layout).loss;
}

void Trainer::train(const std::function<void(const TrainReport &)> & on_report) {
    namespace fs = std::filesystem;

    AdamW opt(cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay);

    std::ofstream report_file;
    if (!run_dir_.empty()) {
        std::error_code ec;
        fs::create_directories(run_dir_, ec);
        if (ec) {
            fail(ErrorKind::io, "cannot create run dir " + run_dir_ + ": " + ec.message());
        }
        report_file.open(run_dir_ + "/report.jsonl", std::ios::trunc);
        if (!report_file) {
            fail(ErrorKind::io, "cannot open report file under " + run_dir_);
        }
    }

    SplitRng root(cfg_.seed);
    SplitRng eval_rng_base = root.split("eval");

    Batch held_out;
    if (cfg_.eval_every > 0) {
        SplitRng hrng = root.split("held_out");
        held_out      = assemble_batch(hrng);
    }

    auto    t0          = std::chrono::steady_clock::now();
    int64_t tokens_seen = 0;

    auto emit = [&](TrainReport rep) {
        if (report_file) {
            nlohmann::json j{{"step", rep.step}, {"loss", rep.loss}, {"lr", rep.lr}, {"tokens_seen", rep.tokens_seen}};
            if (rep.eval_loss) {
                j["eval_loss"] = *rep.eval_loss;
            }
            report_file << j.dump() << "\n";
            report_file.flush();
        }
        if (on_report) {
            on_report(rep);
        }
    };

    auto save = [&](int64_t step) {
        if (run_dir_.empty()) {
            return;
        }
        std::string dir = run_dir_ + "/step-" + std::to_string(step);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) {
            fail(ErrorKind::io, "cannot create checkpoint dir " + dir + ": " + ec.message());
        }
        save_checkpoint(model_, dir + "/model.ckpt", meta());
    };

    for (int64_t step = 0; step < cfg_.total_steps; step++) {
        double lr = cosine_lr(step, cfg_);

        model_.zero_grads();
        SplitRng step_rng = root.split(static_cast<uint64_t>(step));

        double  loss_acc  = 0.0;
        int64_t tok_step  = 0;
        for (int a = 0; a < cfg_.grad_accum; a++) {
            SplitRng micro_rng  = step_rng.split(static_cast<uint64_t>(a));
            SplitRng sample_rng = micro_rng.split("sample");
            Batch    batch      = assemble_batch(sample_rng);
            SplitRng noise_rng  = micro_rng.split("noise");
            auto     oc = accumulate_micro_batch(batch, noise_rng, 1.0 / cfg_.grad_accum);
            loss_acc += oc.loss / cfg_.grad_accum;
            tok_step += oc.tokens;
        }

        if (!std::isfinite(loss_acc)) {
            fail(ErrorKind::numeric, "train: non-finite loss at step " + std::to_string(step) +
                                         " (seed " + std::to_string(cfg_.seed) + ", batch digest " +
                                         std::to_string(step_rng.next_u64() & 0xffff) + ")");
        }

        clip_grad_norm(model_.parameters(), cfg_.grad_clip_norm);
        opt.step(model_.parameters(), lr);
        tokens_seen += tok_step;

        bool logging = (cfg_.log_every > 0 && (step + 1) % cfg_.log_every == 0) || step + 1 == cfg_.total_steps;
        bool evaling = cfg_.eval_every > 0 && ((step + 1) % cfg_.eval_every == 0 || step + 1 == cfg_.total_steps);
        if (logging || evaling) {
            TrainReport rep;
            rep.step        = step + 1;
            rep.loss        = loss_acc;
            rep.lr          = lr;
            rep.tokens_seen = tokens_seen;
            rep.wall_time   = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (evaling) {
                SplitRng er = eval_rng_base.split(static_cast<uint64_t>(step + 1));
                rep.eval_loss = eval_loss(held_out, er);
            }
            emit(rep);
        }
        if (cfg_.checkpoint_every > 0 && (step + 1) % cfg_.checkpoint_every == 0 && step + 1 != cfg_.total_steps) {
            save(step + 1);
        }
    }

    save(cfg_.total_steps);
}

}  // namespace dlm
