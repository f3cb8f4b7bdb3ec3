#include "dlm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dlm/error.hpp"

namespace dlm {

void SamplerConfig::validate() const {
    check(max_new_tokens >= 0, ErrorKind::config, "sampler: max_new_tokens must be >= 0");
    check(temperature >= 0.0, ErrorKind::config, "sampler: temperature must be >= 0");
    check(top_p > 0.0 && top_p <= 1.0, ErrorKind::config, "sampler: top_p must be in (0, 1]");
    check(cfg_scale >= 0.0, ErrorKind::config, "sampler: cfg_scale must be >= 0");
    check(tokens_per_step >= 1, ErrorKind::config, "sampler: tokens_per_step must be >= 1");
    check(confidence_threshold > 0.0 && confidence_threshold <= 1.0, ErrorKind::config,
          "sampler: confidence_threshold must be in (0, 1]");
    check(min_new_tokens >= 0, ErrorKind::config, "sampler: min_new_tokens must be >= 0");
    if (max_new_tokens > 0) {
        check(steps >= 1, ErrorKind::config, "sampler: steps must be >= 1");
        if (tokens_per_step == 1) {
            check(steps <= max_new_tokens, ErrorKind::config,
                  "sampler: steps " + std::to_string(steps) + " exceeds max_new_tokens " +
                      std::to_string(max_new_tokens));
        }
    }
}

void validate_history(const DecodeHistory & history) {
    std::vector<uint8_t> seen(history.window, 0);
    int64_t              finalized = 0;
    int32_t              prev_remaining = history.window;
    for (size_t s = 0; s < history.steps.size(); s++) {
        const DecodeStep & st = history.steps[s];
        check(st.positions.size() == st.tokens.size() && st.positions.size() == st.confidences.size(),
              ErrorKind::data, "history: ragged step " + std::to_string(s));
        check(!st.positions.empty(), ErrorKind::data, "history: empty step " + std::to_string(s));
        for (int32_t p : st.positions) {
            if (p < 0 || p >= history.window) {
                fail(ErrorKind::data, "history: step " + std::to_string(s) + " finalizes position " +
                                          std::to_string(p) + " outside the window");
            }
            if (seen[p]) {
                fail(ErrorKind::data,
                     "history: step " + std::to_string(s) + " finalizes position " + std::to_string(p) + " twice");
            }
            seen[p] = 1;
        }
        finalized += static_cast<int64_t>(st.positions.size());
        check(st.masked_remaining == history.window - finalized, ErrorKind::data,
              "history: step " + std::to_string(s) + " carries an inconsistent masked_remaining");
        check(st.masked_remaining < prev_remaining, ErrorKind::data,
              "history: masked_remaining must strictly decrease (step " + std::to_string(s) + ")");
        prev_remaining = st.masked_remaining;
    }
    check(finalized == history.window, ErrorKind::data, "history: union of finalized positions misses the window");
}

std::vector<int32_t> replay_history(const DecodeHistory & history) {
    validate_history(history);
    std::vector<int32_t> window(history.window, VocabSpec::mask_id);
    for (const auto & st : history.steps) {
        for (size_t i = 0; i < st.positions.size(); i++) {
            window[st.positions[i]] = st.tokens[i];
        }
    }
    return window;
}

Row adjust_logits(const Row & cond, const Row * uncond, double cfg_scale, bool suppress_eos) {
    Row out = cond;
    if (uncond != nullptr && cfg_scale > 0.0) {
        out += static_cast<float>(cfg_scale) * (cond - *uncond);
    }
    if (suppress_eos) {
        out(VocabSpec::eos_id) = -std::numeric_limits<float>::infinity();
    }
    return out;
}

static Row softmax_row(const Row & logits) {
    float mx = logits.maxCoeff();
    Row   p  = (logits.array() - mx).exp();
    p /= p.sum();
    return p;
}

std::pair<int32_t, double> pick_token(const Row & adjusted, double temperature, double top_p, SplitRng & rng) {
    const int n = static_cast<int>(adjusted.size());

    if (temperature == 0.0) {
        int32_t best = 0;
        for (int i = 1; i < n; i++) {
            if (adjusted(i) > adjusted(best)) {
                best = i;
            }
        }
        Row p = softmax_row(adjusted);
        return {best, static_cast<double>(p(best))};
    }

    Row p = softmax_row(adjusted / static_cast<float>(temperature));

    // nucleus: smallest prefix of the sorted distribution reaching top_p
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p(a) > p(b); });

    double kept_mass = 0.0;
    size_t kept      = 0;
    while (kept < order.size() && kept_mass < top_p) {
        kept_mass += p(order[kept]);
        kept++;
    }

    double u   = rng.uniform() * kept_mass;
    double acc = 0.0;
    int32_t chosen = order[kept - 1];
    for (size_t i = 0; i < kept; i++) {
        acc += p(order[i]);
        if (u < acc) {
            chosen = order[i];
            break;
        }
    }
    return {chosen, p(chosen) / kept_mass};
}

std::vector<int> unmask_schedule(int window, int steps, int tokens_per_step) {
    std::vector<int> ns;
    if (window <= 0) {
        return ns;
    }
    if (tokens_per_step > 1) {
        int left = window;
        while (left > 0) {
            int k = std::min(tokens_per_step, left);
            ns.push_back(k);
            left -= k;
        }
        return ns;
    }
    for (int s = 1; s <= steps; s++) {
        int64_t hi = static_cast<int64_t>(window) * s / steps;
        int64_t lo = static_cast<int64_t>(window) * (s - 1) / steps;
        ns.push_back(static_cast<int>(hi - lo));
    }
    return ns;
}

namespace {

struct Candidate {
    int32_t pos;  // absolute position in the row
    int32_t token;
    double  confidence;
};

// stable ordering: higher confidence first, ties to the lowest position
void sort_candidates(std::vector<Candidate> & cands) {
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate & a, const Candidate & b) {
        if (a.confidence != b.confidence) {
            return a.confidence > b.confidence;
        }
        return a.pos < b.pos;
    });
}

TokenGrid to_grid(const std::vector<int32_t> & row) {
    TokenGrid g(1, static_cast<int>(row.size()));
    for (size_t i = 0; i < row.size(); i++) {
        g.at(0, static_cast<int>(i)) = row[i];
    }
    return g;
}

std::vector<int32_t> make_uncond_row(std::span<const int32_t> prompt, const std::vector<int32_t> & row) {
    std::vector<int32_t> un = row;
    for (size_t i = 0; i < prompt.size(); i++) {
        if (un[i] != VocabSpec::bos_id) {
            un[i] = VocabSpec::mask_id;
        }
    }
    return un;
}

void finalize_steps_retroactively(DecodeHistory & history) {
    int32_t remaining = history.window;
    for (auto & st : history.steps) {
        remaining -= static_cast<int32_t>(st.positions.size());
        st.masked_remaining = remaining;
    }
}

SampleResult empty_result(std::span<const int32_t> prompt) {
    SampleResult res;
    res.tokens.assign(prompt.begin(), prompt.end());
    res.history.prompt.assign(prompt.begin(), prompt.end());
    res.history.window = 0;
    return res;
}

}  // namespace

SampleResult MdlmSampler::sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) {
    cfg.validate();
    const int P = static_cast<int>(prompt.size());
    const int G = cfg.max_new_tokens;
    if (G == 0) {
        return empty_result(prompt);
    }
    check(P + G <= model_.config().max_seq_len, ErrorKind::config,
          "sampler: prompt + max_new_tokens exceeds the model context of " +
              std::to_string(model_.config().max_seq_len));

    std::vector<int32_t> row(prompt.begin(), prompt.end());
    row.resize(P + G, VocabSpec::mask_id);

    const bool           use_cfg = cfg.cfg_scale > 0.0;
    std::vector<int32_t> uncond  = use_cfg ? make_uncond_row(prompt, row) : std::vector<int32_t>{};

    SplitRng rng(cfg.seed);

    DecodeHistory history;
    history.prompt.assign(prompt.begin(), prompt.end());
    history.window = G;

    std::vector<int> ns = unmask_schedule(G, cfg.steps, cfg.tokens_per_step);

    for (size_t s = 0; s < ns.size(); s++) {
        Mat logits = model_.logits(to_grid(row), AttentionMaskSpec::full());
        Mat logits_u;
        if (use_cfg) {
            logits_u = model_.logits(to_grid(uncond), AttentionMaskSpec::full());
        }

        std::vector<Candidate> cands;
        for (int g = 0; g < G; g++) {
            int abs = P + g;
            if (row[abs] != VocabSpec::mask_id) {
                continue;
            }
            Row  cond_row = logits.row(abs);
            Row  un_row;
            if (use_cfg) {
                un_row = logits_u.row(abs);
            }
            Row adj = adjust_logits(cond_row, use_cfg ? &un_row : nullptr, cfg.cfg_scale, g < cfg.min_new_tokens);
            SplitRng prng = rng.split(static_cast<uint64_t>(s)).split(static_cast<uint64_t>(abs));
            auto [tok, conf] = pick_token(adj, cfg.temperature, cfg.top_p, prng);
            cands.push_back({abs, tok, conf});
        }
        sort_candidates(cands);

        int        k = std::min<int>(ns[s], static_cast<int>(cands.size()));
        DecodeStep st;
        for (int i = 0; i < k; i++) {
            row[cands[i].pos] = cands[i].token;
            if (use_cfg) {
                uncond[cands[i].pos] = cands[i].token;
            }
            st.positions.push_back(cands[i].pos - P);
            st.tokens.push_back(cands[i].token);
            st.confidences.push_back(cands[i].confidence);
        }
        if (!st.positions.empty()) {
            history.steps.push_back(std::move(st));
        }
    }

    finalize_steps_retroactively(history);
    return {std::move(row), std::move(history)};
}

SampleResult FastDllmSampler::sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) {
    cfg.validate();
    const int P = static_cast<int>(prompt.size());
    const int G = cfg.max_new_tokens;
    if (G == 0) {
        return empty_result(prompt);
    }
    check(!model_.config().right_shift_logits, ErrorKind::config,
          "fastdllm sampler does not support right-shifted models; use the mdlm sampler");
    check(cfg.cache_block_size > 0, ErrorKind::config, "sampler: cache_block_size must be positive");
    check(G % cfg.cache_block_size == 0, ErrorKind::config,
          "sampler: cache_block_size " + std::to_string(cfg.cache_block_size) + " must divide max_new_tokens " +
              std::to_string(G));
    check(P + G <= model_.config().max_seq_len, ErrorKind::config,
          "sampler: prompt + max_new_tokens exceeds the model context of " +
              std::to_string(model_.config().max_seq_len));

    const int total = P + G;
    const int CB    = cfg.cache_block_size;

    std::vector<int32_t> row(prompt.begin(), prompt.end());
    row.resize(total, VocabSpec::mask_id);

    const bool           use_cfg = cfg.cfg_scale > 0.0;
    std::vector<int32_t> uncond  = use_cfg ? make_uncond_row(prompt, row) : std::vector<int32_t>{};

    KVCache cache_c, cache_u;
    if (cfg.cache_enabled) {
        cache_c             = model_.make_cache(total);
        cache_c.approximate = true;  // suffix K/V go stale within a block by design
        if (use_cfg) {
            cache_u             = model_.make_cache(total);
            cache_u.approximate = true;
        }
    }

    SplitRng rng(cfg.seed);

    DecodeHistory history;
    history.prompt.assign(prompt.begin(), prompt.end());
    history.window = G;

    uint64_t step_counter = 0;
    for (int b = 0; b < G / CB; b++) {
        const int bb = P + b * CB;

        // block entry: one full forward refreshes the cache and serves as
        // the first inner scoring pass
        Mat refresh, refresh_u;
        if (cfg.cache_enabled) {
            refresh = model_.forward_capture(cache_c, to_grid(row), AttentionMaskSpec::full());
            if (use_cfg) {
                refresh_u = model_.forward_capture(cache_u, to_grid(uncond), AttentionMaskSpec::full());
            }
        } else {
            refresh = model_.logits(to_grid(row), AttentionMaskSpec::full());
            if (use_cfg) {
                refresh_u = model_.logits(to_grid(uncond), AttentionMaskSpec::full());
            }
        }

        int inner = 0;
        while (true) {
            std::vector<int> masked;
            for (int i = 0; i < CB; i++) {
                if (row[bb + i] == VocabSpec::mask_id) {
                    masked.push_back(bb + i);
                }
            }
            if (masked.empty()) {
                break;
            }

            Mat  block_logits, block_logits_u;
            bool full_rows = true;  // logits rows indexed by absolute position
            if (inner == 0) {
                block_logits = refresh;
                if (use_cfg) {
                    block_logits_u = refresh_u;
                }
            } else if (cfg.cache_enabled) {
                block_logits = model_.forward_block(cache_c, row, bb, CB, total);
                if (use_cfg) {
                    block_logits_u = model_.forward_block(cache_u, uncond, bb, CB, total);
                }
                full_rows = false;  // rows cover the block only
            } else {
                block_logits = model_.logits(to_grid(row), AttentionMaskSpec::full());
                if (use_cfg) {
                    block_logits_u = model_.logits(to_grid(uncond), AttentionMaskSpec::full());
                }
            }

            std::vector<Candidate> cands;
            for (int abs : masked) {
                int li       = full_rows ? abs : abs - bb;
                Row cond_row = block_logits.row(li);
                Row un_row;
                if (use_cfg) {
                    un_row = block_logits_u.row(li);
                }
                Row adj = adjust_logits(cond_row, use_cfg ? &un_row : nullptr, cfg.cfg_scale,
                                        abs - P < cfg.min_new_tokens);
                SplitRng prng    = rng.split(step_counter).split(static_cast<uint64_t>(abs));
                auto [tok, conf] = pick_token(adj, cfg.temperature, cfg.top_p, prng);
                cands.push_back({abs, tok, conf});
            }
            sort_candidates(cands);

            std::vector<Candidate> chosen;
            if (cfg.parallel_enabled) {
                for (const auto & c : cands) {
                    if (c.confidence > cfg.confidence_threshold) {
                        chosen.push_back(c);
                    }
                }
                if (chosen.empty()) {
                    chosen.push_back(cands.front());
                }
            } else {
                chosen.push_back(cands.front());
            }

            DecodeStep st;
            for (const auto & c : chosen) {
                row[c.pos] = c.token;
                if (use_cfg) {
                    uncond[c.pos] = c.token;
                }
                st.positions.push_back(c.pos - P);
                st.tokens.push_back(c.token);
                st.confidences.push_back(c.confidence);
            }
            history.steps.push_back(std::move(st));
            inner++;
            step_counter++;
        }
    }

    finalize_steps_retroactively(history);
    return {std::move(row), std::move(history)};
}

SampleResult Bd3lmSampler::sample(std::span<const int32_t> prompt, const SamplerConfig & cfg) {
    cfg.validate();
    const int P = static_cast<int>(prompt.size());
    const int G = cfg.max_new_tokens;
    if (G == 0) {
        return empty_result(prompt);
    }
    check(!model_.config().right_shift_logits, ErrorKind::config,
          "bd3lm sampler does not support right-shifted models; use the mdlm sampler");
    check(cfg.cache_block_size > 0, ErrorKind::config, "sampler: cache_block_size must be positive");
    if (trained_block_size_ > 0 && cfg.cache_block_size != trained_block_size_) {
        fail(ErrorKind::config, "bd3lm sampler: block size " + std::to_string(cfg.cache_block_size) +
                                    " does not match the trained layout's " + std::to_string(trained_block_size_));
    }
    check(G % cfg.cache_block_size == 0, ErrorKind::config,
          "sampler: cache_block_size " + std::to_string(cfg.cache_block_size) + " must divide max_new_tokens " +
              std::to_string(G));
    check(P + G <= model_.config().max_seq_len, ErrorKind::config,
          "sampler: prompt + max_new_tokens exceeds the model context of " +
              std::to_string(model_.config().max_seq_len));

    const int CB = cfg.cache_block_size;
    const int K  = G / CB;
    if (cfg.tokens_per_step == 1) {
        check(cfg.steps >= K, ErrorKind::config,
              "sampler: steps " + std::to_string(cfg.steps) + " cannot cover " + std::to_string(K) + " blocks");
    }

    const bool use_cfg = cfg.cfg_scale > 0.0;

    std::vector<int32_t> row(prompt.begin(), prompt.end());
    std::vector<int32_t> uncond;
    if (use_cfg) {
        uncond = make_uncond_row(prompt, row);
    }

    // prompt rows enter the cache with block-causal self-attention over the
    // 0-anchored grid, matching the clean stream's training pattern
    auto extend_prompt = [&](KVCache & cache, const std::vector<int32_t> & seq) {
        model_.extend_cache(cache, std::span<const int32_t>(seq).first(P), CacheExtend::block_causal_anchored, CB);
    };
    auto rebuild_cache = [&](const std::vector<int32_t> & seq, int upto) {
        KVCache cache = model_.make_cache(P + G);
        if (P > 0) {
            extend_prompt(cache, seq);
        }
        for (int begin = P; begin < upto; begin += CB) {
            model_.extend_cache(cache, std::span<const int32_t>(seq).subspan(begin, CB),
                                CacheExtend::prefix_plus_self);
        }
        return cache;
    };

    KVCache cache_c, cache_u;
    if (cfg.cache_enabled) {
        cache_c = model_.make_cache(P + G);
        if (P > 0) {
            extend_prompt(cache_c, row);
        }
        if (use_cfg) {
            cache_u = model_.make_cache(P + G);
            if (P > 0) {
                extend_prompt(cache_u, uncond);
            }
        }
    }

    SplitRng rng(cfg.seed);

    DecodeHistory history;
    history.prompt.assign(prompt.begin(), prompt.end());
    history.window = G;

    uint64_t step_counter = 0;
    int      generated    = 0;
    for (int k = 0; k < K; k++) {
        const int bb = P + k * CB;
        row.resize(bb + CB, VocabSpec::mask_id);
        if (use_cfg) {
            uncond.resize(bb + CB, VocabSpec::mask_id);
        }

        int64_t spb_hi = static_cast<int64_t>(cfg.steps) * (k + 1) / K;
        int64_t spb_lo = static_cast<int64_t>(cfg.steps) * k / K;
        int     spb    = std::max<int>(1, static_cast<int>(spb_hi - spb_lo));
        std::vector<int> ns = unmask_schedule(CB, spb, cfg.tokens_per_step);

        for (size_t s = 0; s < ns.size(); s++) {
            Mat block_logits, block_logits_u;
            if (cfg.cache_enabled) {
                block_logits = model_.forward_block(cache_c, row, bb, CB, bb + CB);
                if (use_cfg) {
                    block_logits_u = model_.forward_block(cache_u, uncond, bb, CB, bb + CB);
                }
            } else {
                KVCache fresh = rebuild_cache(row, bb);
                block_logits  = model_.forward_block(fresh, row, bb, CB, bb + CB);
                if (use_cfg) {
                    KVCache fresh_u = rebuild_cache(uncond, bb);
                    block_logits_u  = model_.forward_block(fresh_u, uncond, bb, CB, bb + CB);
                }
            }

            std::vector<Candidate> cands;
            for (int i = 0; i < CB; i++) {
                int abs = bb + i;
                if (row[abs] != VocabSpec::mask_id) {
                    continue;
                }
                Row cond_row = block_logits.row(i);
                Row un_row;
                if (use_cfg) {
                    un_row = block_logits_u.row(i);
                }
                Row adj = adjust_logits(cond_row, use_cfg ? &un_row : nullptr, cfg.cfg_scale,
                                        abs - P < cfg.min_new_tokens);
                SplitRng prng    = rng.split(step_counter).split(static_cast<uint64_t>(abs));
                auto [tok, conf] = pick_token(adj, cfg.temperature, cfg.top_p, prng);
                cands.push_back({abs, tok, conf});
            }
            sort_candidates(cands);

            int        take = std::min<int>(ns[s], static_cast<int>(cands.size()));
            DecodeStep st;
            for (int i = 0; i < take; i++) {
                row[cands[i].pos] = cands[i].token;
                if (use_cfg) {
                    uncond[cands[i].pos] = cands[i].token;
                }
                st.positions.push_back(cands[i].pos - P);
                st.tokens.push_back(cands[i].token);
                st.confidences.push_back(cands[i].confidence);
            }
            if (!st.positions.empty()) {
                history.steps.push_back(std::move(st));
            }
            step_counter++;
        }
        generated += CB;

        bool all_eos = true;
        for (int i = 0; i < CB; i++) {
            if (row[bb + i] != VocabSpec::eos_id) {
                all_eos = false;
                break;
            }
        }
        if (all_eos) {
            break;
        }
        if (k < K - 1 && cfg.cache_enabled) {
            model_.extend_cache(cache_c, std::span<const int32_t>(row).subspan(bb, CB),
                                CacheExtend::prefix_plus_self);
            if (use_cfg) {
                model_.extend_cache(cache_u, std::span<const int32_t>(uncond).subspan(bb, CB),
                                    CacheExtend::prefix_plus_self);
            }
        }
    }

    history.window = generated;
    finalize_steps_retroactively(history);
    return {std::move(row), std::move(history)};
}

std::unique_ptr<Sampler> make_sampler(const std::string & kind, Backbone & model, const TrainMeta & meta) {
    if (kind == "mdlm") {
        return std::make_unique<MdlmSampler>(model);
    }
    if (kind == "fastdllm") {
        return std::make_unique<FastDllmSampler>(model);
    }
    if (kind == "bd3lm") {
        int trained = meta.objective == "bd3lm" ? meta.block_size : 0;
        return std::make_unique<Bd3lmSampler>(model, trained);
    }
    fail(ErrorKind::config, "unknown sampler \"" + kind + "\" (expected mdlm, fastdllm or bd3lm)");
}

}  // namespace dlm
