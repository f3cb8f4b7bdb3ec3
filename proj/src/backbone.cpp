#include "dlm/backbone.hpp"

#include <cmath>
#include <limits>

#include "dlm/error.hpp"

namespace dlm {

void BackboneConfig::validate() const {
    check(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0 && max_seq_len > 0,
          ErrorKind::config, "backbone config: all sizes must be positive");
    check(d_model % n_heads == 0, ErrorKind::config,
          "backbone config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
              std::to_string(n_heads));
    check(head_dim() % 2 == 0, ErrorKind::config, "backbone config: head_dim must be even for rotary encoding");
}

template <typename S> struct BackboneT<S>::Tape {
    struct Layer {
        MatX<S>              x_in;      // residual stream entering the layer
        MatX<S>              ln1_xhat;
        VecX<S>              ln1_rstd;
        MatX<S>              ln1_out;
        MatX<S>              q, k, v;   // q,k post-rope
        std::vector<MatX<S>> probs;     // per (row, head)
        MatX<S>              attn_cat;  // concatenated head outputs, pre-wo
        MatX<S>              x_mid;     // after attention residual
        MatX<S>              ln2_xhat;
        VecX<S>              ln2_rstd;
        MatX<S>              ln2_out;
        MatX<S>              ff_pre;
        MatX<S>              ff_act;
    };

    TokenGrid          tokens;
    int                batch = 0, width = 0, stream_len = 0;
    std::vector<int>   positions;
    std::vector<Layer> layers;
    MatX<S>            x_final;
    MatX<S>            lnf_xhat;
    VecX<S>            lnf_rstd;
    MatX<S>            lnf_out;
    bool               right_shift = false;
};

template <typename S> BackboneT<S>::BackboneT(BackboneConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    build_params();

    int dh     = cfg_.head_dim();
    int half   = dh / 2;
    rope_cos_  = MatX<S>(cfg_.max_seq_len, half);
    rope_sin_  = MatX<S>(cfg_.max_seq_len, half);
    for (int p = 0; p < cfg_.max_seq_len; p++) {
        for (int i = 0; i < half; i++) {
            double freq = std::pow(static_cast<double>(cfg_.rope_base), -2.0 * i / dh);
            rope_cos_(p, i) = static_cast<S>(std::cos(p * freq));
            rope_sin_(p, i) = static_cast<S>(std::sin(p * freq));
        }
    }
}

template <typename S> BackboneT<S>::~BackboneT() = default;
template <typename S> BackboneT<S>::BackboneT(BackboneT &&) noexcept = default;
template <typename S> BackboneT<S> & BackboneT<S>::operator=(BackboneT &&) noexcept = default;

template <typename S> int BackboneT<S>::add_param(const std::string & name, int rows, int cols) {
    NamedTensor<S> t;
    t.name  = name;
    t.value = MatX<S>::Zero(rows, cols);
    t.grad  = MatX<S>::Zero(rows, cols);
    params_.push_back(std::move(t));
    return static_cast<int>(params_.size()) - 1;
}

template <typename S> void BackboneT<S>::build_params() {
    int d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size;

    embed_idx_ = add_param("embed.weight", v, d);
    for (int l = 0; l < cfg_.n_layers; l++) {
        std::string p = "layers." + std::to_string(l) + ".";
        LayerIdx    ix;
        ix.ln1_g = add_param(p + "ln1.gamma", 1, d);
        ix.ln1_b = add_param(p + "ln1.beta", 1, d);
        ix.wq    = add_param(p + "attn.wq", d, d);
        ix.bq    = add_param(p + "attn.bq", 1, d);
        ix.wk    = add_param(p + "attn.wk", d, d);
        ix.bk    = add_param(p + "attn.bk", 1, d);
        ix.wv    = add_param(p + "attn.wv", d, d);
        ix.bv    = add_param(p + "attn.bv", 1, d);
        ix.wo    = add_param(p + "attn.wo", d, d);
        ix.bo    = add_param(p + "attn.bo", 1, d);
        ix.ln2_g = add_param(p + "ln2.gamma", 1, d);
        ix.ln2_b = add_param(p + "ln2.beta", 1, d);
        ix.w1    = add_param(p + "mlp.w1", d, f);
        ix.b1    = add_param(p + "mlp.b1", 1, f);
        ix.w2    = add_param(p + "mlp.w2", f, d);
        ix.b2    = add_param(p + "mlp.b2", 1, d);
        layer_idx_.push_back(ix);
    }
    lnf_g_idx_  = add_param("final_norm.gamma", 1, d);
    lnf_b_idx_  = add_param("final_norm.beta", 1, d);
    head_w_idx_ = add_param("head.weight", d, v);
    head_b_idx_ = add_param("head.bias", 1, v);

    // identity norms so an uninitialized model is still well-defined
    for (int l = 0; l < cfg_.n_layers; l++) {
        param(layer_idx_[l].ln1_g).setOnes();
        param(layer_idx_[l].ln2_g).setOnes();
    }
    param(lnf_g_idx_).setOnes();
}

template <typename S> void BackboneT<S>::init_parameters(SplitRng rng) {
    const double base_std  = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg_.n_layers);

    for (auto & p : params_) {
        bool is_resid_proj = p.name.ends_with("attn.wo") || p.name.ends_with("mlp.w2");
        bool is_weight     = p.name.ends_with("weight") || p.name.ends_with("wq") || p.name.ends_with("wk") ||
                         p.name.ends_with("wv") || p.name.ends_with("wo") || p.name.ends_with("w1") ||
                         p.name.ends_with("w2");
        if (!is_weight) {
            continue;  // biases zero, norm scales stay at one
        }
        SplitRng pr  = rng.split(p.name);
        double   std = is_resid_proj ? resid_std : base_std;
        for (Eigen::Index i = 0; i < p.value.rows(); i++) {
            for (Eigen::Index j = 0; j < p.value.cols(); j++) {
                p.value(i, j) = static_cast<S>(pr.gaussian() * std);
            }
        }
    }
}

template <typename S> void BackboneT<S>::zero_grads() {
    for (auto & p : params_) {
        p.grad.setZero();
    }
}

template <typename S> int64_t BackboneT<S>::parameter_count() const {
    int64_t n = 0;
    for (const auto & p : params_) {
        n += static_cast<int64_t>(p.value.rows()) * p.value.cols();
    }
    return n;
}

template <typename S>
void BackboneT<S>::rope_apply(MatX<S> & x, std::span<const int> positions, bool inverse) const {
    int dh   = cfg_.head_dim();
    int half = dh / 2;
    for (Eigen::Index r = 0; r < x.rows(); r++) {
        int p = positions[r];
        for (int h = 0; h < cfg_.n_heads; h++) {
            S * row = x.row(r).data() + h * dh;
            for (int i = 0; i < half; i++) {
                S c  = rope_cos_(p, i);
                S s  = inverse ? -rope_sin_(p, i) : rope_sin_(p, i);
                S x0 = row[2 * i];
                S x1 = row[2 * i + 1];
                row[2 * i]     = x0 * c - x1 * s;
                row[2 * i + 1] = x0 * s + x1 * c;
            }
        }
    }
}

namespace {

template <typename S>
void layernorm_forward(const MatX<S> & x, const MatX<S> & g, const MatX<S> & b, MatX<S> & out, MatX<S> & xhat,
                       VecX<S> & rstd) {
    const S eps = static_cast<S>(1e-5);
    out.resize(x.rows(), x.cols());
    xhat.resize(x.rows(), x.cols());
    rstd.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); r++) {
        S mean = x.row(r).mean();
        S var  = (x.row(r).array() - mean).square().mean();
        S rs   = S(1) / std::sqrt(var + eps);
        rstd(r) = rs;
        xhat.row(r) = (x.row(r).array() - mean) * rs;
        out.row(r)  = xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
    }
}

// accumulates into dx, dg, db
template <typename S>
void layernorm_backward(const MatX<S> & dy, const MatX<S> & xhat, const VecX<S> & rstd, const MatX<S> & g,
                        MatX<S> & dx, MatX<S> & dg, MatX<S> & db) {
    Eigen::Index n = dy.cols();
    for (Eigen::Index r = 0; r < dy.rows(); r++) {
        RowX<S> dxhat = dy.row(r).cwiseProduct(g.row(0));
        S       m1    = dxhat.mean();
        S       m2    = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) += ((dxhat.array() - m1) - xhat.row(r).array() * m2).matrix() * rstd(r);
        dg.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
        db.row(0) += dy.row(r);
    }
    (void) n;
}

}  // namespace

template <typename S>
MatX<S> BackboneT<S>::forward(const TokenGrid & tokens, const AttentionMaskSpec & spec, const BoolGrid * key_padding,
                              bool record) {
    const int B  = tokens.rows;
    const int Lp = tokens.cols;  // row width as given (2L for two-stream input)
    check(B > 0 && Lp > 0, ErrorKind::config, "forward: empty token grid");

    const bool two_stream = spec.is_two_stream();
    if (two_stream) {
        check(Lp % 2 == 0, ErrorKind::config, "forward: two-stream input width must be even");
    }
    const int L = two_stream ? Lp / 2 : Lp;
    check(Lp <= cfg_.max_seq_len, ErrorKind::config,
          "forward: sequence width " + std::to_string(Lp) + " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    for (int r = 0; r < B; r++) {
        for (int c = 0; c < Lp; c++) {
            int32_t id = tokens.at(r, c);
            if (id < 0 || id >= cfg_.vocab_size) {
                fail(ErrorKind::data, "forward: token id " + std::to_string(id) + " at (" + std::to_string(r) + "," +
                                          std::to_string(c) + ") outside vocab of " + std::to_string(cfg_.vocab_size));
            }
        }
    }
    if (key_padding) {
        check(key_padding->rows == B && (key_padding->cols == Lp || key_padding->cols == L), ErrorKind::config,
              "forward: key_padding shape mismatch");
    }

    BoolGrid vis = build_attention_mask(spec, two_stream ? L : Lp);
    check(vis.rows == Lp, ErrorKind::config, "forward: attention mask width mismatch");

    std::vector<int> positions(Lp);
    for (int i = 0; i < Lp; i++) {
        positions[i] = two_stream ? (i % L) : i;
    }

    const int d  = cfg_.d_model;
    const int H  = cfg_.n_heads;
    const int dh = cfg_.head_dim();
    const int N  = B * Lp;
    const S   scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const S   ninf  = -std::numeric_limits<S>::infinity();

    forward_positions_ += N;

    auto tape = std::make_unique<Tape>();
    tape->tokens      = tokens;
    tape->batch       = B;
    tape->width       = Lp;
    tape->stream_len  = L;
    tape->positions   = positions;
    tape->right_shift = cfg_.right_shift_logits;
    tape->layers.resize(cfg_.n_layers);

    // embedding gather
    MatX<S> x(N, d);
    {
        const MatX<S> & emb = param(embed_idx_);
        for (int r = 0; r < B; r++) {
            for (int c = 0; c < Lp; c++) {
                x.row(r * Lp + c) = emb.row(tokens.at(r, c));
            }
        }
    }

    std::vector<int> row_positions(N);
    for (int r = 0; r < B; r++) {
        for (int c = 0; c < Lp; c++) {
            row_positions[r * Lp + c] = positions[c];
        }
    }

    // per-batch-row additive bias: visibility plus key padding, self always visible
    std::vector<MatX<S>> bias(B);
    for (int r = 0; r < B; r++) {
        bias[r] = MatX<S>::Zero(Lp, Lp);
        for (int i = 0; i < Lp; i++) {
            for (int j = 0; j < Lp; j++) {
                bool ok = vis.at(i, j) != 0;
                if (ok && key_padding && j != i) {
                    int jc = key_padding->cols == Lp ? j : positions[j];
                    ok     = key_padding->at(r, jc) != 0;
                }
                if (!ok) {
                    bias[r](i, j) = ninf;
                }
            }
        }
    }

    for (int l = 0; l < cfg_.n_layers; l++) {
        const LayerIdx & ix = layer_idx_[l];
        auto &           lt = tape->layers[l];

        lt.x_in = x;
        layernorm_forward(x, param(ix.ln1_g), param(ix.ln1_b), lt.ln1_out, lt.ln1_xhat, lt.ln1_rstd);

        lt.q.noalias() = lt.ln1_out * param(ix.wq);
        lt.q.rowwise() += param(ix.bq).row(0);
        lt.k.noalias() = lt.ln1_out * param(ix.wk);
        lt.k.rowwise() += param(ix.bk).row(0);
        lt.v.noalias() = lt.ln1_out * param(ix.wv);
        lt.v.rowwise() += param(ix.bv).row(0);
        rope_apply(lt.q, row_positions, false);
        rope_apply(lt.k, row_positions, false);

        if (capture_request_) {
            capture_request_->layers[l].k.topRows(Lp) = lt.k;
            capture_request_->layers[l].v.topRows(Lp) = lt.v;
        }

        lt.attn_cat.resize(N, d);
        lt.probs.assign(static_cast<size_t>(B) * H, MatX<S>());
        for (int r = 0; r < B; r++) {
            for (int h = 0; h < H; h++) {
                auto    qh = lt.q.block(r * Lp, h * dh, Lp, dh);
                auto    kh = lt.k.block(r * Lp, h * dh, Lp, dh);
                auto    vh = lt.v.block(r * Lp, h * dh, Lp, dh);
                MatX<S> sc = qh * kh.transpose() * scale + bias[r];
                softmax_rows(sc);
                lt.attn_cat.block(r * Lp, h * dh, Lp, dh).noalias() = sc * vh;
                lt.probs[static_cast<size_t>(r) * H + h]            = std::move(sc);
            }
        }

        x.noalias() += lt.attn_cat * param(ix.wo);
        x.rowwise() += param(ix.bo).row(0);
        lt.x_mid = x;

        layernorm_forward(x, param(ix.ln2_g), param(ix.ln2_b), lt.ln2_out, lt.ln2_xhat, lt.ln2_rstd);
        lt.ff_pre.noalias() = lt.ln2_out * param(ix.w1);
        lt.ff_pre.rowwise() += param(ix.b1).row(0);
        lt.ff_act = lt.ff_pre.unaryExpr([](S t) { return gelu(t); });
        x.noalias() += lt.ff_act * param(ix.w2);
        x.rowwise() += param(ix.b2).row(0);
    }

    tape->x_final = x;
    layernorm_forward(x, param(lnf_g_idx_), param(lnf_b_idx_), tape->lnf_out, tape->lnf_xhat, tape->lnf_rstd);

    MatX<S> logits(N, cfg_.vocab_size);
    logits.noalias() = tape->lnf_out * param(head_w_idx_);
    logits.rowwise() += param(head_b_idx_).row(0);

    if (cfg_.right_shift_logits) {
        // output i reads the logits computed at i-1 within each stream
        // segment; position 0 keeps its own output
        int segs = two_stream ? 2 : 1;
        MatX<S> shifted(N, cfg_.vocab_size);
        for (int r = 0; r < B; r++) {
            for (int s = 0; s < segs; s++) {
                int base = r * Lp + s * L;
                shifted.row(base) = logits.row(base);
                for (int i = 1; i < L; i++) {
                    shifted.row(base + i) = logits.row(base + i - 1);
                }
            }
        }
        logits = std::move(shifted);
    }

    if (record) {
        tape_ = std::move(tape);
    } else {
        tape_.reset();
    }
    return logits;
}

template <typename S>
Mat BackboneT<S>::logits(const TokenGrid & tokens, const AttentionMaskSpec & spec, const BoolGrid * key_padding) {
    MatX<S> out = forward(tokens, spec, key_padding, false);
    if constexpr (std::is_same_v<S, float>) {
        return out;
    } else {
        return out.template cast<float>();
    }
}

template <typename S> void BackboneT<S>::backward(const MatX<S> & dlogits) {
    check(tape_ != nullptr, ErrorKind::config, "backward: no recorded forward pass");
    const Tape & t = *tape_;

    const int B  = t.batch;
    const int Lp = t.width;
    const int L  = t.stream_len;
    const int d  = cfg_.d_model;
    const int H  = cfg_.n_heads;
    const int dh = cfg_.head_dim();
    const int N  = B * Lp;
    const S   scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    check(dlogits.rows() == N && dlogits.cols() == cfg_.vocab_size, ErrorKind::config,
          "backward: dlogits shape mismatch");

    std::vector<int> row_positions(N);
    for (int r = 0; r < B; r++) {
        for (int c = 0; c < Lp; c++) {
            row_positions[r * Lp + c] = t.positions[c];
        }
    }

    MatX<S> dl = dlogits;
    if (t.right_shift) {
        // invert the shift: pre-shift row i feeds post-shift row i+1
        // (and pre-shift row 0 also feeds post-shift row 0)
        MatX<S> un = MatX<S>::Zero(N, cfg_.vocab_size);
        int     segs = (L != Lp) ? 2 : 1;
        for (int r = 0; r < B; r++) {
            for (int s = 0; s < segs; s++) {
                int base = r * Lp + s * L;
                un.row(base) = dl.row(base);
                for (int i = 1; i < L; i++) {
                    un.row(base + i - 1) += dl.row(base + i);
                }
            }
        }
        dl = std::move(un);
    }

    // head
    grad(head_w_idx_).noalias() += t.lnf_out.transpose() * dl;
    grad(head_b_idx_).row(0) += dl.colwise().sum();
    MatX<S> dx_out;
    dx_out.noalias() = dl * param(head_w_idx_).transpose();

    MatX<S> dx = MatX<S>::Zero(N, d);
    layernorm_backward(dx_out, t.lnf_xhat, t.lnf_rstd, param(lnf_g_idx_), dx, grad(lnf_g_idx_), grad(lnf_b_idx_));

    for (int l = cfg_.n_layers - 1; l >= 0; l--) {
        const LayerIdx & ix = layer_idx_[l];
        const auto &     lt = t.layers[l];

        // feed-forward
        MatX<S> dff_out = dx;  // residual add passes dx through unchanged
        MatX<S> dact;
        dact.noalias() = dff_out * param(ix.w2).transpose();
        grad(ix.w2).noalias() += lt.ff_act.transpose() * dff_out;
        grad(ix.b2).row(0) += dff_out.colwise().sum();

        MatX<S> dpre = dact.cwiseProduct(lt.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }));
        grad(ix.w1).noalias() += lt.ln2_out.transpose() * dpre;
        grad(ix.b1).row(0) += dpre.colwise().sum();
        MatX<S> dln2_out;
        dln2_out.noalias() = dpre * param(ix.w1).transpose();

        layernorm_backward(dln2_out, lt.ln2_xhat, lt.ln2_rstd, param(ix.ln2_g), dx, grad(ix.ln2_g), grad(ix.ln2_b));

        // attention
        MatX<S> dattn_out = dx;
        grad(ix.wo).noalias() += lt.attn_cat.transpose() * dattn_out;
        grad(ix.bo).row(0) += dattn_out.colwise().sum();
        MatX<S> dcat;
        dcat.noalias() = dattn_out * param(ix.wo).transpose();

        MatX<S> dq = MatX<S>::Zero(N, d), dk = MatX<S>::Zero(N, d), dv = MatX<S>::Zero(N, d);
        for (int r = 0; r < B; r++) {
            for (int h = 0; h < H; h++) {
                const MatX<S> & p  = lt.probs[static_cast<size_t>(r) * H + h];
                auto            doh = dcat.block(r * Lp, h * dh, Lp, dh);
                auto            qh  = lt.q.block(r * Lp, h * dh, Lp, dh);
                auto            kh  = lt.k.block(r * Lp, h * dh, Lp, dh);
                auto            vh  = lt.v.block(r * Lp, h * dh, Lp, dh);

                MatX<S> dp;
                dp.noalias() = doh * vh.transpose();
                dv.block(r * Lp, h * dh, Lp, dh).noalias() = p.transpose() * doh;

                VecX<S> rowdot = (dp.cwiseProduct(p)).rowwise().sum();
                MatX<S> ds     = p.cwiseProduct(dp.colwise() - rowdot);

                dq.block(r * Lp, h * dh, Lp, dh).noalias() = ds * kh * scale;
                dk.block(r * Lp, h * dh, Lp, dh).noalias() = ds.transpose() * qh * scale;
            }
        }

        rope_apply(dq, row_positions, true);
        rope_apply(dk, row_positions, true);

        grad(ix.wq).noalias() += lt.ln1_out.transpose() * dq;
        grad(ix.bq).row(0) += dq.colwise().sum();
        grad(ix.wk).noalias() += lt.ln1_out.transpose() * dk;
        grad(ix.bk).row(0) += dk.colwise().sum();
        grad(ix.wv).noalias() += lt.ln1_out.transpose() * dv;
        grad(ix.bv).row(0) += dv.colwise().sum();

        MatX<S> dln1_out;
        dln1_out.noalias() = dq * param(ix.wq).transpose();
        dln1_out.noalias() += dk * param(ix.wk).transpose();
        dln1_out.noalias() += dv * param(ix.wv).transpose();

        layernorm_backward(dln1_out, lt.ln1_xhat, lt.ln1_rstd, param(ix.ln1_g), dx, grad(ix.ln1_g), grad(ix.ln1_b));
    }

    // embedding scatter
    MatX<S> & demb = grad(embed_idx_);
    for (int r = 0; r < B; r++) {
        for (int c = 0; c < Lp; c++) {
            demb.row(t.tokens.at(r, c)) += dx.row(r * Lp + c);
        }
    }
}

// --- incremental inference ---

template <typename S> KVCacheT<S> BackboneT<S>::make_cache(int capacity) const {
    check(capacity > 0 && capacity <= cfg_.max_seq_len, ErrorKind::config,
          "make_cache: capacity must be in (0, max_seq_len]");
    KVCacheT<S> cache;
    cache.layers.resize(cfg_.n_layers);
    for (auto & l : cache.layers) {
        l.k = MatX<S>::Zero(capacity, cfg_.d_model);
        l.v = MatX<S>::Zero(capacity, cfg_.d_model);
    }
    cache.tag_tokens.assign(capacity, -1);
    return cache;
}

template <typename S>
void BackboneT<S>::validate_cache(const KVCacheT<S> & cache, std::span<const int32_t> full_row, int skip_begin,
                                  int skip_end, int attend_len) const {
    if (cache.approximate) {
        return;
    }
    int upto = std::min(attend_len, cache.len);
    for (int j = 0; j < upto; j++) {
        if (j >= skip_begin && j < skip_end) {
            continue;
        }
        if (j >= static_cast<int>(full_row.size()) || cache.tag_tokens[j] != full_row[j]) {
            fail(ErrorKind::numeric, "kv cache stale at position " + std::to_string(j) +
                                         ": cached token does not match the current sequence");
        }
    }
}

template <typename S>
MatX<S> BackboneT<S>::run_rows(KVCacheT<S> & cache, std::span<const int32_t> row_tokens, int row_begin, int attend_len,
                               CacheExtend mode, int block_size, bool store, bool want_logits) {
    const int n  = static_cast<int>(row_tokens.size());
    const int d  = cfg_.d_model;
    const int H  = cfg_.n_heads;
    const int dh = cfg_.head_dim();
    const S   scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const S   ninf  = -std::numeric_limits<S>::infinity();

    check(n > 0, ErrorKind::config, "run_rows: empty row span");
    check(attend_len >= row_begin + n, ErrorKind::config, "run_rows: attend_len shorter than the block itself");
    check(attend_len <= cache.capacity(), ErrorKind::config, "run_rows: attend_len exceeds cache capacity");
    check(attend_len <= cfg_.max_seq_len, ErrorKind::config, "run_rows: attend_len exceeds max_seq_len");
    for (int32_t id : row_tokens) {
        check(id >= 0 && id < cfg_.vocab_size, ErrorKind::data,
              "run_rows: token id " + std::to_string(id) + " outside vocab");
    }

    forward_positions_ += n;

    std::vector<int> positions(n);
    for (int i = 0; i < n; i++) {
        positions[i] = row_begin + i;
    }

    // visibility bias rows [n, attend_len]
    MatX<S> bias = MatX<S>::Zero(n, attend_len);
    if (mode == CacheExtend::block_causal_anchored) {
        check(block_size > 0, ErrorKind::config, "run_rows: block_causal mode needs a block size");
        for (int i = 0; i < n; i++) {
            int bi = (row_begin + i) / block_size;
            for (int j = 0; j < attend_len; j++) {
                if (j / block_size > bi) {
                    bias(i, j) = ninf;
                }
            }
        }
    }

    MatX<S> x(n, d);
    {
        const MatX<S> & emb = param(embed_idx_);
        for (int i = 0; i < n; i++) {
            x.row(i) = emb.row(row_tokens[i]);
        }
    }

    MatX<S> ln_out, xhat, k_all(attend_len, d), v_all(attend_len, d);
    VecX<S> rstd;

    for (int l = 0; l < cfg_.n_layers; l++) {
        const LayerIdx & ix = layer_idx_[l];

        layernorm_forward(x, param(ix.ln1_g), param(ix.ln1_b), ln_out, xhat, rstd);

        MatX<S> q, k, v;
        q.noalias() = ln_out * param(ix.wq);
        q.rowwise() += param(ix.bq).row(0);
        k.noalias() = ln_out * param(ix.wk);
        k.rowwise() += param(ix.bk).row(0);
        v.noalias() = ln_out * param(ix.wv);
        v.rowwise() += param(ix.bv).row(0);
        rope_apply(q, positions, false);
        rope_apply(k, positions, false);

        // assemble attended columns: cache rows with the fresh block overlaid
        int cached = std::min(cache.len, attend_len);
        if (cached > 0) {
            k_all.topRows(cached) = cache.layers[l].k.topRows(cached);
            v_all.topRows(cached) = cache.layers[l].v.topRows(cached);
        }
        k_all.middleRows(row_begin, n) = k;
        v_all.middleRows(row_begin, n) = v;

        if (store) {
            cache.layers[l].k.middleRows(row_begin, n) = k;
            cache.layers[l].v.middleRows(row_begin, n) = v;
        }

        MatX<S> cat(n, d);
        for (int h = 0; h < H; h++) {
            auto    qh = q.block(0, h * dh, n, dh);
            auto    kh = k_all.block(0, h * dh, attend_len, dh);
            auto    vh = v_all.block(0, h * dh, attend_len, dh);
            MatX<S> sc = qh * kh.transpose() * scale + bias;
            softmax_rows(sc);
            cat.block(0, h * dh, n, dh).noalias() = sc * vh;
        }

        x.noalias() += cat * param(ix.wo);
        x.rowwise() += param(ix.bo).row(0);

        layernorm_forward(x, param(ix.ln2_g), param(ix.ln2_b), ln_out, xhat, rstd);
        MatX<S> pre;
        pre.noalias() = ln_out * param(ix.w1);
        pre.rowwise() += param(ix.b1).row(0);
        MatX<S> act = pre.unaryExpr([](S t) { return gelu(t); });
        x.noalias() += act * param(ix.w2);
        x.rowwise() += param(ix.b2).row(0);
    }

    if (store) {
        for (int i = 0; i < n; i++) {
            cache.tag_tokens[row_begin + i] = row_tokens[i];
        }
        cache.len = std::max(cache.len, row_begin + n);
    }

    if (!want_logits) {
        return {};
    }
    layernorm_forward(x, param(lnf_g_idx_), param(lnf_b_idx_), ln_out, xhat, rstd);
    MatX<S> logits(n, cfg_.vocab_size);
    logits.noalias() = ln_out * param(head_w_idx_);
    logits.rowwise() += param(head_b_idx_).row(0);
    return logits;
}

template <typename S>
void BackboneT<S>::extend_cache(KVCacheT<S> & cache, std::span<const int32_t> tokens, CacheExtend mode,
                                int block_size) {
    int begin = cache.len;
    run_rows(cache, tokens, begin, begin + static_cast<int>(tokens.size()), mode, block_size, /*store=*/true,
             /*want_logits=*/false);
}

template <typename S>
MatX<S> BackboneT<S>::forward_capture(KVCacheT<S> & cache, const TokenGrid & tokens, const AttentionMaskSpec & spec) {
    check(tokens.rows == 1, ErrorKind::config, "forward_capture: single-sequence caches only");
    check(tokens.cols <= cache.capacity(), ErrorKind::config, "forward_capture: cache capacity too small");

    capture_request_ = &cache;
    MatX<S> out;
    try {
        out = forward(tokens, spec, nullptr, false);
    } catch (...) {
        capture_request_ = nullptr;
        throw;
    }
    capture_request_ = nullptr;

    cache.len = tokens.cols;
    for (int i = 0; i < tokens.cols; i++) {
        cache.tag_tokens[i] = tokens.at(0, i);
    }
    return out;
}

template <typename S>
MatX<S> BackboneT<S>::forward_block(KVCacheT<S> & cache, std::span<const int32_t> full_row, int block_begin,
                                    int block_len, int attend_len) {
    check(block_begin >= 0 && block_len > 0 && block_begin + block_len <= static_cast<int>(full_row.size()),
          ErrorKind::config, "forward_block: block range outside the sequence");
    validate_cache(cache, full_row, block_begin, block_begin + block_len, attend_len);
    return run_rows(cache, full_row.subspan(block_begin, block_len), block_begin, attend_len,
                    CacheExtend::prefix_plus_self, 0, /*store=*/false, /*want_logits=*/true);
}

template class BackboneT<float>;
template class BackboneT<double>;

}  // namespace dlm
