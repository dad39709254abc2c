#include "a3sn/layer.hpp"

#include <cmath>

namespace a3sn {

const char* to_string(AblationMode m) {
    switch (m) {
        case AblationMode::Full: return "full";
        case AblationMode::NoOriginal: return "no-original";
        case AblationMode::NoAmplified: return "no-amplified";
        case AblationMode::NoGatedFusion: return "no-gated-fusion";
    }
    throw ConfigError("unknown ablation mode value");
}

AblationMode ablation_from_string(const std::string& s) {
    if (s == "full") return AblationMode::Full;
    if (s == "no-original") return AblationMode::NoOriginal;
    if (s == "no-amplified") return AblationMode::NoAmplified;
    if (s == "no-gated-fusion") return AblationMode::NoGatedFusion;
    throw ConfigError("unknown ablation mode \"" + s +
                      "\" (expected full, no-original, no-amplified, no-gated-fusion)");
}

void LayerParams::for_each_param(const std::string& prefix,
                                 const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const std::string hp = prefix + "head" + std::to_string(i) + ".";
        HeadParams& h = heads[i];
        fn(hp + "w_q", h.w_q);
        fn(hp + "w_k", h.w_k);
        fn(hp + "w_v", h.w_v);
        fn(hp + "gate_ori_kernel", h.gate_ori_kernel);
        fn(hp + "gate_ori_bias", h.gate_ori_bias);
        fn(hp + "gate_amp_kernel", h.gate_amp_kernel);
        fn(hp + "gate_amp_bias", h.gate_amp_bias);
        fn(hp + "fuse_w", h.fuse_w);
        fn(hp + "fuse_b", h.fuse_b);
    }
    fn(prefix + "w_h", w_h);
    fn(prefix + "ffn_w1", ffn_w1);
    fn(prefix + "ffn_b1", ffn_b1);
    fn(prefix + "ffn_w2", ffn_w2);
    fn(prefix + "ffn_b2", ffn_b2);
    fn(prefix + "ln_attn_gamma", ln_attn_gamma);
    fn(prefix + "ln_attn_beta", ln_attn_beta);
    fn(prefix + "ln_mha_gamma", ln_mha_gamma);
    fn(prefix + "ln_mha_beta", ln_mha_beta);
    fn(prefix + "ln_out_gamma", ln_out_gamma);
    fn(prefix + "ln_out_beta", ln_out_beta);
}

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::vector<std::size_t> shape, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return Tensor::uniform(std::move(shape), -bound, bound, rng, true);
}

} // namespace

LayerParams make_layer_params(std::size_t d_model, std::size_t n_heads, std::size_t d_ff,
                              std::size_t gate_kernel_width, Rng& rng) {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("head count " + std::to_string(n_heads) + " must divide d_model " +
                          std::to_string(d_model));
    }
    const std::size_t d_k = d_model / n_heads;
    const std::size_t w = gate_kernel_width;
    LayerParams p;
    p.heads.resize(n_heads);
    for (HeadParams& h : p.heads) {
        h.w_q = xavier(d_model, d_k, {d_model, d_k}, rng);
        h.w_k = xavier(d_model, d_k, {d_model, d_k}, rng);
        h.w_v = xavier(d_model, d_k, {d_model, d_k}, rng);
        h.gate_ori_kernel = xavier(w * d_k, d_k, {w, d_k, d_k}, rng);
        h.gate_ori_bias = Tensor::zeros({d_k}, true);
        h.gate_amp_kernel = xavier(w * d_k, d_k, {w, d_k, d_k}, rng);
        h.gate_amp_bias = Tensor::zeros({d_k}, true);
        h.fuse_w = xavier(2 * d_k, d_k, {2 * d_k, d_k}, rng);
        h.fuse_b = Tensor::zeros({d_k}, true);
    }
    p.w_h = xavier(n_heads * d_k, d_model, {n_heads * d_k, d_model}, rng);
    p.ffn_w1 = xavier(d_model, d_ff, {d_model, d_ff}, rng);
    p.ffn_b1 = Tensor::zeros({d_ff}, true);
    p.ffn_w2 = xavier(d_ff, d_model, {d_ff, d_model}, rng);
    p.ffn_b2 = Tensor::zeros({d_model}, true);
    p.ln_attn_gamma = Tensor::full({d_model}, 1.0, true);
    p.ln_attn_beta = Tensor::zeros({d_model}, true);
    p.ln_mha_gamma = Tensor::full({d_model}, 1.0, true);
    p.ln_mha_beta = Tensor::zeros({d_model}, true);
    p.ln_out_gamma = Tensor::full({d_model}, 1.0, true);
    p.ln_out_beta = Tensor::zeros({d_model}, true);
    return p;
}

AttentionScores attention_scores(Tape& tape, const Tensor& h, const LayerParams& params,
                                 const std::vector<double>& pad_mask, double ln_eps) {
    if (h.rank() != 2) throw DimensionError("attention_scores: input must be [N×d_model]");
    const std::size_t n = h.dim(0);
    if (n == 0 || pad_mask.size() != n) {
        throw DataError("attention_scores: empty input or mask length mismatch");
    }
    const std::size_t d_k = params.heads.front().w_q.dim(1);
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(d_k));

    // Additive key mask: 0 on real positions, -1e9 on PAD keys.
    Tensor mask_add = Tensor::zeros({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        if (pad_mask[j] == 0.0) {
            for (std::size_t i = 0; i < n; ++i) mask_add.at(i, j) = -1e9;
        }
    }

    AttentionScores out;
    out.normed_input = layer_norm(tape, h, params.ln_attn_gamma, params.ln_attn_beta, ln_eps);
    for (const HeadParams& hp : params.heads) {
        Tensor q = matmul(tape, out.normed_input, hp.w_q);
        Tensor k = matmul(tape, out.normed_input, hp.w_k);
        Tensor v = matmul(tape, out.normed_input, hp.w_v);
        Tensor logits = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dk);
        out.scores.push_back(softmax_rows(tape, add(tape, logits, mask_add)));
        out.values.push_back(v);
    }
    return out;
}

std::pair<Tensor, Tensor> amplified_attention(Tape& tape, const Tensor& score_ori,
                                              const Tensor& amplify, const Tensor& v) {
    Tensor score_amp = mul(tape, score_ori, amplify);
    Tensor head_amp = matmul(tape, score_amp, v);
    return {head_amp, score_amp};
}

namespace {

Tensor gate_map(Tape& tape, const Tensor& head, const Tensor& kernel, const Tensor& bias) {
    return sigmoid(tape, conv1d_same(tape, head, kernel, bias));
}

// Gated blend: g1 ⊙ a + (1 - g1) ⊙ g2 ⊙ b.
Tensor gated_blend(Tape& tape, const Tensor& g1, const Tensor& a, const Tensor& g2,
                   const Tensor& b) {
    Tensor one = Tensor::full(g1.shape(), 1.0);
    Tensor keep = mul(tape, g1, a);
    Tensor pass = mul(tape, sub(tape, one, g1), mul(tape, g2, b));
    return add(tape, keep, pass);
}

} // namespace

GatedFusionResult gated_fusion(Tape& tape, const Tensor& head_ori, const Tensor& head_amp,
                               const HeadParams& hp) {
    GatedFusionResult r;
    r.gate_ori = gate_map(tape, head_ori, hp.gate_ori_kernel, hp.gate_ori_bias);
    r.gate_amp = gate_map(tape, head_amp, hp.gate_amp_kernel, hp.gate_amp_bias);
    r.head = gated_blend(tape, r.gate_ori, head_ori, r.gate_amp, head_amp);
    return r;
}

Tensor ffn(Tape& tape, const Tensor& x, const LayerParams& params, double dropout_p, Rng* rng,
           bool training) {
    Tensor hidden = relu(tape, add_bias(tape, matmul(tape, x, params.ffn_w1), params.ffn_b1));
    if (training && dropout_p > 0.0 && rng) {
        hidden = dropout(tape, hidden, dropout_p, *rng, true);
    }
    return add_bias(tape, matmul(tape, hidden, params.ffn_w2), params.ffn_b2);
}

std::pair<Tensor, AttentionTrace> layer_forward(Tape& tape, const Tensor& h,
                                                const EncodedInput& enc, const LayerParams& params,
                                                const LayerOptions& opts, Rng* dropout_rng) {
    const std::size_t n = h.dim(0);
    const std::size_t d_model = h.dim(1);
    const std::size_t m = params.heads.size();
    const std::size_t d_k = d_model / m;
    if (m * d_k != d_model) throw ConfigError("layer_forward: heads must divide d_model");
    if (enc.length() != n) {
        throw DimensionError("layer_forward: encoded length " + std::to_string(enc.length()) +
                             " does not match input rows " + std::to_string(n));
    }

    Tensor amplify_t({n, n}, enc.amplify);
    AttentionScores att = attention_scores(tape, h, params, enc.pad_mask, opts.ln_eps);

    // PAD rows of the head outputs are zeroed before the gate convolution;
    // otherwise their values would leak into real rows through the sequence
    // window and the output would depend on the padding length.
    Tensor row_mask = Tensor::zeros({n, d_k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d_k; ++j) row_mask.at(i, j) = enc.pad_mask[i];
    }

    AttentionTrace trace;
    trace.heads.resize(m);
    std::vector<Tensor> fused(m);
    const bool use_dropout = opts.training && opts.dropout_p > 0.0 && dropout_rng != nullptr;

    for (std::size_t hi = 0; hi < m; ++hi) {
        const HeadParams& hp = params.heads[hi];
        Tensor score = att.scores[hi];

        // The trace keeps the clean scores; the amplified trace entry is the
        // same single multiply the forward path performs.
        HeadTrace& ht = trace.heads[hi];
        ht.score_ori = score.detached();
        ht.score_amp = ht.score_ori.detached();
        for (std::size_t i = 0; i < ht.score_amp.size(); ++i) {
            ht.score_amp[i] = ht.score_ori[i] * enc.amplify[i];
        }

        if (use_dropout) score = dropout(tape, score, opts.dropout_p, *dropout_rng, true);
        Tensor head_ori = mul(tape, matmul(tape, score, att.values[hi]), row_mask);
        auto [head_amp_raw, score_amp] = amplified_attention(tape, score, amplify_t, att.values[hi]);
        Tensor head_amp = mul(tape, head_amp_raw, row_mask);

        Tensor gate_ori = gate_map(tape, head_ori, hp.gate_ori_kernel, hp.gate_ori_bias);
        Tensor gate_amp = gate_map(tape, head_amp, hp.gate_amp_kernel, hp.gate_amp_bias);
        ht.gate_ori = gate_ori.detached();
        ht.gate_amp = gate_amp.detached();

        switch (opts.mode) {
            case AblationMode::Full:
                fused[hi] = gated_blend(tape, gate_ori, head_ori, gate_amp, head_amp);
                break;
            case AblationMode::NoOriginal:
                // head_ori/Gate_ori replaced by head_amp/Gate_amp in the blend.
                fused[hi] = gated_blend(tape, gate_amp, head_amp, gate_amp, head_amp);
                break;
            case AblationMode::NoAmplified:
                fused[hi] = gated_blend(tape, gate_ori, head_ori, gate_ori, head_ori);
                break;
            case AblationMode::NoGatedFusion:
                fused[hi] = add_bias(
                    tape, matmul(tape, concat_cols(tape, {head_ori, head_amp}), hp.fuse_w),
                    hp.fuse_b);
                break;
            default:
                throw ConfigError("layer_forward: invalid ablation mode");
        }
    }

    Tensor multi_head = matmul(tape, concat_cols(tape, fused), params.w_h);
    const Tensor& residual_base = opts.single_post_ln ? h : att.normed_input;
    Tensor h_mid = layer_norm(tape, add(tape, residual_base, multi_head), params.ln_mha_gamma,
                              params.ln_mha_beta, opts.ln_eps);
    Tensor ffn_out = ffn(tape, h_mid, params, opts.dropout_p, dropout_rng, opts.training);
    Tensor h_out = layer_norm(tape, add(tape, ffn_out, h_mid), params.ln_out_gamma,
                              params.ln_out_beta, opts.ln_eps);
    return {h_out, std::move(trace)};
}

} // namespace a3sn
