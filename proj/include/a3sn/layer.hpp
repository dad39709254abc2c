#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "a3sn/encoding.hpp"
#include "a3sn/tensor.hpp"

namespace a3sn {

// Runtime variants of the encoder layer: the full model, or the model with
// the original path, the amplified path, or the gated fusion removed.
enum class AblationMode { Full, NoOriginal, NoAmplified, NoGatedFusion };

const char* to_string(AblationMode m);
AblationMode ablation_from_string(const std::string& s); // ConfigError on unknown name

struct HeadParams {
    Tensor w_q, w_k, w_v;                   // [d_model × d_k]
    Tensor gate_ori_kernel, gate_ori_bias;  // [w × d_k × d_k], [d_k]
    Tensor gate_amp_kernel, gate_amp_bias;
    Tensor fuse_w, fuse_b;                  // [2·d_k × d_k], [d_k]; no-gated-fusion path
};

struct LayerParams {
    std::vector<HeadParams> heads;
    Tensor w_h;                        // [m·d_k × d_model]
    Tensor ffn_w1, ffn_b1;             // [d_model × d_ff], [d_ff]
    Tensor ffn_w2, ffn_b2;             // [d_ff × d_model], [d_model]
    Tensor ln_attn_gamma, ln_attn_beta; // pre-attention LN; also the inner LN of the
                                        // attention residual (same symbol, shared weights)
    Tensor ln_mha_gamma, ln_mha_beta;   // LN after the attention residual
    Tensor ln_out_gamma, ln_out_beta;   // LN after the FFN residual

    void for_each_param(const std::string& prefix,
                        const std::function<void(const std::string&, Tensor&)>& fn);
};

LayerParams make_layer_params(std::size_t d_model, std::size_t n_heads, std::size_t d_ff,
                              std::size_t gate_kernel_width, Rng& rng);

// Inspectable per-head record: post-softmax scores, their amplified version,
// and both gate maps. Always captured without dropout applied.
struct HeadTrace {
    Tensor score_ori;  // [N×N]
    Tensor score_amp;  // [N×N], score_ori ⊙ amplify
    Tensor gate_ori;   // [N×d_k]
    Tensor gate_amp;   // [N×d_k]
};

struct AttentionTrace {
    std::vector<HeadTrace> heads;
};

struct AttentionScores {
    std::vector<Tensor> scores;  // per head [N×N], rows sum to 1
    std::vector<Tensor> values;  // per head [N×d_k]
    Tensor normed_input;         // LN(h), reused by the attention residual
};

// Per-head scaled dot-product attention over the normalized input, with PAD
// key positions masked to -1e9 before the softmax.
AttentionScores attention_scores(Tape& tape, const Tensor& h, const LayerParams& params,
                                 const std::vector<double>& pad_mask, double ln_eps);

// score_amp = score_ori ⊙ amplify (no renormalization), head_amp = score_amp · V.
// Returns (head_amp, score_amp).
std::pair<Tensor, Tensor> amplified_attention(Tape& tape, const Tensor& score_ori,
                                              const Tensor& amplify, const Tensor& v);

struct GatedFusionResult {
    Tensor head;
    Tensor gate_ori;
    Tensor gate_amp;
};

// head = Gate_ori ⊙ head_ori + (1 - Gate_ori) ⊙ Gate_amp ⊙ head_amp, with each
// gate the sigmoid of a 1-D convolution over the corresponding head output.
GatedFusionResult gated_fusion(Tape& tape, const Tensor& head_ori, const Tensor& head_amp,
                               const HeadParams& hp);

// Two affine maps with a ReLU between; dropout on the hidden activation.
Tensor ffn(Tape& tape, const Tensor& x, const LayerParams& params, double dropout_p, Rng* rng,
           bool training);

struct LayerOptions {
    AblationMode mode = AblationMode::Full;
    double dropout_p = 0.0;
    bool training = false;
    double ln_eps = 1e-5;
    // When set, the attention residual uses the raw layer input instead of its
    // normalized form (conventional single post-LN residual).
    bool single_post_ln = false;
};

// One full encoder layer. Output shape equals input shape.
std::pair<Tensor, AttentionTrace> layer_forward(Tape& tape, const Tensor& h,
                                                const EncodedInput& enc, const LayerParams& params,
                                                const LayerOptions& opts, Rng* dropout_rng);

} // namespace a3sn
