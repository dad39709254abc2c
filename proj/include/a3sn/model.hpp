#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "a3sn/encoding.hpp"
#include "a3sn/layer.hpp"
#include "a3sn/tensor.hpp"

namespace a3sn {

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::size_t kNumSegments = 6;

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t n_layers = 1;
    std::size_t n_heads = 4;
    std::size_t max_len = 24;
    std::size_t gate_kernel_width = 3;
    double ln_eps = 1e-5;
    bool single_post_ln = false;
    bool pool_content_only = false;

    void validate() const; // ConfigError on violations
    bool operator==(const ModelConfig&) const = default;
};

struct ModelParams {
    ModelConfig config;
    Tensor tok_emb;  // [V × d_model]
    Tensor pos_emb;  // [max_len × d_model]
    Tensor seg_emb;  // [6 × d_model]
    std::vector<LayerParams> layers;
    Tensor w_p;      // [d_model × 3]
    Tensor b_p;      // [3]

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
    // Deep copy (storage not shared).
    ModelParams clone() const;
};

// FNV-1a over the raw bytes of every parameter, in traversal order.
std::uint64_t params_checksum(const ModelParams& params);

struct Prediction {
    std::array<double, kNumClasses> probs{};
    int predicted_label = 0; // argmax, ties broken by lowest class id
    std::vector<AttentionTrace> traces;
};

struct ForwardOptions {
    AblationMode mode = AblationMode::Full;
    bool training = false;
    double dropout_p = 0.0;
    Rng* dropout_rng = nullptr;
    bool want_trace = true;
};

struct ForwardResult {
    Tensor probs; // [1×3], on the tape
    Prediction prediction;
};

// Token + position + segment embeddings summed per position.
Tensor embed(Tape& tape, const EncodedInput& enc, const ModelParams& params);

// Embed, run the layer stack, mean-pool unmasked positions, classify.
ForwardResult forward(Tape& tape, const EncodedInput& enc, const ModelParams& params,
                      const ForwardOptions& opts);

// -log probs[gold]; gold must be a valid class id.
Tensor loss(Tape& tape, const Tensor& probs, int gold);

// Inference-mode convenience wrapper.
Prediction predict(const EncodedInput& enc, const ModelParams& params,
                   AblationMode mode = AblationMode::Full, bool want_trace = true);

// Versioned binary checkpoint: config header (including the ablation mode the
// weights were trained under), vocabulary, then raw f64 parameter payloads in
// traversal order. Round-trips are bit-exact.
void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, AblationMode mode,
                     const std::string& path);

struct Checkpoint {
    ModelParams params;
    Vocabulary vocab;
    AblationMode mode = AblationMode::Full;
};

Checkpoint load_checkpoint(const std::string& path); // CheckpointError on any mismatch

} // namespace a3sn
