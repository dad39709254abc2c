#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "a3sn/encoding.hpp"
#include "a3sn/model.hpp"

namespace a3sn {

struct TrainConfig {
    std::size_t heads = 4;
    std::size_t layers = 1;
    std::size_t d_model = 64;
    std::size_t d_ff = 128;
    std::size_t max_len = 24;
    double dropout_p = 0.2;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    std::uint64_t seed = 7;
    AblationMode mode = AblationMode::Full;
    double ln_eps = 1e-5;
    std::size_t gate_kernel_width = 3;
    bool single_post_ln = false;
    bool pool_content_only = false;
    std::size_t min_count = 1;
    double val_fraction = 0.1;

    void validate() const; // ConfigError on violations
    ModelConfig model_config(std::size_t vocab_size) const;
};

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::array<double, kNumClasses> precision{};
    std::array<double, kNumClasses> recall{};
    std::array<double, kNumClasses> f1{};
    std::array<std::array<int, kNumClasses>, kNumClasses> confusion{}; // [gold][predicted]
    double mean_loss = 0.0;
};

Metrics metrics_from_confusion(const std::array<std::array<int, kNumClasses>, kNumClasses>& confusion);

// Adam with bias correction on a single parameter buffer.
void adam_update(std::vector<double>& value, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::size_t step,
                 const TrainConfig& cfg);

// First/second moment buffers per parameter, in traversal order.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

// One optimizer step over every model parameter; consumes and clears the
// accumulated gradients. NumericError names the parameter on non-finite grads.
void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg);

struct EpochLogRow {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

struct TrainResult {
    ModelParams params; // weights of the best validation epoch
    Vocabulary vocab;
    std::vector<EpochLogRow> history;
    std::size_t best_epoch = 0;
    Metrics final_val; // validation metrics at the best epoch
};

// Seeded training loop: deterministic init, shuffling, and dropout streams.
// When val_data is empty a seeded val_fraction split is carved from the data.
TrainResult train(const std::vector<Example>& data, const std::vector<Example>& val_data,
                  const TrainConfig& cfg);

// Deterministic (dropout off) evaluation; never mutates the parameters.
Metrics evaluate(const std::vector<Example>& data, const ModelParams& params,
                 const Vocabulary& vocab, AblationMode mode);

struct AblationRow {
    AblationMode mode;
    Metrics metrics;
};

// Trains all four modes with the same seed and data split.
std::vector<AblationRow> run_ablations(const std::vector<Example>& data, const TrainConfig& cfg);

// epoch,split,loss,accuracy,macro_f1 rows with a config comment header.
std::string metrics_csv(const TrainConfig& cfg, const std::vector<EpochLogRow>& history);

// Markdown table with one row per ablation mode.
std::string ablation_report_markdown(const std::vector<AblationRow>& rows);

} // namespace a3sn
