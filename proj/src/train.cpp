#include "a3sn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace a3sn {

namespace {

// RNG stream ids carved from the root seed.
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kDropoutStream = 4;

std::string fmt(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

} // namespace

void TrainConfig::validate() const {
    if (heads == 0 || d_model % heads != 0) {
        throw ConfigError("heads (" + std::to_string(heads) + ") must divide d_model (" +
                          std::to_string(d_model) + ")");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be at least 1");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (layers == 0) throw ConfigError("at least one layer is required");
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    model_config(4).validate();
}

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.d_model = d_model;
    mc.d_ff = d_ff;
    mc.n_layers = layers;
    mc.n_heads = heads;
    mc.max_len = max_len;
    mc.gate_kernel_width = gate_kernel_width;
    mc.ln_eps = ln_eps;
    mc.single_post_ln = single_post_ln;
    mc.pool_content_only = pool_content_only;
    return mc;
}

Metrics metrics_from_confusion(
    const std::array<std::array<int, kNumClasses>, kNumClasses>& confusion) {
    Metrics m;
    m.confusion = confusion;
    int total = 0, diag = 0;
    for (std::size_t g = 0; g < kNumClasses; ++g) {
        for (std::size_t p = 0; p < kNumClasses; ++p) total += confusion[g][p];
        diag += confusion[g][g];
    }
    if (total == 0) throw DataError("metrics_from_confusion: empty confusion matrix");
    m.accuracy = static_cast<double>(diag) / static_cast<double>(total);
    double f1_sum = 0.0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        int tp = confusion[c][c], gold = 0, predicted = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
            gold += confusion[c][k];
            predicted += confusion[k][c];
        }
        m.precision[c] = predicted > 0 ? static_cast<double>(tp) / predicted : 0.0;
        m.recall[c] = gold > 0 ? static_cast<double>(tp) / gold : 0.0;
        const double pr = m.precision[c] + m.recall[c];
        m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
        f1_sum += m.f1[c];
    }
    m.macro_f1 = f1_sum / static_cast<double>(kNumClasses);
    return m;
}

void adam_update(std::vector<double>& value, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v, std::size_t step,
                 const TrainConfig& cfg) {
    if (m.empty()) m.assign(value.size(), 0.0);
    if (v.empty()) v.assign(value.size(), 0.0);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < value.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg) {
    ++state.step;
    std::size_t idx = 0;
    params.for_each_param([&](const std::string& name, Tensor& t) {
        if (state.m.size() <= idx) {
            state.m.emplace_back();
            state.v.emplace_back();
        }
        static const std::vector<double> empty;
        std::vector<double> zeros;
        const std::vector<double>* g = &empty;
        if (t.has_grad()) {
            g = &t.grad();
        } else {
            zeros.assign(t.size(), 0.0);
            g = &zeros;
        }
        for (double gv : *g) {
            if (!std::isfinite(gv)) {
                throw NumericError("non-finite gradient in parameter " + name);
            }
        }
        adam_update(t.data(), *g, state.m[idx], state.v[idx], state.step, cfg);
        t.zero_grad();
        ++idx;
    });
}

Metrics evaluate(const std::vector<Example>& data, const ModelParams& params,
                 const Vocabulary& vocab, AblationMode mode) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    std::array<std::array<int, kNumClasses>, kNumClasses> confusion{};
    double loss_sum = 0.0;
    for (const Example& ex : data) {
        EncodedInput enc = encode(ex, vocab, params.config.max_len);
        Tape tape = Tape::inference();
        ForwardOptions opts;
        opts.mode = mode;
        opts.want_trace = false;
        ForwardResult r = forward(tape, enc, params, opts);
        confusion[static_cast<std::size_t>(enc.label_id)]
                 [static_cast<std::size_t>(r.prediction.predicted_label)] += 1;
        loss_sum += -std::log(std::max(r.prediction.probs[static_cast<std::size_t>(enc.label_id)], 1e-12));
    }
    Metrics m = metrics_from_confusion(confusion);
    m.mean_loss = loss_sum / static_cast<double>(data.size());
    return m;
}

TrainResult train(const std::vector<Example>& data, const std::vector<Example>& val_data,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw DataError("train: empty dataset");

    std::vector<Example> train_ex, val_ex;
    if (!val_data.empty()) {
        train_ex = data;
        val_ex = val_data;
    } else if (cfg.val_fraction > 0.0 && data.size() > 1) {
        std::vector<std::size_t> idx(data.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng split_rng = Rng::derive(cfg.seed, kSplitStream);
        split_rng.shuffle(idx);
        std::size_t n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(data.size()))));
        if (n_val >= data.size()) n_val = data.size() - 1;
        std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        std::vector<std::size_t> train_idx(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
        for (std::size_t i : train_idx) train_ex.push_back(data[i]);
        for (std::size_t i : val_idx) val_ex.push_back(data[i]);
    } else {
        train_ex = data;
    }

    Vocabulary vocab = build_vocab(train_ex, cfg.min_count);
    ModelParams params = ModelParams::init(cfg.model_config(vocab.size()), cfg.seed);

    std::vector<EncodedInput> encoded;
    encoded.reserve(train_ex.size());
    for (const Example& ex : train_ex) encoded.push_back(encode(ex, vocab, cfg.max_len));

    AdamState state;
    Rng shuffle_rng = Rng::derive(cfg.seed, kShuffleStream);
    Rng dropout_rng = Rng::derive(cfg.seed, kDropoutStream);

    TrainResult result;
    result.vocab = vocab;
    double best_acc = -1.0;
    ModelParams best_params = params.clone();
    Metrics best_metrics;
    std::size_t best_epoch = 0;

    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::array<std::array<int, kNumClasses>, kNumClasses> train_confusion{};
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            Tensor batch_loss;
            for (std::size_t k = start; k < end; ++k) {
                const EncodedInput& enc = encoded[order[k]];
                ForwardOptions opts;
                opts.mode = cfg.mode;
                opts.training = true;
                opts.dropout_p = cfg.dropout_p;
                opts.dropout_rng = &dropout_rng;
                opts.want_trace = false;
                ForwardResult r = forward(tape, enc, params, opts);
                train_confusion[static_cast<std::size_t>(enc.label_id)]
                               [static_cast<std::size_t>(r.prediction.predicted_label)] += 1;
                Tensor l = loss(tape, r.probs, enc.label_id);
                batch_loss = batch_loss.defined() ? add(tape, batch_loss, l) : l;
            }
            batch_loss = scale(tape, batch_loss, 1.0 / static_cast<double>(end - start));
            const double loss_value = batch_loss.item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("divergence: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_index));
            }
            loss_sum += loss_value * static_cast<double>(end - start);
            tape.backward(batch_loss);
            adam_step(params, state, cfg);
        }

        const double train_loss = loss_sum / static_cast<double>(encoded.size());
        Metrics train_metrics = metrics_from_confusion(train_confusion);
        result.history.push_back({epoch, "train", train_loss, train_metrics.accuracy,
                                  train_metrics.macro_f1});

        if (!val_ex.empty()) {
            Metrics vm = evaluate(val_ex, params, vocab, cfg.mode);
            result.history.push_back({epoch, "val", vm.mean_loss, vm.accuracy, vm.macro_f1});
            if (vm.accuracy > best_acc) {
                best_acc = vm.accuracy;
                best_epoch = epoch;
                best_params = params.clone();
                best_metrics = vm;
            }
        }
    }

    if (val_ex.empty()) {
        result.params = std::move(params);
        result.best_epoch = cfg.epochs;
        result.final_val = evaluate(train_ex, result.params, vocab, cfg.mode);
    } else {
        result.params = std::move(best_params);
        result.best_epoch = best_epoch;
        result.final_val = best_metrics;
    }
    return result;
}

std::vector<AblationRow> run_ablations(const std::vector<Example>& data, const TrainConfig& cfg) {
    std::vector<AblationRow> rows;
    for (AblationMode mode : {AblationMode::Full, AblationMode::NoOriginal,
                              AblationMode::NoAmplified, AblationMode::NoGatedFusion}) {
        std::printf("training mode %s...\n", to_string(mode));
        std::fflush(stdout);
        TrainConfig mode_cfg = cfg;
        mode_cfg.mode = mode;
        TrainResult r = train(data, {}, mode_cfg);
        rows.push_back({mode, r.final_val});
    }
    return rows;
}

std::string metrics_csv(const TrainConfig& cfg, const std::vector<EpochLogRow>& history) {
    std::ostringstream out;
    out << "# mode=" << to_string(cfg.mode) << " seed=" << cfg.seed << " heads=" << cfg.heads
        << " layers=" << cfg.layers << " d_model=" << cfg.d_model << " d_ff=" << cfg.d_ff
        << " max_len=" << cfg.max_len << " dropout=" << fmt(cfg.dropout_p, 3)
        << " lr=" << fmt(cfg.lr, 6) << " batch_size=" << cfg.batch_size
        << " epochs=" << cfg.epochs << "\n";
    out << "epoch,split,loss,accuracy,macro_f1\n";
    for (const EpochLogRow& row : history) {
        out << row.epoch << "," << row.split << "," << fmt(row.loss, 6) << ","
            << fmt(row.accuracy, 6) << "," << fmt(row.macro_f1, 6) << "\n";
    }
    return out.str();
}

std::string ablation_report_markdown(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "# Ablation results\n\n";
    out << "| Model | Acc. | Macro-F1 |\n";
    out << "|-------|------|----------|\n";
    for (const AblationRow& row : rows) {
        out << "| " << to_string(row.mode) << " | " << fmt(100.0 * row.metrics.accuracy, 2)
            << " | " << fmt(100.0 * row.metrics.macro_f1, 2) << " |\n";
    }
    return out.str();
}

} // namespace a3sn
