// a3sn: train, evaluate, and inspect an aspect-sentiment encoder with
// amplified aspect-sentence attention and gated fusion.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "a3sn/encoding.hpp"
#include "a3sn/gradcheck_suite.hpp"
#include "a3sn/model.hpp"
#include "a3sn/train.hpp"

namespace {

using nlohmann::json;

// Exit codes: 0 success, 1 usage, 2 data, 3 numeric/divergence.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw a3sn::DataError("cannot write " + path);
    out << content;
    if (!out) throw a3sn::DataError("failed while writing " + path);
}

std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

// ---- config file ------------------------------------------------------------

// Flat key=value file; '#' starts a comment. Explicit CLI flags win.
void apply_config_file(const std::string& path, a3sn::TrainConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw a3sn::DataError("cannot open config file " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw a3sn::ConfigError(path + " line " + std::to_string(line_no) +
                                    ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "heads") cfg.heads = std::stoul(value);
            else if (key == "layers") cfg.layers = std::stoul(value);
            else if (key == "d_model") cfg.d_model = std::stoul(value);
            else if (key == "d_ff") cfg.d_ff = std::stoul(value);
            else if (key == "max_len") cfg.max_len = std::stoul(value);
            else if (key == "dropout") cfg.dropout_p = std::stod(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "beta1") cfg.beta1 = std::stod(value);
            else if (key == "beta2") cfg.beta2 = std::stod(value);
            else if (key == "eps_adam") cfg.eps_adam = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoul(value);
            else if (key == "batch_size") cfg.batch_size = std::stoul(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "mode") cfg.mode = a3sn::ablation_from_string(value);
            else if (key == "ln_eps") cfg.ln_eps = std::stod(value);
            else if (key == "gate_kernel_width") cfg.gate_kernel_width = std::stoul(value);
            else if (key == "single_post_ln") cfg.single_post_ln = value == "true" || value == "1";
            else if (key == "pool_content_only") cfg.pool_content_only = value == "true" || value == "1";
            else if (key == "min_count") cfg.min_count = std::stoul(value);
            else if (key == "val_fraction") cfg.val_fraction = std::stod(value);
            else throw a3sn::ConfigError(path + " line " + std::to_string(line_no) +
                                         ": unknown key \"" + key + "\"");
        } catch (const std::invalid_argument&) {
            throw a3sn::ConfigError(path + " line " + std::to_string(line_no) +
                                    ": bad value for \"" + key + "\"");
        } catch (const std::out_of_range&) {
            throw a3sn::ConfigError(path + " line " + std::to_string(line_no) +
                                    ": value out of range for \"" + key + "\"");
        }
    }
}

// Shared train/ablate configuration flags.
struct ConfigFlags {
    std::string config_path;
    std::string mode = "full";

    void attach(CLI::App* cmd, a3sn::TrainConfig& cfg) {
        cmd->add_option("--config", config_path, "config file (key=value lines)");
        cmd->add_option("--mode", mode, "ablation mode: full|no-original|no-amplified|no-gated-fusion");
        cmd->add_option("--seed", cfg.seed, "root random seed");
        cmd->add_option("--epochs", cfg.epochs, "training epochs");
        cmd->add_option("--heads", cfg.heads, "attention heads");
        cmd->add_option("--layers", cfg.layers, "encoder layers");
        cmd->add_option("--d-model", cfg.d_model, "model width");
        cmd->add_option("--d-ff", cfg.d_ff, "feed-forward width");
        cmd->add_option("--max-len", cfg.max_len, "maximum encoded length");
        cmd->add_option("--dropout", cfg.dropout_p, "dropout probability");
        cmd->add_option("--lr", cfg.lr, "Adam learning rate");
        cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
        cmd->add_option("--val-fraction", cfg.val_fraction, "validation split fraction");
    }

    // Config file first, then explicit flags on top.
    a3sn::TrainConfig resolve(CLI::App* cmd, const a3sn::TrainConfig& flag_values) {
        a3sn::TrainConfig cfg;
        if (!config_path.empty()) apply_config_file(config_path, cfg);
        auto override_if = [&](const char* flag, auto member) {
            if (cmd->count(flag) > 0) cfg.*member = flag_values.*member;
        };
        override_if("--seed", &a3sn::TrainConfig::seed);
        override_if("--epochs", &a3sn::TrainConfig::epochs);
        override_if("--heads", &a3sn::TrainConfig::heads);
        override_if("--layers", &a3sn::TrainConfig::layers);
        override_if("--d-model", &a3sn::TrainConfig::d_model);
        override_if("--d-ff", &a3sn::TrainConfig::d_ff);
        override_if("--max-len", &a3sn::TrainConfig::max_len);
        override_if("--dropout", &a3sn::TrainConfig::dropout_p);
        override_if("--lr", &a3sn::TrainConfig::lr);
        override_if("--batch-size", &a3sn::TrainConfig::batch_size);
        override_if("--val-fraction", &a3sn::TrainConfig::val_fraction);
        if (cmd->count("--mode") > 0) cfg.mode = a3sn::ablation_from_string(mode);
        return cfg;
    }
};

// ---- JSON helpers -------------------------------------------------------------

json matrix_json(const a3sn::Tensor& t) {
    json rows = json::array();
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < t.dim(1); ++j) row.push_back(t.at(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json metrics_json(const a3sn::Metrics& m) {
    json o;
    o["accuracy"] = m.accuracy;
    o["macro_f1"] = m.macro_f1;
    o["mean_loss"] = m.mean_loss;
    json per_class = json::array();
    for (std::size_t c = 0; c < a3sn::kNumClasses; ++c) {
        per_class.push_back({{"class", a3sn::to_string(static_cast<a3sn::Polarity>(c))},
                             {"precision", m.precision[c]},
                             {"recall", m.recall[c]},
                             {"f1", m.f1[c]}});
    }
    o["per_class"] = per_class;
    json confusion = json::array();
    for (const auto& row : m.confusion) confusion.push_back(row);
    o["confusion"] = confusion;
    return o;
}

void print_metrics(const a3sn::Metrics& m) {
    std::cout << "accuracy=" << fmt(m.accuracy) << " macro_f1=" << fmt(m.macro_f1)
              << " mean_loss=" << fmt(m.mean_loss) << "\n";
    for (std::size_t c = 0; c < a3sn::kNumClasses; ++c) {
        std::cout << "  " << a3sn::to_string(static_cast<a3sn::Polarity>(c))
                  << ": precision=" << fmt(m.precision[c]) << " recall=" << fmt(m.recall[c])
                  << " f1=" << fmt(m.f1[c]) << "\n";
    }
}

// ---- commands -------------------------------------------------------------------

int cmd_synth_data(std::size_t n, std::uint64_t seed, std::size_t vocab_size,
                   const std::string& out_path) {
    auto examples = a3sn::synth_dataset(n, seed, vocab_size);
    a3sn::save_jsonl(examples, out_path);
    std::array<std::size_t, 3> counts{};
    for (const auto& ex : examples) counts[static_cast<std::size_t>(ex.label)] += 1;
    std::cout << "wrote " << examples.size() << " examples to " << out_path << "\n";
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << "  " << a3sn::to_string(static_cast<a3sn::Polarity>(c)) << ": " << counts[c]
                  << " (" << fmt(100.0 * static_cast<double>(counts[c]) / static_cast<double>(n), 1)
                  << "%)\n";
    }
    return 0;
}

int cmd_train(const a3sn::TrainConfig& cfg, const std::string& data_path,
              const std::string& val_path, const std::string& checkpoint_path,
              const std::string& csv_path) {
    auto data = a3sn::load_jsonl(data_path);
    std::vector<a3sn::Example> val;
    if (!val_path.empty()) val = a3sn::load_jsonl(val_path);
    const std::string val_source = !val.empty()          ? "val: " + val_path
                                   : cfg.val_fraction > 0 ? "seeded validation split"
                                                          : "no validation";
    std::cout << "training on " << data.size() << " examples (" << val_source << ") for "
              << cfg.epochs << " epochs\n";
    a3sn::TrainResult result = a3sn::train(data, val, cfg);
    if (!checkpoint_path.empty()) {
        a3sn::save_checkpoint(result.params, result.vocab, cfg.mode, checkpoint_path);
        std::cout << "checkpoint written to " << checkpoint_path << "\n";
    }
    if (!csv_path.empty()) {
        write_text_file(csv_path, a3sn::metrics_csv(cfg, result.history));
        std::cout << "metrics log written to " << csv_path << "\n";
    }
    std::cout << "mode=" << a3sn::to_string(cfg.mode) << " best_epoch=" << result.best_epoch
              << "\n";
    print_metrics(result.final_val);
    return 0;
}

int cmd_eval(const std::string& data_path, const std::string& checkpoint_path,
             const std::string& mode_name, const std::string& out_json) {
    a3sn::Checkpoint ck = a3sn::load_checkpoint(checkpoint_path);
    auto data = a3sn::load_jsonl(data_path);
    // Default to the mode the checkpoint was trained under.
    a3sn::AblationMode mode = mode_name.empty() ? ck.mode : a3sn::ablation_from_string(mode_name);
    std::cout << "mode=" << a3sn::to_string(mode) << "\n";
    a3sn::Metrics m = a3sn::evaluate(data, ck.params, ck.vocab, mode);
    print_metrics(m);
    if (!out_json.empty()) write_text_file(out_json, metrics_json(m).dump(2) + "\n");
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol, std::size_t d_model, std::size_t heads) {
    auto report = a3sn::run_gradcheck_suite(seed, tol, d_model, heads);
    bool all_pass = true;
    std::printf("%-16s %14s %10s  %s\n", "op", "max_rel_err", "tol", "status");
    for (const auto& check : report) {
        std::printf("%-16s %14.3e %10.1e  %s\n", check.op.c_str(), check.max_rel_err, tol,
                    check.pass ? "ok" : "FAIL");
        all_pass = all_pass && check.pass;
    }
    if (!all_pass) {
        for (const auto& check : report) {
            if (!check.pass) {
                std::cerr << "error[numeric]: gradient check failed for op " << check.op
                          << " (max_rel_err=" << check.max_rel_err << ", tol=" << tol << ")\n";
            }
        }
        return kExitNumeric;
    }
    std::cout << "all " << report.size() << " gradient checks passed at tol " << tol << "\n";
    return 0;
}

int cmd_ablate(const a3sn::TrainConfig& cfg, const std::string& data_path,
               const std::string& report_path) {
    auto data = a3sn::load_jsonl(data_path);
    auto rows = a3sn::run_ablations(data, cfg);
    const std::string report = a3sn::ablation_report_markdown(rows);
    if (!report_path.empty()) {
        write_text_file(report_path, report);
        std::cout << "report written to " << report_path << "\n";
    }
    std::cout << report;
    return 0;
}

int cmd_inspect_attention(const std::string& checkpoint_path, const std::string& text,
                          const std::string& aspect, int layer, int head,
                          const std::string& out_json) {
    a3sn::Checkpoint ck = a3sn::load_checkpoint(checkpoint_path);
    a3sn::Example ex;
    ex.sentence = a3sn::tokenize(text);
    ex.aspect = a3sn::tokenize(aspect);
    if (ex.aspect.empty()) throw a3sn::ConfigError("aspect must contain at least one token");
    const std::size_t n_layers = ck.params.config.n_layers;
    const std::size_t n_heads = ck.params.config.n_heads;
    if (layer < 0 || static_cast<std::size_t>(layer) >= n_layers) {
        throw a3sn::ConfigError("layer " + std::to_string(layer) + " out of range [0, " +
                                std::to_string(n_layers) + ")");
    }
    if (head < -1 || static_cast<std::size_t>(head + 1) > n_heads) {
        throw a3sn::ConfigError("head " + std::to_string(head) + " out of range [0, " +
                                std::to_string(n_heads) + ")");
    }

    // Encode without padding so the dumped matrices cover only real positions.
    const std::size_t needed = 3 + ex.sentence.size() + ex.aspect.size();
    const std::size_t len = std::min(needed, ck.params.config.max_len);
    a3sn::EncodedInput enc = a3sn::encode(ex, ck.vocab, len);
    a3sn::Prediction pred = a3sn::predict(enc, ck.params, ck.mode);

    const a3sn::AttentionTrace& trace = pred.traces[static_cast<std::size_t>(layer)];
    std::vector<std::size_t> heads;
    if (head < 0) {
        for (std::size_t h = 0; h < n_heads; ++h) heads.push_back(h);
    } else {
        heads.push_back(static_cast<std::size_t>(head));
    }

    const std::size_t n = enc.length();
    double cross_ori = 0.0, cross_amp = 0.0;
    for (std::size_t h : heads) {
        const a3sn::HeadTrace& ht = trace.heads[h];
        for (std::size_t i = 0; i < n * n; ++i) {
            if (enc.amplify[i] == 2.0) {
                cross_ori += ht.score_ori[i];
                cross_amp += ht.score_amp[i];
            }
        }
    }

    json out;
    json tokens = json::array(), segments = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(ck.vocab.token_of(enc.ids[i]));
        segments.push_back(a3sn::to_string(enc.segments[i]));
    }
    out["tokens"] = tokens;
    out["segments"] = segments;
    json amp = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < n; ++j) row.push_back(enc.amplify[i * n + j]);
        amp.push_back(std::move(row));
    }
    out["amplify"] = amp;
    out["layer"] = layer;
    json head_dumps = json::array();
    for (std::size_t h : heads) {
        const a3sn::HeadTrace& ht = trace.heads[h];
        head_dumps.push_back({{"head", h},
                              {"score_ori", matrix_json(ht.score_ori)},
                              {"score_amp", matrix_json(ht.score_amp)},
                              {"gate_ori", matrix_json(ht.gate_ori)},
                              {"gate_amp", matrix_json(ht.gate_amp)}});
    }
    out["heads"] = head_dumps;
    json probs = json::array();
    for (double p : pred.probs) probs.push_back(p);
    out["prediction"] = {
        {"probs", probs},
        {"label", a3sn::to_string(static_cast<a3sn::Polarity>(pred.predicted_label))}};
    out["cross_mass"] = {{"original", cross_ori}, {"amplified", cross_amp}};
    if (!out_json.empty()) write_text_file(out_json, out.dump(2) + "\n");

    std::cout << "prediction: " << a3sn::to_string(static_cast<a3sn::Polarity>(pred.predicted_label))
              << " (p=" << fmt(pred.probs[static_cast<std::size_t>(pred.predicted_label)]) << ")\n";
    std::cout << "cross-segment attention mass: original=" << fmt(cross_ori)
              << " amplified=" << fmt(cross_amp);
    if (cross_ori > 0.0) std::cout << " (ratio " << fmt(cross_amp / cross_ori, 4) << ")";
    std::cout << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"aspect-based sentiment classifier with amplified aspect-sentence attention"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a synthetic two-aspect dataset");
    std::int64_t synth_n = 0;
    std::uint64_t synth_seed = 7;
    std::size_t synth_vocab = 50;
    std::string synth_out;
    synth->add_option("--n", synth_n, "number of examples")->required();
    synth->add_option("--seed", synth_seed, "random seed");
    synth->add_option("--vocab-size", synth_vocab, "approximate distinct token count");
    synth->add_option("--out", synth_out, "output JSONL path")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a JSONL dataset");
    a3sn::TrainConfig train_flags;
    ConfigFlags train_config;
    std::string train_data, train_val, train_ckpt, train_csv;
    train_cmd->add_option("--data", train_data, "training JSONL")->required();
    train_cmd->add_option("--val", train_val, "validation JSONL (default: seeded split)");
    train_cmd->add_option("--out-checkpoint", train_ckpt, "checkpoint output path");
    train_cmd->add_option("--metrics-csv", train_csv, "per-epoch metrics CSV path");
    train_config.attach(train_cmd, train_flags);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
    std::string eval_data, eval_ckpt, eval_mode, eval_json;
    eval_cmd->add_option("--data", eval_data, "evaluation JSONL")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--mode", eval_mode, "ablation mode (default: the checkpoint's)");
    eval_cmd->add_option("--out-json", eval_json, "metrics JSON output path");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");
    std::uint64_t grad_seed = 1;
    double grad_tol = 1e-4;
    std::size_t grad_dmodel = 16, grad_heads = 4;
    grad_cmd->add_option("--seed", grad_seed, "random seed");
    grad_cmd->add_option("--tol", grad_tol, "max relative error tolerance")
        ->check(CLI::PositiveNumber);
    grad_cmd->add_option("--d-model", grad_dmodel, "model width for the full-model check");
    grad_cmd->add_option("--heads", grad_heads, "head count for the full-model check");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train and report all four ablation modes");
    a3sn::TrainConfig ablate_flags;
    ConfigFlags ablate_config;
    std::string ablate_data, ablate_report;
    ablate_cmd->add_option("--data", ablate_data, "training JSONL")->required();
    ablate_cmd->add_option("--out-report", ablate_report, "Markdown report path");
    ablate_config.attach(ablate_cmd, ablate_flags);

    // inspect-attention
    auto* inspect_cmd = app.add_subcommand("inspect-attention",
                                           "dump attention scores, gates, and the amplify matrix");
    std::string ins_ckpt, ins_text, ins_aspect, ins_json;
    int ins_layer = 0, ins_head = -1;
    inspect_cmd->add_option("--checkpoint", ins_ckpt, "checkpoint path")->required();
    inspect_cmd->add_option("--text", ins_text, "input sentence")->required();
    inspect_cmd->add_option("--aspect", ins_aspect, "aspect term")->required();
    inspect_cmd->add_option("--layer", ins_layer, "layer to dump");
    inspect_cmd->add_option("--head", ins_head, "head to dump (-1 for all)");
    inspect_cmd->add_option("--out-json", ins_json, "JSON output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            if (synth_n <= 0) throw a3sn::ConfigError("--n must be positive");
            return cmd_synth_data(static_cast<std::size_t>(synth_n), synth_seed, synth_vocab,
                                  synth_out);
        }
        if (train_cmd->parsed()) {
            a3sn::TrainConfig cfg = train_config.resolve(train_cmd, train_flags);
            cfg.validate();
            return cmd_train(cfg, train_data, train_val, train_ckpt, train_csv);
        }
        if (eval_cmd->parsed()) return cmd_eval(eval_data, eval_ckpt, eval_mode, eval_json);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_seed, grad_tol, grad_dmodel, grad_heads);
        if (ablate_cmd->parsed()) {
            a3sn::TrainConfig cfg = ablate_config.resolve(ablate_cmd, ablate_flags);
            cfg.validate();
            return cmd_ablate(cfg, ablate_data, ablate_report);
        }
        if (inspect_cmd->parsed()) {
            return cmd_inspect_attention(ins_ckpt, ins_text, ins_aspect, ins_layer, ins_head,
                                         ins_json);
        }
    } catch (const a3sn::ConfigError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        return kExitUsage;
    } catch (const a3sn::ContractError& e) {
        std::cerr << "error[usage]: " << e.what() << "\n";
        return kExitUsage;
    } catch (const a3sn::NumericError& e) {
        std::cerr << "error[numeric]: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const a3sn::Error& e) {
        // DataError, EncodingError, CheckpointError
        std::cerr << "error[data]: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return kExitNumeric;
    }
    return 0;
}
