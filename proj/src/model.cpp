#include "a3sn/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace a3sn {

void ModelConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("vocab_size must cover the reserved tokens");
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("heads (" + std::to_string(n_heads) + ") must divide d_model (" +
                          std::to_string(d_model) + ")");
    }
    if (n_layers == 0) throw ConfigError("at least one layer is required");
    if (max_len < 4) throw ConfigError("max_len must fit [CLS] token [SEP] token [SEP]");
    if (d_ff == 0 || d_model == 0) throw ConfigError("d_model and d_ff must be positive");
    if (gate_kernel_width % 2 == 0) throw ConfigError("gate kernel width must be odd");
    if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = Rng::derive(seed, 0xa35e);
    const double emb_bound = std::sqrt(6.0 / static_cast<double>(config.vocab_size + config.d_model));
    ModelParams p;
    p.config = config;
    p.tok_emb = Tensor::uniform({config.vocab_size, config.d_model}, -emb_bound, emb_bound, rng, true);
    const double pos_bound = std::sqrt(6.0 / static_cast<double>(config.max_len + config.d_model));
    p.pos_emb = Tensor::uniform({config.max_len, config.d_model}, -pos_bound, pos_bound, rng, true);
    const double seg_bound = std::sqrt(6.0 / static_cast<double>(kNumSegments + config.d_model));
    p.seg_emb = Tensor::uniform({kNumSegments, config.d_model}, -seg_bound, seg_bound, rng, true);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        p.layers.push_back(make_layer_params(config.d_model, config.n_heads, config.d_ff,
                                             config.gate_kernel_width, rng));
    }
    const double clf_bound = std::sqrt(6.0 / static_cast<double>(config.d_model + kNumClasses));
    p.w_p = Tensor::uniform({config.d_model, kNumClasses}, -clf_bound, clf_bound, rng, true);
    p.b_p = Tensor::zeros({kNumClasses}, true);
    return p;
}

void ModelParams::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    fn("seg_emb", seg_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        layers[l].for_each_param("layer" + std::to_string(l) + ".", fn);
    }
    fn("w_p", w_p);
    fn("b_p", b_p);
}

ModelParams ModelParams::clone() const {
    ModelParams copy = *this; // shallow; tensors still share storage
    copy.for_each_param([](const std::string&, Tensor& t) {
        Tensor d = t.detached();
        d.set_requires_grad(t.requires_grad());
        t = d;
    });
    return copy;
}

std::uint64_t params_checksum(const ModelParams& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    ModelParams view = params; // shallow copy shares the tensors
    view.for_each_param([&](const std::string&, Tensor& t) {
        mix(t.data().data(), t.size() * sizeof(double));
    });
    return h;
}

Tensor embed(Tape& tape, const EncodedInput& enc, const ModelParams& params) {
    const std::size_t n = enc.length();
    if (n > params.config.max_len) {
        throw DataError("embed: sequence of length " + std::to_string(n) +
                        " exceeds max_len " + std::to_string(params.config.max_len));
    }
    std::vector<int> pos_ids(n), seg_ids(n);
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    for (std::size_t i = 0; i < n; ++i) seg_ids[i] = static_cast<int>(enc.segments[i]);
    Tensor tok = embedding_rows(tape, params.tok_emb, enc.ids);
    Tensor pos = embedding_rows(tape, params.pos_emb, pos_ids);
    Tensor seg = embedding_rows(tape, params.seg_emb, seg_ids);
    return add(tape, add(tape, tok, pos), seg);
}

ForwardResult forward(Tape& tape, const EncodedInput& enc, const ModelParams& params,
                      const ForwardOptions& opts) {
    const std::size_t n = enc.length();
    LayerOptions layer_opts;
    layer_opts.mode = opts.mode;
    layer_opts.dropout_p = opts.dropout_p;
    layer_opts.training = opts.training;
    layer_opts.ln_eps = params.config.ln_eps;
    layer_opts.single_post_ln = params.config.single_post_ln;

    ForwardResult result;
    Tensor h = embed(tape, enc, params);
    for (const LayerParams& layer : params.layers) {
        auto [h_next, trace] = layer_forward(tape, h, enc, layer, layer_opts, opts.dropout_rng);
        h = h_next;
        if (opts.want_trace) result.prediction.traces.push_back(std::move(trace));
    }

    std::vector<double> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (params.config.pool_content_only) {
            pool[i] = (enc.segments[i] == Segment::SENT || enc.segments[i] == Segment::ASP) ? 1.0 : 0.0;
        } else {
            pool[i] = enc.pad_mask[i];
        }
    }
    Tensor pooled = mean_rows(tape, h, Tensor({n}, pool));
    Tensor logits = add_bias(tape, matmul(tape, reshape(tape, pooled, {1, pooled.size()}), params.w_p),
                             params.b_p);
    result.probs = softmax_rows(tape, logits);

    for (std::size_t c = 0; c < kNumClasses; ++c) result.prediction.probs[c] = result.probs[c];
    int best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c) {
        if (result.prediction.probs[c] > result.prediction.probs[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(c);
        }
    }
    result.prediction.predicted_label = best;
    return result;
}

Tensor loss(Tape& tape, const Tensor& probs, int gold) {
    if (gold < 0 || static_cast<std::size_t>(gold) >= kNumClasses) {
        throw ContractError("loss: gold label " + std::to_string(gold) + " outside the class set");
    }
    return pick_neg_log(tape, probs, static_cast<std::size_t>(gold));
}

Prediction predict(const EncodedInput& enc, const ModelParams& params, AblationMode mode,
                   bool want_trace) {
    Tape tape = Tape::inference();
    ForwardOptions opts;
    opts.mode = mode;
    opts.want_trace = want_trace;
    return forward(tape, enc, params, opts).prediction;
}

// ---- checkpoint io ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', '3', 'S', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_bytes(std::ofstream& out, const void* data, std::size_t len) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }
void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }
void write_f64(std::ofstream& out, double v) { write_bytes(out, &v, sizeof v); }

void read_bytes(std::ifstream& in, void* data, std::size_t len) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("checkpoint truncated or unreadable");
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}

std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}

double read_f64(std::ifstream& in) {
    double v;
    read_bytes(in, &v, sizeof v);
    return v;
}

} // namespace

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, AblationMode mode,
                     const std::string& path) {
    if (vocab.size() != params.config.vocab_size) {
        throw CheckpointError("vocabulary size " + std::to_string(vocab.size()) +
                              " does not match model config " +
                              std::to_string(params.config.vocab_size));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    const ModelConfig& c = params.config;
    write_bytes(out, kMagic, sizeof kMagic);
    write_u32(out, kVersion);
    write_u64(out, c.vocab_size);
    write_u64(out, c.d_model);
    write_u64(out, c.d_ff);
    write_u64(out, c.n_layers);
    write_u64(out, c.n_heads);
    write_u64(out, c.max_len);
    write_u64(out, c.gate_kernel_width);
    write_f64(out, c.ln_eps);
    std::uint32_t flags = 0;
    if (c.single_post_ln) flags |= 1u;
    if (c.pool_content_only) flags |= 2u;
    write_u32(out, flags);
    write_u32(out, static_cast<std::uint32_t>(mode));

    write_u64(out, vocab.size() - 4);
    for (std::size_t id = 4; id < vocab.size(); ++id) {
        const std::string& tok = vocab.token_of(static_cast<int>(id));
        write_u32(out, static_cast<std::uint32_t>(tok.size()));
        write_bytes(out, tok.data(), tok.size());
    }

    std::uint64_t n_tensors = 0;
    ModelParams view = params;
    view.for_each_param([&](const std::string&, Tensor&) { ++n_tensors; });
    write_u64(out, n_tensors);
    view.for_each_param([&](const std::string&, Tensor& t) {
        write_u64(out, t.size());
        write_bytes(out, t.data().data(), t.size() * sizeof(double));
    });
    if (!out) throw CheckpointError("failed while writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    char magic[8];
    read_bytes(in, magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(path + " is not a checkpoint file");
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    c.vocab_size = read_u64(in);
    c.d_model = read_u64(in);
    c.d_ff = read_u64(in);
    c.n_layers = read_u64(in);
    c.n_heads = read_u64(in);
    c.max_len = read_u64(in);
    c.gate_kernel_width = read_u64(in);
    c.ln_eps = read_f64(in);
    const std::uint32_t flags = read_u32(in);
    c.single_post_ln = (flags & 1u) != 0;
    c.pool_content_only = (flags & 2u) != 0;
    const std::uint32_t mode_raw = read_u32(in);
    if (mode_raw > 3) throw CheckpointError("invalid ablation mode in checkpoint header");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("invalid checkpoint header: ") + e.what());
    }

    Checkpoint ck;
    ck.mode = static_cast<AblationMode>(mode_raw);
    const std::uint64_t n_tokens = read_u64(in);
    for (std::uint64_t i = 0; i < n_tokens; ++i) {
        const std::uint32_t len = read_u32(in);
        std::string tok(len, '\0');
        read_bytes(in, tok.data(), len);
        ck.vocab.add_token(tok);
    }
    if (ck.vocab.size() != c.vocab_size) {
        throw CheckpointError("checkpoint vocabulary has " + std::to_string(ck.vocab.size()) +
                              " entries, header says " + std::to_string(c.vocab_size));
    }

    ck.params = ModelParams::init(c, 0);
    std::uint64_t n_tensors = 0;
    ck.params.for_each_param([&](const std::string&, Tensor&) { ++n_tensors; });
    const std::uint64_t file_tensors = read_u64(in);
    if (file_tensors != n_tensors) {
        throw CheckpointError("checkpoint holds " + std::to_string(file_tensors) +
                              " tensors, model expects " + std::to_string(n_tensors));
    }
    ck.params.for_each_param([&](const std::string& name, Tensor& t) {
        const std::uint64_t count = read_u64(in);
        if (count != t.size()) {
            throw CheckpointError("shape mismatch for " + name + ": file has " +
                                  std::to_string(count) + " values, model expects " +
                                  std::to_string(t.size()));
        }
        read_bytes(in, t.data().data(), t.size() * sizeof(double));
    });
    return ck;
}

} // namespace a3sn
