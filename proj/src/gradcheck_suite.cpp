#include "a3sn/gradcheck_suite.hpp"

#include <algorithm>

#include "a3sn/model.hpp"
#include "a3sn/tensor.hpp"

namespace a3sn {

namespace {

constexpr double kEps = 1e-5;

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng) {
    return Tensor::uniform(std::move(shape), -1.0, 1.0, rng, false);
}

// Probe weights so the checked scalar has a dense, nontrivial Jacobian.
Tensor weighted_sum(Tape& tape, const Tensor& y, const Tensor& weights) {
    return sum_all(tape, mul(tape, y, weights));
}

double max_of(std::initializer_list<double> values) { return std::max(values); }

// Synthetic encoded input with every segment kind present.
EncodedInput probe_input(std::size_t max_len) {
    Example ex;
    ex.sentence = {"w1", "a1", "a2", "w4"};
    ex.aspect = {"a1", "a2"};
    ex.label = Polarity::Negative;
    Example vocab_seed = ex;
    Vocabulary vocab = build_vocab({vocab_seed}, 1);
    return encode(ex, vocab, max_len);
}

// Swaps one named parameter for the probe tensor and runs the full loss.
double model_loss_check(const ModelParams& proto, const EncodedInput& enc,
                        const std::string& param_name, AblationMode mode) {
    Tensor baseline;
    ModelParams view = proto;
    view.for_each_param([&](const std::string& name, Tensor& t) {
        if (name == param_name) baseline = t;
    });
    if (!baseline.defined()) throw ContractError("unknown parameter " + param_name);

    auto f = [&](Tape& tape, const Tensor& probe) {
        ModelParams trial = proto.clone();
        trial.for_each_param([&](const std::string& name, Tensor& t) {
            if (name == param_name) t = probe;
        });
        ForwardOptions opts;
        opts.mode = mode;
        opts.want_trace = false;
        ForwardResult r = forward(tape, enc, trial, opts);
        return loss(tape, r.probs, enc.label_id);
    };
    return grad_check(f, baseline, kEps, 1.0).max_rel_err;
}

} // namespace

std::vector<OpCheck> run_gradcheck_suite(std::uint64_t seed, double tol, std::size_t d_model,
                                         std::size_t n_heads) {
    Rng rng = Rng::derive(seed, 0x6c);
    std::vector<OpCheck> report;
    auto push = [&](const std::string& op, double err) {
        report.push_back({op, err, err <= tol});
    };

    // matmul: both operand sides.
    {
        Tensor a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 2}, rng);
        Tensor w = rand_tensor({3, 2}, rng);
        auto fa = [&](Tape& t, const Tensor& x) { return weighted_sum(t, matmul(t, x, b), w); };
        auto fb = [&](Tape& t, const Tensor& x) { return weighted_sum(t, matmul(t, a, x), w); };
        push("matmul", max_of({grad_check(fa, a, kEps, tol).max_rel_err,
                               grad_check(fb, b, kEps, tol).max_rel_err}));
    }
    {
        Tensor a = rand_tensor({3, 4}, rng), w = rand_tensor({4, 3}, rng);
        auto f = [&](Tape& t, const Tensor& x) { return weighted_sum(t, transpose(t, x), w); };
        push("transpose", grad_check(f, a, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({4, 5}, rng), w = rand_tensor({4, 5}, rng);
        auto f = [&](Tape& t, const Tensor& v) { return weighted_sum(t, softmax_rows(t, v), w); };
        push("softmax_rows", grad_check(f, x, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({3, 6}, rng);
        Tensor gamma = Tensor::uniform({6}, 0.5, 1.5, rng), beta = rand_tensor({6}, rng);
        Tensor w = rand_tensor({3, 6}, rng);
        auto fx = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, layer_norm(t, v, gamma, beta, 1e-5), w);
        };
        auto fg = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, layer_norm(t, x, v, beta, 1e-5), w);
        };
        auto fb = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, layer_norm(t, x, gamma, v, 1e-5), w);
        };
        push("layer_norm", max_of({grad_check(fx, x, kEps, tol).max_rel_err,
                                   grad_check(fg, gamma, kEps, tol).max_rel_err,
                                   grad_check(fb, beta, kEps, tol).max_rel_err}));
    }
    {
        Tensor x = rand_tensor({5, 3}, rng);
        Tensor kernel = rand_tensor({3, 3, 2}, rng), bias = rand_tensor({2}, rng);
        Tensor w = rand_tensor({5, 2}, rng);
        auto fx = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, conv1d_same(t, v, kernel, bias), w);
        };
        auto fk = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, conv1d_same(t, x, v, bias), w);
        };
        auto fb = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, conv1d_same(t, x, kernel, v), w);
        };
        push("conv1d_same", max_of({grad_check(fx, x, kEps, tol).max_rel_err,
                                    grad_check(fk, kernel, kEps, tol).max_rel_err,
                                    grad_check(fb, bias, kEps, tol).max_rel_err}));
    }
    {
        Tensor a = rand_tensor({3, 3}, rng), b = rand_tensor({3, 3}, rng);
        Tensor w = rand_tensor({3, 3}, rng);
        auto fa = [&](Tape& t, const Tensor& x) { return weighted_sum(t, add(t, x, b), w); };
        auto fb = [&](Tape& t, const Tensor& x) { return weighted_sum(t, add(t, a, x), w); };
        push("add", max_of({grad_check(fa, a, kEps, tol).max_rel_err,
                            grad_check(fb, b, kEps, tol).max_rel_err}));
        auto fs = [&](Tape& t, const Tensor& x) { return weighted_sum(t, sub(t, x, b), w); };
        auto fs2 = [&](Tape& t, const Tensor& x) { return weighted_sum(t, sub(t, a, x), w); };
        push("sub", max_of({grad_check(fs, a, kEps, tol).max_rel_err,
                            grad_check(fs2, b, kEps, tol).max_rel_err}));
        auto fm = [&](Tape& t, const Tensor& x) { return weighted_sum(t, mul(t, x, b), w); };
        auto fm2 = [&](Tape& t, const Tensor& x) { return weighted_sum(t, mul(t, a, x), w); };
        push("mul", max_of({grad_check(fm, a, kEps, tol).max_rel_err,
                            grad_check(fm2, b, kEps, tol).max_rel_err}));
    }
    {
        Tensor x = rand_tensor({2, 5}, rng), w = rand_tensor({2, 5}, rng);
        auto fs = [&](Tape& t, const Tensor& v) { return weighted_sum(t, sigmoid(t, v), w); };
        push("sigmoid", grad_check(fs, x, kEps, tol).max_rel_err);
        // Keep values away from the ReLU kink so central differences are clean.
        Tensor xr = rand_tensor({2, 5}, rng);
        for (std::size_t i = 0; i < xr.size(); ++i) {
            if (std::abs(xr[i]) < 0.05) xr[i] = xr[i] < 0 ? -0.05 : 0.05;
        }
        auto fr = [&](Tape& t, const Tensor& v) { return weighted_sum(t, relu(t, v), w); };
        push("relu", grad_check(fr, xr, kEps, tol).max_rel_err);
        auto fc = [&](Tape& t, const Tensor& v) { return weighted_sum(t, scale(t, v, -1.7), w); };
        push("scale", grad_check(fc, x, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({4, 3}, rng), b = rand_tensor({3}, rng);
        Tensor w = rand_tensor({4, 3}, rng);
        auto fx = [&](Tape& t, const Tensor& v) { return weighted_sum(t, add_bias(t, v, b), w); };
        auto fb = [&](Tape& t, const Tensor& v) { return weighted_sum(t, add_bias(t, x, v), w); };
        push("add_bias", max_of({grad_check(fx, x, kEps, tol).max_rel_err,
                                 grad_check(fb, b, kEps, tol).max_rel_err}));
    }
    {
        Tensor x = rand_tensor({5, 3}, rng);
        Tensor mask({5}, {1.0, 0.0, 1.0, 1.0, 0.0});
        Tensor w = rand_tensor({3}, rng);
        auto f = [&](Tape& t, const Tensor& v) { return weighted_sum(t, mean_rows(t, v, mask), w); };
        push("mean_rows", grad_check(f, x, kEps, tol).max_rel_err);
    }
    {
        Tensor a = rand_tensor({3, 2}, rng), b = rand_tensor({3, 4}, rng);
        Tensor w = rand_tensor({3, 6}, rng);
        auto fa = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, concat_cols(t, {v, b}), w);
        };
        auto fb = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, concat_cols(t, {a, v}), w);
        };
        push("concat_cols", max_of({grad_check(fa, a, kEps, tol).max_rel_err,
                                    grad_check(fb, b, kEps, tol).max_rel_err}));
    }
    {
        Tensor table = rand_tensor({6, 4}, rng);
        std::vector<int> ids = {0, 3, 3, 5, 1}; // repeated id exercises scatter-add
        Tensor w = rand_tensor({5, 4}, rng);
        auto f = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, embedding_rows(t, v, ids), w);
        };
        push("embedding_rows", grad_check(f, table, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({3, 4}, rng), w = rand_tensor({12}, rng);
        auto f = [&](Tape& t, const Tensor& v) {
            return weighted_sum(t, reshape(t, v, {12}), w);
        };
        push("reshape", grad_check(f, x, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({4, 4}, rng), w = rand_tensor({4, 4}, rng);
        const std::uint64_t mask_seed = rng.next_u64();
        auto f = [&](Tape& t, const Tensor& v) {
            Rng mask_rng(mask_seed); // identical mask on every evaluation
            return weighted_sum(t, dropout(t, v, 0.4, mask_rng, true), w);
        };
        push("dropout", grad_check(f, x, kEps, tol).max_rel_err);
    }
    {
        Tensor probs = Tensor::uniform({4}, 0.05, 1.0, rng);
        auto f = [&](Tape& t, const Tensor& v) { return pick_neg_log(t, v, 2); };
        push("pick_neg_log", grad_check(f, probs, kEps, tol).max_rel_err);
    }
    {
        Tensor x = rand_tensor({3, 3}, rng);
        auto f = [&](Tape& t, const Tensor& v) { return sum_all(t, v); };
        push("sum_all", grad_check(f, x, kEps, tol).max_rel_err);
    }

    // Full model loss: embeddings through attention, amplification, fusion,
    // FFN, pooling, classifier, and cross-entropy in one composition.
    {
        EncodedInput enc = probe_input(12);
        ModelConfig mc;
        mc.vocab_size = 10;
        mc.d_model = d_model;
        mc.n_heads = n_heads;
        mc.d_ff = 2 * d_model;
        mc.n_layers = 1;
        mc.max_len = 12;
        ModelParams proto = ModelParams::init(mc, rng.next_u64());
        double err = 0.0;
        for (const char* name : {"tok_emb", "pos_emb", "seg_emb", "layer0.head0.w_q",
                                 "layer0.head0.w_k", "layer0.head0.w_v",
                                 "layer0.head0.gate_ori_kernel", "layer0.head0.gate_amp_bias",
                                 "layer0.w_h", "layer0.ffn_w1", "layer0.ffn_b2",
                                 "layer0.ln_attn_gamma", "layer0.ln_mha_beta", "w_p", "b_p"}) {
            err = std::max(err, model_loss_check(proto, enc, name, AblationMode::Full));
        }
        err = std::max(err, model_loss_check(proto, enc, "layer0.head0.fuse_w",
                                             AblationMode::NoGatedFusion));
        err = std::max(err, model_loss_check(proto, enc, "layer0.head1.w_v",
                                             AblationMode::NoOriginal));
        err = std::max(err, model_loss_check(proto, enc, "layer0.head1.gate_ori_kernel",
                                             AblationMode::NoAmplified));
        push("model_loss", err);
    }

    return report;
}

} // namespace a3sn
