#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "a3sn/errors.hpp"
#include "a3sn/rng.hpp"

namespace a3sn {

// Dense row-major f64 tensor with an optional gradient buffer. Copies are
// shallow (shared storage); values are treated as immutable once an op has
// produced them. Gradients accumulate into the buffer during Tape::backward.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    std::size_t size() const { return node_->data.size(); }

    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double& operator[](std::size_t i) { return node_->data[i]; }
    // 2-D element access.
    double at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return node_->data[r * node_->shape[1] + c]; }

    // Value of a single-element tensor.
    double item() const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    // Gradient buffer; throws if backward never reached this tensor.
    const std::vector<double>& grad() const;
    // Gradient buffer for accumulation, allocated (zeroed) on first use.
    std::vector<double>& grad_buffer() const;
    void zero_grad() const;

    // Deep copy of values, no grad, requires_grad off.
    Tensor detached() const;

    // True if all values are finite.
    bool all_finite() const;

    // "[2x3]" style shape string for error messages.
    std::string shape_str() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    struct Node {
        std::vector<std::size_t> shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::vector<double> grad; // empty until first accumulation
    };
    std::shared_ptr<Node> node_;
};

// Linear record of backward rules in forward execution order. One tape per
// training step; replaying the records in reverse accumulates gradients into
// every tensor that requires them. backward() may run once per tape.
class Tape {
public:
    Tape() = default;

    // Tape that records nothing; ops built on it produce grad-free outputs.
    static Tape inference();

    bool recording() const { return recording_; }
    std::size_t num_records() const { return records_.size(); }

    void record(std::function<void()> backward_rule);

    // Seeds d(loss)/d(loss) = 1 and replays all records in reverse.
    // loss must be a single-element tensor. Errors on a second call.
    void backward(const Tensor& loss);

private:
    std::vector<std::function<void()>> records_;
    bool recording_ = true;
    bool used_ = false;
};

// ---- differentiable operations -------------------------------------------

// [m×k] x [k×n] -> [m×n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// [m×n] -> [n×m]
Tensor transpose(Tape& tape, const Tensor& a);

// Softmax over the last dimension, max-subtracted for stability.
Tensor softmax_rows(Tape& tape, const Tensor& x);

// Per-row layer normalization over the last dimension followed by the
// gamma/beta affine map. gamma and beta are 1-D of the row width.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps);

// 1-D convolution over the sequence axis with "same" zero padding.
// x: [seq×d_in], kernel: [w×d_in×d_out] (w odd), bias: [d_out] -> [seq×d_out]
Tensor conv1d_same(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Exact-shape elementwise ops.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor scale(Tape& tape, const Tensor& x, double s);

// Adds a [d] bias vector to every row of [...×d].
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& b);

// Mean over rows of x [seq×d] whose mask entry is nonzero. mask: [seq].
Tensor mean_rows(Tape& tape, const Tensor& x, const Tensor& mask);

// Column-wise concatenation of [N×d_i] blocks -> [N×sum(d_i)].
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

// Row gather: out[t,:] = table[ids[t],:]. Gradient scatters back into table.
Tensor embedding_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids);

// Same data, new shape (element count must match).
Tensor reshape(Tape& tape, const Tensor& x, std::vector<std::size_t> new_shape);

// Inverted dropout. Identity when training is false or p == 0.
Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng, bool training);

// -log(max(probs[index], 1e-12)); scalar output. probs is 1-D or [1×C].
Tensor pick_neg_log(Tape& tape, const Tensor& probs, std::size_t index);

// Sum of all elements; scalar output.
Tensor sum_all(Tape& tape, const Tensor& x);

// ---- gradient checking oracle ---------------------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    bool pass = false;
};

// Compares the taped gradient of a scalar-valued f at x against central
// finite differences, coordinate by coordinate. Relative error uses
// |a - n| / max(1, |a|, |n|). eps must lie in [1e-6, 1e-3].
GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           const Tensor& x, double eps, double tol);

} // namespace a3sn
