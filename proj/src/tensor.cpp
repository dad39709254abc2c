#include "a3sn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace a3sn {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_to_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                             b.shape_str());
    }
}

// Rows/width split for ops that act over the last dimension.
void last_dim_split(const Tensor& x, std::size_t& rows, std::size_t& width) {
    width = x.shape().back();
    rows = x.size() / width;
}

} // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_str(shape));
    }
    if (shape_product(shape) != data.size()) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_to_str(shape));
    }
    node_ = std::make_shared<Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    std::size_t n = shape_product(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = rng.next_uniform(lo, hi);
    return Tensor(std::move(shape), std::move(data), requires_grad);
}

double Tensor::item() const {
    if (!node_ || node_->data.size() != 1) {
        throw ContractError("item() requires a single-element tensor, got " +
                            (node_ ? shape_str() : std::string("<empty>")));
    }
    return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("gradient not available; run Tape::backward first");
    }
    return node_->grad;
}

std::vector<double>& Tensor::grad_buffer() const {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() const {
    if (node_) node_->grad.clear();
}

Tensor Tensor::detached() const {
    return Tensor(node_->shape, node_->data, false);
}

bool Tensor::all_finite() const {
    for (double v : node_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    return shape_to_str(node_->shape);
}

// ---- Tape -------------------------------------------------------------------

Tape Tape::inference() {
    Tape t;
    t.recording_ = false;
    return t;
}

void Tape::record(std::function<void()> backward_rule) {
    if (recording_) records_.push_back(std::move(backward_rule));
}

void Tape::backward(const Tensor& loss) {
    if (used_) throw ContractError("backward already ran on this tape");
    used_ = true;
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward requires a single-element loss tensor");
    }
    if (!loss.requires_grad()) {
        // Nothing on the tape feeds this value; backward is a no-op.
        return;
    }
    Tensor seed = loss;
    seed.grad_buffer()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

// ---- op helpers -------------------------------------------------------------

namespace {

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.recording()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

} // namespace

// ---- matmul -----------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " and " +
                             b.shape_str());
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n}, wants_grad(tape, {&a, &b}));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (out.requires_grad()) {
        tape.record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad_buffer();
                // dA = dC · Bᵀ
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* grow = go.data() + i * n;
                        const double* brow = b.data().data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                        ga[i * k + p] += s;
                    }
                }
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad_buffer();
                // dB = Aᵀ · dC
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = a.data().data() + i * k;
                    const double* grow = go.data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = arow[p];
                        double* gbrow = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + a.shape_str());
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m}, wants_grad(tape, {&a}));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    if (out.requires_grad()) {
        tape.record([a, out, m, n]() mutable {
            if (!out.has_grad()) return;
            std::vector<double>& ga = a.grad_buffer();
            const std::vector<double>& go = out.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    std::size_t rows, width;
    last_dim_split(x, rows, width);
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * width;
        double* oi = out.data().data() + r * width;
        double mx = xi[0];
        for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < width; ++j) oi[j] *= inv;
    }
    if (out.requires_grad()) {
        tape.record([x, out, rows, width]() mutable {
            if (!out.has_grad()) return;
            std::vector<double>& gx = x.grad_buffer();
            const std::vector<double>& go = out.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* s = out.data().data() + r * width;
                const double* g = go.data() + r * width;
                double dot = 0.0;
                for (std::size_t j = 0; j < width; ++j) dot += g[j] * s[j];
                double* gxr = gx.data() + r * width;
                for (std::size_t j = 0; j < width; ++j) gxr[j] += s[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

// ---- layer norm ---------------------------------------------------------------

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    std::size_t rows, width;
    last_dim_split(x, rows, width);
    if (gamma.rank() != 1 || gamma.dim(0) != width || beta.rank() != 1 || beta.dim(0) != width) {
        throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(width) +
                             "], got " + gamma.shape_str() + " and " + beta.shape_str());
    }
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x, &gamma, &beta}));
    // Normalized values and inverse stddevs are reused by the backward rule.
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xi = x.data().data() + r * width;
        double mean = 0.0;
        for (std::size_t j = 0; j < width; ++j) mean += xi[j];
        mean /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double istd = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = istd;
        double* h = xhat->data() + r * width;
        double* oi = out.data().data() + r * width;
        for (std::size_t j = 0; j < width; ++j) {
            h[j] = (xi[j] - mean) * istd;
            oi[j] = gamma[j] * h[j] + beta[j];
        }
    }
    if (out.requires_grad()) {
        tape.record([x, gamma, beta, out, xhat, inv_std, rows, width]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            const double w = static_cast<double>(width);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = go.data() + r * width;
                const double* h = xhat->data() + r * width;
                if (gamma.requires_grad()) {
                    std::vector<double>& gg = gamma.grad_buffer();
                    for (std::size_t j = 0; j < width; ++j) gg[j] += g[j] * h[j];
                }
                if (beta.requires_grad()) {
                    std::vector<double>& gb = beta.grad_buffer();
                    for (std::size_t j = 0; j < width; ++j) gb[j] += g[j];
                }
                if (x.requires_grad()) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dh = g[j] * gamma[j];
                        sum_dh += dh;
                        sum_dh_h += dh * h[j];
                    }
                    std::vector<double>& gx = x.grad_buffer();
                    double* gxr = gx.data() + r * width;
                    const double istd = (*inv_std)[r];
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dh = g[j] * gamma[j];
                        gxr[j] += istd * (dh - sum_dh / w - h[j] * (sum_dh_h / w));
                    }
                }
            }
        });
    }
    return out;
}

// ---- conv1d -------------------------------------------------------------------

Tensor conv1d_same(Tape& tape, const Tensor& x, const Tensor& kernel, const Tensor& bias) {
    if (x.rank() != 2 || kernel.rank() != 3 || bias.rank() != 1) {
        throw DimensionError("conv1d_same: expected x[seq×d_in], kernel[w×d_in×d_out], bias[d_out]");
    }
    const std::size_t seq = x.dim(0), d_in = x.dim(1);
    const std::size_t w = kernel.dim(0), d_out = kernel.dim(2);
    if (w % 2 == 0) throw ConfigError("conv1d_same: kernel width must be odd, got " + std::to_string(w));
    if (kernel.dim(1) != d_in || bias.dim(0) != d_out) {
        throw DimensionError("conv1d_same: kernel " + kernel.shape_str() + " / bias " +
                             bias.shape_str() + " incompatible with input " + x.shape_str());
    }
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
    Tensor out = Tensor::zeros({seq, d_out}, wants_grad(tape, {&x, &kernel, &bias}));
    for (std::size_t t = 0; t < seq; ++t) {
        double* orow = out.data().data() + t * d_out;
        for (std::size_t o = 0; o < d_out; ++o) orow[o] = bias[o];
        for (std::size_t dw = 0; dw < w; ++dw) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dw) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(seq)) continue;
            const double* xrow = x.data().data() + static_cast<std::size_t>(src) * d_in;
            const double* krow = kernel.data().data() + dw * d_in * d_out;
            for (std::size_t i = 0; i < d_in; ++i) {
                const double xv = xrow[i];
                const double* kio = krow + i * d_out;
                for (std::size_t o = 0; o < d_out; ++o) orow[o] += xv * kio[o];
            }
        }
    }
    if (out.requires_grad()) {
        tape.record([x, kernel, bias, out, seq, d_in, w, d_out, half]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            for (std::size_t t = 0; t < seq; ++t) {
                const double* grow = go.data() + t * d_out;
                if (bias.requires_grad()) {
                    std::vector<double>& gb = bias.grad_buffer();
                    for (std::size_t o = 0; o < d_out; ++o) gb[o] += grow[o];
                }
                for (std::size_t dw = 0; dw < w; ++dw) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(dw) - half;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(seq)) continue;
                    const std::size_t s = static_cast<std::size_t>(src);
                    if (kernel.requires_grad()) {
                        std::vector<double>& gk = kernel.grad_buffer();
                        const double* xrow = x.data().data() + s * d_in;
                        double* krow = gk.data() + dw * d_in * d_out;
                        for (std::size_t i = 0; i < d_in; ++i) {
                            const double xv = xrow[i];
                            double* kio = krow + i * d_out;
                            for (std::size_t o = 0; o < d_out; ++o) kio[o] += xv * grow[o];
                        }
                    }
                    if (x.requires_grad()) {
                        std::vector<double>& gx = x.grad_buffer();
                        double* gxrow = gx.data() + s * d_in;
                        const double* krow = kernel.data().data() + dw * d_in * d_out;
                        for (std::size_t i = 0; i < d_in; ++i) {
                            const double* kio = krow + i * d_out;
                            double acc = 0.0;
                            for (std::size_t o = 0; o < d_out; ++o) acc += kio[o] * grow[o];
                            gxrow[i] += acc;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- elementwise ----------------------------------------------------------------

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    if (out.requires_grad()) {
        tape.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    if (out.requires_grad()) {
        tape.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    if (out.requires_grad()) {
        tape.record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            if (a.requires_grad()) {
                std::vector<double>& ga = a.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double s = out[i];
                gx[i] += go[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) {
                if (x[i] > 0.0) gx[i] += go[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
    if (out.requires_grad()) {
        tape.record([x, out, s]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * s;
        });
    }
    return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& b) {
    std::size_t rows, width;
    last_dim_split(x, rows, width);
    if (b.rank() != 1 || b.dim(0) != width) {
        throw DimensionError("add_bias: bias " + b.shape_str() + " does not match row width of " +
                             x.shape_str());
    }
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x, &b}));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j) out[r * width + j] = x[r * width + j] + b[j];
    if (out.requires_grad()) {
        tape.record([x, b, out, rows, width]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            if (x.requires_grad()) {
                std::vector<double>& gx = x.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& gb = b.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < width; ++j) gb[j] += go[r * width + j];
            }
        });
    }
    return out;
}

Tensor mean_rows(Tape& tape, const Tensor& x, const Tensor& mask) {
    if (x.rank() != 2 || mask.rank() != 1 || mask.dim(0) != x.dim(0)) {
        throw DimensionError("mean_rows: expected x[seq×d] and mask[seq], got " + x.shape_str() +
                             " and " + mask.shape_str());
    }
    const std::size_t seq = x.dim(0), d = x.dim(1);
    std::size_t count = 0;
    for (std::size_t t = 0; t < seq; ++t)
        if (mask[t] != 0.0) ++count;
    if (count == 0) throw DataError("mean_rows: empty input, mask selects no rows");
    Tensor out = Tensor::zeros({d}, wants_grad(tape, {&x}));
    for (std::size_t t = 0; t < seq; ++t) {
        if (mask[t] == 0.0) continue;
        const double* row = x.data().data() + t * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t j = 0; j < d; ++j) out[j] *= inv;
    if (out.requires_grad()) {
        tape.record([x, mask, out, seq, d, inv]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t t = 0; t < seq; ++t) {
                if (mask[t] == 0.0) continue;
                double* grow = gx.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) grow[j] += go[j] * inv;
            }
        });
    }
    return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t n = parts.front().dim(0);
    std::size_t total = 0;
    bool need_grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n) {
            throw DimensionError("concat_cols: row count mismatch at " + p.shape_str());
        }
        total += p.dim(1);
        need_grad = need_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({n, total}, tape.recording() && need_grad);
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t d = p.dim(1);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < d; ++j) out.at(r, col + j) = p.at(r, j);
        col += d;
    }
    if (out.requires_grad()) {
        tape.record([parts, out, n, total]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::size_t col = 0;
            for (Tensor p : parts) {
                const std::size_t d = p.dim(1);
                if (p.requires_grad()) {
                    std::vector<double>& gp = p.grad_buffer();
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < d; ++j) gp[r * d + j] += go[r * total + col + j];
                }
                col += d;
            }
        });
    }
    return out;
}

Tensor embedding_rows(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding_rows: table must be rank-2");
    const std::size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw DataError("embedding_rows: id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(v) + ")");
        }
    }
    Tensor out = Tensor::zeros({ids.size(), d}, wants_grad(tape, {&table}));
    for (std::size_t t = 0; t < ids.size(); ++t) {
        const double* row = table.data().data() + static_cast<std::size_t>(ids[t]) * d;
        std::copy(row, row + d, out.data().data() + t * d);
    }
    if (out.requires_grad()) {
        tape.record([table, out, ids, d]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gt = table.grad_buffer();
            for (std::size_t t = 0; t < ids.size(); ++t) {
                double* trow = gt.data() + static_cast<std::size_t>(ids[t]) * d;
                const double* grow = go.data() + t * d;
                for (std::size_t j = 0; j < d; ++j) trow[j] += grow[j];
            }
        });
    }
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<std::size_t> new_shape) {
    if (shape_product(new_shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + x.shape_str() + " as " +
                             shape_to_str(new_shape));
    }
    Tensor out(std::move(new_shape), x.data(), wants_grad(tape, {&x}));
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    Tensor out = Tensor::zeros(x.shape(), wants_grad(tape, {&x}));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.next_double() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out[i] = x[i] * m;
    }
    if (out.requires_grad()) {
        tape.record([x, out, mask]() mutable {
            if (!out.has_grad()) return;
            const std::vector<double>& go = out.grad();
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor pick_neg_log(Tape& tape, const Tensor& probs, std::size_t index) {
    if (index >= probs.size()) {
        throw ContractError("pick_neg_log: index " + std::to_string(index) + " out of range for " +
                            probs.shape_str());
    }
    const double p = probs[index];
    double clamped = p;
    if (clamped < 1e-12) {
        clamped = 1e-12;
        fprintf(stderr, "warning: probability clamped to 1e-12 in loss\n");
    }
    Tensor out = Tensor::scalar(-std::log(clamped), wants_grad(tape, {&probs}));
    if (out.requires_grad()) {
        tape.record([probs, out, index, clamped]() mutable {
            if (!out.has_grad()) return;
            probs.grad_buffer()[index] += out.grad()[0] * (-1.0 / clamped);
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    Tensor out = Tensor::scalar(s, wants_grad(tape, {&x}));
    if (out.requires_grad()) {
        tape.record([x, out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            std::vector<double>& gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

// ---- grad check -----------------------------------------------------------------

GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                           const Tensor& x, double eps, double tol) {
    if (eps < 1e-6 || eps > 1e-3) {
        throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");
    }
    Tensor probe(x.shape(), x.data(), true);
    Tape tape;
    Tensor y = f(tape, probe);
    if (y.size() != 1) throw ContractError("grad_check: f must produce a scalar");
    tape.backward(y);
    std::vector<double> analytic(probe.size(), 0.0);
    if (probe.has_grad()) analytic = probe.grad();

    GradCheckResult result;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        Tensor plus(x.shape(), x.data(), false);
        plus[i] += eps;
        Tensor minus(x.shape(), x.data(), false);
        minus[i] -= eps;
        Tape tp = Tape::inference();
        const double fp = f(tp, plus).item();
        Tape tm = Tape::inference();
        const double fm = f(tm, minus).item();
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[i];
        const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
        const double rel = std::fabs(a - numeric) / denom;
        if (rel >= result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_coord = i;
            result.analytic_at_worst = a;
            result.numeric_at_worst = numeric;
        }
    }
    result.pass = result.max_rel_err <= tol;
    return result;
}

} // namespace a3sn
