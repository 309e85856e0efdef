#pragma once

// Dense n-dimensional tensors (rank 0..4) over a closed, enumerated set of
// primitives, with reverse-mode automatic differentiation on an explicit
// tape. The primitive set is fixed so that gradient coverage and cost
// accounting can be checked exhaustively.
//
// Thread model: a tensor is immutable after creation except for its grad
// accumulator; a tape is single-writer. Independent forward passes on
// distinct tapes (one active tape per thread) may run concurrently over a
// read-only parameter set.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agf {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

enum class Op {
    matmul,
    bmm,
    transpose_last2,
    add,
    sub,
    mul,
    add_scalar,
    mul_scalar,
    scale_channels,
    sqrt_,
    relu,
    gelu,
    tanh_,
    softmax_last,
    layer_norm,
    batch_norm,
    reshape,
    permute_0213,
    concat_last,
    slice_last,
    slice_axis0,
    slice_axis1,
    repeat_axis0,
    add_bias_row,
    bcast_add_axis0,
    bcast_add_axis1,
    sum_last,
    sum_all,
    mean_all,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::matmul: return "matmul";
        case Op::bmm: return "bmm";
        case Op::transpose_last2: return "transpose_last2";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::add_scalar: return "add_scalar";
        case Op::mul_scalar: return "mul_scalar";
        case Op::scale_channels: return "scale_channels";
        case Op::sqrt_: return "sqrt";
        case Op::relu: return "relu";
        case Op::gelu: return "gelu";
        case Op::tanh_: return "tanh";
        case Op::softmax_last: return "softmax_last";
        case Op::layer_norm: return "layer_norm";
        case Op::batch_norm: return "batch_norm";
        case Op::reshape: return "reshape";
        case Op::permute_0213: return "permute_0213";
        case Op::concat_last: return "concat_last";
        case Op::slice_last: return "slice_last";
        case Op::slice_axis0: return "slice_axis0";
        case Op::slice_axis1: return "slice_axis1";
        case Op::repeat_axis0: return "repeat_axis0";
        case Op::add_bias_row: return "add_bias_row";
        case Op::bcast_add_axis0: return "bcast_add_axis0";
        case Op::bcast_add_axis1: return "bcast_add_axis1";
        case Op::sum_last: return "sum_last";
        case Op::sum_all: return "sum_all";
        case Op::mean_all: return "mean_all";
    }
    return nullptr;
}

[[noreturn]] inline void op_error(Op op, const std::string& what) {
    const char* name = op_name(op);
    throw std::runtime_error(std::string(name ? name : "<unknown primitive>") + ": " + what);
}

// Running statistics for one batch-norm layer. Owned by the parameter store,
// mutated only in training mode with update enabled.
template <typename T>
struct BatchNormStats {
    std::vector<T> mean;
    std::vector<T> var;
};

template <typename T>
struct OpAttrs {
    double scalar = 0.0;                    // add_scalar / mul_scalar
    Shape shape;                            // reshape target
    std::size_t offset = 0;                 // slices
    std::size_t count = 0;                  // slices
    std::size_t repeat = 1;                 // repeat_axis0
    double eps = 1e-5;                      // layer_norm / batch_norm
    double momentum = 0.1;                  // batch_norm
    bool training = false;                  // batch_norm
    bool update_running_stats = true;       // batch_norm
    BatchNormStats<T>* bn_stats = nullptr;  // batch_norm running buffers
};

template <typename T>
class Tape;

template <typename T>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
        if (values.size() != numel_of(shape_))
            throw std::runtime_error("tensor: " + std::to_string(values.size()) +
                                     " values do not fill shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)));
    }

    static Tensor full(Shape shape, T value) {
        std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_ ? data_->size() : 0; }
    bool defined() const { return data_ != nullptr; }

    const std::vector<T>& data() const { return *data_; }
    std::vector<T>& mutable_data() { return *data_; }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool on) {
        requires_grad_ = on;
        if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
        if (!on) grad_.reset();
        return *this;
    }

    bool has_grad() const { return grad_ != nullptr; }
    const std::vector<T>& grad() const {
        if (!grad_) throw std::runtime_error("tensor: grad accessed but not allocated");
        return *grad_;
    }
    std::vector<T>& mutable_grad() {
        if (!grad_) throw std::runtime_error("tensor: grad accessed but not allocated");
        return *grad_;
    }
    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw std::runtime_error("tensor: item() on non-scalar " + shape_str(shape_));
        return (*data_)[0];
    }

    // Same data buffer under a new shape. Participates in the tape via the
    // reshape primitive when gradients are required; this is the raw view.
    Tensor viewed_as(Shape shape) const {
        if (numel_of(shape) != numel())
            throw std::runtime_error("tensor: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        Tensor out = *this;
        out.shape_ = std::move(shape);
        return out;
    }

    Tensor detached() const {
        Tensor out;
        out.shape_ = shape_;
        out.data_ = data_;
        return out;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;

    Tape<T>* tape_ = nullptr;
    int tape_id_ = -1;

    friend class Tape<T>;
    template <typename U>
    friend Tensor<U> apply_primitive(Op, const std::vector<Tensor<U>>&, const OpAttrs<U>&);
    template <typename U>
    friend void backward(const Tensor<U>&);
};

// One recorded primitive application: the op id, the participating tensors
// (inputs carry their tape ids; constants carry -1) and saved intermediates
// needed by the backward rule.
template <typename T>
struct TapeNode {
    Op op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::vector<std::vector<T>> saved;
    OpAttrs<T> attrs;
};

template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

    bool empty() const { return nodes_.empty(); }
    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

    // Registers the application; `returned_output` is the caller-visible
    // tensor and receives the tape id so backward() can locate the tape.
    void record(TapeNode<T> node, Tensor<T>& returned_output) {
        for (auto& in : node.inputs) assign_id(in);
        assign_id(returned_output);
        node.output = returned_output;
        nodes_.push_back(std::move(node));
    }

    void run_backward(const Tensor<T>& loss);

private:
    void assign_id(Tensor<T>& t) {
        if (t.tape_ == this && t.tape_id_ >= 0) return;
        t.tape_ = this;
        t.tape_id_ = next_id_++;
        if (t.requires_grad_ && !t.grad_) t.grad_ = std::make_shared<std::vector<T>>(t.numel(), T(0));
    }

    std::vector<TapeNode<T>> nodes_;
    int next_id_ = 0;
    bool consumed_ = false;
};

// RAII guard making a tape the active recorder for the current thread.
template <typename T>
class TapeGuard {
public:
    explicit TapeGuard(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
    ~TapeGuard() { Tape<T>::active() = previous_; }
    TapeGuard(const TapeGuard&) = delete;
    TapeGuard& operator=(const TapeGuard&) = delete;

private:
    Tape<T>* previous_;
};

namespace detail {

template <typename T>
inline void matmul_accum(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n,
                         bool accumulate) {
    if (!accumulate) std::fill(out, out + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out += a^T * b, a is m x k, b is m x n, out is k x n
template <typename T>
inline void matmul_at_b(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            T* orow = out + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out += a * b^T, a is m x k, b is n x k, out is m x n
template <typename T>
inline void matmul_a_bt(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] += acc;
        }
    }
}

inline double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_bwd(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    return cdf + x * pdf;
}

}  // namespace detail

// Forward declaration; definition after the shape checks below.
template <typename T>
Tensor<T> apply_primitive(Op op, const std::vector<Tensor<T>>& inputs, const OpAttrs<T>& attrs = {});

namespace detail {

template <typename T>
void check_arity(Op op, const std::vector<Tensor<T>>& in, std::size_t want) {
    if (in.size() != want)
        op_error(op, "expects " + std::to_string(want) + " inputs, got " + std::to_string(in.size()));
    for (const auto& t : in)
        if (!t.defined()) op_error(op, "undefined input tensor");
}

template <typename T>
void check_same_shape(Op op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> apply_primitive(Op op, const std::vector<Tensor<T>>& inputs, const OpAttrs<T>& attrs) {
    using detail::check_arity;
    using detail::check_same_shape;

    Tensor<T> out;
    std::vector<std::vector<T>> saved;

    switch (op) {
        case Op::matmul: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.rank() != 2 || b.rank() != 2)
                op_error(op, "expects rank-2 inputs, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
            if (a.shape()[1] != b.shape()[0])
                op_error(op, "inner dimensions " + std::to_string(a.shape()[1]) + " and " +
                                 std::to_string(b.shape()[0]) + " do not match");
            const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
            out = Tensor<T>::zeros({m, n});
            detail::matmul_accum(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n, true);
            break;
        }
        case Op::bmm: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.rank() != 3 || b.rank() != 3)
                op_error(op, "expects rank-3 inputs, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
            if (a.shape()[0] != b.shape()[0])
                op_error(op, "batch dimensions " + std::to_string(a.shape()[0]) + " and " +
                                 std::to_string(b.shape()[0]) + " do not match");
            if (a.shape()[2] != b.shape()[1])
                op_error(op, "inner dimensions " + std::to_string(a.shape()[2]) + " and " +
                                 std::to_string(b.shape()[1]) + " do not match");
            const std::size_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
            out = Tensor<T>::zeros({bs, m, n});
            for (std::size_t i = 0; i < bs; ++i)
                detail::matmul_accum(a.data().data() + i * m * k, b.data().data() + i * k * n,
                                     out.mutable_data().data() + i * m * n, m, k, n, true);
            break;
        }
        case Op::transpose_last2: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() != 2 && a.rank() != 3)
                op_error(op, "expects rank-2 or rank-3 input, got " + shape_str(a.shape()));
            const std::size_t bs = a.rank() == 3 ? a.shape()[0] : 1;
            const std::size_t m = a.shape()[a.rank() - 2], n = a.shape()[a.rank() - 1];
            Shape os = a.shape();
            std::swap(os[a.rank() - 2], os[a.rank() - 1]);
            out = Tensor<T>::zeros(os);
            for (std::size_t i = 0; i < bs; ++i) {
                const T* src = a.data().data() + i * m * n;
                T* dst = out.mutable_data().data() + i * m * n;
                for (std::size_t r = 0; r < m; ++r)
                    for (std::size_t c = 0; c < n; ++c) dst[c * m + r] = src[r * n + c];
            }
            break;
        }
        case Op::add:
        case Op::sub:
        case Op::mul: {
            check_arity(op, inputs, 2);
            check_same_shape(op, inputs[0], inputs[1]);
            const auto& a = inputs[0].data();
            const auto& b = inputs[1].data();
            out = Tensor<T>::zeros(inputs[0].shape());
            auto& o = out.mutable_data();
            if (op == Op::add)
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
            else if (op == Op::sub)
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
            else
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
            break;
        }
        case Op::add_scalar:
        case Op::mul_scalar: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0].data();
            const T c = static_cast<T>(attrs.scalar);
            out = Tensor<T>::zeros(inputs[0].shape());
            auto& o = out.mutable_data();
            if (op == Op::add_scalar)
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + c;
            else
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * c;
            break;
        }
        case Op::scale_channels: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& s = inputs[1];
            if (a.rank() < 1 || s.rank() != a.rank() || s.shape().back() != 1)
                op_error(op, "scale shape " + shape_str(s.shape()) + " must equal value shape " +
                                 shape_str(a.shape()) + " with last extent 1");
            for (std::size_t i = 0; i + 1 < a.rank(); ++i)
                if (a.shape()[i] != s.shape()[i])
                    op_error(op, "leading shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(s.shape()));
            const std::size_t d = a.shape().back();
            const std::size_t rows = a.numel() / d;
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T sv = s.data()[r];
                for (std::size_t j = 0; j < d; ++j) o[r * d + j] = a.data()[r * d + j] * sv;
            }
            break;
        }
        case Op::sqrt_:
        case Op::relu:
        case Op::gelu:
        case Op::tanh_: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0].data();
            out = Tensor<T>::zeros(inputs[0].shape());
            auto& o = out.mutable_data();
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double x = static_cast<double>(a[i]);
                double y = 0.0;
                if (op == Op::sqrt_) {
                    if (x < 0.0) op_error(op, "negative input " + std::to_string(x));
                    y = std::sqrt(x);
                } else if (op == Op::relu) {
                    y = x > 0.0 ? x : 0.0;
                } else if (op == Op::gelu) {
                    y = detail::gelu_fwd(x);
                } else {
                    y = std::tanh(x);
                }
                o[i] = static_cast<T>(y);
            }
            break;
        }
        case Op::softmax_last: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() < 1) op_error(op, "expects rank >= 1");
            const std::size_t d = a.shape().back();
            const std::size_t rows = a.numel() / d;
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data().data() + r * d;
                T* y = o.data() + r * d;
                T mx = x[0];
                for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double e = std::exp(static_cast<double>(x[j] - mx));
                    y[j] = static_cast<T>(e);
                    denom += e;
                }
                for (std::size_t j = 0; j < d; ++j) y[j] = static_cast<T>(static_cast<double>(y[j]) / denom);
            }
            break;
        }
        case Op::layer_norm: {
            check_arity(op, inputs, 3);
            const auto& a = inputs[0];
            const auto& gamma = inputs[1];
            const auto& beta = inputs[2];
            if (a.rank() < 1) op_error(op, "expects rank >= 1");
            const std::size_t d = a.shape().back();
            if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
                op_error(op, "affine shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                                 " must be [" + std::to_string(d) + "]");
            const std::size_t rows = a.numel() / d;
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            std::vector<T> xhat(a.numel());
            std::vector<T> inv_std(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* x = a.data().data() + r * d;
                double mean = 0.0;
                for (std::size_t j = 0; j < d; ++j) mean += x[j];
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = x[j] - mean;
                    var += c * c;
                }
                var /= static_cast<double>(d);
                const double istd = 1.0 / std::sqrt(var + attrs.eps);
                inv_std[r] = static_cast<T>(istd);
                for (std::size_t j = 0; j < d; ++j) {
                    const double h = (x[j] - mean) * istd;
                    xhat[r * d + j] = static_cast<T>(h);
                    o[r * d + j] = static_cast<T>(h * gamma.data()[j] + beta.data()[j]);
                }
            }
            saved.push_back(std::move(xhat));
            saved.push_back(std::move(inv_std));
            break;
        }
        case Op::batch_norm: {
            check_arity(op, inputs, 3);
            const auto& a = inputs[0];
            const auto& gamma = inputs[1];
            const auto& beta = inputs[2];
            if (a.rank() < 2) op_error(op, "expects rank >= 2");
            const std::size_t d = a.shape().back();
            if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
                op_error(op, "affine shapes must be [" + std::to_string(d) + "]");
            if (attrs.bn_stats == nullptr) op_error(op, "missing running statistics");
            auto& stats = *attrs.bn_stats;
            if (stats.mean.size() != d || stats.var.size() != d)
                op_error(op, "running statistics size mismatch");
            const std::size_t rows = a.numel() / d;
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            std::vector<T> mean_used(d), inv_std(d);
            if (attrs.training) {
                for (std::size_t j = 0; j < d; ++j) {
                    double m = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) m += a.data()[r * d + j];
                    m /= static_cast<double>(rows);
                    double v = 0.0;
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double c = a.data()[r * d + j] - m;
                        v += c * c;
                    }
                    v /= static_cast<double>(rows);
                    mean_used[j] = static_cast<T>(m);
                    inv_std[j] = static_cast<T>(1.0 / std::sqrt(v + attrs.eps));
                    if (attrs.update_running_stats) {
                        stats.mean[j] = static_cast<T>((1.0 - attrs.momentum) * stats.mean[j] + attrs.momentum * m);
                        stats.var[j] = static_cast<T>((1.0 - attrs.momentum) * stats.var[j] + attrs.momentum * v);
                    }
                }
            } else {
                for (std::size_t j = 0; j < d; ++j) {
                    mean_used[j] = stats.mean[j];
                    inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[j]) + attrs.eps));
                }
            }
            std::vector<T> xhat(a.numel());
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) {
                    const double h = (a.data()[r * d + j] - mean_used[j]) * static_cast<double>(inv_std[j]);
                    xhat[r * d + j] = static_cast<T>(h);
                    o[r * d + j] = static_cast<T>(h * gamma.data()[j] + beta.data()[j]);
                }
            saved.push_back(std::move(xhat));
            saved.push_back(std::move(inv_std));
            break;
        }
        case Op::reshape: {
            check_arity(op, inputs, 1);
            if (numel_of(attrs.shape) != inputs[0].numel())
                op_error(op, "cannot reshape " + shape_str(inputs[0].shape()) + " to " + shape_str(attrs.shape));
            out = Tensor<T>(attrs.shape, inputs[0].data());
            break;
        }
        case Op::permute_0213: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() != 4) op_error(op, "expects rank-4 input, got " + shape_str(a.shape()));
            const std::size_t n0 = a.shape()[0], n1 = a.shape()[1], n2 = a.shape()[2], n3 = a.shape()[3];
            out = Tensor<T>::zeros({n0, n2, n1, n3});
            auto& o = out.mutable_data();
            for (std::size_t i = 0; i < n0; ++i)
                for (std::size_t j = 0; j < n1; ++j)
                    for (std::size_t k = 0; k < n2; ++k) {
                        const T* src = a.data().data() + ((i * n1 + j) * n2 + k) * n3;
                        T* dst = o.data() + ((i * n2 + k) * n1 + j) * n3;
                        std::copy(src, src + n3, dst);
                    }
            break;
        }
        case Op::concat_last: {
            if (inputs.size() < 2) op_error(op, "expects at least 2 inputs");
            for (const auto& t : inputs)
                if (!t.defined()) op_error(op, "undefined input tensor");
            const auto& first = inputs[0];
            if (first.rank() < 1) op_error(op, "expects rank >= 1");
            std::size_t total_last = 0;
            for (const auto& t : inputs) {
                if (t.rank() != first.rank()) op_error(op, "rank mismatch among inputs");
                for (std::size_t i = 0; i + 1 < t.rank(); ++i)
                    if (t.shape()[i] != first.shape()[i])
                        op_error(op, "leading shape mismatch " + shape_str(t.shape()) + " vs " +
                                         shape_str(first.shape()));
                total_last += t.shape().back();
            }
            Shape os = first.shape();
            os.back() = total_last;
            out = Tensor<T>::zeros(os);
            auto& o = out.mutable_data();
            const std::size_t rows = first.numel() / first.shape().back();
            std::size_t col = 0;
            for (const auto& t : inputs) {
                const std::size_t d = t.shape().back();
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy(t.data().data() + r * d, t.data().data() + (r + 1) * d,
                              o.data() + r * total_last + col);
                col += d;
            }
            break;
        }
        case Op::slice_last: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() < 1) op_error(op, "expects rank >= 1");
            const std::size_t d = a.shape().back();
            if (attrs.count == 0 || attrs.offset + attrs.count > d)
                op_error(op, "range [" + std::to_string(attrs.offset) + ", " +
                                 std::to_string(attrs.offset + attrs.count) + ") exceeds extent " + std::to_string(d));
            Shape os = a.shape();
            os.back() = attrs.count;
            out = Tensor<T>::zeros(os);
            auto& o = out.mutable_data();
            const std::size_t rows = a.numel() / d;
            for (std::size_t r = 0; r < rows; ++r)
                std::copy(a.data().data() + r * d + attrs.offset, a.data().data() + r * d + attrs.offset + attrs.count,
                          o.data() + r * attrs.count);
            break;
        }
        case Op::slice_axis0: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() < 1) op_error(op, "expects rank >= 1");
            const std::size_t n0 = a.shape()[0];
            if (attrs.count == 0 || attrs.offset + attrs.count > n0)
                op_error(op, "range [" + std::to_string(attrs.offset) + ", " +
                                 std::to_string(attrs.offset + attrs.count) + ") exceeds extent " + std::to_string(n0));
            Shape os = a.shape();
            os[0] = attrs.count;
            const std::size_t stride = a.numel() / n0;
            out = Tensor<T>::zeros(os);
            std::copy(a.data().data() + attrs.offset * stride, a.data().data() + (attrs.offset + attrs.count) * stride,
                      out.mutable_data().data());
            break;
        }
        case Op::slice_axis1: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() != 3) op_error(op, "expects rank-3 input, got " + shape_str(a.shape()));
            const std::size_t n0 = a.shape()[0], n1 = a.shape()[1], d = a.shape()[2];
            if (attrs.count == 0 || attrs.offset + attrs.count > n1)
                op_error(op, "range [" + std::to_string(attrs.offset) + ", " +
                                 std::to_string(attrs.offset + attrs.count) + ") exceeds extent " + std::to_string(n1));
            out = Tensor<T>::zeros({n0, attrs.count, d});
            auto& o = out.mutable_data();
            for (std::size_t i = 0; i < n0; ++i)
                std::copy(a.data().data() + (i * n1 + attrs.offset) * d,
                          a.data().data() + (i * n1 + attrs.offset + attrs.count) * d,
                          o.data() + i * attrs.count * d);
            break;
        }
        case Op::repeat_axis0: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() < 1) op_error(op, "expects rank >= 1");
            if (attrs.repeat == 0) op_error(op, "repeat count must be positive");
            Shape os = a.shape();
            os[0] *= attrs.repeat;
            out = Tensor<T>::zeros(os);
            auto& o = out.mutable_data();
            for (std::size_t r = 0; r < attrs.repeat; ++r)
                std::copy(a.data().begin(), a.data().end(), o.begin() + r * a.numel());
            break;
        }
        case Op::add_bias_row: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.rank() < 1 || b.rank() != 1 || b.shape()[0] != a.shape().back())
                op_error(op, "bias shape " + shape_str(b.shape()) + " must be [" +
                                 std::to_string(a.shape().back()) + "]");
            const std::size_t d = a.shape().back();
            const std::size_t rows = a.numel() / d;
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) o[r * d + j] = a.data()[r * d + j] + b.data()[j];
            break;
        }
        case Op::bcast_add_axis0: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.rank() != 3 || b.rank() != 3 || b.shape()[0] != 1 || b.shape()[1] != a.shape()[1] ||
                b.shape()[2] != a.shape()[2])
                op_error(op, "cannot broadcast " + shape_str(b.shape()) + " over axis 0 of " + shape_str(a.shape()));
            const std::size_t n0 = a.shape()[0], inner = a.shape()[1] * a.shape()[2];
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            for (std::size_t i = 0; i < n0; ++i)
                for (std::size_t j = 0; j < inner; ++j) o[i * inner + j] = a.data()[i * inner + j] + b.data()[j];
            break;
        }
        case Op::bcast_add_axis1: {
            check_arity(op, inputs, 2);
            const auto& a = inputs[0];
            const auto& b = inputs[1];
            if (a.rank() != 3 || b.rank() != 3 || b.shape()[0] != a.shape()[0] || b.shape()[1] != 1 ||
                b.shape()[2] != a.shape()[2])
                op_error(op, "cannot broadcast " + shape_str(b.shape()) + " over axis 1 of " + shape_str(a.shape()));
            const std::size_t n0 = a.shape()[0], n1 = a.shape()[1], d = a.shape()[2];
            out = Tensor<T>::zeros(a.shape());
            auto& o = out.mutable_data();
            for (std::size_t i = 0; i < n0; ++i)
                for (std::size_t j = 0; j < n1; ++j)
                    for (std::size_t c = 0; c < d; ++c)
                        o[(i * n1 + j) * d + c] = a.data()[(i * n1 + j) * d + c] + b.data()[i * d + c];
            break;
        }
        case Op::sum_last: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            if (a.rank() < 2) op_error(op, "expects rank >= 2");
            const std::size_t d = a.shape().back();
            Shape os(a.shape().begin(), a.shape().end() - 1);
            out = Tensor<T>::zeros(os);
            auto& o = out.mutable_data();
            for (std::size_t r = 0; r < o.size(); ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += a.data()[r * d + j];
                o[r] = static_cast<T>(acc);
            }
            break;
        }
        case Op::sum_all:
        case Op::mean_all: {
            check_arity(op, inputs, 1);
            const auto& a = inputs[0];
            double acc = 0.0;
            for (const T v : a.data()) acc += v;
            if (op == Op::mean_all) acc /= static_cast<double>(a.numel());
            out = Tensor<T>::scalar(static_cast<T>(acc));
            break;
        }
        default:
            throw std::runtime_error("unknown primitive id " + std::to_string(static_cast<int>(op)));
    }

    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    if (needs_grad) {
        out.requires_grad_ = true;
        out.grad_ = std::make_shared<std::vector<T>>(out.numel(), T(0));
        if (Tape<T>* tape = Tape<T>::active()) {
            TapeNode<T> node;
            node.op = op;
            node.inputs = inputs;
            node.saved = std::move(saved);
            node.attrs = attrs;
            node.attrs.bn_stats = nullptr;  // running buffers are not needed by backward
            tape->record(std::move(node), out);
        }
    }
    return out;
}

// --- named wrappers over apply_primitive ------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::matmul, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::bmm, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    return apply_primitive(Op::transpose_last2, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::add, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::sub, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::mul, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double c) {
    OpAttrs<T> at;
    at.scalar = c;
    return apply_primitive(Op::add_scalar, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, double c) {
    OpAttrs<T> at;
    at.scalar = c;
    return apply_primitive(Op::mul_scalar, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& a, const Tensor<T>& s) {
    return apply_primitive(Op::scale_channels, std::vector<Tensor<T>>{a, s});
}
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return apply_primitive(Op::sqrt_, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return apply_primitive(Op::relu, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    return apply_primitive(Op::gelu, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return apply_primitive(Op::tanh_, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
    return apply_primitive(Op::softmax_last, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5) {
    OpAttrs<T> at;
    at.eps = eps;
    return apply_primitive(Op::layer_norm, std::vector<Tensor<T>>{a, gamma, beta}, at);
}
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     bool training, bool update_running_stats = true, double momentum = 0.1, double eps = 1e-5) {
    OpAttrs<T> at;
    at.eps = eps;
    at.momentum = momentum;
    at.training = training;
    at.update_running_stats = update_running_stats;
    at.bn_stats = &stats;
    return apply_primitive(Op::batch_norm, std::vector<Tensor<T>>{a, gamma, beta}, at);
}
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    OpAttrs<T> at;
    at.shape = std::move(shape);
    return apply_primitive(Op::reshape, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> permute_0213(const Tensor<T>& a) {
    return apply_primitive(Op::permute_0213, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    return apply_primitive(Op::concat_last, parts);
}
template <typename T>
Tensor<T> slice_last(const Tensor<T>& a, std::size_t offset, std::size_t count) {
    OpAttrs<T> at;
    at.offset = offset;
    at.count = count;
    return apply_primitive(Op::slice_last, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> slice_axis0(const Tensor<T>& a, std::size_t offset, std::size_t count) {
    OpAttrs<T> at;
    at.offset = offset;
    at.count = count;
    return apply_primitive(Op::slice_axis0, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> slice_axis1(const Tensor<T>& a, std::size_t offset, std::size_t count) {
    OpAttrs<T> at;
    at.offset = offset;
    at.count = count;
    return apply_primitive(Op::slice_axis1, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> repeat_axis0(const Tensor<T>& a, std::size_t k) {
    OpAttrs<T> at;
    at.repeat = k;
    return apply_primitive(Op::repeat_axis0, std::vector<Tensor<T>>{a}, at);
}
template <typename T>
Tensor<T> add_bias_row(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::add_bias_row, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> bcast_add_axis0(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::bcast_add_axis0, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> bcast_add_axis1(const Tensor<T>& a, const Tensor<T>& b) {
    return apply_primitive(Op::bcast_add_axis1, std::vector<Tensor<T>>{a, b});
}
template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
    return apply_primitive(Op::sum_last, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    return apply_primitive(Op::sum_all, std::vector<Tensor<T>>{a});
}
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return apply_primitive(Op::mean_all, std::vector<Tensor<T>>{a});
}

// --- backward ----------------------------------------------------------------

template <typename T>
void Tape<T>::run_backward(const Tensor<T>& loss) {
    if (consumed_) throw std::runtime_error("backward: tape already consumed");
    if (nodes_.empty()) throw std::runtime_error("backward: empty tape");
    if (loss.numel() != 1)
        throw std::runtime_error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (loss.tape_ != this || loss.tape_id_ < 0)
        throw std::runtime_error("backward: loss is not a recorded output of this tape");

    // Fresh accumulation: clear the grad of every tensor that participates.
    for (auto& node : nodes_) {
        for (auto& in : node.inputs)
            if (in.has_grad()) in.zero_grad();
        if (node.output.has_grad()) node.output.zero_grad();
    }

    if (!loss.grad_) throw std::runtime_error("backward: loss does not require grad");
    (*loss.grad_)[0] = T(1);

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        TapeNode<T>& node = *it;
        if (!node.output.grad_) continue;
        const std::vector<T>& g = *node.output.grad_;
        auto grad_of = [](Tensor<T>& t) -> std::vector<T>* {
            return t.requires_grad() && t.grad_ ? t.grad_.get() : nullptr;
        };
        auto& ins = node.inputs;

        switch (node.op) {
            case Op::matmul: {
                const std::size_t m = ins[0].shape()[0], k = ins[0].shape()[1], n = ins[1].shape()[1];
                if (auto* ga = grad_of(ins[0]))
                    detail::matmul_a_bt(g.data(), ins[1].data().data(), ga->data(), m, n, k);
                if (auto* gb = grad_of(ins[1]))
                    detail::matmul_at_b(ins[0].data().data(), g.data(), gb->data(), m, k, n);
                break;
            }
            case Op::bmm: {
                const std::size_t bs = ins[0].shape()[0];
                const std::size_t m = ins[0].shape()[1], k = ins[0].shape()[2], n = ins[1].shape()[2];
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < bs; ++i)
                        detail::matmul_a_bt(g.data() + i * m * n, ins[1].data().data() + i * k * n,
                                            ga->data() + i * m * k, m, n, k);
                if (auto* gb = grad_of(ins[1]))
                    for (std::size_t i = 0; i < bs; ++i)
                        detail::matmul_at_b(ins[0].data().data() + i * m * k, g.data() + i * m * n,
                                            gb->data() + i * k * n, m, k, n);
                break;
            }
            case Op::transpose_last2: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t bs = ins[0].rank() == 3 ? ins[0].shape()[0] : 1;
                    const std::size_t m = ins[0].shape()[ins[0].rank() - 2], n = ins[0].shape()[ins[0].rank() - 1];
                    for (std::size_t i = 0; i < bs; ++i)
                        for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t c = 0; c < n; ++c)
                                (*ga)[i * m * n + r * n + c] += g[i * m * n + c * m + r];
                }
                break;
            }
            case Op::add: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = grad_of(ins[1]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
                break;
            }
            case Op::sub: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = grad_of(ins[1]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                break;
            }
            case Op::mul: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * ins[1].data()[i];
                if (auto* gb = grad_of(ins[1]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ins[0].data()[i];
                break;
            }
            case Op::add_scalar: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                break;
            }
            case Op::mul_scalar: {
                if (auto* ga = grad_of(ins[0])) {
                    const T c = static_cast<T>(node.attrs.scalar);
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * c;
                }
                break;
            }
            case Op::scale_channels: {
                const std::size_t d = ins[0].shape().back();
                const std::size_t rows = ins[0].numel() / d;
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t r = 0; r < rows; ++r) {
                        const T sv = ins[1].data()[r];
                        for (std::size_t j = 0; j < d; ++j) (*ga)[r * d + j] += g[r * d + j] * sv;
                    }
                if (auto* gs = grad_of(ins[1]))
                    for (std::size_t r = 0; r < rows; ++r) {
                        T acc = T(0);
                        for (std::size_t j = 0; j < d; ++j) acc += g[r * d + j] * ins[0].data()[r * d + j];
                        (*gs)[r] += acc;
                    }
                break;
            }
            case Op::sqrt_: {
                if (auto* ga = grad_of(ins[0])) {
                    const auto& y = node.output.data();
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (y[i] != T(0)) (*ga)[i] += g[i] / (T(2) * y[i]);
                    // subgradient 0 at the origin
                }
                break;
            }
            case Op::relu: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (ins[0].data()[i] > T(0)) (*ga)[i] += g[i];
                break;
            }
            case Op::gelu: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i)
                        (*ga)[i] += g[i] * static_cast<T>(detail::gelu_bwd(static_cast<double>(ins[0].data()[i])));
                break;
            }
            case Op::tanh_: {
                if (auto* ga = grad_of(ins[0])) {
                    const auto& y = node.output.data();
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (T(1) - y[i] * y[i]);
                }
                break;
            }
            case Op::softmax_last: {
                if (auto* ga = grad_of(ins[0])) {
                    const auto& y = node.output.data();
                    const std::size_t d = ins[0].shape().back();
                    const std::size_t rows = ins[0].numel() / d;
                    for (std::size_t r = 0; r < rows; ++r) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(g[r * d + j]) * y[r * d + j];
                        for (std::size_t j = 0; j < d; ++j)
                            (*ga)[r * d + j] += static_cast<T>(y[r * d + j] * (static_cast<double>(g[r * d + j]) - dot));
                    }
                }
                break;
            }
            case Op::layer_norm: {
                const auto& xhat = node.saved[0];
                const auto& inv_std = node.saved[1];
                const std::size_t d = ins[0].shape().back();
                const std::size_t rows = ins[0].numel() / d;
                const auto& gamma = ins[1].data();
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t r = 0; r < rows; ++r) {
                        double sum_gg = 0.0, sum_ggx = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                            const double gg = static_cast<double>(g[r * d + j]) * gamma[j];
                            sum_gg += gg;
                            sum_ggx += gg * xhat[r * d + j];
                        }
                        const double inv_d = 1.0 / static_cast<double>(d);
                        for (std::size_t j = 0; j < d; ++j) {
                            const double gg = static_cast<double>(g[r * d + j]) * gamma[j];
                            (*ga)[r * d + j] += static_cast<T>(
                                inv_std[r] * (gg - sum_gg * inv_d - xhat[r * d + j] * sum_ggx * inv_d));
                        }
                    }
                if (auto* gg = grad_of(ins[1]))
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[r * d + j] * xhat[r * d + j];
                if (auto* gb = grad_of(ins[2]))
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
                break;
            }
            case Op::batch_norm: {
                const auto& xhat = node.saved[0];
                const auto& inv_std = node.saved[1];
                const std::size_t d = ins[0].shape().back();
                const std::size_t rows = ins[0].numel() / d;
                const auto& gamma = ins[1].data();
                if (auto* ga = grad_of(ins[0])) {
                    if (node.attrs.training) {
                        const double inv_m = 1.0 / static_cast<double>(rows);
                        for (std::size_t j = 0; j < d; ++j) {
                            double sum_g = 0.0, sum_gx = 0.0;
                            for (std::size_t r = 0; r < rows; ++r) {
                                sum_g += g[r * d + j];
                                sum_gx += static_cast<double>(g[r * d + j]) * xhat[r * d + j];
                            }
                            for (std::size_t r = 0; r < rows; ++r) {
                                const double t = static_cast<double>(g[r * d + j]) - sum_g * inv_m -
                                                 xhat[r * d + j] * sum_gx * inv_m;
                                (*ga)[r * d + j] += static_cast<T>(gamma[j] * inv_std[j] * t);
                            }
                        }
                    } else {
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j)
                                (*ga)[r * d + j] += static_cast<T>(g[r * d + j] * gamma[j] * inv_std[j]);
                    }
                }
                if (auto* gg = grad_of(ins[1]))
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[r * d + j] * xhat[r * d + j];
                if (auto* gb = grad_of(ins[2]))
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
                break;
            }
            case Op::reshape: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                break;
            }
            case Op::permute_0213: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t n0 = ins[0].shape()[0], n1 = ins[0].shape()[1], n2 = ins[0].shape()[2],
                                      n3 = ins[0].shape()[3];
                    for (std::size_t i = 0; i < n0; ++i)
                        for (std::size_t j = 0; j < n1; ++j)
                            for (std::size_t k = 0; k < n2; ++k)
                                for (std::size_t c = 0; c < n3; ++c)
                                    (*ga)[((i * n1 + j) * n2 + k) * n3 + c] += g[((i * n2 + k) * n1 + j) * n3 + c];
                }
                break;
            }
            case Op::concat_last: {
                const std::size_t total = node.output.shape().back();
                const std::size_t rows = node.output.numel() / total;
                std::size_t col = 0;
                for (auto& in : ins) {
                    const std::size_t d = in.shape().back();
                    if (auto* ga = grad_of(in))
                        for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t j = 0; j < d; ++j) (*ga)[r * d + j] += g[r * total + col + j];
                    col += d;
                }
                break;
            }
            case Op::slice_last: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t d = ins[0].shape().back();
                    const std::size_t rows = ins[0].numel() / d;
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < node.attrs.count; ++j)
                            (*ga)[r * d + node.attrs.offset + j] += g[r * node.attrs.count + j];
                }
                break;
            }
            case Op::slice_axis0: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t stride = ins[0].numel() / ins[0].shape()[0];
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[node.attrs.offset * stride + i] += g[i];
                }
                break;
            }
            case Op::slice_axis1: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t n0 = ins[0].shape()[0], n1 = ins[0].shape()[1], d = ins[0].shape()[2];
                    for (std::size_t i = 0; i < n0; ++i)
                        for (std::size_t j = 0; j < node.attrs.count; ++j)
                            for (std::size_t c = 0; c < d; ++c)
                                (*ga)[(i * n1 + node.attrs.offset + j) * d + c] +=
                                    g[(i * node.attrs.count + j) * d + c];
                }
                break;
            }
            case Op::repeat_axis0: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t n = ins[0].numel();
                    for (std::size_t r = 0; r < node.attrs.repeat; ++r)
                        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[r * n + i];
                }
                break;
            }
            case Op::add_bias_row: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = grad_of(ins[1])) {
                    const std::size_t d = ins[1].shape()[0];
                    const std::size_t rows = g.size() / d;
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
                }
                break;
            }
            case Op::bcast_add_axis0: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = grad_of(ins[1])) {
                    const std::size_t n0 = ins[0].shape()[0];
                    const std::size_t inner = ins[0].shape()[1] * ins[0].shape()[2];
                    for (std::size_t i = 0; i < n0; ++i)
                        for (std::size_t j = 0; j < inner; ++j) (*gb)[j] += g[i * inner + j];
                }
                break;
            }
            case Op::bcast_add_axis1: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                if (auto* gb = grad_of(ins[1])) {
                    const std::size_t n0 = ins[0].shape()[0], n1 = ins[0].shape()[1], d = ins[0].shape()[2];
                    for (std::size_t i = 0; i < n0; ++i)
                        for (std::size_t j = 0; j < n1; ++j)
                            for (std::size_t c = 0; c < d; ++c) (*gb)[i * d + c] += g[(i * n1 + j) * d + c];
                }
                break;
            }
            case Op::sum_last: {
                if (auto* ga = grad_of(ins[0])) {
                    const std::size_t d = ins[0].shape().back();
                    const std::size_t rows = ins[0].numel() / d;
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) (*ga)[r * d + j] += g[r];
                }
                break;
            }
            case Op::sum_all: {
                if (auto* ga = grad_of(ins[0]))
                    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0];
                break;
            }
            case Op::mean_all: {
                if (auto* ga = grad_of(ins[0])) {
                    const T c = g[0] / static_cast<T>(ins[0].numel());
                    for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += c;
                }
                break;
            }
        }
    }

    consumed_ = true;
    nodes_.clear();
}

// Accumulates d(loss)/d(leaf) into every participating requires_grad tensor
// and consumes the tape the loss was recorded on.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.tape_ == nullptr) throw std::runtime_error("backward: empty tape");
    loss.tape_->run_backward(loss);
}

}  // namespace agf
