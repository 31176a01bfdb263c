#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ood/common.hpp"

namespace ood {

// Dense n-dimensional array, row-major, shared-value semantics (copies share
// storage). Gradients accumulate into a lazily allocated buffer of the same
// length as the data.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, Real value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<Real> data,
                            bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

    Real* data() { return impl_->data.data(); }
    const Real* data() const { return impl_->data.data(); }
    std::vector<Real>& vec() { return impl_->data; }
    const std::vector<Real>& vec() const { return impl_->data; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Grad buffer, zero-initialized on first access.
    Real* grad();
    const std::vector<Real>& grad_vec() const { return impl_->grad; }
    void zero_grad() { if (impl_) impl_->grad.clear(); }

    Real item() const;

    // Deep copy of values (no grad, no tape history).
    Tensor clone() const;
    // Same underlying storage identity (used by tape internals).
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    void check_finite(const char* context) const;

  private:
    struct Impl {
        std::vector<int> shape;
        std::vector<Real> data;
        std::vector<Real> grad;  // empty until first accumulation
        bool requires_grad = false;
    };
    std::shared_ptr<Impl> impl_;

    static Tensor make(std::vector<int> shape, std::vector<Real> data, bool rg);
    friend Tensor make_unchecked(std::vector<int> shape, std::vector<Real> data, bool rg);
};

std::int64_t shape_numel(const std::vector<int>& shape);

// Ordered record of differentiable operations. backward() replays the
// recorded adjoint closures in exact reverse order; single-threaded by
// contract, so replays are bitwise reproducible.
class Tape {
  public:
    void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // loss must be scalar; seeds its grad with 1 and propagates.
    void backward(Tensor& loss);

  private:
    std::vector<std::function<void()>> nodes_;
};

// --- Differentiable ops -----------------------------------------------------
// Every op takes the tape first; pass nullptr for constant (no-grad) paths,
// e.g. teacher forwards. Result requires_grad only when a tape is given and
// some operand requires grad.

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);  // [m,k]x[k,n]
Tensor transpose(Tape* tape, const Tensor& x);                // 2-D
Tensor reshape(Tape* tape, const Tensor& x, std::vector<int> shape);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);  // same shape
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);  // elementwise
Tensor mul_scalar(Tape* tape, const Tensor& x, Real c);
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& b);  // [m,n]+[n]

Tensor exp_op(Tape* tape, const Tensor& x);
Tensor log_clamped(Tape* tape, const Tensor& x, Real eps);
Tensor relu(Tape* tape, const Tensor& x);
Tensor gelu(Tape* tape, const Tensor& x);

Tensor sum(Tape* tape, const Tensor& x);   // -> scalar
Tensor mean(Tape* tape, const Tensor& x);  // -> scalar

// Row-wise softmax with temperature over the last axis; max-subtracted.
Tensor softmax_temp(Tape* tape, const Tensor& logits, Real tau);

// y = gamma * (x - mu) / sqrt(var + eps) + beta, per row of [m,n].
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Real eps = 1e-6);

// --- Fused token ops for the encoder ([B,T,D] layouts) ----------------------

// Scaled dot-product multi-head self-attention over tokens of each sample.
Tensor attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v, int heads);
// Prepends a learned token (e.g. CLS) to every sample: [B,T,D] -> [B,T+1,D].
Tensor prepend_token(Tape* tape, const Tensor& x, const Tensor& token);
// Adds a [T,D] table (e.g. positional embedding) to every sample of [B,T,D].
Tensor add_token_table(Tape* tape, const Tensor& x, const Tensor& table);
// Extracts token `index` of every sample: [B,T,D] -> [B,D].
Tensor select_token(Tape* tape, const Tensor& x, int index);
// Mean over the token axis of [B,T,D], skipping the first `skip_first` tokens.
Tensor mean_tokens(Tape* tape, const Tensor& x, int skip_first);

}  // namespace ood
