#include "ood/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ood {

namespace {
constexpr Real kInvSqrt2 = 0.7071067811865475244;
constexpr Real kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("non-positive dimension " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor Tensor::make(std::vector<int> shape, std::vector<Real> data, bool rg) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw DimensionError("data length does not match shape");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = rg;
    return t;
}

Tensor make_unchecked(std::vector<int> shape, std::vector<Real> data, bool rg) {
    return Tensor::make(std::move(shape), std::move(data), rg);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    return make(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), 0.0),
                requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, Real value, bool requires_grad) {
    std::int64_t n = shape_numel(shape);
    Tensor t = make(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), value),
                    requires_grad);
    t.check_finite("Tensor::full");
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<Real> data, bool requires_grad) {
    Tensor t = make(std::move(shape), std::move(data), requires_grad);
    t.check_finite("Tensor::from_data");
    return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Real* Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad.data();
}

Real Tensor::item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor");
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    return make(impl_->shape, impl_->data, false);
}

void Tensor::check_finite(const char* context) const {
    for (Real v : impl_->data)
        if (!std::isfinite(v))
            throw NumericalError(std::string("non-finite value in ") + context);
}

void Tape::backward(Tensor& loss) {
    if (loss.size() != 1) throw UsageError("backward() requires a scalar loss");
    if (nodes_.empty()) throw UsageError("backward() on empty tape");
    loss.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

namespace {

bool track(Tape* tape, const Tensor& a) { return tape != nullptr && a.requires_grad(); }
bool track(Tape* tape, const Tensor& a, const Tensor& b) {
    return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": operand shapes differ");
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("matmul: operands must be 2-D");
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul: inner dimensions " + std::to_string(a.dim(1)) + " vs " +
                             std::to_string(b.dim(0)));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(m) * n, 0.0);
    const Real* A = a.data();
    const Real* B = b.data();
    for (int i = 0; i < m; ++i) {
        Real* orow = &out[static_cast<std::size_t>(i) * n];
        const Real* arow = &A[static_cast<std::size_t>(i) * k];
        for (int kk = 0; kk < k; ++kk) {
            const Real aik = arow[kk];
            const Real* brow = &B[static_cast<std::size_t>(kk) * n];
            for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    Tensor y = make_unchecked({m, n}, std::move(out), track(tape, a, b));
    if (y.requires_grad()) {
        Tensor ac = a, bc = b, yc = y;
        tape->record([ac, bc, yc, m, k, n]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            if (ac.requires_grad()) {
                Real* dA = ac.grad();
                const Real* B = bc.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        Real s = 0;
                        const Real* dyrow = &dY[static_cast<std::size_t>(i) * n];
                        const Real* brow = &B[static_cast<std::size_t>(kk) * n];
                        for (int j = 0; j < n; ++j) s += dyrow[j] * brow[j];
                        dA[static_cast<std::size_t>(i) * k + kk] += s;
                    }
            }
            if (bc.requires_grad()) {
                Real* dB = bc.grad();
                const Real* A = ac.data();
                for (int i = 0; i < m; ++i) {
                    const Real* dyrow = &dY[static_cast<std::size_t>(i) * n];
                    const Real* arow = &A[static_cast<std::size_t>(i) * k];
                    for (int kk = 0; kk < k; ++kk) {
                        const Real aik = arow[kk];
                        Real* dbrow = &dB[static_cast<std::size_t>(kk) * n];
                        for (int j = 0; j < n; ++j) dbrow[j] += aik * dyrow[j];
                    }
                }
            }
        });
    }
    return y;
}

Tensor transpose(Tape* tape, const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("transpose: tensor must be 2-D");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(m) * n);
    const Real* X = x.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = X[static_cast<std::size_t>(i) * n + j];
    Tensor y = make_unchecked({n, m}, std::move(out), track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, m, n]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    dX[static_cast<std::size_t>(i) * n + j] +=
                        dY[static_cast<std::size_t>(j) * m + i];
        });
    }
    return y;
}

Tensor reshape(Tape* tape, const Tensor& x, std::vector<int> shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: element count mismatch");
    Tensor y = make_unchecked(std::move(shape), x.vec(), track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.grad();
            for (std::int64_t i = 0; i < xc.size(); ++i) dX[i] += dY[i];
        });
    }
    return y;
}

namespace {

// Shared skeleton for same-shape binary ops with constant local gradients.
template <typename Fwd, typename Bwd>
Tensor binary_op(Tape* tape, const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 Bwd bwd) {
    require_same_shape(a, b, name);
    const std::int64_t n = a.size();
    std::vector<Real> out(static_cast<std::size_t>(n));
    const Real* A = a.data();
    const Real* B = b.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(A[i], B[i]);
    Tensor y = make_unchecked(a.shape(), std::move(out), track(tape, a, b));
    if (y.requires_grad()) {
        Tensor ac = a, bc = b, yc = y;
        tape->record([ac, bc, yc, n, bwd]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dA = ac.requires_grad() ? ac.grad() : nullptr;
            Real* dB = bc.requires_grad() ? bc.grad() : nullptr;
            const Real* A = ac.data();
            const Real* B = bc.data();
            for (std::int64_t i = 0; i < n; ++i) bwd(dY[i], A[i], B[i], dA, dB, i);
        });
    }
    return y;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "add", [](Real x, Real y) { return x + y; },
        [](Real d, Real, Real, Real* dA, Real* dB, std::int64_t i) {
            if (dA) dA[i] += d;
            if (dB) dB[i] += d;
        });
}

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "sub", [](Real x, Real y) { return x - y; },
        [](Real d, Real, Real, Real* dA, Real* dB, std::int64_t i) {
            if (dA) dA[i] += d;
            if (dB) dB[i] -= d;
        });
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    return binary_op(
        tape, a, b, "mul", [](Real x, Real y) { return x * y; },
        [](Real d, Real x, Real y, Real* dA, Real* dB, std::int64_t i) {
            if (dA) dA[i] += d * y;
            if (dB) dB[i] += d * x;
        });
}

Tensor mul_scalar(Tape* tape, const Tensor& x, Real c) {
    const std::int64_t n = x.size();
    std::vector<Real> out(static_cast<std::size_t>(n));
    const Real* X = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = X[i] * c;
    Tensor y = make_unchecked(x.shape(), std::move(out), track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, n, c]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dX[i] += dY[i] * c;
        });
    }
    return y;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || x.dim(1) != b.dim(0))
        throw DimensionError("add_bias: expected [m,n] + [n]");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<Real> out(static_cast<std::size_t>(m) * n);
    const Real* X = x.data();
    const Real* B = b.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = X[static_cast<std::size_t>(i) * n + j] + B[j];
    Tensor y = make_unchecked(x.shape(), std::move(out), track(tape, x, b));
    if (y.requires_grad()) {
        Tensor xc = x, bc = b, yc = y;
        tape->record([xc, bc, yc, m, n]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            if (xc.requires_grad()) {
                Real* dX = xc.grad();
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(m) * n; ++i)
                    dX[i] += dY[i];
            }
            if (bc.requires_grad()) {
                Real* dB = bc.grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) dB[j] += dY[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return y;
}

namespace {

// Unary elementwise skeleton; dfn(x, y) returns dy/dx.
template <typename Fwd, typename Dfn>
Tensor unary_op(Tape* tape, const Tensor& x, Fwd fwd, Dfn dfn, const char* name,
                bool validate = false) {
    const std::int64_t n = x.size();
    std::vector<Real> out(static_cast<std::size_t>(n));
    const Real* X = x.data();
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fwd(X[i]);
    Tensor y = make_unchecked(x.shape(), std::move(out), track(tape, x));
    if (validate) y.check_finite(name);
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, n, dfn]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            const Real* X = xc.data();
            const Real* Y = yc.data();
            Real* dX = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dX[i] += dY[i] * dfn(X[i], Y[i]);
        });
    }
    return y;
}

}  // namespace

Tensor exp_op(Tape* tape, const Tensor& x) {
    return unary_op(
        tape, x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; }, "exp",
        true);
}

Tensor log_clamped(Tape* tape, const Tensor& x, Real eps) {
    if (eps <= 0) throw ParameterError("log_clamped: eps must be positive");
    return unary_op(
        tape, x, [eps](Real v) { return std::log(std::max(v, eps)); },
        [eps](Real v, Real) { return v > eps ? 1.0 / v : 0.0; }, "log_clamped");
}

Tensor relu(Tape* tape, const Tensor& x) {
    return unary_op(
        tape, x, [](Real v) { return v > 0 ? v : 0.0; },
        [](Real v, Real) { return v > 0 ? 1.0 : 0.0; }, "relu");
}

Tensor gelu(Tape* tape, const Tensor& x) {
    return unary_op(
        tape, x, [](Real v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](Real v, Real) {
            const Real cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const Real pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        },
        "gelu");
}

Tensor sum(Tape* tape, const Tensor& x) {
    const std::int64_t n = x.size();
    Real s = 0;
    const Real* X = x.data();
    for (std::int64_t i = 0; i < n; ++i) s += X[i];
    Tensor y = make_unchecked({1}, {s}, track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, n]() mutable {
            if (!yc.has_grad()) return;
            const Real d = yc.grad()[0];
            Real* dX = xc.grad();
            for (std::int64_t i = 0; i < n; ++i) dX[i] += d;
        });
    }
    return y;
}

Tensor mean(Tape* tape, const Tensor& x) {
    Tensor s = sum(tape, x);
    return mul_scalar(tape, s, 1.0 / static_cast<Real>(x.size()));
}

Tensor softmax_temp(Tape* tape, const Tensor& logits, Real tau) {
    if (tau <= 0) throw ParameterError("softmax_temp: tau must be positive");
    if (logits.ndim() < 1) throw DimensionError("softmax_temp: rank-0 input");
    const int K = logits.dim(logits.ndim() - 1);
    if (K < 2) throw DimensionError("softmax_temp: last dimension must be >= 2");
    const std::int64_t rows = logits.size() / K;
    std::vector<Real> out(static_cast<std::size_t>(logits.size()));
    const Real* X = logits.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xr = &X[r * K];
        Real* yr = &out[static_cast<std::size_t>(r * K)];
        Real mx = xr[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, xr[i]);
        Real z = 0;
        for (int i = 0; i < K; ++i) {
            yr[i] = std::exp((xr[i] - mx) / tau);
            z += yr[i];
        }
        const Real inv = 1.0 / z;
        for (int i = 0; i < K; ++i) yr[i] *= inv;
    }
    Tensor y = make_unchecked(logits.shape(), std::move(out), track(tape, logits));
    y.check_finite("softmax_temp");
    if (y.requires_grad()) {
        Tensor xc = logits, yc = y;
        tape->record([xc, yc, rows, K, tau]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            const Real* P = yc.data();
            Real* dX = xc.grad();
            const Real inv_tau = 1.0 / tau;
            for (std::int64_t r = 0; r < rows; ++r) {
                const Real* pr = &P[r * K];
                const Real* dr = &dY[r * K];
                Real dot = 0;
                for (int i = 0; i < K; ++i) dot += pr[i] * dr[i];
                for (int i = 0; i < K; ++i) dX[r * K + i] += inv_tau * pr[i] * (dr[i] - dot);
            }
        });
    }
    return y;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Real eps) {
    if (x.ndim() != 2) throw DimensionError("layer_norm: input must be 2-D");
    const int m = x.dim(0), n = x.dim(1);
    if (gamma.ndim() != 1 || gamma.dim(0) != n || beta.ndim() != 1 || beta.dim(0) != n)
        throw DimensionError("layer_norm: gamma/beta must be [n]");
    std::vector<Real> out(static_cast<std::size_t>(m) * n);
    std::vector<Real> means(static_cast<std::size_t>(m)), invs(static_cast<std::size_t>(m));
    const Real* X = x.data();
    const Real* G = gamma.data();
    const Real* Bt = beta.data();
    for (int i = 0; i < m; ++i) {
        const Real* xr = &X[static_cast<std::size_t>(i) * n];
        Real mu = 0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        Real var = 0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const Real inv = 1.0 / std::sqrt(var + eps);
        means[static_cast<std::size_t>(i)] = mu;
        invs[static_cast<std::size_t>(i)] = inv;
        Real* yr = &out[static_cast<std::size_t>(i) * n];
        for (int j = 0; j < n; ++j) yr[j] = G[j] * (xr[j] - mu) * inv + Bt[j];
    }
    bool rg = tape != nullptr &&
              (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    Tensor y = make_unchecked(x.shape(), std::move(out), rg);
    if (rg) {
        Tensor xc = x, gc = gamma, bc = beta, yc = y;
        tape->record([xc, gc, bc, yc, m, n, means, invs]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            const Real* X = xc.data();
            const Real* G = gc.data();
            Real* dX = xc.requires_grad() ? xc.grad() : nullptr;
            Real* dG = gc.requires_grad() ? gc.grad() : nullptr;
            Real* dB = bc.requires_grad() ? bc.grad() : nullptr;
            std::vector<Real> xhat(static_cast<std::size_t>(n)), dyh(static_cast<std::size_t>(n));
            for (int i = 0; i < m; ++i) {
                const Real* xr = &X[static_cast<std::size_t>(i) * n];
                const Real* dr = &dY[static_cast<std::size_t>(i) * n];
                const Real mu = means[static_cast<std::size_t>(i)];
                const Real inv = invs[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) xhat[static_cast<std::size_t>(j)] = (xr[j] - mu) * inv;
                if (dG)
                    for (int j = 0; j < n; ++j) dG[j] += dr[j] * xhat[static_cast<std::size_t>(j)];
                if (dB)
                    for (int j = 0; j < n; ++j) dB[j] += dr[j];
                if (dX) {
                    Real s1 = 0, s2 = 0;
                    for (int j = 0; j < n; ++j) {
                        dyh[static_cast<std::size_t>(j)] = dr[j] * G[j];
                        s1 += dyh[static_cast<std::size_t>(j)];
                        s2 += dyh[static_cast<std::size_t>(j)] * xhat[static_cast<std::size_t>(j)];
                    }
                    Real* dxr = &dX[static_cast<std::size_t>(i) * n];
                    for (int j = 0; j < n; ++j)
                        dxr[j] += inv * (dyh[static_cast<std::size_t>(j)] - s1 / n -
                                         xhat[static_cast<std::size_t>(j)] * s2 / n);
                }
            }
        });
    }
    return y;
}

Tensor attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
        throw DimensionError("attention: inputs must be [B,T,D]");
    require_same_shape(q, k, "attention");
    require_same_shape(q, v, "attention");
    const int B = q.dim(0), T = q.dim(1), D = q.dim(2);
    if (heads < 1 || D % heads != 0)
        throw ParameterError("attention: head count must divide the model dimension");
    const int dh = D / heads;
    const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
    std::vector<Real> out(static_cast<std::size_t>(B) * T * D, 0.0);
    // Softmax rows kept for the adjoint: [B, H, T, T].
    std::vector<Real> attn(static_cast<std::size_t>(B) * heads * T * T);
    const Real* Q = q.data();
    const Real* K = k.data();
    const Real* V = v.data();
    for (int b = 0; b < B; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * T * D;
        for (int h = 0; h < heads; ++h) {
            const int off = h * dh;
            Real* A = &attn[((static_cast<std::size_t>(b) * heads + h) * T) * T];
            for (int i = 0; i < T; ++i) {
                const Real* qi = &Q[base + static_cast<std::size_t>(i) * D + off];
                Real* arow = &A[static_cast<std::size_t>(i) * T];
                Real mx = -1e300;
                for (int j = 0; j < T; ++j) {
                    const Real* kj = &K[base + static_cast<std::size_t>(j) * D + off];
                    Real s = 0;
                    for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
                    arow[j] = s * scale;
                    mx = std::max(mx, arow[j]);
                }
                Real z = 0;
                for (int j = 0; j < T; ++j) {
                    arow[j] = std::exp(arow[j] - mx);
                    z += arow[j];
                }
                const Real inv = 1.0 / z;
                for (int j = 0; j < T; ++j) arow[j] *= inv;
                Real* oi = &out[base + static_cast<std::size_t>(i) * D + off];
                for (int j = 0; j < T; ++j) {
                    const Real a = arow[j];
                    const Real* vj = &V[base + static_cast<std::size_t>(j) * D + off];
                    for (int c = 0; c < dh; ++c) oi[c] += a * vj[c];
                }
            }
        }
    }
    bool rg = tape != nullptr &&
              (q.requires_grad() || k.requires_grad() || v.requires_grad());
    Tensor y = make_unchecked(q.shape(), std::move(out), rg);
    y.check_finite("attention");
    if (rg) {
        Tensor qc = q, kc = k, vc = v, yc = y;
        tape->record([qc, kc, vc, yc, B, T, D, heads, dh, scale,
                      attn = std::move(attn)]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            const Real* Q = qc.data();
            const Real* K = kc.data();
            const Real* V = vc.data();
            Real* dQ = qc.requires_grad() ? qc.grad() : nullptr;
            Real* dK = kc.requires_grad() ? kc.grad() : nullptr;
            Real* dV = vc.requires_grad() ? vc.grad() : nullptr;
            std::vector<Real> dA(static_cast<std::size_t>(T) * T);
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * T * D;
                for (int h = 0; h < heads; ++h) {
                    const int off = h * dh;
                    const Real* A = &attn[((static_cast<std::size_t>(b) * heads + h) * T) * T];
                    // dA = dO V^T ; dV += A^T dO
                    for (int i = 0; i < T; ++i) {
                        const Real* doi = &dY[base + static_cast<std::size_t>(i) * D + off];
                        Real* darow = &dA[static_cast<std::size_t>(i) * T];
                        for (int j = 0; j < T; ++j) {
                            const Real* vj = &V[base + static_cast<std::size_t>(j) * D + off];
                            Real s = 0;
                            for (int c = 0; c < dh; ++c) s += doi[c] * vj[c];
                            darow[j] = s;
                        }
                        if (dV) {
                            const Real* arow = &A[static_cast<std::size_t>(i) * T];
                            for (int j = 0; j < T; ++j) {
                                const Real a = arow[j];
                                Real* dvj = &dV[base + static_cast<std::size_t>(j) * D + off];
                                for (int c = 0; c < dh; ++c) dvj[c] += a * doi[c];
                            }
                        }
                    }
                    // dS = A o (dA - rowdot), then dQ += dS K * scale, dK += dS^T Q * scale
                    for (int i = 0; i < T; ++i) {
                        const Real* arow = &A[static_cast<std::size_t>(i) * T];
                        Real* darow = &dA[static_cast<std::size_t>(i) * T];
                        Real dot = 0;
                        for (int j = 0; j < T; ++j) dot += arow[j] * darow[j];
                        for (int j = 0; j < T; ++j)
                            darow[j] = arow[j] * (darow[j] - dot) * scale;
                        const Real* qi = &Q[base + static_cast<std::size_t>(i) * D + off];
                        Real* dqi = dQ ? &dQ[base + static_cast<std::size_t>(i) * D + off] : nullptr;
                        for (int j = 0; j < T; ++j) {
                            const Real ds = darow[j];
                            const Real* kj = &K[base + static_cast<std::size_t>(j) * D + off];
                            if (dqi)
                                for (int c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                            if (dK) {
                                Real* dkj = &dK[base + static_cast<std::size_t>(j) * D + off];
                                for (int c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                            }
                        }
                    }
                }
            }
        });
    }
    return y;
}

Tensor prepend_token(Tape* tape, const Tensor& x, const Tensor& token) {
    if (x.ndim() != 3) throw DimensionError("prepend_token: input must be [B,T,D]");
    const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (token.ndim() != 1 || token.dim(0) != D)
        throw DimensionError("prepend_token: token must be [D]");
    std::vector<Real> out(static_cast<std::size_t>(B) * (T + 1) * D);
    const Real* X = x.data();
    const Real* C = token.data();
    for (int b = 0; b < B; ++b) {
        Real* ob = &out[static_cast<std::size_t>(b) * (T + 1) * D];
        std::copy(C, C + D, ob);
        std::copy(&X[static_cast<std::size_t>(b) * T * D],
                  &X[static_cast<std::size_t>(b) * T * D] + static_cast<std::size_t>(T) * D,
                  ob + D);
    }
    Tensor y = make_unchecked({B, T + 1, D}, std::move(out), track(tape, x, token));
    if (y.requires_grad()) {
        Tensor xc = x, tc = token, yc = y;
        tape->record([xc, tc, yc, B, T, D]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.requires_grad() ? xc.grad() : nullptr;
            Real* dC = tc.requires_grad() ? tc.grad() : nullptr;
            for (int b = 0; b < B; ++b) {
                const Real* db = &dY[static_cast<std::size_t>(b) * (T + 1) * D];
                if (dC)
                    for (int c = 0; c < D; ++c) dC[c] += db[c];
                if (dX) {
                    Real* dxb = &dX[static_cast<std::size_t>(b) * T * D];
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(T) * D; ++i)
                        dxb[i] += db[D + i];
                }
            }
        });
    }
    return y;
}

Tensor add_token_table(Tape* tape, const Tensor& x, const Tensor& table) {
    if (x.ndim() != 3) throw DimensionError("add_token_table: input must be [B,T,D]");
    const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (table.ndim() != 2 || table.dim(0) != T || table.dim(1) != D)
        throw DimensionError("add_token_table: table must be [T,D]");
    std::vector<Real> out(static_cast<std::size_t>(B) * T * D);
    const Real* X = x.data();
    const Real* P = table.data();
    for (int b = 0; b < B; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * T * D;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(T) * D; ++i)
            out[base + static_cast<std::size_t>(i)] = X[base + static_cast<std::size_t>(i)] + P[i];
    }
    Tensor y = make_unchecked(x.shape(), std::move(out), track(tape, x, table));
    if (y.requires_grad()) {
        Tensor xc = x, pc = table, yc = y;
        tape->record([xc, pc, yc, B, T, D]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.requires_grad() ? xc.grad() : nullptr;
            Real* dP = pc.requires_grad() ? pc.grad() : nullptr;
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * T * D;
                for (std::int64_t i = 0; i < static_cast<std::int64_t>(T) * D; ++i) {
                    const Real d = dY[base + static_cast<std::size_t>(i)];
                    if (dX) dX[base + static_cast<std::size_t>(i)] += d;
                    if (dP) dP[i] += d;
                }
            }
        });
    }
    return y;
}

Tensor select_token(Tape* tape, const Tensor& x, int index) {
    if (x.ndim() != 3) throw DimensionError("select_token: input must be [B,T,D]");
    const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (index < 0 || index >= T) throw ParameterError("select_token: index out of range");
    std::vector<Real> out(static_cast<std::size_t>(B) * D);
    const Real* X = x.data();
    for (int b = 0; b < B; ++b)
        std::copy(&X[(static_cast<std::size_t>(b) * T + index) * D],
                  &X[(static_cast<std::size_t>(b) * T + index) * D] + D,
                  &out[static_cast<std::size_t>(b) * D]);
    Tensor y = make_unchecked({B, D}, std::move(out), track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, B, T, D, index]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < D; ++c)
                    dX[(static_cast<std::size_t>(b) * T + index) * D + c] +=
                        dY[static_cast<std::size_t>(b) * D + c];
        });
    }
    return y;
}

Tensor mean_tokens(Tape* tape, const Tensor& x, int skip_first) {
    if (x.ndim() != 3) throw DimensionError("mean_tokens: input must be [B,T,D]");
    const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
    if (skip_first < 0 || skip_first >= T)
        throw ParameterError("mean_tokens: skip_first out of range");
    const int n = T - skip_first;
    std::vector<Real> out(static_cast<std::size_t>(B) * D, 0.0);
    const Real* X = x.data();
    for (int b = 0; b < B; ++b)
        for (int t = skip_first; t < T; ++t)
            for (int c = 0; c < D; ++c)
                out[static_cast<std::size_t>(b) * D + c] +=
                    X[(static_cast<std::size_t>(b) * T + t) * D + c] / n;
    Tensor y = make_unchecked({B, D}, std::move(out), track(tape, x));
    if (y.requires_grad()) {
        Tensor xc = x, yc = y;
        tape->record([xc, yc, B, T, D, skip_first, n]() mutable {
            if (!yc.has_grad()) return;
            const Real* dY = yc.grad();
            Real* dX = xc.grad();
            for (int b = 0; b < B; ++b)
                for (int t = skip_first; t < T; ++t)
                    for (int c = 0; c < D; ++c)
                        dX[(static_cast<std::size_t>(b) * T + t) * D + c] +=
                            dY[static_cast<std::size_t>(b) * D + c] / n;
        });
    }
    return y;
}

}  // namespace ood
