#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ood/image.hpp"
#include "ood/tensor.hpp"

namespace testutil {

using ood::Real;
using ood::Tape;
using ood::Tensor;

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, Real lo = -2.0,
                            Real hi = 2.0, bool requires_grad = true) {
    std::uniform_real_distribution<Real> dist(lo, hi);
    std::vector<Real> data(static_cast<std::size_t>(ood::shape_numel(shape)));
    for (Real& v : data) v = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Central-difference check of d(loss)/d(x) against the tape gradient, where
// `build` maps (tape, x) to a scalar loss and must be pure in x's values.
inline Real grad_check(const std::function<Tensor(Tape*, Tensor&)>& build, Tensor& x,
                       Real h = 1e-4) {
    Tape tape;
    Tensor loss = build(&tape, x);
    tape.backward(loss);
    std::vector<Real> analytic = x.grad_vec();

    Real worst = 0.0;
    Real scale = 1.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        scale = std::max(scale, std::abs(analytic[i]));
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const Real orig = x.data()[i];
        x.data()[i] = orig + h;
        const Real up = build(nullptr, x).item();
        x.data()[i] = orig - h;
        const Real down = build(nullptr, x).item();
        x.data()[i] = orig;
        const Real fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(analytic[static_cast<std::size_t>(i)] - fd));
        scale = std::max(scale, std::abs(fd));
    }
    return worst / scale;  // relative max-norm error
}

inline ood::Image random_image(int size, std::mt19937_64& rng) {
    ood::Image img(size, size);
    std::uniform_real_distribution<Real> dist(0.0, 1.0);
    for (Real& v : img.px) v = dist(rng);
    return img;
}

inline Real max_abs_diff(const ood::Image& a, const ood::Image& b) {
    Real worst = a.px.size() == b.px.size() ? 0.0 : 1e300;
    for (std::size_t i = 0; i < a.px.size() && i < b.px.size(); ++i)
        worst = std::max(worst, std::abs(a.px[i] - b.px[i]));
    return worst;
}

// Per-channel value histogram with fixed [0,1] bins; exact equality of these
// certifies a pixel permutation.
inline std::vector<std::vector<int>> pixel_histogram(const ood::Image& img, int bins = 64) {
    std::vector<std::vector<int>> h(3, std::vector<int>(static_cast<std::size_t>(bins), 0));
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        int b = static_cast<int>(img.px[i] * bins);
        if (b >= bins) b = bins - 1;
        if (b < 0) b = 0;
        h[i % 3][static_cast<std::size_t>(b)]++;
    }
    return h;
}

inline std::vector<Real> sorted_copy(std::vector<Real> v) {
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace testutil
