#pragma once

#include <array>
#include <vector>

#include "ood/common.hpp"

namespace ood {

// H x W x 3 image, row-major HWC. Pixel values live in [0,1] until
// normalization; normalized views may hold arbitrary reals.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<Real> px;  // h * w * 3

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_ * 3, 0.0) {}

    Real& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
    Real at(int y, int x, int c) const {
        return px[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(px.size()); }
};

// Bilinear resize with half-pixel center mapping; identity when sizes match.
Image resize_bilinear(const Image& img, int out_h, int out_w);
Image crop(const Image& img, int y0, int x0, int ch, int cw);
Image hflip(const Image& img);
Image gaussian_blur(const Image& img, Real sigma);  // separable, radius ceil(2*sigma)
Image solarize(const Image& img, Real threshold);
Image grayscale(const Image& img);
Image adjust_brightness(const Image& img, Real factor);
Image adjust_contrast(const Image& img, Real factor);
Image adjust_saturation(const Image& img, Real factor);
Image adjust_hue(const Image& img, Real shift);  // shift in [-0.5, 0.5] turns
void clamp01(Image& img);
Image normalize(const Image& img, const std::array<Real, 3>& mean,
                const std::array<Real, 3>& stddev);
// Average-pool onto a grid x grid output (used by the MLP encoder front end).
Image mean_pool(const Image& img, int grid);

}  // namespace ood
