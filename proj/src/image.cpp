#include "ood/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ood {

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: empty output");
    if (out_h == img.h && out_w == img.w) return img;
    Image out(out_h, out_w);
    const Real sy = static_cast<Real>(img.h) / out_h;
    const Real sx = static_cast<Real>(img.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        Real fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<Real>(img.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.h - 1);
        const Real wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            Real fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<Real>(img.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const Real wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const Real top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const Real bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Image crop(const Image& img, int y0, int x0, int ch, int cw) {
    if (ch < 1 || cw < 1 || y0 < 0 || x0 < 0 || y0 + ch > img.h || x0 + cw > img.w)
        throw DimensionError("crop: rectangle out of bounds");
    Image out(ch, cw);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

Image hflip(const Image& img) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.w - 1 - x, c);
    return out;
}

Image gaussian_blur(const Image& img, Real sigma) {
    if (sigma <= 0) return img;
    const int radius = static_cast<int>(std::ceil(2.0 * sigma));
    std::vector<Real> kernel(static_cast<std::size_t>(2 * radius + 1));
    Real ksum = 0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5 * (static_cast<Real>(i) * i) / (sigma * sigma));
        ksum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (Real& k : kernel) k /= ksum;
    // horizontal then vertical pass, edge-clamped
    Image tmp(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                Real s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = std::clamp(x + i, 0, img.w - 1);
                    s += kernel[static_cast<std::size_t>(i + radius)] * img.at(y, xx, c);
                }
                tmp.at(y, x, c) = s;
            }
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                Real s = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = std::clamp(y + i, 0, img.h - 1);
                    s += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = s;
            }
    return out;
}

Image solarize(const Image& img, Real threshold) {
    Image out = img;
    for (Real& v : out.px)
        if (v > threshold) v = 1.0 - v;
    return out;
}

Image grayscale(const Image& img) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const Real g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                           0.114 * img.at(y, x, 2);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = g;
        }
    return out;
}

Image adjust_brightness(const Image& img, Real factor) {
    Image out = img;
    for (Real& v : out.px) v *= factor;
    return out;
}

Image adjust_contrast(const Image& img, Real factor) {
    Real mean_gray = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            mean_gray += 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                         0.114 * img.at(y, x, 2);
    mean_gray /= static_cast<Real>(img.h) * img.w;
    Image out = img;
    for (Real& v : out.px) v = mean_gray + factor * (v - mean_gray);
    return out;
}

Image adjust_saturation(const Image& img, Real factor) {
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const Real g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                           0.114 * img.at(y, x, 2);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = g + factor * (img.at(y, x, c) - g);
        }
    return out;
}

namespace {

void rgb_to_hsv(Real r, Real g, Real b, Real& h, Real& s, Real& v) {
    const Real mx = std::max({r, g, b});
    const Real mn = std::min({r, g, b});
    v = mx;
    const Real d = mx - mn;
    s = mx > 0 ? d / mx : 0;
    if (d <= 0) {
        h = 0;
        return;
    }
    if (mx == r)
        h = (g - b) / d;
    else if (mx == g)
        h = 2.0 + (b - r) / d;
    else
        h = 4.0 + (r - g) / d;
    h /= 6.0;
    if (h < 0) h += 1.0;
}

void hsv_to_rgb(Real h, Real s, Real v, Real& r, Real& g, Real& b) {
    if (s <= 0) {
        r = g = b = v;
        return;
    }
    h = h - std::floor(h);
    const Real hh = h * 6.0;
    const int i = std::min(5, static_cast<int>(hh));
    const Real f = hh - i;
    const Real p = v * (1 - s);
    const Real q = v * (1 - s * f);
    const Real t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

}  // namespace

Image adjust_hue(const Image& img, Real shift) {
    if (shift == 0) return img;
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            Real h, s, v;
            rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s, v);
            Real r, g, b;
            hsv_to_rgb(h + shift, s, v, r, g, b);
            out.at(y, x, 0) = r;
            out.at(y, x, 1) = g;
            out.at(y, x, 2) = b;
        }
    return out;
}

void clamp01(Image& img) {
    for (Real& v : img.px) v = std::clamp(v, 0.0, 1.0);
}

Image normalize(const Image& img, const std::array<Real, 3>& mean,
                const std::array<Real, 3>& stddev) {
    for (int c = 0; c < 3; ++c)
        if (stddev[static_cast<std::size_t>(c)] <= 0)
            throw ParameterError("normalize: stddev must be positive");
    Image out(img.h, img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = (img.at(y, x, c) - mean[static_cast<std::size_t>(c)]) /
                                  stddev[static_cast<std::size_t>(c)];
    return out;
}

Image mean_pool(const Image& img, int grid) {
    if (grid < 1) throw ParameterError("mean_pool: grid must be positive");
    Image out(grid, grid);
    for (int gy = 0; gy < grid; ++gy) {
        const int y0 = gy * img.h / grid;
        const int y1 = std::max(y0 + 1, (gy + 1) * img.h / grid);
        for (int gx = 0; gx < grid; ++gx) {
            const int x0 = gx * img.w / grid;
            const int x1 = std::max(x0 + 1, (gx + 1) * img.w / grid);
            for (int c = 0; c < 3; ++c) {
                Real s = 0;
                for (int y = y0; y < std::min(y1, img.h); ++y)
                    for (int x = x0; x < std::min(x1, img.w); ++x) s += img.at(y, x, c);
                const int count = (std::min(y1, img.h) - y0) * (std::min(x1, img.w) - x0);
                out.at(gy, gx, c) = s / std::max(1, count);
            }
        }
    }
    return out;
}

}  // namespace ood
