#include "ood/negatives.hpp"

#include <algorithm>
#include <numeric>

namespace ood {

void ShiftTransform::validate() const {
    if (kind == ShiftKind::PermPatch && grid_n != 2 && grid_n != 4)
        throw ConfigError("perm_patches grid_n must be 2 or 4");
    if (kind == ShiftKind::Translate && (max_frac < 0 || max_frac > 1))
        throw ConfigError("translate max_frac must lie in [0,1]");
}

Image rotate90(const Image& img, int k) {
    if (img.h != img.w) throw DimensionError("rotate90: image must be square");
    k = ((k % 4) + 4) % 4;
    if (k == 0) return img;
    const int n = img.h;
    Image out(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int c = 0; c < 3; ++c) {
                // one clockwise quarter turn: dst(y,x) = src(n-1-x, y)
                Real v;
                switch (k) {
                    case 1: v = img.at(n - 1 - x, y, c); break;
                    case 2: v = img.at(n - 1 - y, n - 1 - x, c); break;
                    default: v = img.at(x, n - 1 - y, c); break;
                }
                out.at(y, x, c) = v;
            }
    return out;
}

Image perm_patches(const Image& img, int grid_n, std::mt19937_64& rng) {
    if (grid_n < 1) throw ParameterError("perm_patches: grid_n must be positive");
    if (grid_n == 1) return img;
    // pad to a divisible side with edge replication, crop back afterwards
    const int side_h = (img.h + grid_n - 1) / grid_n * grid_n;
    const int side_w = (img.w + grid_n - 1) / grid_n * grid_n;
    Image padded(side_h, side_w);
    for (int y = 0; y < side_h; ++y)
        for (int x = 0; x < side_w; ++x)
            for (int c = 0; c < 3; ++c)
                padded.at(y, x, c) =
                    img.at(std::min(y, img.h - 1), std::min(x, img.w - 1), c);
    const int th = side_h / grid_n, tw = side_w / grid_n;
    const int n_tiles = grid_n * grid_n;
    std::vector<int> perm(static_cast<std::size_t>(n_tiles));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    if (std::is_sorted(perm.begin(), perm.end()))
        std::shuffle(perm.begin(), perm.end(), rng);
    Image out(side_h, side_w);
    for (int t = 0; t < n_tiles; ++t) {
        const int src = perm[static_cast<std::size_t>(t)];
        const int dy = t / grid_n * th, dx = t % grid_n * tw;
        const int sy = src / grid_n * th, sx = src % grid_n * tw;
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(dy + y, dx + x, c) = padded.at(sy + y, sx + x, c);
    }
    if (side_h == img.h && side_w == img.w) return out;
    return crop(out, 0, 0, img.h, img.w);
}

Image pix_perm(const Image& img, std::mt19937_64& rng) {
    const int n = img.h * img.w;
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Image out(img.h, img.w);
    for (int i = 0; i < n; ++i) {
        const int src = perm[static_cast<std::size_t>(i)];
        for (int c = 0; c < 3; ++c)
            out.px[static_cast<std::size_t>(i) * 3 + c] =
                img.px[static_cast<std::size_t>(src) * 3 + c];
    }
    return out;
}

Image sharpen(const Image& img) {
    const Image blurred = gaussian_blur(img, 1.0);
    Image out(img.h, img.w);
    for (std::size_t i = 0; i < img.px.size(); ++i)
        out.px[i] = img.px[i] + (img.px[i] - blurred.px[i]);
    clamp01(out);
    return out;
}

Image translate(const Image& img, Real max_frac, std::mt19937_64& rng) {
    if (max_frac < 0) throw ParameterError("translate: max_frac must be non-negative");
    const int max_dy = static_cast<int>(max_frac * img.h);
    const int max_dx = static_cast<int>(max_frac * img.w);
    const int dy = std::uniform_int_distribution<int>(-max_dy, max_dy)(rng);
    const int dx = std::uniform_int_distribution<int>(-max_dx, max_dx)(rng);
    Image out(img.h, img.w);  // zero fill
    for (int y = 0; y < img.h; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= img.h) continue;
        for (int x = 0; x < img.w; ++x) {
            const int sx = x - dx;
            if (sx < 0 || sx >= img.w) continue;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image ShiftTransform::apply(const Image& img, std::mt19937_64& rng) const {
    switch (kind) {
        case ShiftKind::Identity:
            return img;
        case ShiftKind::Rot90Set:
            return rotate90(img, std::uniform_int_distribution<int>(1, 3)(rng));
        case ShiftKind::Rot360:
            return rotate90(img, std::uniform_int_distribution<int>(0, 3)(rng));
        case ShiftKind::PermPatch:
            return perm_patches(img, grid_n, rng);
        case ShiftKind::PixPerm:
            return pix_perm(img, rng);
        case ShiftKind::Sharpen:
            return sharpen(img);
        case ShiftKind::Translate:
            return translate(img, max_frac, rng);
        case ShiftKind::GaussBlurShift: {
            Image out = gaussian_blur(
                img, std::uniform_real_distribution<Real>(0.1, 2.0)(rng));
            return out;
        }
    }
    throw ParameterError("unknown shift transform");
}

namespace {

NegativeViews make_negative(const Image& src, bool from_aux, const ShiftTransform& shift,
                            const AugmentConfig& cfg, std::mt19937_64& rng) {
    const Image shifted = shift.apply(src, rng);
    NegativeViews nv;
    nv.from_auxiliary = from_aux;
    nv.globals.push_back(augment_view(shifted, cfg.global1, rng));
    for (int i = 0; i < cfg.n_local; ++i)
        nv.locals.push_back(augment_view(shifted, cfg.local, rng));
    return nv;
}

const Image& draw_aux(const std::vector<Image>& auxiliary, std::mt19937_64& rng) {
    if (auxiliary.empty())
        throw ConfigError("negative sampling requires a non-empty auxiliary dataset");
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(
        0, auxiliary.size() - 1)(rng);
    return auxiliary[idx];
}

}  // namespace

std::vector<NegativeViews> sample_negative_views(const Image& source_img,
                                                 const std::vector<Image>& auxiliary,
                                                 const NegativeSource& source,
                                                 const ShiftTransform& shift,
                                                 const AugmentConfig& cfg,
                                                 std::mt19937_64& rng) {
    std::vector<NegativeViews> out;
    switch (source.kind) {
        case NegativeSourceKind::InDist:
            out.push_back(make_negative(source_img, false, shift, cfg, rng));
            break;
        case NegativeSourceKind::Auxiliary:
            out.push_back(make_negative(draw_aux(auxiliary, rng), true, shift, cfg, rng));
            break;
        case NegativeSourceKind::Combined:
            out.push_back(make_negative(source_img, false, shift, cfg, rng));
            out.push_back(make_negative(draw_aux(auxiliary, rng), true, shift, cfg, rng));
            break;
    }
    return out;
}

}  // namespace ood
