#include "ood/augment.hpp"

#include <cmath>
#include <string>

namespace ood {

namespace {

void check_prob(Real p, const char* name) {
    if (p < 0 || p > 1)
        throw ConfigError(std::string(name) + " must lie in [0,1]");
}

Real uniform(std::mt19937_64& rng, Real lo, Real hi) {
    return std::uniform_real_distribution<Real>(lo, hi)(rng);
}

bool coin(std::mt19937_64& rng, Real p) {
    if (p <= 0) return false;
    if (p >= 1) return true;
    return uniform(rng, 0.0, 1.0) < p;
}

}  // namespace

void ViewFamilyConfig::validate() const {
    if (!(scale_lo >= 0 && scale_lo <= scale_hi && scale_hi <= 1.0))
        throw ConfigError("crop scale range must satisfy 0 <= lo <= hi <= 1");
    if (output_size < 4) throw ConfigError("output_size must be >= 4");
    check_prob(flip_prob, "flip_prob");
    check_prob(jitter_prob, "jitter_prob");
    check_prob(grayscale_prob, "grayscale_prob");
    check_prob(blur_prob, "blur_prob");
    check_prob(solarize_prob, "solarize_prob");
    if (brightness < 0 || contrast < 0 || saturation < 0 || hue < 0)
        throw ConfigError("jitter intensities must be non-negative");
    for (Real s : normalize_std)
        if (s <= 0) throw ConfigError("normalize_std must be positive");
}

AugmentConfig AugmentConfig::desk_defaults() {
    AugmentConfig cfg;
    cfg.local.scale_lo = 0.05;
    cfg.local.scale_hi = 0.4;
    cfg.local.output_size = 16;
    cfg.local.blur_prob = 0.5;
    cfg.local.solarize_prob = 0.0;
    cfg.global1.scale_lo = 0.4;
    cfg.global1.scale_hi = 1.0;
    cfg.global1.output_size = 32;
    cfg.global1.blur_prob = 1.0;
    cfg.global1.solarize_prob = 0.0;
    cfg.global2 = cfg.global1;
    cfg.global2.blur_prob = 0.1;
    cfg.global2.solarize_prob = 0.2;
    cfg.n_local = 8;
    return cfg;
}

void AugmentConfig::validate() const {
    local.validate();
    global1.validate();
    global2.validate();
    if (n_local < 0) throw ConfigError("n_local must be non-negative");
}

Image random_resized_crop(const Image& img, Real scale_lo, Real scale_hi, int out_size,
                          std::mt19937_64& rng, ViewProvenance* prov) {
    if (img.h < 4 || img.w < 4) throw DimensionError("random_resized_crop: image below 4x4");
    const Real area = static_cast<Real>(img.h) * img.w;
    for (int attempt = 0; attempt < 10; ++attempt) {
        const Real frac = uniform(rng, scale_lo, scale_hi);
        const Real aspect = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
        const Real target = frac * area;
        const int cw = static_cast<int>(std::lround(std::sqrt(target * aspect)));
        const int ch = static_cast<int>(std::lround(std::sqrt(target / aspect)));
        if (cw < 1 || ch < 1 || cw > img.w || ch > img.h) continue;
        const int x0 = std::uniform_int_distribution<int>(0, img.w - cw)(rng);
        const int y0 = std::uniform_int_distribution<int>(0, img.h - ch)(rng);
        if (prov) {
            prov->area_frac = frac;
            prov->aspect = aspect;
            prov->crop_y = y0;
            prov->crop_x = x0;
            prov->crop_h = ch;
            prov->crop_w = cw;
            prov->fallback_full = false;
        }
        return resize_bilinear(crop(img, y0, x0, ch, cw), out_size, out_size);
    }
    if (prov) {
        prov->area_frac = 1.0;
        prov->aspect = static_cast<Real>(img.w) / img.h;
        prov->crop_y = 0;
        prov->crop_x = 0;
        prov->crop_h = img.h;
        prov->crop_w = img.w;
        prov->fallback_full = true;
    }
    return resize_bilinear(img, out_size, out_size);
}

Image augment_view(const Image& img, const ViewFamilyConfig& cfg, std::mt19937_64& rng,
                   ViewProvenance* prov) {
    ViewProvenance local_prov;
    ViewProvenance* p = prov ? prov : &local_prov;
    Image view = random_resized_crop(img, cfg.scale_lo, cfg.scale_hi, cfg.output_size, rng, p);
    if (coin(rng, cfg.flip_prob)) {
        view = hflip(view);
        p->flipped = true;
    }
    if (coin(rng, cfg.jitter_prob)) {
        p->jittered = true;
        p->brightness = uniform(rng, 1.0 - cfg.brightness, 1.0 + cfg.brightness);
        p->contrast = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
        p->saturation = uniform(rng, 1.0 - cfg.saturation, 1.0 + cfg.saturation);
        p->hue = uniform(rng, -cfg.hue, cfg.hue);
        view = adjust_brightness(view, p->brightness);
        view = adjust_contrast(view, p->contrast);
        view = adjust_saturation(view, p->saturation);
        view = adjust_hue(view, p->hue);
    }
    if (coin(rng, cfg.grayscale_prob)) {
        view = grayscale(view);
        p->grayscaled = true;
    }
    if (coin(rng, cfg.blur_prob)) {
        p->blurred = true;
        p->blur_sigma = uniform(rng, 0.1, 2.0);
        view = gaussian_blur(view, p->blur_sigma);
    }
    if (coin(rng, cfg.solarize_prob)) {
        view = solarize(view, 0.5);
        p->solarized = true;
    }
    clamp01(view);
    return normalize(view, cfg.normalize_mean, cfg.normalize_std);
}

ViewSet make_views(const Image& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
    ViewSet vs;
    vs.provenance.resize(static_cast<std::size_t>(2 + cfg.n_local));
    vs.globals.push_back(augment_view(img, cfg.global1, rng, &vs.provenance[0]));
    vs.globals.push_back(augment_view(img, cfg.global2, rng, &vs.provenance[1]));
    for (int i = 0; i < cfg.n_local; ++i)
        vs.locals.push_back(
            augment_view(img, cfg.local, rng, &vs.provenance[static_cast<std::size_t>(2 + i)]));
    return vs;
}

}  // namespace ood
