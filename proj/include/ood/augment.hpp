#pragma once

#include <random>
#include <vector>

#include "ood/image.hpp"

namespace ood {

// Sampling parameters for one view family (local / global-1 / global-2).
struct ViewFamilyConfig {
    Real scale_lo = 0.4;
    Real scale_hi = 1.0;
    int output_size = 32;
    Real flip_prob = 0.5;
    Real jitter_prob = 0.8;
    Real brightness = 0.4;
    Real contrast = 0.4;
    Real saturation = 0.2;
    Real hue = 0.1;
    Real grayscale_prob = 0.2;
    Real blur_prob = 1.0;
    Real solarize_prob = 0.0;
    std::array<Real, 3> normalize_mean = {0.485, 0.456, 0.406};
    std::array<Real, 3> normalize_std = {0.229, 0.224, 0.225};

    void validate() const;
};

struct AugmentConfig {
    ViewFamilyConfig local;
    ViewFamilyConfig global1;
    ViewFamilyConfig global2;
    int n_local = 8;

    static AugmentConfig desk_defaults();
    void validate() const;
};

// Sampled transform parameters of one emitted view, kept for reproducibility.
struct ViewProvenance {
    Real area_frac = 1.0;
    Real aspect = 1.0;
    int crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
    bool fallback_full = false;
    bool flipped = false;
    bool jittered = false;
    Real brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
    bool grayscaled = false;
    bool blurred = false;
    Real blur_sigma = 0.0;
    bool solarized = false;
};

struct ViewSet {
    std::vector<Image> globals;  // global1 / global2 alternating
    std::vector<Image> locals;
    std::vector<ViewProvenance> provenance;  // globals first, then locals
};

// Crop with area fraction in [lo,hi] and aspect in [3/4,4/3], resized to
// out x out. Degenerate draws are retried up to 10 times, then the whole
// image is used.
Image random_resized_crop(const Image& img, Real scale_lo, Real scale_hi, int out_size,
                          std::mt19937_64& rng, ViewProvenance* prov = nullptr);

// One fully augmented, normalized view.
Image augment_view(const Image& img, const ViewFamilyConfig& cfg, std::mt19937_64& rng,
                   ViewProvenance* prov = nullptr);

// 2 global + n_local local views of one sample.
ViewSet make_views(const Image& img, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace ood
