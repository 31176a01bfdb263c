#pragma once

#include <random>
#include <vector>

#include "ood/augment.hpp"
#include "ood/image.hpp"

namespace ood {

enum class ShiftKind {
    Identity,
    Rot90Set,   // r ~ U({90, 180, 270})
    Rot360,     // r ~ U({0, 90, 180, 270})
    PermPatch,  // grid_n x grid_n tile permutation
    PixPerm,
    Sharpen,
    Translate,
    GaussBlurShift,
};

struct ShiftTransform {
    ShiftKind kind = ShiftKind::Rot90Set;
    int grid_n = 2;        // PermPatch: 2 -> Perm-4, 4 -> Perm-16
    Real max_frac = 0.25;  // Translate

    void validate() const;
    Image apply(const Image& img, std::mt19937_64& rng) const;
};

enum class NegativeSourceKind { InDist, Auxiliary, Combined };

struct NegativeSource {
    NegativeSourceKind kind = NegativeSourceKind::Auxiliary;
    Real lambda_in = 0.5;   // Combined mode weights
    Real lambda_aux = 0.5;
};

// Exact lossless k*90-degree clockwise rotation of a square image.
Image rotate90(const Image& img, int k);
// Evenly partitioned tiles rearranged by a uniform permutation; an identity
// draw is redrawn once, then accepted. Non-divisible sides are padded with
// edge replication and cropped back.
Image perm_patches(const Image& img, int grid_n, std::mt19937_64& rng);
// Uniform random permutation of pixel positions, channels move together.
Image pix_perm(const Image& img, std::mt19937_64& rng);
// img + (img - blur(img)), clamped to [0,1].
Image sharpen(const Image& img);
// Integer shift up to max_frac * side in each axis, zero fill.
Image translate(const Image& img, Real max_frac, std::mt19937_64& rng);

// The negative views of one training sample: shift applied to the source
// image, then the standard view pipeline with 1 global + n_local local views.
struct NegativeViews {
    bool from_auxiliary = false;
    std::vector<Image> globals;  // size 1
    std::vector<Image> locals;
};

// `source_img` is the in-distribution image paired with this sample;
// `auxiliary` is the auxiliary pool (may be empty unless required by the
// source kind). Combined draws one negative from each source.
std::vector<NegativeViews> sample_negative_views(const Image& source_img,
                                                 const std::vector<Image>& auxiliary,
                                                 const NegativeSource& source,
                                                 const ShiftTransform& shift,
                                                 const AugmentConfig& cfg,
                                                 std::mt19937_64& rng);

}  // namespace ood
