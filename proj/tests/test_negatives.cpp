#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "ood/negatives.hpp"

using namespace ood;
using testutil::max_abs_diff;
using testutil::pixel_histogram;
using testutil::random_image;

namespace {

// 2x2 image with distinct scalar tile labels in all channels.
Image labeled2x2(Real a, Real b, Real c, Real d) {
    Image img(2, 2);
    for (int ch = 0; ch < 3; ++ch) {
        img.at(0, 0, ch) = a;
        img.at(0, 1, ch) = b;
        img.at(1, 0, ch) = c;
        img.at(1, 1, ch) = d;
    }
    return img;
}

}  // namespace

TEST_CASE("rotate90 index permutation") {
    Image img = labeled2x2(0.1, 0.2, 0.3, 0.4);  // [[a,b],[c,d]]
    Image r = rotate90(img, 1);                  // 90 degrees clockwise -> [[c,a],[d,b]]
    CHECK(r.at(0, 0, 0) == 0.3);
    CHECK(r.at(0, 1, 0) == 0.1);
    CHECK(r.at(1, 0, 0) == 0.4);
    CHECK(r.at(1, 1, 0) == 0.2);
}

TEST_CASE("rotate90 cycle structure") {
    std::mt19937_64 rng(3);
    Image img = random_image(15, rng);
    CHECK(max_abs_diff(img, rotate90(rotate90(img, 2), 2)) == 0.0);  // 180 twice
    Image four = rotate90(rotate90(rotate90(rotate90(img, 1), 1), 1), 1);
    CHECK(max_abs_diff(img, four) == 0.0);
    CHECK(testutil::sorted_copy(rotate90(img, 1).px) == testutil::sorted_copy(img.px));

    Image rect(4, 6);
    CHECK_THROWS_AS(rotate90(rect, 1), DimensionError);
}

TEST_CASE("perm_patches permutes tiles and preserves histograms") {
    std::mt19937_64 rng(7);
    Image img = labeled2x2(0.1, 0.2, 0.3, 0.4);
    Image out = perm_patches(img, 2, rng);
    CHECK(testutil::sorted_copy(out.px) == testutil::sorted_copy(img.px));

    Image big = random_image(16, rng);
    CHECK(max_abs_diff(big, perm_patches(big, 1, rng)) == 0.0);  // grid 1 is identity
    for (int grid : {2, 4}) {
        Image p = perm_patches(big, grid, rng);
        CHECK(pixel_histogram(p) == pixel_histogram(big));
    }
}

TEST_CASE("pix_perm preserves histograms and leaves constants unchanged") {
    std::mt19937_64 rng(11);
    Image c(8, 8);
    for (Real& v : c.px) v = 0.5;
    CHECK(max_abs_diff(c, pix_perm(c, rng)) == 0.0);

    Image img = random_image(16, rng);
    Image p = pix_perm(img, rng);
    CHECK(pixel_histogram(p) == pixel_histogram(img));
    // channels move together: per-pixel RGB triples form the same multiset
    auto triples = [](const Image& im) {
        std::vector<std::array<Real, 3>> t;
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x)
                t.push_back({im.at(y, x, 0), im.at(y, x, 1), im.at(y, x, 2)});
        std::sort(t.begin(), t.end());
        return t;
    };
    CHECK(triples(p) == triples(img));
}

TEST_CASE("pix_perm destroys spatial structure") {
    // smooth horizontal ramp has lag-1 autocorrelation near 1; the shuffled
    // image should drop below 0.1
    Image img(24, 24);
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = x / 23.0;
    auto lag1 = [](const Image& im) {
        Real mean = 0;
        for (Real v : im.px) mean += v;
        mean /= static_cast<Real>(im.px.size());
        Real num = 0, den = 0;
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) {
                const Real a = im.at(y, x, 0) - mean;
                den += a * a;
                if (x + 1 < im.w) num += a * (im.at(y, x + 1, 0) - mean);
            }
        return num / den;
    };
    CHECK(lag1(img) > 0.8);
    std::mt19937_64 rng(13);
    CHECK(lag1(pix_perm(img, rng)) < 0.1);
}

TEST_CASE("sharpen fixes constants") {
    Image img(9, 9);
    for (Real& v : img.px) v = 0.42;
    CHECK(max_abs_diff(img, sharpen(img)) < 1e-9);
}

TEST_CASE("translate") {
    std::mt19937_64 rng(17);
    Image img = random_image(12, rng);
    CHECK(max_abs_diff(img, translate(img, 0.0, rng)) == 0.0);

    // the sampled integer offsets move content exactly, zero-filling the rest
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 r1(100 + static_cast<std::uint64_t>(trial));
        Image out = translate(img, 0.25, r1);
        bool matched = false;
        for (int dy = -3; dy <= 3 && !matched; ++dy)
            for (int dx = -3; dx <= 3 && !matched; ++dx) {
                Image oracle(12, 12);
                for (int y = 0; y < 12; ++y)
                    for (int x = 0; x < 12; ++x) {
                        const int sy = y - dy, sx = x - dx;
                        if (sy >= 0 && sy < 12 && sx >= 0 && sx < 12)
                            for (int ch = 0; ch < 3; ++ch)
                                oracle.at(y, x, ch) = img.at(sy, sx, ch);
                    }
                if (max_abs_diff(out, oracle) == 0.0) matched = true;
            }
        CHECK(matched);
    }
}

TEST_CASE("shift kinds draw from the right rotation sets") {
    std::mt19937_64 rng(19);
    Image img = random_image(8, rng);
    Image rots[4] = {img, rotate90(img, 1), rotate90(img, 2), rotate90(img, 3)};

    bool saw_identity_rot90 = false;
    ShiftTransform rot{ShiftKind::Rot90Set, 2, 0.25};
    for (int t = 0; t < 200; ++t) {
        Image out = rot.apply(img, rng);
        int which = -1;
        for (int k = 0; k < 4; ++k)
            if (max_abs_diff(out, rots[k]) == 0.0) which = k;
        CHECK(which >= 1);  // never the identity
        if (which == 0) saw_identity_rot90 = true;
    }
    CHECK_FALSE(saw_identity_rot90);

    bool saw_identity_rot360 = false;
    ShiftTransform rot360{ShiftKind::Rot360, 2, 0.25};
    for (int t = 0; t < 200; ++t)
        if (max_abs_diff(rot360.apply(img, rng), img) == 0.0) saw_identity_rot360 = true;
    CHECK(saw_identity_rot360);

    ShiftTransform ident{ShiftKind::Identity, 2, 0.25};
    CHECK(max_abs_diff(ident.apply(img, rng), img) == 0.0);
}

TEST_CASE("shift transform validation") {
    ShiftTransform bad{ShiftKind::PermPatch, 3, 0.25};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    ShiftTransform bad2{ShiftKind::Translate, 2, 1.5};
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    CHECK_NOTHROW(ShiftTransform{ShiftKind::PermPatch, 4, 0.25}.validate());
}

TEST_CASE("sample_negative_views emits 1 global and n_local locals per sample") {
    AugmentConfig cfg = AugmentConfig::desk_defaults();
    std::mt19937_64 rng(23);
    Image img = random_image(32, rng);
    std::vector<Image> aux = {random_image(32, rng), random_image(32, rng)};
    ShiftTransform shift{ShiftKind::Rot90Set, 2, 0.25};

    NegativeSource src_aux{NegativeSourceKind::Auxiliary, 0.5, 0.5};
    auto negs = sample_negative_views(img, aux, src_aux, shift, cfg, rng);
    REQUIRE(negs.size() == 1);
    CHECK(negs[0].from_auxiliary);
    CHECK(negs[0].globals.size() == 1);
    CHECK(negs[0].locals.size() == 8);
    CHECK(negs[0].globals[0].h == 32);
    CHECK(negs[0].locals[0].h == 16);

    NegativeSource src_in{NegativeSourceKind::InDist, 0.5, 0.5};
    auto negs_in = sample_negative_views(img, {}, src_in, shift, cfg, rng);
    REQUIRE(negs_in.size() == 1);
    CHECK_FALSE(negs_in[0].from_auxiliary);

    NegativeSource src_comb{NegativeSourceKind::Combined, 0.5, 0.5};
    auto negs_comb = sample_negative_views(img, aux, src_comb, shift, cfg, rng);
    REQUIRE(negs_comb.size() == 2);
    CHECK_FALSE(negs_comb[0].from_auxiliary);
    CHECK(negs_comb[1].from_auxiliary);

    CHECK_THROWS_AS(sample_negative_views(img, {}, src_aux, shift, cfg, rng), ConfigError);
    CHECK_THROWS_AS(sample_negative_views(img, {}, src_comb, shift, cfg, rng), ConfigError);
}

TEST_CASE("negative sampling is deterministic under the seed") {
    AugmentConfig cfg = AugmentConfig::desk_defaults();
    std::mt19937_64 rng_img(29);
    Image img = random_image(32, rng_img);
    std::vector<Image> aux = {random_image(32, rng_img)};
    ShiftTransform shift{ShiftKind::PermPatch, 2, 0.25};
    NegativeSource src{NegativeSourceKind::Auxiliary, 0.5, 0.5};

    std::mt19937_64 r1(777), r2(777);
    auto a = sample_negative_views(img, aux, src, shift, cfg, r1);
    auto b = sample_negative_views(img, aux, src, shift, cfg, r2);
    CHECK(a[0].globals[0].px == b[0].globals[0].px);
    for (std::size_t i = 0; i < a[0].locals.size(); ++i)
        CHECK(a[0].locals[i].px == b[0].locals[i].px);
}
