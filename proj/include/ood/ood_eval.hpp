#pragma once

#include <vector>

#include "ood/data.hpp"
#include "ood/model.hpp"

namespace ood {

// Row matrix of backbone features with precomputed L2 norms. Zero-norm rows
// are rejected at build time.
struct FeatureBank {
    int d = 0;
    std::vector<Real> feats;   // rows x d
    std::vector<Real> norms;   // rows
    std::vector<int> labels;   // empty when unlabeled

    std::size_t rows() const { return d > 0 ? feats.size() / static_cast<std::size_t>(d) : 0; }
    const Real* row(std::size_t i) const { return &feats[i * static_cast<std::size_t>(d)]; }
};

// Deterministic single-view evaluation: resize to `view_size`, normalize,
// no stochastic augmentation.
struct EvalViewConfig {
    int view_size = 32;
    std::array<Real, 3> normalize_mean = {0.485, 0.456, 0.406};
    std::array<Real, 3> normalize_std = {0.229, 0.224, 0.225};
};

FeatureBank extract_features(const Network& net, const ImageDataset& ds,
                             const EvalViewConfig& view);

// Teacher logits (not probabilities) for the same deterministic view.
std::vector<Real> extract_logits(const Network& net, const ImageDataset& ds,
                                 const EvalViewConfig& view, int* K_out = nullptr);

FeatureBank subsample_bank(const FeatureBank& bank, std::size_t m, std::uint64_t seed);

// S = -(1/M) sum_m exp(cos(f, f_m) / tau); higher means more anomalous.
Real ood_score(const Real* f_test, int d, const FeatureBank& bank, Real tau = 0.04);
std::vector<Real> score_features(const FeatureBank& test, const FeatureBank& bank,
                                 Real tau = 0.04);

// Probability that a random out-score exceeds a random in-score; ties count
// one half (Mann-Whitney, midranks, O(n log n)).
Real auroc(const std::vector<Real>& scores_out, const std::vector<Real>& scores_in);

// Majority vote among the k cosine-nearest bank rows; vote ties broken by
// summed similarity.
Real knn_accuracy(const FeatureBank& bank, const FeatureBank& test,
                  const std::vector<int>& test_labels, int k = 10);

struct OccupiedReport {
    int count = 0;
    std::vector<bool> mask;       // per soft-class
    std::vector<Real> mean_probs;
};

// A soft-class is occupied iff its mean probability over the test set is
// strictly above the uniform level 1/K.
OccupiedReport occupied_classes(const std::vector<Real>& test_probs, int K);

}  // namespace ood
