#include "ood/ood_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "ood/augment.hpp"

namespace ood {

namespace {

std::vector<Image> eval_views(const ImageDataset& ds, const EvalViewConfig& view,
                              std::size_t begin, std::size_t end) {
    std::vector<Image> batch;
    batch.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        Image img = resize_bilinear(ds.images[i], view.view_size, view.view_size);
        batch.push_back(normalize(img, view.normalize_mean, view.normalize_std));
    }
    return batch;
}

constexpr std::size_t kEvalBatch = 64;

}  // namespace

FeatureBank extract_features(const Network& net, const ImageDataset& ds,
                             const EvalViewConfig& view) {
    FeatureBank bank;
    bank.labels = ds.labels;
    for (std::size_t begin = 0; begin < ds.size(); begin += kEvalBatch) {
        const std::size_t end = std::min(ds.size(), begin + kEvalBatch);
        ForwardOut out = net.forward(nullptr, eval_views(ds, view, begin, end));
        const int d = out.features.dim(1);
        if (bank.d == 0) bank.d = d;
        const Real* f = out.features.data();
        for (std::size_t i = 0; i < end - begin; ++i) {
            Real sq = 0;
            for (int j = 0; j < d; ++j) sq += f[i * static_cast<std::size_t>(d) + j] *
                                               f[i * static_cast<std::size_t>(d) + j];
            const Real norm = std::sqrt(sq);
            if (norm == 0)
                throw NumericalError("zero-norm feature for sample " +
                                     std::to_string(begin + i));
            bank.norms.push_back(norm);
            bank.feats.insert(bank.feats.end(), &f[i * static_cast<std::size_t>(d)],
                              &f[(i + 1) * static_cast<std::size_t>(d)]);
        }
    }
    return bank;
}

std::vector<Real> extract_logits(const Network& net, const ImageDataset& ds,
                                 const EvalViewConfig& view, int* K_out) {
    std::vector<Real> logits;
    int K = 0;
    for (std::size_t begin = 0; begin < ds.size(); begin += kEvalBatch) {
        const std::size_t end = std::min(ds.size(), begin + kEvalBatch);
        ForwardOut out = net.forward(nullptr, eval_views(ds, view, begin, end));
        K = out.logits.dim(1);
        logits.insert(logits.end(), out.logits.data(), out.logits.data() + out.logits.size());
    }
    if (K_out) *K_out = K;
    return logits;
}

FeatureBank subsample_bank(const FeatureBank& bank, std::size_t m, std::uint64_t seed) {
    if (m == 0 || m >= bank.rows()) return bank;
    std::vector<std::size_t> idx(bank.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    FeatureBank out;
    out.d = bank.d;
    for (std::size_t i : idx) {
        out.feats.insert(out.feats.end(), bank.row(i), bank.row(i) + bank.d);
        out.norms.push_back(bank.norms[i]);
        if (!bank.labels.empty()) out.labels.push_back(bank.labels[i]);
    }
    return out;
}

Real ood_score(const Real* f_test, int d, const FeatureBank& bank, Real tau) {
    if (tau <= 0) throw ParameterError("ood_score: tau must be positive");
    if (bank.rows() == 0) throw UsageError("ood_score: empty feature bank");
    if (d != bank.d) throw DimensionError("ood_score: feature dimension mismatch");
    Real sq = 0;
    for (int j = 0; j < d; ++j) sq += f_test[j] * f_test[j];
    const Real fnorm = std::sqrt(sq);
    if (fnorm == 0) throw NumericalError("ood_score: zero test feature");
    Real acc = 0;
    for (std::size_t m = 0; m < bank.rows(); ++m) {
        const Real* fm = bank.row(m);
        Real dot = 0;
        for (int j = 0; j < d; ++j) dot += f_test[j] * fm[j];
        acc += std::exp(dot / (fnorm * bank.norms[m]) / tau);
    }
    return -acc / static_cast<Real>(bank.rows());
}

std::vector<Real> score_features(const FeatureBank& test, const FeatureBank& bank, Real tau) {
    std::vector<Real> scores;
    scores.reserve(test.rows());
    for (std::size_t i = 0; i < test.rows(); ++i)
        scores.push_back(ood_score(test.row(i), test.d, bank, tau));
    return scores;
}

Real auroc(const std::vector<Real>& scores_out, const std::vector<Real>& scores_in) {
    if (scores_out.empty() || scores_in.empty())
        throw UsageError("auroc: both score sets must be non-empty");
    struct Entry {
        Real score;
        bool is_out;
    };
    std::vector<Entry> all;
    all.reserve(scores_out.size() + scores_in.size());
    for (Real s : scores_out) all.push_back({s, true});
    for (Real s : scores_in) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });
    // midranks over tie groups
    Real rank_sum_out = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const Real midrank = 0.5 * (static_cast<Real>(i + 1) + static_cast<Real>(j));
        for (std::size_t k = i; k < j; ++k)
            if (all[k].is_out) rank_sum_out += midrank;
        i = j;
    }
    const Real n_out = static_cast<Real>(scores_out.size());
    const Real n_in = static_cast<Real>(scores_in.size());
    const Real u = rank_sum_out - n_out * (n_out + 1) / 2.0;
    return u / (n_out * n_in);
}

Real knn_accuracy(const FeatureBank& bank, const FeatureBank& test,
                  const std::vector<int>& test_labels, int k) {
    if (k < 1 || static_cast<std::size_t>(k) > bank.rows())
        throw ParameterError("knn_accuracy: k must lie in [1, bank size]");
    if (bank.labels.empty()) throw UsageError("knn_accuracy: bank has no labels");
    if (test.rows() != test_labels.size())
        throw UsageError("knn_accuracy: label count mismatch");
    if (test.d != bank.d) throw DimensionError("knn_accuracy: feature dimension mismatch");
    std::size_t correct = 0;
    std::vector<std::pair<Real, std::size_t>> sims(bank.rows());
    for (std::size_t t = 0; t < test.rows(); ++t) {
        const Real* ft = test.row(t);
        for (std::size_t m = 0; m < bank.rows(); ++m) {
            const Real* fm = bank.row(m);
            Real dot = 0;
            for (int j = 0; j < bank.d; ++j) dot += ft[j] * fm[j];
            sims[m] = {dot / (test.norms[t] * bank.norms[m]), m};
        }
        std::partial_sort(sims.begin(), sims.begin() + k, sims.end(),
                          [](const auto& a, const auto& b) { return a.first > b.first; });
        // vote, ties broken by summed similarity
        std::vector<std::pair<int, Real>> votes;  // label -> (count stored via duplicates)
        int best_label = -1;
        int best_count = -1;
        Real best_sim = 0;
        std::vector<int> labels_seen;
        for (int a = 0; a < k; ++a) {
            const int lab = bank.labels[sims[static_cast<std::size_t>(a)].second];
            if (std::find(labels_seen.begin(), labels_seen.end(), lab) != labels_seen.end())
                continue;
            labels_seen.push_back(lab);
            int count = 0;
            Real sim = 0;
            for (int b = 0; b < k; ++b)
                if (bank.labels[sims[static_cast<std::size_t>(b)].second] == lab) {
                    ++count;
                    sim += sims[static_cast<std::size_t>(b)].first;
                }
            if (count > best_count || (count == best_count && sim > best_sim)) {
                best_label = lab;
                best_count = count;
                best_sim = sim;
            }
        }
        if (best_label == test_labels[t]) ++correct;
    }
    return static_cast<Real>(correct) / static_cast<Real>(test.rows());
}

OccupiedReport occupied_classes(const std::vector<Real>& test_probs, int K) {
    if (K < 1 || test_probs.empty() || test_probs.size() % static_cast<std::size_t>(K) != 0)
        throw DimensionError("occupied_classes: probs must be n x K");
    const std::size_t n = test_probs.size() / static_cast<std::size_t>(K);
    OccupiedReport rep;
    rep.mean_probs.assign(static_cast<std::size_t>(K), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < K; ++c)
            rep.mean_probs[static_cast<std::size_t>(c)] +=
                test_probs[i * static_cast<std::size_t>(K) + static_cast<std::size_t>(c)];
    for (Real& v : rep.mean_probs) v /= static_cast<Real>(n);
    const Real uniform = 1.0 / static_cast<Real>(K);
    rep.mask.resize(static_cast<std::size_t>(K));
    for (int c = 0; c < K; ++c) {
        rep.mask[static_cast<std::size_t>(c)] = rep.mean_probs[static_cast<std::size_t>(c)] > uniform;
        if (rep.mask[static_cast<std::size_t>(c)]) ++rep.count;
    }
    return rep;
}

}  // namespace ood
