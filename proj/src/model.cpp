#include "ood/model.hpp"

#include <algorithm>
#include <cmath>

namespace ood {

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (head_hidden < 1) throw ConfigError("head_hidden must be positive");
    if (tau_s <= 0 || tau_t <= 0) throw ConfigError("temperatures must be positive");
    if (tau_t >= tau_s) throw ConfigError("tau_t must be strictly below tau_s");
    if (teacher_momentum < 0 || teacher_momentum > 1)
        throw ConfigError("teacher_momentum must lie in [0,1]");
    if (center_momentum < 0 || center_momentum > 1)
        throw ConfigError("center_momentum must lie in [0,1]");
    if (view_sizes.empty()) throw ConfigError("view_sizes must be non-empty");
    if (encoder == EncoderKind::TinyViT) {
        if (dim < 1 || depth < 1 || heads < 1 || patch < 1)
            throw ConfigError("TinyViT dimensions must be positive");
        if (dim % heads != 0) throw ConfigError("heads must divide dim");
        if (feature_dim != dim) throw ConfigError("feature_dim must equal dim for TinyViT");
        for (int s : view_sizes)
            if (s % patch != 0) throw ConfigError("view sizes must be divisible by patch size");
    } else {
        if (mlp_pool_grid < 1) throw ConfigError("mlp_pool_grid must be positive");
        for (int h : mlp_hidden)
            if (h < 1) throw ConfigError("mlp hidden sizes must be positive");
    }
}

namespace {

Real trunc_normal(std::mt19937_64& rng, Real stddev) {
    std::normal_distribution<Real> n(0.0, stddev);
    Real v;
    do {
        v = n(rng);
    } while (std::abs(v) > 2 * stddev);
    return v;
}

}  // namespace

Tensor Network::add_param(const std::string& name, std::vector<int> shape, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    params_.emplace_back(name, t);
    return t;
}

Network::Network(const ModelConfig& cfg, std::uint64_t init_seed, bool requires_grad)
    : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(init_seed);
    auto weight = [&](const std::string& name, std::vector<int> shape) {
        Tensor t = add_param(name, std::move(shape), requires_grad);
        for (std::int64_t i = 0; i < t.size(); ++i) t.data()[i] = trunc_normal(rng, 0.02);
        return t;
    };
    auto zeros_p = [&](const std::string& name, std::vector<int> shape) {
        return add_param(name, std::move(shape), requires_grad);
    };
    auto ones_p = [&](const std::string& name, std::vector<int> shape) {
        Tensor t = add_param(name, std::move(shape), requires_grad);
        std::fill(t.vec().begin(), t.vec().end(), 1.0);
        return t;
    };

    if (cfg_.encoder == EncoderKind::TinyViT) {
        const int D = cfg_.dim;
        weight("patch_embed.w", {cfg_.patch * cfg_.patch * 3, D});
        zeros_p("patch_embed.b", {D});
        weight("cls", {D});
        for (int s : cfg_.view_sizes) {
            const int tokens = (s / cfg_.patch) * (s / cfg_.patch) + 1;
            weight("pos_" + std::to_string(s), {tokens, D});
        }
        for (int l = 0; l < cfg_.depth; ++l) {
            const std::string p = "block" + std::to_string(l) + ".";
            ones_p(p + "ln1.g", {D});
            zeros_p(p + "ln1.b", {D});
            weight(p + "wq", {D, D});
            zeros_p(p + "bq", {D});
            weight(p + "wk", {D, D});
            zeros_p(p + "bk", {D});
            weight(p + "wv", {D, D});
            zeros_p(p + "bv", {D});
            weight(p + "proj.w", {D, D});
            zeros_p(p + "proj.b", {D});
            ones_p(p + "ln2.g", {D});
            zeros_p(p + "ln2.b", {D});
            weight(p + "mlp.w1", {D, 4 * D});
            zeros_p(p + "mlp.b1", {4 * D});
            weight(p + "mlp.w2", {4 * D, D});
            zeros_p(p + "mlp.b2", {D});
        }
        ones_p("ln_f.g", {D});
        zeros_p("ln_f.b", {D});
    } else {
        int in_dim = cfg_.mlp_pool_grid * cfg_.mlp_pool_grid * 3;
        int idx = 0;
        for (int h : cfg_.mlp_hidden) {
            const std::string p = "mlp" + std::to_string(idx++) + ".";
            weight(p + "w", {in_dim, h});
            zeros_p(p + "b", {h});
            in_dim = h;
        }
        weight("mlp_out.w", {in_dim, cfg_.feature_dim});
        zeros_p("mlp_out.b", {cfg_.feature_dim});
    }
    weight("head.w1", {cfg_.feature_dim, cfg_.head_hidden});
    zeros_p("head.b1", {cfg_.head_hidden});
    weight("head.w2", {cfg_.head_hidden, cfg_.num_classes});
    zeros_p("head.b2", {cfg_.num_classes});
}

Tensor Network::param(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw UsageError("unknown parameter " + name);
}

void Network::copy_from(const Network& other) {
    if (params_.size() != other.params_.size())
        throw UsageError("copy_from: parameter structure mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].first != other.params_[i].first ||
            params_[i].second.shape() != other.params_[i].second.shape())
            throw UsageError("copy_from: parameter structure mismatch at " + params_[i].first);
        params_[i].second.vec() = other.params_[i].second.vec();
    }
}

void Network::zero_grads() {
    for (auto& [n, t] : params_) t.zero_grad();
}

namespace {

// [B*T, in] x [in, out] + bias, keeping the [B,T,out] view.
Tensor linear_3d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    const int B = x.dim(0), T = x.dim(1), in = x.dim(2);
    Tensor flat = reshape(tape, x, {B * T, in});
    Tensor y = add_bias(tape, matmul(tape, flat, w), b);
    return reshape(tape, y, {B, T, w.dim(1)});
}

Tensor layer_norm_3d(Tape* tape, const Tensor& x, const Tensor& g, const Tensor& b) {
    const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
    Tensor flat = reshape(tape, x, {B * T, D});
    return reshape(tape, layer_norm(tape, flat, g, b), {B, T, D});
}

}  // namespace

ForwardOut Network::forward_vit(Tape* tape, const std::vector<Image>& batch) const {
    const int B = static_cast<int>(batch.size());
    const int s = batch[0].h;
    const int P = cfg_.patch;
    if (s % P != 0) throw DimensionError("view size not divisible by patch size");
    const int grid = s / P;
    const int T = grid * grid;
    const int pd = P * P * 3;
    // patches as constants: no gradient flows into the input images
    std::vector<Real> flat(static_cast<std::size_t>(B) * T * pd);
    for (int b = 0; b < B; ++b) {
        const Image& img = batch[b];
        if (img.h != s || img.w != s)
            throw DimensionError("forward: mixed view sizes in one batch");
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                Real* dst = &flat[((static_cast<std::size_t>(b) * T) +
                                   static_cast<std::size_t>(gy) * grid + gx) *
                                  pd];
                int o = 0;
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        for (int c = 0; c < 3; ++c)
                            dst[o++] = img.at(gy * P + py, gx * P + px, c);
            }
    }
    Tensor x = Tensor::from_data({B * T, pd}, std::move(flat));
    Tensor tok = add_bias(tape, matmul(tape, x, param("patch_embed.w")), param("patch_embed.b"));
    tok = reshape(tape, tok, {B, T, cfg_.dim});
    tok = prepend_token(tape, tok, param("cls"));
    tok = add_token_table(tape, tok, param("pos_" + std::to_string(s)));
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string p = "block" + std::to_string(l) + ".";
        Tensor h = layer_norm_3d(tape, tok, param(p + "ln1.g"), param(p + "ln1.b"));
        Tensor q = linear_3d(tape, h, param(p + "wq"), param(p + "bq"));
        Tensor k = linear_3d(tape, h, param(p + "wk"), param(p + "bk"));
        Tensor v = linear_3d(tape, h, param(p + "wv"), param(p + "bv"));
        Tensor a = attention(tape, q, k, v, cfg_.heads);
        a = linear_3d(tape, a, param(p + "proj.w"), param(p + "proj.b"));
        tok = add(tape, tok, a);
        Tensor m = layer_norm_3d(tape, tok, param(p + "ln2.g"), param(p + "ln2.b"));
        m = linear_3d(tape, m, param(p + "mlp.w1"), param(p + "mlp.b1"));
        m = gelu(tape, m);
        m = linear_3d(tape, m, param(p + "mlp.w2"), param(p + "mlp.b2"));
        tok = add(tape, tok, m);
    }
    tok = layer_norm_3d(tape, tok, param("ln_f.g"), param("ln_f.b"));
    ForwardOut out;
    out.features = cfg_.mean_pool_feature ? mean_tokens(tape, tok, 1)
                                          : select_token(tape, tok, 0);
    out.logits = head(tape, out.features);
    return out;
}

ForwardOut Network::forward_mlp(Tape* tape, const std::vector<Image>& batch) const {
    const int B = static_cast<int>(batch.size());
    const int grid = cfg_.mlp_pool_grid;
    const int in_dim = grid * grid * 3;
    std::vector<Real> flat(static_cast<std::size_t>(B) * in_dim);
    for (int b = 0; b < B; ++b) {
        const Image pooled = mean_pool(batch[b], grid);
        std::copy(pooled.px.begin(), pooled.px.end(),
                  flat.begin() + static_cast<std::ptrdiff_t>(b) * in_dim);
    }
    Tensor x = Tensor::from_data({B, in_dim}, std::move(flat));
    for (std::size_t l = 0; l < cfg_.mlp_hidden.size(); ++l) {
        const std::string p = "mlp" + std::to_string(l) + ".";
        x = gelu(tape, add_bias(tape, matmul(tape, x, param(p + "w")), param(p + "b")));
    }
    ForwardOut out;
    out.features = add_bias(tape, matmul(tape, x, param("mlp_out.w")), param("mlp_out.b"));
    out.logits = head(tape, out.features);
    return out;
}

Tensor Network::head(Tape* tape, const Tensor& features) const {
    Tensor h = add_bias(tape, matmul(tape, features, param("head.w1")), param("head.b1"));
    h = gelu(tape, h);
    return add_bias(tape, matmul(tape, h, param("head.w2")), param("head.b2"));
}

ForwardOut Network::forward(Tape* tape, const std::vector<Image>& batch) const {
    if (batch.empty()) throw UsageError("forward: empty batch");
    ForwardOut out = cfg_.encoder == EncoderKind::TinyViT ? forward_vit(tape, batch)
                                                          : forward_mlp(tape, batch);
    out.features.check_finite("forward features");
    out.logits.check_finite("forward logits");
    return out;
}

StudentTeacher::StudentTeacher(const ModelConfig& cfg_in, std::uint64_t init_seed)
    : cfg(cfg_in),
      student(cfg_in, init_seed, /*requires_grad=*/true),
      teacher(cfg_in, init_seed, /*requires_grad=*/false),
      center(Tensor::zeros({cfg_in.num_classes})) {
    teacher.copy_from(student);  // exact initial copy
}

void StudentTeacher::ema_update(Real m) {
    if (m < 0 || m > 1) throw ParameterError("ema momentum must lie in [0,1]");
    auto& sp = student.params();
    auto& tp = teacher.params();
    for (std::size_t i = 0; i < sp.size(); ++i) {
        const Real* s = sp[i].second.data();
        Real* t = tp[i].second.data();
        const std::int64_t n = sp[i].second.size();
        for (std::int64_t j = 0; j < n; ++j) t[j] = m * t[j] + (1 - m) * s[j];
    }
}

Tensor StudentTeacher::teacher_probs(const Tensor& teacher_logits, Real tau_t) const {
    if (tau_t >= cfg.tau_s)
        throw ConfigError("teacher temperature must stay below the student temperature");
    if (!cfg.centering) return softmax_temp(nullptr, teacher_logits, tau_t);
    Tensor neg_center = mul_scalar(nullptr, center, -1.0);
    Tensor shifted = add_bias(nullptr, teacher_logits, neg_center);
    return softmax_temp(nullptr, shifted, tau_t);
}

void StudentTeacher::update_center(const std::vector<Tensor>& teacher_logit_batches) {
    if (!cfg.centering || teacher_logit_batches.empty()) return;
    const int K = cfg.num_classes;
    std::vector<Real> meanv(static_cast<std::size_t>(K), 0.0);
    std::int64_t rows = 0;
    for (const Tensor& t : teacher_logit_batches) {
        if (t.dim(t.ndim() - 1) != K) throw DimensionError("update_center: K mismatch");
        const std::int64_t r = t.size() / K;
        const Real* d = t.data();
        for (std::int64_t i = 0; i < r; ++i)
            for (int k = 0; k < K; ++k) meanv[static_cast<std::size_t>(k)] += d[i * K + k];
        rows += r;
    }
    Real* c = center.data();
    const Real cm = cfg.center_momentum;
    for (int k = 0; k < K; ++k)
        c[k] = cm * c[k] + (1 - cm) * meanv[static_cast<std::size_t>(k)] / static_cast<Real>(rows);
}

}  // namespace ood
