#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "ood/train.hpp"

using namespace ood;
using testutil::random_tensor;

namespace {

// random probability rows
Tensor random_probs(int rows, int K, std::mt19937_64& rng) {
    std::uniform_real_distribution<Real> dist(0.01, 1.0);
    std::vector<Real> data(static_cast<std::size_t>(rows) * K);
    for (int r = 0; r < rows; ++r) {
        Real s = 0;
        for (int c = 0; c < K; ++c) {
            data[static_cast<std::size_t>(r) * K + c] = dist(rng);
            s += data[static_cast<std::size_t>(r) * K + c];
        }
        for (int c = 0; c < K; ++c) data[static_cast<std::size_t>(r) * K + c] /= s;
    }
    return Tensor::from_data({rows, K}, std::move(data));
}

ModelConfig toy_model_config() {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.feature_dim = 8;
    cfg.num_classes = 4;
    cfg.head_hidden = 6;
    cfg.view_sizes = {8, 16};
    return cfg;
}

AugmentConfig toy_augment() {
    AugmentConfig cfg = AugmentConfig::desk_defaults();
    cfg.global1.output_size = cfg.global2.output_size = 16;
    cfg.local.output_size = 8;
    cfg.n_local = 2;
    return cfg;
}

TrainSettings toy_settings(std::uint64_t seed, bool negatives) {
    TrainSettings ts;
    ts.seed = seed;
    ts.batch_size = 2;
    ts.epochs = 2;
    ts.augment = toy_augment();
    ts.sched.batch_size = 2;
    ts.sched.epochs = 2;
    ts.sched.warmup_epochs = 1;
    ts.negatives_enabled = negatives;
    ts.neg_source.kind = NegativeSourceKind::Auxiliary;
    ts.shift = ShiftTransform{ShiftKind::Rot90Set, 2, 0.25};
    if (!negatives) ts.loss.lambda = 0.0;
    return ts;
}

}  // namespace

TEST_CASE("loss_pos closed-form cases") {
    const int K = 4;
    Tensor uniform = Tensor::full({1, K}, 0.25);
    std::vector<Tensor> pt = {uniform, uniform};           // |G| = 2
    std::vector<Tensor> ps = {uniform, uniform, uniform};  // |V| = 3
    // pairs = |G| * (|V|-1) = 4, each contributing ln 4
    CHECK(loss_pos(nullptr, pt, ps).item() ==
          doctest::Approx(4 * std::log(4.0)).epsilon(1e-9));

    Tensor onehot = Tensor::from_data({1, K}, {1, 0, 0, 0});
    std::vector<Tensor> pt1 = {onehot, onehot};
    std::vector<Tensor> ps1 = {onehot, onehot, onehot};
    CHECK(std::abs(loss_pos(nullptr, pt1, ps1).item()) < 1e-6);
}

TEST_CASE("loss_pos equals a direct double-loop oracle") {
    std::mt19937_64 rng(3);
    const int K = 6, B = 3;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Tensor> pt = {random_probs(B, K, rng), random_probs(B, K, rng)};
        std::vector<Tensor> ps;
        for (int v = 0; v < 5; ++v) ps.push_back(random_probs(B, K, rng));
        Real oracle = 0;
        for (int g = 0; g < 2; ++g)
            for (int v = 0; v < 5; ++v) {
                if (v == g) continue;
                for (int b = 0; b < B; ++b)
                    for (int k = 0; k < K; ++k)
                        oracle -= pt[static_cast<std::size_t>(g)].data()[b * K + k] *
                                  std::log(std::max(
                                      ps[static_cast<std::size_t>(v)].data()[b * K + k],
                                      1e-12));
            }
        oracle /= B;  // batch mean
        CHECK(loss_pos(nullptr, pt, ps).item() == doctest::Approx(oracle).epsilon(1e-9));
    }
}

TEST_CASE("loss_neg closed forms and the uniform lower bound") {
    const int K = 4;
    Tensor uniform = Tensor::full({1, K}, 0.25);
    CHECK(loss_neg(nullptr, {uniform}).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
    std::vector<Tensor> nine(9, uniform);
    CHECK(loss_neg(nullptr, nine).item() ==
          doctest::Approx(9 * std::log(4.0)).epsilon(1e-9));

    Tensor skew = Tensor::from_data({1, K}, {0.7, 0.1, 0.1, 0.1});
    CHECK(loss_neg(nullptr, {skew}).item() > std::log(4.0) + 1e-6);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        // one view with a batch of 2: the batch-mean bound is still ln K
        std::vector<Tensor> rows = {random_probs(2, K, rng)};
        CHECK(loss_neg(nullptr, rows).item() >= std::log(4.0) - 1e-6);
    }
}

TEST_CASE("loss_pos is bounded below by the teacher entropy") {
    std::mt19937_64 rng(7);
    const int K = 5, B = 2;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Tensor> pt = {random_probs(B, K, rng), random_probs(B, K, rng)};
        std::vector<Tensor> ps = {random_probs(B, K, rng), random_probs(B, K, rng),
                                  random_probs(B, K, rng)};
        Real entropy_sum = 0;
        for (int g = 0; g < 2; ++g) {
            Real h = 0;
            for (int b = 0; b < B; ++b)
                for (int k = 0; k < K; ++k) {
                    const Real p = pt[static_cast<std::size_t>(g)].data()[b * K + k];
                    h -= p * std::log(p);
                }
            entropy_sum += (3 - 1) * h / B;  // each teacher view pairs with |V|-1 students
        }
        CHECK(loss_pos(nullptr, pt, ps).item() >= entropy_sum - 1e-9);
    }
}

TEST_CASE("loss_total arithmetic") {
    Tensor lp = Tensor::scalar(2.0), ln_ = Tensor::scalar(3.0);
    CHECK(loss_total(nullptr, lp, ln_, 1.0).item() == 5.0);
    CHECK(loss_total(nullptr, lp, ln_, 0.0).item() == 2.0);
    CHECK(loss_total(nullptr, lp, ln_, 0.5).item() == 3.5);
}

TEST_CASE("schedules") {
    ScheduleConfig cfg;
    cfg.base_lr = 0.004;
    cfg.batch_size = 32;
    cfg.epochs = 10;
    cfg.warmup_epochs = 2;
    cfg.steps_per_epoch = 5;
    cfg.min_lr = 1e-6;

    ScheduleState s0 = schedules(cfg, 0, 0);
    CHECK(s0.lr == 0.0);  // warmup starts at zero
    CHECK(s0.tau_t == doctest::Approx(0.055).epsilon(1e-12));

    ScheduleState warm_end = schedules(cfg, 1, 4);
    const Real peak = 0.004 * 32.0 / 256.0;
    CHECK(warm_end.lr < peak);
    CHECK(warm_end.lr > 0.8 * peak);

    ScheduleState last = schedules(cfg, 9, 4);
    CHECK(last.lr == doctest::Approx(1e-6).epsilon(1e-9));  // cosine floor at the end
    CHECK(last.tau_t == doctest::Approx(0.01).epsilon(1e-12));

    // tau_t resets each epoch: start of any epoch is tau_t_start
    CHECK(schedules(cfg, 5, 0).tau_t == doctest::Approx(0.055).epsilon(1e-12));

    // weight decay follows a cosine from wd_start to wd_end
    CHECK(schedules(cfg, 0, 0).weight_decay == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(last.weight_decay == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales to the target norm") {
    Tensor a = Tensor::from_data({2}, {3.0, 4.0}, true);
    a.grad()[0] = 3.0;
    a.grad()[1] = 4.0;
    std::vector<std::pair<std::string, Tensor>> params{{"a", a}};
    const Real norm = clip_grad_norm(params, 1.0);
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.grad_vec()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(a.grad_vec()[1] == doctest::Approx(0.8).epsilon(1e-12));

    Tensor b = Tensor::from_data({1}, {1.0}, true);
    b.grad()[0] = 0.5;
    std::vector<std::pair<std::string, Tensor>> params2{{"b", b}};
    clip_grad_norm(params2, 3.0);  // below the threshold: untouched
    CHECK(params2[0].second.grad_vec()[0] == 0.5);
}

TEST_CASE("adamw minimizes a quadratic and decays only matrices") {
    Tensor w = Tensor::from_data({1, 1}, {5.0}, true);
    std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
    AdamW opt(params, AdamConfig{});
    for (int it = 0; it < 400; ++it) {
        w.zero_grad();
        w.grad()[0] = 2.0 * w.data()[0];  // d/dw of w^2
        opt.step(0.05, 0.0);
    }
    CHECK(std::abs(w.data()[0]) < 1e-2);

    // decoupled weight decay shrinks a matrix param with zero gradient...
    Tensor m = Tensor::from_data({1, 1}, {1.0}, true);
    std::vector<std::pair<std::string, Tensor>> pm{{"m", m}};
    AdamW opt2(pm, AdamConfig{});
    m.grad();  // zero grad buffer
    opt2.step(0.1, 0.5);
    CHECK(m.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));

    // ...but not a bias-shaped one
    Tensor bias = Tensor::from_data({1}, {1.0}, true);
    std::vector<std::pair<std::string, Tensor>> pb{{"bias", bias}};
    AdamW opt3(pb, AdamConfig{});
    bias.grad();
    opt3.step(0.1, 0.5);
    CHECK(bias.data()[0] == 1.0);
}

TEST_CASE("gradients flow only into the student during a full loss") {
    ModelConfig mcfg = toy_model_config();
    StudentTeacher st(mcfg, 41);
    std::mt19937_64 rng(41);
    std::vector<Image> views;
    for (int i = 0; i < 3; ++i) views.push_back(testutil::random_image(16, rng));

    Tape tape;
    std::vector<Tensor> pt, ps;
    for (int g = 0; g < 2; ++g) {
        ForwardOut t = st.teacher.forward(nullptr, {views[static_cast<std::size_t>(g)]});
        pt.push_back(st.teacher_probs(t.logits, 0.04));
    }
    for (int v = 0; v < 3; ++v) {
        ForwardOut s = st.student.forward(&tape, {views[static_cast<std::size_t>(v)]});
        ps.push_back(softmax_temp(&tape, s.logits, 0.1));
    }
    Tensor lp = loss_pos(&tape, pt, ps);
    Tensor ln_ = loss_neg(&tape, {ps[2]});
    Tensor total = loss_total(&tape, lp, ln_, 1.0);
    tape.backward(total);

    bool student_has_grad = false;
    for (const auto& [name, t] : st.student.params())
        if (t.has_grad())
            for (Real g : t.grad_vec())
                if (g != 0.0) student_has_grad = true;
    CHECK(student_has_grad);
    for (const auto& [name, t] : st.teacher.params()) CHECK_FALSE(t.has_grad());
}

TEST_CASE("full training loss gradient matches finite differences") {
    // 2-sample toy batch through the real student network; every parameter
    // checked against central differences
    ModelConfig mcfg = toy_model_config();
    StudentTeacher st(mcfg, 43);
    std::mt19937_64 rng(43);
    std::vector<Image> g_views = {testutil::random_image(16, rng),
                                  testutil::random_image(16, rng)};
    std::vector<Image> l_views = {testutil::random_image(8, rng),
                                  testutil::random_image(8, rng)};
    std::vector<Image> n_views = {testutil::random_image(16, rng)};

    std::vector<Tensor> pt;
    for (const Image& g : g_views) {
        ForwardOut t = st.teacher.forward(nullptr, {g});
        pt.push_back(st.teacher_probs(t.logits, 0.04));
    }
    auto compute_loss = [&](Tape* tape) {
        std::vector<Tensor> ps;
        for (const Image& g : g_views) {
            ForwardOut s = st.student.forward(tape, {g});
            ps.push_back(softmax_temp(tape, s.logits, 0.1));
        }
        for (const Image& l : l_views) {
            ForwardOut s = st.student.forward(tape, {l});
            ps.push_back(softmax_temp(tape, s.logits, 0.1));
        }
        std::vector<Tensor> pn;
        for (const Image& nimg : n_views) {
            ForwardOut s = st.student.forward(tape, {nimg});
            pn.push_back(softmax_temp(tape, s.logits, 0.1));
        }
        Tensor lp = loss_pos(tape, pt, ps);
        Tensor ln_ = loss_neg(tape, pn);
        return loss_total(tape, lp, ln_, 1.0);
    };

    Tape tape;
    Tensor loss = compute_loss(&tape);
    tape.backward(loss);

    const Real h = 1e-5;
    Real worst = 0;
    for (auto& [name, t] : st.student.params()) {
        const std::vector<Real> analytic =
            t.has_grad() ? t.grad_vec() : std::vector<Real>(t.vec().size(), 0.0);
        // probe a few entries per tensor to keep the runtime in budget
        const std::int64_t stride = std::max<std::int64_t>(1, t.size() / 4);
        for (std::int64_t i = 0; i < t.size(); i += stride) {
            const Real orig = t.data()[i];
            t.data()[i] = orig + h;
            const Real up = compute_loss(nullptr).item();
            t.data()[i] = orig - h;
            const Real down = compute_loss(nullptr).item();
            t.data()[i] = orig;
            const Real fd = (up - down) / (2 * h);
            const Real denom = std::max({std::abs(fd), std::abs(analytic[static_cast<std::size_t>(i)]), 1e-3});
            worst = std::max(worst,
                             std::abs(analytic[static_cast<std::size_t>(i)] - fd) / denom);
        }
    }
    CHECK(worst < 1e-2);
}

TEST_CASE("trainer is deterministic and lambda=0 kills the negative loss") {
    ImageDataset in_dist = synth_dataset(SynthKind::Stripes, 4, 16, 7);
    ImageDataset aux = synth_dataset(SynthKind::Blobs, 4, 16, 8);

    auto run = [&](bool negatives) {
        ModelConfig mcfg = toy_model_config();
        StudentTeacher st(mcfg, 99);
        Trainer trainer(st, toy_settings(99, negatives), in_dist, &aux);
        std::vector<StepMetrics> out;
        for (int e = 0; e < 2; ++e)
            for (int s = 0; s < trainer.steps_per_epoch(); ++s)
                out.push_back(trainer.run_step(e, s));
        return out;
    };

    auto a = run(true);
    auto b = run(true);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].loss_total == b[i].loss_total);  // bitwise
        CHECK(a[i].loss_pos == b[i].loss_pos);
        CHECK(a[i].loss_neg == b[i].loss_neg);
    }

    auto base = run(false);
    for (const StepMetrics& m : base) CHECK(m.loss_neg == 0.0);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    CHECK(cfg.lambda == 1.0);
    CHECK_NOTHROW(cfg.validate());
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = LossConfig{};
    cfg.tau_t_end = 0.2;  // above tau_s
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
