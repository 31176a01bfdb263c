#include "ood/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace ood {

void LossConfig::validate() const {
    if (lambda < 0 || lambda_in < 0 || lambda_aux < 0)
        throw ConfigError("loss weights must be non-negative");
    if (tau_s <= 0 || tau_t_start <= 0 || tau_t_end <= 0)
        throw ConfigError("temperatures must be positive");
    if (tau_t_end > tau_t_start)
        throw ConfigError("tau_t schedule must be non-increasing");
    if (clamp_eps <= 0) throw ConfigError("clamp_eps must be positive");
}

Tensor loss_pos(Tape* tape, const std::vector<Tensor>& teacher_probs,
                const std::vector<Tensor>& student_probs, Real clamp_eps) {
    if (teacher_probs.empty() || student_probs.empty())
        throw UsageError("loss_pos: empty view lists");
    const int B = teacher_probs[0].dim(0);
    const int K = teacher_probs[0].dim(1);
    for (const Tensor& t : teacher_probs)
        if (t.ndim() != 2 || t.dim(0) != B || t.dim(1) != K)
            throw DimensionError("loss_pos: teacher prob shape mismatch");
    for (const Tensor& t : student_probs)
        if (t.ndim() != 2 || t.dim(0) != B || t.dim(1) != K)
            throw DimensionError("loss_pos: student prob shape mismatch");
    std::vector<Tensor> log_ps;
    log_ps.reserve(student_probs.size());
    for (const Tensor& p : student_probs) log_ps.push_back(log_clamped(tape, p, clamp_eps));
    Tensor acc;
    for (std::size_t g = 0; g < teacher_probs.size(); ++g) {
        for (std::size_t v = 0; v < student_probs.size(); ++v) {
            if (v == g) continue;  // skip the identical view
            Tensor term = sum(tape, mul(tape, teacher_probs[g], log_ps[v]));
            acc = acc.defined() ? add(tape, acc, term) : term;
        }
    }
    return mul_scalar(tape, acc, -1.0 / static_cast<Real>(B));
}

Tensor loss_neg(Tape* tape, const std::vector<Tensor>& student_probs_neg, Real clamp_eps) {
    if (student_probs_neg.empty()) throw UsageError("loss_neg: empty view list");
    const int B = student_probs_neg[0].dim(0);
    const int K = student_probs_neg[0].dim(1);
    Tensor acc;
    for (const Tensor& p : student_probs_neg) {
        if (p.ndim() != 2 || p.dim(0) != B || p.dim(1) != K)
            throw DimensionError("loss_neg: prob shape mismatch");
        Tensor term = sum(tape, log_clamped(tape, p, clamp_eps));
        acc = acc.defined() ? add(tape, acc, term) : term;
    }
    return mul_scalar(tape, acc, -1.0 / (static_cast<Real>(K) * B));
}

Tensor loss_total(Tape* tape, const Tensor& lp, const Tensor& ln_, Real lambda) {
    if (lambda < 0) throw ParameterError("lambda must be non-negative");
    return add(tape, lp, mul_scalar(tape, ln_, lambda));
}

ScheduleState schedules(const ScheduleConfig& cfg, int epoch, int step_in_epoch) {
    if (cfg.steps_per_epoch < 1 || cfg.epochs < 1)
        throw ParameterError("schedules: totals must be known and positive");
    const std::int64_t spe = cfg.steps_per_epoch;
    const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * spe;
    const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * spe;
    const std::int64_t gs = static_cast<std::int64_t>(epoch) * spe + step_in_epoch;
    ScheduleState st;
    const Real peak = cfg.base_lr * cfg.batch_size / 256.0;
    if (warm > 0 && gs < warm) {
        st.lr = peak * static_cast<Real>(gs) / static_cast<Real>(warm);
    } else {
        const std::int64_t decay_len = std::max<std::int64_t>(1, total - 1 - warm);
        const Real t = std::clamp(static_cast<Real>(gs - warm) / static_cast<Real>(decay_len),
                                  0.0, 1.0);
        st.lr = cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
    }
    {
        const Real t = total > 1 ? static_cast<Real>(gs) / static_cast<Real>(total - 1) : 1.0;
        st.weight_decay =
            cfg.wd_end + 0.5 * (cfg.wd_start - cfg.wd_end) *
                             (1.0 + std::cos(3.14159265358979323846 * std::clamp(t, 0.0, 1.0)));
    }
    // tau_t restarts at tau_t_start every epoch
    st.tau_t = spe > 1 ? cfg.tau_t_start + (cfg.tau_t_end - cfg.tau_t_start) *
                             static_cast<Real>(step_in_epoch) / static_cast<Real>(spe - 1)
                       : cfg.tau_t_end;
    return st;
}

Real clip_grad_norm(std::vector<std::pair<std::string, Tensor>>& params, Real max_norm) {
    Real sq = 0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        const auto& g = p.grad_vec();
        for (Real v : g) sq += v * v;
    }
    const Real norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const Real scale = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            Real* g = p.grad();
            for (std::int64_t i = 0; i < p.size(); ++i) g[i] *= scale;
        }
    }
    return norm;
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>>& params, AdamConfig cfg)
    : params_(&params), cfg_(cfg) {
    for (auto& [name, p] : params) {
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

void AdamW::step(Real lr, Real weight_decay) {
    ++t_;
    const Real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<Real>(t_));
    const Real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<Real>(t_));
    for (std::size_t i = 0; i < params_->size(); ++i) {
        Tensor& p = (*params_)[i].second;
        const bool decay = p.ndim() >= 2;  // weights only
        Real* pd = p.data();
        Real* md = m_[i].data();
        Real* vd = v_[i].data();
        const bool has_grad = p.has_grad();
        const Real* g = has_grad ? p.grad() : nullptr;
        for (std::int64_t j = 0; j < p.size(); ++j) {
            const Real gj = g ? g[j] : 0.0;
            md[j] = cfg_.beta1 * md[j] + (1 - cfg_.beta1) * gj;
            vd[j] = cfg_.beta2 * vd[j] + (1 - cfg_.beta2) * gj * gj;
            const Real mhat = md[j] / bc1;
            const Real vhat = vd[j] / bc2;
            pd[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (decay) pd[j] -= lr * weight_decay * pd[j];
        }
    }
}

Trainer::Trainer(StudentTeacher& model, const TrainSettings& settings,
                 const ImageDataset& in_dist, const ImageDataset* auxiliary)
    : model_(&model),
      settings_(settings),
      in_dist_(&in_dist),
      auxiliary_(auxiliary),
      opt_(model.student.params(), settings.adam) {
    settings_.loss.validate();
    settings_.augment.validate();
    settings_.shift.validate();
    if (in_dist.size() == 0) throw ConfigError("in-distribution dataset is empty");
    const bool needs_aux = settings_.negatives_enabled &&
                           settings_.neg_source.kind != NegativeSourceKind::InDist;
    if (needs_aux && (auxiliary_ == nullptr || auxiliary_->size() == 0))
        throw ConfigError("negative source requires a non-empty auxiliary dataset");
    const int b = std::min<int>(settings_.batch_size, static_cast<int>(in_dist.size()));
    steps_per_epoch_ = std::max<int>(1, static_cast<int>(in_dist.size()) / b);
}

void Trainer::ensure_epoch_order(int epoch) {
    if (shuffled_epoch_ == epoch) return;
    order_.resize(in_dist_->size());
    std::iota(order_.begin(), order_.end(), 0);
    std::mt19937_64 rng(derive_seed(settings_.seed, 0xE70C, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order_.begin(), order_.end(), rng);
    shuffled_epoch_ = epoch;
}

StepMetrics Trainer::run_step(int epoch, int step_in_epoch) {
    ensure_epoch_order(epoch);
    ScheduleConfig sc = settings_.sched;
    sc.batch_size = settings_.batch_size;
    sc.epochs = settings_.epochs;
    sc.steps_per_epoch = steps_per_epoch_;
    sc.tau_t_start = settings_.loss.tau_t_start;
    sc.tau_t_end = settings_.loss.tau_t_end;
    const ScheduleState sched = schedules(sc, epoch, step_in_epoch);

    const int B = std::min<int>(settings_.batch_size, static_cast<int>(in_dist_->size()));
    std::vector<int> batch_idx(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i)
        batch_idx[static_cast<std::size_t>(i)] =
            order_[(static_cast<std::size_t>(step_in_epoch) * B + i) % order_.size()];

    // positive multi-crop views, deterministic per (seed, epoch, sample)
    const int n_local = settings_.augment.n_local;
    std::vector<ViewSet> views;
    views.reserve(static_cast<std::size_t>(B));
    for (int idx : batch_idx) {
        std::mt19937_64 rng(derive_seed(settings_.seed, 1, static_cast<std::uint64_t>(epoch),
                                        static_cast<std::uint64_t>(idx)));
        views.push_back(make_views(in_dist_->images[static_cast<std::size_t>(idx)],
                                   settings_.augment, rng));
    }
    auto gather = [&](auto pick) {
        std::vector<Image> batch;
        batch.reserve(static_cast<std::size_t>(B));
        for (int i = 0; i < B; ++i) batch.push_back(pick(views[static_cast<std::size_t>(i)]));
        return batch;
    };

    Tape tape;
    StepMetrics mets;
    mets.epoch = epoch;
    mets.step = epoch * steps_per_epoch_ + step_in_epoch;
    mets.lr = sched.lr;
    mets.tau_t = sched.tau_t;
    try {
        // teacher sees only the global views
        std::vector<Tensor> teacher_logits, p_t;
        for (int g = 0; g < 2; ++g) {
            ForwardOut out = model_->teacher.forward(
                nullptr, gather([g](const ViewSet& v) { return v.globals[static_cast<std::size_t>(g)]; }));
            teacher_logits.push_back(out.logits);
            p_t.push_back(model_->teacher_probs(out.logits, sched.tau_t));
        }
        std::vector<Tensor> p_s;
        for (int g = 0; g < 2; ++g) {
            ForwardOut out = model_->student.forward(
                &tape, gather([g](const ViewSet& v) { return v.globals[static_cast<std::size_t>(g)]; }));
            p_s.push_back(softmax_temp(&tape, out.logits, settings_.loss.tau_s));
        }
        for (int l = 0; l < n_local; ++l) {
            ForwardOut out = model_->student.forward(
                &tape, gather([l](const ViewSet& v) { return v.locals[static_cast<std::size_t>(l)]; }));
            p_s.push_back(softmax_temp(&tape, out.logits, settings_.loss.tau_s));
        }
        Tensor lp = loss_pos(&tape, p_t, p_s, settings_.loss.clamp_eps);

        Tensor total;
        Real ln_value = 0;
        const bool use_negatives =
            settings_.negatives_enabled &&
            (settings_.neg_source.kind == NegativeSourceKind::Combined
                 ? (settings_.loss.lambda_in > 0 || settings_.loss.lambda_aux > 0)
                 : settings_.loss.lambda > 0);
        if (use_negatives) {
            // negative streams: one, or two in Combined mode
            std::vector<std::vector<NegativeViews>> per_sample;
            for (int i = 0; i < B; ++i) {
                const int idx = batch_idx[static_cast<std::size_t>(i)];
                std::mt19937_64 rng(derive_seed(settings_.seed, 2,
                                                static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(idx)));
                static const std::vector<Image> kNoAux;
                per_sample.push_back(sample_negative_views(
                    in_dist_->images[static_cast<std::size_t>(idx)],
                    auxiliary_ ? auxiliary_->images : kNoAux, settings_.neg_source,
                    settings_.shift, settings_.augment, rng));
            }
            const std::size_t n_streams = per_sample[0].size();
            std::vector<Tensor> stream_losses;
            for (std::size_t s = 0; s < n_streams; ++s) {
                std::vector<Tensor> p_neg;
                {
                    std::vector<Image> batch;
                    for (int i = 0; i < B; ++i)
                        batch.push_back(per_sample[static_cast<std::size_t>(i)][s].globals[0]);
                    ForwardOut out = model_->student.forward(&tape, batch);
                    p_neg.push_back(softmax_temp(&tape, out.logits, settings_.loss.tau_s));
                }
                for (int l = 0; l < n_local; ++l) {
                    std::vector<Image> batch;
                    for (int i = 0; i < B; ++i)
                        batch.push_back(
                            per_sample[static_cast<std::size_t>(i)][s].locals[static_cast<std::size_t>(l)]);
                    ForwardOut out = model_->student.forward(&tape, batch);
                    p_neg.push_back(softmax_temp(&tape, out.logits, settings_.loss.tau_s));
                }
                stream_losses.push_back(loss_neg(&tape, p_neg, settings_.loss.clamp_eps));
            }
            if (settings_.neg_source.kind == NegativeSourceKind::Combined) {
                total = add(&tape, lp,
                            add(&tape,
                                mul_scalar(&tape, stream_losses[0], settings_.loss.lambda_in),
                                mul_scalar(&tape, stream_losses[1], settings_.loss.lambda_aux)));
                ln_value = stream_losses[0].item() + stream_losses[1].item();
            } else {
                total = loss_total(&tape, lp, stream_losses[0], settings_.loss.lambda);
                ln_value = stream_losses[0].item();
            }
        } else {
            total = lp;
        }
        total.check_finite("loss_total");

        model_->student.zero_grads();
        tape.backward(total);
        clip_grad_norm(model_->student.params(), settings_.adam.clip_norm);
        opt_.step(sched.lr, sched.weight_decay);
        model_->ema_update(model_->cfg.teacher_momentum);
        model_->update_center(teacher_logits);

        mets.loss_pos = lp.item();
        mets.loss_neg = ln_value;
        mets.loss_total = total.item();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step_in_epoch) + ", seed " +
                             std::to_string(settings_.seed) + ")");
    }
    return mets;
}

}  // namespace ood
