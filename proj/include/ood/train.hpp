#pragma once

#include <optional>
#include <vector>

#include "ood/augment.hpp"
#include "ood/data.hpp"
#include "ood/model.hpp"
#include "ood/negatives.hpp"
#include "ood/tensor.hpp"

namespace ood {

struct LossConfig {
    Real lambda = 1.0;
    Real lambda_in = 0.5;   // Combined-source weights
    Real lambda_aux = 0.5;
    Real tau_s = 0.1;
    Real tau_t_start = 0.055;
    Real tau_t_end = 0.01;
    Real clamp_eps = 1e-12;

    void validate() const;
};

// Cross-entropy of every student view against every teacher global view,
// skipping the identical view index; teacher probabilities are constants.
// Views are summed, the batch dimension is averaged.
Tensor loss_pos(Tape* tape, const std::vector<Tensor>& teacher_probs,
                const std::vector<Tensor>& student_probs, Real clamp_eps = 1e-12);

// Uniform-target cross-entropy, -(1/K) sum over views and classes of
// log p_s; summed over views, averaged over the batch.
Tensor loss_neg(Tape* tape, const std::vector<Tensor>& student_probs_neg,
                Real clamp_eps = 1e-12);

Tensor loss_total(Tape* tape, const Tensor& lp, const Tensor& ln_, Real lambda);

struct ScheduleConfig {
    Real base_lr = 0.004;  // scaled by batch_size / 256
    int batch_size = 32;
    int epochs = 30;
    int warmup_epochs = 2;
    int steps_per_epoch = 1;
    Real min_lr = 1e-6;
    Real wd_start = 0.04;
    Real wd_end = 0.4;
    Real tau_t_start = 0.055;
    Real tau_t_end = 0.01;
};

struct ScheduleState {
    Real lr;
    Real weight_decay;
    Real tau_t;
};

// lr: linear warmup then cosine decay to min_lr; weight decay: cosine from
// wd_start to wd_end; tau_t: linear within each epoch, reset at epoch start.
ScheduleState schedules(const ScheduleConfig& cfg, int epoch, int step_in_epoch);

struct AdamConfig {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
    Real clip_norm = 3.0;
};

Real clip_grad_norm(std::vector<std::pair<std::string, Tensor>>& params, Real max_norm);

// Adam with decoupled weight decay; decay is applied only to matrix-shaped
// parameters (weights), not biases/norm scales/token embeddings.
class AdamW {
  public:
    AdamW(std::vector<std::pair<std::string, Tensor>>& params, AdamConfig cfg);

    void step(Real lr, Real weight_decay);

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<Tensor>& moments1() { return m_; }
    std::vector<Tensor>& moments2() { return v_; }

  private:
    std::vector<std::pair<std::string, Tensor>>* params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

struct StepMetrics {
    int epoch = 0;
    int step = 0;  // global step
    Real loss_pos = 0;
    Real loss_neg = 0;
    Real loss_total = 0;
    Real lr = 0;
    Real tau_t = 0;
};

struct TrainSettings {
    std::uint64_t seed = 1;
    int batch_size = 32;
    int epochs = 30;
    LossConfig loss;
    ScheduleConfig sched;
    AdamConfig adam;
    AugmentConfig augment = AugmentConfig::desk_defaults();
    NegativeSource neg_source;
    ShiftTransform shift;
    bool negatives_enabled = true;  // false reproduces the plain baseline
};

// One-process training loop; epoch/step state is explicit so checkpoint
// resume replays the identical deterministic stream.
class Trainer {
  public:
    Trainer(StudentTeacher& model, const TrainSettings& settings, const ImageDataset& in_dist,
            const ImageDataset* auxiliary);

    StepMetrics run_step(int epoch, int step_in_epoch);
    int steps_per_epoch() const { return steps_per_epoch_; }

    AdamW& optimizer() { return opt_; }

  private:
    StudentTeacher* model_;
    TrainSettings settings_;
    const ImageDataset* in_dist_;
    const ImageDataset* auxiliary_;
    AdamW opt_;
    int steps_per_epoch_;
    int shuffled_epoch_ = -1;
    std::vector<int> order_;

    void ensure_epoch_order(int epoch);
};

}  // namespace ood
