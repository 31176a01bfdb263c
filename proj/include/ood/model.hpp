#pragma once

#include <random>
#include <string>
#include <vector>

#include "ood/image.hpp"
#include "ood/tensor.hpp"

namespace ood {

enum class EncoderKind { TinyViT, Mlp };

struct ModelConfig {
    EncoderKind encoder = EncoderKind::TinyViT;
    // TinyViT
    int dim = 64;
    int depth = 2;
    int heads = 4;
    int patch = 4;
    // feature read-out: CLS token or mean over patch tokens (after final LN)
    bool mean_pool_feature = false;
    // MLP
    std::vector<int> mlp_hidden = {128};
    int mlp_pool_grid = 8;
    int feature_dim = 64;  // d; equals `dim` for TinyViT
    // head
    int num_classes = 256;  // K
    int head_hidden = 128;
    // view sizes the encoder must accept (distinct pixel sizes)
    std::vector<int> view_sizes = {32, 16};
    // distillation
    bool centering = true;
    Real center_momentum = 0.9;
    Real teacher_momentum = 0.996;
    Real tau_s = 0.1;
    Real tau_t = 0.01;

    void validate() const;
};

struct ForwardOut {
    Tensor features;  // [B, d], pre-head activation used by the OOD score
    Tensor logits;    // [B, K]
};

// Encoder + projection head with a flat named-parameter list. Student and
// teacher are two instances of this class with identical structure.
class Network {
  public:
    Network(const ModelConfig& cfg, std::uint64_t init_seed, bool requires_grad);

    ForwardOut forward(Tape* tape, const std::vector<Image>& batch) const;

    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor param(const std::string& name) const;

    // Copies parameter values from a structurally identical network.
    void copy_from(const Network& other);
    void zero_grads();

    const ModelConfig& config() const { return cfg_; }

  private:
    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;

    Tensor add_param(const std::string& name, std::vector<int> shape, bool requires_grad);
    ForwardOut forward_vit(Tape* tape, const std::vector<Image>& batch) const;
    ForwardOut forward_mlp(Tape* tape, const std::vector<Image>& batch) const;
    Tensor head(Tape* tape, const Tensor& features) const;
};

struct StudentTeacher {
    ModelConfig cfg;
    Network student;
    Network teacher;  // never participates in gradient computation
    Tensor center;    // [K]

    StudentTeacher(const ModelConfig& cfg, std::uint64_t init_seed);

    // theta_t <- m * theta_t + (1 - m) * theta_s, elementwise.
    void ema_update(Real m);
    // softmax_temp(g_t - c, tau_t) when centering is enabled; constant output.
    Tensor teacher_probs(const Tensor& teacher_logits, Real tau_t) const;
    // c <- cm * c + (1 - cm) * mean over all rows of the given logit batches.
    void update_center(const std::vector<Tensor>& teacher_logit_batches);
};

}  // namespace ood
