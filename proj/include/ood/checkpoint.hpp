#pragma once

#include <string>

#include "ood/model.hpp"
#include "ood/train.hpp"

namespace ood {

// Versioned binary container: seed, epoch, optimizer step, rng state string,
// then named tensors (student/teacher parameters, center, Adam moments).
struct CheckpointMeta {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::int64_t opt_step = 0;
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const StudentTeacher& model, AdamW& opt,
                     const CheckpointMeta& meta);

// Restores parameters and optimizer state in place; the model and optimizer
// must have the same structure the checkpoint was written from.
CheckpointMeta load_checkpoint(const std::string& path, StudentTeacher& model, AdamW& opt);

}  // namespace ood
