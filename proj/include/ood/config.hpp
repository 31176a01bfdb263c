#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ood/augment.hpp"
#include "ood/model.hpp"
#include "ood/negatives.hpp"
#include "ood/train.hpp"

namespace ood {

// One dataset reference; synthetic kinds generate disjoint train/test splits
// from derived seeds, file kinds read CIFAR binaries or PPM folders.
struct DatasetConfig {
    std::string name;            // report label
    std::string kind = "synthetic";  // synthetic | cifar10 | cifar100 | folder
    std::string synth = "stripes";
    std::string path;       // train file/folder for file kinds
    std::string test_path;  // test file for cifar kinds
    int n_train = 128;
    int n_test = 64;
    int size = 32;
};

struct EvalConfig {
    Real score_tau = 0.04;
    int knn_k = 10;
    std::size_t bank_subsample = 0;  // 0 = use all training features
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    DatasetConfig in_dist;
    std::optional<DatasetConfig> auxiliary;
    std::vector<DatasetConfig> ood_test;
    ModelConfig model;
    AugmentConfig augment = AugmentConfig::desk_defaults();
    std::string negative_source = "in_dist";  // none | in_dist | auxiliary | combined
    std::string negative_shift = "rot90";
    int negative_grid_n = 2;
    Real negative_max_frac = 0.25;
    LossConfig loss;
    ScheduleConfig sched;
    AdamConfig adam;
    int batch_size = 32;
    int epochs = 30;
    int checkpoint_every = 10;  // epochs
    EvalConfig eval;

    void validate() const;
    NegativeSource make_negative_source() const;
    ShiftTransform make_shift() const;
    bool negatives_enabled() const { return negative_source != "none"; }
    TrainSettings make_train_settings() const;

    // Parses a JSON config file; unknown fields are rejected. `out_dir` is
    // prefixed by the OOD_OUT_ROOT environment variable when set and the
    // path is relative.
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text);
    // Fully resolved config (defaults included), used for the config.echo.
    std::string to_json_text() const;
};

// Materializes one split of a dataset reference. For synthetic kinds the
// split tag decorrelates train/test draws; file kinds read from disk.
ImageDataset load_dataset_split(const DatasetConfig& cfg, std::uint64_t master_seed,
                                bool train_split);

}  // namespace ood
