#pragma once

#include <string>
#include <vector>

#include "ood/checkpoint.hpp"
#include "ood/config.hpp"
#include "ood/ood_eval.hpp"

namespace ood {

// Output directory layout (fixed so automation can assert paths):
//   <out_dir>/config.echo      fully resolved config, JSON
//   <out_dir>/metrics.csv      one row per training step
//   <out_dir>/checkpoints/     epoch_NNN.ckpt and final.ckpt
//   <out_dir>/reports/         evaluation artifacts (CSV/JSON)

void cmd_train(const ExperimentConfig& cfg);

// Scores the in-dist test split and every configured OOD set against the
// in-dist training feature bank; writes auroc.csv, per-dataset score CSVs
// and score histograms. Empty checkpoint path means checkpoints/final.ckpt.
void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path = "");

// Occupied-class report, k-NN accuracy (labeled in-dist only), and a
// per-checkpoint occupied-vs-AUROC scatter CSV. Empty list means every
// checkpoint found under checkpoints/.
void cmd_diagnose(const ExperimentConfig& cfg, std::vector<std::string> checkpoint_paths = {});

// Color-histogram CSVs for the in-dist set and every other configured
// dataset, plus L1 distances to the in-dist histogram.
void cmd_hist(const ExperimentConfig& cfg);

// Shared helpers (also used by tests).
EvalViewConfig eval_view_from(const ExperimentConfig& cfg);
StudentTeacher make_model(const ExperimentConfig& cfg);
std::string format_real(Real v);  // shortest round-trip decimal form

}  // namespace ood
