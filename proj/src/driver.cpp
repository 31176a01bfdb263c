#include "ood/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "ood/train.hpp"

namespace fs = std::filesystem;

namespace ood {

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

// Per-dataset score CSV plus a fixed-bin histogram of the scores.
void write_scores(const fs::path& dir, const std::string& name, const std::vector<Real>& scores) {
    auto out = open_out(dir / ("scores_" + name + ".csv"));
    out << "index,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << i << "," << format_real(scores[i]) << "\n";

    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    const Real lo = *lo_it, hi = *hi_it;
    const int bins = 32;
    std::vector<int> counts(bins, 0);
    const Real width = hi > lo ? (hi - lo) / bins : 1.0;
    for (Real s : scores) {
        int b = hi > lo ? static_cast<int>((s - lo) / width) : 0;
        counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
    }
    auto hist = open_out(dir / ("hist_scores_" + name + ".csv"));
    hist << "bin_lo,bin_hi,count\n";
    for (int b = 0; b < bins; ++b)
        hist << format_real(lo + b * width) << "," << format_real(lo + (b + 1) * width) << ","
             << counts[static_cast<std::size_t>(b)] << "\n";
}

std::vector<std::string> list_checkpoints(const fs::path& dir) {
    std::vector<std::string> paths;
    if (!fs::is_directory(dir)) throw ConfigError("no checkpoint directory " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".ckpt") paths.push_back(entry.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw ConfigError("no checkpoints found in " + dir.string());
    return paths;
}

// Teacher soft-class probabilities for a dataset under the deterministic
// eval view: softmax((g - c) / tau_t), flattened row-major [N, K].
std::vector<Real> teacher_probs_for(const StudentTeacher& model, const ImageDataset& ds,
                                    const EvalViewConfig& view, Real tau_t) {
    int K = 0;
    std::vector<Real> logits = extract_logits(model.teacher, ds, view, &K);
    const std::size_t n = ds.size();
    const Real* c = model.center.data();
    for (std::size_t i = 0; i < n; ++i) {
        Real* row = &logits[i * static_cast<std::size_t>(K)];
        Real mx = -1e300;
        for (int k = 0; k < K; ++k) {
            row[static_cast<std::size_t>(k)] =
                (row[static_cast<std::size_t>(k)] -
                 (model.cfg.centering ? c[static_cast<std::size_t>(k)] : 0.0)) /
                tau_t;
            mx = std::max(mx, row[static_cast<std::size_t>(k)]);
        }
        Real z = 0;
        for (int k = 0; k < K; ++k) {
            row[static_cast<std::size_t>(k)] = std::exp(row[static_cast<std::size_t>(k)] - mx);
            z += row[static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < K; ++k) row[static_cast<std::size_t>(k)] /= z;
    }
    return logits;
}

FeatureBank build_bank(const ExperimentConfig& cfg, const StudentTeacher& model,
                       const ImageDataset& train_ds) {
    FeatureBank bank = extract_features(model.teacher, train_ds, eval_view_from(cfg));
    if (cfg.eval.bank_subsample > 0 && cfg.eval.bank_subsample < bank.rows())
        bank = subsample_bank(bank, cfg.eval.bank_subsample, derive_seed(cfg.seed, 0xBA2C));
    return bank;
}

}  // namespace

std::string format_real(Real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

EvalViewConfig eval_view_from(const ExperimentConfig& cfg) {
    EvalViewConfig v;
    v.view_size = cfg.augment.global1.output_size;
    v.normalize_mean = cfg.augment.global1.normalize_mean;
    v.normalize_std = cfg.augment.global1.normalize_std;
    return v;
}

StudentTeacher make_model(const ExperimentConfig& cfg) {
    return StudentTeacher(cfg.model, derive_seed(cfg.seed, 0x1417));
}

void cmd_train(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "reports");
    write_text(out / "config.echo", cfg.to_json_text());

    ImageDataset in_dist = load_dataset_split(cfg.in_dist, cfg.seed, true);
    std::optional<ImageDataset> aux;
    if (cfg.auxiliary) aux = load_dataset_split(*cfg.auxiliary, cfg.seed, true);

    StudentTeacher model = make_model(cfg);
    Trainer trainer(model, cfg.make_train_settings(), in_dist, aux ? &*aux : nullptr);

    auto metrics = open_out(out / "metrics.csv");
    metrics << "epoch,step,loss_pos,loss_neg,loss_total,lr,tau_t\n";
    StepMetrics last{};
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int s = 0; s < trainer.steps_per_epoch(); ++s) {
            last = trainer.run_step(epoch, s);
            metrics << last.epoch << "," << last.step << "," << format_real(last.loss_pos) << ","
                    << format_real(last.loss_neg) << "," << format_real(last.loss_total) << ","
                    << format_real(last.lr) << "," << format_real(last.tau_t) << "\n";
        }
        if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
            save_checkpoint((out / "checkpoints" / name).string(), model, trainer.optimizer(),
                            {cfg.seed, epoch + 1, trainer.optimizer().step_count(), ""});
        }
    }
    save_checkpoint((out / "checkpoints" / "final.ckpt").string(), model, trainer.optimizer(),
                    {cfg.seed, cfg.epochs, trainer.optimizer().step_count(), ""});
    metrics.close();

    const Real secs =
        std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json summary{{"seed", cfg.seed},
                           {"epochs", cfg.epochs},
                           {"steps", last.step + 1},
                           {"final_loss_pos", last.loss_pos},
                           {"final_loss_neg", last.loss_neg},
                           {"final_loss_total", last.loss_total},
                           {"wall_seconds", secs}};
    write_text(out / "summary.json", summary.dump(2) + "\n");
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "reports");
    const std::string ckpt =
        checkpoint_path.empty() ? (out / "checkpoints" / "final.ckpt").string() : checkpoint_path;

    StudentTeacher model = make_model(cfg);
    auto params = model.student.params();
    AdamW opt(params, cfg.adam);
    load_checkpoint(ckpt, model, opt);

    ImageDataset train_ds = load_dataset_split(cfg.in_dist, cfg.seed, true);
    ImageDataset in_test = load_dataset_split(cfg.in_dist, cfg.seed, false);
    const EvalViewConfig view = eval_view_from(cfg);
    const FeatureBank bank = build_bank(cfg, model, train_ds);

    const FeatureBank in_feats = extract_features(model.teacher, in_test, view);
    const std::vector<Real> in_scores = score_features(in_feats, bank, cfg.eval.score_tau);
    write_scores(out / "reports", "in_test", in_scores);

    auto table = open_out(out / "reports" / "auroc.csv");
    table << "dataset,n_in,n_out,auroc\n";
    for (const auto& dcfg : cfg.ood_test) {
        ImageDataset ood_ds = load_dataset_split(dcfg, cfg.seed, false);
        const FeatureBank feats = extract_features(model.teacher, ood_ds, view);
        const std::vector<Real> scores = score_features(feats, bank, cfg.eval.score_tau);
        write_scores(out / "reports", dcfg.name, scores);
        table << dcfg.name << "," << in_scores.size() << "," << scores.size() << ","
              << format_real(auroc(scores, in_scores)) << "\n";
    }

    nlohmann::json summary{{"checkpoint", ckpt},
                           {"bank_rows", bank.rows()},
                           {"score_tau", cfg.eval.score_tau},
                           {"in_vs_in_auroc", auroc(in_scores, in_scores)}};
    write_text(out / "reports" / "eval_summary.json", summary.dump(2) + "\n");
}

void cmd_diagnose(const ExperimentConfig& cfg, std::vector<std::string> checkpoint_paths) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "reports");
    if (checkpoint_paths.empty()) checkpoint_paths = list_checkpoints(out / "checkpoints");

    ImageDataset train_ds = load_dataset_split(cfg.in_dist, cfg.seed, true);
    ImageDataset in_test = load_dataset_split(cfg.in_dist, cfg.seed, false);
    std::optional<ImageDataset> ood_ds;
    if (!cfg.ood_test.empty()) ood_ds = load_dataset_split(cfg.ood_test.front(), cfg.seed, false);
    const EvalViewConfig view = eval_view_from(cfg);

    auto scatter = open_out(out / "reports" / "occupied_vs_auroc.csv");
    scatter << "checkpoint,epoch,occupied,auroc\n";
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& path : checkpoint_paths) {
        StudentTeacher model = make_model(cfg);
        auto params = model.student.params();
        AdamW opt(params, cfg.adam);
        const CheckpointMeta meta = load_checkpoint(path, model, opt);

        const std::vector<Real> probs =
            teacher_probs_for(model, in_test, view, cfg.loss.tau_t_end);
        const OccupiedReport occ = occupied_classes(probs, cfg.model.num_classes);

        Real auc = std::numeric_limits<Real>::quiet_NaN();
        const FeatureBank bank = build_bank(cfg, model, train_ds);
        const FeatureBank in_feats = extract_features(model.teacher, in_test, view);
        const std::vector<Real> in_scores = score_features(in_feats, bank, cfg.eval.score_tau);
        if (ood_ds) {
            const FeatureBank ood_feats = extract_features(model.teacher, *ood_ds, view);
            auc = auroc(score_features(ood_feats, bank, cfg.eval.score_tau), in_scores);
        }
        scatter << fs::path(path).filename().string() << "," << meta.epoch << "," << occ.count
                << "," << format_real(auc) << "\n";

        nlohmann::json entry{{"checkpoint", path}, {"epoch", meta.epoch},
                             {"occupied", occ.count}};
        if (in_test.labeled()) {
            // the k-NN path needs labels aligned with bank rows; build an
            // unsubsampled bank so the training labels line up
            FeatureBank lbank = extract_features(model.teacher, train_ds, view);
            lbank.labels = train_ds.labels;
            entry["knn_accuracy"] =
                knn_accuracy(lbank, in_feats, in_test.labels, cfg.eval.knn_k);
        }
        summary.push_back(entry);

        if (path == checkpoint_paths.back()) {
            auto mask = open_out(out / "reports" / "occupied_mask.csv");
            mask << "class,mean_prob,occupied\n";
            for (int k = 0; k < cfg.model.num_classes; ++k)
                mask << k << "," << format_real(occ.mean_probs[static_cast<std::size_t>(k)])
                     << "," << (occ.mask[static_cast<std::size_t>(k)] ? 1 : 0) << "\n";
        }
    }
    write_text(out / "reports" / "diagnose.json", summary.dump(2) + "\n");
}

void cmd_hist(const ExperimentConfig& cfg) {
    const fs::path out(cfg.out_dir);
    fs::create_directories(out / "reports");

    auto emit = [&](const std::string& name, const ColorHistogram& h) {
        auto f = open_out(out / "reports" / ("colorhist_" + name + ".csv"));
        f << "bin,r,g,b\n";
        for (int b = 0; b < h.bins; ++b)
            f << b << "," << format_real(h.channel[0][static_cast<std::size_t>(b)]) << ","
              << format_real(h.channel[1][static_cast<std::size_t>(b)]) << ","
              << format_real(h.channel[2][static_cast<std::size_t>(b)]) << "\n";
    };

    ImageDataset in_ds = load_dataset_split(cfg.in_dist, cfg.seed, true);
    const ColorHistogram in_hist = color_histogram(in_ds);
    emit(cfg.in_dist.name, in_hist);

    std::vector<DatasetConfig> others;
    if (cfg.auxiliary) others.push_back(*cfg.auxiliary);
    others.insert(others.end(), cfg.ood_test.begin(), cfg.ood_test.end());

    auto dist = open_out(out / "reports" / "colorhist_distance.csv");
    dist << "dataset,l1_distance_to_in_dist\n";
    dist << cfg.in_dist.name << "," << format_real(histogram_distance(in_hist, in_hist)) << "\n";
    for (const auto& dcfg : others) {
        ImageDataset ds = load_dataset_split(dcfg, cfg.seed, true);
        const ColorHistogram h = color_histogram(ds);
        emit(dcfg.name, h);
        dist << dcfg.name << "," << format_real(histogram_distance(in_hist, h)) << "\n";
    }
}

}  // namespace ood
