#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ood/driver.hpp"

using namespace ood;
namespace fs = std::filesystem;

namespace {

std::string tiny_experiment_json(const std::string& out_dir, int epochs = 2,
                                 Real lambda = 1.0) {
    std::ostringstream os;
    os << R"({
  "seed": 5,
  "out_dir": ")" << out_dir << R"(",
  "epochs": )" << epochs << R"(,
  "batch_size": 4,
  "data": {
    "in_dist": {"name": "stripes", "synth": "stripes", "n_train": 8, "n_test": 8},
    "auxiliary": {"name": "blobs", "synth": "blobs", "n_train": 8},
    "ood_test": [{"name": "checker", "synth": "checker", "n_test": 8}]
  },
  "model": {"dim": 16, "depth": 1, "heads": 2, "feature_dim": 16, "num_classes": 16, "head_hidden": 12},
  "augment": {"n_local": 2},
  "eval": {"knn_k": 3},
  "loss": {"lambda": )" << lambda << R"(}
})";
    return os.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("ood_cli_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("config defaults follow the documented settings") {
    ExperimentConfig cfg = ExperimentConfig::from_json_text("{}");
    CHECK(cfg.loss.lambda == 1.0);
    CHECK(cfg.loss.tau_s == 0.1);
    CHECK(cfg.loss.tau_t_end == 0.01);
    CHECK(cfg.loss.tau_t_start == 0.055);
    CHECK(cfg.eval.score_tau == 0.04);
    CHECK(cfg.eval.knn_k == 10);
    CHECK(cfg.sched.base_lr == 0.004);
    CHECK(cfg.model.teacher_momentum == 0.996);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.augment.n_local == 8);
    CHECK(cfg.negative_shift == "rot90");
}

TEST_CASE("unknown fields are rejected with the field path") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"sede": 1})"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"loss": {"lamda": 1}})"),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_json_text(R"({"data": {"in_dist": {"knd": "synthetic"}}})"),
        ConfigError);
    try {
        ExperimentConfig::from_json_text(R"({"loss": {"lamda": 1}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("loss.lamda") != std::string::npos);
    }
}

TEST_CASE("invalid configurations fail validation") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"batch_size": 0})"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"loss": {"lambda": -2}})"),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_json_text(R"({"negatives": {"shift": "rot45"}})"),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(R"({"negatives": {"source": "elsewhere"}})"),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("not json"), ConfigError);
    // auxiliary source without an auxiliary dataset
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(
                        R"({"negatives": {"source": "auxiliary"}})")
                        .validate(),
                    ConfigError);
}

TEST_CASE("config echo round-trips through the parser") {
    const fs::path dir = fresh_dir("echo");
    ExperimentConfig cfg = ExperimentConfig::from_json_text(
        tiny_experiment_json((dir / "run").string()));
    ExperimentConfig back = ExperimentConfig::from_json_text(cfg.to_json_text());
    CHECK(back.seed == cfg.seed);
    CHECK(back.loss.lambda == cfg.loss.lambda);
    CHECK(back.model.dim == cfg.model.dim);
    CHECK(back.in_dist.name == cfg.in_dist.name);
    CHECK(back.to_json_text() == cfg.to_json_text());
}

TEST_CASE("cmd_train writes the documented layout and is bitwise deterministic") {
    const fs::path dir = fresh_dir("train");
    ExperimentConfig cfg =
        ExperimentConfig::from_json_text(tiny_experiment_json((dir / "a").string()));
    cmd_train(cfg);
    CHECK(fs::exists(dir / "a" / "config.echo"));
    CHECK(fs::exists(dir / "a" / "metrics.csv"));
    CHECK(fs::exists(dir / "a" / "checkpoints" / "final.ckpt"));
    CHECK(fs::exists(dir / "a" / "summary.json"));

    ExperimentConfig cfg2 =
        ExperimentConfig::from_json_text(tiny_experiment_json((dir / "b").string()));
    cmd_train(cfg2);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
}

TEST_CASE("lambda=0 training emits a zero loss_neg column") {
    const fs::path dir = fresh_dir("lambda0");
    ExperimentConfig cfg = ExperimentConfig::from_json_text(
        tiny_experiment_json((dir / "run").string(), 2, 0.0));
    cfg.negative_source = "none";
    cmd_train(cfg);
    std::ifstream in(dir / "run" / "metrics.csv");
    std::string line;
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string field;
        for (int i = 0; i < 4; ++i) std::getline(ss, field, ',');
        CHECK(field == "0");  // loss_neg column
        rows++;
    }
    CHECK(rows == 4);  // 2 epochs x 2 steps
}

TEST_CASE("cmd_eval emits one auroc row per ood set and consistent scores") {
    const fs::path dir = fresh_dir("eval");
    ExperimentConfig cfg =
        ExperimentConfig::from_json_text(tiny_experiment_json((dir / "run").string()));
    cmd_train(cfg);
    cmd_eval(cfg);

    std::ifstream table(dir / "run" / "reports" / "auroc.csv");
    std::string line;
    std::getline(table, line);
    CHECK(line == "dataset,n_in,n_out,auroc");
    int rows = 0;
    Real reported = -1;
    while (std::getline(table, line)) {
        rows++;
        reported = std::stod(line.substr(line.rfind(',') + 1));
    }
    CHECK(rows == 1);  // one configured ood set
    CHECK(reported >= 0.0);
    CHECK(reported <= 1.0);

    // recompute the AUROC from the emitted per-sample score CSVs
    auto read_scores = [&](const std::string& name) {
        std::ifstream f(dir / "run" / "reports" / ("scores_" + name + ".csv"));
        std::string l;
        std::getline(f, l);
        std::vector<Real> out;
        while (std::getline(f, l)) out.push_back(std::stod(l.substr(l.find(',') + 1)));
        return out;
    };
    const std::vector<Real> in_scores = read_scores("in_test");
    const std::vector<Real> ood_scores = read_scores("checker");
    CHECK(in_scores.size() == 8);
    CHECK(ood_scores.size() == 8);
    CHECK(auroc(ood_scores, in_scores) == doctest::Approx(reported).epsilon(1e-9));
}

TEST_CASE("cmd_diagnose is deterministic and bounded by K") {
    const fs::path dir = fresh_dir("diag");
    ExperimentConfig cfg =
        ExperimentConfig::from_json_text(tiny_experiment_json((dir / "run").string()));
    cmd_train(cfg);
    cmd_diagnose(cfg);
    const std::string first = slurp(dir / "run" / "reports" / "occupied_vs_auroc.csv");
    const std::string mask = slurp(dir / "run" / "reports" / "occupied_mask.csv");
    cmd_diagnose(cfg);
    CHECK(slurp(dir / "run" / "reports" / "occupied_vs_auroc.csv") == first);
    CHECK(slurp(dir / "run" / "reports" / "occupied_mask.csv") == mask);

    std::stringstream ss(first);
    std::string line;
    std::getline(ss, line);  // header
    std::getline(ss, line);
    std::stringstream row(ss.str().substr(ss.str().find('\n') + 1));
    std::string f0, f1, f2;
    std::getline(row, f0, ',');
    std::getline(row, f1, ',');
    std::getline(row, f2, ',');
    const int occupied = std::stoi(f2);
    CHECK(occupied >= 0);
    CHECK(occupied <= cfg.model.num_classes);
}

TEST_CASE("cmd_hist emits normalized histograms") {
    const fs::path dir = fresh_dir("hist");
    ExperimentConfig cfg =
        ExperimentConfig::from_json_text(tiny_experiment_json((dir / "run").string()));
    cmd_hist(cfg);
    std::ifstream f(dir / "run" / "reports" / "colorhist_stripes.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "bin,r,g,b");
    Real sums[3] = {0, 0, 0};
    int rows = 0;
    while (std::getline(f, line)) {
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        for (int c = 0; c < 3; ++c) {
            std::getline(ss, field, ',');
            sums[c] += std::stod(field);
        }
        rows++;
    }
    CHECK(rows == 32);
    for (int c = 0; c < 3; ++c) CHECK(sums[c] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fs::exists(dir / "run" / "reports" / "colorhist_distance.csv"));
}

TEST_CASE("OOD_OUT_ROOT prefixes relative output directories") {
    setenv("OOD_OUT_ROOT", "/tmp/ood_root_test", 1);
    ExperimentConfig cfg = ExperimentConfig::from_json_text(R"({"out_dir": "rel/run"})");
    CHECK(cfg.out_dir == "/tmp/ood_root_test/rel/run");
    ExperimentConfig abs_cfg =
        ExperimentConfig::from_json_text(R"({"out_dir": "/abs/run"})");
    CHECK(abs_cfg.out_dir == "/abs/run");
    unsetenv("OOD_OUT_ROOT");
}
