#include "ood/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "json.hpp"

namespace ood {

namespace {

using nlohmann::json;

// Tracks consumed keys so typos and unknown fields are rejected.
class Section {
  public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
    }

    bool has(const std::string& key) {
        consumed_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        consumed_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError("invalid value for " + path_ + "." + key);
        }
    }

    const json& raw(const std::string& key) {
        consumed_.insert(key);
        return j_.at(key);
    }

    void finish() {
        for (const auto& [key, value] : j_.items())
            if (!consumed_.count(key))
                throw ConfigError("unknown field " + path_ + "." + key);
    }

  private:
    const json& j_;
    std::string path_;
    std::set<std::string> consumed_;
};

DatasetConfig parse_dataset(const json& j, const std::string& path) {
    DatasetConfig d;
    Section s(j, path);
    s.get("name", d.name);
    s.get("kind", d.kind);
    s.get("synth", d.synth);
    s.get("path", d.path);
    s.get("test_path", d.test_path);
    s.get("n_train", d.n_train);
    s.get("n_test", d.n_test);
    s.get("size", d.size);
    s.finish();
    if (d.kind != "synthetic" && d.kind != "cifar10" && d.kind != "cifar100" &&
        d.kind != "folder")
        throw ConfigError(path + ".kind must be synthetic|cifar10|cifar100|folder");
    if (d.kind == "synthetic") synth_kind_from_string(d.synth);
    if (d.name.empty()) d.name = d.kind == "synthetic" ? d.synth : d.kind;
    return d;
}

void parse_family(const json& j, const std::string& path, ViewFamilyConfig& f) {
    Section s(j, path);
    if (s.has("scale")) {
        const auto& sc = s.raw("scale");
        if (!sc.is_array() || sc.size() != 2)
            throw ConfigError(path + ".scale must be [lo, hi]");
        f.scale_lo = sc[0].get<Real>();
        f.scale_hi = sc[1].get<Real>();
    }
    s.get("output_size", f.output_size);
    s.get("flip_prob", f.flip_prob);
    s.get("jitter_prob", f.jitter_prob);
    s.get("brightness", f.brightness);
    s.get("contrast", f.contrast);
    s.get("saturation", f.saturation);
    s.get("hue", f.hue);
    s.get("grayscale_prob", f.grayscale_prob);
    s.get("blur_prob", f.blur_prob);
    s.get("solarize_prob", f.solarize_prob);
    if (s.has("normalize_mean")) {
        const auto& m = s.raw("normalize_mean");
        for (int c = 0; c < 3; ++c) f.normalize_mean[static_cast<std::size_t>(c)] = m.at(c).get<Real>();
    }
    if (s.has("normalize_std")) {
        const auto& m = s.raw("normalize_std");
        for (int c = 0; c < 3; ++c) f.normalize_std[static_cast<std::size_t>(c)] = m.at(c).get<Real>();
    }
    s.finish();
}

json family_to_json(const ViewFamilyConfig& f) {
    return json{{"scale", {f.scale_lo, f.scale_hi}},
                {"output_size", f.output_size},
                {"flip_prob", f.flip_prob},
                {"jitter_prob", f.jitter_prob},
                {"brightness", f.brightness},
                {"contrast", f.contrast},
                {"saturation", f.saturation},
                {"hue", f.hue},
                {"grayscale_prob", f.grayscale_prob},
                {"blur_prob", f.blur_prob},
                {"solarize_prob", f.solarize_prob},
                {"normalize_mean", f.normalize_mean},
                {"normalize_std", f.normalize_std}};
}

json dataset_to_json(const DatasetConfig& d) {
    return json{{"name", d.name},     {"kind", d.kind},       {"synth", d.synth},
                {"path", d.path},     {"test_path", d.test_path},
                {"n_train", d.n_train}, {"n_test", d.n_test}, {"size", d.size}};
}

}  // namespace

void ExperimentConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
    if (eval.score_tau <= 0) throw ConfigError("eval.score_tau must be positive");
    if (eval.knn_k < 1) throw ConfigError("eval.knn_k must be positive");
    if (negative_source != "none" && negative_source != "in_dist" &&
        negative_source != "auxiliary" && negative_source != "combined")
        throw ConfigError("negatives.source must be none|in_dist|auxiliary|combined");
    model.validate();
    augment.validate();
    loss.validate();
    if (negatives_enabled()) make_shift().validate();
    if (negatives_enabled() && negative_source != "in_dist" && !auxiliary)
        throw ConfigError("negative source '" + negative_source +
                          "' requires a data.auxiliary block");
}

NegativeSource ExperimentConfig::make_negative_source() const {
    NegativeSource src;
    if (negative_source == "in_dist")
        src.kind = NegativeSourceKind::InDist;
    else if (negative_source == "combined")
        src.kind = NegativeSourceKind::Combined;
    else
        src.kind = NegativeSourceKind::Auxiliary;
    src.lambda_in = loss.lambda_in;
    src.lambda_aux = loss.lambda_aux;
    return src;
}

ShiftTransform ExperimentConfig::make_shift() const {
    ShiftTransform s;
    if (negative_shift == "identity") s.kind = ShiftKind::Identity;
    else if (negative_shift == "rot90") s.kind = ShiftKind::Rot90Set;
    else if (negative_shift == "rot360") s.kind = ShiftKind::Rot360;
    else if (negative_shift == "perm_patch") s.kind = ShiftKind::PermPatch;
    else if (negative_shift == "pix_perm") s.kind = ShiftKind::PixPerm;
    else if (negative_shift == "sharpen") s.kind = ShiftKind::Sharpen;
    else if (negative_shift == "translate") s.kind = ShiftKind::Translate;
    else if (negative_shift == "gauss_blur") s.kind = ShiftKind::GaussBlurShift;
    else throw ConfigError("unknown negatives.shift: " + negative_shift);
    s.grid_n = negative_grid_n;
    s.max_frac = negative_max_frac;
    return s;
}

TrainSettings ExperimentConfig::make_train_settings() const {
    TrainSettings ts;
    ts.seed = seed;
    ts.batch_size = batch_size;
    ts.epochs = epochs;
    ts.loss = loss;
    ts.sched = sched;
    ts.sched.batch_size = batch_size;
    ts.sched.epochs = epochs;
    ts.sched.tau_t_start = loss.tau_t_start;
    ts.sched.tau_t_end = loss.tau_t_end;
    ts.adam = adam;
    ts.augment = augment;
    ts.neg_source = make_negative_source();
    ts.shift = negatives_enabled() ? make_shift() : ShiftTransform{ShiftKind::Identity, 2, 0.25};
    ts.negatives_enabled = negatives_enabled();
    return ts;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    Section root(j, "config");
    root.get("seed", cfg.seed);
    root.get("out_dir", cfg.out_dir);
    root.get("batch_size", cfg.batch_size);
    root.get("epochs", cfg.epochs);
    root.get("checkpoint_every", cfg.checkpoint_every);

    if (root.has("data")) {
        Section data(root.raw("data"), "data");
        if (data.has("in_dist")) cfg.in_dist = parse_dataset(data.raw("in_dist"), "data.in_dist");
        if (data.has("auxiliary"))
            cfg.auxiliary = parse_dataset(data.raw("auxiliary"), "data.auxiliary");
        if (data.has("ood_test")) {
            const auto& arr = data.raw("ood_test");
            if (!arr.is_array()) throw ConfigError("data.ood_test must be an array");
            for (std::size_t i = 0; i < arr.size(); ++i)
                cfg.ood_test.push_back(
                    parse_dataset(arr[i], "data.ood_test[" + std::to_string(i) + "]"));
        }
        data.finish();
    }

    if (root.has("model")) {
        Section m(root.raw("model"), "model");
        std::string enc = cfg.model.encoder == EncoderKind::TinyViT ? "tiny_vit" : "mlp";
        m.get("encoder", enc);
        if (enc == "tiny_vit") cfg.model.encoder = EncoderKind::TinyViT;
        else if (enc == "mlp") cfg.model.encoder = EncoderKind::Mlp;
        else throw ConfigError("model.encoder must be tiny_vit|mlp");
        m.get("dim", cfg.model.dim);
        m.get("depth", cfg.model.depth);
        m.get("heads", cfg.model.heads);
        m.get("patch", cfg.model.patch);
        m.get("mean_pool_feature", cfg.model.mean_pool_feature);
        m.get("mlp_hidden", cfg.model.mlp_hidden);
        m.get("mlp_pool_grid", cfg.model.mlp_pool_grid);
        m.get("feature_dim", cfg.model.feature_dim);
        m.get("num_classes", cfg.model.num_classes);
        m.get("head_hidden", cfg.model.head_hidden);
        m.get("centering", cfg.model.centering);
        m.get("center_momentum", cfg.model.center_momentum);
        m.get("teacher_momentum", cfg.model.teacher_momentum);
        m.finish();
    }

    if (root.has("augment")) {
        Section a(root.raw("augment"), "augment");
        if (a.has("local")) parse_family(a.raw("local"), "augment.local", cfg.augment.local);
        if (a.has("global1"))
            parse_family(a.raw("global1"), "augment.global1", cfg.augment.global1);
        if (a.has("global2"))
            parse_family(a.raw("global2"), "augment.global2", cfg.augment.global2);
        a.get("n_local", cfg.augment.n_local);
        a.finish();
    }

    if (root.has("negatives")) {
        Section n(root.raw("negatives"), "negatives");
        n.get("source", cfg.negative_source);
        n.get("shift", cfg.negative_shift);
        n.get("grid_n", cfg.negative_grid_n);
        n.get("max_frac", cfg.negative_max_frac);
        n.finish();
    }

    if (root.has("loss")) {
        Section l(root.raw("loss"), "loss");
        l.get("lambda", cfg.loss.lambda);
        l.get("lambda_in", cfg.loss.lambda_in);
        l.get("lambda_aux", cfg.loss.lambda_aux);
        l.get("tau_s", cfg.loss.tau_s);
        l.get("tau_t_start", cfg.loss.tau_t_start);
        l.get("tau_t_end", cfg.loss.tau_t_end);
        l.get("clamp_eps", cfg.loss.clamp_eps);
        l.finish();
    }

    if (root.has("optimizer")) {
        Section o(root.raw("optimizer"), "optimizer");
        o.get("base_lr", cfg.sched.base_lr);
        o.get("warmup_epochs", cfg.sched.warmup_epochs);
        o.get("min_lr", cfg.sched.min_lr);
        o.get("weight_decay_start", cfg.sched.wd_start);
        o.get("weight_decay_end", cfg.sched.wd_end);
        o.get("beta1", cfg.adam.beta1);
        o.get("beta2", cfg.adam.beta2);
        o.get("eps", cfg.adam.eps);
        o.get("clip_norm", cfg.adam.clip_norm);
        o.finish();
    }

    if (root.has("eval")) {
        Section e(root.raw("eval"), "eval");
        e.get("score_tau", cfg.eval.score_tau);
        e.get("knn_k", cfg.eval.knn_k);
        e.get("bank_subsample", cfg.eval.bank_subsample);
        e.finish();
    }
    root.finish();

    // sync derived fields: encoder must accept both view sizes; student and
    // teacher temperatures live in the loss block
    cfg.model.view_sizes = {cfg.augment.global1.output_size, cfg.augment.local.output_size};
    if (cfg.augment.global2.output_size != cfg.augment.global1.output_size)
        cfg.model.view_sizes.push_back(cfg.augment.global2.output_size);
    std::sort(cfg.model.view_sizes.begin(), cfg.model.view_sizes.end());
    cfg.model.view_sizes.erase(
        std::unique(cfg.model.view_sizes.begin(), cfg.model.view_sizes.end()),
        cfg.model.view_sizes.end());
    cfg.model.tau_s = cfg.loss.tau_s;
    cfg.model.tau_t = cfg.loss.tau_t_end;

    if (const char* root_dir = std::getenv("OOD_OUT_ROOT");
        root_dir && !cfg.out_dir.empty() && cfg.out_dir[0] != '/')
        cfg.out_dir = std::string(root_dir) + "/" + cfg.out_dir;

    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string ExperimentConfig::to_json_text() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["batch_size"] = batch_size;
    j["epochs"] = epochs;
    j["checkpoint_every"] = checkpoint_every;
    j["data"]["in_dist"] = dataset_to_json(in_dist);
    if (auxiliary) j["data"]["auxiliary"] = dataset_to_json(*auxiliary);
    j["data"]["ood_test"] = json::array();
    for (const auto& d : ood_test) j["data"]["ood_test"].push_back(dataset_to_json(d));
    j["model"] = {{"encoder", model.encoder == EncoderKind::TinyViT ? "tiny_vit" : "mlp"},
                  {"dim", model.dim},
                  {"depth", model.depth},
                  {"heads", model.heads},
                  {"patch", model.patch},
                  {"mean_pool_feature", model.mean_pool_feature},
                  {"mlp_hidden", model.mlp_hidden},
                  {"mlp_pool_grid", model.mlp_pool_grid},
                  {"feature_dim", model.feature_dim},
                  {"num_classes", model.num_classes},
                  {"head_hidden", model.head_hidden},
                  {"centering", model.centering},
                  {"center_momentum", model.center_momentum},
                  {"teacher_momentum", model.teacher_momentum}};
    j["augment"] = {{"local", family_to_json(augment.local)},
                    {"global1", family_to_json(augment.global1)},
                    {"global2", family_to_json(augment.global2)},
                    {"n_local", augment.n_local}};
    j["negatives"] = {{"source", negative_source},
                      {"shift", negative_shift},
                      {"grid_n", negative_grid_n},
                      {"max_frac", negative_max_frac}};
    j["loss"] = {{"lambda", loss.lambda},       {"lambda_in", loss.lambda_in},
                 {"lambda_aux", loss.lambda_aux}, {"tau_s", loss.tau_s},
                 {"tau_t_start", loss.tau_t_start}, {"tau_t_end", loss.tau_t_end},
                 {"clamp_eps", loss.clamp_eps}};
    j["optimizer"] = {{"base_lr", sched.base_lr},
                      {"warmup_epochs", sched.warmup_epochs},
                      {"min_lr", sched.min_lr},
                      {"weight_decay_start", sched.wd_start},
                      {"weight_decay_end", sched.wd_end},
                      {"beta1", adam.beta1},
                      {"beta2", adam.beta2},
                      {"eps", adam.eps},
                      {"clip_norm", adam.clip_norm}};
    j["eval"] = {{"score_tau", eval.score_tau},
                 {"knn_k", eval.knn_k},
                 {"bank_subsample", eval.bank_subsample}};
    return j.dump(2) + "\n";
}

ImageDataset load_dataset_split(const DatasetConfig& cfg, std::uint64_t master_seed,
                                bool train_split) {
    const int n = train_split ? cfg.n_train : cfg.n_test;
    if (cfg.kind == "synthetic") {
        const std::uint64_t tag = std::hash<std::string>{}(cfg.name + "/" + cfg.synth);
        const std::uint64_t split_seed =
            derive_seed(master_seed, 0xDA7A, tag, train_split ? 0u : 1u);
        ImageDataset ds = synth_dataset(synth_kind_from_string(cfg.synth), n, cfg.size,
                                        split_seed);
        ds.source = cfg.name;
        return ds;
    }
    if (cfg.kind == "cifar10" || cfg.kind == "cifar100") {
        const std::string& path = train_split ? cfg.path : (cfg.test_path.empty() ? cfg.path
                                                                                  : cfg.test_path);
        if (path.empty()) throw ConfigError("dataset " + cfg.name + " has no path");
        ImageDataset ds = load_cifar_bin(
            path, cfg.kind == "cifar10" ? CifarVariant::C10 : CifarVariant::C100);
        if (n > 0 && ds.size() > static_cast<std::size_t>(n)) {
            ds.images.resize(static_cast<std::size_t>(n));
            ds.labels.resize(static_cast<std::size_t>(n));
        }
        ds.source = cfg.name;
        return ds;
    }
    // folder
    if (cfg.path.empty()) throw ConfigError("dataset " + cfg.name + " has no path");
    ImageDataset ds = load_image_folder(cfg.path, cfg.size);
    if (n > 0 && ds.size() > static_cast<std::size_t>(n))
        ds.images.resize(static_cast<std::size_t>(n));
    ds.source = cfg.name;
    return ds;
}

}  // namespace ood
