#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "layertap/config.hpp"
#include "layertap/data.hpp"
#include "layertap/dataset_io.hpp"
#include "layertap/eval.hpp"
#include "layertap/nn.hpp"
#include "layertap/report.hpp"
#include "layertap/trainer.hpp"

namespace layertap {

// One training run inside an experiment.
struct RunPlan {
    std::string name;
    Variant variant = Variant::A;
    LossKind loss = LossKind::triplet;
    std::size_t head_width = 0;  // 0 keeps the configured width
    bool scaled_data = false;    // use the enlarged dataset (fig8-scale)
    bool revisited = false;      // also emit E/M/H retrieval metrics
};

inline const std::vector<std::string>& experiment_ids() {
    static const std::vector<std::string> ids{"fig2-sweep", "fig3-losscmp", "fig4-pretrain",
                                              "fig5-losspos", "fig7-dims",   "fig8-scale"};
    return ids;
}

inline std::vector<Variant> configured_variants(const ExperimentConfig& cfg, std::vector<Variant> fallback) {
    const auto names = cfg.get<std::vector<std::string>>("variants");
    if (names.empty()) return fallback;
    std::vector<Variant> out;
    for (const auto& n : names) out.push_back(variant_from_string(n));
    return out;
}

inline std::vector<RunPlan> plan_experiment(const ExperimentConfig& cfg) {
    const std::string id = cfg.experiment();
    const LossKind loss = cfg.loss();
    auto net_name = [](Variant v) { return std::string("Net") + to_char(v); };
    std::vector<RunPlan> plans;
    if (id == "fig2-sweep") {
        for (Variant v : configured_variants(cfg, {Variant::A}))
            plans.push_back({net_name(v), v, loss, 0, false, true});
    } else if (id == "fig3-losscmp") {
        plans.push_back({"dml", Variant::A, loss, 0, false, false});
        plans.push_back({"classification", Variant::A, LossKind::classification, 0, false, false});
    } else if (id == "fig4-pretrain") {
        for (Variant v : configured_variants(cfg, {Variant::A, Variant::B, Variant::C}))
            plans.push_back({net_name(v), v, loss, 0, false, false});
    } else if (id == "fig5-losspos") {
        for (Variant v : configured_variants(cfg, {Variant::A, Variant::D, Variant::E, Variant::F}))
            plans.push_back({net_name(v), v, loss, 0, false, false});
    } else if (id == "fig7-dims") {
        const std::size_t w = cfg.get<std::size_t>("head_width");
        for (std::size_t d : {w, w / 2, w / 4})
            if (d > 0) plans.push_back({"dim" + std::to_string(d), Variant::A, loss, d, false, false});
    } else if (id == "fig8-scale") {
        for (Variant v : configured_variants(cfg, {Variant::A, Variant::E}))
            plans.push_back({net_name(v), v, loss, 0, true, false});
    } else {
        throw ConfigError("unknown experiment id '" + id + "'");
    }
    return plans;
}

// Seeds for each stochastic stage, derived from the master seed.
struct Seeds {
    std::uint64_t data = 0;
    std::uint64_t pretrain = 0;
    std::uint64_t init = 0;
    std::uint64_t train = 0;
    std::uint64_t eval = 0;

    static Seeds derive(std::uint64_t master) {
        Rng r(master);
        Seeds s;
        s.data = master;
        s.pretrain = r.next_u64();
        s.init = r.next_u64();
        s.train = r.next_u64();
        s.eval = r.next_u64();
        return s;
    }

    nlohmann::json to_json() const {
        return {{"data", data}, {"pretrain", pretrain}, {"init", init}, {"train", train}, {"eval", eval}};
    }
};

struct RunOutcome {
    RunPlan plan;
    NetSpec net;
    std::vector<std::string> taps;
    std::string last_tap;
    std::string penultimate_tap;
    MetricReport final;
    std::vector<Snapshot> snapshots;
    TrainHistory history;
};

struct ExperimentOutcome {
    std::string experiment;
    std::string config_hash;
    Seeds seeds;
    std::vector<RunOutcome> runs;
    std::vector<std::string> files;  // relative to the output directory
    double wall_clock_seconds = 0.0;

    const RunOutcome& run(const std::string& name) const {
        for (const auto& r : runs)
            if (r.plan.name == name) return r;
        throw ConfigError("experiment has no run '" + name + "'");
    }
};

inline Dataset scaled_dataset(const ExperimentConfig& cfg, const Seeds& seeds) {
    GenConfig g = cfg.gen_config();
    const std::size_t f = cfg.get<std::size_t>("scale_factor");
    g.train_classes *= f;
    g.test_classes *= f;
    g.seed = seeds.data;
    return gen_synthetic(g);
}

inline Dataset experiment_dataset(const ExperimentConfig& cfg, const Seeds& seeds) {
    if (!cfg.dataset_path().empty()) return load_dataset_csv(cfg.dataset_path());
    GenConfig g = cfg.gen_config();
    g.seed = seeds.data;
    return gen_synthetic(g);
}

inline std::vector<std::string> run_taps(const ExperimentConfig& cfg, const NetSpec& net) {
    auto taps = cfg.get<std::vector<std::string>>("taps");
    if (taps.empty()) return net.taps;
    std::vector<std::string> kept;
    for (const auto& t : taps)
        if (t == kInputTap || std::find(net.taps.begin(), net.taps.end(), t) != net.taps.end()) kept.push_back(t);
    if (kept.empty()) throw ConfigError("none of the configured taps exist in this net");
    return kept;
}

inline RunOutcome execute_run(const ExperimentConfig& cfg, const RunPlan& plan, const Dataset& ds,
                              const ParamStore* pretrained, const Seeds& seeds) {
    VariantBase base = cfg.variant_base();
    if (plan.head_width > 0) base.head_width = plan.head_width;
    if (plan.loss == LossKind::classification) base.class_head = ds.class_count(Split::train);

    RunOutcome out;
    out.plan = plan;
    out.net = build_variant(plan.variant, base);
    out.taps = run_taps(cfg, out.net);
    std::vector<std::string> layer_taps;
    for (const auto& t : out.net.taps)
        if (std::find(out.taps.begin(), out.taps.end(), t) != out.taps.end()) layer_taps.push_back(t);
    if (!layer_taps.empty()) out.last_tap = layer_taps.back();
    if (layer_taps.size() >= 2) out.penultimate_tap = layer_taps[layer_taps.size() - 2];

    Rng init_rng(seeds.init);
    ParamStore params = init_params(out.net, init_rng, pretrained);

    Hyper h = cfg.hyper(false);
    h.seed = seeds.train;
    const std::size_t target_dim = cfg.get<std::size_t>("target_dim");
    const auto ks = cfg.get<std::vector<std::size_t>>("ks");

    TrainOptions opt;
    opt.loss = plan.loss;
    opt.jitter_std = cfg.get<double>("jitter_std");
    opt.margin = cfg.get<double>("margin");
    opt.distance = cfg.distance();
    opt.snapshot_at = evenly_spaced(h.iterations, cfg.get<std::size_t>("snapshots"));
    opt.hook = [&](std::size_t iteration, const ParamStore& p) {
        const std::vector<std::size_t> r1{1};
        const MetricReport m = layer_sweep(out.net, p, ds, out.taps, target_dim, r1);
        Snapshot s{iteration, {}};
        std::map<std::string, double> cols;
        for (const auto& tap : out.taps)
            for (Split sp : {Split::train, Split::test}) {
                const double v = m.get(tap, to_string(sp), "R@1");
                s.recall_at_1[tap][to_string(sp)] = v;
                cols[tap + "/" + to_string(sp) + "/R@1"] = v;
            }
        out.snapshots.push_back(std::move(s));
        return cols;
    };

    TrainResult tr = train(out.net, std::move(params), ds, h, opt);
    out.history = std::move(tr.history);
    out.final = layer_sweep(out.net, tr.params, ds, out.taps, target_dim, ks);
    if (plan.revisited) {
        Rng eval_rng(seeds.eval);
        const auto protocol = make_revisited_protocol(ds, Split::test, cfg.get<std::size_t>("junk_per_class"),
                                                      cfg.get<double>("junk_noise"), eval_rng);
        out.final.merge(revisited_eval(out.net, tr.params, protocol, out.taps, target_dim));
    }
    return out;
}

inline bool needs_pretraining(const RunPlan& plan) { return plan.variant != Variant::C; }

// Executes an experiment in memory; nothing is written.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    ExperimentOutcome res;
    res.experiment = cfg.experiment();
    res.config_hash = cfg.hash();
    res.seeds = Seeds::derive(cfg.seed());
    const auto plans = plan_experiment(cfg);

    std::optional<Dataset> base_ds, big_ds;
    std::optional<ParamStore> base_pre, big_pre;
    Hyper pre_h = cfg.hyper(true);
    pre_h.seed = res.seeds.pretrain;
    const VariantBase vb = cfg.variant_base();
    const double jitter = cfg.get<double>("jitter_std");

    for (const auto& plan : plans) {
        auto& ds = plan.scaled_data ? big_ds : base_ds;
        auto& pre = plan.scaled_data ? big_pre : base_pre;
        if (!ds) ds = plan.scaled_data ? scaled_dataset(cfg, res.seeds) : experiment_dataset(cfg, res.seeds);
        if (needs_pretraining(plan) && !pre) pre = pretrain_classification(vb, *ds, pre_h, jitter);
        res.runs.push_back(execute_run(cfg, plan, *ds, pre ? &*pre : nullptr, res.seeds));
    }
    res.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

// run_experiment plus artifact emission under cfg.out_dir():
//   <run>.report.json, <run>.report.csv, <run>.history.csv, manifest.json.
// Everything except manifest.json (which records wall-clock time) is
// byte-identical across reruns of the same config.
inline ExperimentOutcome cmd_run(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    const fs::path dir = cfg.out_dir();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");

    ExperimentOutcome res = run_experiment(cfg);
    for (const auto& run : res.runs) {
        ReportMeta meta{res.experiment, run.plan.name, std::string(1, to_char(run.plan.variant)),
                        to_string(run.plan.loss), res.config_hash, res.seeds.to_json(),
                        run.taps, run.last_tap, run.penultimate_tap};
        const std::string stem = run.plan.name;
        write_text_file(dir / (stem + ".report.json"), report_to_json(meta, run.final, run.snapshots).dump(2) + "\n");
        write_text_file(dir / (stem + ".report.csv"), report_to_csv(meta, run.final));
        write_text_file(dir / (stem + ".history.csv"), history_to_csv(run.history));
        for (const char* suffix : {".report.json", ".report.csv", ".history.csv"}) res.files.push_back(stem + suffix);
    }
    nlohmann::json manifest = {
        {"format", "layertap-manifest"},
        {"version", 1},
        {"tool_version", kToolVersion},
        {"experiment", res.experiment},
        {"config_hash", res.config_hash},
        {"config", nlohmann::json::parse(cfg.canonical())},
        {"seeds", res.seeds.to_json()},
        {"artifacts", res.files},
        {"wall_clock_seconds", res.wall_clock_seconds},
    };
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return res;
}

inline std::size_t cmd_gen_data(const ExperimentConfig& cfg, const std::string& path) {
    GenConfig g = cfg.gen_config();
    g.seed = Seeds::derive(cfg.seed()).data;
    const Dataset ds = gen_synthetic(g);
    save_dataset_csv(path, ds);
    return ds.size();
}

}  // namespace layertap
