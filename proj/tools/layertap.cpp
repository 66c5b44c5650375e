// layertap command-line tool: dataset generation, canned experiments,
// parameter sweeps and SVG plots of report snapshots.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "layertap/layertap.hpp"

namespace fs = std::filesystem;
using namespace layertap;

namespace {

struct CommonOpts {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config, "flat JSON config file");
    cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
    cmd->add_option("--out", o.out, "output directory (overrides the config)");
    cmd->add_option("--set", o.sets, "field=value override, repeatable");
}

ExperimentConfig resolve(const CommonOpts& o) {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig() : ExperimentConfig::load(o.config);
    for (const auto& s : o.sets) cfg.set_from_string(s);
    if (o.seed) cfg.set("seed", *o.seed);
    if (!o.out.empty()) cfg.set("out", o.out);
    return cfg;
}

// Splits "a,b,[1,2]" on commas outside brackets.
std::vector<std::string> split_values(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    int depth = 0;
    for (char c : s) {
        if (c == '[' || c == '{') ++depth;
        if (c == ']' || c == '}') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') ? c : '_';
    return out;
}

void print_error(const std::string& kind, const std::string& message) {
    std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
}

int cmd_sweep(ExperimentConfig base, const std::vector<std::string>& grid) {
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const auto& g : grid) {
        const auto eq = g.find('=');
        if (eq == std::string::npos) throw ConfigError("--grid expects field=v1,v2,..., got '" + g + "'");
        axes.emplace_back(g.substr(0, eq), split_values(g.substr(eq + 1)));
    }
    const fs::path root = base.out_dir();
    fs::create_directories(root);
    nlohmann::json runs = nlohmann::json::array();
    std::vector<std::size_t> idx(axes.size(), 0);
    for (bool more = true; more;) {
        ExperimentConfig cfg = base;
        std::string name;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const auto& [field, values] = axes[a];
            cfg.set(field, ExperimentConfig::parse_literal(values[idx[a]]));
            name += (name.empty() ? "" : "__") + field + "=" + slug(values[idx[a]]);
        }
        if (name.empty()) name = "base";
        cfg.set("out", (root / name).string());
        const auto res = cmd_run(cfg);
        runs.push_back({{"dir", name}, {"config_hash", res.config_hash}});
        std::cout << name << " " << res.config_hash << "\n";
        more = false;
        for (std::size_t a = axes.size(); a-- > 0;) {
            if (++idx[a] < axes[a].second.size()) {
                more = true;
                break;
            }
            idx[a] = 0;
        }
    }
    write_text_file(root / "sweep.json",
                    nlohmann::json{{"format", "layertap-sweep"}, {"version", 1}, {"runs", runs}}.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layertap: layer-wise generalization experiments for deep metric learning"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    CommonOpts gen_opts, run_opts, sweep_opts;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset as CSV");
    add_common(gen, gen_opts);

    std::string experiment;
    auto* run = app.add_subcommand("run", "run a canned experiment");
    run->add_option("experiment", experiment, "experiment id")->required();
    add_common(run, run_opts);

    std::vector<std::string> report_files;
    std::string plot_out;
    auto* plot = app.add_subcommand("plot", "render report snapshots as SVG");
    plot->add_option("reports", report_files, "report JSON files")->required();
    plot->add_option("--out", plot_out, "output directory (default: next to each report)");

    std::string sweep_experiment;
    std::vector<std::string> grid;
    auto* sweep = app.add_subcommand("sweep", "cartesian sweep over config fields");
    sweep->add_option("experiment", sweep_experiment, "experiment id")->required();
    sweep->add_option("--grid", grid, "field=v1,v2,... (repeatable)");
    add_common(sweep, sweep_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) print_error("usage", e.what());
        return app.exit(e);
    }

    try {
        if (*gen) {
            const ExperimentConfig cfg = resolve(gen_opts);
            fs::create_directories(cfg.out_dir());
            const fs::path path = fs::path(cfg.out_dir()) / "dataset.csv";
            const std::size_t rows = cmd_gen_data(cfg, path.string());
            std::cout << path.string() << " " << rows << " rows\n";
        } else if (*run) {
            ExperimentConfig cfg = resolve(run_opts);
            cfg.set("experiment", experiment);
            const auto res = cmd_run(cfg);
            for (const auto& r : res.runs) {
                std::cout << r.plan.name;
                if (!r.last_tap.empty())
                    std::cout << "  last " << r.last_tap << " train "
                              << format_double(r.final.get(r.last_tap, "train", "R@1")) << " test "
                              << format_double(r.final.get(r.last_tap, "test", "R@1"));
                if (!r.penultimate_tap.empty())
                    std::cout << "  penultimate " << r.penultimate_tap << " train "
                              << format_double(r.final.get(r.penultimate_tap, "train", "R@1")) << " test "
                              << format_double(r.final.get(r.penultimate_tap, "test", "R@1"));
                std::cout << "\n";
            }
            std::cout << "wrote " << res.files.size() + 1 << " files to " << cfg.out_dir() << "\n";
        } else if (*plot) {
            for (const auto& f : report_files) {
                const auto report = parse_report(read_text_file(f));
                fs::path dest = fs::path(f).replace_extension(".svg");
                if (!plot_out.empty()) {
                    fs::create_directories(plot_out);
                    dest = fs::path(plot_out) / dest.filename();
                }
                write_text_file(dest, render_svg(report));
                std::cout << dest.string() << "\n";
            }
        } else if (*sweep) {
            ExperimentConfig cfg = resolve(sweep_opts);
            cfg.set("experiment", sweep_experiment);
            return cmd_sweep(cfg, grid);
        }
    } catch (const Error& e) {
        print_error(e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
    return 0;
}
