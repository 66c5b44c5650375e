#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layertap/eval.hpp"
#include "layertap/format.hpp"
#include "layertap/trainer.hpp"

namespace layertap {

inline constexpr const char* kReportFormat = "layertap-report";
inline constexpr int kReportVersion = 1;

// Per-layer, per-split R@1 at one point during training.
struct Snapshot {
    std::size_t iteration = 0;
    std::map<std::string, std::map<std::string, double>> recall_at_1;
};

struct ReportMeta {
    std::string experiment;
    std::string run;
    std::string variant;
    std::string loss;
    std::string config_hash;
    nlohmann::json seeds;
    std::vector<std::string> taps;
    std::string last_tap;
    std::string penultimate_tap;
};

inline nlohmann::json report_to_json(const ReportMeta& meta, const MetricReport& report,
                                     const std::vector<Snapshot>& snapshots) {
    nlohmann::json metrics = nlohmann::json::object();
    for (const auto& [layer, splits] : report.scores)
        for (const auto& [split, ms] : splits)
            for (const auto& [m, v] : ms) metrics[layer][split][m] = v;
    nlohmann::json snaps = nlohmann::json::array();
    for (const auto& s : snapshots) {
        nlohmann::json r = nlohmann::json::object();
        for (const auto& [layer, splits] : s.recall_at_1)
            for (const auto& [split, v] : splits) r[layer][split] = v;
        snaps.push_back({{"iteration", s.iteration}, {"R@1", r}});
    }
    return {
        {"format", kReportFormat},
        {"version", kReportVersion},
        {"experiment", meta.experiment},
        {"run", meta.run},
        {"variant", meta.variant},
        {"loss", meta.loss},
        {"config_hash", meta.config_hash},
        {"seeds", meta.seeds},
        {"taps", meta.taps},
        {"last_tap", meta.last_tap},
        {"penultimate_tap", meta.penultimate_tap},
        {"metrics", metrics},
        {"snapshots", snaps},
    };
}

// Flat form: config_hash,seed,run,layer,split,metric,value (seed = data seed).
inline std::string report_to_csv(const ReportMeta& meta, const MetricReport& report) {
    std::ostringstream os;
    os << "config_hash,seed,run,layer,split,metric,value\n";
    const std::string seed = meta.seeds.is_object() && meta.seeds.contains("data")
                                 ? meta.seeds["data"].dump()
                                 : std::string("");
    for (const auto& [layer, splits] : report.scores)
        for (const auto& [split, ms] : splits)
            for (const auto& [m, v] : ms)
                os << meta.config_hash << ',' << seed << ',' << meta.run << ',' << layer << ',' << split << ','
                   << m << ',' << format_double(v) << '\n';
    return os.str();
}

// iteration,loss,lr then one column per layer/split/R@1 (blank off-snapshot).
inline std::string history_to_csv(const TrainHistory& history) {
    std::set<std::string> cols;
    for (const auto& e : history.entries)
        for (const auto& [c, _] : e.snapshot) cols.insert(c);
    std::ostringstream os;
    os << "iteration,loss,lr";
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    for (const auto& e : history.entries) {
        os << e.iteration << ',' << format_double(e.loss) << ',' << format_double(e.lr);
        for (const auto& c : cols) {
            os << ',';
            if (auto it = e.snapshot.find(c); it != e.snapshot.end()) os << format_double(it->second);
        }
        os << '\n';
    }
    return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw IoError("write to '" + path.string() + "' failed");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Parses and checks a report file written by report_to_json.
inline nlohmann::json parse_report(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("malformed report: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kReportFormat)
        throw IoError("malformed report: not a layertap report");
    if (!j.contains("snapshots") || !j["snapshots"].is_array() || !j.contains("metrics"))
        throw IoError("malformed report: missing snapshots or metrics");
    return j;
}

}  // namespace layertap
