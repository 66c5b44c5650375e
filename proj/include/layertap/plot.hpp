#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layertap/error.hpp"
#include "layertap/format.hpp"

namespace layertap {

struct PlotSeries {
    std::string layer;
    std::string split;
    std::vector<std::pair<double, double>> points;  // (iteration, R@1)
};

inline std::vector<PlotSeries> plot_series(const nlohmann::json& report) {
    const auto& snaps = report.at("snapshots");
    if (snaps.empty()) throw IoError("report has no snapshots to plot");
    std::vector<std::string> layers;
    if (report.contains("taps"))
        for (const auto& t : report["taps"]) layers.push_back(t.get<std::string>());
    std::map<std::pair<std::string, std::string>, PlotSeries> by_key;
    try {
        for (const auto& s : snaps) {
            const double it = s.at("iteration").get<double>();
            for (const auto& [layer, splits] : s.at("R@1").items()) {
                if (std::find(layers.begin(), layers.end(), layer) == layers.end()) layers.push_back(layer);
                for (const auto& [split, v] : splits.items()) {
                    auto& ser = by_key[{layer, split}];
                    ser.layer = layer;
                    ser.split = split;
                    ser.points.emplace_back(it, v.get<double>());
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed snapshot: ") + e.what());
    }
    std::vector<PlotSeries> out;
    for (const auto& layer : layers)
        for (const char* split : {"train", "test"})
            if (auto it = by_key.find({layer, split}); it != by_key.end()) out.push_back(it->second);
    return out;
}

// R@1 against training iteration: one polyline per layer x split, train
// solid, test dashed, y axis fixed to [0, 1].
inline std::string render_svg(const nlohmann::json& report) {
    const auto series = plot_series(report);
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    const double w = 640, h = 400, left = 60, right = 170, top = 30, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    double xmax = 1.0;
    for (const auto& s : series)
        for (const auto& [x, _] : s.points) xmax = std::max(xmax, x);
    auto sx = [&](double x) { return format_double(left + pw * x / xmax); };
    auto sy = [&](double y) { return format_double(top + ph * (1.0 - y)); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
       << w << ' ' << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::string title = report.value("experiment", "") + " / " + report.value("run", "");
    os << "<text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
    // axes; the y range always spans [0, 1]
    os << "<g id=\"axes\" stroke=\"black\" fill=\"none\">\n";
    os << "<line x1=\"" << left << "\" y1=\"" << sy(0) << "\" x2=\"" << left + pw << "\" y2=\"" << sy(0) << "\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << sy(0) << "\" x2=\"" << left << "\" y2=\"" << sy(1) << "\"/>\n";
    os << "</g>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = i / 4.0;
        os << "<text class=\"ytick\" x=\"" << left - 8 << "\" y=\"" << sy(y)
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << format_double(y) << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">iteration (max "
       << format_double(xmax) << ")</text>\n";
    os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" "
       << "transform=\"rotate(-90 14 " << top + ph / 2 << ")\" text-anchor=\"middle\">R@1</text>\n";

    std::map<std::string, std::size_t> colour_of;
    std::size_t legend_row = 0;
    for (const auto& s : series) {
        auto [it, _] = colour_of.emplace(s.layer, colour_of.size());
        const char* colour = palette[it->second % 10];
        os << "<polyline class=\"series\" data-layer=\"" << s.layer << "\" data-split=\"" << s.split
           << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\""
           << (s.split == "test" ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
        for (std::size_t i = 0; i < s.points.size(); ++i)
            os << (i ? " " : "") << sx(s.points[i].first) << ',' << sy(s.points[i].second);
        os << "\"/>\n";
        const double ly = top + 14.0 * static_cast<double>(legend_row++);
        os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 34 << "\" y2=\"" << ly
           << "\" stroke=\"" << colour << "\" stroke-width=\"2\""
           << (s.split == "test" ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
        os << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.layer << " " << s.split << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace layertap
