#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "layertap/data.hpp"
#include "layertap/format.hpp"

namespace layertap {

// Dataset CSV, version 1:
//   line 1: "# layertap-dataset v1"
//   line 2: "item_id,split,label,f0,f1,...,f{d-1}"
//   then one row per item, ids ascending from 0, numbers in shortest
//   round-trip form.
inline constexpr const char* kDatasetMagic = "# layertap-dataset v1";

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    os << kDatasetMagic << '\n' << "item_id,split,label";
    for (std::size_t c = 0; c < ds.features.cols(); ++c) os << ",f" << c;
    os << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        os << i << ',' << to_string(ds.splits[i]) << ',' << ds.labels[i];
        for (double v : ds.features.row(i)) os << ',' << format_double(v);
        os << '\n';
    }
}

inline void save_dataset_csv(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_dataset_csv(os, ds);
    if (!os) throw IoError("write to '" + path + "' failed");
}

inline Dataset read_dataset_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kDatasetMagic)
        throw IoError("dataset csv: missing '" + std::string(kDatasetMagic) + "' header");
    if (!std::getline(is, line) || line.rfind("item_id,split,label", 0) != 0)
        throw IoError("dataset csv: missing column header");
    std::size_t cols = 0;
    for (char c : line)
        if (c == ',') ++cols;
    cols -= 2;

    Dataset ds;
    std::vector<double> data;
    std::size_t line_no = 2;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() != cols + 3)
            throw IoError("dataset csv line " + std::to_string(line_no) + ": expected " +
                          std::to_string(cols + 3) + " fields");
        try {
            if (std::stoull(fields[0]) != ds.size())
                throw IoError("dataset csv line " + std::to_string(line_no) + ": item ids must be sequential");
            ds.splits.push_back(split_from_string(fields[1]));
            ds.labels.push_back(static_cast<Label>(std::stol(fields[2])));
            for (std::size_t c = 0; c < cols; ++c) data.push_back(parse_double(fields[3 + c]));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw IoError("dataset csv line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    ds.features = Matrix(ds.labels.size(), cols, std::move(data));
    ds.validate();
    return ds;
}

inline Dataset load_dataset_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_dataset_csv(is);
}

}  // namespace layertap
