#include "neursplit/report.hpp"

#include <array>
#include <charconv>

#include "neursplit/error.hpp"

namespace neursplit {

namespace {

constexpr std::array<std::string_view, 10> kColumns = {
    "label", "layer", "inputs", "fast_s", "slow_s", "sync_s", "predict_s", "total_s", "fast_active", "slow_active",
};

std::string header_line() {
    std::string out;
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
        if (c > 0) out += ',';
        out += kColumns[c];
    }
    return out;
}

void check_label(const std::string& label) {
    require(label.find_first_of(",\"\n\r") == std::string::npos,
            "report: label '" + label + "' contains a character not allowed in CSV fields");
}

json row_json(const std::string& label, const json& layer, std::uint64_t inputs, const LayerLatency& l) {
    return json{{"label", label},
                {"layer", layer},
                {"inputs", inputs},
                {"fast_s", l.fast_s},
                {"slow_s", l.slow_s},
                {"sync_s", l.sync_s},
                {"predict_s", l.predict_s},
                {"total_s", l.total_s},
                {"fast_active", l.fast_active},
                {"slow_active", l.slow_active}};
}

double parse_double(std::string_view text, std::size_t line) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        fail("report: line " + std::to_string(line) + ": '" + std::string(text) + "' is not a number");
    }
    return v;
}

std::uint64_t parse_u64(std::string_view text, std::size_t line) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        fail("report: line " + std::to_string(line) + ": '" + std::string(text) + "' is not an unsigned integer");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace

std::span<const std::string_view> breakdown_columns() { return kColumns; }

std::string format_double(double value) {
    std::array<char, 64> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    require(ec == std::errc{}, "format_double: conversion failed");
    return std::string(buf.data(), ptr);
}

json breakdowns_to_json(std::span<const LatencyBreakdown> breakdowns) {
    json rows = json::array();
    for (const auto& b : breakdowns) {
        check_label(b.label);
        for (const auto& l : b.layers) rows.push_back(row_json(b.label, l.layer, b.inputs, l));
        rows.push_back(row_json(b.label, "total", b.inputs, b.totals));
    }
    json columns = json::array();
    for (const auto c : kColumns) columns.push_back(std::string(c));
    return json{{"format", kBreakdownFormat}, {"columns", std::move(columns)}, {"rows", std::move(rows)}};
}

std::string json_to_csv(const json& doc) {
    io::check_format(doc, kBreakdownFormat, "breakdown document");
    try {
        const auto& columns = doc.at("columns");
        require(columns.size() == kColumns.size(), "report: column count mismatch");
        for (std::size_t c = 0; c < kColumns.size(); ++c) {
            require(columns[c].get<std::string>() == kColumns[c],
                    "report: column " + std::to_string(c) + " is '" + columns[c].get<std::string>() + "', expected '" +
                        std::string(kColumns[c]) + "'");
        }
        std::string out = header_line() + "\n";
        for (const auto& row : doc.at("rows")) {
            require(row.size() == kColumns.size(), "report: row has " + std::to_string(row.size()) + " fields");
            const auto label = row.at("label").get<std::string>();
            check_label(label);
            out += label;
            out += ',';
            const auto& layer = row.at("layer");
            if (layer.is_string()) {
                require(layer.get<std::string>() == "total", "report: layer must be an index or \"total\"");
                out += "total";
            } else {
                out += std::to_string(layer.get<std::uint64_t>());
            }
            out += ',' + std::to_string(row.at("inputs").get<std::uint64_t>());
            for (const char* key : {"fast_s", "slow_s", "sync_s", "predict_s", "total_s"}) {
                out += ',' + format_double(row.at(key).get<double>());
            }
            out += ',' + std::to_string(row.at("fast_active").get<std::uint64_t>());
            out += ',' + std::to_string(row.at("slow_active").get<std::uint64_t>());
            out += '\n';
        }
        return out;
    } catch (const json::exception& e) {
        fail(std::string("report: malformed breakdown document: ") + e.what());
    }
}

std::string breakdowns_to_csv(std::span<const LatencyBreakdown> breakdowns) {
    return json_to_csv(breakdowns_to_json(breakdowns));
}

json csv_to_json(std::string_view csv) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < csv.size()) {
        const auto nl = csv.find('\n', start);
        require(nl != std::string_view::npos, "report: CSV must end with a newline");
        lines.push_back(csv.substr(start, nl - start));
        start = nl + 1;
    }
    require(!lines.empty(), "report: empty CSV (missing header)");
    require(lines[0] == header_line(), "report: CSV header '" + std::string(lines[0]) + "' does not match schema '" +
                                           header_line() + "'");
    json rows = json::array();
    for (std::size_t n = 1; n < lines.size(); ++n) {
        const auto fields = split(lines[n]);
        require(fields.size() == kColumns.size(), "report: line " + std::to_string(n + 1) + " has " +
                                                      std::to_string(fields.size()) + " fields, expected " +
                                                      std::to_string(kColumns.size()));
        json row;
        row["label"] = std::string(fields[0]);
        row["layer"] = fields[1] == "total" ? json("total") : json(parse_u64(fields[1], n + 1));
        row["inputs"] = parse_u64(fields[2], n + 1);
        for (std::size_t c = 3; c < 8; ++c) row[std::string(kColumns[c])] = parse_double(fields[c], n + 1);
        row["fast_active"] = parse_u64(fields[8], n + 1);
        row["slow_active"] = parse_u64(fields[9], n + 1);
        rows.push_back(std::move(row));
    }
    json columns = json::array();
    for (const auto c : kColumns) columns.push_back(std::string(c));
    return json{{"format", kBreakdownFormat}, {"columns", std::move(columns)}, {"rows", std::move(rows)}};
}

std::vector<LatencyBreakdown> breakdowns_from_json(const json& doc) {
    io::check_format(doc, kBreakdownFormat, "breakdown document");
    std::vector<LatencyBreakdown> out;
    bool open = false;
    try {
        for (const auto& row : doc.at("rows")) {
            LayerLatency l;
            l.fast_s = row.at("fast_s").get<double>();
            l.slow_s = row.at("slow_s").get<double>();
            l.sync_s = row.at("sync_s").get<double>();
            l.predict_s = row.at("predict_s").get<double>();
            l.total_s = row.at("total_s").get<double>();
            l.fast_active = row.at("fast_active").get<std::uint64_t>();
            l.slow_active = row.at("slow_active").get<std::uint64_t>();
            const auto label = row.at("label").get<std::string>();
            if (!open) {
                out.emplace_back();
                out.back().label = label;
                out.back().inputs = row.at("inputs").get<std::uint64_t>();
                open = true;
            }
            require(out.back().label == label, "report: rows of '" + out.back().label + "' end without a totals row");
            if (row.at("layer").is_string()) {
                l.layer = static_cast<std::uint32_t>(out.back().layers.size());
                out.back().totals = l;
                open = false;
            } else {
                l.layer = row.at("layer").get<std::uint32_t>();
                out.back().layers.push_back(l);
            }
        }
    } catch (const json::exception& e) {
        fail(std::string("report: malformed breakdown document: ") + e.what());
    }
    require(!open, "report: last breakdown has no totals row");
    return out;
}

} // namespace neursplit
