// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/report_io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <system_error>

#include "kvlab/error.hpp"

namespace kvlab {

namespace {

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    return tmp;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    const auto tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            throw std::runtime_error("write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw std::runtime_error("cannot move output into place at '" + path.string() + "': " + ec.message());
    }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string format_double(double value) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    require(res.ec == std::errc(), "format_double: conversion failed");
    return {buf.data(), res.ptr};
}

std::string fragility_csv(std::span<const FragilityReport> reports) {
    require(!reports.empty(), "fragility_csv: no reports");
    const std::size_t steps = reports.front().series.ratio.size();
    std::string out = "step";
    for (const auto& r : reports) {
        require(r.series.ratio.size() == steps, "fragility_csv: reports differ in step count");
        out += ",ratio_" + r.label;
    }
    out += '\n';
    for (std::size_t t = 0; t < steps; ++t) {
        out += std::to_string(t);
        for (const auto& r : reports) {
            out += ',' + format_double(r.series.ratio[t]);
        }
        out += '\n';
    }
    return out;
}

nlohmann::ordered_json fragility_summary(std::span<const FragilityReport> reports, double budget) {
    require(!reports.empty(), "fragility_summary: no reports");
    nlohmann::ordered_json doc;
    doc["layer"] = reports.front().layer;
    doc["budget"] = budget;
    doc["threshold"] = reports.front().threshold;
    doc["steps"] = reports.front().series.ratio.size();
    auto criteria = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json c;
        c["label"] = r.label;
        c["min"] = r.worst;
        c["mean"] = r.mean;
        c["outliers"] = r.outliers;
        c["zero_mass_steps"] = r.series.zero_mass_steps;
        criteria.push_back(std::move(c));
    }
    doc["criteria"] = std::move(criteria);
    return doc;
}

std::string compare_csv(std::span<const CompareRow> rows) {
    std::string out = "policy,budget,mean_ratio,worst_ratio,outliers,retained_entries,steps\n";
    for (const auto& r : rows) {
        out += r.policy + ',' + format_double(r.budget) + ',' + format_double(r.mean_ratio) + ',' +
               format_double(r.worst_ratio) + ',' + std::to_string(r.outliers) + ',' +
               std::to_string(r.retained_entries) + ',' + std::to_string(r.steps) + '\n';
    }
    return out;
}

}  // namespace kvlab
