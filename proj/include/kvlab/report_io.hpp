// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kvlab/eval.hpp"

namespace kvlab {

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Shortest round-trip decimal form, '.' separator regardless of locale.
std::string format_double(double value);

/**
 * CSV with header `step,ratio_<label>...`, one line per decode step (0-based),
 * LF line endings. All reports must share the same step count.
 */
std::string fragility_csv(std::span<const FragilityReport> reports);

/// {layer, budget, threshold, steps, criteria: [{label, min, mean, outliers, zero_mass_steps}]}
nlohmann::ordered_json fragility_summary(std::span<const FragilityReport> reports, double budget);

/// Header: policy,budget,mean_ratio,worst_ratio,outliers,retained_entries,steps
std::string compare_csv(std::span<const CompareRow> rows);

}  // namespace kvlab
