// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <json.hpp>

#include "kvlab/policy.hpp"

namespace kvlab {

/**
 * {policy, budget: {fraction | absolute_per_layer, window, sinks, scope,
 * unit_entries}, seed, clamped, notes, n_entries,
 * layers: [{layer, heads: [{head, retained: [...]}]}]}
 */
nlohmann::ordered_json plan_to_json(const EvictionPlan& plan);
EvictionPlan plan_from_json(const nlohmann::json& doc);

/// Two-space indented document with a trailing newline.
std::string plan_to_string(const EvictionPlan& plan);

}  // namespace kvlab
