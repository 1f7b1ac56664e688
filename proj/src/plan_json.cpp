// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/plan_json.hpp"

#include "kvlab/error.hpp"

namespace kvlab {

namespace {

BudgetScope parse_scope(const std::string& name) {
    for (auto scope : {BudgetScope::per_head, BudgetScope::per_layer_joint, BudgetScope::global_joint}) {
        if (scope_name(scope) == name) {
            return scope;
        }
    }
    throw ContractError("unknown budget scope '" + name + "'");
}

}  // namespace

nlohmann::ordered_json plan_to_json(const EvictionPlan& plan) {
    nlohmann::ordered_json doc;
    doc["policy"] = plan.policy;
    nlohmann::ordered_json budget;
    if (plan.budget.fraction) {
        budget["fraction"] = *plan.budget.fraction;
    } else {
        budget["absolute_per_layer"] = plan.budget.absolute_per_layer.value_or(0);
    }
    budget["window"] = plan.budget.window;
    budget["sinks"] = plan.budget.sinks;
    budget["scope"] = scope_name(plan.budget.scope);
    budget["unit_entries"] = plan.unit_budget;
    doc["budget"] = std::move(budget);
    doc["seed"] = plan.seed;
    doc["clamped"] = plan.clamped;
    doc["notes"] = plan.notes;
    doc["n_entries"] = plan.n_entries;
    auto layers = nlohmann::ordered_json::array();
    for (const auto& lp : plan.layers) {
        nlohmann::ordered_json layer;
        layer["layer"] = lp.layer;
        auto heads = nlohmann::ordered_json::array();
        for (const auto& hp : lp.heads) {
            nlohmann::ordered_json head;
            head["head"] = hp.head;
            head["retained"] = hp.retained;
            heads.push_back(std::move(head));
        }
        layer["heads"] = std::move(heads);
        layers.push_back(std::move(layer));
    }
    doc["layers"] = std::move(layers);
    return doc;
}

EvictionPlan plan_from_json(const nlohmann::json& doc) {
    try {
        EvictionPlan plan;
        plan.policy = doc.at("policy").get<std::string>();
        const auto& b = doc.at("budget");
        if (b.contains("fraction")) {
            plan.budget.fraction = b.at("fraction").get<double>();
        } else {
            plan.budget.fraction.reset();
            plan.budget.absolute_per_layer = b.at("absolute_per_layer").get<std::size_t>();
        }
        plan.budget.window = b.at("window").get<std::size_t>();
        plan.budget.sinks = b.at("sinks").get<std::size_t>();
        plan.budget.scope = parse_scope(b.at("scope").get<std::string>());
        plan.unit_budget = b.at("unit_entries").get<std::size_t>();
        plan.seed = doc.at("seed").get<std::uint64_t>();
        plan.clamped = doc.at("clamped").get<bool>();
        plan.notes = doc.at("notes").get<std::vector<std::string>>();
        plan.n_entries = doc.at("n_entries").get<std::size_t>();
        for (const auto& layer : doc.at("layers")) {
            LayerPlan lp;
            lp.layer = layer.at("layer").get<std::size_t>();
            for (const auto& head : layer.at("heads")) {
                lp.heads.push_back({head.at("head").get<std::size_t>(), head.at("retained").get<IndexList>()});
            }
            plan.layers.push_back(std::move(lp));
        }
        return plan;
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("malformed plan document: ") + e.what());
    }
}

std::string plan_to_string(const EvictionPlan& plan) {
    return plan_to_json(plan).dump(2) + "\n";
}

}  // namespace kvlab
