// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <glob.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "kvlab/cli.hpp"
#include "kvlab/error.hpp"
#include "kvlab/eval.hpp"
#include "kvlab/plan_json.hpp"
#include "kvlab/report_io.hpp"
#include "kvlab/rng.hpp"
#include "kvlab/trace_io.hpp"

namespace kvlab::cli {

namespace {

/// Invalid flag values or combinations detected by the front end itself.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void usage_check(bool ok, const std::string& message) {
    if (!ok) {
        throw UsageError(message);
    }
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        if (first == std::string::npos) {
            continue;
        }
        const auto last = item.find_last_not_of(" \t");
        out.push_back(item.substr(first, last - first + 1));
    }
    return out;
}

double parse_real(const std::string& text, const std::string& flag) {
    double value = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    usage_check(res.ec == std::errc() && res.ptr == text.data() + text.size(),
                flag + ": '" + text + "' is not a number");
    return value;
}

void check_fraction(double value, const std::string& flag) {
    usage_check(value > 0.0 && value <= 1.0, flag + " must be in (0, 1], got " + format_double(value));
}

struct GenArgs {
    std::uint64_t seed = 0;
    std::size_t layers = 4;
    std::size_t q_heads = 8;
    std::size_t kv_heads = 2;
    std::size_t dh = 16;
    std::size_t prompt_len = 256;
    std::size_t steps = 128;
    double shift_prob = 0.05;
    double drift = 0.5;
    std::size_t regimes = 4;
    std::string family = "regime";
    std::size_t window = 32;
    std::size_t spikes = 8;
    double spike_prob = 0.1;
    std::string out;
};

struct EvictArgs {
    std::string trace;
    std::string policy;
    double budget = 0.2;
    std::size_t window = 32;
    std::size_t kernel = 5;
    std::size_t sinks = 4;
    std::string ablation;
    std::string norm_divisor = "layer";
    std::string out;
};

struct FragilityArgs {
    std::string trace;
    double budget = 0.5;
    std::size_t layer = 0;
    CLI::Option* layer_option = nullptr;
    std::string criteria = "single:16,mean,defensive";
    double threshold = 0.5;
    std::size_t window = 32;
    std::size_t kernel = 5;
    bool raw_attention = false;
    std::string out;
};

struct CompareArgs {
    std::string traces;
    std::string policies = "all";
    std::string budgets = "0.2,0.4";
    std::size_t window = 32;
    std::size_t kernel = 5;
    std::size_t sinks = 4;
    double threshold = 0.5;
    std::string out;
};

struct BenchArgs {
    std::size_t n = 100000;
    std::size_t m = 32;
    std::size_t iters = 50;
    std::uint64_t seed = 0;
    std::string out;
};

void check_kernel(std::size_t kernel) {
    usage_check(kernel >= 1 && kernel % 2 == 1, "--kernel must be a positive odd number");
}

std::string trace_dims_summary(const AnyTrace& trace) {
    std::ostringstream s;
    if (const auto* raw = std::get_if<RawTrace>(&trace)) {
        const auto& d = raw->dims;
        s << "kind=raw layers=" << d.n_layers << " q_heads=" << d.n_q_heads << " kv_heads=" << d.n_kv_heads
          << " d_h=" << d.d_h << " d_model=" << d.d_model << " prompt=" << d.n_prompt << " steps=" << d.n_steps;
    } else {
        const auto& d = std::get<ImportanceDump>(trace);
        s << "kind=importance layers=" << d.n_layers << " q_heads=" << d.n_q_heads << " steps=" << d.n_steps
          << " entries=" << d.n_entries;
    }
    return s.str();
}

std::size_t trace_layers(const AnyTrace& trace) {
    return std::visit(
        [](const auto& t) {
            if constexpr (std::is_same_v<std::decay_t<decltype(t)>, RawTrace>) {
                return t.dims.n_layers;
            } else {
                return t.n_layers;
            }
        },
        trace);
}

ImportanceSource load_source(const std::string& path, std::size_t window, bool raw_attention) {
    const AnyTrace trace = read_trace(path);
    ImportanceSource source;
    if (const auto* raw = std::get_if<RawTrace>(&trace)) {
        source = make_source(*raw, window, raw_attention);
    } else {
        source = make_source(std::get<ImportanceDump>(trace), window);
    }
    source.name = path;
    return source;
}

int cmd_gen(const GenArgs& a, std::ostream& out) {
    AnyTrace trace;
    if (a.family == "regime") {
        const ModelConfig config = ModelConfig::make(a.layers, a.q_heads, a.kv_heads, a.dh, a.seed);
        config.validate();
        usage_check(a.prompt_len >= 1, "--prompt-len must be >= 1");
        SyntheticRegime regime;
        regime.seed = a.seed;
        regime.n_regimes = a.regimes;
        regime.shift_prob = a.shift_prob;
        regime.drift_scale = a.drift;
        regime.validate();
        trace = gen_synthetic(config, a.prompt_len, a.steps, regime);
    } else {
        PlantedSpikeConfig config;
        config.seed = a.seed;
        config.n_layers = a.layers;
        config.n_heads = a.q_heads;
        config.n_entries = a.prompt_len;
        config.window = a.window;
        config.steps = a.steps;
        config.n_spikes = a.spikes;
        config.spike_step_prob = a.spike_prob;
        usage_check(a.spike_prob >= 0.0 && a.spike_prob <= 1.0, "--spike-prob must be in [0, 1]");
        planted_spike_positions(config);
        trace = gen_planted_spike(config);
    }
    const auto bytes = std::visit([](const auto& t) { return encode_trace(t); }, trace);
    write_file_atomic(a.out, bytes);
    out << "wrote " << a.out << ": " << trace_dims_summary(trace) << " bytes=" << bytes.size() << '\n';
    return kExitOk;
}

int cmd_evict(const EvictArgs& a, std::ostream& out) {
    const PolicyKind kind = parse_policy(a.policy);
    check_fraction(a.budget, "--budget");
    usage_check(a.window >= 1, "--window must be >= 1");
    check_kernel(a.kernel);
    PolicyOptions options;
    options.fraction = a.budget;
    options.window = a.window;
    options.kernel = a.kernel;
    options.sinks = a.sinks;
    options.per_head_norm_divisor = a.norm_divisor == "head";
    if (!a.ablation.empty()) {
        const AggregationSpec spec = AggregationSpec::parse(a.ablation);
        usage_check(spec.kind == AggregationKind::worst_case_only || spec.kind == AggregationKind::fixed_threshold,
                    "--agg-ablation must be worst-only or fixed:TAU");
        spec.validate(a.window);
        usage_check(is_defensive_policy(kind), "--agg-ablation requires a defensive policy");
        options.ablation = spec;
    }

    const AnyTrace trace = read_trace(a.trace);
    const auto observation = std::visit([&](const auto& t) { return observe(t, a.window); }, trace);
    const EvictionPlan plan = make_plan(kind, observation, options);
    write_file_atomic(a.out, plan_to_string(plan));

    out << "policy=" << plan.policy << " scope=" << scope_name(plan.budget.scope)
        << " budget=" << format_double(a.budget) << " unit_entries=" << plan.unit_budget
        << " n_entries=" << plan.n_entries << '\n';
    out << "retained per layer:";
    for (const auto& lp : plan.layers) {
        out << " L" << lp.layer << '=' << plan.retained_in_layer(lp.layer);
    }
    out << '\n';
    for (const auto& note : plan.notes) {
        out << "note: " << note << '\n';
    }
    return kExitOk;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
    if (csv.extension() == ".json") {
        auto p = csv;
        p += ".json";
        return p;
    }
    auto p = csv;
    p.replace_extension(".json");
    return p;
}

int cmd_fragility(const FragilityArgs& a, std::ostream& out) {
    check_fraction(a.budget, "--budget");
    usage_check(a.threshold >= 0.0 && a.threshold <= 1.0, "--threshold must be in [0, 1]");
    usage_check(a.window >= 1, "--window must be >= 1");
    check_kernel(a.kernel);
    std::vector<AggregationSpec> criteria;
    for (const auto& item : split_list(a.criteria)) {
        AggregationSpec spec = AggregationSpec::parse(item);
        spec.validate(a.window);
        criteria.push_back(spec);
    }
    usage_check(!criteria.empty(), "--criteria is empty");

    const AnyTrace trace = read_trace(a.trace);
    const std::size_t n_layers = trace_layers(trace);
    const std::size_t layer = a.layer_option->count() > 0 ? a.layer : n_layers / 2;
    usage_check(layer < n_layers,
                "--layer " + std::to_string(layer) + " out of range for " + std::to_string(n_layers) + " layers");
    ImportanceSource source;
    if (const auto* raw = std::get_if<RawTrace>(&trace)) {
        source = make_source(*raw, a.window, a.raw_attention);
    } else {
        source = make_source(std::get<ImportanceDump>(trace), a.window);
    }
    for (const auto& spec : criteria) {
        spec.validate(source.observation.front().window);
    }

    FragilityOptions options;
    options.budget = a.budget;
    options.kernel = a.kernel;
    options.threshold = a.threshold;
    const auto reports = fragility_analysis(source, layer, criteria, options);
    const auto sidecar = sidecar_path(a.out);
    write_file_atomic(a.out, fragility_csv(reports));
    write_file_atomic(sidecar, fragility_summary(reports, a.budget).dump(2) + "\n");

    out << "layer " << layer << ", " << source.future.n_steps << " steps, budget " << format_double(a.budget)
        << '\n';
    for (const auto& r : reports) {
        out << r.label << ": min=" << format_double(r.worst) << " mean=" << format_double(r.mean)
            << " outliers=" << r.outliers << '\n';
    }
    out << "wrote " << a.out << " and " << sidecar.string() << '\n';
    return kExitOk;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    glob_t g{};
    const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
    std::vector<std::string> paths;
    if (rc == 0) {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) {
            paths.emplace_back(g.gl_pathv[i]);
        }
    }
    ::globfree(&g);
    usage_check(rc == 0 || rc == GLOB_NOMATCH, "--traces: cannot expand '" + pattern + "'");
    return paths;
}

int cmd_compare(const CompareArgs& a, std::ostream& out) {
    std::vector<PolicyKind> policies;
    for (const auto& name : split_list(a.policies)) {
        if (name == "all") {
            const auto all = all_policies();
            policies.insert(policies.end(), all.begin(), all.end());
        } else {
            policies.push_back(parse_policy(name));
        }
    }
    usage_check(!policies.empty(), "--policies is empty");
    std::vector<double> budgets;
    for (const auto& item : split_list(a.budgets)) {
        budgets.push_back(parse_real(item, "--budgets"));
        check_fraction(budgets.back(), "--budgets");
    }
    usage_check(!budgets.empty(), "--budgets is empty");
    usage_check(a.window >= 1, "--window must be >= 1");
    usage_check(a.threshold >= 0.0 && a.threshold <= 1.0, "--threshold must be in [0, 1]");
    check_kernel(a.kernel);
    const auto paths = expand_glob(a.traces);
    usage_check(!paths.empty(), "--traces: no files match '" + a.traces + "'");

    std::vector<ImportanceSource> sources;
    for (const auto& path : paths) {
        sources.push_back(load_source(path, a.window, false));
    }
    CompareOptions options;
    options.kernel = a.kernel;
    options.sinks = a.sinks;
    options.threshold = a.threshold;
    const auto rows = compare_policies(sources, policies, budgets, options);
    write_file_atomic(a.out, compare_csv(rows));
    out << "compared " << policies.size() << " policies x " << budgets.size() << " budgets over " << sources.size()
        << " traces; wrote " << a.out << '\n';
    return kExitOk;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
    usage_check(a.iters >= 1, "--iters must be >= 1");
    usage_check(a.n >= 1 && a.m >= 1, "--n and --m must be >= 1");

    CounterRng rng(a.seed, streams::kWeights);
    ImportanceDump dump{1, 1, a.m, a.n + a.m, {}};
    Matrix rows(a.m, a.n + a.m);
    for (double& x : rows.data()) {
        x = rng.uniform();
    }
    dump.rows = {{rows}};
    const Matrix importance = rows.slice_cols(0, a.n);
    const auto observation = observe(dump, a.m);
    PolicyOptions options;
    options.window = a.m;
    options.fraction = 0.5;

    using clock = std::chrono::steady_clock;
    auto seconds = [](clock::time_point t0) { return std::chrono::duration<double>(clock::now() - t0).count(); };
    std::vector<double> t_mean, t_def, t_plan;
    double sink = 0.0;
    for (std::size_t it = 0; it <= a.iters; ++it) {
        auto t0 = clock::now();
        sink += mean_aggregate(importance)[0];
        const double dm = seconds(t0);
        t0 = clock::now();
        sink += defensive_aggregate(importance)[0];
        const double dd = seconds(t0);
        t0 = clock::now();
        sink += static_cast<double>(make_plan(PolicyKind::defensivekv, observation, options).retained_total());
        const double dp = seconds(t0);
        if (it > 0) {  // first pass warms caches
            t_mean.push_back(dm);
            t_def.push_back(dd);
            t_plan.push_back(dp);
        }
    }

    nlohmann::ordered_json doc;
    doc["n"] = a.n;
    doc["m"] = a.m;
    doc["iters"] = a.iters;
    const double mm = median(t_mean);
    const double md = median(t_def);
    doc["median_seconds"] = {{"mean_aggregate", mm}, {"defensive_aggregate", md}, {"plan_construction", median(t_plan)}};
    doc["defensive_over_mean"] = mm > 0.0 ? md / mm : 1.0;
    doc["checksum"] = std::isfinite(sink) ? sink : 0.0;
    const std::string text = doc.dump(2) + "\n";
    if (!a.out.empty()) {
        write_file_atomic(a.out, text);
    }
    out << text;
    return kExitOk;
}

struct ErrorSink {
    std::ostream& err;
    bool json = false;

    int report(int code, const std::string& category, const std::string& message,
               const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) const {
        if (json) {
            nlohmann::ordered_json doc;
            doc["error"] = category;
            doc["exit_code"] = code;
            doc["message"] = message;
            for (const auto& [k, v] : extra.items()) {
                doc[k] = v;
            }
            err << doc.dump() << '\n';
        } else {
            err << "kvlab: " << category << " error: " << message << '\n';
        }
        return code;
    }
};

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
}

std::optional<std::string> flag_value(const std::vector<std::string>& args, const std::string& flag) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == flag && i + 1 < args.size()) {
            return args[i + 1];
        }
        if (args[i].rfind(flag + "=", 0) == 0) {
            return args[i].substr(flag.size() + 1);
        }
    }
    return std::nullopt;
}

std::string config_scalar(const nlohmann::json& value, const std::string& key) {
    switch (value.type()) {
        case nlohmann::json::value_t::string:
            return value.get<std::string>();
        case nlohmann::json::value_t::number_integer:
        case nlohmann::json::value_t::number_unsigned:
        case nlohmann::json::value_t::number_float:
            return value.dump();
        default:
            throw UsageError("config key '" + key + "' has an unsupported value type");
    }
}

/**
 * Appends `--key=value` for every config entry whose flag is absent from the
 * command line, so explicit flags always win.
 */
std::vector<std::string> merge_config(const std::vector<std::string>& args, CLI::App& app) {
    const auto path = flag_value(args, "--config");
    if (!path) {
        return args;
    }
    std::ifstream in(*path);
    usage_check(static_cast<bool>(in), "cannot read config file '" + *path + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("config file '" + *path + "' is not valid JSON: " + e.what());
    }
    usage_check(doc.is_object(), "config file must hold a JSON object");

    CLI::App* sub = nullptr;
    for (const auto& arg : args) {
        if (auto* candidate = app.get_subcommand_no_throw(arg)) {
            sub = candidate;
            break;
        }
    }
    std::vector<std::string> merged = args;
    for (const auto& [key, value] : doc.items()) {
        const std::string flag = "--" + key;
        usage_check(key != "config", "config files cannot nest --config");
        const CLI::Option* opt = sub != nullptr ? sub->get_option_no_throw(flag) : nullptr;
        if (opt == nullptr) {
            opt = app.get_option_no_throw(flag);
        }
        usage_check(opt != nullptr, "unknown config key '" + key + "'");
        if (has_flag(args, flag)) {
            continue;
        }
        if (value.is_boolean()) {
            usage_check(opt->get_expected_max() == 0, "config key '" + key + "' is not a switch");
            if (value.get<bool>()) {
                merged.push_back(flag);
            }
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& item : value) {
                joined += (joined.empty() ? "" : ",") + config_scalar(item, key);
            }
            merged.push_back(flag + "=" + joined);
        } else {
            merged.push_back(flag + "=" + config_scalar(value, key));
        }
    }
    return merged;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    ErrorSink errors{err, has_flag(args, "--json-errors")};

    CLI::App app{"KV-cache eviction laboratory", "kvlab"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    bool json_errors = false;
    app.add_option("--config", config_path, "JSON file with flag values; explicit flags win");
    app.add_flag("--json-errors", json_errors, "Report errors as single-line JSON on standard error");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic DKVT trace");
    gen_cmd->add_option("--seed", gen.seed, "Seed for weights and hidden states")->capture_default_str();
    gen_cmd->add_option("--layers", gen.layers, "Layers")->capture_default_str();
    gen_cmd->add_option("--q-heads", gen.q_heads, "Query heads per layer")->capture_default_str();
    gen_cmd->add_option("--kv-heads", gen.kv_heads, "KV heads per layer")->capture_default_str();
    gen_cmd->add_option("--dh", gen.dh, "Head dimension")->capture_default_str();
    gen_cmd->add_option("--prompt-len", gen.prompt_len, "Prompt tokens (entries for --family spike)")
        ->capture_default_str();
    gen_cmd->add_option("--steps", gen.steps, "Decode steps")->capture_default_str();
    gen_cmd->add_option("--shift-prob", gen.shift_prob, "Per-token regime switch probability")
        ->capture_default_str();
    gen_cmd->add_option("--drift", gen.drift, "Hidden-state noise scale")->capture_default_str();
    gen_cmd->add_option("--regimes", gen.regimes, "Number of regimes")->capture_default_str();
    gen_cmd->add_option("--family", gen.family, "Trace family")
        ->check(CLI::IsMember({"regime", "spike"}))
        ->capture_default_str();
    gen_cmd->add_option("--window", gen.window, "Observation rows (spike family)")->capture_default_str();
    gen_cmd->add_option("--spikes", gen.spikes, "Spike entries (spike family)")->capture_default_str();
    gen_cmd->add_option("--spike-prob", gen.spike_prob, "Probability of a spike step (spike family)")
        ->capture_default_str();
    gen_cmd->add_option("--out", gen.out, "Output trace file")->required();

    EvictArgs evict;
    auto* evict_cmd = app.add_subcommand("evict", "Build an eviction plan from a trace");
    evict_cmd->add_option("--trace", evict.trace, "Input DKVT trace")->required();
    evict_cmd->add_option("--policy", evict.policy,
                          "streaming|snapkv|criticalkv|adakv|adakv-defensive|defensivekv|layer-defensivekv")
        ->required();
    evict_cmd->add_option("--budget", evict.budget, "Retained fraction in (0, 1]")->capture_default_str();
    evict_cmd->add_option("--window", evict.window, "Protected recent entries")->capture_default_str();
    evict_cmd->add_option("--kernel", evict.kernel, "Pooling kernel (odd)")->capture_default_str();
    evict_cmd->add_option("--sinks", evict.sinks, "Sink entries (streaming)")->capture_default_str();
    evict_cmd->add_option("--agg-ablation", evict.ablation, "worst-only or fixed:TAU");
    evict_cmd->add_option("--norm-divisor", evict.norm_divisor, "Layer-wise normalization divisor")
        ->check(CLI::IsMember({"layer", "head"}))
        ->capture_default_str();
    evict_cmd->add_option("--out", evict.out, "Output plan JSON")->required();

    FragilityArgs frag;
    auto* frag_cmd = app.add_subcommand("fragility", "Retained-importance ratio of eviction criteria");
    frag_cmd->add_option("--trace", frag.trace, "Input DKVT trace")->required();
    frag_cmd->add_option("--budget", frag.budget, "Retained fraction in (0, 1]")->capture_default_str();
    frag.layer_option = frag_cmd->add_option("--layer", frag.layer, "Layer to analyze (default: middle layer)");
    frag_cmd->add_option("--criteria", frag.criteria, "Comma list of single:J, mean, defensive, worst-only, fixed:TAU")
        ->capture_default_str();
    frag_cmd->add_option("--threshold", frag.threshold, "Outlier threshold")->capture_default_str();
    frag_cmd->add_option("--window", frag.window, "Observation window")->capture_default_str();
    frag_cmd->add_option("--kernel", frag.kernel, "Pooling kernel (odd)")->capture_default_str();
    frag_cmd->add_flag("--raw-attention", frag.raw_attention, "Use attention without value-norm scaling");
    frag_cmd->add_option("--out", frag.out, "Output CSV (summary JSON written alongside)")->required();

    CompareArgs cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "Compare policies across traces and budgets");
    cmp_cmd->add_option("--traces", cmp.traces, "Glob of DKVT traces")->required();
    cmp_cmd->add_option("--policies", cmp.policies, "Comma list of policies or 'all'")->capture_default_str();
    cmp_cmd->add_option("--budgets", cmp.budgets, "Comma list of fractions")->capture_default_str();
    cmp_cmd->add_option("--window", cmp.window, "Observation window")->capture_default_str();
    cmp_cmd->add_option("--kernel", cmp.kernel, "Pooling kernel (odd)")->capture_default_str();
    cmp_cmd->add_option("--sinks", cmp.sinks, "Sink entries (streaming)")->capture_default_str();
    cmp_cmd->add_option("--threshold", cmp.threshold, "Outlier threshold")->capture_default_str();
    cmp_cmd->add_option("--out", cmp.out, "Output CSV")->required();

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "Time mean vs defensive aggregation");
    bench_cmd->add_option("--n", bench.n, "Entries")->capture_default_str();
    bench_cmd->add_option("--m", bench.m, "Observation rows")->capture_default_str();
    bench_cmd->add_option("--iters", bench.iters, "Timed iterations")->capture_default_str();
    bench_cmd->add_option("--seed", bench.seed, "Seed for the random matrix")->capture_default_str();
    bench_cmd->add_option("--out", bench.out, "Also write the JSON here");

    try {
        std::vector<std::string> merged = merge_config(args, app);
        std::reverse(merged.begin(), merged.end());
        app.parse(merged);
        errors.json = errors.json || json_errors;
        if (gen_cmd->parsed()) {
            return cmd_gen(gen, out);
        }
        if (evict_cmd->parsed()) {
            return cmd_evict(evict, out);
        }
        if (frag_cmd->parsed()) {
            return cmd_fragility(frag, out);
        }
        if (cmp_cmd->parsed()) {
            return cmd_compare(cmp, out);
        }
        return cmd_bench(bench, out);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        return errors.report(kExitUsage, "usage", e.what());
    } catch (const UsageError& e) {
        return errors.report(kExitUsage, "validation", e.what());
    } catch (const ContractError& e) {
        return errors.report(kExitUsage, "validation", e.what());
    } catch (const TraceFormatError& e) {
        return errors.report(kExitRuntime, "trace_format", e.what(), {{"field", e.field()}, {"offset", e.offset()}});
    } catch (const std::exception& e) {
        return errors.report(kExitRuntime, "runtime", e.what());
    }
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace kvlab::cli
