// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/attention.hpp"

#include <cmath>
#include <string>

#include "kvlab/error.hpp"
#include "kvlab/rng.hpp"

namespace kvlab {

ModelConfig ModelConfig::make(std::size_t n_layers, std::size_t n_q_heads, std::size_t n_kv_heads,
                              std::size_t d_h, std::uint64_t seed) {
    ModelConfig config;
    config.n_layers = n_layers;
    config.n_q_heads = n_q_heads;
    config.n_kv_heads = n_kv_heads;
    config.d_h = d_h;
    config.d_model = n_q_heads * d_h;
    config.seed = seed;
    return config;
}

void ModelConfig::validate() const {
    require(n_layers >= 1, "ModelConfig: n_layers must be >= 1");
    require(n_q_heads >= 1 && n_kv_heads >= 1, "ModelConfig: head counts must be >= 1");
    require(d_h >= 1, "ModelConfig: d_h must be >= 1");
    require(n_q_heads % n_kv_heads == 0, "ModelConfig: n_q_heads (" + std::to_string(n_q_heads) +
                                             ") must be divisible by n_kv_heads (" +
                                             std::to_string(n_kv_heads) + ")");
    require(n_q_heads * d_h == d_model, "ModelConfig: n_q_heads * d_h must equal d_model");
}

Matrix w_o_slice(const Matrix& w_o, std::size_t q_head, std::size_t d_h) {
    return w_o.slice_rows(q_head * d_h, d_h);
}

namespace {

Matrix draw(CounterRng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& x : m.data()) {
        x = rng.normal();
    }
    return m;
}

void divide_all(Matrix& m, double divisor) {
    for (double& x : m.data()) {
        x /= divisor;
    }
}

}  // namespace

Model init_model(const ModelConfig& config) {
    config.validate();
    CounterRng rng(config.seed, streams::kWeights);
    const double root = std::sqrt(static_cast<double>(config.d_model));
    Model model{config, {}};
    model.layers.reserve(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        LayerWeights layer;
        for (std::size_t g = 0; g < config.n_kv_heads; ++g) {
            layer.w_k.push_back(draw(rng, config.d_model, config.d_h));
        }
        for (std::size_t g = 0; g < config.n_kv_heads; ++g) {
            layer.w_v.push_back(draw(rng, config.d_model, config.d_h));
        }
        for (std::size_t h = 0; h < config.n_q_heads; ++h) {
            Matrix q = draw(rng, config.d_model, config.d_h);
            const Matrix& k = layer.w_k[config.kv_head_of(h)];
            for (std::size_t i = 0; i < q.data().size(); ++i) {
                q.data()[i] = k.data()[i] + 0.5 * q.data()[i];
            }
            layer.w_q.push_back(std::move(q));
        }
        layer.w_o = draw(rng, config.n_q_heads * config.d_h, config.d_model);
        for (auto& m : layer.w_q) divide_all(m, root);
        for (auto& m : layer.w_k) divide_all(m, root);
        for (auto& m : layer.w_v) divide_all(m, root);
        divide_all(layer.w_o, root);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

KVCache prefill(const Model& model, const Matrix& hidden) {
    const auto& config = model.config;
    require(!hidden.empty(), "prefill: empty hidden states");
    require(hidden.cols() == config.d_model, "prefill: hidden width " + std::to_string(hidden.cols()) +
                                                 " does not match d_model " +
                                                 std::to_string(config.d_model));
    KVCache cache;
    cache.layers.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& weights = model.layers[l];
        for (std::size_t g = 0; g < weights.w_k.size(); ++g) {
            cache.layers[l].push_back({matmul(hidden, weights.w_k[g]), matmul(hidden, weights.w_v[g])});
        }
    }
    return cache;
}

DecodeResult decode_step(const Model& model, KVCache& cache, std::span<const double> hidden) {
    const auto& config = model.config;
    require(hidden.size() == config.d_model, "decode_step: hidden width does not match d_model");
    require(cache.layers.size() == model.layers.size(), "decode_step: cache layer count mismatch");
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(config.d_h));

    DecodeResult result;
    result.output.assign(config.d_model, 0.0);
    result.attention.resize(model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& weights = model.layers[l];
        auto& heads = cache.layers[l];
        std::vector<double> concat(config.n_q_heads * config.d_h, 0.0);
        for (std::size_t h = 0; h < config.n_q_heads; ++h) {
            const HeadKV& kv = heads.at(config.kv_head_of(h));
            require(kv.k.rows() >= 1, "decode_step: empty cache");
            const auto q = vecmat(hidden, weights.w_q[h]);
            std::vector<double> logits(kv.k.rows());
            for (std::size_t i = 0; i < kv.k.rows(); ++i) {
                double dot = 0.0;
                auto key = kv.k.row(i);
                for (std::size_t c = 0; c < config.d_h; ++c) {
                    dot += q[c] * key[c];
                }
                logits[i] = dot * inv_scale;
            }
            auto weights_row = softmax(logits);
            for (std::size_t i = 0; i < kv.v.rows(); ++i) {
                auto value = kv.v.row(i);
                for (std::size_t c = 0; c < config.d_h; ++c) {
                    concat[h * config.d_h + c] += weights_row[i] * value[c];
                }
            }
            result.attention[l].push_back(std::move(weights_row));
        }
        const auto out = vecmat(concat, weights.w_o);
        for (std::size_t c = 0; c < config.d_model; ++c) {
            result.output[c] += out[c];
        }
        for (std::size_t g = 0; g < heads.size(); ++g) {
            const auto k_new = vecmat(hidden, weights.w_k[g]);
            const auto v_new = vecmat(hidden, weights.w_v[g]);
            heads[g].k.append_row(k_new);
            heads[g].v.append_row(v_new);
        }
    }
    return result;
}

TraceRun run_trace(const ModelConfig& config, std::size_t prompt_len, std::size_t steps,
                   const SyntheticRegime& regime) {
    require(prompt_len >= 1, "run_trace: prompt_len must be >= 1");
    const Model model = init_model(config);
    RegimeProcess process(regime, config.d_model);

    TraceRun run;
    Matrix prompt = process.prompt_hidden(prompt_len);
    run.cache = prefill(model, prompt);
    run.hidden = prompt;

    std::vector<double> h = process.first_decode_hidden();
    for (std::size_t s = 0; s < steps; ++s) {
        run.hidden.append_row(h);
        run.decode_log.push_back(decode_step(model, run.cache, h));
        if (s + 1 < steps) {
            h = process.next_decode_hidden(run.decode_log.back().output);
        }
    }

    auto& trace = run.trace;
    trace.dims = {config.n_layers, config.n_q_heads, config.n_kv_heads, config.d_h,
                  config.d_model,  prompt_len,       steps};
    trace.layers.resize(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        auto& layer = trace.layers[l];
        for (const auto& kv : run.cache.layers[l]) {
            layer.k.push_back(kv.k);
            layer.v.push_back(kv.v);
        }
        for (std::size_t hq = 0; hq < config.n_q_heads; ++hq) {
            layer.q.push_back(matmul(run.hidden, model.layers[l].w_q[hq]));
        }
        layer.w_o = model.layers[l].w_o;
    }
    run.prompt_regimes = process.prompt_regimes();
    run.decode_regimes = process.decode_regimes();
    return run;
}

std::vector<double> attention_row(const RawTrace& trace, std::size_t layer, std::size_t q_head,
                                  std::size_t position, std::size_t visible) {
    const auto& dims = trace.dims;
    require(layer < dims.n_layers && q_head < dims.n_q_heads, "attention_row: head out of range");
    require(position < dims.tokens(), "attention_row: position out of range");
    require(visible >= 1 && visible <= dims.tokens(), "attention_row: visible range invalid");
    const auto& lt = trace.layers[layer];
    const Matrix& keys = lt.k[q_head / dims.group_size()];
    auto q = lt.q[q_head].row(position);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dims.d_h));
    std::vector<double> logits(visible);
    for (std::size_t i = 0; i < visible; ++i) {
        double dot = 0.0;
        auto key = keys.row(i);
        for (std::size_t c = 0; c < dims.d_h; ++c) {
            dot += q[c] * key[c];
        }
        logits[i] = dot * inv_scale;
    }
    return softmax(logits);
}

}  // namespace kvlab
