// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/synthetic.hpp"

#include <cmath>

#include "kvlab/error.hpp"

namespace kvlab {

void SyntheticRegime::validate() const {
    require(n_regimes >= 1, "SyntheticRegime: n_regimes must be >= 1");
    require(shift_prob >= 0.0 && shift_prob <= 1.0, "SyntheticRegime: shift_prob must be in [0, 1]");
    require(drift_scale >= 0.0, "SyntheticRegime: drift_scale must be >= 0");
}

std::vector<double> unit_rms(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) {
        sq += x * x;
    }
    std::vector<double> out(v.begin(), v.end());
    if (sq == 0.0) {
        return out;
    }
    const double rms = std::sqrt(sq / static_cast<double>(v.size()));
    for (double& x : out) {
        x /= rms;
    }
    return out;
}

RegimeProcess::RegimeProcess(const SyntheticRegime& regime, std::size_t d_model)
    : m_regime(regime),
      m_d_model(d_model),
      m_directions(regime.n_regimes, d_model),
      m_prompt_regime_rng(regime.seed, streams::kPromptRegimes),
      m_prompt_hidden_rng(regime.seed, streams::kPromptHidden),
      m_decode_regime_rng(regime.seed, streams::kDecodeRegimes),
      m_drift_rng(regime.seed, streams::kDecodeDrift) {
    regime.validate();
    require(d_model >= 1, "RegimeProcess: d_model must be >= 1");
    CounterRng rng(regime.seed, streams::kRegimeDirections);
    std::vector<double> raw(d_model);
    for (std::size_t r = 0; r < regime.n_regimes; ++r) {
        for (double& x : raw) {
            x = rng.normal();
        }
        auto dir = unit_rms(raw);
        std::copy(dir.begin(), dir.end(), m_directions.row(r).begin());
    }
}

std::size_t RegimeProcess::switch_regime(std::size_t current, CounterRng& rng) const {
    // Both draws are always consumed so stream positions do not depend on outcomes.
    const double u = rng.uniform();
    const std::uint64_t offset = m_regime.n_regimes > 1 ? rng.below(m_regime.n_regimes - 1) : 0;
    if (m_regime.n_regimes > 1 && u < m_regime.shift_prob) {
        return (current + 1 + offset) % m_regime.n_regimes;
    }
    return current;
}

Matrix RegimeProcess::prompt_hidden(std::size_t prompt_len) {
    require(prompt_len >= 1, "RegimeProcess::prompt_hidden: prompt_len must be >= 1");
    Matrix hidden(prompt_len, m_d_model);
    m_prompt_regimes.assign(prompt_len, 0);
    std::size_t regime = 0;
    std::vector<double> raw(m_d_model);
    for (std::size_t i = 0; i < prompt_len; ++i) {
        if (i > 0) {
            regime = switch_regime(regime, m_prompt_regime_rng);
        }
        m_prompt_regimes[i] = regime;
        const double u = m_prompt_hidden_rng.uniform();
        double tail = 1.0;
        for (int e = 0; e < kSalienceExponent; ++e) {
            tail *= u;
        }
        const double salience = 1.0 + kSalienceSpread * tail;
        auto dir = m_directions.row(regime);
        for (std::size_t c = 0; c < m_d_model; ++c) {
            raw[c] = dir[c] + m_regime.drift_scale * m_prompt_hidden_rng.normal();
        }
        auto h = unit_rms(raw);
        for (std::size_t c = 0; c < m_d_model; ++c) {
            hidden(i, c) = salience * h[c];
        }
    }
    m_active = regime;
    return hidden;
}

std::vector<double> RegimeProcess::decode_hidden(std::span<const double> model_output) {
    m_decode_regimes.push_back(m_active);
    auto dir = m_directions.row(m_active);
    std::vector<double> raw(m_d_model);
    for (std::size_t c = 0; c < m_d_model; ++c) {
        const double carried = model_output.empty() ? 0.0 : model_output[c];
        raw[c] = carried + kRegimeQueryGain * dir[c] + m_regime.drift_scale * m_drift_rng.normal();
    }
    return unit_rms(raw);
}

std::vector<double> RegimeProcess::first_decode_hidden() {
    return decode_hidden({});
}

std::vector<double> RegimeProcess::next_decode_hidden(std::span<const double> model_output) {
    require(model_output.size() == m_d_model, "RegimeProcess: model output width mismatch");
    m_active = switch_regime(m_active, m_decode_regime_rng);
    return decode_hidden(model_output);
}

}  // namespace kvlab
