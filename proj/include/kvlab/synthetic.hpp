// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvlab/matrix.hpp"
#include "kvlab/rng.hpp"

namespace kvlab {

/// Parameters of the regime-switching hidden-state process that drives toy traces.
struct SyntheticRegime {
    std::uint64_t seed = 0;
    std::size_t n_regimes = 4;
    /// Per-token probability of switching to a different regime (prompt and decode).
    double shift_prob = 0.05;
    /// Scale of the isotropic noise added to every hidden state.
    double drift_scale = 0.5;

    void validate() const;
};

/// Gain of the regime direction in decode-time hidden states.
inline constexpr double kRegimeQueryGain = 2.0;
/// Prompt entry salience is 1 + kSalienceSpread * U^kSalienceExponent, U ~ uniform[0,1).
inline constexpr double kSalienceSpread = 2.0;
inline constexpr int kSalienceExponent = 5;

/// Rescales v to unit root-mean-square. A zero vector is returned unchanged.
std::vector<double> unit_rms(std::span<const double> v);

/**
 * @brief Generates the hidden states fed to the toy model.
 *
 * Each regime owns a unit-RMS Gaussian direction. Prompt token i belongs to
 * regime r_i (a Markov chain that switches with probability shift_prob) and has
 * hidden state salience_i * unit_rms(u_{r_i} + drift * xi_i). Decode hidden
 * states are unit_rms(output + kRegimeQueryGain * u_r + drift * xi), where r is
 * the active decode regime, which starts at the last prompt regime and
 * switches with probability shift_prob after every step.
 */
class RegimeProcess {
public:
    RegimeProcess(const SyntheticRegime& regime, std::size_t d_model);

    /// Prompt hidden states, one row per token. Call once, before decoding.
    Matrix prompt_hidden(std::size_t prompt_len);
    /// Hidden state of the first decoded token.
    std::vector<double> first_decode_hidden();
    /// Advances the decode regime and returns the next hidden state.
    std::vector<double> next_decode_hidden(std::span<const double> model_output);

    const std::vector<std::size_t>& prompt_regimes() const { return m_prompt_regimes; }
    const std::vector<std::size_t>& decode_regimes() const { return m_decode_regimes; }
    const Matrix& directions() const { return m_directions; }

private:
    std::size_t switch_regime(std::size_t current, CounterRng& rng) const;
    std::vector<double> decode_hidden(std::span<const double> model_output);

    SyntheticRegime m_regime;
    std::size_t m_d_model;
    Matrix m_directions;
    CounterRng m_prompt_regime_rng;
    CounterRng m_prompt_hidden_rng;
    CounterRng m_decode_regime_rng;
    CounterRng m_drift_rng;
    std::vector<std::size_t> m_prompt_regimes;
    std::vector<std::size_t> m_decode_regimes;
    std::size_t m_active = 0;
};

}  // namespace kvlab
