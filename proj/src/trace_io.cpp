// Copyright (C) 2026 The kvlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvlab/trace_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "kvlab/error.hpp"
#include "kvlab/report_io.hpp"
#include "kvlab/rng.hpp"

namespace kvlab {

TraceFormatError::TraceFormatError(std::string field, std::uint64_t offset, const std::string& detail)
    : std::runtime_error("trace format error in '" + field + "' at byte " + std::to_string(offset) + ": " +
                         detail),
      m_field(std::move(field)),
      m_offset(offset) {}

namespace {

constexpr std::uint64_t kHeaderStart = 12;
constexpr std::array<const char*, 7> kRawFields = {"n_layers", "n_q_heads", "n_kv_heads", "d_h",
                                                   "d_model",  "n_prompt",  "n_steps"};
constexpr std::array<const char*, 4> kImportanceFields = {"n_layers", "n_q_heads", "n_steps", "n_entries"};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            m_bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void dim(std::size_t v) {
        require(v <= 0xFFFFFFFFu, "encode_trace: dimension does not fit in 32 bits");
        u32(static_cast<std::uint32_t>(v));
    }
    void f32(double v) {
        const float f = static_cast<float>(v);
        require(std::isfinite(f), "encode_trace: value not representable as a finite float");
        u32(std::bit_cast<std::uint32_t>(f));
    }
    void matrix(const Matrix& m) {
        for (double x : m.data()) {
            f32(x);
        }
    }
    void magic(TraceKind kind) {
        m_bytes.insert(m_bytes.end(), std::begin(kTraceMagic), std::end(kTraceMagic));
        u32(kTraceVersion);
        u32(static_cast<std::uint32_t>(kind));
    }
    std::vector<std::uint8_t> take() { return std::move(m_bytes); }

private:
    std::vector<std::uint8_t> m_bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : m_bytes(bytes) {}

    std::uint32_t u32(const char* field) {
        if (m_pos + 4 > m_bytes.size()) {
            throw TraceFormatError(field, m_pos, "truncated: need 4 bytes, " +
                                                     std::to_string(m_bytes.size() - m_pos) + " left");
        }
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(m_bytes[m_pos + static_cast<std::size_t>(i)]) << (8 * i);
        }
        m_pos += 4;
        return v;
    }

    void matrix(Matrix& m, bool nonnegative) {
        for (double& x : m.data()) {
            const std::uint64_t at = m_pos;
            const float f = std::bit_cast<float>(u32("payload"));
            if (!std::isfinite(f) || (nonnegative && f < 0.0f)) {
                throw TraceFormatError("payload", at, nonnegative ? "value is negative or not finite"
                                                                  : "value is not finite");
            }
            x = static_cast<double>(f);
        }
    }

    std::uint64_t position() const { return m_pos; }
    std::uint64_t size() const { return m_bytes.size(); }

private:
    std::span<const std::uint8_t> m_bytes;
    std::uint64_t m_pos = 0;
};

// Payload size must match the header exactly; checked before any allocation.
void check_payload(const Reader& reader, unsigned __int128 floats) {
    const unsigned __int128 expected = floats * 4;
    if (expected > (static_cast<unsigned __int128>(1) << 62)) {
        throw TraceFormatError("header", kHeaderStart, "dimensions overflow the payload size");
    }
    const std::uint64_t available = reader.size() - reader.position();
    const auto needed = static_cast<std::uint64_t>(expected);
    if (available < needed) {
        throw TraceFormatError("payload", reader.size(), "truncated: header implies " + std::to_string(needed) +
                                                             " payload bytes, found " + std::to_string(available));
    }
    if (available > needed) {
        throw TraceFormatError("payload", reader.position() + needed,
                               "trailing data: " + std::to_string(available - needed) + " bytes after payload");
    }
}

void require_field(bool ok, std::size_t index, const char* name, const std::string& detail) {
    if (!ok) {
        throw TraceFormatError(name, kHeaderStart + 4 * index, detail);
    }
}

RawTrace decode_raw(Reader& reader) {
    std::array<std::size_t, 7> h{};
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = reader.u32(kRawFields[i]);
    }
    TraceDims dims{h[0], h[1], h[2], h[3], h[4], h[5], h[6]};
    require_field(dims.n_layers >= 1, 0, kRawFields[0], "must be >= 1");
    require_field(dims.n_q_heads >= 1, 1, kRawFields[1], "must be >= 1");
    require_field(dims.n_kv_heads >= 1 && dims.n_q_heads % dims.n_kv_heads == 0, 2, kRawFields[2],
                  "must be >= 1 and divide n_q_heads");
    require_field(dims.d_h >= 1, 3, kRawFields[3], "must be >= 1");
    require_field(dims.d_model == dims.n_q_heads * dims.d_h, 4, kRawFields[4], "must equal n_q_heads * d_h");
    require_field(dims.n_prompt >= 1, 5, kRawFields[5], "must be >= 1");

    using u128 = unsigned __int128;
    const u128 tokens = static_cast<u128>(dims.n_prompt) + dims.n_steps;
    const u128 per_layer = 2 * static_cast<u128>(dims.n_kv_heads) * tokens * dims.d_h +
                           static_cast<u128>(dims.n_q_heads) * tokens * dims.d_h +
                           static_cast<u128>(dims.n_q_heads) * dims.d_h * dims.d_model;
    check_payload(reader, per_layer * dims.n_layers);

    RawTrace trace;
    trace.dims = dims;
    trace.layers.resize(dims.n_layers);
    for (auto& layer : trace.layers) {
        for (std::size_t g = 0; g < dims.n_kv_heads; ++g) {
            layer.k.emplace_back(dims.tokens(), dims.d_h);
            reader.matrix(layer.k.back(), false);
            layer.v.emplace_back(dims.tokens(), dims.d_h);
            reader.matrix(layer.v.back(), false);
        }
        for (std::size_t q = 0; q < dims.n_q_heads; ++q) {
            layer.q.emplace_back(dims.tokens(), dims.d_h);
            reader.matrix(layer.q.back(), false);
        }
        layer.w_o = Matrix(dims.n_q_heads * dims.d_h, dims.d_model);
        reader.matrix(layer.w_o, false);
    }
    return trace;
}

ImportanceDump decode_importance(Reader& reader) {
    std::array<std::size_t, 4> h{};
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = reader.u32(kImportanceFields[i]);
    }
    for (std::size_t i = 0; i < h.size(); ++i) {
        require_field(h[i] >= 1, i, kImportanceFields[i], "must be >= 1");
    }
    using u128 = unsigned __int128;
    check_payload(reader, static_cast<u128>(h[0]) * h[1] * h[2] * h[3]);

    ImportanceDump dump{h[0], h[1], h[2], h[3], {}};
    dump.rows.resize(dump.n_layers);
    for (auto& layer : dump.rows) {
        for (std::size_t q = 0; q < dump.n_q_heads; ++q) {
            layer.emplace_back(dump.n_steps, dump.n_entries);
            reader.matrix(layer.back(), true);
        }
    }
    return dump;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open trace file '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Matrix rounded(const Matrix& m) {
    Matrix out = m;
    for (double& x : out.data()) {
        x = static_cast<double>(static_cast<float>(x));
    }
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_trace(const RawTrace& trace) {
    const auto& d = trace.dims;
    require(trace.layers.size() == d.n_layers, "encode_trace: layer count does not match dims");
    Writer w;
    w.magic(TraceKind::raw);
    for (std::size_t v : {d.n_layers, d.n_q_heads, d.n_kv_heads, d.d_h, d.d_model, d.n_prompt, d.n_steps}) {
        w.dim(v);
    }
    for (const auto& layer : trace.layers) {
        require(layer.k.size() == d.n_kv_heads && layer.v.size() == d.n_kv_heads && layer.q.size() == d.n_q_heads,
                "encode_trace: head count does not match dims");
        for (std::size_t g = 0; g < d.n_kv_heads; ++g) {
            require(layer.k[g].rows() == d.tokens() && layer.k[g].cols() == d.d_h &&
                        layer.v[g].rows() == d.tokens() && layer.v[g].cols() == d.d_h,
                    "encode_trace: K/V shape does not match dims");
            w.matrix(layer.k[g]);
            w.matrix(layer.v[g]);
        }
        for (const auto& q : layer.q) {
            require(q.rows() == d.tokens() && q.cols() == d.d_h, "encode_trace: Q shape does not match dims");
            w.matrix(q);
        }
        require(layer.w_o.rows() == d.n_q_heads * d.d_h && layer.w_o.cols() == d.d_model,
                "encode_trace: W_O shape does not match dims");
        w.matrix(layer.w_o);
    }
    return w.take();
}

std::vector<std::uint8_t> encode_trace(const ImportanceDump& dump) {
    require(dump.rows.size() == dump.n_layers, "encode_trace: layer count does not match dims");
    Writer w;
    w.magic(TraceKind::importance);
    for (std::size_t v : {dump.n_layers, dump.n_q_heads, dump.n_steps, dump.n_entries}) {
        w.dim(v);
    }
    for (const auto& layer : dump.rows) {
        require(layer.size() == dump.n_q_heads, "encode_trace: head count does not match dims");
        for (const auto& m : layer) {
            require(m.rows() == dump.n_steps && m.cols() == dump.n_entries,
                    "encode_trace: importance shape does not match dims");
            w.matrix(m);
        }
    }
    return w.take();
}

AnyTrace decode_trace(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(std::begin(kTraceMagic), std::end(kTraceMagic), bytes.begin())) {
        throw TraceFormatError("magic", 0, "expected \"DKVT\"");
    }
    Reader reader(bytes.subspan(0));
    reader.u32("magic");
    const std::uint32_t version = reader.u32("version");
    if (version != kTraceVersion) {
        throw TraceFormatError("version", 4, "unsupported version " + std::to_string(version));
    }
    const std::uint32_t kind = reader.u32("kind");
    switch (kind) {
        case static_cast<std::uint32_t>(TraceKind::raw):
            return decode_raw(reader);
        case static_cast<std::uint32_t>(TraceKind::importance):
            return decode_importance(reader);
        default:
            throw TraceFormatError("kind", 8, "unknown kind " + std::to_string(kind));
    }
}

void write_trace(const std::filesystem::path& path, const RawTrace& trace) {
    write_file_atomic(path, encode_trace(trace));
}

void write_trace(const std::filesystem::path& path, const ImportanceDump& dump) {
    write_file_atomic(path, encode_trace(dump));
}

AnyTrace read_trace(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    return decode_trace(bytes);
}

RawTrace round_to_f32(const RawTrace& trace) {
    RawTrace out;
    out.dims = trace.dims;
    for (const auto& layer : trace.layers) {
        LayerTrace lt;
        for (const auto& m : layer.k) lt.k.push_back(rounded(m));
        for (const auto& m : layer.v) lt.v.push_back(rounded(m));
        for (const auto& m : layer.q) lt.q.push_back(rounded(m));
        lt.w_o = rounded(layer.w_o);
        out.layers.push_back(std::move(lt));
    }
    return out;
}

ImportanceDump round_to_f32(const ImportanceDump& dump) {
    ImportanceDump out = dump;
    for (auto& layer : out.rows) {
        for (auto& m : layer) {
            m = rounded(m);
        }
    }
    return out;
}

RawTrace gen_synthetic(const ModelConfig& config, std::size_t prompt_len, std::size_t steps,
                       const SyntheticRegime& regime) {
    return run_trace(config, prompt_len, steps, regime).trace;
}

std::size_t planted_steady_count(const PlantedSpikeConfig& config) {
    require(config.n_entries >= 2 * config.window + 2, "planted spike: too few entries for the window");
    return (config.n_entries + 1) / 2 - config.window;
}

std::vector<std::size_t> planted_spike_positions(const PlantedSpikeConfig& config) {
    const std::size_t steady = planted_steady_count(config);
    const std::size_t prefix = config.n_entries - config.window;
    require(config.n_spikes >= 1 && config.n_spikes <= config.window,
            "planted spike: need between 1 and window spikes");
    require(prefix > steady + 8, "planted spike: no room for spikes after the steady block");
    const std::size_t spacing = (prefix - steady - 8) / config.n_spikes;
    require(spacing >= 6, "planted spike: spikes would overlap under pooling");
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s < config.n_spikes; ++s) {
        out.push_back(steady + 5 + s * spacing);
    }
    return out;
}

ImportanceDump gen_planted_spike(const PlantedSpikeConfig& config) {
    require(config.n_layers >= 1 && config.n_heads >= 1 && config.steps >= 1, "planted spike: empty shape");
    const std::size_t n = config.n_entries;
    const std::size_t m = config.window;
    const std::size_t steady = planted_steady_count(config);
    const std::size_t prefix = n - m;
    const auto spikes = planted_spike_positions(config);
    CounterRng rng(config.seed, streams::kSpikeFamily);

    std::vector<bool> spike_step(config.steps);
    bool any = false;
    for (std::size_t t = 0; t < config.steps; ++t) {
        spike_step[t] = rng.uniform() < config.spike_step_prob;
        any = any || spike_step[t];
    }
    if (!any) {
        spike_step[config.steps / 2] = true;
    }
    std::vector<bool> is_spike(n, false);
    for (std::size_t p : spikes) {
        is_spike[p] = true;
    }

    // Scales the weights of one group of entries in a row to a target total.
    auto fill_group = [&](std::span<double> row, auto&& member, double total) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (member(i)) {
                row[i] = 0.5 + rng.uniform();
                sum += row[i];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (member(i)) {
                row[i] *= total / sum;
            }
        }
    };

    ImportanceDump dump{config.n_layers, config.n_heads, m + config.steps, n, {}};
    dump.rows.resize(config.n_layers);
    for (auto& layer : dump.rows) {
        for (std::size_t h = 0; h < config.n_heads; ++h) {
            Matrix rows(m + config.steps, n);
            std::vector<double> steady_level(steady);
            for (double& x : steady_level) {
                x = 0.05 * (0.9 + 0.2 * rng.uniform());
            }
            // Each spike peaks in a distinct observation row.
            std::vector<std::size_t> peak_rows(m);
            for (std::size_t j = 0; j < m; ++j) {
                peak_rows[j] = j;
            }
            for (std::size_t j = m; j > 1; --j) {
                std::swap(peak_rows[j - 1], peak_rows[rng.below(j)]);
            }
            for (std::size_t j = 0; j < m; ++j) {
                auto row = rows.row(j);
                for (std::size_t i = 0; i < n; ++i) {
                    if (i < steady) {
                        row[i] = steady_level[i];
                    } else if (i < prefix) {
                        row[i] = 0.01 * (0.5 + rng.uniform());
                    } else {
                        row[i] = 0.1 * (0.5 + rng.uniform());
                    }
                }
            }
            for (std::size_t s = 0; s < spikes.size(); ++s) {
                rows(peak_rows[s], spikes[s]) = 1.0;
            }
            for (std::size_t t = 0; t < config.steps; ++t) {
                auto row = rows.row(m + t);
                fill_group(row, [&](std::size_t i) { return i >= prefix; }, 0.2);
                if (spike_step[t]) {
                    fill_group(row, [&](std::size_t i) { return is_spike[i]; }, 0.7);
                    fill_group(row, [&](std::size_t i) { return i < prefix && !is_spike[i]; }, 0.1);
                } else {
                    fill_group(row, [&](std::size_t i) { return i < steady; }, 0.7);
                    fill_group(row, [&](std::size_t i) { return i >= steady && i < prefix; }, 0.1);
                }
            }
            layer.push_back(std::move(rows));
        }
    }
    return dump;
}

}  // namespace kvlab
