#pragma once

// Preprocessing between raw captures and the model: amplitude extraction,
// causal low-pass filtering, bisection timestamp alignment, image resize,
// and slicing the aligned stream into fixed-length time slots.
//
// Alignment policy: every frame is matched to the nearest CSI record per
// sensor by binary search, exact-midpoint ties resolving to the earlier
// record. Frames whose best gap exceeds half the nominal frame interval,
// or that lack window_len samples of history, are dropped and counted —
// never silently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "csiview/common.hpp"
#include "csiview/dataset.hpp"
#include "csiview/image.hpp"

namespace csiview::ingest {

// |z| per subcarrier; the phase never goes downstream.
inline std::vector<double> amplitude(const CsiRecord& record) {
    std::vector<double> out(record.values.size());
    for (std::size_t k = 0; k < record.values.size(); ++k) {
        const double re = record.values[k].real();
        const double im = record.values[k].imag();
        out[k] = std::sqrt(re * re + im * im);
    }
    return out;
}

// Causal moving average: out[n] = mean(in[max(0, n-W+1) .. n]).
inline std::vector<double> lowpass(const std::vector<double>& series, int window) {
    if (window < 1) throw ConfigError("lowpass: window must be >= 1");
    std::vector<double> out(series.size());
    double acc = 0.0;
    for (std::size_t n = 0; n < series.size(); ++n) {
        acc += series[n];
        if (n >= static_cast<std::size_t>(window)) acc -= series[n - window];
        const auto len = std::min<std::size_t>(n + 1, window);
        out[n] = acc / static_cast<double>(len);
    }
    return out;
}

// Nearest index in a strictly increasing list, earlier element on ties.
// O(log n) probes.
inline std::size_t nearest_index(const std::vector<std::int64_t>& sorted, std::int64_t value) {
    const auto it = std::lower_bound(sorted.begin(), sorted.end(), value);
    if (it == sorted.begin()) return 0;
    if (it == sorted.end()) return sorted.size() - 1;
    const std::size_t hi = static_cast<std::size_t>(it - sorted.begin());
    const std::size_t lo = hi - 1;
    return (value - sorted[lo]) <= (sorted[hi] - value) ? lo : hi;
}

struct AlignResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (frame_index, csi_index)
    std::size_t dropped = 0;
};

// max_gap_ns: frames whose best |dt| exceeds this are dropped (pass the
// half frame interval; int64 max disables the rule).
inline AlignResult align(const std::vector<std::int64_t>& frame_timestamps,
                         const std::vector<std::int64_t>& csi_timestamps,
                         std::int64_t max_gap_ns = std::numeric_limits<std::int64_t>::max()) {
    if (csi_timestamps.empty()) throw DataError("align: empty CSI timestamp list");
    AlignResult result;
    result.pairs.reserve(frame_timestamps.size());
    for (std::size_t f = 0; f < frame_timestamps.size(); ++f) {
        const std::size_t c = nearest_index(csi_timestamps, frame_timestamps[f]);
        const std::int64_t gap = std::llabs(frame_timestamps[f] - csi_timestamps[c]);
        if (gap > max_gap_ns) {
            ++result.dropped;
            continue;
        }
        result.pairs.emplace_back(f, c);
    }
    return result;
}

// [n_channels x n_subcarriers x window_len] of non-negative amplitudes.
struct AmplitudeWindow {
    int n_channels = 0;
    int n_subcarriers = 0;
    int window_len = 0;
    std::int64_t anchor_timestamp_ns = 0;  // aligned CSI timestamp of channel 0
    std::vector<float> values;             // [ch][sub][time]

    float& at(int ch, int sub, int t) {
        return values[(static_cast<std::size_t>(ch) * n_subcarriers + sub) * window_len + t];
    }
    float at(int ch, int sub, int t) const {
        return values[(static_cast<std::size_t>(ch) * n_subcarriers + sub) * window_len + t];
    }
};

struct AlignedPair {
    AmplitudeWindow window;
    ImageFrame frame;
    std::int64_t time_gap_ns = 0;  // max over channels of |frame ts - aligned ts|
};

struct IngestParams {
    int window_len = 50;    // csi_rate / frame_rate at the default rates
    int lowpass_window = 5;
    int image_h = 32;
    int image_w = 32;
};

struct IngestStats {
    std::size_t frames_in = 0;
    std::size_t dropped_gap = 0;
    std::size_t dropped_history = 0;
    std::size_t pairs_out = 0;
};

// Per frame: align to the nearest CSI timestamp per sensor, slice the
// window_len most recent amplitude vectors ending at the aligned index,
// low-pass each subcarrier series inside the slice, stack sensors as
// channels, and resize the frame to the model's input resolution.
inline std::vector<AlignedPair> build_windows(const CaptureDataset& dataset,
                                              const IngestParams& params,
                                              IngestStats* stats_out = nullptr) {
    if (params.window_len < 1) throw ConfigError("build_windows: window_len must be >= 1");
    if (dataset.csi_records.empty() || dataset.frames.empty())
        throw DataError("build_windows: dataset has no records or no frames");

    const int n_sensors = dataset.meta.n_sensors;
    const int n_sub = dataset.meta.n_subcarriers;

    // split records per sensor, amplitudes precomputed
    std::vector<std::vector<std::int64_t>> ts(n_sensors);
    std::vector<std::vector<std::vector<double>>> amp(n_sensors);
    for (const auto& rec : dataset.csi_records) {
        if (rec.sensor_id < 0 || rec.sensor_id >= n_sensors)
            throw DataError("build_windows: sensor id " + std::to_string(rec.sensor_id) +
                            " outside meta.n_sensors");
        if (static_cast<int>(rec.values.size()) != n_sub)
            throw DataError("build_windows: record subcarrier count mismatch");
        ts[rec.sensor_id].push_back(rec.timestamp_ns);
        amp[rec.sensor_id].push_back(amplitude(rec));
    }
    for (int s = 0; s < n_sensors; ++s)
        if (ts[s].empty())
            throw DataError("build_windows: sensor " + std::to_string(s) + " has no records");

    const std::int64_t half_interval =
        static_cast<std::int64_t>(std::llround(0.5e9 / dataset.meta.frame_rate_fps));

    IngestStats stats;
    stats.frames_in = dataset.frames.size();
    std::vector<AlignedPair> out;
    for (const auto& frame : dataset.frames) {
        std::vector<std::size_t> idx(n_sensors);
        std::int64_t worst_gap = 0;
        bool gap_ok = true, history_ok = true;
        for (int s = 0; s < n_sensors && gap_ok; ++s) {
            idx[s] = nearest_index(ts[s], frame.timestamp_ns);
            const std::int64_t gap = std::llabs(frame.timestamp_ns - ts[s][idx[s]]);
            worst_gap = std::max(worst_gap, gap);
            if (gap > half_interval) gap_ok = false;
            if (idx[s] + 1 < static_cast<std::size_t>(params.window_len)) history_ok = false;
        }
        if (!gap_ok) {
            ++stats.dropped_gap;
            continue;
        }
        if (!history_ok) {
            ++stats.dropped_history;
            continue;
        }

        AlignedPair pair;
        pair.window.n_channels = n_sensors;
        pair.window.n_subcarriers = n_sub;
        pair.window.window_len = params.window_len;
        pair.window.anchor_timestamp_ns = ts[0][idx[0]];
        pair.window.values.resize(static_cast<std::size_t>(n_sensors) * n_sub *
                                  params.window_len);
        std::vector<double> series(params.window_len);
        for (int s = 0; s < n_sensors; ++s) {
            const std::size_t first = idx[s] + 1 - params.window_len;
            for (int k = 0; k < n_sub; ++k) {
                for (int t = 0; t < params.window_len; ++t)
                    series[t] = amp[s][first + t][k];
                const std::vector<double> filtered = lowpass(series, params.lowpass_window);
                for (int t = 0; t < params.window_len; ++t)
                    pair.window.at(s, k, t) = static_cast<float>(filtered[t]);
            }
        }
        pair.frame = (frame.height == params.image_h && frame.width == params.image_w)
                         ? frame
                         : resize_image(frame, params.image_h, params.image_w);
        pair.time_gap_ns = worst_gap;
        out.push_back(std::move(pair));
    }
    stats.pairs_out = out.size();
    if (stats_out) *stats_out = stats;
    if (out.empty()) throw DataError("build_windows: zero usable frames");
    return out;
}

struct SlotBatch {
    int slot_index = 0;
    std::vector<AlignedPair> pairs;
};

// Half-open slots [t L, (t+1) L) keyed by frame timestamp; empty slots in
// the covered range are preserved as empty batches.
inline std::vector<SlotBatch> make_slots(const std::vector<AlignedPair>& pairs,
                                         double slot_len_s) {
    if (slot_len_s <= 0.0) throw ConfigError("make_slots: slot length must be positive");
    const std::int64_t slot_ns = seconds_to_ns(slot_len_s);
    std::int64_t max_ts = 0;
    for (const auto& p : pairs) max_ts = std::max(max_ts, p.frame.timestamp_ns);
    const int n_slots = pairs.empty() ? 0 : static_cast<int>(max_ts / slot_ns) + 1;
    std::vector<SlotBatch> slots(n_slots);
    for (int i = 0; i < n_slots; ++i) slots[i].slot_index = i;
    for (const auto& p : pairs) {
        const int t = static_cast<int>(p.frame.timestamp_ns / slot_ns);
        slots[t].pairs.push_back(p);
    }
    return slots;
}

}  // namespace csiview::ingest
