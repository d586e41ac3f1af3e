#pragma once

// The synthetic capture rig. Replaces cameras and CSI sensors with two
// deterministic functions of (scenario, time):
//
//   render_frame     top-down orthographic raster of the room
//   synthesize_csi   toy multipath channel: static response plus one
//                    specular path per reflector and per pedestrian
//
// For subcarrier k at frequency f_k = f0 + k df, sensor s:
//
//   h_k = H0[s,k] + sum_j rho_j exp(-i 2 pi f_k (|tx - p_j| + |p_j - rx_s|) / c)
//
// with complex Gaussian noise of standard deviation noise_sigma per
// subcarrier. Noise is drawn from a counter-based generator keyed by
// (seed, timestamp, sensor, k), so records can be generated in any order
// and still come out bit-identical.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <vector>

#include "csiview/common.hpp"
#include "csiview/dataset.hpp"
#include "csiview/image.hpp"
#include "csiview/rng.hpp"
#include "csiview/scenario.hpp"

namespace csiview::sim {

constexpr double kBaseFrequencyHz = 5.18e9;     // 802.11ac channel 36 band
constexpr double kSubcarrierSpacingHz = 1.25e6; // 80 MHz spread over 64 bins
constexpr double kPedestrianReflectivity = 0.5;

constexpr double kDefaultCsiRateHz = 500.0;
constexpr double kDefaultFrameRateFps = 10.0;
constexpr int kDefaultRenderRes = 64;

// Top-down orthographic raster: pixel centers map to world coordinates,
// pedestrians are painted as disks in ascending id order so the higher id
// wins overlaps. Output values in [0,1].
inline ImageFrame render_frame(const ScenarioSpec& spec, double t, int height, int width) {
    if (height < 8 || width < 8) throw DimensionError("render_frame: resolution must be >= 8");
    ImageFrame img = ImageFrame::filled(height, width, spec.environment.background_color,
                                        seconds_to_ns(t));
    std::vector<Pedestrian> peds = spec.pedestrians;
    std::sort(peds.begin(), peds.end(),
              [](const Pedestrian& a, const Pedestrian& b) { return a.id < b.id; });
    const double px_w = spec.room.width_m / width;
    const double px_h = spec.room.depth_m / height;
    for (const auto& ped : peds) {
        const Vec2 pos = pedestrian_position(ped.trajectory, t);
        // only touch the bounding box of the disk
        const int c0 = std::max(0, static_cast<int>((pos.x - ped.radius_m) / px_w) - 1);
        const int c1 = std::min(width - 1, static_cast<int>((pos.x + ped.radius_m) / px_w) + 1);
        const int r0 = std::max(0, static_cast<int>((pos.y - ped.radius_m) / px_h) - 1);
        const int r1 = std::min(height - 1, static_cast<int>((pos.y + ped.radius_m) / px_h) + 1);
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                const Vec2 world{(c + 0.5) * px_w, (r + 0.5) * px_h};
                if (distance(world, pos) <= ped.radius_m) {
                    img.at(r, c, 0) = ped.color.r;
                    img.at(r, c, 1) = ped.color.g;
                    img.at(r, c, 2) = ped.color.b;
                }
            }
        }
    }
    return img;
}

namespace detail {

// Static reflectors never move, so their per-(sensor, subcarrier) path sum
// can be folded into the static response once per scenario.
struct ChannelCache {
    std::vector<std::complex<double>> static_part;  // [sensor * n_sub + k]
    int n_subcarriers = 0;

    ChannelCache(const ScenarioSpec& spec) {
        const auto& env = spec.environment;
        n_subcarriers = env.n_subcarriers;
        static_part.resize(static_cast<std::size_t>(env.n_sensors) * n_subcarriers);
        for (int s = 0; s < env.n_sensors; ++s) {
            const Vec2 rx = spec.room.sensor_positions[s];
            for (int k = 0; k < n_subcarriers; ++k) {
                std::complex<double> h = env.h0(s, k);
                const double fk = kBaseFrequencyHz + k * kSubcarrierSpacingHz;
                for (const auto& ref : env.reflectors) {
                    const double tau = (distance(spec.room.tx_position, ref.position) +
                                        distance(ref.position, rx)) /
                                       kSpeedOfLight;
                    h += std::polar(ref.coefficient,
                                    -2.0 * std::numbers::pi * fk * tau);
                }
                static_part[static_cast<std::size_t>(s) * n_subcarriers + k] = h;
            }
        }
    }
};

inline CsiRecord synthesize_csi_cached(const ScenarioSpec& spec, const ChannelCache& cache,
                                       std::int64_t timestamp_ns, int sensor_index) {
    const auto& env = spec.environment;
    const double t = static_cast<double>(timestamp_ns) * 1e-9;
    const Vec2 rx = spec.room.sensor_positions[sensor_index];

    std::vector<double> ped_tau(spec.pedestrians.size());
    for (std::size_t j = 0; j < spec.pedestrians.size(); ++j) {
        const Vec2 pos = pedestrian_position(spec.pedestrians[j].trajectory, t);
        ped_tau[j] = (distance(spec.room.tx_position, pos) + distance(pos, rx)) /
                     kSpeedOfLight;
    }

    CsiRecord rec;
    rec.timestamp_ns = timestamp_ns;
    rec.sensor_id = sensor_index;
    rec.values.resize(env.n_subcarriers);
    for (int k = 0; k < env.n_subcarriers; ++k) {
        const double fk = kBaseFrequencyHz + k * kSubcarrierSpacingHz;
        std::complex<double> h =
            cache.static_part[static_cast<std::size_t>(sensor_index) * env.n_subcarriers + k];
        for (const double tau : ped_tau)
            h += std::polar(kPedestrianReflectivity, -2.0 * std::numbers::pi * fk * tau);
        if (env.noise_sigma > 0.0) {
            double g0, g1;
            rng::gaussian_pair(
                rng::key(env.rng_seed, 9, static_cast<std::uint64_t>(timestamp_ns),
                         static_cast<std::uint64_t>(sensor_index), static_cast<std::uint64_t>(k)),
                g0, g1);
            // complex std = noise_sigma: each component gets sigma / sqrt(2)
            const double cs = env.noise_sigma * std::numbers::sqrt2 / 2.0;
            h += std::complex<double>(cs * g0, cs * g1);
        }
        rec.values[k] = {static_cast<float>(h.real()), static_cast<float>(h.imag())};
    }
    return rec;
}

}  // namespace detail

inline CsiRecord synthesize_csi(const ScenarioSpec& spec, double t, int sensor_index) {
    if (sensor_index < 0 || sensor_index >= spec.environment.n_sensors)
        throw DimensionError("synthesize_csi: sensor index out of range");
    detail::ChannelCache cache(spec);
    return detail::synthesize_csi_cached(spec, cache, seconds_to_ns(t), sensor_index);
}

// Capture-clock schedule. CSI records sit on exact multiples of the sample
// interval; frame timestamps get a deterministic uniform jitter modelling
// imperfect NTP sync, +-2 ms at 10 fps (never more than a quarter interval,
// and frame 0 is clamped at zero so timestamps stay non-negative).
inline std::int64_t csi_timestamp_ns(std::uint64_t index, double rate_hz) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(index) * 1e9 / rate_hz));
}

inline std::int64_t frame_timestamp_ns(std::uint64_t index, double fps, std::uint64_t seed) {
    const std::int64_t nominal =
        static_cast<std::int64_t>(std::llround(static_cast<double>(index) * 1e9 / fps));
    const double jitter_ms = std::min(2.0, 250.0 / fps);
    const double jitter =
        rng::uniform(rng::key(seed, 11, index), -jitter_ms * 1e6, jitter_ms * 1e6);
    return std::max<std::int64_t>(0, nominal + static_cast<std::int64_t>(std::llround(jitter)));
}

// Streaming generation: emits records and frames in timestamp order through
// the two sinks. Used both for in-memory datasets and for writing paper-
// scale captures straight to disk.
inline void generate_stream(const ScenarioSpec& spec, double csi_rate_hz, double frame_rate_fps,
                            int render_res,
                            const std::function<void(const CsiRecord&)>& on_record,
                            const std::function<void(const ImageFrame&)>& on_frame) {
    if (csi_rate_hz <= 0.0 || frame_rate_fps <= 0.0)
        throw ConfigError("generate_stream: rates must be positive");
    const auto n_csi = static_cast<std::uint64_t>(spec.duration_s * csi_rate_hz);
    const auto n_frames = static_cast<std::uint64_t>(spec.duration_s * frame_rate_fps);
    const int n_sensors = spec.environment.n_sensors;
    detail::ChannelCache cache(spec);

    std::uint64_t frame_idx = 0;
    std::int64_t next_frame_ts =
        n_frames > 0 ? frame_timestamp_ns(0, frame_rate_fps, spec.seed) : -1;
    for (std::uint64_t i = 0; i < n_csi; ++i) {
        const std::int64_t ts = csi_timestamp_ns(i, csi_rate_hz);
        while (frame_idx < n_frames && next_frame_ts <= ts) {
            ImageFrame f = render_frame(spec, static_cast<double>(next_frame_ts) * 1e-9,
                                        render_res, render_res);
            f.timestamp_ns = next_frame_ts;
            on_frame(f);
            ++frame_idx;
            if (frame_idx < n_frames)
                next_frame_ts = frame_timestamp_ns(frame_idx, frame_rate_fps, spec.seed);
        }
        for (int s = 0; s < n_sensors; ++s)
            on_record(detail::synthesize_csi_cached(spec, cache, ts, s));
    }
    while (frame_idx < n_frames) {
        ImageFrame f = render_frame(spec, static_cast<double>(next_frame_ts) * 1e-9,
                                    render_res, render_res);
        f.timestamp_ns = next_frame_ts;
        on_frame(f);
        ++frame_idx;
        if (frame_idx < n_frames)
            next_frame_ts = frame_timestamp_ns(frame_idx, frame_rate_fps, spec.seed);
    }
}

inline CaptureDataset generate_dataset(const ScenarioSpec& spec, double csi_rate_hz,
                                       double frame_rate_fps,
                                       int render_res = kDefaultRenderRes) {
    CaptureDataset ds;
    ds.meta.scenario = spec.name;
    ds.meta.seed = spec.seed;
    ds.meta.csi_rate_hz = csi_rate_hz;
    ds.meta.frame_rate_fps = frame_rate_fps;
    ds.meta.n_sensors = spec.environment.n_sensors;
    ds.meta.n_subcarriers = spec.environment.n_subcarriers;
    generate_stream(
        spec, csi_rate_hz, frame_rate_fps, render_res,
        [&](const CsiRecord& r) { ds.csi_records.push_back(r); },
        [&](const ImageFrame& f) { ds.frames.push_back(f); });
    return ds;
}

inline void generate_dataset_to_dir(const ScenarioSpec& spec, double csi_rate_hz,
                                    double frame_rate_fps, int render_res,
                                    const std::filesystem::path& dir,
                                    std::uint64_t* n_records_out = nullptr,
                                    std::uint64_t* n_frames_out = nullptr) {
    DatasetMeta meta;
    meta.scenario = spec.name;
    meta.seed = spec.seed;
    meta.csi_rate_hz = csi_rate_hz;
    meta.frame_rate_fps = frame_rate_fps;
    meta.n_sensors = spec.environment.n_sensors;
    meta.n_subcarriers = spec.environment.n_subcarriers;
    DatasetWriter w(dir, meta);
    generate_stream(
        spec, csi_rate_hz, frame_rate_fps, render_res,
        [&](const CsiRecord& r) { w.add_record(r); },
        [&](const ImageFrame& f) { w.add_frame(f); });
    w.finish();
    if (n_records_out) *n_records_out = w.n_records();
    if (n_frames_out) *n_frames_out = w.n_frames();
}

}  // namespace csiview::sim
