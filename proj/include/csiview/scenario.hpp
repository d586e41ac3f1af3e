#pragma once

// Scenario scripting for the synthetic capture rig: room geometry,
// elliptical pedestrian trajectories, environment fingerprints, and the
// named presets (office plus industrial s1..s6). All industrial presets
// built from the same user seed share one environment fingerprint, so a
// run across s1..s6 sees a single consistent environment that differs
// from the office one.

#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "csiview/common.hpp"
#include "csiview/rng.hpp"

namespace csiview::sim {

struct RoomGeometry {
    double width_m = 0.0;
    double depth_m = 0.0;
    std::vector<Vec2> sensor_positions;
    Vec2 tx_position;
    Vec2 rx_position;  // traffic sink of the tx->rx link; not a CSI sensor

    bool contains(Vec2 p) const {
        return p.x >= 0.0 && p.x <= width_m && p.y >= 0.0 && p.y <= depth_m;
    }
};

enum class Direction { clockwise, counterclockwise };

struct Trajectory {
    Vec2 center;
    Vec2 semi_axes;     // (a, b) in meters
    double period_s = 0.0;
    Direction direction = Direction::clockwise;
    double phase_offset = 0.0;  // radians
};

struct Pedestrian {
    int id = 0;
    Rgb color;
    double radius_m = 0.0;
    Trajectory trajectory;
};

struct Reflector {
    Vec2 position;
    double coefficient = 0.0;  // in (0, 1]
};

struct EnvironmentFingerprint {
    // static_response[sensor * n_subcarriers + k]: the static channel term.
    std::vector<std::complex<double>> static_response;
    int n_sensors = 0;
    int n_subcarriers = 0;
    std::vector<Reflector> reflectors;
    double noise_sigma = 0.0;
    Rgb background_color;
    std::uint64_t rng_seed = 0;

    std::complex<double> h0(int sensor, int k) const {
        return static_response[static_cast<std::size_t>(sensor) * n_subcarriers + k];
    }
};

struct ScenarioSpec {
    std::string name;
    std::uint64_t seed = 0;  // user seed the preset was built from
    double duration_s = 0.0;
    std::vector<Pedestrian> pedestrians;
    EnvironmentFingerprint environment;
    RoomGeometry room;
};

// Position on the parametric ellipse at time t:
//   center + (a cos th, b sin th), th = phase_offset -/+ 2 pi t / period.
// Clockwise means decreasing angle in a y-down world frame viewed from
// above, i.e. the minus sign.
inline Vec2 pedestrian_position(const Trajectory& traj, double t) {
    const double sign = traj.direction == Direction::clockwise ? -1.0 : 1.0;
    const double th = traj.phase_offset + sign * 2.0 * std::numbers::pi * t / traj.period_s;
    return {traj.center.x + traj.semi_axes.x * std::cos(th),
            traj.center.y + traj.semi_axes.y * std::sin(th)};
}

namespace detail {

constexpr int kDefaultSensors = 4;
constexpr int kDefaultSubcarriers = 64;
constexpr double kPedestrianRadiusM = 0.3;

// Participant palette P1..P5; pairwise channel-wise separation >= 0.2.
inline Rgb participant_color(int id) {
    static const Rgb palette[5] = {
        {0.85f, 0.10f, 0.10f},  // P1
        {0.10f, 0.70f, 0.15f},  // P2
        {0.15f, 0.25f, 0.90f},  // P3
        {0.95f, 0.80f, 0.10f},  // P4
        {0.80f, 0.15f, 0.80f},  // P5
    };
    return palette[(id - 1) % 5];
}

inline RoomGeometry make_room(double width, double depth) {
    RoomGeometry room;
    room.width_m = width;
    room.depth_m = depth;
    room.sensor_positions = {
        {0.5, 0.5},
        {width - 0.5, 0.5},
        {0.5, depth - 0.5},
        {width - 0.5, depth - 0.5},
    };
    room.tx_position = {0.25, depth / 2.0};
    room.rx_position = {width - 0.25, depth / 2.0};
    return room;
}

inline EnvironmentFingerprint make_fingerprint(std::uint64_t env_seed, int n_reflectors,
                                               double noise_sigma, Rgb background,
                                               const RoomGeometry& room) {
    EnvironmentFingerprint env;
    env.rng_seed = env_seed;
    env.n_sensors = static_cast<int>(room.sensor_positions.size());
    env.n_subcarriers = kDefaultSubcarriers;
    env.noise_sigma = noise_sigma;
    env.background_color = background;
    env.static_response.resize(static_cast<std::size_t>(env.n_sensors) * env.n_subcarriers);
    for (int s = 0; s < env.n_sensors; ++s) {
        for (int k = 0; k < env.n_subcarriers; ++k) {
            const double mag = rng::uniform(rng::key(env_seed, 1, s, k), 0.5, 1.5);
            const double ph =
                rng::uniform(rng::key(env_seed, 2, s, k), 0.0, 2.0 * std::numbers::pi);
            env.static_response[static_cast<std::size_t>(s) * env.n_subcarriers + k] =
                std::polar(mag, ph);
        }
    }
    env.reflectors.reserve(n_reflectors);
    for (int j = 0; j < n_reflectors; ++j) {
        Reflector r;
        r.position.x = rng::uniform(rng::key(env_seed, 3, j), 0.3, room.width_m - 0.3);
        r.position.y = rng::uniform(rng::key(env_seed, 4, j), 0.3, room.depth_m - 0.3);
        r.coefficient = rng::uniform(rng::key(env_seed, 5, j), 0.2, 0.8);
        env.reflectors.push_back(r);
    }
    return env;
}

// Nested ellipses keep multi-pedestrian scenarios from stacking every disk
// on the same path. Sizes and periods are fixed per participant id; the
// scenario seed only perturbs the phase.
inline Pedestrian make_participant(int id, Direction dir, const RoomGeometry& room,
                                   std::uint64_t seed) {
    static const double kAxisFraction[5] = {0.80, 0.62, 0.46, 0.71, 0.54};
    static const double kPeriod[5] = {24.0, 27.0, 21.0, 30.0, 18.0};
    const int slot = (id - 1) % 5;
    const double margin = kPedestrianRadiusM + 0.2;
    Pedestrian p;
    p.id = id;
    p.color = participant_color(id);
    p.radius_m = kPedestrianRadiusM;
    p.trajectory.center = {room.width_m / 2.0, room.depth_m / 2.0};
    p.trajectory.semi_axes = {(room.width_m / 2.0 - margin) * kAxisFraction[slot],
                              (room.depth_m / 2.0 - margin) * kAxisFraction[slot]};
    p.trajectory.period_s = kPeriod[slot];
    p.trajectory.direction = dir;
    p.trajectory.phase_offset =
        rng::uniform(rng::key(seed, 7, id), 0.0, 2.0 * std::numbers::pi);
    return p;
}

}  // namespace detail

// Presets:
//   office          two ambient pedestrians, 1800 s, office fingerprint
//   s1..s6          industrial fingerprint shared across all six
inline ScenarioSpec build_scenario(const std::string& preset_name, std::uint64_t seed) {
    using namespace detail;
    ScenarioSpec spec;
    spec.name = preset_name;
    spec.seed = seed;

    const std::uint64_t office_env_seed = rng::key(seed, 101);
    const std::uint64_t industrial_env_seed = rng::key(seed, 202);

    if (preset_name == "office") {
        spec.duration_s = 1800.0;
        spec.room = make_room(6.0, 4.0);
        spec.environment = make_fingerprint(office_env_seed, 6, 0.02,
                                            {0.88f, 0.87f, 0.84f}, spec.room);
        Pedestrian a = make_participant(1, Direction::clockwise, spec.room, seed);
        a.id = 6;
        a.color = {0.30f, 0.45f, 0.70f};
        Pedestrian b = make_participant(2, Direction::counterclockwise, spec.room, seed);
        b.id = 7;
        b.color = {0.60f, 0.40f, 0.20f};
        spec.pedestrians = {a, b};
        return spec;
    }

    spec.room = make_room(5.8, 3.5);
    spec.environment = make_fingerprint(industrial_env_seed, 12, 0.05,
                                        {0.32f, 0.33f, 0.38f}, spec.room);
    const auto add = [&](int id, Direction dir) {
        spec.pedestrians.push_back(make_participant(id, dir, spec.room, seed));
    };
    if (preset_name == "s1") {
        spec.duration_s = 600.0;
        add(1, Direction::clockwise);
    } else if (preset_name == "s2") {
        spec.duration_s = 600.0;
        add(2, Direction::counterclockwise);
    } else if (preset_name == "s3") {
        spec.duration_s = 600.0;
        add(3, Direction::clockwise);
    } else if (preset_name == "s4") {
        spec.duration_s = 600.0;
        add(1, Direction::clockwise);
        add(2, Direction::clockwise);
        add(3, Direction::clockwise);
    } else if (preset_name == "s5") {
        spec.duration_s = 600.0;
        add(1, Direction::counterclockwise);
        add(4, Direction::counterclockwise);
        add(5, Direction::counterclockwise);
    } else if (preset_name == "s6") {
        spec.duration_s = 1200.0;
        add(1, Direction::clockwise);
        add(2, Direction::counterclockwise);
        add(3, Direction::clockwise);
        add(4, Direction::counterclockwise);
        add(5, Direction::clockwise);
    } else {
        throw ConfigError("unknown scenario preset: " + preset_name);
    }
    return spec;
}

}  // namespace csiview::sim
