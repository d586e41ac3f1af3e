#pragma once

// Shared small types and the error taxonomy used across the library.
// Every error category maps to a distinct process exit code so scripted
// runs can tell configuration mistakes from data corruption from
// training blow-ups.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace csiview {

// Exit codes reported by the CLI. 1 is reserved for argument-parse errors.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    config = 2,
    data_format = 3,
    dimension_mismatch = 4,
    divergence = 5,
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files, empty streams, unusable datasets.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss during training; carries epoch/batch context in the message.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;
};

inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

struct Rgb {
    float r = 0.0f;
    float g = 0.0f;
    float b = 0.0f;
    bool operator==(const Rgb&) const = default;
};

// Channel-wise Chebyshev distance; scenario palettes must keep this >= 0.2
// between any two pedestrians.
inline float color_separation(Rgb a, Rgb b) {
    float d = std::fabs(a.r - b.r);
    d = std::max(d, std::fabs(a.g - b.g));
    d = std::max(d, std::fabs(a.b - b.b));
    return d;
}

constexpr double kSpeedOfLight = 299'792'458.0;  // m/s

inline std::int64_t seconds_to_ns(double s) {
    return static_cast<std::int64_t>(std::llround(s * 1e9));
}

}  // namespace csiview
