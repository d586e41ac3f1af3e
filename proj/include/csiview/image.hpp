#pragma once

// ImageFrame: a timestamped H x W x 3 raster with channel values in [0,1],
// stored row-major interleaved (r,g,b per pixel). Binary PPM (P6) is the
// on-disk format; quantisation to 8 bits happens only at the file boundary.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "csiview/common.hpp"

namespace csiview {

struct ImageFrame {
    std::int64_t timestamp_ns = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height * width * 3, interleaved rgb

    static ImageFrame filled(int h, int w, Rgb c, std::int64_t ts = 0) {
        ImageFrame f;
        f.timestamp_ns = ts;
        f.height = h;
        f.width = w;
        f.data.resize(static_cast<std::size_t>(h) * w * 3);
        for (std::size_t p = 0; p < f.data.size(); p += 3) {
            f.data[p] = c.r;
            f.data[p + 1] = c.g;
            f.data[p + 2] = c.b;
        }
        return f;
    }

    float& at(int row, int col, int ch) {
        return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
    }
    float at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

    bool same_shape(const ImageFrame& o) const {
        return height == o.height && width == o.width;
    }
};

inline std::uint8_t quantize_u8(float v) {
    if (v <= 0.0f) return 0;
    if (v >= 1.0f) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

inline void write_ppm(const ImageFrame& frame, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
    std::vector<std::uint8_t> bytes(frame.data.size());
    for (std::size_t i = 0; i < frame.data.size(); ++i) bytes[i] = quantize_u8(frame.data[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write: " + path.string());
}

inline ImageFrame read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError("not a P6 ppm: " + path.string());
    int w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (!in || w < 1 || h < 1) throw DataError("bad ppm header: " + path.string());
    if (maxval != 255) throw DataError("unsupported ppm maxval: " + path.string());
    in.get();  // single whitespace after maxval
    ImageFrame f;
    f.height = h;
    f.width = w;
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw DataError("truncated ppm payload: " + path.string());
    f.data.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        f.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    return f;
}

// Nearest-neighbor resize; source index = floor((i + 0.5) * src / dst).
inline ImageFrame resize_image(const ImageFrame& src, int out_h, int out_w) {
    if (src.height < 1 || src.width < 1 || out_h < 1 || out_w < 1)
        throw DimensionError("resize_image: dimensions must be >= 1");
    ImageFrame out;
    out.timestamp_ns = src.timestamp_ns;
    out.height = out_h;
    out.width = out_w;
    out.data.resize(static_cast<std::size_t>(out_h) * out_w * 3);
    for (int r = 0; r < out_h; ++r) {
        const int sr = static_cast<int>((r + 0.5) * src.height / out_h);
        for (int c = 0; c < out_w; ++c) {
            const int sc = static_cast<int>((c + 0.5) * src.width / out_w);
            for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = src.at(sr, sc, ch);
        }
    }
    return out;
}

}  // namespace csiview
