#pragma once

// Capture dataset types and the on-disk directory layout:
//
//   <dir>/meta.json    scenario name, seed, rates, n_sensors, n_subcarriers
//   <dir>/csi.bin      magic "CSIB", u32 version=1, u64 n_records, then per
//                      record: u64 timestamp_ns, u16 sensor_id,
//                      u16 n_subcarriers, n_subcarriers x (f32 re, f32 im).
//                      All fields little-endian.
//   <dir>/frames/      %08d.ppm (P6, maxval 255)
//   <dir>/frames.csv   header "timestamp_ns,path"
//
// CSI values are stored as complex<float> in memory so the in-memory
// dataset and a disk round-trip carry identical values.

#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "csiview/binio.hpp"
#include "csiview/common.hpp"
#include "csiview/image.hpp"

namespace csiview {

struct CsiRecord {
    std::int64_t timestamp_ns = 0;
    int sensor_id = 0;
    std::vector<std::complex<float>> values;
};

struct DatasetMeta {
    std::string scenario;
    std::uint64_t seed = 0;
    double csi_rate_hz = 0.0;
    double frame_rate_fps = 0.0;
    int n_sensors = 0;
    int n_subcarriers = 0;
};

struct CaptureDataset {
    std::vector<CsiRecord> csi_records;  // ordered by (timestamp, sensor)
    std::vector<ImageFrame> frames;      // time-ordered
    DatasetMeta meta;
};

// binary helpers shared with the model format live in binio.hpp

// Streaming writer used by dataset generation so arbitrarily long captures
// never need to fit in memory. Records must arrive time-ordered.
class DatasetWriter {
public:
    DatasetWriter(const std::filesystem::path& dir, const DatasetMeta& meta)
        : dir_(dir), meta_(meta) {
        std::filesystem::create_directories(dir_ / "frames");
        csi_.open(dir_ / "csi.bin", std::ios::binary);
        if (!csi_) throw DataError("cannot open for write: " + (dir_ / "csi.bin").string());
        csi_ << "CSIB";
        io::put_u32(csi_, 1);
        io::put_u64(csi_, 0);  // patched in finish()
        frames_csv_.open(dir_ / "frames.csv");
        if (!frames_csv_)
            throw DataError("cannot open for write: " + (dir_ / "frames.csv").string());
        frames_csv_ << "timestamp_ns,path\n";
    }

    void add_record(const CsiRecord& rec) {
        io::put_u64(csi_, static_cast<std::uint64_t>(rec.timestamp_ns));
        io::put_u16(csi_, static_cast<std::uint16_t>(rec.sensor_id));
        io::put_u16(csi_, static_cast<std::uint16_t>(rec.values.size()));
        for (const auto& v : rec.values) {
            io::put_f32(csi_, v.real());
            io::put_f32(csi_, v.imag());
        }
        ++n_records_;
    }

    void add_frame(const ImageFrame& frame) {
        char name[32];
        std::snprintf(name, sizeof(name), "%08llu.ppm",
                      static_cast<unsigned long long>(n_frames_));
        write_ppm(frame, dir_ / "frames" / name);
        frames_csv_ << frame.timestamp_ns << ",frames/" << name << "\n";
        ++n_frames_;
    }

    void finish() {
        csi_.seekp(8);
        io::put_u64(csi_, n_records_);
        csi_.close();
        frames_csv_.close();
        nlohmann::json j;
        j["format_version"] = 1;
        j["scenario"] = meta_.scenario;
        j["seed"] = meta_.seed;
        j["csi_rate_hz"] = meta_.csi_rate_hz;
        j["frame_rate_fps"] = meta_.frame_rate_fps;
        j["n_sensors"] = meta_.n_sensors;
        j["n_subcarriers"] = meta_.n_subcarriers;
        std::ofstream meta_out(dir_ / "meta.json");
        meta_out << j.dump(2) << "\n";
    }

    std::uint64_t n_records() const { return n_records_; }
    std::uint64_t n_frames() const { return n_frames_; }

private:
    std::filesystem::path dir_;
    DatasetMeta meta_;
    std::ofstream csi_;
    std::ofstream frames_csv_;
    std::uint64_t n_records_ = 0;
    std::uint64_t n_frames_ = 0;
};

inline void write_dataset(const CaptureDataset& ds, const std::filesystem::path& dir) {
    DatasetWriter w(dir, ds.meta);
    for (const auto& r : ds.csi_records) w.add_record(r);
    for (const auto& f : ds.frames) w.add_frame(f);
    w.finish();
}

inline DatasetMeta read_meta(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw DataError("cannot open: " + (dir / "meta.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed meta.json: " + std::string(e.what()));
    }
    DatasetMeta m;
    try {
        m.scenario = j.at("scenario").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.csi_rate_hz = j.at("csi_rate_hz").get<double>();
        m.frame_rate_fps = j.at("frame_rate_fps").get<double>();
        m.n_sensors = j.at("n_sensors").get<int>();
        m.n_subcarriers = j.at("n_subcarriers").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("meta.json missing field: " + std::string(e.what()));
    }
    return m;
}

inline CaptureDataset read_dataset(const std::filesystem::path& dir) {
    CaptureDataset ds;
    ds.meta = read_meta(dir);

    io::Reader r(dir / "csi.bin");
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "CSIB")
        throw DataError((dir / "csi.bin").string() + ": bad magic at offset 0");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw DataError((dir / "csi.bin").string() + ": unsupported version " +
                        std::to_string(version));
    const std::uint64_t n_records = r.u64();
    ds.csi_records.reserve(n_records);
    for (std::uint64_t i = 0; i < n_records; ++i) {
        CsiRecord rec;
        rec.timestamp_ns = static_cast<std::int64_t>(r.u64());
        rec.sensor_id = r.u16();
        const int n_sub = r.u16();
        rec.values.resize(n_sub);
        for (int k = 0; k < n_sub; ++k) {
            const float re = r.f32();
            const float im = r.f32();
            rec.values[k] = {re, im};
        }
        ds.csi_records.push_back(std::move(rec));
    }
    if (!r.at_eof())
        throw DataError((dir / "csi.bin").string() + ": trailing bytes after " +
                        std::to_string(n_records) + " records");

    std::ifstream csv(dir / "frames.csv");
    if (!csv) throw DataError("cannot open: " + (dir / "frames.csv").string());
    std::string line;
    if (!std::getline(csv, line) || line != "timestamp_ns,path")
        throw DataError((dir / "frames.csv").string() + ": bad header");
    int line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError((dir / "frames.csv").string() + ": parse error at line " +
                            std::to_string(line_no));
        ImageFrame f = read_ppm(dir / line.substr(comma + 1));
        f.timestamp_ns = std::stoll(line.substr(0, comma));
        ds.frames.push_back(std::move(f));
    }
    return ds;
}

}  // namespace csiview
