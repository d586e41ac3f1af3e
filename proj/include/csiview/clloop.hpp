#pragma once

// The threshold-gated continual-learning loop and the snapshot-based
// serving side.
//
// Training side, per time slot t: predict with the previous model, score
// the predictions against the slot's ground-truth frames, and if the score
// fails the threshold gate, fine-tune on the slot's pairs to obtain the
// next model; otherwise carry the model forward unchanged. After every
// slot the latest model is published to the serving state.
//
// Serving side: any number of readers may take an immutable snapshot of
// the latest model at any time; a snapshot never changes afterwards, no
// matter what the training side does. Single writer, many readers.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "csiview/common.hpp"
#include "csiview/ingest.hpp"
#include "csiview/metrics.hpp"
#include "csiview/model.hpp"
#include "csiview/parallel.hpp"

namespace csiview::cl {

struct Threshold {
    double ssim_min = 0.9;
    double psnr_min_db = 28.0;
};

// True means update. Fires when either metric falls strictly below its
// threshold; an infinite PSNR compares greater than any finite threshold.
inline bool gate(const metrics::QualityScore& score, const Threshold& th) {
    if (score.n_pairs < 1) throw DataError("gate: undefined score (no pairs)");
    return score.mean_ssim < th.ssim_min || score.mean_psnr_db < th.psnr_min_db;
}

struct SlotReport {
    int slot_index = 0;
    std::optional<metrics::QualityScore> score_before;  // absent for empty slots
    bool updated = false;
    int epochs_run = 0;
    std::optional<metrics::QualityScore> score_after;
    double wall_time_s = 0.0;
};

class ServingState {
public:
    explicit ServingState(net::Model initial) : latest_(std::move(initial)) {}

    // Single-writer side: replaces the served model (one replacement per slot).
    void publish(const net::Model& model) {
        const std::lock_guard<std::mutex> lock(mutex_);
        latest_ = model;
        ++generation_;
    }

    // Reader side: immutable copy of the latest model as of some instant.
    net::Model snapshot() const {
        const std::lock_guard<std::mutex> lock(mutex_);
        return latest_;
    }

    std::uint64_t generation() const {
        const std::lock_guard<std::mutex> lock(mutex_);
        return generation_;
    }

private:
    mutable std::mutex mutex_;
    net::Model latest_;
    std::uint64_t generation_ = 0;
};

inline net::Model snapshot(const ServingState& serving) { return serving.snapshot(); }

// Element-wise forward passes, order preserved.
inline std::vector<ImageFrame> infer(const net::Model& model,
                                     std::span<const ingest::AmplitudeWindow> windows) {
    const auto& h = model.hyper;
    for (const auto& w : windows)
        if (w.n_channels != h.n_channels || w.n_subcarriers != h.n_subcarriers ||
            w.window_len != h.window_len)
            throw DimensionError("infer: window dimensions do not match the model");
    std::vector<ImageFrame> out(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) { out[i] = net::forward(model, windows[i]); });
    return out;
}

namespace detail {

inline metrics::QualityScore score_predictions(const net::Model& model,
                                               const std::vector<ingest::AlignedPair>& pairs,
                                               const metrics::SsimConfig& cfg) {
    std::vector<ImageFrame> preds(pairs.size());
    parallel_for(pairs.size(),
                 [&](std::size_t i) { preds[i] = net::forward(model, pairs[i].window); });
    std::vector<ImageFrame> truths;
    truths.reserve(pairs.size());
    for (const auto& p : pairs) truths.push_back(p.frame);
    return metrics::score_slot(preds, truths, cfg);
}

}  // namespace detail

struct RunResult {
    net::Model final_model;
    std::vector<SlotReport> reports;
};

inline RunResult run_cl(const net::Model& initial,
                        const std::vector<ingest::SlotBatch>& slots, const Threshold& th,
                        const net::TrainConfig& update_cfg, ServingState& serving,
                        const metrics::SsimConfig& ssim_cfg = {}) {
    RunResult result;
    result.final_model = initial;
    result.reports.reserve(slots.size());
    for (const auto& slot : slots) {
        const auto t0 = std::chrono::steady_clock::now();
        SlotReport report;
        report.slot_index = slot.slot_index;
        if (!slot.pairs.empty()) {
            report.score_before =
                detail::score_predictions(result.final_model, slot.pairs, ssim_cfg);
            if (gate(*report.score_before, th)) {
                try {
                    result.final_model =
                        net::train_epochs(result.final_model, slot.pairs, update_cfg);
                } catch (const DivergenceError& e) {
                    throw DivergenceError("slot " + std::to_string(slot.slot_index) + ": " +
                                          e.what());
                }
                report.updated = true;
                report.epochs_run = update_cfg.epochs;
                report.score_after =
                    detail::score_predictions(result.final_model, slot.pairs, ssim_cfg);
            }
        }
        serving.publish(result.final_model);
        report.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.reports.push_back(std::move(report));
    }
    return result;
}

// ---- per-slot report CSV ----------------------------------------------
// header: slot,ssim_before,psnr_before,updated,epochs,ssim_after,psnr_after,wall_s
// +inf PSNR is written as "inf"; absent scores leave their fields empty.

inline constexpr const char* kReportHeader =
    "slot,ssim_before,psnr_before,updated,epochs,ssim_after,psnr_after,wall_s";

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline void write_report_csv(const std::vector<SlotReport>& reports,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for write: " + path.string());
    out << kReportHeader << "\n";
    for (const auto& r : reports) {
        out << r.slot_index << ",";
        if (r.score_before)
            out << format_metric(r.score_before->mean_ssim) << ","
                << format_metric(r.score_before->mean_psnr_db) << ",";
        else
            out << ",,";
        out << (r.updated ? 1 : 0) << "," << r.epochs_run << ",";
        if (r.score_after)
            out << format_metric(r.score_after->mean_ssim) << ","
                << format_metric(r.score_after->mean_psnr_db) << ",";
        else
            out << ",,";
        out << format_metric(r.wall_time_s) << "\n";
    }
}

inline std::vector<SlotReport> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        throw DataError(path.string() + ": bad or missing header at line 1");
    std::vector<SlotReport> reports;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (fields.size() != 8)
            throw DataError(path.string() + ": expected 8 fields at line " +
                            std::to_string(line_no));
        try {
            SlotReport r;
            r.slot_index = std::stoi(fields[0]);
            if (!fields[1].empty()) {
                metrics::QualityScore s;
                s.mean_ssim = std::stod(fields[1]);
                s.mean_psnr_db = std::stod(fields[2]);
                s.n_pairs = 1;  // pair count is not serialized
                r.score_before = s;
            }
            r.updated = std::stoi(fields[3]) != 0;
            r.epochs_run = std::stoi(fields[4]);
            if (!fields[5].empty()) {
                metrics::QualityScore s;
                s.mean_ssim = std::stod(fields[5]);
                s.mean_psnr_db = std::stod(fields[6]);
                s.n_pairs = 1;
                r.score_after = s;
            }
            r.wall_time_s = std::stod(fields[7]);
            reports.push_back(r);
        } catch (const std::exception&) {
            throw DataError(path.string() + ": parse error at line " + std::to_string(line_no));
        }
    }
    return reports;
}

}  // namespace csiview::cl
