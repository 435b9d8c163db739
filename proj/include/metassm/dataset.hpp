#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metassm/binary_io.hpp"
#include "metassm/rng.hpp"
#include "metassm/tensor.hpp"
#include "metassm/vdp.hpp"

namespace metassm {

struct SourceDataset {
    std::vector<Trajectory> trajectories;
    double theta_low = 0.5;
    double theta_high = 2.0;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;

    std::size_t size() const { return trajectories.size(); }
};

// Data-collection protocol: damping from theta-range, initial state from
// [-1,1]^2, final time from [10,40] s, fixed 0.01 s sampling period.
struct DataProtocol {
    double x0_low = -1.0;
    double x0_high = 1.0;
    double t_final_low = 10.0;
    double t_final_high = 40.0;
    double dt = 0.01;
};

// Deterministic in (arguments, seed). Per-system draw order is frozen:
// theta, x0[0], x0[1], t_final.
inline SourceDataset generate_source_dataset(std::size_t n_systems, double theta_low,
                                             double theta_high, std::uint64_t seed,
                                             const DataProtocol& proto = {}) {
    if (n_systems < 1) throw ValidationError("generate: n_systems must be >= 1");
    if (!(theta_low <= theta_high)) {
        throw ValidationError("generate: theta range low must not exceed high");
    }
    SourceDataset ds;
    ds.theta_low = theta_low;
    ds.theta_high = theta_high;
    ds.seed = seed;
    ds.trajectories.reserve(n_systems);
    for (std::size_t i = 0; i < n_systems; ++i) {
        Rng rng(derive_seed(seed, stream::dataset, i));
        SystemParams p;
        p.theta = rng.uniform(theta_low, theta_high);
        p.x0 = {rng.uniform(proto.x0_low, proto.x0_high),
                rng.uniform(proto.x0_low, proto.x0_high)};
        p.t_final = rng.uniform(proto.t_final_low, proto.t_final_high);
        p.dt = proto.dt;
        ds.trajectories.push_back(simulate(p));
    }
    return ds;
}

inline Trajectory generate_query(double theta = 1.572, State2 x0 = {1.0, -0.5},
                                 double t_final = 20.0, double dt = 0.01) {
    if (t_final <= 0.0) {
        // no integration: a single sample at the initial state
        Trajectory traj;
        traj.params = SystemParams{theta, x0, t_final, dt};
        traj.outputs.push_back(x0);
        return traj;
    }
    return simulate(SystemParams{theta, x0, t_final, dt});
}

// One supervised sample: H points of history followed by the H_p points the
// model must predict, contiguous in the source trajectory.
struct WindowSample {
    Tensor history;  // [H, n_y]
    Tensor future;   // [H_p, n_y]
};

// Number of consecutive points a run of `windows` loss windows spans.
inline std::size_t window_span(std::size_t windows, std::size_t history, std::size_t horizon) {
    return windows + history + horizon - 1;
}

// Number of loss windows a segment of `points` consecutive points admits.
inline std::size_t windows_in(std::size_t points, std::size_t history, std::size_t horizon) {
    const std::size_t need = history + horizon;
    return points >= need ? points - need + 1 : 0;
}

inline std::vector<WindowSample> extract_windows(std::span<const State2> segment,
                                                 std::size_t history, std::size_t horizon) {
    const std::size_t count = windows_in(segment.size(), history, horizon);
    std::vector<WindowSample> out;
    out.reserve(count);
    for (std::size_t start = 0; start < count; ++start) {
        Tensor past = Tensor::zeros({history, 2});
        for (std::size_t i = 0; i < history; ++i) {
            past[i * 2] = segment[start + i][0];
            past[i * 2 + 1] = segment[start + i][1];
        }
        Tensor fut = Tensor::zeros({horizon, 2});
        for (std::size_t i = 0; i < horizon; ++i) {
            fut[i * 2] = segment[start + history + i][0];
            fut[i * 2 + 1] = segment[start + history + i][1];
        }
        out.push_back(WindowSample{std::move(past), std::move(fut)});
    }
    return out;
}

enum class SplitMode { train, inference };

struct ContextTargetSplit {
    std::vector<State2> context;
    std::vector<State2> target;
    SplitMode mode = SplitMode::train;
    std::size_t context_start = 0;
    std::size_t target_start = 0;
};

// Train mode places the context and target segments at independent random
// positions (the target may precede or overlap the context). Inference mode
// pins the context to the trajectory prefix with the target directly after.
inline ContextTargetSplit partition(const Trajectory& traj, SplitMode mode,
                                    std::size_t context_windows, std::size_t target_windows,
                                    std::size_t history, std::size_t horizon,
                                    std::uint64_t seed = 0) {
    if (context_windows < 1 || target_windows < 1) {
        throw ValidationError("partition: window counts must be >= 1");
    }
    const std::size_t ctx_span = window_span(context_windows, history, horizon);
    const std::size_t tgt_span = window_span(target_windows, history, horizon);
    const std::size_t len = traj.length();

    auto too_short = [&](std::size_t required) {
        throw ValidationError("partition: trajectory has " + std::to_string(len) +
                              " points but the split requires " + std::to_string(required));
    };

    ContextTargetSplit split;
    split.mode = mode;
    if (mode == SplitMode::train) {
        if (len < ctx_span) too_short(ctx_span);
        if (len < tgt_span) too_short(tgt_span);
        Rng rng(seed);
        split.context_start = rng.below(len - ctx_span + 1);
        split.target_start = rng.below(len - tgt_span + 1);
    } else {
        if (len < ctx_span + tgt_span) too_short(ctx_span + tgt_span);
        split.context_start = 0;
        split.target_start = ctx_span;
    }
    const auto& pts = traj.outputs;
    split.context.assign(pts.begin() + split.context_start,
                         pts.begin() + split.context_start + ctx_span);
    split.target.assign(pts.begin() + split.target_start,
                        pts.begin() + split.target_start + tgt_span);
    return split;
}

// --- canonical binary dataset format ---------------------------------------
// magic "NSSD", version u32, trajectory count u64, then per trajectory:
// theta f64, dt f64, length u64, x0 2xf64, outputs length x 2 f64 row-major.
// A u64 config digest trails the payload.

constexpr char kDatasetMagic[5] = "NSSD";
constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const SourceDataset& ds) {
    auto os = io::open_out(path);
    io::write_magic(os, kDatasetMagic);
    io::write_u32(os, kDatasetVersion);
    io::write_u64(os, ds.trajectories.size());
    for (const Trajectory& t : ds.trajectories) {
        io::write_f64(os, t.params.theta);
        io::write_f64(os, t.params.dt);
        io::write_u64(os, t.outputs.size());
        io::write_f64(os, t.params.x0[0]);
        io::write_f64(os, t.params.x0[1]);
        for (const State2& y : t.outputs) {
            io::write_f64(os, y[0]);
            io::write_f64(os, y[1]);
        }
    }
    io::write_u64(os, ds.config_digest);
    if (!os) throw IoError("dataset: write failed: " + path);
}

inline SourceDataset load_dataset(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, kDatasetMagic, "dataset");
    io::expect_version(io::read_u32(is), kDatasetVersion, "dataset");
    const std::uint64_t count = io::read_u64(is);
    SourceDataset ds;
    ds.trajectories.reserve(count);
    double lo = 0.0, hi = 0.0;
    for (std::uint64_t k = 0; k < count; ++k) {
        Trajectory t;
        t.params.theta = io::read_f64(is);
        t.params.dt = io::read_f64(is);
        const std::uint64_t len = io::read_u64(is);
        t.params.x0 = {io::read_f64(is), io::read_f64(is)};
        t.params.t_final = len > 0 ? static_cast<double>(len - 1) * t.params.dt : 0.0;
        t.outputs.resize(len);
        for (std::uint64_t i = 0; i < len; ++i) {
            t.outputs[i] = {io::read_f64(is), io::read_f64(is)};
        }
        lo = k == 0 ? t.params.theta : std::min(lo, t.params.theta);
        hi = k == 0 ? t.params.theta : std::max(hi, t.params.theta);
        ds.trajectories.push_back(std::move(t));
    }
    ds.theta_low = lo;
    ds.theta_high = hi;
    ds.config_digest = io::read_u64(is);
    return ds;
}

// Inspection export; the binary form is canonical.
inline void export_dataset_csv(const std::string& path, const SourceDataset& ds,
                               std::uint64_t config_digest = 0) {
    auto os = io::open_out(path);
    char buf[160];
    std::snprintf(buf, sizeof buf, "# config_digest=0x%016llx\n",
                  static_cast<unsigned long long>(config_digest));
    os << buf << "traj_id,t,x1,x2,theta\n";
    for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
        const Trajectory& t = ds.trajectories[k];
        for (std::size_t i = 0; i < t.outputs.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu,%.10g,%.17g,%.17g,%.17g\n", k,
                          static_cast<double>(i) * t.params.dt, t.outputs[i][0],
                          t.outputs[i][1], t.params.theta);
            os << buf;
        }
    }
    if (!os) throw IoError("dataset csv: write failed: " + path);
}

}  // namespace metassm
