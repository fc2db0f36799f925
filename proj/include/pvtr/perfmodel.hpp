#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvtr::perf {

struct DeviceProfile {
    std::string name;
    double peak_flops = 0.0;       // FLOP/s
    double mem_bandwidth = 0.0;    // bytes/s
    double gops_per_watt = 32.0;   // compute efficiency, GOP/s per watt

    void validate() const {
        if (!(peak_flops > 0.0) || !(mem_bandwidth > 0.0) || !(gops_per_watt > 0.0))
            throw std::invalid_argument("device profile: rates must be positive");
    }
};

struct LinkProfile {
    double bits_per_second = 0.0;
    double joules_per_bit = 0.0;

    void validate() const {
        if (!(bits_per_second > 0.0) || joules_per_bit < 0.0)
            throw std::invalid_argument("link profile: bad rates");
    }
};

struct WorkloadProfile {
    std::uint32_t block = 4;
    std::uint32_t offloaded = 14;          // m
    double texture_decoder_flops = 6.12e9; // full texture decode per user-frame
    double fixed_flops = 0.715e9;          // mesh + overhead per user-frame
    double return_bytes_per_component = 786432.0;
    double fps = 60.0;
    // Measured latencies override the analytic stage models when present.
    std::optional<double> measured_local_s;
    std::optional<double> measured_offload_s;
    std::optional<double> measured_comm_s;
};

struct PerfReport {
    double local_s = 0.0;
    double offload_s = 0.0;
    double comm_s = 0.0;
    double users = 0.0;
    double users_per_watt = 0.0;
    double joules_per_user_frame = 0.0;
};

/// Local decoder cost: the texture share shrinks linearly with the number of
/// offloaded components, the fixed share does not.
inline double local_flops(const WorkloadProfile& w) {
    const double total = static_cast<double>(w.block) * w.block;
    if (w.offloaded > total) throw std::invalid_argument("local_flops: m exceeds B^2");
    return w.fixed_flops + (total - w.offloaded) / total * w.texture_decoder_flops;
}

inline double offload_flops(const WorkloadProfile& w) {
    const double total = static_cast<double>(w.block) * w.block;
    return static_cast<double>(w.offloaded) / total * w.texture_decoder_flops;
}

/// Solves texture/fixed FLOPs from two (m, flops) anchor points.
inline std::pair<double, double> fit_flops_split(std::uint32_t m1, double flops1,
                                                 std::uint32_t m2, double flops2,
                                                 std::uint32_t block) {
    if (m1 == m2) throw std::invalid_argument("fit_flops_split: anchors need distinct m");
    const double total = static_cast<double>(block) * block;
    const double texture = (flops2 - flops1) * total / (static_cast<double>(m1) - m2);
    const double fixed = flops1 - (total - m1) / total * texture;
    return {texture, fixed};
}

/// Roofline bound: max of the compute and memory service times; pass zero
/// bytes for the compute-bound default.
inline double roofline_latency(double flops, double bytes_moved, const DeviceProfile& dev) {
    dev.validate();
    const double compute = flops / dev.peak_flops;
    const double memory = bytes_moved > 0.0 ? bytes_moved / dev.mem_bandwidth : 0.0;
    return std::max(compute, memory);
}

inline double comm_latency(double bytes, const LinkProfile& link) {
    link.validate();
    return 8.0 * bytes / link.bits_per_second;
}

/// Concurrent users at the target frame rate: every stage is an independent
/// pipelined resource, so the slowest one bounds throughput. Zero-latency
/// stages are unbounded.
inline double pipeline_users(const std::vector<double>& stage_latencies_s, double fps) {
    if (stage_latencies_s.empty()) throw std::invalid_argument("pipeline_users: no stages");
    if (!(fps > 0.0)) throw std::invalid_argument("pipeline_users: fps must be positive");
    double users = std::numeric_limits<double>::infinity();
    for (double s : stage_latencies_s) {
        if (s < 0.0) throw std::invalid_argument("pipeline_users: negative latency");
        if (s == 0.0) continue;
        users = std::min(users, 1.0 / (fps * s));
    }
    return users;
}

/// Joules per user-frame: compute on both sides at their efficiency plus the
/// link's per-bit cost.
inline double energy_per_user_frame(double flops_local, double flops_offload, double bits_moved,
                                    const DeviceProfile& local_dev, const DeviceProfile& remote_dev,
                                    const LinkProfile& link) {
    const double local_j = flops_local / (local_dev.gops_per_watt * 1e9);
    const double remote_j = flops_offload / (remote_dev.gops_per_watt * 1e9);
    const double comm_j = bits_moved * link.joules_per_bit;
    return local_j + remote_j + comm_j;
}

/// Full per-configuration evaluation feeding the sweep CSV.
inline PerfReport evaluate(const WorkloadProfile& w, const DeviceProfile& local_dev,
                           const DeviceProfile& remote_dev, const LinkProfile& link) {
    PerfReport r;
    const double bytes = static_cast<double>(w.offloaded) * w.return_bytes_per_component;
    r.local_s = w.measured_local_s ? *w.measured_local_s
                                   : roofline_latency(local_flops(w), 0.0, local_dev);
    r.offload_s = w.measured_offload_s ? *w.measured_offload_s
                                       : roofline_latency(offload_flops(w), 0.0, remote_dev);
    r.comm_s = w.measured_comm_s ? *w.measured_comm_s : comm_latency(bytes, link);
    r.users = pipeline_users({r.local_s, r.offload_s, r.comm_s}, w.fps);
    r.joules_per_user_frame =
        energy_per_user_frame(local_flops(w), offload_flops(w), 8.0 * bytes, local_dev,
                              remote_dev, link);
    r.users_per_watt = r.joules_per_user_frame > 0.0
                           ? 1.0 / (w.fps * r.joules_per_user_frame)
                           : std::numeric_limits<double>::infinity();
    return r;
}

}  // namespace pvtr::perf
