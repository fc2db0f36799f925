#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/texture.hpp"

namespace pvtr::freq {

inline constexpr std::uint32_t kSupportedBlocks[] = {2, 4, 8};

inline bool block_size_supported(std::uint32_t b) {
    return b == 2 || b == 4 || b == 8;
}

/// Orthonormal DCT-II matrix of size b x b, row-major; row u, column x holds
/// s(u) * cos(pi * (2x+1) * u / (2b)) with s(0) = sqrt(1/b), s(u>0) = sqrt(2/b).
/// The transform of a block X is C * X * C^T, making it an isometry.
inline std::vector<double> dct_basis(std::uint32_t b) {
    std::vector<double> c(static_cast<std::size_t>(b) * b);
    const double pi = 3.14159265358979323846;
    for (std::uint32_t u = 0; u < b; ++u) {
        const double scale = u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b);
        for (std::uint32_t x = 0; x < b; ++x)
            c[u * b + x] = scale * std::cos(pi * (2.0 * x + 1.0) * u / (2.0 * b));
    }
    return c;
}

/// The B^2 frequency planes of one texture. Plane k = u*B + v collects the
/// (u,v) block-DCT coefficient of every BxB block; each plane has shape
/// (H/B) x (W/B) x channels in the same interleaved layout as Texture.
struct ComponentSet {
    std::uint32_t block = 0;
    std::uint32_t height = 0;  // source texture dims
    std::uint32_t width = 0;
    std::uint32_t channels = 3;
    std::vector<std::vector<float>> planes;  // size block*block

    std::uint32_t plane_height() const { return height / block; }
    std::uint32_t plane_width() const { return width / block; }
    std::size_t plane_size() const {
        return static_cast<std::size_t>(plane_height()) * plane_width() * channels;
    }
};

namespace detail {

inline void check_divisible(const Texture& t, std::uint32_t b) {
    if (!block_size_supported(b)) throw std::invalid_argument("block size must be 2, 4 or 8");
    if (t.height % b != 0 || t.width % b != 0)
        throw std::invalid_argument("texture dims not divisible by block size");
}

}  // namespace detail

/// Forward block DCT of (tex - mean). Coefficient (u,v) of each block lands in
/// plane u*B+v at the block's grid position.
inline ComponentSet block_dct(const Texture& tex, const Texture& mean, std::uint32_t b) {
    if (!tex.same_shape(mean)) throw std::invalid_argument("block_dct: texture/mean shape mismatch");
    detail::check_divisible(tex, b);

    ComponentSet cs;
    cs.block = b;
    cs.height = tex.height;
    cs.width = tex.width;
    cs.channels = tex.channels;
    cs.planes.assign(static_cast<std::size_t>(b) * b, std::vector<float>(cs.plane_size(), 0.0f));

    const std::vector<double> c = dct_basis(b);
    const std::uint32_t bh = cs.plane_height(), bw = cs.plane_width();
    std::vector<double> x(static_cast<std::size_t>(b) * b);
    std::vector<double> tmp(static_cast<std::size_t>(b) * b);

    for (std::uint32_t by = 0; by < bh; ++by) {
        for (std::uint32_t bx = 0; bx < bw; ++bx) {
            for (std::uint32_t ch = 0; ch < tex.channels; ++ch) {
                for (std::uint32_t i = 0; i < b; ++i)
                    for (std::uint32_t j = 0; j < b; ++j)
                        x[i * b + j] = static_cast<double>(tex.at(by * b + i, bx * b + j, ch)) -
                                       static_cast<double>(mean.at(by * b + i, bx * b + j, ch));
                // tmp = C * X
                for (std::uint32_t u = 0; u < b; ++u)
                    for (std::uint32_t j = 0; j < b; ++j) {
                        double acc = 0.0;
                        for (std::uint32_t i = 0; i < b; ++i) acc += c[u * b + i] * x[i * b + j];
                        tmp[u * b + j] = acc;
                    }
                // Y = tmp * C^T
                const std::size_t pos = (static_cast<std::size_t>(by) * bw + bx) * tex.channels + ch;
                for (std::uint32_t u = 0; u < b; ++u)
                    for (std::uint32_t v = 0; v < b; ++v) {
                        double acc = 0.0;
                        for (std::uint32_t j = 0; j < b; ++j) acc += tmp[u * b + j] * c[v * b + j];
                        cs.planes[u * b + v][pos] = static_cast<float>(acc);
                    }
            }
        }
    }
    return cs;
}

/// Inverse transform: X = C^T * Y * C + mean, block by block.
inline Texture block_idct(const ComponentSet& cs, const Texture& mean) {
    if (cs.height != mean.height || cs.width != mean.width || cs.channels != mean.channels)
        throw std::invalid_argument("block_idct: mean shape mismatch");
    const std::uint32_t b = cs.block;
    if (!block_size_supported(b)) throw std::invalid_argument("block_idct: bad block size");
    if (cs.planes.size() != static_cast<std::size_t>(b) * b)
        throw std::invalid_argument("block_idct: wrong plane count");
    for (const auto& p : cs.planes)
        if (p.size() != cs.plane_size()) throw std::invalid_argument("block_idct: plane size mismatch");

    Texture out(cs.height, cs.width, cs.channels);
    const std::vector<double> c = dct_basis(b);
    const std::uint32_t bh = cs.plane_height(), bw = cs.plane_width();
    std::vector<double> y(static_cast<std::size_t>(b) * b);
    std::vector<double> tmp(static_cast<std::size_t>(b) * b);

    for (std::uint32_t by = 0; by < bh; ++by) {
        for (std::uint32_t bx = 0; bx < bw; ++bx) {
            for (std::uint32_t ch = 0; ch < cs.channels; ++ch) {
                const std::size_t pos = (static_cast<std::size_t>(by) * bw + bx) * cs.channels + ch;
                for (std::uint32_t u = 0; u < b; ++u)
                    for (std::uint32_t v = 0; v < b; ++v)
                        y[u * b + v] = static_cast<double>(cs.planes[u * b + v][pos]);
                // tmp = C^T * Y
                for (std::uint32_t i = 0; i < b; ++i)
                    for (std::uint32_t v = 0; v < b; ++v) {
                        double acc = 0.0;
                        for (std::uint32_t u = 0; u < b; ++u) acc += c[u * b + i] * y[u * b + v];
                        tmp[i * b + v] = acc;
                    }
                // X = tmp * C
                for (std::uint32_t i = 0; i < b; ++i)
                    for (std::uint32_t j = 0; j < b; ++j) {
                        double acc = 0.0;
                        for (std::uint32_t v = 0; v < b; ++v) acc += tmp[i * b + v] * c[v * b + j];
                        out.at(by * b + i, bx * b + j, ch) =
                            static_cast<float>(acc + static_cast<double>(mean.at(by * b + i, bx * b + j, ch)));
                    }
            }
        }
    }
    return out;
}

/// Which statistic drives the ranking: variance of each plane around the
/// corpus-mean plane (default), or the raw mean squared norm.
enum class EnergyStatistic { VarianceAroundMean, MeanSquaredNorm };

struct EnergyRanking {
    std::vector<double> statistic;        // indexed by component id
    std::vector<std::uint32_t> ordering;  // ids sorted ascending by statistic
    std::size_t corpus_size = 0;
};

inline EnergyRanking energy_rank(const std::vector<ComponentSet>& corpus,
                                 EnergyStatistic stat = EnergyStatistic::VarianceAroundMean) {
    if (corpus.size() < 2) throw std::invalid_argument("energy_rank: need at least 2 corpus items");
    const ComponentSet& first = corpus.front();
    const std::size_t k = first.planes.size();
    for (const auto& cs : corpus)
        if (cs.block != first.block || cs.height != first.height || cs.width != first.width ||
            cs.channels != first.channels)
            throw std::invalid_argument("energy_rank: heterogeneous component sets");

    EnergyRanking rank;
    rank.statistic.assign(k, 0.0);
    rank.corpus_size = corpus.size();
    const double n = static_cast<double>(corpus.size());

    std::vector<double> mean(first.plane_size());
    for (std::size_t comp = 0; comp < k; ++comp) {
        std::fill(mean.begin(), mean.end(), 0.0);
        if (stat == EnergyStatistic::VarianceAroundMean) {
            for (const auto& cs : corpus)
                for (std::size_t i = 0; i < mean.size(); ++i)
                    mean[i] += static_cast<double>(cs.planes[comp][i]);
            for (double& m : mean) m /= n;
        }
        double acc = 0.0;
        for (const auto& cs : corpus)
            for (std::size_t i = 0; i < mean.size(); ++i) {
                const double d = static_cast<double>(cs.planes[comp][i]) - mean[i];
                acc += d * d;
            }
        rank.statistic[comp] = acc / n;
    }

    rank.ordering.resize(k);
    std::iota(rank.ordering.begin(), rank.ordering.end(), 0u);
    std::stable_sort(rank.ordering.begin(), rank.ordering.end(),
                     [&rank](std::uint32_t a, std::uint32_t b) {
                         if (rank.statistic[a] != rank.statistic[b])
                             return rank.statistic[a] < rank.statistic[b];
                         return a < b;  // ties broken by lower component id
                     });
    return rank;
}

/// Assignment of the B^2 components to the trusted (local) and untrusted
/// (offloaded) paths. id 0 is the base component.
struct PartitionPlan {
    std::uint32_t block = 0;
    std::vector<std::uint32_t> offloaded_ids;  // sorted
    std::vector<std::uint32_t> local_ids;      // sorted
    bool keep_base_local = true;

    void validate() const {
        const std::uint32_t total = block * block;
        std::vector<bool> seen(total, false);
        auto mark = [&](const std::vector<std::uint32_t>& ids) {
            for (std::uint32_t id : ids) {
                if (id >= total) throw std::invalid_argument("plan: component id out of range");
                if (seen[id]) throw std::invalid_argument("plan: duplicate component id");
                seen[id] = true;
            }
        };
        mark(offloaded_ids);
        mark(local_ids);
        if (offloaded_ids.size() + local_ids.size() != total)
            throw std::invalid_argument("plan: ids do not cover all components");
        if (!std::is_sorted(offloaded_ids.begin(), offloaded_ids.end()) ||
            !std::is_sorted(local_ids.begin(), local_ids.end()))
            throw std::invalid_argument("plan: id lists must be sorted");
        if (keep_base_local &&
            std::binary_search(offloaded_ids.begin(), offloaded_ids.end(), 0u))
            throw std::invalid_argument("plan: base component offloaded despite keep_base_local");
        if (!offloaded_ids.empty() && !local_ids.empty()) {
            const std::size_t m = offloaded_ids.size();
            if (m < 2 || m > total - 2)
                throw std::invalid_argument("plan: offloaded count out of [2, B^2-2]");
        }
    }
};

/// Picks the m lowest-statistic components for offloading, skipping the base
/// component when keep_base_local is set.
inline PartitionPlan make_plan(const EnergyRanking& ranking, std::size_t m, bool keep_base_local,
                               std::uint32_t block) {
    const std::size_t total = static_cast<std::size_t>(block) * block;
    if (ranking.statistic.size() != total)
        throw std::invalid_argument("make_plan: ranking/block size mismatch");
    if (m < 2 || m > total - 2)
        throw std::invalid_argument("make_plan: m out of [2, B^2-2]");

    PartitionPlan plan;
    plan.block = block;
    plan.keep_base_local = keep_base_local;
    for (std::uint32_t id : ranking.ordering) {
        if (plan.offloaded_ids.size() == m) break;
        if (keep_base_local && id == 0) continue;
        plan.offloaded_ids.push_back(id);
    }
    if (plan.offloaded_ids.size() != m)
        throw std::invalid_argument("make_plan: cannot satisfy m with keep_base_local");
    std::sort(plan.offloaded_ids.begin(), plan.offloaded_ids.end());
    for (std::uint32_t id = 0; id < total; ++id)
        if (!std::binary_search(plan.offloaded_ids.begin(), plan.offloaded_ids.end(), id))
            plan.local_ids.push_back(id);
    plan.validate();
    return plan;
}

/// Degenerate plan with no local path; used by the fully-offloaded baseline.
inline PartitionPlan full_offload_plan(std::uint32_t block) {
    PartitionPlan plan;
    plan.block = block;
    plan.keep_base_local = false;
    plan.offloaded_ids.resize(static_cast<std::size_t>(block) * block);
    std::iota(plan.offloaded_ids.begin(), plan.offloaded_ids.end(), 0u);
    plan.validate();
    return plan;
}

/// The planes belonging to one path, ordered by component id.
struct ComponentSubset {
    std::uint32_t block = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 3;
    std::vector<std::uint32_t> ids;          // sorted
    std::vector<std::vector<float>> planes;  // aligned with ids

    std::size_t plane_size() const {
        return static_cast<std::size_t>(height / block) * (width / block) * channels;
    }
};

inline ComponentSubset extract(const ComponentSet& cs, const std::vector<std::uint32_t>& ids) {
    ComponentSubset sub;
    sub.block = cs.block;
    sub.height = cs.height;
    sub.width = cs.width;
    sub.channels = cs.channels;
    sub.ids = ids;
    sub.planes.reserve(ids.size());
    for (std::uint32_t id : ids) {
        if (id >= cs.planes.size()) throw std::invalid_argument("extract: component id out of range");
        sub.planes.push_back(cs.planes[id]);
    }
    return sub;
}

inline std::pair<ComponentSubset, ComponentSubset> split(const ComponentSet& cs,
                                                         const PartitionPlan& plan) {
    if (plan.block != cs.block) throw std::invalid_argument("split: plan/component block mismatch");
    return {extract(cs, plan.local_ids), extract(cs, plan.offloaded_ids)};
}

/// Recombines the two paths; every plane is taken verbatim from its path.
inline ComponentSet merge(const ComponentSubset& local, const ComponentSubset& offloaded,
                          const PartitionPlan& plan) {
    if (local.ids != plan.local_ids || offloaded.ids != plan.offloaded_ids)
        throw std::invalid_argument("merge: subset ids do not match plan");
    const std::uint32_t b = plan.block;
    ComponentSet out;
    const ComponentSubset& shape = offloaded.ids.empty() ? local : offloaded;
    out.block = b;
    out.height = shape.height;
    out.width = shape.width;
    out.channels = shape.channels;
    out.planes.assign(static_cast<std::size_t>(b) * b, {});
    auto place = [&](const ComponentSubset& sub) {
        if (sub.ids.empty()) return;
        if (sub.block != b || sub.height != out.height || sub.width != out.width ||
            sub.channels != out.channels)
            throw std::invalid_argument("merge: subset shape mismatch");
        for (std::size_t i = 0; i < sub.ids.size(); ++i) {
            if (sub.planes[i].size() != out.plane_size())
                throw std::invalid_argument("merge: plane size mismatch");
            out.planes[sub.ids[i]] = sub.planes[i];
        }
    };
    place(local);
    place(offloaded);
    for (const auto& p : out.planes)
        if (p.empty()) throw std::invalid_argument("merge: coverage gap");
    return out;
}

/// Flattens a subset's planes (id order) into one real64 vector; this is the
/// per-path codec input.
inline std::vector<double> stack_vector(const ComponentSubset& sub) {
    std::vector<double> out;
    out.reserve(sub.planes.size() * sub.plane_size());
    for (const auto& p : sub.planes)
        for (float v : p) out.push_back(static_cast<double>(v));
    return out;
}

/// Inverse of stack_vector: scatters a flat vector back into planes shaped
/// like `shape` (values narrowed to real32, as they travel on the wire).
inline ComponentSubset unstack_vector(const std::vector<double>& flat,
                                      const ComponentSubset& shape) {
    if (flat.size() != shape.ids.size() * shape.plane_size())
        throw std::invalid_argument("unstack_vector: length mismatch");
    ComponentSubset out = shape;
    std::size_t pos = 0;
    for (auto& plane : out.planes) {
        for (float& v : plane) v = static_cast<float>(flat[pos++]);
    }
    return out;
}

}  // namespace pvtr::freq
