#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/attack.hpp"
#include "pvtr/codec.hpp"
#include "pvtr/corpus.hpp"
#include "pvtr/frequency.hpp"
#include "pvtr/privacy.hpp"
#include "pvtr/rng.hpp"
#include "pvtr/texture.hpp"

namespace pvtr {

/// Everything a client session needs: the partition, the dataset mean, the
/// per-path codecs and the noise calibration for the offloaded latent.
/// `local_codec` is absent for the fully-offloaded degenerate plan.
struct PipelineConfig {
    freq::PartitionPlan plan;
    Texture mean;
    std::optional<Codec> local_codec;
    Codec offload_codec;
    NoiseCalibration calibration;  // zero_calibration(d) for the no-noise case
    std::uint64_t session_seed = 1;
};

/// Latents cross the wire as real32; narrowing here keeps the in-process
/// pipeline bit-identical to the networked one.
inline void quantize_latent_to_wire(LatentCode& z) {
    for (double& v : z.values) v = static_cast<double>(static_cast<float>(v));
}

inline RngStream frame_noise_stream(std::uint64_t session_seed, std::uint64_t frame_id) {
    return RngStream(session_seed, "noise/frame/" + std::to_string(frame_id));
}

struct FrameResult {
    Texture reconstructed;
    LatentCode offload_clean;   // before noise (never released)
    LatentCode offload_noisy;   // the observation O, post wire quantization
    freq::ComponentSubset offload_decoded;
    std::optional<LatentCode> local_latent;
};

/// Shape-only subset matching a plan's offloaded ids; used to unstack decoded
/// vectors into planes.
inline freq::ComponentSubset offload_shape(const PipelineConfig& cfg) {
    freq::ComponentSubset shape;
    shape.block = cfg.plan.block;
    shape.height = cfg.mean.height;
    shape.width = cfg.mean.width;
    shape.channels = cfg.mean.channels;
    shape.ids = cfg.plan.offloaded_ids;
    shape.planes.assign(shape.ids.size(), std::vector<float>(shape.plane_size(), 0.0f));
    return shape;
}

/// Runs one frame through the full split pipeline in-process: decompose,
/// encode both paths, noise and quantize the offloaded latent, decode both
/// paths, merge, inverse transform.
inline FrameResult process_frame(const PipelineConfig& cfg, const Texture& tex,
                                 std::uint64_t frame_id) {
    const freq::ComponentSet comps = freq::block_dct(tex, cfg.mean, cfg.plan.block);
    const auto [local_sub, offload_sub] = freq::split(comps, cfg.plan);

    FrameResult result;

    // Offloaded path: encode, perturb, quantize to wire precision, decode the
    // planes exactly as the untrusted host would.
    result.offload_clean = encode(cfg.offload_codec, freq::stack_vector(offload_sub), frame_id);
    RngStream noise_rng = frame_noise_stream(cfg.session_seed, frame_id);
    result.offload_noisy = add_noise(result.offload_clean, cfg.calibration, noise_rng);
    quantize_latent_to_wire(result.offload_noisy);
    const std::vector<float> returned = decode_to_f32(cfg.offload_codec, result.offload_noisy);

    freq::ComponentSubset offload_decoded = offload_shape(cfg);
    std::size_t pos = 0;
    for (auto& plane : offload_decoded.planes)
        for (float& v : plane) v = returned[pos++];
    result.offload_decoded = offload_decoded;

    // Local path: trusted end-to-end, no noise, no wire quantization.
    freq::ComponentSubset local_decoded = local_sub;
    if (!cfg.plan.local_ids.empty()) {
        if (!cfg.local_codec) throw std::invalid_argument("process_frame: missing local codec");
        const LatentCode local_z =
            encode(*cfg.local_codec, freq::stack_vector(local_sub), frame_id);
        const std::vector<float> local_flat = decode_to_f32(*cfg.local_codec, local_z);
        std::size_t lpos = 0;
        for (auto& plane : local_decoded.planes)
            for (float& v : plane) v = local_flat[lpos++];
        result.local_latent = local_z;
    }

    const freq::ComponentSet merged = freq::merge(local_decoded, offload_decoded, cfg.plan);
    result.reconstructed = freq::block_idct(merged, cfg.mean);
    return result;
}

/// Trains the per-path codecs on the corpus stacks. The latent dims are
/// capped by the stack width (and by the corpus size on the Gram route).
struct PathCodecs {
    std::optional<Codec> local;
    Codec offloaded;
};

inline std::size_t clamp_latent_dim(std::size_t requested, std::size_t input_dim,
                                    std::size_t corpus_size) {
    std::size_t d = std::min(requested, input_dim);
    if (input_dim > corpus_size) d = std::min(d, corpus_size - 1);  // Gram-route rank bound
    if (d == 0) throw std::invalid_argument("latent dim collapsed to zero");
    return d;
}

inline PathCodecs train_path_codecs(const std::vector<LabeledFrame>& frames, const Texture& mean,
                                    const freq::PartitionPlan& plan, std::size_t latent_dim) {
    if (frames.size() < 2) throw std::invalid_argument("train_path_codecs: need >= 2 frames");
    std::vector<std::vector<double>> local_stacks, offload_stacks;
    local_stacks.reserve(frames.size());
    offload_stacks.reserve(frames.size());
    for (const auto& f : frames) {
        const freq::ComponentSet cs = freq::block_dct(f.texture, mean, plan.block);
        const auto [local_sub, offload_sub] = freq::split(cs, plan);
        if (!plan.local_ids.empty()) local_stacks.push_back(freq::stack_vector(local_sub));
        offload_stacks.push_back(freq::stack_vector(offload_sub));
    }
    PathCodecs codecs;
    codecs.offloaded = train_codec(
        offload_stacks,
        clamp_latent_dim(latent_dim, offload_stacks[0].size(), offload_stacks.size()),
        CodecPath::Offloaded);
    if (!plan.local_ids.empty())
        codecs.local = train_codec(
            local_stacks, clamp_latent_dim(latent_dim, local_stacks[0].size(), local_stacks.size()),
            CodecPath::Local);
    return codecs;
}

/// Clean offloaded latents of a corpus; the profiling input for calibration.
inline std::vector<std::vector<double>> profile_offload_latents(
    const std::vector<LabeledFrame>& frames, const Texture& mean, const freq::PartitionPlan& plan,
    const Codec& offload_codec) {
    std::vector<std::vector<double>> latents;
    latents.reserve(frames.size());
    for (const auto& f : frames) {
        const freq::ComponentSet cs = freq::block_dct(f.texture, mean, plan.block);
        const freq::ComponentSubset sub = freq::extract(cs, plan.offloaded_ids);
        latents.push_back(encode(offload_codec, freq::stack_vector(sub), f.frame_id).values);
    }
    return latents;
}

/// Mean reconstruction MSE over the corpus under a given configuration.
inline double corpus_loss(const PipelineConfig& cfg, const std::vector<LabeledFrame>& frames) {
    double acc = 0.0;
    for (const auto& f : frames)
        acc += mse(process_frame(cfg, f.texture, f.frame_id).reconstructed, f.texture);
    return acc / static_cast<double>(frames.size());
}

/// Observation stream for the adversaries: cycles corpus frames, drawing
/// fresh per-trial noise; each observation carries both attack surfaces.
inline std::vector<Observation> build_observations(const PipelineConfig& cfg,
                                                   const std::vector<LabeledFrame>& frames,
                                                   std::size_t trials) {
    if (frames.empty()) throw std::invalid_argument("build_observations: empty corpus");
    std::vector<Observation> stream;
    stream.reserve(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        const LabeledFrame& f = frames[t % frames.size()];
        // Distinct trial ids keep noise draws independent across repeats.
        const FrameResult r = process_frame(cfg, f.texture, static_cast<std::uint64_t>(t));
        Observation obs;
        obs.noisy_latent = r.offload_noisy;
        obs.decoded_planes = r.offload_decoded;
        obs.label = f.label;
        stream.push_back(std::move(obs));
    }
    return stream;
}

/// Training set for the learned adversary: the first `per_class` clean
/// offloaded latents of every label.
inline std::vector<LabeledLatent> attacker_training_latents(
    const std::vector<LabeledFrame>& frames, const Texture& mean, const freq::PartitionPlan& plan,
    const Codec& offload_codec, std::size_t per_class) {
    std::vector<std::size_t> taken;
    std::vector<LabeledLatent> out;
    for (const auto& f : frames) {
        if (f.label >= taken.size()) taken.resize(f.label + 1, 0);
        if (taken[f.label] >= per_class) continue;
        ++taken[f.label];
        const freq::ComponentSet cs = freq::block_dct(f.texture, mean, plan.block);
        const freq::ComponentSubset sub = freq::extract(cs, plan.offloaded_ids);
        LabeledLatent sample;
        sample.values = encode(offload_codec, freq::stack_vector(sub), f.frame_id).values;
        sample.label = f.label;
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace pvtr
