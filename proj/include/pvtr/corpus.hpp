#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/frequency.hpp"
#include "pvtr/rng.hpp"
#include "pvtr/texture.hpp"

namespace pvtr {

/// Seeded synthetic "expression" corpus with a controllable spectral decay.
/// Class means are built in the block-DCT domain with coefficient magnitude
/// proportional to (1+u+v)^-alpha and seeded signs, so low frequencies carry
/// most of the energy; frames add i.i.d. Gaussian jitter.
struct CorpusSpec {
    std::uint32_t height = 64;
    std::uint32_t width = 64;
    std::uint32_t classes = 65;          // K expression labels
    std::uint32_t frames_per_class = 8;
    double spectral_decay = 2.0;         // alpha
    double jitter_sigma = 0.02;          // calibrated so the base component keeps >=80% energy
    std::uint64_t seed = 1;
    std::uint32_t block = 4;             // B used for the spectral envelope
};

struct LabeledFrame {
    Texture texture;
    std::uint32_t label = 0;
    std::uint64_t frame_id = 0;
};

namespace detail {

inline constexpr double kEnvelopeAmplitude = 0.4;
inline constexpr double kBaseLevel = 0.5;

}  // namespace detail

inline std::vector<LabeledFrame> generate_corpus(const CorpusSpec& spec) {
    if (spec.height % 8 != 0 || spec.width % 8 != 0)
        throw std::invalid_argument("corpus: dims must be divisible by 8");
    if (spec.classes < 2) throw std::invalid_argument("corpus: need at least 2 classes");
    if (spec.frames_per_class < 1) throw std::invalid_argument("corpus: need at least 1 frame per class");
    if (!freq::block_size_supported(spec.block))
        throw std::invalid_argument("corpus: unsupported block size");
    if (spec.spectral_decay < 0.0) throw std::invalid_argument("corpus: negative spectral decay");
    if (spec.jitter_sigma < 0.0) throw std::invalid_argument("corpus: negative jitter");

    const std::uint32_t b = spec.block;
    const Texture flat(spec.height, spec.width, 3, 0.0f);
    RngStream master(spec.seed, "corpus");

    std::vector<LabeledFrame> frames;
    frames.reserve(static_cast<std::size_t>(spec.classes) * spec.frames_per_class);

    for (std::uint32_t k = 0; k < spec.classes; ++k) {
        RngStream class_rng = master.derive("class/" + std::to_string(k));

        freq::ComponentSet comps;
        comps.block = b;
        comps.height = spec.height;
        comps.width = spec.width;
        comps.channels = 3;
        comps.planes.assign(static_cast<std::size_t>(b) * b, {});
        const std::size_t plane_n = comps.plane_size();
        for (auto& p : comps.planes) p.assign(plane_n, 0.0f);

        for (std::size_t pos = 0; pos < plane_n; ++pos) {
            for (std::uint32_t u = 0; u < b; ++u) {
                for (std::uint32_t v = 0; v < b; ++v) {
                    const double magnitude =
                        detail::kEnvelopeAmplitude *
                        std::pow(1.0 + u + v, -spec.spectral_decay);
                    const double sign = class_rng.uniform01() < 0.5 ? -1.0 : 1.0;
                    comps.planes[u * b + v][pos] = static_cast<float>(sign * magnitude);
                }
            }
        }
        const Texture class_mean =
            freq::block_idct(comps, Texture(spec.height, spec.width, 3, detail::kBaseLevel));

        for (std::uint32_t f = 0; f < spec.frames_per_class; ++f) {
            LabeledFrame frame;
            frame.label = k;
            frame.frame_id = static_cast<std::uint64_t>(k) * spec.frames_per_class + f;
            frame.texture = class_mean;
            if (spec.jitter_sigma > 0.0) {
                RngStream jitter =
                    master.derive("jitter/" + std::to_string(k) + "/" + std::to_string(f));
                for (float& px : frame.texture.data) {
                    const double value =
                        static_cast<double>(px) + spec.jitter_sigma * jitter.gaussian();
                    px = static_cast<float>(std::clamp(value, 0.0, 1.0));
                }
            }
            frames.push_back(std::move(frame));
        }
    }
    return frames;
}

inline Texture dataset_mean(const std::vector<LabeledFrame>& frames) {
    if (frames.empty()) throw std::invalid_argument("dataset_mean: empty corpus");
    const Texture& first = frames.front().texture;
    std::vector<double> acc(first.data.size(), 0.0);
    for (const auto& frame : frames) {
        if (!frame.texture.same_shape(first))
            throw std::invalid_argument("dataset_mean: heterogeneous textures");
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += static_cast<double>(frame.texture.data[i]);
    }
    Texture mean(first.height, first.width, first.channels);
    const double n = static_cast<double>(frames.size());
    for (std::size_t i = 0; i < acc.size(); ++i) mean.data[i] = static_cast<float>(acc[i] / n);
    return mean;
}

// --- corpus manifest --------------------------------------------------------
// A directory of PTEX frames plus index.csv (frame_id,label,path).

inline void write_corpus(const std::string& dir, const std::vector<LabeledFrame>& frames) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ostringstream index;
    index << "frame_id,label,path\n";
    for (const auto& frame : frames) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%06llu.ptex",
                      static_cast<unsigned long long>(frame.frame_id));
        save_texture((fs::path(dir) / name).string(), frame.texture);
        index << frame.frame_id << "," << frame.label << "," << name << "\n";
    }
    io::write_text_file((fs::path(dir) / "index.csv").string(), index.str());
}

inline std::vector<LabeledFrame> load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "index.csv");
    if (!in) throw std::runtime_error("corpus: cannot open " + dir + "/index.csv");
    std::string line;
    if (!std::getline(in, line) || line != "frame_id,label,path")
        throw std::runtime_error("corpus: bad index header");
    std::vector<LabeledFrame> frames;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id_str, label_str, path;
        if (!std::getline(row, id_str, ',') || !std::getline(row, label_str, ',') ||
            !std::getline(row, path))
            throw std::runtime_error("corpus: malformed index row: " + line);
        LabeledFrame frame;
        frame.frame_id = std::stoull(id_str);
        frame.label = static_cast<std::uint32_t>(std::stoul(label_str));
        frame.texture = load_texture((fs::path(dir) / path).string());
        frames.push_back(std::move(frame));
    }
    if (frames.empty()) throw std::runtime_error("corpus: empty index");
    return frames;
}

}  // namespace pvtr
