#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/io.hpp"
#include "pvtr/linalg.hpp"

namespace pvtr {

enum class CodecPath : std::uint8_t { Local = 0, Offloaded = 1 };

inline const char* codec_path_name(CodecPath p) {
    return p == CodecPath::Local ? "local" : "offloaded";
}

/// d-dimensional encoding of one path's component stack.
struct LatentCode {
    std::vector<double> values;
    std::uint64_t frame_id = 0;
    CodecPath path = CodecPath::Offloaded;
};

/// Linear encoder/decoder for one path: encode(x) = W (x - mu),
/// decode(z) = W^T z + mu, with the d rows of W orthonormal (principal
/// directions of the training stack, descending variance).
struct Codec {
    CodecPath path = CodecPath::Offloaded;
    std::size_t input_dim = 0;   // n
    std::size_t latent_dim = 0;  // d
    std::vector<double> mean;    // length n
    linalg::Matrix basis;        // d x n, orthonormal rows
};

namespace detail {

// Fix eigenvector sign: the largest-magnitude entry of each row is positive.
inline void fix_row_sign(linalg::Matrix& w, std::size_t row) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t j = 0; j < w.cols; ++j) {
        const double a = std::abs(w(row, j));
        if (a > best) {
            best = a;
            arg = j;
        }
    }
    if (w(row, arg) < 0.0)
        for (std::size_t j = 0; j < w.cols; ++j) w(row, j) = -w(row, j);
}

}  // namespace detail

/// Principal-component training. Uses the n x n covariance directly when the
/// input dimension is small, otherwise the N x N Gram matrix of the centered
/// data (identical nonzero spectrum; d is then capped by the corpus size).
inline Codec train_codec(const std::vector<std::vector<double>>& corpus, std::size_t d,
                         CodecPath path) {
    if (corpus.size() < 2) throw std::invalid_argument("train_codec: need at least 2 vectors");
    const std::size_t count = corpus.size();
    const std::size_t n = corpus[0].size();
    if (n == 0) throw std::invalid_argument("train_codec: empty vectors");
    for (const auto& v : corpus)
        if (v.size() != n) throw std::invalid_argument("train_codec: vector length mismatch");
    if (d == 0 || d > n) throw std::invalid_argument("train_codec: latent dim out of range");

    Codec codec;
    codec.path = path;
    codec.input_dim = n;
    codec.latent_dim = d;
    codec.mean.assign(n, 0.0);
    for (const auto& v : corpus)
        for (std::size_t i = 0; i < n; ++i) codec.mean[i] += v[i];
    for (double& m : codec.mean) m /= static_cast<double>(count);

    std::vector<std::vector<double>> centered(count, std::vector<double>(n));
    for (std::size_t s = 0; s < count; ++s)
        for (std::size_t i = 0; i < n; ++i) centered[s][i] = corpus[s][i] - codec.mean[i];

    codec.basis = linalg::Matrix(d, n);

    if (n <= count) {
        const linalg::Matrix cov = linalg::covariance(corpus, /*ml_denominator=*/true);
        const linalg::EigenDecomposition eig = linalg::sym_eig(cov);
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t j = 0; j < n; ++j) codec.basis(r, j) = eig.eigenvectors(j, r);
            detail::fix_row_sign(codec.basis, r);
        }
    } else {
        // Centering removes one degree of freedom, so the Gram spectrum has at
        // most count-1 nonzero eigenvalues.
        if (d > count - 1)
            throw std::invalid_argument(
                "train_codec: latent dim exceeds centered-corpus rank (Gram route)");
        linalg::Matrix gram(count, count);
        for (std::size_t a = 0; a < count; ++a)
            for (std::size_t b = a; b < count; ++b) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += centered[a][i] * centered[b][i];
                acc /= static_cast<double>(count);
                gram(a, b) = acc;
                gram(b, a) = acc;
            }
        const linalg::EigenDecomposition eig = linalg::sym_eig(gram);
        for (std::size_t r = 0; r < d; ++r) {
            // basis row = A^T w_r, normalized; w_r is the r-th Gram eigenvector.
            double* row = &codec.basis.data[r * n];
            for (std::size_t s = 0; s < count; ++s) {
                const double w = eig.eigenvectors(s, r);
                if (w == 0.0) continue;
                const double* cs = centered[s].data();
                for (std::size_t j = 0; j < n; ++j) row[j] += w * cs[j];
            }
            double norm_sq = 0.0;
            for (std::size_t j = 0; j < n; ++j) norm_sq += row[j] * row[j];
            const double norm = std::sqrt(norm_sq);
            if (!(norm > 1e-12))
                throw std::runtime_error("train_codec: degenerate corpus (rank below latent dim)");
            for (std::size_t j = 0; j < n; ++j) row[j] /= norm;
            detail::fix_row_sign(codec.basis, r);
        }
    }
    return codec;
}

inline LatentCode encode(const Codec& codec, const std::vector<double>& x,
                         std::uint64_t frame_id = 0) {
    if (x.size() != codec.input_dim) throw std::invalid_argument("encode: input length mismatch");
    LatentCode z;
    z.path = codec.path;
    z.frame_id = frame_id;
    z.values.resize(codec.latent_dim);
    for (std::size_t r = 0; r < codec.latent_dim; ++r) {
        const double* row = &codec.basis.data[r * codec.input_dim];
        double acc = 0.0;
        for (std::size_t j = 0; j < codec.input_dim; ++j) acc += row[j] * (x[j] - codec.mean[j]);
        z.values[r] = acc;
    }
    return z;
}

inline std::vector<double> decode(const Codec& codec, const LatentCode& z) {
    if (z.values.size() != codec.latent_dim)
        throw std::invalid_argument("decode: latent length mismatch");
    std::vector<double> x = codec.mean;
    for (std::size_t r = 0; r < codec.latent_dim; ++r) {
        const double zr = z.values[r];
        if (zr == 0.0) continue;
        const double* row = &codec.basis.data[r * codec.input_dim];
        for (std::size_t j = 0; j < codec.input_dim; ++j) x[j] += zr * row[j];
    }
    return x;
}

/// Decode and narrow to real32 — exactly what the offload host puts on the
/// wire, so in-process and networked pipelines stay bit-identical.
inline std::vector<float> decode_to_f32(const Codec& codec, const LatentCode& z) {
    const std::vector<double> wide = decode(codec, z);
    std::vector<float> out(wide.size());
    for (std::size_t i = 0; i < wide.size(); ++i) out[i] = static_cast<float>(wide[i]);
    return out;
}

// --- PCDC container ---------------------------------------------------------
// magic "PCDC", version u8 = 1, path u8, n u32, d u32, mu (n real64 LE),
// W (d*n real64 LE, row-major), content hash u64 (FNV-1a of all prior bytes).

inline io::Bytes serialize_codec(const Codec& codec) {
    io::Bytes out;
    io::put_magic(out, "PCDC");
    io::put_u8(out, 1);
    io::put_u8(out, static_cast<std::uint8_t>(codec.path));
    io::put_u32(out, static_cast<std::uint32_t>(codec.input_dim));
    io::put_u32(out, static_cast<std::uint32_t>(codec.latent_dim));
    for (double v : codec.mean) io::put_f64(out, v);
    for (double v : codec.basis.data) io::put_f64(out, v);
    io::put_u64(out, io::fnv1a64(out));
    return out;
}

inline std::uint64_t codec_content_hash(const Codec& codec) {
    const io::Bytes bytes = serialize_codec(codec);
    io::ByteReader r(bytes.data() + bytes.size() - 8, 8);
    return r.u64();
}

inline Codec deserialize_codec(const io::Bytes& bytes) {
    if (bytes.size() < 8) throw std::runtime_error("codec: truncated");
    const std::uint64_t stored_hash = io::fnv1a64(bytes.data(), bytes.size() - 8);
    io::ByteReader r(bytes);
    r.expect_magic("PCDC", "codec");
    if (r.u8() != 1) throw std::runtime_error("codec: unsupported version");
    Codec codec;
    codec.path = static_cast<CodecPath>(r.u8());
    codec.input_dim = r.u32();
    codec.latent_dim = r.u32();
    codec.mean.resize(codec.input_dim);
    for (double& v : codec.mean) v = r.f64();
    codec.basis = linalg::Matrix(codec.latent_dim, codec.input_dim);
    for (double& v : codec.basis.data) v = r.f64();
    if (r.u64() != stored_hash) throw std::runtime_error("codec: content hash mismatch");
    return codec;
}

inline void save_codec(const std::string& path, const Codec& codec) {
    io::write_file(path, serialize_codec(codec));
}

inline Codec load_codec(const std::string& path) {
    return deserialize_codec(io::read_file(path));
}

}  // namespace pvtr
