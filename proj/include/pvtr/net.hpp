#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pvtr/codec.hpp"
#include "pvtr/pipeline.hpp"
#include "pvtr/wire.hpp"

namespace pvtr::net {

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close_fd();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close_fd(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }

    void close_fd() {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
            fd_ = -1;
        }
    }

    void set_recv_timeout(int timeout_ms) const {
        timeval tv{};
        tv.tv_sec = timeout_ms / 1000;
        tv.tv_usec = (timeout_ms % 1000) * 1000;
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    }

    // False on orderly shutdown before any byte; throws on timeout/error.
    bool read_exact(std::uint8_t* buf, std::size_t n) const {
        std::size_t got = 0;
        while (got < n) {
            const ssize_t r = ::recv(fd_, buf + got, n - got, 0);
            if (r == 0) {
                if (got == 0) return false;
                throw std::runtime_error("socket: peer closed mid-frame");
            }
            if (r < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK)
                    throw std::runtime_error("socket: receive timeout");
                throw std::runtime_error(std::string("socket: recv failed: ") + std::strerror(errno));
            }
            got += static_cast<std::size_t>(r);
        }
        return true;
    }

    void write_all(const std::uint8_t* buf, std::size_t n) const {
        std::size_t sent = 0;
        while (sent < n) {
            const ssize_t r = ::send(fd_, buf + sent, n - sent, MSG_NOSIGNAL);
            if (r < 0) {
                if (errno == EINTR) continue;
                throw std::runtime_error(std::string("socket: send failed: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(r);
        }
    }

private:
    int fd_ = -1;
};

inline void send_envelope(const Socket& sock, const Envelope& env) {
    const io::Bytes bytes = encode_frame(env);
    sock.write_all(bytes.data(), bytes.size());
}

/// Reads one framed message; empty optional on orderly close.
inline std::optional<Envelope> recv_envelope(const Socket& sock) {
    std::uint8_t header[kHeaderSize];
    if (!sock.read_exact(header, kHeaderSize)) return std::nullopt;
    const FrameHeader h = parse_header(header, kHeaderSize);
    Envelope env;
    env.version = h.version;
    env.type = h.type;
    env.session_id = h.session_id;
    env.frame_id = h.frame_id;
    env.payload.resize(h.payload_len);
    if (h.payload_len > 0 && !sock.read_exact(env.payload.data(), h.payload_len))
        throw std::runtime_error("socket: peer closed mid-frame");
    return env;
}

using CodecStore = std::map<std::uint64_t, Codec>;

/// The untrusted offload host: accepts sessions, validates the HELLO hashes,
/// decodes noisy latents with the advertised codec and returns the component
/// planes. It never sees a local-path plane or an unnoised latent; tests pin
/// that with the `recorder` hook, which observes every received envelope.
class Host {
public:
    struct Options {
        std::string listen_addr = "127.0.0.1";
        std::uint16_t port = 0;  // 0 picks an ephemeral port
        int idle_timeout_ms = 30000;
    };

    Host(CodecStore codecs, Options options)
        : codecs_(std::move(codecs)), options_(std::move(options)) {}

    ~Host() { stop(); }

    void start() {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw std::runtime_error("host: cannot create socket");
        listen_socket_ = Socket(fd);
        const int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(options_.port);
        if (::inet_pton(AF_INET, options_.listen_addr.c_str(), &addr.sin_addr) != 1)
            throw std::runtime_error("host: bad listen address " + options_.listen_addr);
        if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw std::runtime_error(std::string("host: bind failed: ") + std::strerror(errno));
        if (::listen(fd, 16) != 0)
            throw std::runtime_error(std::string("host: listen failed: ") + std::strerror(errno));

        sockaddr_in bound{};
        socklen_t len = sizeof bound;
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
        port_ = ntohs(bound.sin_port);

        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        listen_socket_.close_fd();
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            workers.swap(workers_);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

    std::uint16_t port() const { return port_; }

    /// Test hook: sees every envelope the host receives.
    std::function<void(const Envelope&)> recorder;

private:
    void accept_loop() {
        while (running_) {
            const int fd = ::accept(listen_socket_.fd(), nullptr, nullptr);
            if (fd < 0) {
                if (running_ && (errno == EINTR || errno == ECONNABORTED)) continue;
                break;  // listen socket closed by stop()
            }
            std::lock_guard<std::mutex> lock(mutex_);
            workers_.emplace_back([this, fd] { handle_session(Socket(fd)); });
        }
    }

    void send_error(const Socket& sock, std::uint64_t session, std::uint64_t frame, ErrorCode code,
                    const std::string& message) {
        Envelope env;
        env.type = MsgType::Error;
        env.session_id = session;
        env.frame_id = frame;
        env.payload = encode_error({code, message});
        try {
            send_envelope(sock, env);
        } catch (const std::exception&) {
            // Peer already gone; nothing else to do.
        }
    }

    void handle_session(Socket sock) {
        sock.set_recv_timeout(options_.idle_timeout_ms);
        std::optional<SessionConfig> config;
        const Codec* codec = nullptr;
        std::uint64_t session_id = 0;
        std::uint64_t last_frame = 0;
        bool any_frame = false;

        try {
            while (running_) {
                const std::optional<Envelope> msg = recv_envelope(sock);
                if (!msg) return;  // orderly close
                if (recorder) recorder(*msg);

                if (!config) {
                    if (msg->type != MsgType::Hello) {
                        send_error(sock, msg->session_id, msg->frame_id, ErrorCode::Protocol,
                                   "expected HELLO");
                        return;
                    }
                    SessionConfig candidate;
                    try {
                        candidate = decode_session_config(msg->payload);
                    } catch (const std::exception& e) {
                        send_error(sock, msg->session_id, 0, ErrorCode::BadConfig, e.what());
                        return;
                    }
                    const auto it = codecs_.find(candidate.codec_hash);
                    if (it == codecs_.end()) {
                        send_error(sock, msg->session_id, 0, ErrorCode::HashMismatch,
                                   "unknown codec hash");
                        return;
                    }
                    const Codec& c = it->second;
                    if (c.latent_dim != candidate.latent_dim ||
                        c.input_dim != candidate.offloaded_ids.size() * candidate.plane_size()) {
                        send_error(sock, msg->session_id, 0, ErrorCode::BadConfig,
                                   "codec does not fit advertised geometry");
                        return;
                    }
                    config = candidate;
                    codec = &c;
                    session_id = msg->session_id;
                    Envelope ack;
                    ack.type = MsgType::HelloAck;
                    ack.session_id = session_id;
                    send_envelope(sock, ack);
                    continue;
                }

                switch (msg->type) {
                    case MsgType::OffloadLatent: {
                        if (msg->payload.size() != config->latent_dim * 4u) {
                            send_error(sock, session_id, msg->frame_id, ErrorCode::BadLatentLength,
                                       "latent length mismatch");
                            return;
                        }
                        if (any_frame && msg->frame_id <= last_frame) {
                            send_error(sock, session_id, msg->frame_id, ErrorCode::BadFrameOrder,
                                       "frame ids must strictly increase");
                            return;
                        }
                        last_frame = msg->frame_id;
                        any_frame = true;

                        const std::vector<float> wire = decode_f32_payload(msg->payload);
                        LatentCode z;
                        z.frame_id = msg->frame_id;
                        z.path = CodecPath::Offloaded;
                        z.values.assign(wire.begin(), wire.end());
                        const std::vector<float> planes = decode_to_f32(*codec, z);

                        Envelope reply;
                        reply.type = MsgType::ReturnComponents;
                        reply.session_id = session_id;
                        reply.frame_id = msg->frame_id;
                        reply.payload = encode_f32_payload(planes);
                        send_envelope(sock, reply);
                        break;
                    }
                    case MsgType::Bye:
                        return;
                    default:
                        send_error(sock, session_id, msg->frame_id, ErrorCode::Protocol,
                                   "unexpected message type");
                        return;
                }
            }
        } catch (const std::exception&) {
            // Timeout or transport failure: drop the session.
        }
    }

    CodecStore codecs_;
    Options options_;
    Socket listen_socket_;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex mutex_;
    std::vector<std::thread> workers_;
    std::uint16_t port_ = 0;
};

struct FrameLog {
    std::uint64_t frame_id = 0;
    bool ok = false;
    std::string error;
    double decompose_s = 0.0;
    double encode_s = 0.0;
    double network_s = 0.0;
    double local_path_s = 0.0;
    double merge_s = 0.0;
};

struct ClientResult {
    std::vector<Texture> reconstructed;  // one per completed frame
    std::vector<FrameLog> logs;          // one per attempted frame
    bool completed = false;
    std::string error;
};

inline Socket connect_to(const std::string& host, std::uint16_t port, int timeout_ms) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("client: cannot create socket");
    Socket sock(fd);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw std::runtime_error("client: bad host address " + host);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
        throw std::runtime_error(std::string("client: connect failed: ") + std::strerror(errno));
    sock.set_recv_timeout(timeout_ms);
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return sock;
}

/// Runs the trusted-client side of a session: per frame it decomposes,
/// encodes both paths, noises and ships the offloaded latent, decodes the
/// local path while waiting, merges the returned planes and inverse
/// transforms. Stage wall-clock timings land in the per-frame log.
inline ClientResult run_client_session(const std::string& host, std::uint16_t port,
                                       const std::vector<LabeledFrame>& frames,
                                       const PipelineConfig& cfg, int timeout_ms = 5000) {
    using clock = std::chrono::steady_clock;
    const auto secs = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    };

    ClientResult result;
    try {
        const Socket sock = connect_to(host, port, timeout_ms);
        const std::uint64_t session_id =
            RngStream(cfg.session_seed, "session-id").next_u64();

        SessionConfig sc;
        sc.block = cfg.plan.block;
        sc.offloaded_ids = cfg.plan.offloaded_ids;
        sc.latent_dim = static_cast<std::uint32_t>(cfg.offload_codec.latent_dim);
        sc.codec_hash = codec_content_hash(cfg.offload_codec);
        sc.calibration_hash = calibration_hash(cfg.calibration);
        sc.plane_height = cfg.mean.height / cfg.plan.block;
        sc.plane_width = cfg.mean.width / cfg.plan.block;
        sc.plane_channels = cfg.mean.channels;

        Envelope hello;
        hello.type = MsgType::Hello;
        hello.session_id = session_id;
        hello.payload = encode_session_config(sc);
        send_envelope(sock, hello);

        const std::optional<Envelope> ack = recv_envelope(sock);
        if (!ack) throw std::runtime_error("host closed during handshake");
        if (ack->type == MsgType::Error) {
            const WireError err = decode_error(ack->payload);
            throw std::runtime_error("host rejected session: " + err.message);
        }
        if (ack->type != MsgType::HelloAck) throw std::runtime_error("unexpected handshake reply");

        for (const auto& frame : frames) {
            FrameLog log;
            log.frame_id = frame.frame_id;
            try {
                const auto t0 = clock::now();
                const freq::ComponentSet comps =
                    freq::block_dct(frame.texture, cfg.mean, cfg.plan.block);
                const auto [local_sub, offload_sub] = freq::split(comps, cfg.plan);
                const auto t1 = clock::now();
                log.decompose_s = secs(t0, t1);

                LatentCode clean =
                    encode(cfg.offload_codec, freq::stack_vector(offload_sub), frame.frame_id);
                RngStream noise_rng = frame_noise_stream(cfg.session_seed, frame.frame_id);
                LatentCode noisy = add_noise(clean, cfg.calibration, noise_rng);
                quantize_latent_to_wire(noisy);
                const auto t2 = clock::now();
                log.encode_s = secs(t1, t2);

                Envelope request;
                request.type = MsgType::OffloadLatent;
                request.session_id = session_id;
                request.frame_id = frame.frame_id;
                std::vector<float> wire(noisy.values.size());
                for (std::size_t i = 0; i < wire.size(); ++i)
                    wire[i] = static_cast<float>(noisy.values[i]);
                request.payload = encode_f32_payload(wire);
                send_envelope(sock, request);

                // Local path proceeds while the host works.
                const auto t3 = clock::now();
                freq::ComponentSubset local_decoded = local_sub;
                if (!cfg.plan.local_ids.empty()) {
                    if (!cfg.local_codec)
                        throw std::runtime_error("client: missing local codec");
                    const LatentCode local_z =
                        encode(*cfg.local_codec, freq::stack_vector(local_sub), frame.frame_id);
                    const std::vector<float> local_flat = decode_to_f32(*cfg.local_codec, local_z);
                    std::size_t pos = 0;
                    for (auto& plane : local_decoded.planes)
                        for (float& v : plane) v = local_flat[pos++];
                }
                const auto t4 = clock::now();
                log.local_path_s = secs(t3, t4);

                const std::optional<Envelope> reply = recv_envelope(sock);
                if (!reply) throw std::runtime_error("host closed mid-session");
                if (reply->type == MsgType::Error) {
                    const WireError err = decode_error(reply->payload);
                    throw std::runtime_error("host error: " + err.message);
                }
                if (reply->type != MsgType::ReturnComponents || reply->frame_id != frame.frame_id)
                    throw std::runtime_error("unexpected host reply");
                const auto t5 = clock::now();
                log.network_s = secs(t2, t5) - log.local_path_s;

                const std::vector<float> returned = decode_f32_payload(reply->payload);
                freq::ComponentSubset offload_decoded = local_sub;  // reshaped below
                offload_decoded.ids = cfg.plan.offloaded_ids;
                offload_decoded.planes.assign(cfg.plan.offloaded_ids.size(),
                                              std::vector<float>(comps.plane_size()));
                if (returned.size() != offload_decoded.planes.size() * comps.plane_size())
                    throw std::runtime_error("returned plane payload has wrong size");
                std::size_t pos = 0;
                for (auto& plane : offload_decoded.planes)
                    for (float& v : plane) v = returned[pos++];

                const freq::ComponentSet merged =
                    freq::merge(local_decoded, offload_decoded, cfg.plan);
                result.reconstructed.push_back(freq::block_idct(merged, cfg.mean));
                const auto t6 = clock::now();
                log.merge_s = secs(t5, t6);
                log.ok = true;
                result.logs.push_back(log);
            } catch (const std::exception& e) {
                log.ok = false;
                log.error = e.what();
                result.logs.push_back(log);
                result.error = e.what();
                return result;  // abort session, partial log retained
            }
        }

        Envelope bye;
        bye.type = MsgType::Bye;
        bye.session_id = session_id;
        send_envelope(sock, bye);
        result.completed = true;
    } catch (const std::exception& e) {
        result.error = e.what();
    }
    return result;
}

}  // namespace pvtr::net
