#include <gtest/gtest.h>

#include <mutex>
#include <vector>

#include "pvtr/net.hpp"
#include "pvtr/pipeline.hpp"

using namespace pvtr;
using namespace pvtr::net;

namespace {

struct Fixture {
    std::vector<LabeledFrame> frames;
    Texture mean;
    freq::PartitionPlan plan;
    PathCodecs codecs;
    NoiseCalibration calibration;

    PipelineConfig config(std::uint64_t seed) const {
        PipelineConfig cfg;
        cfg.plan = plan;
        cfg.mean = mean;
        cfg.local_codec = codecs.local;
        cfg.offload_codec = codecs.offloaded;
        cfg.calibration = calibration;
        cfg.session_seed = seed;
        return cfg;
    }
};

Fixture make_fixture(double v = 0.1) {
    CorpusSpec spec;
    spec.height = 32;
    spec.width = 32;
    spec.classes = 5;
    spec.frames_per_class = 6;
    spec.seed = 77;

    Fixture fx;
    fx.frames = generate_corpus(spec);
    fx.mean = dataset_mean(fx.frames);
    std::vector<freq::ComponentSet> decomposed;
    for (const auto& f : fx.frames) decomposed.push_back(freq::block_dct(f.texture, fx.mean, 4));
    fx.plan = freq::make_plan(freq::energy_rank(decomposed), 12, true, 4);
    fx.codecs = train_path_codecs(fx.frames, fx.mean, fx.plan, 24);
    const auto latents =
        profile_offload_latents(fx.frames, fx.mean, fx.plan, fx.codecs.offloaded);
    fx.calibration = calibrate_damp(linalg::covariance(latents), v);
    return fx;
}

CodecStore store_for(const Fixture& fx) {
    CodecStore store;
    store[codec_content_hash(fx.codecs.offloaded)] = fx.codecs.offloaded;
    return store;
}

}  // namespace

TEST(Net, LoopbackSessionIsBitIdenticalToInProcessPipeline) {
    const Fixture fx = make_fixture();
    Host host(store_for(fx), Host::Options{});
    host.start();

    const std::uint64_t seed = 1234;
    const PipelineConfig cfg = fx.config(seed);
    std::vector<LabeledFrame> stream(fx.frames.begin(), fx.frames.begin() + 10);

    const ClientResult result = run_client_session("127.0.0.1", host.port(), stream, cfg);
    ASSERT_TRUE(result.completed) << result.error;
    ASSERT_EQ(result.reconstructed.size(), stream.size());

    for (std::size_t i = 0; i < stream.size(); ++i) {
        const FrameResult local =
            process_frame(cfg, stream[i].texture, stream[i].frame_id);
        ASSERT_EQ(result.reconstructed[i].data, local.reconstructed.data)
            << "frame " << stream[i].frame_id << " diverged";
    }
    host.stop();
}

TEST(Net, HostObservesOnlyNoisyLatents) {
    const Fixture fx = make_fixture();
    Host host(store_for(fx), Host::Options{});

    std::mutex mu;
    std::vector<Envelope> seen;
    host.recorder = [&](const Envelope& env) {
        std::lock_guard<std::mutex> lock(mu);
        seen.push_back(env);
    };
    host.start();

    const std::uint64_t seed = 555;
    const PipelineConfig cfg = fx.config(seed);
    const ClientResult result = run_client_session("127.0.0.1", host.port(), fx.frames, cfg);
    ASSERT_TRUE(result.completed) << result.error;
    host.stop();

    // Reconstruct what must never cross the boundary.
    std::size_t latents_seen = 0;
    for (const auto& env : seen) {
        if (env.type != MsgType::OffloadLatent) continue;
        ++latents_seen;
        const auto& frame = fx.frames.at(env.frame_id);
        const freq::ComponentSet comps = freq::block_dct(frame.texture, fx.mean, 4);
        const auto [local_sub, offload_sub] = freq::split(comps, fx.plan);

        const std::vector<float> wire = decode_f32_payload(env.payload);

        // Not the unnoised offloaded latent.
        const LatentCode clean =
            encode(fx.codecs.offloaded, freq::stack_vector(offload_sub), env.frame_id);
        std::vector<float> clean_f32(clean.values.begin(), clean.values.end());
        EXPECT_NE(wire, clean_f32);

        // Not the local-path latent.
        const LatentCode local_z =
            encode(*fx.codecs.local, freq::stack_vector(local_sub), env.frame_id);
        std::vector<float> local_f32(local_z.values.begin(), local_z.values.end());
        EXPECT_NE(wire, local_f32);

        // Not any local-id plane (sizes differ already; check prefix too).
        for (const auto& plane : local_sub.planes) {
            const bool same_prefix =
                wire.size() <= plane.size() && std::equal(wire.begin(), wire.end(), plane.begin());
            EXPECT_FALSE(same_prefix);
        }
    }
    EXPECT_EQ(latents_seen, fx.frames.size());
}

TEST(Net, WrongCodecHashIsRejected) {
    const Fixture fx = make_fixture();
    CodecStore store;  // empty: the advertised hash is unknown
    Host host(std::move(store), Host::Options{});
    host.start();

    const ClientResult result =
        run_client_session("127.0.0.1", host.port(), fx.frames, fx.config(1));
    EXPECT_FALSE(result.completed);
    EXPECT_NE(result.error.find("unknown codec hash"), std::string::npos);
    host.stop();
}

TEST(Net, DuplicateFrameIdsAbortCleanlyWithPartialLog) {
    const Fixture fx = make_fixture();
    Host host(store_for(fx), Host::Options{});
    host.start();

    // Fault injection: the second frame repeats the first frame id, which the
    // host must reject as out-of-order.
    std::vector<LabeledFrame> stream = {fx.frames[0], fx.frames[1], fx.frames[2]};
    stream[1].frame_id = stream[0].frame_id;

    const ClientResult result =
        run_client_session("127.0.0.1", host.port(), stream, fx.config(9));
    EXPECT_FALSE(result.completed);
    ASSERT_EQ(result.logs.size(), 2u);  // first ok, second aborted
    EXPECT_TRUE(result.logs[0].ok);
    EXPECT_FALSE(result.logs[1].ok);
    EXPECT_NE(result.error.find("strictly increase"), std::string::npos);
    EXPECT_EQ(result.reconstructed.size(), 1u);
    host.stop();
}

TEST(Net, SecondSessionCanReuseTheHost) {
    const Fixture fx = make_fixture();
    Host host(store_for(fx), Host::Options{});
    host.start();

    std::vector<LabeledFrame> stream(fx.frames.begin(), fx.frames.begin() + 3);
    const ClientResult a = run_client_session("127.0.0.1", host.port(), stream, fx.config(1));
    const ClientResult b = run_client_session("127.0.0.1", host.port(), stream, fx.config(1));
    ASSERT_TRUE(a.completed) << a.error;
    ASSERT_TRUE(b.completed) << b.error;
    for (std::size_t i = 0; i < stream.size(); ++i)
        EXPECT_EQ(a.reconstructed[i].data, b.reconstructed[i].data);
    host.stop();
}

TEST(Net, ConnectToClosedPortFailsGracefully) {
    const Fixture fx = make_fixture();
    Host host(store_for(fx), Host::Options{});
    host.start();
    const std::uint16_t dead_port = host.port();
    host.stop();

    const ClientResult result =
        run_client_session("127.0.0.1", dead_port, fx.frames, fx.config(1));
    EXPECT_FALSE(result.completed);
    EXPECT_FALSE(result.error.empty());
}
