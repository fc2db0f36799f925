#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pvtr/attack.hpp"
#include "pvtr/pipeline.hpp"

using namespace pvtr;

namespace {

CorpusSpec attack_spec() {
    CorpusSpec spec;
    spec.height = 32;
    spec.width = 32;
    spec.classes = 10;
    spec.frames_per_class = 4;
    spec.seed = 11;
    return spec;
}

std::vector<LabeledLatent> separable_two_class(std::size_t per_class, RngStream& rng) {
    std::vector<LabeledLatent> data;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        LabeledLatent s;
        s.label = i % 2;
        s.values.assign(8, 0.0);
        for (double& v : s.values) v = 0.3 * rng.gaussian();
        s.values[0] += s.label == 0 ? -3.0 : 3.0;
        data.push_back(std::move(s));
    }
    return data;
}

}  // namespace

TEST(ReferenceBank, SingleFrameClassesPickThatFrame) {
    CorpusSpec spec = attack_spec();
    spec.frames_per_class = 1;
    const auto frames = generate_corpus(spec);
    const Texture mean = dataset_mean(frames);
    const auto plan = freq::full_offload_plan(4);
    const ReferenceBank bank = build_reference_bank(frames, mean, plan, RngStream(5, "bank"));
    ASSERT_EQ(bank.references.size(), spec.classes);
    for (std::size_t label = 0; label < spec.classes; ++label) {
        const auto cs = freq::block_dct(frames[label].texture, mean, 4);
        const auto expected = freq::extract(cs, plan.offloaded_ids);
        for (std::size_t p = 0; p < expected.planes.size(); ++p)
            EXPECT_EQ(bank.references[label].planes[p], expected.planes[p]);
    }
}

TEST(ReferenceBank, FixedSeedIsReproducibleAndShapesMatchPlan) {
    const auto frames = generate_corpus(attack_spec());
    const Texture mean = dataset_mean(frames);
    const auto rank = [&] {
        std::vector<freq::ComponentSet> d;
        for (const auto& f : frames) d.push_back(freq::block_dct(f.texture, mean, 4));
        return freq::energy_rank(d);
    }();
    const auto plan = freq::make_plan(rank, 14, true, 4);
    const ReferenceBank a = build_reference_bank(frames, mean, plan, RngStream(9, "bank"));
    const ReferenceBank b = build_reference_bank(frames, mean, plan, RngStream(9, "bank"));
    ASSERT_EQ(a.references.size(), b.references.size());
    for (std::size_t i = 0; i < a.references.size(); ++i) {
        EXPECT_EQ(a.references[i].ids, plan.offloaded_ids);
        EXPECT_EQ(a.references[i].planes.size(), plan.offloaded_ids.size());
        for (std::size_t p = 0; p < a.references[i].planes.size(); ++p)
            EXPECT_EQ(a.references[i].planes[p], b.references[i].planes[p]);
    }

    std::vector<LabeledFrame> missing = {frames[0]};  // label 0 only
    missing[0].label = 1;
    EXPECT_THROW(build_reference_bank(missing, mean, plan, RngStream(9, "bank")),
                 std::invalid_argument);
}

TEST(EmpiricalAttack, ExactReferenceQueryReturnsItsLabel) {
    const auto frames = generate_corpus(attack_spec());
    const Texture mean = dataset_mean(frames);
    const auto plan = freq::full_offload_plan(4);
    const ReferenceBank bank = build_reference_bank(frames, mean, plan, RngStream(5, "bank"));
    for (std::size_t label = 0; label < bank.references.size(); ++label)
        EXPECT_EQ(empirical_attack(bank.references[label], bank), label);
}

TEST(EmpiricalAttack, TiesResolveToLowerLabel) {
    ReferenceBank bank;
    bank.plan = freq::full_offload_plan(2);
    freq::ComponentSubset proto;
    proto.block = 2;
    proto.height = 2;
    proto.width = 2;
    proto.channels = 1;
    proto.ids = {0, 1, 2, 3};
    proto.planes.assign(4, std::vector<float>(1, 0.0f));

    freq::ComponentSubset ref_a = proto, ref_b = proto, query = proto;
    ref_a.planes[0][0] = 1.0f;   // distance 1 from query
    ref_b.planes[0][0] = -1.0f;  // also distance 1
    bank.references = {ref_a, ref_b};
    EXPECT_EQ(empirical_attack(query, bank), 0u);
}

TEST(EmpiricalAttack, InvariantUnderCommonPositiveScaling) {
    const auto frames = generate_corpus(attack_spec());
    const Texture mean = dataset_mean(frames);
    const auto plan = freq::full_offload_plan(4);
    ReferenceBank bank = build_reference_bank(frames, mean, plan, RngStream(5, "bank"));

    const auto cs = freq::block_dct(frames[7].texture, mean, 4);
    freq::ComponentSubset query = freq::extract(cs, plan.offloaded_ids);
    const std::uint32_t base = empirical_attack(query, bank);

    ReferenceBank scaled_bank = bank;
    freq::ComponentSubset scaled_query = query;
    const float c = 7.5f;
    for (auto& ref : scaled_bank.references)
        for (auto& plane : ref.planes)
            for (float& v : plane) v *= c;
    for (auto& plane : scaled_query.planes)
        for (float& v : plane) v *= c;
    EXPECT_EQ(empirical_attack(scaled_query, scaled_bank), base);
}

TEST(EmpiricalAttack, NoiselessFullOffloadIdentifiesSeparableCorpus) {
    const auto frames = generate_corpus(attack_spec());
    const Texture mean = dataset_mean(frames);
    const auto plan = freq::full_offload_plan(4);
    const PathCodecs codecs = train_path_codecs(frames, mean, plan, 40);

    PipelineConfig cfg;
    cfg.plan = plan;
    cfg.mean = mean;
    cfg.offload_codec = codecs.offloaded;
    cfg.calibration = zero_calibration(codecs.offloaded.latent_dim);
    cfg.session_seed = 3;

    const ReferenceBank bank = build_reference_bank(frames, mean, plan, RngStream(5, "bank"));
    const auto stream = build_observations(cfg, frames, frames.size());
    std::size_t correct = 0;
    for (const auto& obs : stream)
        if (empirical_attack(obs.decoded_planes, bank) == obs.label) ++correct;
    EXPECT_GE(static_cast<double>(correct) / stream.size(), 0.95);
}

TEST(Mlp, SoftmaxSumsToOneAndLossNonNegative) {
    const MlpAttacker net = init_mlp({6, 4, 3}, MlpHyperparams{});
    RngStream rng(13, "softmax-in");
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> x(6);
        for (double& v : x) v = 3.0 * rng.gaussian();
        const auto probs = mlp_probabilities(net, x);
        double total = 0.0;
        for (double p : probs) {
            EXPECT_GE(p, 0.0);
            total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
    }
}

TEST(Mlp, LearnsLinearlySeparableTaskWithinTenEpochs) {
    RngStream rng(14, "separable");
    const auto data = separable_two_class(40, rng);
    MlpHyperparams hp;
    hp.seed = 2;
    const MlpAttacker net = train_mlp(data, {8, 16, 2}, hp);
    std::size_t correct = 0;
    for (const auto& s : data)
        if (mlp_predict(net, s.values) == s.label) ++correct;
    EXPECT_EQ(correct, data.size());

    // Training loss non-increasing per epoch within a 1e-3 allowance.
    for (std::size_t e = 1; e < net.epoch_loss.size(); ++e)
        EXPECT_LE(net.epoch_loss[e], net.epoch_loss[e - 1] + 1e-3);
}

TEST(Mlp, ZeroEpochsBehavesLikeChance) {
    RngStream rng(15, "untrained");
    const auto data = separable_two_class(200, rng);
    MlpHyperparams hp;
    hp.epochs = 0;
    const MlpAttacker net = train_mlp(data, {8, 16, 2}, hp);
    std::size_t correct = 0;
    for (const auto& s : data)
        if (mlp_predict(net, s.values) == s.label) ++correct;
    const double acc = static_cast<double>(correct) / data.size();
    EXPECT_GT(acc, 0.2);
    EXPECT_LT(acc, 0.8);
}

TEST(Mlp, TrainingIsBitExactUnderFixedSeed) {
    RngStream rng(16, "repro");
    const auto data = separable_two_class(30, rng);
    MlpHyperparams hp;
    hp.seed = 77;
    const MlpAttacker a = train_mlp(data, {8, 8, 2}, hp);
    const MlpAttacker b = train_mlp(data, {8, 8, 2}, hp);
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        EXPECT_EQ(a.layers[l].weights.data, b.layers[l].weights.data);
        EXPECT_EQ(a.layers[l].bias, b.layers[l].bias);
    }
    EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(Mlp, RejectsOutOfRangeLabels) {
    RngStream rng(17, "bad-label");
    auto data = separable_two_class(4, rng);
    data[0].label = 9;
    EXPECT_THROW(train_mlp(data, {8, 8, 2}, MlpHyperparams{}), std::invalid_argument);
}

TEST(GradCheck, TenSeededNetsStayWithinTolerance) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        MlpHyperparams hp;
        hp.seed = seed;
        const MlpAttacker net = init_mlp({10, 7, 5}, hp);
        RngStream rng(seed, "grad-sample");
        std::vector<double> x(10);
        for (double& v : x) v = rng.gaussian();
        const std::uint32_t label = static_cast<std::uint32_t>(rng.next_below(5));
        EXPECT_LE(grad_check(net, x, label), 1e-4) << "seed=" << seed;
    }
}

TEST(GradCheck, TrainedNetAlsoPasses) {
    RngStream rng(18, "grad-trained");
    const auto data = separable_two_class(20, rng);
    const MlpAttacker net = train_mlp(data, {8, 6, 2}, MlpHyperparams{});
    EXPECT_LE(grad_check(net, data[3].values, data[3].label), 1e-4);
}

TEST(Wilson, IntervalContainsPointEstimate) {
    for (auto [correct, trials] : std::vector<std::pair<std::size_t, std::size_t>>{
             {0, 50}, {1, 65}, {30, 2000}, {50, 50}}) {
        const auto [lo, hi] = wilson_interval(correct, trials);
        const double p = static_cast<double>(correct) / trials;
        EXPECT_LE(lo, p + 1e-12);
        EXPECT_GE(hi, p - 1e-12);
        EXPECT_GE(lo, 0.0);
        EXPECT_LE(hi, 1.0);
    }
    EXPECT_THROW(wilson_interval(0, 0), std::invalid_argument);
}

TEST(EvaluatePsr, PerfectAndUniformAttackers) {
    RngStream label_rng(19, "labels");
    std::vector<Observation> stream(2000);
    for (std::size_t i = 0; i < stream.size(); ++i)
        stream[i].label = static_cast<std::uint32_t>(label_rng.next_below(65));

    auto perfect = [](const Observation& o) { return o.label; };
    RngStream guess_rng(20, "guess");
    auto uniform = [&guess_rng](const Observation&) {
        return static_cast<std::uint32_t>(guess_rng.next_below(65));
    };

    const auto reports = evaluate_psr({{"perfect", perfect}, {"uniform", uniform}}, stream);
    ASSERT_EQ(reports.size(), 3u);
    EXPECT_DOUBLE_EQ(reports[0].e_psr, 1.0);
    // Uniform guessing: the Wilson CI must contain the prior 1/65.
    EXPECT_LE(reports[1].ci_lo, 1.0 / 65.0);
    EXPECT_GE(reports[1].ci_hi, 1.0 / 65.0);
    // Combined takes the max across attackers.
    EXPECT_DOUBLE_EQ(reports[2].e_psr, 1.0);
    EXPECT_EQ(reports[2].attacker, "combined");

    EXPECT_THROW(evaluate_psr({{"perfect", perfect}}, {}), std::invalid_argument);
}

TEST(EvaluatePsr, LabelShuffledStreamIsChanceForRealAttacker) {
    // Shuffling labels decouples them from observations; any attacker's CI
    // must then contain 1/K.
    const auto frames = generate_corpus(attack_spec());
    const Texture mean = dataset_mean(frames);
    const auto plan = freq::full_offload_plan(4);
    const PathCodecs codecs = train_path_codecs(frames, mean, plan, 40);

    PipelineConfig cfg;
    cfg.plan = plan;
    cfg.mean = mean;
    cfg.offload_codec = codecs.offloaded;
    cfg.calibration = zero_calibration(codecs.offloaded.latent_dim);
    cfg.session_seed = 21;

    auto stream = build_observations(cfg, frames, 1000);
    RngStream shuffle(22, "label-shuffle");
    for (auto& obs : stream)
        obs.label = static_cast<std::uint32_t>(shuffle.next_below(attack_spec().classes));

    const ReferenceBank bank = build_reference_bank(frames, mean, plan, RngStream(5, "bank"));
    auto attacker = [&bank](const Observation& o) {
        return empirical_attack(o.decoded_planes, bank);
    };
    const auto reports = evaluate_psr({{"empirical", attacker}}, stream);
    const double prior = 1.0 / attack_spec().classes;
    EXPECT_LE(reports[0].ci_lo, prior);
    EXPECT_GE(reports[0].ci_hi, prior);
}

TEST(MlpContainer, RoundTripsThroughPmlp) {
    MlpHyperparams hp;
    hp.seed = 31;
    const MlpAttacker net = init_mlp({12, 9, 4}, hp);
    const MlpAttacker back = deserialize_mlp(serialize_mlp(net));
    ASSERT_EQ(back.dims, net.dims);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        EXPECT_EQ(back.layers[l].weights.data, net.layers[l].weights.data);
        EXPECT_EQ(back.layers[l].bias, net.layers[l].bias);
    }
}

TEST(Reports, CsvHasStableHeader) {
    const auto reports = std::vector<AttackReport>{make_report("empirical", 3, 100)};
    const std::string csv = reports_to_csv(reports);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "attacker,trials,correct,e_psr,ci_lo,ci_hi");
    EXPECT_NE(csv.find("empirical,100,3,"), std::string::npos);
}
