// Experiment harness for the secure texture-offloading pipeline: corpus
// generation, component ranking, codec training, noise calibration, PSR
// bounds, parameter sweeps, attacks, the performance model and the
// client/server demo.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime or protocol
// failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pvtr/attack.hpp"
#include "pvtr/config.hpp"
#include "pvtr/corpus.hpp"
#include "pvtr/net.hpp"
#include "pvtr/perfmodel.hpp"
#include "pvtr/pipeline.hpp"
#include "pvtr/privacy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pvtr;

namespace {

struct GlobalOpts {
    std::uint64_t seed = 1;
    bool quiet = false;
};

std::ostream& info(const GlobalOpts& g) {
    static std::ostringstream sink;
    if (g.quiet) {
        sink.str("");
        return sink;
    }
    return std::cout;
}

// --- plan file ---------------------------------------------------------------

void save_plan(const std::string& path, const freq::PartitionPlan& plan) {
    json j;
    j["block"] = plan.block;
    j["keep_base_local"] = plan.keep_base_local;
    j["offloaded_ids"] = plan.offloaded_ids;
    j["local_ids"] = plan.local_ids;
    io::write_text_file(path, j.dump(2) + "\n");
}

freq::PartitionPlan load_plan(const std::string& path) {
    const io::Bytes bytes = io::read_file(path);
    const json j = json::parse(std::string(bytes.begin(), bytes.end()));
    freq::PartitionPlan plan;
    plan.block = j.at("block").get<std::uint32_t>();
    plan.keep_base_local = j.at("keep_base_local").get<bool>();
    plan.offloaded_ids = j.at("offloaded_ids").get<std::vector<std::uint32_t>>();
    plan.local_ids = j.at("local_ids").get<std::vector<std::uint32_t>>();
    plan.validate();
    return plan;
}

// --- profile loading -----------------------------------------------------------

perf::DeviceProfile device_from(const Config& cfg, const std::string& section,
                                const perf::DeviceProfile& fallback) {
    perf::DeviceProfile d = fallback;
    d.name = cfg.get_string(section, "name", section);
    d.peak_flops = cfg.get_double(section, "peak_flops", fallback.peak_flops);
    d.mem_bandwidth = cfg.get_double(section, "mem_bandwidth", fallback.mem_bandwidth);
    d.gops_per_watt = cfg.get_double(section, "gops_per_watt", fallback.gops_per_watt);
    d.validate();
    return d;
}

perf::LinkProfile link_from(const Config& cfg, const std::string& section,
                            const perf::LinkProfile& fallback) {
    perf::LinkProfile l = fallback;
    l.bits_per_second = cfg.get_double(section, "bits_per_second", fallback.bits_per_second);
    l.joules_per_bit = cfg.get_double(section, "joules_per_bit", fallback.joules_per_bit);
    l.validate();
    return l;
}

perf::WorkloadProfile workload_from(const Config& cfg, const std::string& section,
                                    const perf::WorkloadProfile& fallback) {
    perf::WorkloadProfile w = fallback;
    w.block = static_cast<std::uint32_t>(cfg.get_u64(section, "block", fallback.block));
    w.offloaded = static_cast<std::uint32_t>(cfg.get_u64(section, "offloaded", fallback.offloaded));
    w.texture_decoder_flops =
        cfg.get_double(section, "texture_decoder_flops", fallback.texture_decoder_flops);
    w.fixed_flops = cfg.get_double(section, "fixed_flops", fallback.fixed_flops);
    w.return_bytes_per_component =
        cfg.get_double(section, "return_bytes_per_component", fallback.return_bytes_per_component);
    w.fps = cfg.get_double(section, "fps", fallback.fps);
    if (cfg.has(section, "measured_local_ms"))
        w.measured_local_s = cfg.get_double(section, "measured_local_ms") / 1e3;
    if (cfg.has(section, "measured_offload_ms"))
        w.measured_offload_s = cfg.get_double(section, "measured_offload_ms") / 1e3;
    if (cfg.has(section, "measured_comm_ms"))
        w.measured_comm_s = cfg.get_double(section, "measured_comm_ms") / 1e3;
    return w;
}

perf::DeviceProfile default_headset() {
    perf::DeviceProfile d;
    d.name = "quest_pro";
    d.peak_flops = 902e9;
    d.mem_bandwidth = 51.2e9;
    d.gops_per_watt = 32.0;
    return d;
}

perf::DeviceProfile default_host() {
    perf::DeviceProfile d;
    d.name = "host_gpu";
    d.peak_flops = 100e12;
    d.mem_bandwidth = 1.5e12;
    d.gops_per_watt = 32.0;
    return d;
}

perf::LinkProfile default_link() {
    perf::LinkProfile l;
    l.bits_per_second = 20e9;
    l.joules_per_bit = 13.94e-9;
    return l;
}

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& s) {
    const std::size_t colon = s.rfind(':');
    if (colon == std::string::npos)
        throw ConfigError("endpoint must be <addr>:<port>, got " + s);
    const std::string host = s.substr(0, colon);
    const int port = std::stoi(s.substr(colon + 1));
    if (port < 0 || port > 65535) throw ConfigError("port out of range in " + s);
    return {host, static_cast<std::uint16_t>(port)};
}

std::vector<freq::ComponentSet> decompose_all(const std::vector<LabeledFrame>& frames,
                                              const Texture& mean, std::uint32_t block) {
    std::vector<freq::ComponentSet> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(freq::block_dct(f.texture, mean, block));
    return out;
}

// --- gen-corpus ----------------------------------------------------------------

int cmd_gen_corpus(const GlobalOpts& g, const std::string& spec_path, const std::string& out_dir) {
    CorpusSpec spec;
    spec.seed = g.seed;
    if (!spec_path.empty()) {
        const Config cfg = Config::load(spec_path);
        spec.height = static_cast<std::uint32_t>(cfg.get_u64("corpus", "height", spec.height));
        spec.width = static_cast<std::uint32_t>(cfg.get_u64("corpus", "width", spec.width));
        spec.classes = static_cast<std::uint32_t>(cfg.get_u64("corpus", "classes", spec.classes));
        spec.frames_per_class = static_cast<std::uint32_t>(
            cfg.get_u64("corpus", "frames_per_class", spec.frames_per_class));
        spec.spectral_decay = cfg.get_double("corpus", "spectral_decay", spec.spectral_decay);
        spec.jitter_sigma = cfg.get_double("corpus", "jitter_sigma", spec.jitter_sigma);
        spec.block = static_cast<std::uint32_t>(cfg.get_u64("corpus", "block", spec.block));
        spec.seed = cfg.get_u64("corpus", "seed", spec.seed);
    }
    const auto frames = generate_corpus(spec);
    write_corpus(out_dir, frames);
    info(g) << "wrote " << frames.size() << " frames (" << spec.classes << " classes) to "
            << out_dir << "\n";
    return 0;
}

// --- rank -----------------------------------------------------------------------

int cmd_rank(const GlobalOpts& g, const std::string& corpus_dir, std::uint32_t block,
             const std::string& stat_name, int m, bool offload_base, bool full_offload,
             const std::string& out_dir) {
    const auto frames = load_corpus(corpus_dir);
    const Texture mean = dataset_mean(frames);
    const auto stat = stat_name == "msn" ? freq::EnergyStatistic::MeanSquaredNorm
                                         : freq::EnergyStatistic::VarianceAroundMean;
    const freq::EnergyRanking ranking = freq::energy_rank(decompose_all(frames, mean, block), stat);

    fs::create_directories(out_dir);
    std::ostringstream csv;
    csv << "component,u,v,statistic,rank\n";
    std::vector<std::size_t> position(ranking.statistic.size());
    for (std::size_t r = 0; r < ranking.ordering.size(); ++r) position[ranking.ordering[r]] = r;
    for (std::size_t k = 0; k < ranking.statistic.size(); ++k)
        csv << k << "," << k / block << "," << k % block << ","
            << io::fmt_double(ranking.statistic[k]) << "," << position[k] << "\n";
    io::write_text_file((fs::path(out_dir) / "ranking.csv").string(), csv.str());

    if (full_offload) {
        save_plan((fs::path(out_dir) / "plan.json").string(), freq::full_offload_plan(block));
        info(g) << "wrote full-offload plan\n";
    } else if (m > 0) {
        const auto plan =
            freq::make_plan(ranking, static_cast<std::size_t>(m), !offload_base, block);
        save_plan((fs::path(out_dir) / "plan.json").string(), plan);
        info(g) << "wrote plan: " << plan.offloaded_ids.size() << " offloaded, "
                << plan.local_ids.size() << " local\n";
    }
    info(g) << "wrote ranking for " << ranking.statistic.size() << " components\n";
    return 0;
}

// --- train-codec -----------------------------------------------------------------

int cmd_train_codec(const GlobalOpts& g, const std::string& corpus_dir,
                    const std::string& plan_path, const std::string& path_name,
                    std::size_t latent_dim, const std::string& out_file) {
    const auto frames = load_corpus(corpus_dir);
    const Texture mean = dataset_mean(frames);
    const freq::PartitionPlan plan = load_plan(plan_path);
    const bool local = path_name == "local";
    if (local && plan.local_ids.empty())
        throw ConfigError("plan has an empty local path; nothing to train");

    std::vector<std::vector<double>> stacks;
    stacks.reserve(frames.size());
    for (const auto& f : frames) {
        const auto cs = freq::block_dct(f.texture, mean, plan.block);
        stacks.push_back(
            freq::stack_vector(freq::extract(cs, local ? plan.local_ids : plan.offloaded_ids)));
    }
    const std::size_t d = clamp_latent_dim(latent_dim, stacks[0].size(), stacks.size());
    const Codec codec = train_codec(stacks, d, local ? CodecPath::Local : CodecPath::Offloaded);
    save_codec(out_file, codec);
    info(g) << "trained " << path_name << " codec: n=" << codec.input_dim
            << " d=" << codec.latent_dim << " hash=" << codec_content_hash(codec) << "\n";
    return 0;
}

// --- calibrate ---------------------------------------------------------------------

int cmd_calibrate(const GlobalOpts& g, const std::string& corpus_dir, const std::string& codec_path,
                  const std::string& plan_path, double v, const std::string& mode, double floor,
                  double eps, double delta, double sensitivity, std::size_t classes,
                  const std::string& table_path, const std::string& out_file) {
    const auto frames = load_corpus(corpus_dir);
    const Texture mean = dataset_mean(frames);
    const freq::PartitionPlan plan = load_plan(plan_path);
    const Codec codec = load_codec(codec_path);
    const auto latents = profile_offload_latents(frames, mean, plan, codec);
    const linalg::Matrix cov = linalg::covariance(latents);

    if (!out_file.empty()) {
        NoiseCalibration cal;
        if (mode == "damp") {
            cal = calibrate_damp(cov, v, floor);
        } else if (mode == "iso") {
            cal = calibrate_isotropic_mi(cov, v, floor);
        } else if (mode == "dp") {
            double s = sensitivity;
            if (s <= 0.0) {
                for (const auto& z : latents) {
                    double norm = 0.0;
                    for (double x : z) norm += x * x;
                    s = std::max(s, std::sqrt(norm));
                }
            }
            cal = calibrate_dp_gaussian(s, eps, delta, codec.latent_dim);
        } else {
            throw ConfigError("unknown calibration mode: " + mode);
        }
        save_calibration(out_file, cal);
        info(g) << mode << " calibration: trace=" << io::fmt_double(cal.trace)
                << " hash=" << calibration_hash(cal) << "\n";
    }

    if (!table_path.empty()) {
        const double prior = 1.0 / static_cast<double>(classes);
        std::ostringstream csv;
        csv << "v,t_psr,damp_trace,iso_trace,ratio\n";
        for (double budget : {4.0, 3.0, 1.0, 0.1, 0.01}) {
            const NoiseCalibration damp = calibrate_damp(cov, budget, floor);
            const NoiseCalibration iso = calibrate_isotropic_mi(cov, budget, floor);
            csv << io::fmt_double(budget) << "," << io::fmt_double(psr_from_mi(budget, prior))
                << "," << io::fmt_double(damp.trace) << "," << io::fmt_double(iso.trace) << ","
                << io::fmt_double(iso.trace / damp.trace) << "\n";
        }
        io::write_text_file(table_path, csv.str());
        info(g) << "wrote budget table to " << table_path << "\n";
    }
    return 0;
}

// --- bound -----------------------------------------------------------------------

int cmd_bound(const GlobalOpts& g, const std::vector<double>& v_list,
              const std::vector<double>& psr_list, std::size_t classes,
              const std::string& out_file) {
    const double prior = 1.0 / static_cast<double>(classes);
    std::ostringstream out;
    for (double v : v_list) {
        const double psr = psr_from_mi(v, prior);
        out << "v=" << io::fmt_double(v) << " -> t-PSR " << io::fmt_double(psr * 100.0, 6)
            << "% (prior " << io::fmt_double(prior * 100.0, 6) << "%)\n";
    }
    for (double target : psr_list) {
        const double v = mi_from_psr(target, prior);
        out << "t-PSR " << io::fmt_double(target * 100.0, 6) << "% -> v="
            << io::fmt_double(v, 6) << " nats\n";
    }
    if (!g.quiet) std::cout << out.str();
    if (!out_file.empty()) io::write_text_file(out_file, out.str());
    return 0;
}

// --- attack ---------------------------------------------------------------------

struct AttackArtifacts {
    std::vector<AttackReport> reports;
    std::optional<MlpAttacker> nn;
};

AttackArtifacts run_attack(const GlobalOpts& g, const std::vector<LabeledFrame>& frames,
                           const Texture& mean, const freq::PartitionPlan& plan,
                           const Codec& offload_codec, const NoiseCalibration& cal,
                           const std::string& attacker, std::size_t trials,
                           std::size_t train_per_class, std::size_t classes) {
    std::uint32_t max_label = 0;
    for (const auto& f : frames) max_label = std::max(max_label, f.label);
    const std::size_t k = classes > 0 ? classes : max_label + 1;
    if (k <= max_label) throw ConfigError("--classes below the corpus label range");

    PipelineConfig cfg;
    cfg.plan = plan;
    cfg.mean = mean;
    cfg.offload_codec = offload_codec;
    cfg.calibration = cal;
    cfg.session_seed = RngStream::derive_seed(g.seed, "attack-session");
    // The observation surfaces only involve the offloaded path; a local codec
    // is unnecessary for the adversary's view but process_frame wants one when
    // the plan has local ids. Train a throwaway on the fly.
    if (!plan.local_ids.empty()) {
        const PathCodecs codecs = train_path_codecs(frames, mean, plan, offload_codec.latent_dim);
        cfg.local_codec = codecs.local;
    }

    const auto stream = build_observations(cfg, frames, trials);

    std::vector<std::pair<std::string, AttackerFn>> attackers;
    std::optional<ReferenceBank> bank;
    AttackArtifacts artifacts;

    if (attacker == "both" || attacker == "empirical") {
        bank = build_reference_bank(frames, mean, plan,
                                    RngStream(g.seed, "attack/reference-bank"));
        const ReferenceBank* b = &*bank;
        attackers.emplace_back("empirical", [b](const Observation& o) {
            return empirical_attack(o.decoded_planes, *b);
        });
    }
    if (attacker == "both" || attacker == "nn") {
        const auto train_set =
            attacker_training_latents(frames, mean, plan, offload_codec, train_per_class);
        MlpHyperparams hp;
        hp.seed = RngStream::derive_seed(g.seed, "attack/nn");
        artifacts.nn = train_mlp(train_set, {offload_codec.latent_dim, 128, k}, hp);
        const MlpAttacker* net = &*artifacts.nn;
        attackers.emplace_back("nn", [net](const Observation& o) {
            return mlp_predict(*net, o.noisy_latent.values);
        });
    }
    if (attackers.empty()) throw ConfigError("unknown attacker selection: " + attacker);

    artifacts.reports = evaluate_psr(attackers, stream);
    if (!g.quiet)
        for (const auto& r : artifacts.reports)
            std::cout << r.attacker << ": e-PSR " << io::fmt_double(r.e_psr * 100.0, 4) << "% ["
                      << io::fmt_double(r.ci_lo * 100.0, 4) << ", "
                      << io::fmt_double(r.ci_hi * 100.0, 4) << "] over " << r.trials
                      << " trials\n";
    return artifacts;
}

json reports_to_json(const std::vector<AttackReport>& reports) {
    json out = json::array();
    for (const auto& r : reports)
        out.push_back({{"attacker", r.attacker},
                       {"trials", r.trials},
                       {"correct", r.correct},
                       {"e_psr", r.e_psr},
                       {"ci_lo", r.ci_lo},
                       {"ci_hi", r.ci_hi}});
    return out;
}

int cmd_attack(const GlobalOpts& g, const std::string& corpus_dir, const std::string& plan_path,
               const std::string& codec_path, const std::string& calib_path, bool no_noise,
               const std::string& attacker, std::size_t trials, std::size_t train_per_class,
               std::size_t classes, const std::string& out_dir) {
    const auto frames = load_corpus(corpus_dir);
    const Texture mean = dataset_mean(frames);
    const freq::PartitionPlan plan = load_plan(plan_path);
    const Codec codec = load_codec(codec_path);
    NoiseCalibration cal;
    if (no_noise)
        cal = zero_calibration(codec.latent_dim);
    else if (!calib_path.empty())
        cal = load_calibration(calib_path);
    else
        throw ConfigError("attack needs --calib or --no-noise");

    const AttackArtifacts artifacts = run_attack(g, frames, mean, plan, codec, cal, attacker,
                                                 trials, train_per_class, classes);
    fs::create_directories(out_dir);
    io::write_text_file((fs::path(out_dir) / "report.csv").string(),
                        reports_to_csv(artifacts.reports));
    json report;
    report["reports"] = reports_to_json(artifacts.reports);
    report["calibration_hash"] = no_noise ? 0 : calibration_hash(cal);
    if (artifacts.nn) {
        const MlpHyperparams& hp = artifacts.nn->hyperparams;
        report["nn_hyperparams"] = {{"learning_rate", hp.learning_rate},
                                    {"epochs", hp.epochs},
                                    {"batch_size", hp.batch_size},
                                    {"seed", hp.seed},
                                    {"dims", artifacts.nn->dims},
                                    {"train_per_class", train_per_class}};
    }
    io::write_text_file((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
    if (artifacts.nn)
        io::write_file((fs::path(out_dir) / "nn.pmlp").string(), serialize_mlp(*artifacts.nn));
    return 0;
}

// --- sweep -----------------------------------------------------------------------

int cmd_sweep(const GlobalOpts& g, const std::string& corpus_dir, const std::string& config_path,
              const std::string& out_dir) {
    Config cfg;
    if (!config_path.empty()) cfg = Config::load(config_path);

    const auto frames = load_corpus(corpus_dir);
    const Texture mean = dataset_mean(frames);
    const std::uint32_t block =
        static_cast<std::uint32_t>(cfg.get_u64("sweep", "block", 4));
    std::vector<double> m_list = {2, 4, 6, 8, 10, 12, 14};
    if (cfg.has("sweep", "m_list")) m_list = cfg.get_double_list("sweep", "m_list");
    std::vector<double> v_list = {1.0, 0.1, 0.01};
    if (cfg.has("sweep", "v_list")) v_list = cfg.get_double_list("sweep", "v_list");
    const bool include_no_noise = cfg.get_bool("sweep", "include_no_noise", true);
    const std::size_t latent_dim =
        static_cast<std::size_t>(cfg.get_u64("sweep", "latent_dim", 256));
    const std::size_t trials =
        static_cast<std::size_t>(cfg.get_u64("sweep", "trials", frames.size()));
    const std::size_t train_per_class =
        static_cast<std::size_t>(cfg.get_u64("sweep", "train_per_class", 2));
    const double l0 = cfg.get_double("sweep", "l0", 0.072);
    const bool keep_base_local = cfg.get_bool("sweep", "keep_base_local", true);

    std::uint32_t max_label = 0;
    for (const auto& f : frames) max_label = std::max(max_label, f.label);
    const std::size_t k = max_label + 1;
    const double prior = 1.0 / static_cast<double>(k);

    const perf::DeviceProfile headset = device_from(cfg, "device.local", default_headset());
    const perf::DeviceProfile host = device_from(cfg, "device.remote", default_host());
    const perf::LinkProfile link = link_from(cfg, "link", default_link());
    perf::WorkloadProfile workload = workload_from(cfg, "workload", perf::WorkloadProfile{});
    workload.block = block;

    const auto decomposed = decompose_all(frames, mean, block);
    const freq::EnergyRanking ranking = freq::energy_rank(decomposed);

    std::ostringstream csv;
    csv << "m,v,t_psr,normalized_loss,damp_trace,iso_trace,noise_ratio,e_psr_empirical,e_psr_nn,"
           "users,joules\n";
    json summary;
    summary["classes"] = k;
    summary["trials"] = trials;
    summary["l0"] = l0;
    summary["rows"] = json::array();

    for (double m_real : m_list) {
        const std::size_t m = static_cast<std::size_t>(m_real);
        const freq::PartitionPlan plan = freq::make_plan(ranking, m, keep_base_local, block);
        const PathCodecs codecs = train_path_codecs(frames, mean, plan, latent_dim);
        const auto latents = profile_offload_latents(frames, mean, plan, codecs.offloaded);
        const linalg::Matrix cov = linalg::covariance(latents);

        workload.offloaded = static_cast<std::uint32_t>(m);
        const perf::PerfReport perf_row = perf::evaluate(workload, headset, host, link);

        const ReferenceBank bank = build_reference_bank(
            frames, mean, plan, RngStream(g.seed, "sweep/bank/" + std::to_string(m)));
        const auto train_set =
            attacker_training_latents(frames, mean, plan, codecs.offloaded, train_per_class);
        MlpHyperparams hp;
        hp.seed = RngStream::derive_seed(g.seed, "sweep/nn/" + std::to_string(m));
        const MlpAttacker nn = train_mlp(train_set, {codecs.offloaded.latent_dim, 128, k}, hp);

        std::vector<std::optional<double>> cells;  // v budgets; nullopt = no noise
        if (include_no_noise) cells.push_back(std::nullopt);
        for (double v : v_list) cells.push_back(v);

        for (const auto& cell : cells) {
            PipelineConfig pipe;
            pipe.plan = plan;
            pipe.mean = mean;
            pipe.local_codec = codecs.local;
            pipe.offload_codec = codecs.offloaded;
            const std::string cell_name = cell ? io::fmt_double(*cell) : std::string("none");
            pipe.session_seed = RngStream::derive_seed(
                g.seed, "sweep/cell/" + std::to_string(m) + "/" + cell_name);
            NoiseCalibration damp_cal, iso_cal;
            if (cell) {
                damp_cal = calibrate_damp(cov, *cell);
                iso_cal = calibrate_isotropic_mi(cov, *cell);
                pipe.calibration = damp_cal;
            } else {
                pipe.calibration = zero_calibration(codecs.offloaded.latent_dim);
            }

            const double loss = corpus_loss(pipe, frames) / l0;

            const auto stream = build_observations(pipe, frames, trials);
            std::size_t correct_emp = 0, correct_nn = 0;
            for (const auto& obs : stream) {
                if (empirical_attack(obs.decoded_planes, bank) == obs.label) ++correct_emp;
                if (mlp_predict(nn, obs.noisy_latent.values) == obs.label) ++correct_nn;
            }
            const double e_emp = static_cast<double>(correct_emp) / stream.size();
            const double e_nn = static_cast<double>(correct_nn) / stream.size();

            csv << m << "," << cell_name << ","
                << (cell ? io::fmt_double(psr_from_mi(*cell, prior)) : std::string()) << ","
                << io::fmt_double(loss) << ","
                << (cell ? io::fmt_double(damp_cal.trace) : std::string()) << ","
                << (cell ? io::fmt_double(iso_cal.trace) : std::string()) << ","
                << (cell ? io::fmt_double(iso_cal.trace / damp_cal.trace) : std::string()) << ","
                << io::fmt_double(e_emp) << "," << io::fmt_double(e_nn) << ","
                << io::fmt_double(perf_row.users) << ","
                << io::fmt_double(perf_row.joules_per_user_frame) << "\n";

            json row;
            row["m"] = m;
            row["v"] = cell ? json(*cell) : json(nullptr);
            row["normalized_loss"] = loss;
            row["e_psr_empirical"] = e_emp;
            row["e_psr_nn"] = e_nn;
            row["users"] = perf_row.users;
            summary["rows"].push_back(row);

            info(g) << "m=" << m << " v=" << cell_name << " loss=" << io::fmt_double(loss, 6)
                    << " e-PSR emp=" << io::fmt_double(e_emp, 4)
                    << " nn=" << io::fmt_double(e_nn, 4) << "\n";
        }
    }

    fs::create_directories(out_dir);
    io::write_text_file((fs::path(out_dir) / "sweep.csv").string(), csv.str());
    io::write_text_file((fs::path(out_dir) / "summary.json").string(), summary.dump(2) + "\n");
    return 0;
}

// --- perf -----------------------------------------------------------------------

int cmd_perf(const GlobalOpts& g, const std::string& config_path, const std::string& local_section,
             const std::string& remote_section, const std::string& link_section,
             const std::string& workload_section, const std::vector<double>& m_list,
             const std::string& out_dir) {
    Config cfg;
    if (!config_path.empty()) cfg = Config::load(config_path);
    const perf::DeviceProfile headset = device_from(cfg, local_section, default_headset());
    const perf::DeviceProfile host = device_from(cfg, remote_section, default_host());
    const perf::LinkProfile link = link_from(cfg, link_section, default_link());
    const perf::WorkloadProfile base = workload_from(cfg, workload_section, perf::WorkloadProfile{});

    std::ostringstream csv;
    csv << "m,v,local_ms,offload_ms,comm_ms,users,users_per_watt,joules\n";
    for (double m_real : m_list) {
        perf::WorkloadProfile w = base;
        w.offloaded = static_cast<std::uint32_t>(m_real);
        const perf::PerfReport r = perf::evaluate(w, headset, host, link);
        csv << w.offloaded << ",," << io::fmt_double(r.local_s * 1e3) << ","
            << io::fmt_double(r.offload_s * 1e3) << "," << io::fmt_double(r.comm_s * 1e3) << ","
            << io::fmt_double(r.users) << "," << io::fmt_double(r.users_per_watt) << ","
            << io::fmt_double(r.joules_per_user_frame) << "\n";
        info(g) << "m=" << w.offloaded << " users=" << io::fmt_double(r.users, 6)
                << " local=" << io::fmt_double(r.local_s * 1e3, 6) << "ms\n";
    }
    fs::create_directories(out_dir);
    io::write_text_file((fs::path(out_dir) / "perf.csv").string(), csv.str());
    return 0;
}

// --- serve ----------------------------------------------------------------------

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

int cmd_serve(const GlobalOpts& g, const std::string& listen, const std::vector<std::string>& codec_paths,
              int idle_timeout_ms) {
    net::CodecStore store;
    for (const auto& path : codec_paths) {
        Codec codec = load_codec(path);
        const std::uint64_t hash = codec_content_hash(codec);
        info(g) << "serving codec " << codec_path_name(codec.path) << " n=" << codec.input_dim
                << " d=" << codec.latent_dim << " hash=" << hash << "\n";
        store[hash] = std::move(codec);
    }
    const auto [addr, port] = parse_endpoint(listen);
    net::Host::Options options;
    options.listen_addr = addr;
    options.port = port;
    options.idle_timeout_ms = idle_timeout_ms;
    net::Host host(std::move(store), options);
    host.start();
    // Announce the bound port on stdout so callers can connect to port 0.
    std::cout << "listening on " << addr << ":" << host.port() << std::endl;

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    host.stop();
    info(g) << "shut down\n";
    return 0;
}

// --- offload --------------------------------------------------------------------

int cmd_offload(const GlobalOpts& g, const std::string& connect, const std::string& corpus_dir,
                const std::string& plan_path, const std::string& codec_local_path,
                const std::string& codec_offload_path, const std::string& calib_path,
                bool no_noise, std::size_t frame_limit, int timeout_ms,
                const std::string& out_dir) {
    const auto frames_all = load_corpus(corpus_dir);
    const std::vector<LabeledFrame> frames(
        frames_all.begin(),
        frame_limit > 0 && frame_limit < frames_all.size() ? frames_all.begin() + frame_limit
                                                           : frames_all.end());

    PipelineConfig cfg;
    cfg.plan = load_plan(plan_path);
    cfg.mean = dataset_mean(frames_all);
    cfg.offload_codec = load_codec(codec_offload_path);
    if (!cfg.plan.local_ids.empty()) {
        if (codec_local_path.empty()) throw ConfigError("plan has a local path; --codec-local required");
        cfg.local_codec = load_codec(codec_local_path);
    }
    if (no_noise)
        cfg.calibration = zero_calibration(cfg.offload_codec.latent_dim);
    else if (!calib_path.empty())
        cfg.calibration = load_calibration(calib_path);
    else
        throw ConfigError("offload needs --calib or --no-noise");
    cfg.session_seed = g.seed;

    const auto [host, port] = parse_endpoint(connect);
    const net::ClientResult result =
        net::run_client_session(host, port, frames, cfg, timeout_ms);

    fs::create_directories(out_dir);
    std::ostringstream session;
    session << "frame_id,status\n";
    std::size_t written = 0;
    for (const auto& log : result.logs) {
        session << log.frame_id << "," << (log.ok ? "ok" : "error") << "\n";
        if (log.ok) {
            char name[40];
            std::snprintf(name, sizeof name, "recon_%06llu.ptex",
                          static_cast<unsigned long long>(log.frame_id));
            save_texture((fs::path(out_dir) / name).string(), result.reconstructed[written]);
            ++written;
        }
        // Wall-clock stage timings go to the console only; files stay
        // byte-reproducible across runs.
        info(g) << "frame " << log.frame_id << (log.ok ? " ok" : (" error: " + log.error))
                << " decompose=" << io::fmt_double(log.decompose_s * 1e3, 3)
                << "ms encode=" << io::fmt_double(log.encode_s * 1e3, 3)
                << "ms network=" << io::fmt_double(log.network_s * 1e3, 3)
                << "ms local=" << io::fmt_double(log.local_path_s * 1e3, 3)
                << "ms merge=" << io::fmt_double(log.merge_s * 1e3, 3) << "ms\n";
    }
    io::write_text_file((fs::path(out_dir) / "session.csv").string(), session.str());

    if (!result.completed) {
        std::cerr << "session aborted: " << result.error << "\n";
        return 3;
    }
    info(g) << "session complete: " << written << " frames reconstructed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"secure texture-offloading experiment harness"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master seed for all randomness")->capture_default_str();
    app.add_flag("--quiet", g.quiet, "suppress console output");

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic labeled corpus");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "corpus spec config file");
    gen->add_option("--out", gen_out, "output directory")->required();

    // rank
    auto* rank = app.add_subcommand("rank", "rank components by energy; optionally emit a plan");
    std::string rank_corpus, rank_out, rank_stat = "variance";
    std::uint32_t rank_block = 4;
    int rank_m = 0;
    bool rank_offload_base = false, rank_full = false;
    rank->add_option("--corpus", rank_corpus, "corpus directory")->required();
    rank->add_option("--block", rank_block, "DCT block size")->capture_default_str();
    rank->add_option("--stat", rank_stat, "variance|msn")->capture_default_str();
    rank->add_option("--m", rank_m, "offloaded component count for the plan");
    rank->add_flag("--offload-base", rank_offload_base, "allow offloading the base component");
    rank->add_flag("--full-offload", rank_full, "emit the degenerate all-offloaded plan");
    rank->add_option("--out", rank_out, "output directory")->required();

    // train-codec
    auto* train = app.add_subcommand("train-codec", "train a per-path linear codec");
    std::string tc_corpus, tc_plan, tc_path = "offloaded", tc_out;
    std::size_t tc_dim = 256;
    train->add_option("--corpus", tc_corpus, "corpus directory")->required();
    train->add_option("--plan", tc_plan, "plan JSON")->required();
    train->add_option("--path", tc_path, "local|offloaded")->capture_default_str();
    train->add_option("--latent-dim", tc_dim, "latent dimension")->capture_default_str();
    train->add_option("--out", tc_out, "output codec file")->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "profile latents and calibrate noise");
    std::string cal_corpus, cal_codec, cal_plan, cal_mode = "damp", cal_table, cal_out;
    double cal_v = 0.1, cal_floor = 0.0, cal_eps = 1.0, cal_delta = 1e-5, cal_sens = 0.0;
    std::size_t cal_classes = 65;
    cal->add_option("--corpus", cal_corpus, "corpus directory")->required();
    cal->add_option("--codec", cal_codec, "offloaded codec file")->required();
    cal->add_option("--plan", cal_plan, "plan JSON")->required();
    cal->add_option("--v", cal_v, "mutual-information budget, nats")->capture_default_str();
    cal->add_option("--mode", cal_mode, "damp|iso|dp")->capture_default_str();
    cal->add_option("--floor", cal_floor, "eigenvalue floor")->capture_default_str();
    cal->add_option("--eps", cal_eps, "dp epsilon")->capture_default_str();
    cal->add_option("--delta", cal_delta, "dp delta")->capture_default_str();
    cal->add_option("--sensitivity", cal_sens, "dp L2 sensitivity (0 = profile the corpus)");
    cal->add_option("--classes", cal_classes, "label count for the budget table")
        ->capture_default_str();
    cal->add_option("--table", cal_table, "write a (v, t-PSR, traces) CSV here");
    cal->add_option("--out", cal_out, "output calibration file");

    // bound
    auto* bound = app.add_subcommand("bound", "map MI budgets to certified success rates");
    std::vector<double> bound_v, bound_psr;
    std::size_t bound_classes = 65;
    std::string bound_out;
    bound->add_option("--v", bound_v, "budgets in nats");
    bound->add_option("--psr", bound_psr, "target posterior success rates");
    bound->add_option("--classes", bound_classes, "label count")->capture_default_str();
    bound->add_option("--out", bound_out, "also write the mapping to this file");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "full m x v grid: loss, privacy, attacks, perf");
    std::string sw_corpus, sw_config, sw_out;
    sweep->add_option("--corpus", sw_corpus, "corpus directory")->required();
    sweep->add_option("--config", sw_config, "sweep/profile config file");
    sweep->add_option("--out", sw_out, "output directory")->required();

    // attack
    auto* attack = app.add_subcommand("attack", "run the adversaries against a configuration");
    std::string at_corpus, at_plan, at_codec, at_calib, at_attacker = "both", at_out;
    bool at_no_noise = false;
    std::size_t at_trials = 2080, at_train = 2, at_classes = 0;
    attack->add_option("--corpus", at_corpus, "corpus directory")->required();
    attack->add_option("--plan", at_plan, "plan JSON")->required();
    attack->add_option("--codec", at_codec, "offloaded codec file")->required();
    attack->add_option("--calib", at_calib, "noise calibration file");
    attack->add_flag("--no-noise", at_no_noise, "release unnoised latents");
    attack->add_option("--attacker", at_attacker, "both|empirical|nn")->capture_default_str();
    attack->add_option("--trials", at_trials, "observation count")->capture_default_str();
    attack->add_option("--train-per-class", at_train, "NN training samples per label")
        ->capture_default_str();
    attack->add_option("--classes", at_classes, "NN output classes (0 = label count)");
    attack->add_option("--out", at_out, "output directory")->required();

    // perf
    auto* perf_cmd = app.add_subcommand("perf", "latency / throughput / energy table");
    std::string pf_config, pf_local = "device.local", pf_remote = "device.remote",
                pf_link = "link", pf_workload = "workload", pf_out;
    std::vector<double> pf_m = {2, 4, 6, 8, 10, 12, 14};
    perf_cmd->add_option("--config", pf_config, "profile config file");
    perf_cmd->add_option("--device", pf_local, "local device section")->capture_default_str();
    perf_cmd->add_option("--remote", pf_remote, "remote device section")->capture_default_str();
    perf_cmd->add_option("--link", pf_link, "link section")->capture_default_str();
    perf_cmd->add_option("--workload", pf_workload, "workload section")->capture_default_str();
    perf_cmd->add_option("--m-list", pf_m, "offloaded counts to tabulate");
    perf_cmd->add_option("--out", pf_out, "output directory")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "run the untrusted offload host");
    std::string sv_listen = "127.0.0.1:0";
    std::vector<std::string> sv_codecs;
    int sv_idle = 30000;
    serve->add_option("--listen", sv_listen, "addr:port (port 0 = ephemeral)")
        ->capture_default_str();
    serve->add_option("--codec", sv_codecs, "codec file(s) to serve")->required();
    serve->add_option("--idle-timeout-ms", sv_idle, "per-session idle timeout")
        ->capture_default_str();

    // offload
    auto* off = app.add_subcommand("offload", "run the trusted client against a host");
    std::string of_connect, of_corpus, of_plan, of_codec_local, of_codec_offload, of_calib, of_out;
    bool of_no_noise = false;
    std::size_t of_frames = 0;
    int of_timeout = 5000;
    off->add_option("--connect", of_connect, "host addr:port")->required();
    off->add_option("--corpus", of_corpus, "corpus directory with the frame stream")->required();
    off->add_option("--plan", of_plan, "plan JSON")->required();
    off->add_option("--codec-local", of_codec_local, "local codec file");
    off->add_option("--codec-offload", of_codec_offload, "offloaded codec file")->required();
    off->add_option("--calib", of_calib, "noise calibration file");
    off->add_flag("--no-noise", of_no_noise, "release unnoised latents");
    off->add_option("--frames", of_frames, "frame count (0 = all)");
    off->add_option("--timeout-ms", of_timeout, "per-frame response timeout")
        ->capture_default_str();
    off->add_option("--out", of_out, "output directory")->required();

    // Accept the global --seed/--quiet after the subcommand name too.
    for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_corpus(g, gen_spec, gen_out);
        if (rank->parsed())
            return cmd_rank(g, rank_corpus, rank_block, rank_stat, rank_m, rank_offload_base,
                            rank_full, rank_out);
        if (train->parsed()) return cmd_train_codec(g, tc_corpus, tc_plan, tc_path, tc_dim, tc_out);
        if (cal->parsed())
            return cmd_calibrate(g, cal_corpus, cal_codec, cal_plan, cal_v, cal_mode, cal_floor,
                                 cal_eps, cal_delta, cal_sens, cal_classes, cal_table, cal_out);
        if (bound->parsed()) {
            if (bound_v.empty() && bound_psr.empty())
                throw ConfigError("bound needs --v and/or --psr");
            return cmd_bound(g, bound_v, bound_psr, bound_classes, bound_out);
        }
        if (sweep->parsed()) return cmd_sweep(g, sw_corpus, sw_config, sw_out);
        if (attack->parsed())
            return cmd_attack(g, at_corpus, at_plan, at_codec, at_calib, at_no_noise, at_attacker,
                              at_trials, at_train, at_classes, at_out);
        if (perf_cmd->parsed())
            return cmd_perf(g, pf_config, pf_local, pf_remote, pf_link, pf_workload, pf_m, pf_out);
        if (serve->parsed()) return cmd_serve(g, sv_listen, sv_codecs, sv_idle);
        if (off->parsed())
            return cmd_offload(g, of_connect, of_corpus, of_plan, of_codec_local,
                               of_codec_offload, of_calib, of_no_noise, of_frames, of_timeout,
                               of_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
