#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvtr/codec.hpp"
#include "pvtr/corpus.hpp"
#include "pvtr/frequency.hpp"
#include "pvtr/io.hpp"
#include "pvtr/linalg.hpp"
#include "pvtr/rng.hpp"

namespace pvtr {

/// One clean reference stack of offloaded component planes per expression
/// label, used by the nearest-reference adversary.
struct ReferenceBank {
    freq::PartitionPlan plan;
    std::vector<freq::ComponentSubset> references;  // indexed by label
};

/// Picks one seeded-random exemplar frame per label, decomposes it against
/// `mean` and keeps only the offloaded planes.
inline ReferenceBank build_reference_bank(const std::vector<LabeledFrame>& frames,
                                          const Texture& mean, const freq::PartitionPlan& plan,
                                          RngStream rng) {
    std::uint32_t max_label = 0;
    for (const auto& f : frames) max_label = std::max(max_label, f.label);
    const std::size_t labels = static_cast<std::size_t>(max_label) + 1;

    std::vector<std::vector<std::size_t>> by_label(labels);
    for (std::size_t i = 0; i < frames.size(); ++i) by_label[frames[i].label].push_back(i);

    ReferenceBank bank;
    bank.plan = plan;
    bank.references.reserve(labels);
    for (std::size_t label = 0; label < labels; ++label) {
        const auto& members = by_label[label];
        if (members.empty())
            throw std::invalid_argument("reference bank: label " + std::to_string(label) +
                                        " has no frames");
        const std::size_t pick = members[rng.next_below(members.size())];
        const freq::ComponentSet cs = freq::block_dct(frames[pick].texture, mean, plan.block);
        bank.references.push_back(freq::extract(cs, plan.offloaded_ids));
    }
    return bank;
}

/// Nearest-reference guess: argmin over labels of the summed squared L2
/// distance across offloaded planes; ties resolve to the lower label.
inline std::uint32_t empirical_attack(const freq::ComponentSubset& decoded,
                                      const ReferenceBank& bank) {
    if (bank.references.empty()) throw std::invalid_argument("empirical_attack: empty bank");
    std::uint32_t best_label = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t label = 0; label < bank.references.size(); ++label) {
        const freq::ComponentSubset& ref = bank.references[label];
        if (ref.ids != decoded.ids || ref.planes.size() != decoded.planes.size())
            throw std::invalid_argument("empirical_attack: shape mismatch with bank");
        double dist = 0.0;
        for (std::size_t p = 0; p < ref.planes.size(); ++p) {
            const auto& a = decoded.planes[p];
            const auto& b = ref.planes[p];
            if (a.size() != b.size())
                throw std::invalid_argument("empirical_attack: plane size mismatch");
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
                dist += d * d;
            }
        }
        if (dist < best_dist) {
            best_dist = dist;
            best_label = static_cast<std::uint32_t>(label);
        }
    }
    return best_label;
}

// --- learned adversary -------------------------------------------------------

struct MlpHyperparams {
    double learning_rate = 0.01;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
};

struct MlpLayer {
    linalg::Matrix weights;  // out x in
    std::vector<double> bias;
};

/// Fully-connected softmax classifier (default 256 -> 128 -> K) with a
/// rectifier on hidden layers; forward/backward are hand-written.
struct MlpAttacker {
    std::vector<std::size_t> dims;  // neuron counts per layer, e.g. {256,128,66}
    std::vector<MlpLayer> layers;
    MlpHyperparams hyperparams;
    std::vector<double> epoch_loss;  // mean cross-entropy per training epoch

    std::size_t input_dim() const { return dims.front(); }
    std::size_t num_classes() const { return dims.back(); }
};

struct LabeledLatent {
    std::vector<double> values;
    std::uint32_t label = 0;
};

namespace detail {

inline std::vector<double> softmax(const std::vector<double>& logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

struct ForwardState {
    // activations[0] is the input; activations[i] the output of layer i-1
    // after its nonlinearity; logits the last layer's pre-softmax output.
    std::vector<std::vector<double>> activations;
    std::vector<double> logits;
    std::vector<double> probs;
};

inline ForwardState mlp_forward(const MlpAttacker& net, const std::vector<double>& x) {
    if (x.size() != net.input_dim()) throw std::invalid_argument("mlp: input dimension mismatch");
    ForwardState st;
    st.activations.push_back(x);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const MlpLayer& layer = net.layers[l];
        std::vector<double> out(layer.bias);
        const std::vector<double>& in = st.activations.back();
        for (std::size_t r = 0; r < layer.weights.rows; ++r) {
            const double* row = &layer.weights.data[r * layer.weights.cols];
            double acc = 0.0;
            for (std::size_t c = 0; c < layer.weights.cols; ++c) acc += row[c] * in[c];
            out[r] += acc;
        }
        if (l + 1 < net.layers.size()) {
            for (double& v : out) v = v > 0.0 ? v : 0.0;  // rectifier on hidden layers
            st.activations.push_back(std::move(out));
        } else {
            st.logits = std::move(out);
        }
    }
    st.probs = softmax(st.logits);
    return st;
}

struct Gradients {
    std::vector<MlpLayer> layers;  // same shapes as the network
};

inline Gradients zero_gradients(const MlpAttacker& net) {
    Gradients g;
    g.layers.reserve(net.layers.size());
    for (const auto& layer : net.layers) {
        MlpLayer zero;
        zero.weights = linalg::Matrix(layer.weights.rows, layer.weights.cols);
        zero.bias.assign(layer.bias.size(), 0.0);
        g.layers.push_back(std::move(zero));
    }
    return g;
}

// Cross-entropy loss and parameter gradients for a single sample, accumulated
// into `grad`.
inline double mlp_backward(const MlpAttacker& net, const std::vector<double>& x,
                           std::uint32_t label, Gradients& grad) {
    if (label >= net.num_classes()) throw std::invalid_argument("mlp: label out of range");
    const ForwardState st = mlp_forward(net, x);
    const double loss = -std::log(std::max(st.probs[label], 1e-300));

    // dL/dlogits = probs - onehot(label)
    std::vector<double> delta = st.probs;
    delta[label] -= 1.0;

    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const MlpLayer& layer = net.layers[l];
        MlpLayer& g = grad.layers[l];
        const std::vector<double>& in = st.activations[l];
        for (std::size_t r = 0; r < layer.weights.rows; ++r) {
            const double dr = delta[r];
            g.bias[r] += dr;
            double* grow = &g.weights.data[r * layer.weights.cols];
            for (std::size_t c = 0; c < layer.weights.cols; ++c) grow[c] += dr * in[c];
        }
        if (l == 0) break;
        std::vector<double> prev(layer.weights.cols, 0.0);
        for (std::size_t r = 0; r < layer.weights.rows; ++r) {
            const double dr = delta[r];
            const double* row = &layer.weights.data[r * layer.weights.cols];
            for (std::size_t c = 0; c < layer.weights.cols; ++c) prev[c] += dr * row[c];
        }
        // Rectifier gate of the producing hidden layer.
        for (std::size_t c = 0; c < prev.size(); ++c)
            if (st.activations[l][c] <= 0.0) prev[c] = 0.0;
        delta = std::move(prev);
    }
    return loss;
}

}  // namespace detail

inline MlpAttacker init_mlp(const std::vector<std::size_t>& dims, const MlpHyperparams& hp) {
    if (dims.size() < 2) throw std::invalid_argument("mlp: need at least input and output dims");
    MlpAttacker net;
    net.dims = dims;
    net.hyperparams = hp;
    RngStream rng(hp.seed, "mlp-init");
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        MlpLayer layer;
        layer.weights = linalg::Matrix(dims[l + 1], dims[l]);
        layer.bias.assign(dims[l + 1], 0.0);
        const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        for (double& w : layer.weights.data) w = (rng.uniform01() * 2.0 - 1.0) * limit;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline std::uint32_t mlp_predict(const MlpAttacker& net, const std::vector<double>& x) {
    const auto st = detail::mlp_forward(net, x);
    return static_cast<std::uint32_t>(
        std::max_element(st.probs.begin(), st.probs.end()) - st.probs.begin());
}

inline std::vector<double> mlp_probabilities(const MlpAttacker& net, const std::vector<double>& x) {
    return detail::mlp_forward(net, x).probs;
}

/// Minibatch gradient descent on softmax cross-entropy; deterministic under
/// the hyperparameter seed (seeded init and per-epoch shuffles).
inline MlpAttacker train_mlp(const std::vector<LabeledLatent>& data,
                             const std::vector<std::size_t>& dims, const MlpHyperparams& hp) {
    if (data.empty()) throw std::invalid_argument("train_mlp: empty training set");
    for (const auto& s : data) {
        if (s.values.size() != dims.front())
            throw std::invalid_argument("train_mlp: latent dimension mismatch");
        if (s.label >= dims.back()) throw std::invalid_argument("train_mlp: label out of range");
    }

    MlpAttacker net = init_mlp(dims, hp);
    RngStream shuffle_rng(hp.seed, "mlp-shuffle");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
            const std::size_t end = std::min(start + hp.batch_size, order.size());
            detail::Gradients grad = detail::zero_gradients(net);
            for (std::size_t i = start; i < end; ++i)
                epoch_loss +=
                    detail::mlp_backward(net, data[order[i]].values, data[order[i]].label, grad);
            const double scale = hp.learning_rate / static_cast<double>(end - start);
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                MlpLayer& layer = net.layers[l];
                const MlpLayer& g = grad.layers[l];
                for (std::size_t k = 0; k < layer.weights.data.size(); ++k)
                    layer.weights.data[k] -= scale * g.weights.data[k];
                for (std::size_t k = 0; k < layer.bias.size(); ++k)
                    layer.bias[k] -= scale * g.bias[k];
            }
        }
        net.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    }
    return net;
}

/// Max relative mismatch between analytic gradients and central finite
/// differences (h = 1e-5) over every parameter of the network.
inline double grad_check(const MlpAttacker& net, const std::vector<double>& sample,
                         std::uint32_t label) {
    detail::Gradients analytic = detail::zero_gradients(net);
    detail::mlp_backward(net, sample, label, analytic);

    MlpAttacker probe = net;
    const double h = 1e-5;
    double worst = 0.0;
    auto loss_at = [&]() {
        const auto st = detail::mlp_forward(probe, sample);
        return -std::log(std::max(st.probs[label], 1e-300));
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto check_param = [&](double& value, double analytic_grad) {
            const double saved = value;
            value = saved + h;
            const double up = loss_at();
            value = saved - h;
            const double down = loss_at();
            value = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double denom = std::max(std::abs(analytic_grad) + std::abs(numeric), 1e-3);
            worst = std::max(worst, std::abs(analytic_grad - numeric) / denom);
        };
        for (std::size_t k = 0; k < probe.layers[l].weights.data.size(); ++k)
            check_param(probe.layers[l].weights.data[k], analytic.layers[l].weights.data[k]);
        for (std::size_t k = 0; k < probe.layers[l].bias.size(); ++k)
            check_param(probe.layers[l].bias[k], analytic.layers[l].bias[k]);
    }
    return worst;
}

// --- evaluation --------------------------------------------------------------

/// e-PSR of one adversary with a 95% Wilson confidence interval.
struct AttackReport {
    std::string attacker;
    std::size_t trials = 0;
    std::size_t correct = 0;
    double e_psr = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

inline std::pair<double, double> wilson_interval(std::size_t correct, std::size_t trials,
                                                 double z = 1.959963984540054) {
    if (trials == 0) throw std::invalid_argument("wilson_interval: zero trials");
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(correct) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

inline AttackReport make_report(const std::string& name, std::size_t correct, std::size_t trials) {
    AttackReport r;
    r.attacker = name;
    r.trials = trials;
    r.correct = correct;
    r.e_psr = static_cast<double>(correct) / static_cast<double>(trials);
    std::tie(r.ci_lo, r.ci_hi) = wilson_interval(correct, trials);
    return r;
}

/// What an adversary observes for one trial: the noisy latent on the wire and
/// the planes the untrusted host decodes from it.
struct Observation {
    LatentCode noisy_latent;
    freq::ComponentSubset decoded_planes;
    std::uint32_t label = 0;
};

using AttackerFn = std::function<std::uint32_t(const Observation&)>;

/// Runs every attacker over the stream and appends a combined report that
/// takes the maximum success count across attackers.
inline std::vector<AttackReport> evaluate_psr(
    const std::vector<std::pair<std::string, AttackerFn>>& attackers,
    const std::vector<Observation>& stream) {
    if (stream.empty()) throw std::invalid_argument("evaluate_psr: empty observation stream");
    if (attackers.empty()) throw std::invalid_argument("evaluate_psr: no attackers");
    std::vector<AttackReport> reports;
    std::size_t best = 0;
    for (const auto& [name, fn] : attackers) {
        std::size_t correct = 0;
        for (const auto& obs : stream)
            if (fn(obs) == obs.label) ++correct;
        reports.push_back(make_report(name, correct, stream.size()));
        best = std::max(best, correct);
    }
    if (attackers.size() > 1) reports.push_back(make_report("combined", best, stream.size()));
    return reports;
}

inline std::string reports_to_csv(const std::vector<AttackReport>& reports) {
    std::ostringstream out;
    out << "attacker,trials,correct,e_psr,ci_lo,ci_hi\n";
    for (const auto& r : reports)
        out << r.attacker << "," << r.trials << "," << r.correct << ","
            << io::fmt_double(r.e_psr) << "," << io::fmt_double(r.ci_lo) << ","
            << io::fmt_double(r.ci_hi) << "\n";
    return out.str();
}

// --- PMLP container ----------------------------------------------------------
// magic "PMLP", version u8 = 1, layer count u32, dims u32 each, then per layer
// weights (out*in real64 LE) and bias (out real64 LE).

inline io::Bytes serialize_mlp(const MlpAttacker& net) {
    io::Bytes out;
    io::put_magic(out, "PMLP");
    io::put_u8(out, 1);
    io::put_u32(out, static_cast<std::uint32_t>(net.dims.size()));
    for (std::size_t d : net.dims) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (const auto& layer : net.layers) {
        for (double w : layer.weights.data) io::put_f64(out, w);
        for (double b : layer.bias) io::put_f64(out, b);
    }
    return out;
}

inline MlpAttacker deserialize_mlp(const io::Bytes& bytes) {
    io::ByteReader r(bytes);
    r.expect_magic("PMLP", "mlp");
    if (r.u8() != 1) throw std::runtime_error("mlp: unsupported version");
    MlpAttacker net;
    const std::uint32_t levels = r.u32();
    net.dims.resize(levels);
    for (auto& d : net.dims) d = r.u32();
    for (std::size_t l = 0; l + 1 < levels; ++l) {
        MlpLayer layer;
        layer.weights = linalg::Matrix(net.dims[l + 1], net.dims[l]);
        for (double& w : layer.weights.data) w = r.f64();
        layer.bias.resize(net.dims[l + 1]);
        for (double& b : layer.bias) b = r.f64();
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace pvtr
