#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "traj/errors.hpp"
#include "traj/pipeline.hpp"

namespace traj {

/// Architecture description: MLP encoder -> stacked LSTM -> MLP decoder.
/// Sizes default to the smallest configuration that comfortably overfits
/// desk-scale data while keeping inference far under the latency budget.
struct ModelConfig {
    int in_features = kFeatureCount;
    int seq_len = kWindowFrames;
    int encoder_hidden1 = 32;
    int encoder_hidden2 = 64; // LSTM input width
    int lstm_hidden = 64;
    int lstm_layers = 1;
    int decoder_hidden = 32;
    double leaky_slope = 0.1; // fixed

    void validate() const {
        if (in_features != kFeatureCount) {
            throw InvalidInput("nn: input width is fixed at 6 features");
        }
        if (seq_len < 1 || encoder_hidden1 < 1 || encoder_hidden2 < 1 ||
            lstm_hidden < 1 || decoder_hidden < 1) {
            throw InvalidInput("nn: layer widths must be positive");
        }
        if (lstm_layers != 1 && lstm_layers != 2) {
            throw InvalidInput("nn: lstm_layers must be 1 or 2");
        }
        if (leaky_slope != 0.1) {
            throw InvalidInput("nn: leaky slope is fixed at 0.1");
        }
    }
};

/// Per-feature standardization parameters applied to network inputs and
/// inverted on outputs. Defaults are the identity transform.
struct FeatureStats {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kFeatureCount);
    Eigen::VectorXd stddev = Eigen::VectorXd::Ones(kFeatureCount);
};

/// One LSTM layer's weights with gates packed row-wise as [i; f; g; o].
struct LstmLayerParams {
    Eigen::MatrixXd wx; // [4H x input]
    Eigen::MatrixXd wh; // [4H x H]
    Eigen::VectorXd b;  // [4H]
};

struct ModelParams {
    ModelConfig config;
    FeatureStats stats;

    Eigen::MatrixXd enc_w1, enc_w2;
    Eigen::VectorXd enc_b1, enc_b2;
    std::vector<LstmLayerParams> lstm;
    Eigen::MatrixXd dec_w1, dec_w2;
    Eigen::VectorXd dec_b1, dec_b2;

    /// Visit every parameter tensor in a fixed order (update and
    /// serialization both rely on this order being stable).
    template <class F>
    void visit(F&& f) {
        f("enc_w1", enc_w1);
        f("enc_b1", enc_b1);
        f("enc_w2", enc_w2);
        f("enc_b2", enc_b2);
        for (std::size_t l = 0; l < lstm.size(); ++l) {
            const std::string tag = "lstm" + std::to_string(l);
            f((tag + "_wx").c_str(), lstm[l].wx);
            f((tag + "_wh").c_str(), lstm[l].wh);
            f((tag + "_b").c_str(), lstm[l].b);
        }
        f("dec_w1", dec_w1);
        f("dec_b1", dec_b1);
        f("dec_w2", dec_w2);
        f("dec_b2", dec_b2);
    }
    template <class F>
    void visit(F&& f) const {
        const_cast<ModelParams*>(this)->visit(
            [&](const char* name, auto& tensor) { f(name, std::as_const(tensor)); });
    }

    Eigen::Index parameter_count() const {
        Eigen::Index n = 0;
        visit([&](const char*, const auto& t) { n += t.size(); });
        return n;
    }
};

inline double leaky_relu(double x, double slope = 0.1) {
    return x >= 0.0 ? x : slope * x;
}

namespace detail {

inline Eigen::MatrixXd leaky(const Eigen::MatrixXd& pre, double slope) {
    return pre.unaryExpr([slope](double v) { return leaky_relu(v, slope); });
}

/// Elementwise derivative of the leaky ReLU from its pre-activation.
inline Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& pre, double slope) {
    return pre.unaryExpr([slope](double v) { return v >= 0.0 ? 1.0 : slope; });
}

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
    return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

} // namespace detail

/// Initialize weights uniformly in +/- 1/sqrt(fan_in), biases at zero.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;

    std::mt19937_64 rng(seed);
    auto fill = [&rng](Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                       Eigen::Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        m.resize(rows, cols);
        for (Eigen::Index c = 0; c < cols; ++c) {
            for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
        }
    };

    fill(p.enc_w1, cfg.encoder_hidden1, cfg.in_features, cfg.in_features);
    p.enc_b1 = Eigen::VectorXd::Zero(cfg.encoder_hidden1);
    fill(p.enc_w2, cfg.encoder_hidden2, cfg.encoder_hidden1, cfg.encoder_hidden1);
    p.enc_b2 = Eigen::VectorXd::Zero(cfg.encoder_hidden2);

    p.lstm.resize(static_cast<std::size_t>(cfg.lstm_layers));
    for (int l = 0; l < cfg.lstm_layers; ++l) {
        const Eigen::Index in = l == 0 ? cfg.encoder_hidden2 : cfg.lstm_hidden;
        auto& layer = p.lstm[static_cast<std::size_t>(l)];
        fill(layer.wx, 4 * cfg.lstm_hidden, in, in);
        fill(layer.wh, 4 * cfg.lstm_hidden, cfg.lstm_hidden, cfg.lstm_hidden);
        layer.b = Eigen::VectorXd::Zero(4 * cfg.lstm_hidden);
    }

    fill(p.dec_w1, cfg.decoder_hidden, cfg.lstm_hidden, cfg.lstm_hidden);
    p.dec_b1 = Eigen::VectorXd::Zero(cfg.decoder_hidden);
    fill(p.dec_w2, cfg.in_features, cfg.decoder_hidden, cfg.decoder_hidden);
    p.dec_b2 = Eigen::VectorXd::Zero(cfg.in_features);
    return p;
}

/// Sequence tensor: seq_len matrices of shape [features x batch].
using StepTensor = std::vector<Eigen::MatrixXd>;

enum class ForwardMode { training, runtime };

namespace detail {

struct LstmStepCache {
    Eigen::MatrixXd i, f, g, o; // gate activations [H x Nb]
    Eigen::MatrixXd c, tanh_c, h;
};

struct StepCache {
    Eigen::MatrixXd x;              // [6 x Nb] raw step input
    Eigen::MatrixXd e1_pre, e2_pre; // encoder pre-activations
    Eigen::MatrixXd e1, e2;
    std::vector<LstmStepCache> layers;
    Eigen::MatrixXd d1_pre, d1;
    Eigen::MatrixXd y; // [6 x Nb] step prediction
};

struct ForwardCache {
    std::vector<StepCache> steps;
};

inline void check_inputs(const ModelParams& p, const StepTensor& inputs) {
    const auto& cfg = p.config;
    if (inputs.size() != static_cast<std::size_t>(cfg.seq_len)) {
        throw InvalidInput("nn: input sequence length does not match the config");
    }
    const Eigen::Index nb = inputs.empty() ? 0 : inputs.front().cols();
    for (const auto& x : inputs) {
        if (x.rows() != cfg.in_features || x.cols() != nb || nb < 1) {
            throw InvalidInput("nn: input tensor shape mismatch");
        }
        if (!x.allFinite()) throw NonFiniteError("nn: non-finite input");
    }
    // A bad weight can be squashed back to a finite output by the LSTM
    // gates, so the output check alone would miss it.
    bool finite = true;
    p.visit([&](const char*, const auto& t) { finite = finite && t.allFinite(); });
    if (!finite) throw NonFiniteError("nn: non-finite parameter tensor");
}

inline ForwardCache forward_cached(const ModelParams& p, const StepTensor& inputs) {
    check_inputs(p, inputs);
    const auto& cfg = p.config;
    const Eigen::Index nb = inputs.front().cols();
    const Eigen::Index H = cfg.lstm_hidden;

    ForwardCache cache;
    cache.steps.resize(inputs.size());

    std::vector<Eigen::MatrixXd> h_prev(p.lstm.size(), Eigen::MatrixXd::Zero(H, nb));
    std::vector<Eigen::MatrixXd> c_prev(p.lstm.size(), Eigen::MatrixXd::Zero(H, nb));

    for (std::size_t t = 0; t < inputs.size(); ++t) {
        StepCache& s = cache.steps[t];
        s.x = inputs[t];
        s.e1_pre = (p.enc_w1 * s.x).colwise() + p.enc_b1;
        s.e1 = leaky(s.e1_pre, cfg.leaky_slope);
        s.e2_pre = (p.enc_w2 * s.e1).colwise() + p.enc_b2;
        s.e2 = leaky(s.e2_pre, cfg.leaky_slope);

        s.layers.resize(p.lstm.size());
        const Eigen::MatrixXd* layer_in = &s.e2;
        for (std::size_t l = 0; l < p.lstm.size(); ++l) {
            const auto& w = p.lstm[l];
            LstmStepCache& lc = s.layers[l];
            const Eigen::MatrixXd pre =
                ((w.wx * (*layer_in) + w.wh * h_prev[l]).colwise() + w.b).eval();
            lc.i = sigmoid(pre.topRows(H));
            lc.f = sigmoid(pre.middleRows(H, H));
            lc.g = pre.middleRows(2 * H, H).array().tanh();
            lc.o = sigmoid(pre.bottomRows(H));
            lc.c = lc.f.cwiseProduct(c_prev[l]) + lc.i.cwiseProduct(lc.g);
            lc.tanh_c = lc.c.array().tanh();
            lc.h = lc.o.cwiseProduct(lc.tanh_c);
            h_prev[l] = lc.h;
            c_prev[l] = lc.c;
            layer_in = &lc.h;
        }

        s.d1_pre = (p.dec_w1 * (*layer_in)).colwise() + p.dec_b1;
        s.d1 = leaky(s.d1_pre, cfg.leaky_slope);
        s.y = (p.dec_w2 * s.d1).colwise() + p.dec_b2;
        if (!s.y.allFinite()) {
            throw NonFiniteError("nn: non-finite activation in forward pass");
        }
    }
    return cache;
}

} // namespace detail

/// Run the network over an 8-step input tensor. Training mode returns every
/// step's prediction (prediction k estimates the frame after input k);
/// runtime mode returns only the final step's prediction.
inline StepTensor forward(const ModelParams& params, const StepTensor& inputs,
                          ForwardMode mode = ForwardMode::training) {
    const auto cache = detail::forward_cached(params, inputs);
    StepTensor out;
    if (mode == ForwardMode::runtime) {
        out.push_back(cache.steps.back().y);
        return out;
    }
    out.reserve(cache.steps.size());
    for (const auto& s : cache.steps) out.push_back(s.y);
    return out;
}

struct LossValue {
    double total = 0.0;
    double loss1 = 0.0; // MSE over all steps and features
    double loss2 = 0.0; // MSE over the final step's (dx, dy) only
};

inline constexpr double kLoss2Weight = 10.0;

/// Combined training loss: loss1 + 10 * loss2.
inline LossValue loss(const StepTensor& predictions, const StepTensor& targets) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw InvalidInput("nn: loss shape mismatch");
    }
    const Eigen::Index nb = predictions.front().cols();
    double sq_all = 0.0;
    Eigen::Index count_all = 0;
    for (std::size_t t = 0; t < predictions.size(); ++t) {
        if (predictions[t].rows() != targets[t].rows() ||
            predictions[t].cols() != targets[t].cols()) {
            throw InvalidInput("nn: loss shape mismatch");
        }
        sq_all += (predictions[t] - targets[t]).squaredNorm();
        count_all += predictions[t].size();
    }
    const Eigen::MatrixXd last_err =
        predictions.back().topRows(2) - targets.back().topRows(2);

    LossValue v;
    v.loss1 = sq_all / static_cast<double>(count_all);
    v.loss2 = last_err.squaredNorm() / static_cast<double>(2 * nb);
    v.total = v.loss1 + kLoss2Weight * v.loss2;
    return v;
}

/// Exact analytic gradients of the combined loss for one batch, via
/// backpropagation through time. Returns gradients in a ModelParams-shaped
/// container (config/stats fields are unused). When `loss_out` is non-null
/// it receives the loss of the internal forward pass, saving callers a
/// second full forward.
inline ModelParams backward(const ModelParams& params, const StepTensor& inputs,
                            const StepTensor& targets, LossValue* loss_out = nullptr) {
    const auto cache = detail::forward_cached(params, inputs);
    const auto& cfg = params.config;
    const auto T = cache.steps.size();
    if (targets.size() != T) throw InvalidInput("nn: target sequence length mismatch");

    const Eigen::Index nb = inputs.front().cols();
    const Eigen::Index H = cfg.lstm_hidden;
    Eigen::Index count_all = 0;
    for (const auto& x : targets) count_all += x.size();

    ModelParams g;
    g.config = cfg;
    g.enc_w1 = Eigen::MatrixXd::Zero(params.enc_w1.rows(), params.enc_w1.cols());
    g.enc_b1 = Eigen::VectorXd::Zero(params.enc_b1.size());
    g.enc_w2 = Eigen::MatrixXd::Zero(params.enc_w2.rows(), params.enc_w2.cols());
    g.enc_b2 = Eigen::VectorXd::Zero(params.enc_b2.size());
    g.lstm.resize(params.lstm.size());
    for (std::size_t l = 0; l < params.lstm.size(); ++l) {
        g.lstm[l].wx = Eigen::MatrixXd::Zero(params.lstm[l].wx.rows(), params.lstm[l].wx.cols());
        g.lstm[l].wh = Eigen::MatrixXd::Zero(params.lstm[l].wh.rows(), params.lstm[l].wh.cols());
        g.lstm[l].b = Eigen::VectorXd::Zero(params.lstm[l].b.size());
    }
    g.dec_w1 = Eigen::MatrixXd::Zero(params.dec_w1.rows(), params.dec_w1.cols());
    g.dec_b1 = Eigen::VectorXd::Zero(params.dec_b1.size());
    g.dec_w2 = Eigen::MatrixXd::Zero(params.dec_w2.rows(), params.dec_w2.cols());
    g.dec_b2 = Eigen::VectorXd::Zero(params.dec_b2.size());

    // dL/dy per step: the loss1 term everywhere plus the weighted loss2 term
    // on the final step's first two rows.
    std::vector<Eigen::MatrixXd> dy(T);
    for (std::size_t t = 0; t < T; ++t) {
        dy[t] = 2.0 * (cache.steps[t].y - targets[t]) / static_cast<double>(count_all);
    }
    dy.back().topRows(2) += kLoss2Weight * 2.0 *
                            (cache.steps.back().y.topRows(2) - targets.back().topRows(2)) /
                            static_cast<double>(2 * nb);

    if (loss_out != nullptr) {
        StepTensor preds;
        preds.reserve(T);
        for (const auto& s : cache.steps) preds.push_back(s.y);
        *loss_out = loss(preds, targets);
    }

    // Decoder backward per step; collects dL/dh for the top LSTM layer.
    std::vector<Eigen::MatrixXd> dh_top(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto& s = cache.steps[t];
        g.dec_w2 += dy[t] * s.d1.transpose();
        g.dec_b2 += dy[t].rowwise().sum();
        const Eigen::MatrixXd dd1 =
            (params.dec_w2.transpose() * dy[t])
                .cwiseProduct(detail::leaky_grad(s.d1_pre, cfg.leaky_slope));
        g.dec_w1 += dd1 * s.layers.back().h.transpose();
        g.dec_b1 += dd1.rowwise().sum();
        dh_top[t] = params.dec_w1.transpose() * dd1;
    }

    // BPTT layer by layer from the top; dx flowing out of a layer is dh for
    // the layer below (or the encoder for layer 0).
    std::vector<Eigen::MatrixXd> dh_from_above = std::move(dh_top);
    std::vector<Eigen::MatrixXd> de2(T);
    for (std::size_t lr = params.lstm.size(); lr-- > 0;) {
        const auto& w = params.lstm[lr];
        auto& gw = g.lstm[lr];
        Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(H, nb);
        Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(H, nb);
        std::vector<Eigen::MatrixXd> dx_out(T);

        for (std::size_t t = T; t-- > 0;) {
            const auto& lc = cache.steps[t].layers[lr];
            const Eigen::MatrixXd dh = dh_from_above[t] + dh_next;
            const Eigen::MatrixXd do_ = dh.cwiseProduct(lc.tanh_c);
            Eigen::MatrixXd dc =
                dh.cwiseProduct(lc.o)
                    .cwiseProduct(Eigen::MatrixXd::Ones(H, nb) -
                                  lc.tanh_c.cwiseProduct(lc.tanh_c)) +
                dc_next;

            const Eigen::MatrixXd* c_prev = nullptr;
            Eigen::MatrixXd zeros;
            if (t > 0) {
                c_prev = &cache.steps[t - 1].layers[lr].c;
            } else {
                zeros = Eigen::MatrixXd::Zero(H, nb);
                c_prev = &zeros;
            }

            const Eigen::MatrixXd di = dc.cwiseProduct(lc.g);
            const Eigen::MatrixXd df = dc.cwiseProduct(*c_prev);
            const Eigen::MatrixXd dg = dc.cwiseProduct(lc.i);
            dc_next = dc.cwiseProduct(lc.f);

            Eigen::MatrixXd dgates(4 * H, nb);
            dgates.topRows(H) =
                di.cwiseProduct(lc.i).cwiseProduct(Eigen::MatrixXd::Ones(H, nb) - lc.i);
            dgates.middleRows(H, H) =
                df.cwiseProduct(lc.f).cwiseProduct(Eigen::MatrixXd::Ones(H, nb) - lc.f);
            dgates.middleRows(2 * H, H) = dg.cwiseProduct(
                Eigen::MatrixXd::Ones(H, nb) - lc.g.cwiseProduct(lc.g));
            dgates.bottomRows(H) =
                do_.cwiseProduct(lc.o).cwiseProduct(Eigen::MatrixXd::Ones(H, nb) - lc.o);

            const Eigen::MatrixXd& layer_in =
                lr == 0 ? cache.steps[t].e2 : cache.steps[t].layers[lr - 1].h;
            gw.wx += dgates * layer_in.transpose();
            if (t > 0) {
                gw.wh += dgates * cache.steps[t - 1].layers[lr].h.transpose();
            }
            gw.b += dgates.rowwise().sum();

            dx_out[t] = w.wx.transpose() * dgates;
            dh_next = w.wh.transpose() * dgates;
        }

        if (lr == 0) {
            de2 = std::move(dx_out);
        } else {
            dh_from_above = std::move(dx_out);
        }
    }

    // Encoder backward per step.
    for (std::size_t t = 0; t < T; ++t) {
        const auto& s = cache.steps[t];
        const Eigen::MatrixXd de2_pre =
            de2[t].cwiseProduct(detail::leaky_grad(s.e2_pre, cfg.leaky_slope));
        g.enc_w2 += de2_pre * s.e1.transpose();
        g.enc_b2 += de2_pre.rowwise().sum();
        const Eigen::MatrixXd de1_pre =
            (params.enc_w2.transpose() * de2_pre)
                .cwiseProduct(detail::leaky_grad(s.e1_pre, cfg.leaky_slope));
        g.enc_w1 += de1_pre * s.x.transpose();
        g.enc_b1 += de1_pre.rowwise().sum();
    }

    bool finite = true;
    g.visit([&](const char*, const auto& t) { finite = finite && t.allFinite(); });
    if (!finite) throw NonFiniteError("nn: non-finite gradient");
    return g;
}

/// Standardize a raw feature vector with the model's stored statistics.
inline Eigen::VectorXd normalize_features(const FeatureStats& stats,
                                          const std::array<double, 6>& f) {
    Eigen::VectorXd v(kFeatureCount);
    for (int i = 0; i < kFeatureCount; ++i) {
        v[i] = (f[static_cast<std::size_t>(i)] - stats.mean[i]) / stats.stddev[i];
    }
    return v;
}

/// Predict the frame 200 ms after the window's last frame. Input frames are
/// standardized with the stored statistics; the returned features are mapped
/// back to physical units.
inline std::array<double, 6> predict_future(const ModelParams& params,
                                            const std::vector<SyncedFrame>& frames) {
    if (frames.size() != static_cast<std::size_t>(params.config.seq_len)) {
        throw InvalidInput("nn: predict_future expects one full window");
    }
    StepTensor inputs;
    inputs.reserve(frames.size());
    for (const auto& f : frames) {
        inputs.push_back(normalize_features(params.stats, f.features()));
    }
    const StepTensor out = forward(params, inputs, ForwardMode::runtime);
    std::array<double, 6> result{};
    for (int i = 0; i < kFeatureCount; ++i) {
        result[static_cast<std::size_t>(i)] =
            out.front()(i, 0) * params.stats.stddev[i] + params.stats.mean[i];
    }
    return result;
}

} // namespace traj
