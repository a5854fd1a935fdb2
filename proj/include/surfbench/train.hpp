// Training for the bidirectional GRU classifier: mini-batch BPTT with Adam.
// batch_loss / batch_gradients are exposed separately so the analytic
// gradient can be checked against central finite differences.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "surfbench/pipeline.hpp"
#include "surfbench/rng.hpp"

namespace surfbench {

// Gradient accumulator; reuses GruWeights for shape symmetry with the model.
struct Gradients {
    GruWeights fwd, bwd;
    Eigen::MatrixXd head_w;
    Eigen::VectorXd head_b;

    static Gradients zeros_like(const PipelineModel& m) {
        Gradients g;
        auto zero_gru = [](const GruWeights& w) {
            GruWeights g;
            g.w_z = Eigen::MatrixXd::Zero(w.w_z.rows(), w.w_z.cols());
            g.w_r = Eigen::MatrixXd::Zero(w.w_r.rows(), w.w_r.cols());
            g.w_h = Eigen::MatrixXd::Zero(w.w_h.rows(), w.w_h.cols());
            g.u_z = Eigen::MatrixXd::Zero(w.u_z.rows(), w.u_z.cols());
            g.u_r = Eigen::MatrixXd::Zero(w.u_r.rows(), w.u_r.cols());
            g.u_h = Eigen::MatrixXd::Zero(w.u_h.rows(), w.u_h.cols());
            g.b_z = Eigen::VectorXd::Zero(w.b_z.size());
            g.b_r = Eigen::VectorXd::Zero(w.b_r.size());
            g.b_h = Eigen::VectorXd::Zero(w.b_h.size());
            return g;
        };
        g.fwd = zero_gru(m.fwd);
        g.bwd = zero_gru(m.bwd);
        g.head_w = Eigen::MatrixXd::Zero(m.head_w.rows(), m.head_w.cols());
        g.head_b = Eigen::VectorXd::Zero(m.head_b.size());
        return g;
    }
};

namespace detail {

template <class F>
void visit_gru(GruWeights& g, F&& f) {
    f(g.w_z); f(g.u_z); f(g.b_z);
    f(g.w_r); f(g.u_r); f(g.b_r);
    f(g.w_h); f(g.u_h); f(g.b_h);
}

}  // namespace detail

// Flat views over every trainable tensor, in a fixed order shared between the
// model and its gradients. Used by Adam and by the finite-difference check.
inline std::vector<Eigen::Map<Eigen::VectorXd>> param_views(PipelineModel& m) {
    std::vector<Eigen::Map<Eigen::VectorXd>> v;
    auto add = [&v](auto& t) { v.emplace_back(t.data(), t.size()); };
    detail::visit_gru(m.fwd, add);
    detail::visit_gru(m.bwd, add);
    add(m.head_w);
    add(m.head_b);
    return v;
}

inline std::vector<Eigen::Map<Eigen::VectorXd>> grad_views(Gradients& g) {
    std::vector<Eigen::Map<Eigen::VectorXd>> v;
    auto add = [&v](auto& t) { v.emplace_back(t.data(), t.size()); };
    detail::visit_gru(g.fwd, add);
    detail::visit_gru(g.bwd, add);
    add(g.head_w);
    add(g.head_b);
    return v;
}

namespace detail {

struct DirCache {
    std::vector<Eigen::MatrixXd> z, r, hc, h;  // each W entries of H x B
};

// Forward pass of one direction over the whole batch. x[t] is p x B.
inline DirCache gru_forward(const GruWeights& w, const std::vector<Eigen::MatrixXd>& x) {
    const int steps = static_cast<int>(x.size());
    const int h = w.hidden();
    const int b = static_cast<int>(x[0].cols());
    DirCache c;
    c.z.resize(steps); c.r.resize(steps); c.hc.resize(steps); c.h.resize(steps);
    Eigen::MatrixXd h_prev = Eigen::MatrixXd::Zero(h, b);
    for (int t = 0; t < steps; ++t) {
        c.z[t] = sigmoid(((w.w_z * x[t] + w.u_z * h_prev).colwise() + w.b_z).array());
        c.r[t] = sigmoid(((w.w_r * x[t] + w.u_r * h_prev).colwise() + w.b_r).array());
        c.hc[t] = ((w.w_h * x[t] + w.u_h * (c.r[t].cwiseProduct(h_prev))).colwise() + w.b_h)
                      .array().tanh();
        c.h[t] = (1.0 - c.z[t].array()) * h_prev.array() +
                 c.z[t].array() * c.hc[t].array();
        h_prev = c.h[t];
    }
    return c;
}

// BPTT for one direction given the gradient at the final hidden state.
inline GruWeights gru_backward(const GruWeights& w, const std::vector<Eigen::MatrixXd>& x,
                               const DirCache& c, const Eigen::MatrixXd& dh_final) {
    const int steps = static_cast<int>(x.size());
    const int h = w.hidden();
    const int b = static_cast<int>(x[0].cols());
    GruWeights g;
    g.w_z = Eigen::MatrixXd::Zero(h, w.input());
    g.w_r = g.w_z; g.w_h = g.w_z;
    g.u_z = Eigen::MatrixXd::Zero(h, h);
    g.u_r = g.u_z; g.u_h = g.u_z;
    g.b_z = Eigen::VectorXd::Zero(h);
    g.b_r = g.b_z; g.b_h = g.b_z;

    Eigen::MatrixXd dh = dh_final;
    for (int t = steps - 1; t >= 0; --t) {
        const Eigen::MatrixXd h_prev =
            t > 0 ? c.h[t - 1] : Eigen::MatrixXd::Zero(h, b).eval();
        const Eigen::ArrayXXd z = c.z[t].array();
        const Eigen::ArrayXXd r = c.r[t].array();
        const Eigen::ArrayXXd hc = c.hc[t].array();

        const Eigen::MatrixXd da_h = (dh.array() * z * (1.0 - hc.square())).matrix();
        const Eigen::MatrixXd da_z =
            (dh.array() * (hc - h_prev.array()) * z * (1.0 - z)).matrix();
        Eigen::MatrixXd dh_prev = (dh.array() * (1.0 - z)).matrix();

        const Eigen::MatrixXd drh = w.u_h.transpose() * da_h;  // grad wrt r.h_prev
        const Eigen::MatrixXd da_r =
            (drh.array() * h_prev.array() * r * (1.0 - r)).matrix();
        dh_prev.array() += drh.array() * r;
        dh_prev.noalias() += w.u_z.transpose() * da_z + w.u_r.transpose() * da_r;

        g.w_z.noalias() += da_z * x[t].transpose();
        g.w_r.noalias() += da_r * x[t].transpose();
        g.w_h.noalias() += da_h * x[t].transpose();
        g.u_z.noalias() += da_z * h_prev.transpose();
        g.u_r.noalias() += da_r * h_prev.transpose();
        g.u_h.noalias() += da_h * (c.r[t].cwiseProduct(h_prev)).transpose();
        g.b_z += da_z.rowwise().sum();
        g.b_r += da_r.rowwise().sum();
        g.b_h += da_h.rowwise().sum();

        dh = std::move(dh_prev);
    }
    return g;
}

// Project a batch of windows into per-timestep input matrices (p x B).
inline std::vector<Eigen::MatrixXd> batch_inputs(const PipelineModel& m,
                                                 const std::vector<Window>& windows,
                                                 const std::vector<int>& idx) {
    const int b = static_cast<int>(idx.size());
    const int p = m.pca_dim();
    std::vector<Eigen::MatrixXd> x(m.window, Eigen::MatrixXd(p, b));
    for (int j = 0; j < b; ++j) {
        const Window& w = windows[idx[j]];
        if (w.samples.rows() != m.window || w.samples.cols() != kImuChannels)
            throw ValidationError("window shape does not match the model");
        const Eigen::MatrixXd proj = project_window(m, w.samples);  // p x W
        for (int t = 0; t < m.window; ++t) x[t].col(j) = proj.col(t);
    }
    return x;
}

struct BatchResult {
    double loss = 0.0;
    Eigen::MatrixXd probs;  // K x B
    Gradients grads;
};

inline BatchResult run_batch(const PipelineModel& m, const std::vector<Window>& windows,
                             const std::vector<int>& idx, bool want_grads) {
    const int b = static_cast<int>(idx.size());
    const int k = m.classes();
    const std::vector<Eigen::MatrixXd> x = batch_inputs(m, windows, idx);
    std::vector<Eigen::MatrixXd> x_rev(x.rbegin(), x.rend());

    const DirCache cf = gru_forward(m.fwd, x);
    const DirCache cb = gru_forward(m.bwd, x_rev);
    const int last = m.window - 1;

    Eigen::MatrixXd concat(2 * m.hidden(), b);
    concat << cf.h[last], cb.h[last];
    const Eigen::MatrixXd logits = (m.head_w * concat).colwise() + m.head_b;

    BatchResult out;
    out.probs.resize(k, b);
    double loss = 0.0;
    for (int j = 0; j < b; ++j) {
        const int label = windows[idx[j]].label;
        if (label < 0 || label >= k) throw ValidationError("window label outside [0, K)");
        const double mx = logits.col(j).maxCoeff();
        const Eigen::ArrayXd e = (logits.col(j).array() - mx).exp();
        const double lse = mx + std::log(e.sum());
        out.probs.col(j) = (e / e.sum()).matrix();
        loss += lse - logits(label, j);
    }
    out.loss = loss / b;
    if (!std::isfinite(out.loss))
        throw NonFiniteLoss("training loss is not finite; lower the learning rate");
    if (!want_grads) return out;

    Eigen::MatrixXd dlogits = out.probs;
    for (int j = 0; j < b; ++j) dlogits(windows[idx[j]].label, j) -= 1.0;
    dlogits /= static_cast<double>(b);

    out.grads.head_w = dlogits * concat.transpose();
    out.grads.head_b = dlogits.rowwise().sum();
    const Eigen::MatrixXd dconcat = m.head_w.transpose() * dlogits;
    out.grads.fwd = gru_backward(m.fwd, x, cf, dconcat.topRows(m.hidden()));
    out.grads.bwd = gru_backward(m.bwd, x_rev, cb, dconcat.bottomRows(m.hidden()));
    return out;
}

inline std::vector<int> all_indices(std::size_t n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace detail

// Mean cross-entropy over a labeled window set (forward only).
inline double batch_loss(const PipelineModel& m, const std::vector<Window>& windows) {
    if (windows.empty()) throw ValidationError("batch_loss needs windows");
    return detail::run_batch(m, windows, detail::all_indices(windows.size()), false).loss;
}

// Mean cross-entropy and its analytic gradient over a labeled window set.
inline std::pair<double, Gradients> batch_gradients(const PipelineModel& m,
                                                    const std::vector<Window>& windows) {
    if (windows.empty()) throw ValidationError("batch_gradients needs windows");
    auto r = detail::run_batch(m, windows, detail::all_indices(windows.size()), true);
    return {r.loss, std::move(r.grads)};
}

// Batched argmax accuracy (reporting only; evaluate() is the canonical path).
inline double batch_accuracy(const PipelineModel& m, const std::vector<Window>& windows) {
    if (windows.empty()) return 0.0;
    const auto idx = detail::all_indices(windows.size());
    constexpr int kChunk = 512;
    long correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
        std::vector<int> part(idx.begin() + start,
                              idx.begin() + std::min(idx.size(), start + kChunk));
        const auto r = detail::run_batch(m, windows, part, false);
        for (std::size_t j = 0; j < part.size(); ++j) {
            int pred = 0;
            r.probs.col(static_cast<int>(j)).maxCoeff(&pred);
            if (pred == windows[part[j]].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(windows.size());
}

// Fresh model with seeded uniform(+-sqrt(1/fan_in)) weights and zero biases.
inline PipelineModel init_pipeline(const ScalerStats& scaler, const PcaBasis& pca,
                                   int hidden, const std::vector<std::string>& class_names,
                                   int window, std::uint64_t seed) {
    if (hidden < 1) throw ValidationError("hidden size must be >= 1");
    if (class_names.size() < 2) throw ValidationError("need at least 2 classes");
    PipelineModel m;
    m.scaler = scaler;
    m.pca = pca;
    m.class_names = class_names;
    m.window = window;
    const int p = static_cast<int>(pca.components.rows());
    const int k = static_cast<int>(class_names.size());

    auto rng = make_rng(seed, "model-init");
    auto fill = [&rng](Eigen::MatrixXd& t, int fan_in) {
        const double s = std::sqrt(1.0 / fan_in);
        std::uniform_real_distribution<double> dist(-s, s);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    };
    auto init_gru = [&](GruWeights& g) {
        g.w_z.resize(hidden, p); g.w_r.resize(hidden, p); g.w_h.resize(hidden, p);
        g.u_z.resize(hidden, hidden); g.u_r.resize(hidden, hidden); g.u_h.resize(hidden, hidden);
        fill(g.w_z, p); fill(g.u_z, hidden);
        fill(g.w_r, p); fill(g.u_r, hidden);
        fill(g.w_h, p); fill(g.u_h, hidden);
        g.b_z = Eigen::VectorXd::Zero(hidden);
        g.b_r = g.b_z;
        g.b_h = g.b_z;
    };
    init_gru(m.fwd);
    init_gru(m.bwd);
    m.head_w.resize(k, 2 * hidden);
    fill(m.head_w, 2 * hidden);
    m.head_b = Eigen::VectorXd::Zero(k);
    m.validate();
    return m;
}

struct TrainOptions {
    double lr = 5e-3;
    int batch = 64;
    int epochs = 24;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 42;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    PipelineModel model;
    std::vector<EpochStats> history;
};

// Adam over shuffled mini-batches. Deterministic for a fixed seed.
inline TrainResult train(PipelineModel model, const std::vector<Window>& train_windows,
                         const std::vector<Window>& val_windows, const TrainOptions& opt) {
    if (train_windows.empty()) throw ValidationError("train needs training windows");
    if (opt.batch < 1 || opt.epochs < 1 || !(opt.lr > 0.0))
        throw ValidationError("invalid training options");
    model.validate();

    Gradients m1 = Gradients::zeros_like(model);
    Gradients m2 = Gradients::zeros_like(model);
    auto params = param_views(model);
    auto m1v = grad_views(m1);
    auto m2v = grad_views(m2);

    TrainResult out;
    long step = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        auto idx = detail::all_indices(train_windows.size());
        auto rng = make_rng(opt.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        std::shuffle(idx.begin(), idx.end(), rng);

        // Cosine decay from the configured rate to a tenth of it; steadies
        // the tail of training without adding another tunable.
        const double progress =
            opt.epochs > 1 ? static_cast<double>(epoch) / static_cast<double>(opt.epochs - 1)
                           : 0.0;
        const double lr_epoch =
            opt.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));

        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t start = 0; start < idx.size();
             start += static_cast<std::size_t>(opt.batch)) {
            std::vector<int> part(
                idx.begin() + start,
                idx.begin() + std::min(idx.size(), start + static_cast<std::size_t>(opt.batch)));
            auto r = [&] {
                try {
                    return detail::run_batch(model, train_windows, part, true);
                } catch (const NonFiniteLoss& e) {
                    throw NonFiniteLoss("epoch " + std::to_string(epoch) + ", batch " +
                                        std::to_string(batches + 1) + ": " + e.what());
                }
            }();
            loss_sum += r.loss;
            ++batches;
            ++step;

            auto gv = grad_views(r.grads);
            const double corr =
                lr_epoch * std::sqrt(1.0 - std::pow(opt.beta2, step)) /
                (1.0 - std::pow(opt.beta1, step));
            for (std::size_t i = 0; i < params.size(); ++i) {
                m1v[i] = opt.beta1 * m1v[i] + (1.0 - opt.beta1) * gv[i];
                m2v[i] = opt.beta2 * m2v[i].array().matrix() +
                         (1.0 - opt.beta2) * gv[i].array().square().matrix();
                params[i].array() -=
                    corr * m1v[i].array() / (m2v[i].array().sqrt() + opt.eps);
            }
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(batches);
        st.val_accuracy = val_windows.empty() ? 0.0 : batch_accuracy(model, val_windows);
        out.history.push_back(st);
    }
    out.model = std::move(model);
    return out;
}

}  // namespace surfbench
