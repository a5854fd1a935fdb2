// Surface-recognition pipeline: per-channel standard scaling, PCA projection,
// a bidirectional GRU over fixed-length windows and a linear softmax head.
// All arithmetic is double precision so gradients can be checked against
// finite differences.
#pragma once

#include <Eigen/Dense>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "surfbench/dynamics.hpp"
#include "surfbench/errors.hpp"

namespace surfbench {

constexpr int kImuChannels = 6;  // ax, ay, az, gx, gy, gz
constexpr int kDefaultWindow = 100;

// One classifier input: W time-contiguous IMU rows from a single episode.
struct Window {
    Eigen::MatrixXd samples;  // W x 6
    int label = -1;           // class id, -1 = unlabeled
    int episode = -1;         // provenance tag; windows never span episodes
};

struct ScalerStats {
    Eigen::VectorXd mean;  // 6
    Eigen::VectorXd std;   // 6, strictly positive
};

// Per-channel mean and population standard deviation over all rows of all
// windows. Throws DegenerateChannel when a channel has zero variance.
inline ScalerStats fit_scaler(const std::vector<Window>& windows) {
    long rows = 0;
    for (const auto& w : windows) rows += w.samples.rows();
    if (rows < 2) throw ValidationError("fit_scaler needs at least 2 samples");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(kImuChannels);
    for (const auto& w : windows) mean += w.samples.colwise().sum().transpose();
    mean /= static_cast<double>(rows);

    Eigen::VectorXd var = Eigen::VectorXd::Zero(kImuChannels);
    for (const auto& w : windows) {
        Eigen::MatrixXd centered = w.samples.rowwise() - mean.transpose();
        var += centered.array().square().colwise().sum().matrix().transpose();
    }
    var /= static_cast<double>(rows);

    for (int c = 0; c < kImuChannels; ++c) {
        if (!(var[c] > 0.0))
            throw DegenerateChannel("channel " + std::to_string(c) +
                                    " has zero variance; drop or perturb it");
    }
    return {mean, var.cwiseSqrt()};
}

inline Eigen::MatrixXd apply_scaler(const ScalerStats& s, const Eigen::MatrixXd& rows) {
    return (rows.rowwise() - s.mean.transpose()).array().rowwise() /
           s.std.transpose().array();
}

struct PcaBasis {
    Eigen::VectorXd mean;         // 6
    Eigen::MatrixXd components;   // p x 6, rows orthonormal
    Eigen::VectorXd eigenvalues;  // all 6, descending
};

namespace detail {

inline PcaBasis pca_full(const Eigen::MatrixXd& rows) {
    if (rows.rows() <= kImuChannels)
        throw ValidationError("fit_pca needs more rows than channels");
    const Eigen::VectorXd mean = rows.colwise().mean().transpose();
    const Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(rows.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    // Eigen returns ascending order; flip to descending.
    Eigen::VectorXd evals = solver.eigenvalues().reverse();
    Eigen::MatrixXd comps(kImuChannels, kImuChannels);
    for (int i = 0; i < kImuChannels; ++i)
        comps.row(i) = solver.eigenvectors().col(kImuChannels - 1 - i).transpose();
    return {mean, comps, evals};
}

}  // namespace detail

// Top-p principal components of the channel covariance.
inline PcaBasis fit_pca(const Eigen::MatrixXd& scaled_rows, int p) {
    if (p < 1 || p > kImuChannels) throw ValidationError("pca dimension out of range");
    PcaBasis full = detail::pca_full(scaled_rows);
    full.components = full.components.topRows(p).eval();
    return full;
}

// Smallest p whose explained-variance fraction reaches `fraction`.
inline PcaBasis fit_pca_fraction(const Eigen::MatrixXd& scaled_rows, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ValidationError("pca variance fraction must lie in (0,1]");
    PcaBasis full = detail::pca_full(scaled_rows);
    const double total = full.eigenvalues.sum();
    double acc = 0.0;
    int p = kImuChannels;
    for (int i = 0; i < kImuChannels; ++i) {
        acc += full.eigenvalues[i];
        if (acc >= fraction * total - 1e-12) {
            p = i + 1;
            break;
        }
    }
    full.components = full.components.topRows(p).eval();
    return full;
}

inline Eigen::VectorXd pca_project(const PcaBasis& b, const Eigen::VectorXd& x) {
    return b.components * (x - b.mean);
}

struct GruWeights {
    Eigen::MatrixXd w_z, w_r, w_h;  // H x p
    Eigen::MatrixXd u_z, u_r, u_h;  // H x H
    Eigen::VectorXd b_z, b_r, b_h;  // H

    int hidden() const { return static_cast<int>(w_z.rows()); }
    int input() const { return static_cast<int>(w_z.cols()); }
};

inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& x) {
    return 1.0 / (1.0 + (-x).exp());
}

// One GRU update. Gate convention (fixed across the project):
//   z = sigma(w_z x + u_z h_prev + b_z)
//   r = sigma(w_r x + u_r h_prev + b_r)
//   hc = tanh(w_h x + u_h (r . h_prev) + b_h)
//   h  = (1 - z) . h_prev + z . hc
inline Eigen::VectorXd gru_cell(const GruWeights& w, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& h_prev) {
    const Eigen::ArrayXd z = sigmoid((w.w_z * x + w.u_z * h_prev + w.b_z).array());
    const Eigen::ArrayXd r = sigmoid((w.w_r * x + w.u_r * h_prev + w.b_r).array());
    const Eigen::ArrayXd hc =
        (w.w_h * x + w.u_h * (r.matrix().cwiseProduct(h_prev)) + w.b_h).array().tanh();
    return ((1.0 - z) * h_prev.array() + z * hc).matrix();
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const Eigen::ArrayXd shifted = logits.array() - logits.maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    return (e / e.sum()).matrix();
}

// The full serialized classifier.
struct PipelineModel {
    ScalerStats scaler;
    PcaBasis pca;
    GruWeights fwd, bwd;
    Eigen::MatrixXd head_w;  // K x 2H
    Eigen::VectorXd head_b;  // K
    std::vector<std::string> class_names;
    int window = kDefaultWindow;

    int classes() const { return static_cast<int>(head_w.rows()); }
    int hidden() const { return fwd.hidden(); }
    int pca_dim() const { return static_cast<int>(pca.components.rows()); }

    void validate() const {
        if (window < 2) throw ValidationError("model window must be >= 2");
        if (scaler.mean.size() != kImuChannels || scaler.std.size() != kImuChannels)
            throw ValidationError("scaler statistics must have 6 channels");
        if ((scaler.std.array() <= 0.0).any())
            throw ValidationError("scaler std must be strictly positive");
        const int p = pca_dim();
        if (p < 1 || p > kImuChannels || pca.components.cols() != kImuChannels)
            throw ValidationError("pca components must be p x 6 with 1 <= p <= 6");
        const Eigen::MatrixXd gram = pca.components * pca.components.transpose();
        if ((gram - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() > 1e-8)
            throw ValidationError("pca components are not orthonormal");
        const int h = hidden();
        auto check_gru = [&](const GruWeights& g, const char* which) {
            if (g.w_z.rows() != h || g.w_z.cols() != p || g.u_z.rows() != h ||
                g.u_z.cols() != h || g.b_z.size() != h || g.w_r.rows() != h ||
                g.w_r.cols() != p || g.u_r.rows() != h || g.u_r.cols() != h ||
                g.b_r.size() != h || g.w_h.rows() != h || g.w_h.cols() != p ||
                g.u_h.rows() != h || g.u_h.cols() != h || g.b_h.size() != h)
                throw ValidationError(std::string("inconsistent GRU shapes (") + which + ")");
        };
        check_gru(fwd, "fwd");
        check_gru(bwd, "bwd");
        const int k = classes();
        if (k < 2 || head_w.cols() != 2 * h || head_b.size() != k)
            throw ValidationError("head shapes inconsistent");
        if (class_names.size() != static_cast<std::size_t>(k))
            throw ValidationError("class_names size must equal K");
    }
};

// Scale + project one window into the GRU input sequence (p x W, columns are
// timesteps).
inline Eigen::MatrixXd project_window(const PipelineModel& m, const Eigen::MatrixXd& rows) {
    const Eigen::MatrixXd scaled = apply_scaler(m.scaler, rows);
    return m.pca.components *
           (scaled.transpose().colwise() - m.pca.mean);
}

inline Eigen::VectorXd classify_logits(const PipelineModel& m, const Eigen::MatrixXd& rows) {
    const Eigen::MatrixXd x = project_window(m, rows);  // p x W
    const int w = static_cast<int>(x.cols());
    Eigen::VectorXd hf = Eigen::VectorXd::Zero(m.hidden());
    for (int t = 0; t < w; ++t) hf = gru_cell(m.fwd, x.col(t), hf);
    Eigen::VectorXd hb = Eigen::VectorXd::Zero(m.hidden());
    for (int t = w - 1; t >= 0; --t) hb = gru_cell(m.bwd, x.col(t), hb);
    Eigen::VectorXd h(2 * m.hidden());
    h << hf, hb;
    return m.head_w * h + m.head_b;
}

// Class probabilities for one window.
inline Eigen::VectorXd classify_window(const PipelineModel& m, const Window& win) {
    if (win.samples.rows() != m.window || win.samples.cols() != kImuChannels)
        throw ValidationError("window shape does not match the model");
    return softmax(classify_logits(m, win.samples));
}

inline int predict_class(const PipelineModel& m, const Window& win) {
    int best = 0;
    classify_window(m, win).maxCoeff(&best);
    return best;
}

// Confusion matrix (row = true, col = predicted) with per-class metrics.
struct EvalReport {
    Eigen::MatrixXi confusion;
    Eigen::VectorXd precision, recall, f1;
    double mean_accuracy = 0.0;

    static EvalReport from_confusion(const Eigen::MatrixXi& c) {
        const int k = static_cast<int>(c.rows());
        EvalReport r;
        r.confusion = c;
        r.precision.resize(k);
        r.recall.resize(k);
        r.f1.resize(k);
        long total = 0, correct = 0;
        for (int i = 0; i < k; ++i) {
            const long row = c.row(i).sum();
            const long col = c.col(i).sum();
            const long tp = c(i, i);
            r.precision[i] = col > 0 ? static_cast<double>(tp) / col : 0.0;
            r.recall[i] = row > 0 ? static_cast<double>(tp) / row : 0.0;
            const double pr = r.precision[i] + r.recall[i];
            r.f1[i] = pr > 0 ? 2.0 * r.precision[i] * r.recall[i] / pr : 0.0;
            total += row;
            correct += tp;
        }
        r.mean_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
        return r;
    }
};

// Argmax evaluation over a labeled window set.
inline EvalReport evaluate(const PipelineModel& m, const std::vector<Window>& windows) {
    if (windows.empty()) throw ValidationError("evaluate needs a non-empty window set");
    const int k = m.classes();
    Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(k, k);
    for (const auto& w : windows) {
        if (w.label < 0 || w.label >= k)
            throw ValidationError("window label outside [0, K)");
        confusion(w.label, predict_class(m, w)) += 1;
    }
    return EvalReport::from_confusion(confusion);
}

struct StreamPrediction {
    double t = 0.0;
    int class_id = 0;
    Eigen::VectorXd probabilities;
};

// FIFO over the last W samples; one prediction per sample once the queue is
// full. Single-consumer. Rejects non-increasing timestamps.
class StreamClassifier {
public:
    explicit StreamClassifier(const PipelineModel& model) : model_(model) {
        buffer_.resize(model.window, kImuChannels);
    }

    std::optional<StreamPrediction> push(const ImuSample& s) {
        if (count_ > 0 && !(s.t > last_t_))
            throw NonMonotonicTime("stream timestamps must strictly increase");
        last_t_ = s.t;
        Eigen::Matrix<double, 1, kImuChannels> row;
        row << s.acc.transpose(), s.gyr.transpose();
        if (count_ < model_.window) {
            buffer_.row(count_++) = row;
        } else {
            // shift up one row; W is small so the copy is cheap
            buffer_.topRows(model_.window - 1) = buffer_.bottomRows(model_.window - 1).eval();
            buffer_.row(model_.window - 1) = row;
        }
        if (count_ < model_.window) return std::nullopt;
        StreamPrediction out;
        out.t = s.t;
        out.probabilities = softmax(classify_logits(model_, buffer_));
        out.probabilities.maxCoeff(&out.class_id);
        return out;
    }

private:
    const PipelineModel& model_;
    Eigen::MatrixXd buffer_;
    int count_ = 0;
    double last_t_ = 0.0;
};

// Convenience wrapper: run a whole trace through the streaming classifier.
inline std::vector<StreamPrediction> classify_stream(const PipelineModel& m,
                                                     const ImuTrace& trace) {
    StreamClassifier sc(m);
    std::vector<StreamPrediction> out;
    for (const auto& s : trace) {
        if (auto p = sc.push(s)) out.push_back(std::move(*p));
    }
    return out;
}

}  // namespace surfbench
