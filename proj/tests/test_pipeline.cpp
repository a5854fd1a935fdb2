#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "surfbench/model_io.hpp"
#include "surfbench/pipeline.hpp"
#include "surfbench/train.hpp"

using namespace surfbench;

namespace {

Eigen::MatrixXd random_rows(int n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> gauss(0.0, scale);
    Eigen::MatrixXd m(n, kImuChannels);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
    return m;
}

std::vector<Window> random_windows(int count, int w, std::mt19937_64& rng) {
    std::vector<Window> out;
    for (int i = 0; i < count; ++i) {
        Window win;
        win.samples = random_rows(w, rng);
        win.label = i % 2;
        out.push_back(std::move(win));
    }
    return out;
}

// Plain scalar-loop GRU update, written independently of the Eigen version.
Eigen::VectorXd gru_cell_scalar(const GruWeights& w, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& h_prev) {
    const int hn = w.hidden(), p = w.input();
    Eigen::VectorXd z(hn), r(hn), h(hn);
    for (int i = 0; i < hn; ++i) {
        double az = w.b_z[i], ar = w.b_r[i];
        for (int j = 0; j < p; ++j) {
            az += w.w_z(i, j) * x[j];
            ar += w.w_r(i, j) * x[j];
        }
        for (int j = 0; j < hn; ++j) {
            az += w.u_z(i, j) * h_prev[j];
            ar += w.u_r(i, j) * h_prev[j];
        }
        z[i] = 1.0 / (1.0 + std::exp(-az));
        r[i] = 1.0 / (1.0 + std::exp(-ar));
    }
    for (int i = 0; i < hn; ++i) {
        double ah = w.b_h[i];
        for (int j = 0; j < p; ++j) ah += w.w_h(i, j) * x[j];
        for (int j = 0; j < hn; ++j) ah += w.u_h(i, j) * (r[j] * h_prev[j]);
        const double hc = std::tanh(ah);
        h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * hc;
    }
    return h;
}

GruWeights random_gru(int hn, int p, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 0.6);
    GruWeights g;
    g.w_z.resize(hn, p); g.w_r.resize(hn, p); g.w_h.resize(hn, p);
    g.u_z.resize(hn, hn); g.u_r.resize(hn, hn); g.u_h.resize(hn, hn);
    g.b_z.resize(hn); g.b_r.resize(hn); g.b_h.resize(hn);
    auto fill = [&](auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = gauss(rng);
    };
    fill(g.w_z); fill(g.w_r); fill(g.w_h);
    fill(g.u_z); fill(g.u_r); fill(g.u_h);
    fill(g.b_z); fill(g.b_r); fill(g.b_h);
    return g;
}

GruWeights zero_gru(int hn, int p) {
    GruWeights g;
    g.w_z = Eigen::MatrixXd::Zero(hn, p); g.w_r = g.w_z; g.w_h = g.w_z;
    g.u_z = Eigen::MatrixXd::Zero(hn, hn); g.u_r = g.u_z; g.u_h = g.u_z;
    g.b_z = Eigen::VectorXd::Zero(hn); g.b_r = g.b_z; g.b_h = g.b_z;
    return g;
}

// Identity-ish preprocessing: unit scaler, axis-aligned PCA onto the first p
// channels. Lets tests pick GRU inputs directly.
PipelineModel passthrough_model(int p, int hn, int k, int w) {
    PipelineModel m;
    m.scaler.mean = Eigen::VectorXd::Zero(kImuChannels);
    m.scaler.std = Eigen::VectorXd::Ones(kImuChannels);
    m.pca.mean = Eigen::VectorXd::Zero(kImuChannels);
    m.pca.components = Eigen::MatrixXd::Identity(p, kImuChannels);
    m.pca.eigenvalues = Eigen::VectorXd::Ones(kImuChannels);
    m.fwd = zero_gru(hn, p);
    m.bwd = zero_gru(hn, p);
    m.head_w = Eigen::MatrixXd::Zero(k, 2 * hn);
    m.head_b = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < k; ++i) m.class_names.push_back("class" + std::to_string(i));
    m.window = w;
    return m;
}

}  // namespace

TEST_CASE("scaler statistics by hand and as a defining property", "[pipeline]") {
    Window w;
    w.samples.resize(3, kImuChannels);
    for (int c = 0; c < kImuChannels; ++c) w.samples.col(c) << 1.0, 2.0, 3.0;
    const ScalerStats s = fit_scaler({w});
    for (int c = 0; c < kImuChannels; ++c) {
        CHECK(s.mean[c] == Catch::Approx(2.0).margin(1e-12));
        CHECK(s.std[c] == Catch::Approx(std::sqrt(2.0 / 3.0)).margin(1e-12));
    }

    auto rng = make_rng(11, "test");
    const auto wins = random_windows(8, 50, rng);
    const ScalerStats fit = fit_scaler(wins);
    Eigen::MatrixXd all(8 * 50, kImuChannels);
    for (int i = 0; i < 8; ++i) all.middleRows(i * 50, 50) = apply_scaler(fit, wins[i].samples);
    CHECK(all.colwise().mean().cwiseAbs().maxCoeff() <= 1e-9);
    const Eigen::VectorXd std_after =
        (all.array().square().colwise().mean()).sqrt().matrix().transpose();
    CHECK((std_after.array() - 1.0).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("scaler rejects degenerate input", "[pipeline]") {
    Window w;
    w.samples = Eigen::MatrixXd::Random(10, kImuChannels);
    w.samples.col(3).setConstant(4.2);  // dead channel
    CHECK_THROWS_AS(fit_scaler({w}), DegenerateChannel);

    Window tiny;
    tiny.samples = Eigen::MatrixXd::Random(1, kImuChannels);
    CHECK_THROWS_AS(fit_scaler({tiny}), ValidationError);
}

TEST_CASE("pca on white data has a flat spectrum", "[pipeline]") {
    auto rng = make_rng(12, "test");
    const Eigen::MatrixXd rows = random_rows(20000, rng);
    const PcaBasis full = fit_pca(rows, kImuChannels);
    REQUIRE(full.eigenvalues.size() == kImuChannels);
    for (int i = 0; i < kImuChannels; ++i)
        CHECK(full.eigenvalues[i] == Catch::Approx(1.0).margin(0.1));
    for (int i = 1; i < kImuChannels; ++i)
        CHECK(full.eigenvalues[i] <= full.eigenvalues[i - 1] + 1e-12);
    const double total = full.eigenvalues.sum();
    for (int p = 1; p <= kImuChannels; ++p) {
        const double frac = full.eigenvalues.head(p).sum() / total;
        CHECK(std::abs(frac - p / 6.0) <= 0.05);
    }
}

TEST_CASE("pca detects rank-1 structure", "[pipeline]") {
    auto rng = make_rng(13, "test");
    std::normal_distribution<double> gauss;
    Eigen::VectorXd v(kImuChannels);
    for (int i = 0; i < kImuChannels; ++i) v[i] = gauss(rng);
    v.normalize();
    Eigen::MatrixXd rows(500, kImuChannels);
    for (int i = 0; i < 500; ++i)
        rows.row(i) = gauss(rng) * v.transpose() +
                      1e-4 * random_rows(1, rng).row(0);
    const PcaBasis b = fit_pca_fraction(rows, 0.99);
    CHECK(b.components.rows() == 1);
    // The kept component is the planted direction up to sign.
    CHECK(std::abs(b.components.row(0).dot(v.transpose())) == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("pca reconstruction error equals the discarded eigenvalue mass", "[pipeline]") {
    auto rng = make_rng(14, "test");
    // Anisotropic data: white sample pushed through a fixed linear map.
    Eigen::MatrixXd map(kImuChannels, kImuChannels);
    for (Eigen::Index i = 0; i < map.size(); ++i)
        map.data()[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    map.diagonal() += Eigen::VectorXd::LinSpaced(kImuChannels, 0.5, 3.0);
    const Eigen::MatrixXd rows = random_rows(3000, rng) * map.transpose();

    const PcaBasis full = fit_pca(rows, kImuChannels);
    for (int p = 1; p <= kImuChannels; ++p) {
        const PcaBasis b = fit_pca(rows, p);
        REQUIRE(b.components.rows() == p);
        const Eigen::MatrixXd gram = b.components * b.components.transpose();
        CHECK((gram - Eigen::MatrixXd::Identity(p, p)).cwiseAbs().maxCoeff() <= 1e-8);

        double residual = 0.0;
        for (int i = 0; i < rows.rows(); ++i) {
            const Eigen::VectorXd x = rows.row(i).transpose();
            const Eigen::VectorXd back = b.mean + b.components.transpose() * pca_project(b, x);
            residual += (x - back).squaredNorm();
        }
        residual /= static_cast<double>(rows.rows());
        const double discarded = full.eigenvalues.tail(kImuChannels - p).sum();
        CHECK(residual == Catch::Approx(discarded).margin(1e-6));
    }
}

TEST_CASE("pca validates its inputs", "[pipeline]") {
    auto rng = make_rng(15, "test");
    const Eigen::MatrixXd rows = random_rows(100, rng);
    CHECK_THROWS_AS(fit_pca(rows, 0), ValidationError);
    CHECK_THROWS_AS(fit_pca(rows, 7), ValidationError);
    CHECK_THROWS_AS(fit_pca_fraction(rows, 0.0), ValidationError);
    CHECK_THROWS_AS(fit_pca_fraction(rows, 1.5), ValidationError);
    CHECK_THROWS_AS(fit_pca(random_rows(6, rng), 2), ValidationError);
}

TEST_CASE("gru cell closed forms and scalar-loop oracle", "[pipeline]") {
    const int hn = 5, p = 3;
    const GruWeights zeros = zero_gru(hn, p);
    CHECK(gru_cell(zeros, Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(hn)).isZero(0.0));

    Eigen::VectorXd v(hn);
    v << 1.0, -2.0, 0.5, 3.0, -0.25;
    // Zero weights: z = 0.5 and the candidate state is 0, so h = v/2.
    const Eigen::VectorXd half = gru_cell(zeros, Eigen::VectorXd::Ones(p), v);
    CHECK((half - 0.5 * v).cwiseAbs().maxCoeff() <= 1e-15);

    auto rng = make_rng(16, "test");
    std::normal_distribution<double> gauss;
    for (int trial = 0; trial < 50; ++trial) {
        const GruWeights w = random_gru(hn, p, rng);
        Eigen::VectorXd x(p), h_prev(hn);
        for (int i = 0; i < p; ++i) x[i] = gauss(rng);
        for (int i = 0; i < hn; ++i) h_prev[i] = gauss(rng);
        const Eigen::VectorXd a = gru_cell(w, x, h_prev);
        const Eigen::VectorXd b = gru_cell_scalar(w, x, h_prev);
        REQUIRE((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("classifier probability basics", "[pipeline]") {
    auto rng = make_rng(17, "test");
    PipelineModel m = passthrough_model(3, 4, 5, 20);
    m.fwd = random_gru(4, 3, rng);
    m.bwd = random_gru(4, 3, rng);
    m.validate();

    Window win;
    win.samples = random_rows(20, rng);

    // Zero head: exactly uniform.
    const Eigen::VectorXd uniform = classify_window(m, win);
    REQUIRE(uniform.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK(uniform[i] == Catch::Approx(0.2).margin(1e-12));

    // Random head: a proper distribution, invariant to a logit offset.
    for (Eigen::Index i = 0; i < m.head_w.size(); ++i)
        m.head_w.data()[i] = std::normal_distribution<double>(0.0, 1.0)(rng);
    const Eigen::VectorXd probs = classify_window(m, win);
    CHECK(std::abs(probs.sum() - 1.0) <= 1e-9);
    CHECK(probs.minCoeff() > 0.0);
    CHECK(probs.maxCoeff() < 1.0);
    PipelineModel shifted = m;
    shifted.head_b.array() += 17.5;
    CHECK((classify_window(shifted, win) - probs).cwiseAbs().maxCoeff() <= 1e-12);

    Window bad;
    bad.samples = random_rows(19, rng);
    CHECK_THROWS_AS(classify_window(m, bad), ValidationError);
}

TEST_CASE("window reversal swaps the two recurrent passes", "[pipeline]") {
    auto rng = make_rng(18, "test");
    const int hn = 4, p = 3, k = 3, w = 12;
    PipelineModel m = passthrough_model(p, hn, k, w);
    m.fwd = random_gru(hn, p, rng);
    m.bwd = m.fwd;  // shared weights make the swap visible
    std::normal_distribution<double> gauss;
    for (Eigen::Index i = 0; i < m.head_w.size(); ++i) m.head_w.data()[i] = gauss(rng);
    for (Eigen::Index i = 0; i < m.head_b.size(); ++i) m.head_b[i] = gauss(rng);

    Window win;
    win.samples = random_rows(w, rng);
    Window rev;
    rev.samples = win.samples.colwise().reverse();

    // Swapping the head halves must equal evaluating the reversed window.
    PipelineModel swapped = m;
    swapped.head_w.leftCols(hn) = m.head_w.rightCols(hn);
    swapped.head_w.rightCols(hn) = m.head_w.leftCols(hn);
    const Eigen::VectorXd a = classify_window(swapped, win);
    const Eigen::VectorXd b = classify_window(m, rev);
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);

    // With a half-symmetric head the prediction is reversal-invariant.
    PipelineModel sym = m;
    sym.head_w.rightCols(hn) = sym.head_w.leftCols(hn);
    const Eigen::VectorXd c = classify_window(sym, win);
    const Eigen::VectorXd d = classify_window(sym, rev);
    CHECK((c - d).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("evaluation metrics from a hand-checked confusion", "[pipeline]") {
    // One-unit GRU driven by the first channel: the forward state ends up
    // sharing the sign of the window mean, and the head maps sign to class.
    PipelineModel m = passthrough_model(1, 1, 2, 2);
    m.fwd.w_h.setConstant(5.0);
    m.head_w << 1.0, 0.0, -1.0, 0.0;
    m.validate();

    auto window_of = [&](double value, int label) {
        Window w;
        w.samples = Eigen::MatrixXd::Zero(2, kImuChannels);
        w.samples.col(0).setConstant(value);
        w.label = label;
        return w;
    };
    // true labels [0,0,1,1], predictions [0,1,1,1]
    const std::vector<Window> wins = {window_of(1.0, 0), window_of(-1.0, 0),
                                      window_of(-1.0, 1), window_of(-1.0, 1)};
    CHECK(predict_class(m, wins[0]) == 0);
    CHECK(predict_class(m, wins[1]) == 1);

    const EvalReport r = evaluate(m, wins);
    REQUIRE(r.confusion.rows() == 2);
    CHECK(r.confusion(0, 0) == 1);
    CHECK(r.confusion(0, 1) == 1);
    CHECK(r.confusion(1, 0) == 0);
    CHECK(r.confusion(1, 1) == 2);
    CHECK(r.precision[0] == 1.0);
    CHECK(r.precision[1] == Catch::Approx(2.0 / 3.0).margin(1e-15));
    CHECK(r.recall[0] == 0.5);
    CHECK(r.recall[1] == 1.0);
    CHECK(r.f1[0] == Catch::Approx(2.0 / 3.0).margin(1e-15));
    CHECK(r.f1[1] == Catch::Approx(0.8).margin(1e-15));
    CHECK(r.mean_accuracy == 0.75);

    // Perfect predictions: diagonal confusion, unit metrics.
    const std::vector<Window> good = {window_of(1.0, 0), window_of(-1.0, 1)};
    const EvalReport perfect = evaluate(m, good);
    CHECK(perfect.confusion(0, 0) == 1);
    CHECK(perfect.confusion(1, 1) == 1);
    CHECK(perfect.confusion(0, 1) == 0);
    CHECK(perfect.precision.minCoeff() == 1.0);
    CHECK(perfect.recall.minCoeff() == 1.0);
    CHECK(perfect.f1.minCoeff() == 1.0);
    CHECK(perfect.mean_accuracy == 1.0);

    // Zero-division rule: a class never predicted gets precision 0.
    Eigen::MatrixXi c(2, 2);
    c << 0, 3, 0, 3;
    const EvalReport degenerate = EvalReport::from_confusion(c);
    CHECK(degenerate.precision[0] == 0.0);
    CHECK(degenerate.f1[0] == 0.0);

    CHECK_THROWS_AS(evaluate(m, {}), ValidationError);
    std::vector<Window> bad = {window_of(1.0, 2)};
    CHECK_THROWS_AS(evaluate(m, bad), ValidationError);
}

TEST_CASE("streaming equals batch stride-1 classification", "[pipeline]") {
    auto rng = make_rng(19, "test");
    const int w = 100;
    ScalerStats scaler{Eigen::VectorXd::Zero(kImuChannels), Eigen::VectorXd::Ones(kImuChannels)};
    PcaBasis pca{Eigen::VectorXd::Zero(kImuChannels),
                 Eigen::MatrixXd::Identity(3, kImuChannels), Eigen::VectorXd::Ones(kImuChannels)};
    const PipelineModel m =
        init_pipeline(scaler, pca, 6, {"a", "b", "c"}, w, 99);

    ImuTrace trace;
    std::normal_distribution<double> gauss;
    for (int i = 0; i < 150; ++i) {
        ImuSample s;
        s.t = 0.005 * (i + 1);
        s.acc = Vec3(gauss(rng), gauss(rng), gauss(rng));
        s.gyr = Vec3(gauss(rng), gauss(rng), gauss(rng));
        trace.push_back(s);
    }

    const auto preds = classify_stream(m, trace);
    REQUIRE(preds.size() == 150 - w + 1);  // 51

    // Oracle: stride-1 windows through the single-window path.
    for (std::size_t k = 0; k < preds.size(); ++k) {
        Window win;
        win.samples.resize(w, kImuChannels);
        for (int i = 0; i < w; ++i) {
            const ImuSample& s = trace[k + static_cast<std::size_t>(i)];
            win.samples.row(i) << s.acc[0], s.acc[1], s.acc[2], s.gyr[0], s.gyr[1], s.gyr[2];
        }
        const Eigen::VectorXd probs = classify_window(m, win);
        REQUIRE(preds[k].probabilities.size() == probs.size());
        // bit-identical: same code path, same buffer contents
        for (int i = 0; i < probs.size(); ++i) REQUIRE(preds[k].probabilities[i] == probs[i]);
        CHECK(preds[k].t == trace[k + w - 1].t);
        int best = 0;
        probs.maxCoeff(&best);
        CHECK(preds[k].class_id == best);
    }

    // Shorter than the queue: silence.
    ImuTrace short_trace(trace.begin(), trace.begin() + 99);
    CHECK(classify_stream(m, short_trace).empty());

    StreamClassifier sc(m);
    ImuSample s0 = trace[0], s1 = trace[1];
    s1.t = s0.t;  // stalled clock
    sc.push(s0);
    CHECK_THROWS_AS(sc.push(s1), NonMonotonicTime);
}

TEST_CASE("model validation rejects inconsistent pieces", "[pipeline]") {
    PipelineModel m = passthrough_model(2, 3, 2, 10);
    m.validate();

    PipelineModel bad = m;
    bad.scaler.std[2] = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = m;
    bad.pca.components(0, 0) += 0.1;  // breaks orthonormality
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = m;
    bad.fwd.u_r.resize(2, 2);
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = m;
    bad.head_w.resize(2, 5);
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = m;
    bad.class_names.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = m;
    bad.window = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("model json roundtrip preserves predictions bit for bit", "[pipeline]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "surfbench_test_model";
    fs::create_directories(dir);
    const std::string path = (dir / "model.json").string();

    auto rng = make_rng(20, "test");
    ScalerStats scaler{Eigen::VectorXd::Zero(kImuChannels), Eigen::VectorXd::Ones(kImuChannels)};
    // A non-axis-aligned orthonormal basis exercises full-precision persistence.
    Eigen::MatrixXd noise = random_rows(400, rng);
    const PcaBasis pca = fit_pca(noise, 4);
    PipelineModel m = init_pipeline(scaler, pca, 5, {"x", "y"}, 30, 7);
    std::normal_distribution<double> gauss;
    for (Eigen::Index i = 0; i < m.head_w.size(); ++i) m.head_w.data()[i] = gauss(rng);

    save_model(m, path);
    const PipelineModel r = load_model(path);
    CHECK(r.class_names == m.class_names);
    CHECK(r.window == m.window);

    for (int trial = 0; trial < 10; ++trial) {
        Window win;
        win.samples = random_rows(30, rng);
        const Eigen::VectorXd a = classify_window(m, win);
        const Eigen::VectorXd b = classify_window(r, win);
        for (int i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
    }

    // Unusable files are rejected with the right category.
    std::ofstream(dir / "garbage.json") << "not json at all {{{";
    CHECK_THROWS_AS(load_model((dir / "garbage.json").string()), ParseError);
    nlohmann::ordered_json wrong = model_to_json(m);
    wrong["format"] = "something-else";
    std::ofstream(dir / "wrong.json") << wrong.dump();
    CHECK_THROWS_AS(load_model((dir / "wrong.json").string()), IncompatibleModel);
    wrong = model_to_json(m);
    wrong["version"] = 999;
    std::ofstream(dir / "ver.json") << wrong.dump();
    CHECK_THROWS_AS(load_model((dir / "ver.json").string()), IncompatibleModel);
    wrong = model_to_json(m);
    wrong.erase("gru_bwd");
    std::ofstream(dir / "missing.json") << wrong.dump();
    CHECK_THROWS_AS(load_model((dir / "missing.json").string()), IncompatibleModel);
    CHECK_THROWS_AS(load_model((dir / "absent.json").string()), ValidationError);
}
