#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "surfbench/calibration.hpp"

using namespace surfbench;
namespace fs = std::filesystem;

namespace {

// Synthetic gyro trace: a faint deterministic wiggle plus sharp Gaussian
// bursts at the given times — a hop signature with an exactly known schedule.
ImuTrace synth_trace(const std::vector<double>& events, double duration, double rate = 100.0) {
    ImuTrace out;
    const long n = std::lround(duration * rate);
    for (long k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / rate;
        double g = 0.002 * std::sin(2.0 * M_PI * 3.0 * t);
        for (const double e : events) {
            const double d = (t - e) / 0.02;
            g += 5.0 * std::exp(-d * d);
        }
        ImuSample s;
        s.t = t;
        s.acc = Vec3::Zero();
        s.gyr = Vec3(0.0, 0.0, g);
        out.push_back(s);
    }
    return out;
}

bool history_is_running_best(const CalibrationResult& r) {
    for (std::size_t i = 1; i < r.loss_history.size(); ++i)
        if (r.loss_history[i].second > r.loss_history[i - 1].second) return false;
    return !r.loss_history.empty() &&
           r.loss_history.back().second <= r.loss_history.front().second;
}

}  // namespace

TEST_CASE("event detector recovers a known hop schedule", "[calibration]") {
    std::vector<double> truth;
    for (int k = 0; k < 10; ++k) truth.push_back(0.5 + 1.0 * k);
    const ImuTrace trace = synth_trace(truth, 10.5);

    const std::vector<double> events = detect_jump_events(trace);
    REQUIRE(events.size() == 10);
    for (std::size_t i = 0; i < events.size(); ++i)
        CHECK(std::abs(events[i] - truth[i]) <= 0.05);
    for (std::size_t i = 1; i < events.size(); ++i) {
        CHECK(events[i] > events[i - 1]);
        CHECK(events[i] - events[i - 1] >= 0.4);
    }
}

TEST_CASE("event detector rejects quiet and short traces", "[calibration]") {
    ImuTrace flat;
    for (int k = 0; k < 500; ++k) {
        ImuSample s;
        s.t = 0.01 * k;
        s.acc = Vec3::Zero();
        s.gyr = Vec3(0.0, 0.0, 0.7);
        flat.push_back(s);
    }
    CHECK_THROWS_AS(detect_jump_events(flat), NoEventsFound);

    ImuTrace tiny(flat.begin(), flat.begin() + 50);
    CHECK_THROWS_AS(detect_jump_events(tiny), ValidationError);
}

TEST_CASE("self-comparison scores a perfect match", "[calibration]") {
    const ImuTrace trace = synth_trace({0.5, 1.5, 2.5, 3.5}, 4.2);
    const TraceComparison c = trace_discrepancy(trace, trace);
    CHECK(c.nrmse <= 1e-12);
    CHECK(c.accuracy >= 1.0 - 1e-12);
    CHECK(c.aligned_pairs == 4);
    CHECK(c.lag == 0.0);
}

TEST_CASE("a time-shifted copy aligns with the shift as lag", "[calibration]") {
    const ImuTrace ref = synth_trace({0.5, 1.5, 2.5, 3.5, 4.5}, 5.2);
    ImuTrace sim = ref;
    for (ImuSample& s : sim) s.t += 0.1;

    const TraceComparison c = trace_discrepancy(sim, ref);
    CHECK(c.lag == Catch::Approx(0.1).margin(0.02));
    CHECK(c.aligned_pairs == 5);
    CHECK(c.accuracy >= 0.999);

    // Beyond half a period there is nothing to anchor to.
    ImuTrace far = synth_trace({1.3}, 2.0);
    const ImuTrace ref2 = synth_trace({0.5, 1.5, 2.5}, 3.2);
    CHECK_THROWS_AS(trace_discrepancy(far, ref2), AlignmentFailed);
}

TEST_CASE("stiffness perturbation lowers the score and the metric is near-symmetric",
          "[calibration]") {
    LegModel m;
    JumpCycle cycle;
    const SurfaceParams planted{1.10, 3.0e4, 120.0, "planted"};
    const ImuTrace ref =
        simulate_episode(m, planted, cycle, 4.0, 100.0, NoiseSpec::off(), 5);

    const ImuTrace same = simulate_episode(m, planted, cycle, 4.0, 100.0, NoiseSpec::off(), 5);
    const TraceComparison self = trace_discrepancy(same, ref);
    CHECK(self.accuracy >= 1.0 - 1e-12);  // bit-identical inputs

    SurfaceParams stiff = planted;
    stiff.k_n *= 2.0;
    const ImuTrace other = simulate_episode(m, stiff, cycle, 4.0, 100.0, NoiseSpec::off(), 5);
    const TraceComparison ab = trace_discrepancy(other, ref);
    INFO("perturbed accuracy " << ab.accuracy);
    CHECK(ab.accuracy < self.accuracy - 1e-6);

    const TraceComparison ba = trace_discrepancy(ref, other);
    CHECK(std::abs(ab.accuracy - ba.accuracy) <= 0.01);
}

TEST_CASE("calibration that starts at the optimum stays there", "[calibration]") {
    LegModel m;
    JumpCycle cycle;
    const SurfaceParams planted{1.10, 3.0e4, 120.0, "planted"};
    const ImuTrace ref =
        simulate_episode(m, planted, cycle, 2.5, 100.0, NoiseSpec::off(), 6);

    const CalibrationResult r =
        calibrate_surface(ref, m, cycle, planted, SurfaceBounds{}, 40, 6);
    CHECK(r.evaluations <= 40);
    REQUIRE(history_is_running_best(r));
    CHECK(r.loss_history.front().second <= 1e-9);  // optimum found at the first vertex
    CHECK(1.0 - r.loss_history.back().second >= 0.99);
    CHECK(r.params.mu == Catch::Approx(planted.mu).epsilon(1e-9));
    CHECK(r.params.k_n == Catch::Approx(planted.k_n).epsilon(1e-9));
}

TEST_CASE("budget exhaustion returns the running best", "[calibration]") {
    LegModel m;
    JumpCycle cycle;
    const SurfaceParams planted{0.90, 2.0e4, 150.0, "planted"};
    const ImuTrace ref =
        simulate_episode(m, planted, cycle, 2.5, 100.0, NoiseSpec::off(), 7);

    const SurfaceParams far{0.30, 2.0e5, 30.0, "guess"};
    const CalibrationResult r = calibrate_surface(ref, m, cycle, far, SurfaceBounds{}, 20, 7);
    CHECK(r.evaluations == 20);
    CHECK_FALSE(r.converged);
    CHECK(r.loss_history.size() == 20);
    REQUIRE(history_is_running_best(r));
    const SurfaceBounds b;
    CHECK((r.params.mu >= b.mu_min && r.params.mu <= b.mu_max));
    CHECK((r.params.k_n >= b.kn_min && r.params.k_n <= b.kn_max));
    CHECK((r.params.c_n >= b.cn_min && r.params.c_n <= b.cn_max));
}

TEST_CASE("calibration inputs are validated", "[calibration]") {
    LegModel m;
    JumpCycle cycle;
    const ImuTrace ref = synth_trace({0.5, 1.5}, 2.2);
    const SurfaceParams init{0.5, 2e4, 100.0, "init"};
    CHECK_THROWS_AS(calibrate_surface(ref, m, cycle, init, SurfaceBounds{}, 19, 1),
                    ValidationError);
    SurfaceBounds bad;
    bad.kn_min = bad.kn_max;
    CHECK_THROWS_AS(calibrate_surface(ref, m, cycle, init, bad, 50, 1), ValidationError);
    ImuTrace tiny(ref.begin(), ref.begin() + 50);
    CHECK_THROWS_AS(calibrate_surface(tiny, m, cycle, init, SurfaceBounds{}, 50, 1),
                    ValidationError);
}

TEST_CASE("calibration artifacts export cleanly", "[calibration]") {
    const fs::path dir = fs::temp_directory_path() / "surfbench_test_calib";
    fs::create_directories(dir);

    CalibrationResult r;
    r.params = {0.8, 2.5e4, 90.0, "fitted"};
    r.loss_history = {{1, 0.4}, {2, 0.1}, {3, 0.05}};
    r.evaluations = 3;
    r.converged = true;
    save_calibration(r, dir / "calibration.json");

    std::ifstream in(dir / "calibration.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("params").at("k_n").get<double>() == 2.5e4);
    CHECK(j.at("converged").get<bool>());
    CHECK(j.at("final_accuracy").get<double>() == Catch::Approx(0.95));
    CHECK(j.at("loss_history").size() == 3);

    const ImuTrace ref = synth_trace({0.5, 1.5}, 2.2);
    save_alignment_csv(ref, ref, 0.0, dir / "alignment.csv");
    std::ifstream csv(dir / "alignment.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "t,ref_gyr_mag,sim_gyr_mag");
    long rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 220);
}
