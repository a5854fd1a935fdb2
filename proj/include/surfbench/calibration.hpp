#pragma once
// Surface parameter recovery: fit (mu, k_n, c_n) so the simulated foot
// angular-velocity trace matches a reference trace. The match score is
// accuracy = 1 - NRMSE of |gyr| over jump-event windows, which is this
// project's reading of "percent agreement between sim and reference".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include <surfbench/dynamics.hpp>
#include <surfbench/errors.hpp>
#include <surfbench/pipeline.hpp>

namespace surfbench {

struct TraceComparison {
    double nrmse = 0.0;
    double accuracy = 0.0;   // 1 - nrmse
    int aligned_pairs = 0;   // matched jump events
    double lag = 0.0;        // s added to reference time to hit the sim clock
};

struct CalibrationResult {
    SurfaceParams params;
    std::vector<std::pair<int, double>> loss_history;  // (evaluation, best-so-far)
    int evaluations = 0;
    bool converged = false;
};

// Box bounds for the calibrated parameters; spans several decades, hence the
// log-space optimizer below.
struct SurfaceBounds {
    double mu_min = 0.05, mu_max = 2.0;
    double kn_min = 1e3, kn_max = 1e6;
    double cn_min = 1.0, cn_max = 1e3;

    void validate() const {
        if (!(mu_min > 0.0 && mu_min < mu_max) || !(kn_min > 0.0 && kn_min < kn_max) ||
            !(cn_min > 0.0 && cn_min < cn_max))
            throw ValidationError("surface bounds must satisfy 0 < lo < hi");
    }
};

namespace detail {

inline double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> gyr_magnitude(const ImuTrace& trace) {
    std::vector<double> g;
    g.reserve(trace.size());
    for (const ImuSample& s : trace) g.push_back(s.gyr.norm());
    return g;
}

// Linear interpolation of a sampled series; quietly reports out-of-domain.
inline bool interp(const ImuTrace& trace, const std::vector<double>& values, double t,
                   double& out) {
    if (trace.empty() || t < trace.front().t || t > trace.back().t) return false;
    std::size_t lo = 0, hi = trace.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (trace[mid].t <= t ? lo : hi) = mid;
    }
    const double t0 = trace[lo].t, t1 = trace[hi].t;
    const double u = t1 > t0 ? (t - t0) / (t1 - t0) : 0.0;
    out = (1.0 - u) * values[lo] + u * values[hi];
    return true;
}

}  // namespace detail

// Touchdown timestamps: local maxima of |gyr| above median + 4*MAD, kept
// loudest-first under a 0.4 s refractory window, reported in time order.
inline std::vector<double> detect_jump_events(const ImuTrace& trace) {
    if (trace.size() < static_cast<std::size_t>(kDefaultWindow))
        throw ValidationError("event detection needs at least one window of samples");
    const std::vector<double> g = detail::gyr_magnitude(trace);

    const double med = detail::median(g);
    std::vector<double> dev;
    dev.reserve(g.size());
    for (double x : g) dev.push_back(std::abs(x - med));
    const double mad = detail::median(dev);
    const double threshold = med + 4.0 * mad;

    std::vector<std::size_t> peaks;
    for (std::size_t i = 1; i + 1 < g.size(); ++i)
        if (g[i] > threshold && g[i] >= g[i - 1] && g[i] >= g[i + 1]) peaks.push_back(i);
    std::sort(peaks.begin(), peaks.end(),
              [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });

    constexpr double kRefractory = 0.4;  // s
    std::vector<double> events;
    for (const std::size_t i : peaks) {
        const double t = trace[i].t;
        bool clear = true;
        for (const double e : events) clear = clear && std::abs(t - e) >= kRefractory;
        if (clear) events.push_back(t);
    }
    if (events.empty()) throw NoEventsFound("no jump events above the adaptive threshold");
    std::sort(events.begin(), events.end());
    return events;
}

// Aligns sim to ref by jump events and scores the |gyr| agreement over the
// union of +-0.3 s windows around matched reference events, normalized by the
// reference's peak-to-peak |gyr|.
inline TraceComparison trace_discrepancy(const ImuTrace& sim, const ImuTrace& ref) {
    const std::vector<double> ev_sim = detect_jump_events(sim);
    const std::vector<double> ev_ref = detect_jump_events(ref);

    std::vector<double> gaps;
    for (std::size_t i = 1; i < ev_ref.size(); ++i) gaps.push_back(ev_ref[i] - ev_ref[i - 1]);
    const double period = gaps.empty() ? 0.8 : detail::median(gaps);
    const double pair_tol = 0.25 * period;

    // Candidate lags anchor the first reference event to some sim event; the
    // winner pairs the most events (ties: smallest |lag|).
    int best_pairs = 0;
    double best_lag = 0.0;
    for (const double es : ev_sim) {
        const double lag = es - ev_ref.front();
        if (std::abs(lag) > 0.5 * period) continue;
        int pairs = 0;
        for (const double er : ev_ref) {
            for (const double e2 : ev_sim)
                if (std::abs(e2 - (er + lag)) <= pair_tol) {
                    ++pairs;
                    break;
                }
        }
        if (pairs > best_pairs ||
            (pairs == best_pairs && best_pairs > 0 && std::abs(lag) < std::abs(best_lag))) {
            best_pairs = pairs;
            best_lag = lag;
        }
    }
    if (best_pairs < 1)
        throw AlignmentFailed("no sim event lies within half a period of the reference");

    const std::vector<double> g_sim = detail::gyr_magnitude(sim);
    const std::vector<double> g_ref = detail::gyr_magnitude(ref);
    const double ref_lo = *std::min_element(g_ref.begin(), g_ref.end());
    const double ref_hi = *std::max_element(g_ref.begin(), g_ref.end());
    if (!(ref_hi > ref_lo))
        throw AlignmentFailed("reference |gyr| has zero peak-to-peak range");

    // Matched reference events define the scoring windows.
    std::vector<double> centers;
    for (const double er : ev_ref)
        for (const double es : ev_sim)
            if (std::abs(es - (er + best_lag)) <= pair_tol) {
                centers.push_back(er);
                break;
            }

    constexpr double kHalfWindow = 0.3;  // s
    double sq_sum = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double t = ref[i].t;
        bool in_window = false;
        for (const double c : centers)
            if (std::abs(t - c) <= kHalfWindow) {
                in_window = true;
                break;
            }
        if (!in_window) continue;
        double sim_val = 0.0;
        if (!detail::interp(sim, g_sim, t + best_lag, sim_val)) continue;
        const double d = sim_val - g_ref[i];
        sq_sum += d * d;
        ++count;
    }
    if (count == 0) throw AlignmentFailed("aligned traces do not overlap in time");

    TraceComparison out;
    out.nrmse = std::sqrt(sq_sum / static_cast<double>(count)) / (ref_hi - ref_lo);
    out.accuracy = 1.0 - out.nrmse;
    out.aligned_pairs = static_cast<int>(centers.size());
    out.lag = best_lag;
    return out;
}

// Noise-free simulation shaped like the reference trace (same duration and
// sample rate) for calibration comparisons.
inline ImuTrace simulate_match(const LegModel& m, const JumpCycle& cycle,
                               const SurfaceParams& params, const ImuTrace& ref,
                               std::uint64_t seed, double dt = kDefaultSimDt) {
    if (ref.size() < 2) throw ValidationError("reference trace too short to calibrate against");
    std::vector<double> dts;
    for (std::size_t i = 1; i < ref.size(); ++i) dts.push_back(ref[i].t - ref[i - 1].t);
    const double rate = 1.0 / detail::median(dts);
    return simulate_episode(m, params, cycle, ref.back().t, rate, NoiseSpec::off(), seed, dt);
}

// Nelder-Mead over theta = (ln mu, ln k_n, ln c_n) with box projection.
// Derivative-free because contact makes the objective non-smooth. Budget
// exhaustion is a normal outcome: best-so-far comes back with
// converged=false.
inline CalibrationResult calibrate_surface(const ImuTrace& ref, const LegModel& model,
                                           const JumpCycle& cycle, const SurfaceParams& init,
                                           const SurfaceBounds& bounds, int budget,
                                           std::uint64_t seed) {
    bounds.validate();
    init.validate();
    model.validate();
    cycle.validate();
    if (budget < 20) throw ValidationError("calibration budget must be at least 20");
    if (ref.size() < static_cast<std::size_t>(kDefaultWindow))
        throw ValidationError("reference trace needs at least one window of samples");

    using Theta = Eigen::Vector3d;
    const Theta lo(std::log(bounds.mu_min), std::log(bounds.kn_min), std::log(bounds.cn_min));
    const Theta hi(std::log(bounds.mu_max), std::log(bounds.kn_max), std::log(bounds.cn_max));
    auto project = [&](const Theta& th) { return th.cwiseMax(lo).cwiseMin(hi).eval(); };
    auto to_params = [&](const Theta& th) {
        return SurfaceParams{std::exp(th[0]), std::exp(th[1]), std::exp(th[2]), init.name};
    };

    CalibrationResult result;
    result.params = init;
    int evals = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    Theta best_theta = project(Theta(std::log(init.mu), std::log(init.k_n), std::log(init.c_n)));

    constexpr double kEventPenalty = 10.0;  // candidate produced no usable hops
    auto objective = [&](const Theta& th) {
        const ImuTrace sim = simulate_match(model, cycle, to_params(th), ref, seed);
        ++evals;
        double loss;
        try {
            loss = trace_discrepancy(sim, ref).nrmse;
        } catch (const NoEventsFound&) {
            loss = kEventPenalty;
        } catch (const AlignmentFailed&) {
            loss = kEventPenalty;
        }
        if (loss < best_loss) {
            best_loss = loss;
            best_theta = th;
        }
        result.loss_history.emplace_back(evals, best_loss);
        return loss;
    };

    // Initial simplex: the (projected) init plus one 0.4 log-step per axis.
    std::vector<Theta> v{best_theta};
    for (int i = 0; i < 3; ++i) {
        Theta t = v[0];
        t[i] += t[i] + 0.4 <= hi[i] ? 0.4 : -0.4;
        v.push_back(project(t));
    }
    std::vector<double> f;
    for (const Theta& t : v) {
        if (evals >= budget) break;
        f.push_back(objective(t));
    }

    constexpr double kAlpha = 1.0, kGamma = 2.0, kRho = 0.5, kSigma = 0.5;
    constexpr double kDiameterTol = 1e-3;
    while (f.size() == v.size() && evals < budget) {
        std::vector<int> order{0, 1, 2, 3};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return f[a] < f[b]; });
        std::vector<Theta> vs;
        std::vector<double> fs;
        for (int i : order) {
            vs.push_back(v[i]);
            fs.push_back(f[i]);
        }
        v = vs;
        f = fs;

        double diameter = 0.0;
        for (int i = 1; i < 4; ++i)
            diameter = std::max(diameter, (v[i] - v[0]).cwiseAbs().maxCoeff());
        if (diameter < kDiameterTol) {
            result.converged = true;
            break;
        }

        const Theta centroid = (v[0] + v[1] + v[2]) / 3.0;
        const Theta xr = project(centroid + kAlpha * (centroid - v[3]));
        const double fr = objective(xr);
        if (evals >= budget) break;

        if (fr < f[0]) {
            const Theta xe = project(centroid + kGamma * (xr - centroid));
            const double fe = objective(xe);
            v[3] = fe < fr ? xe : xr;
            f[3] = std::min(fe, fr);
        } else if (fr < f[2]) {
            v[3] = xr;
            f[3] = fr;
        } else {
            const bool outside = fr < f[3];
            const Theta xc =
                project(centroid + kRho * ((outside ? xr : v[3]) - centroid));
            const double fc = objective(xc);
            if (fc < (outside ? fr : f[3])) {
                v[3] = xc;
                f[3] = fc;
            } else {
                for (int i = 1; i < 4; ++i) {
                    if (evals >= budget) break;
                    v[i] = project(v[0] + kSigma * (v[i] - v[0]));
                    f[i] = objective(v[i]);
                }
            }
        }
    }

    result.params = to_params(best_theta);
    result.evaluations = evals;
    if (result.loss_history.empty())
        throw ValidationError("calibration budget allowed no evaluations");
    return result;
}

inline nlohmann::ordered_json calibration_to_json(const CalibrationResult& r) {
    nlohmann::ordered_json j;
    j["params"] = {{"name", r.params.name},
                   {"mu", r.params.mu},
                   {"k_n", r.params.k_n},
                   {"c_n", r.params.c_n}};
    j["evaluations"] = r.evaluations;
    j["converged"] = r.converged;
    j["final_loss"] = r.loss_history.back().second;
    j["final_accuracy"] = 1.0 - r.loss_history.back().second;
    auto hist = nlohmann::ordered_json::array();
    for (const auto& [it, loss] : r.loss_history)
        hist.push_back({{"evaluation", it}, {"loss", loss}});
    j["loss_history"] = std::move(hist);
    return j;
}

inline void save_calibration(const CalibrationResult& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
    out << calibration_to_json(r).dump(2) << '\n';
    if (!out) throw RuntimeError("write failed for " + path.string());
}

// Side-by-side |gyr| of the reference and the lag-aligned simulation, one row
// per reference sample inside the overlap; feeds external plotting.
inline void save_alignment_csv(const ImuTrace& ref, const ImuTrace& sim, double lag,
                               const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
    out << "t,ref_gyr_mag,sim_gyr_mag\n";
    const std::vector<double> g_sim = detail::gyr_magnitude(sim);
    const std::vector<double> g_ref = detail::gyr_magnitude(ref);
    char buf[160];
    for (std::size_t i = 0; i < ref.size(); ++i) {
        double sim_val = 0.0;
        if (!detail::interp(sim, g_sim, ref[i].t + lag, sim_val)) continue;
        std::snprintf(buf, sizeof(buf), "%.12e,%.12e,%.12e\n", ref[i].t, g_ref[i], sim_val);
        out << buf;
    }
    if (!out) throw RuntimeError("write failed for " + path.string());
}

}  // namespace surfbench
