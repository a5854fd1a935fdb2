// Command implementations behind the CLI. Each command validates all of its
// inputs before touching the output directory (no partial artifacts on bad
// input), writes files with fixed names under --out, and prints a short
// human-readable report. All randomness flows from the single run seed.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "surfbench/calibration.hpp"
#include "surfbench/config.hpp"
#include "surfbench/model_io.hpp"

namespace surfbench {

namespace detail {

// Stacks every row of every window into one (sum W_i) x 6 matrix, the input
// the scaler/PCA fitting expects.
inline Eigen::MatrixXd stack_window_rows(const std::vector<Window>& windows) {
    Eigen::Index total = 0;
    for (const Window& w : windows) total += w.samples.rows();
    Eigen::MatrixXd rows(total, 6);
    Eigen::Index at = 0;
    for (const Window& w : windows) {
        rows.middleRows(at, w.samples.rows()) = w.samples;
        at += w.samples.rows();
    }
    return rows;
}

inline std::string fmt5(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.5f", v);
    return buf;
}

inline void print_metric_table(const EvalReport& rep, const std::vector<std::string>& names,
                               std::ostream& log) {
    std::size_t width = 10;
    for (const std::string& n : names) width = std::max(width, n.size() + 2);
    log << std::left << std::setw(static_cast<int>(width)) << "" << std::right
        << std::setw(11) << "Precision" << std::setw(11) << "Recall" << std::setw(11)
        << "F1 score" << "\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
        log << std::left << std::setw(static_cast<int>(width)) << names[i] << std::right
            << std::setw(11) << fmt5(rep.precision[static_cast<int>(i)]) << std::setw(11)
            << fmt5(rep.recall[static_cast<int>(i)]) << std::setw(11)
            << fmt5(rep.f1[static_cast<int>(i)]) << "\n";
    }
    log << "mean accuracy: " << fmt5(rep.mean_accuracy) << "\n";
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
    out << body;
    if (!out) throw RuntimeError("write failed for " + path.string());
}

}  // namespace detail

// Simulates the configured corpus and writes episode CSVs plus manifest.json
// into out_dir. Returns the manifest path.
inline std::filesystem::path cmd_gen(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                     std::ostream& log) {
    cfg.validate();
    if (const auto warn = cfg.cycle.warning()) log << "warning: " << *warn << "\n";

    const Dataset ds = generate_corpus(cfg.presets, cfg.corpus_options(), cfg.seed);

    nlohmann::ordered_json gen;
    gen["seed"] = cfg.seed;
    gen["episodes_per_class"] = cfg.episodes_per_class;
    gen["duration"] = cfg.episode_duration;
    gen["imu_rate"] = cfg.imu_rate;
    gen["period_min"] = cfg.period_min;
    gen["period_max"] = cfg.period_max;
    gen["sim_dt"] = cfg.sim_dt;

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path manifest = save_dataset(ds, out_dir, gen);

    std::vector<long> counts(ds.class_names.size(), 0);
    for (const Episode& e : ds.episodes) ++counts[static_cast<std::size_t>(e.label)];
    for (std::size_t c = 0; c < ds.class_names.size(); ++c)
        log << ds.class_names[c] << ": " << counts[c] << " episodes\n";
    log << "wrote " << manifest.string() << "\n";
    return manifest;
}

// Splits the corpus, fits scaler+PCA on the training half only, trains the
// classifier, and writes model.json. Prints the per-class metric table for
// the held-out episodes. Returns the model path.
inline std::filesystem::path cmd_train(const RunConfig& cfg,
                                       const std::filesystem::path& manifest,
                                       const std::filesystem::path& out_dir,
                                       std::ostream& log) {
    cfg.validate();
    const Dataset ds = load_dataset(manifest);
    if (ds.class_names.size() < 2)
        throw ValidationError("training needs at least 2 classes in the dataset");

    const auto [train_set, test_set] = split(ds, cfg.test_fraction, cfg.seed);
    const std::vector<Window> train_windows =
        window_dataset(train_set, cfg.window, cfg.train_stride);
    const std::vector<Window> test_windows =
        window_dataset(test_set, cfg.window, cfg.train_stride);
    if (train_windows.empty())
        throw ValidationError("no training windows; episodes shorter than the window size");
    log << "windows: " << train_windows.size() << " train, " << test_windows.size()
        << " held-out\n";

    const ScalerStats scaler = fit_scaler(train_windows);
    Eigen::MatrixXd rows = detail::stack_window_rows(train_windows);
    rows.rowwise() -= scaler.mean.transpose();
    rows.array().rowwise() /= scaler.std.transpose().array();
    const PcaBasis pca = cfg.pca < 1.0
                             ? fit_pca_fraction(rows, cfg.pca)
                             : fit_pca(rows, static_cast<int>(std::lround(cfg.pca)));
    rows.resize(0, 6);
    log << "pca: " << pca.components.rows() << " components\n";

    PipelineModel model =
        init_pipeline(scaler, pca, cfg.hidden, ds.class_names, cfg.window, cfg.seed);
    TrainOptions opt = cfg.train;
    opt.seed = cfg.seed;
    const TrainResult result = train(std::move(model), train_windows, test_windows, opt);
    for (const EpochStats& st : result.history)
        log << "epoch " << st.epoch << ": train loss " << detail::fmt5(st.train_loss)
            << ", held-out accuracy " << detail::fmt5(st.val_accuracy) << "\n";

    const EvalReport rep = evaluate(result.model, test_windows);
    detail::print_metric_table(rep, ds.class_names, log);

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path model_path = out_dir / "model.json";
    save_model(result.model, model_path.string());
    log << "wrote " << model_path.string() << "\n";
    return model_path;
}

// Evaluates a saved model against a labeled dataset; writes confusion.csv and
// metrics.csv and prints the confusion matrix.
inline EvalReport cmd_eval(const std::filesystem::path& model_path,
                           const std::filesystem::path& manifest, int stride,
                           const std::filesystem::path& out_dir, std::ostream& log) {
    const PipelineModel model = load_model(model_path.string());
    const Dataset ds = load_dataset(manifest);
    if (ds.class_names != model.class_names)
        throw IncompatibleModel("dataset classes do not match the model's class list");

    const std::vector<Window> windows = window_dataset(ds, model.window, stride);
    if (windows.empty()) throw ValidationError("dataset yields no windows at this stride");
    const EvalReport rep = evaluate(model, windows);

    const int k = model.classes();
    std::string confusion = "class";
    for (const std::string& n : model.class_names) confusion += "," + n;
    confusion += "\n";
    for (int i = 0; i < k; ++i) {
        confusion += model.class_names[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j) confusion += "," + std::to_string(rep.confusion(i, j));
        confusion += "\n";
    }
    std::string metrics = "class,precision,recall,f1\n";
    for (int i = 0; i < k; ++i) {
        metrics += model.class_names[static_cast<std::size_t>(i)];
        char buf[64];
        std::snprintf(buf, sizeof buf, ",%.12f,%.12f,%.12f\n", rep.precision[i], rep.recall[i],
                      rep.f1[i]);
        metrics += buf;
    }
    {
        char buf[64];
        std::snprintf(buf, sizeof buf, "mean_accuracy,%.12f,,\n", rep.mean_accuracy);
        metrics += buf;
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "confusion.csv", confusion);
    detail::write_text_file(out_dir / "metrics.csv", metrics);

    log << "confusion matrix (rows = true class, columns = predicted):\n";
    std::size_t width = 6;
    for (const std::string& n : model.class_names) width = std::max(width, n.size() + 2);
    log << std::left << std::setw(static_cast<int>(width)) << "";
    for (const std::string& n : model.class_names)
        log << std::right << std::setw(static_cast<int>(width)) << n;
    log << "\n";
    for (int i = 0; i < k; ++i) {
        log << std::left << std::setw(static_cast<int>(width))
            << model.class_names[static_cast<std::size_t>(i)];
        for (int j = 0; j < k; ++j)
            log << std::right << std::setw(static_cast<int>(width)) << rep.confusion(i, j);
        log << "\n";
    }
    detail::print_metric_table(rep, model.class_names, log);
    return rep;
}

// Runs the classifier over one recording and writes per-sample predictions
// (one row per sample once the first full window has arrived). `streaming`
// picks the incremental queue implementation; results are identical to the
// batch path by construction. Returns the number of prediction rows.
inline long cmd_classify(const std::filesystem::path& model_path,
                         const std::filesystem::path& csv_path, bool streaming,
                         const std::filesystem::path& out_dir, std::ostream& log) {
    const PipelineModel model = load_model(model_path.string());
    const Episode episode = load_csv(csv_path);
    const long n = static_cast<long>(episode.trace.size());

    std::vector<StreamPrediction> preds;
    if (streaming) {
        preds = classify_stream(model, episode.trace);
    } else if (n >= model.window) {
        for (long start = 0; start + model.window <= n; ++start) {
            Window w;
            w.samples.resize(model.window, 6);
            for (int r = 0; r < model.window; ++r) {
                const ImuSample& s = episode.trace[static_cast<std::size_t>(start + r)];
                w.samples.row(r) << s.acc.transpose(), s.gyr.transpose();
            }
            StreamPrediction p;
            p.t = episode.trace[static_cast<std::size_t>(start + model.window - 1)].t;
            p.probabilities = classify_window(model, w);
            p.probabilities.maxCoeff(&p.class_id);
            preds.push_back(std::move(p));
        }
    }

    std::string body = "t,class_id,class_name";
    for (const std::string& name : model.class_names)
        body += ",p_" + detail::sanitize_name(name);
    body += "\n";
    for (const StreamPrediction& p : preds) {
        detail::append_float(body, p.t);
        body += "," + std::to_string(p.class_id) + "," +
                model.class_names[static_cast<std::size_t>(p.class_id)];
        for (Eigen::Index i = 0; i < p.probabilities.size(); ++i) {
            body += ',';
            detail::append_float(body, p.probabilities[i]);
        }
        body += "\n";
    }

    std::filesystem::create_directories(out_dir);
    detail::write_text_file(out_dir / "predictions.csv", body);

    std::vector<long> counts(model.class_names.size(), 0);
    for (const StreamPrediction& p : preds) ++counts[static_cast<std::size_t>(p.class_id)];
    log << n << " samples -> " << preds.size() << " predictions\n";
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0) log << model.class_names[c] << ": " << counts[c] << "\n";
    return static_cast<long>(preds.size());
}

// Fits surface parameters to a reference recording and writes
// calibration.json plus the aligned-trace CSV.
inline CalibrationResult cmd_calibrate(const RunConfig& cfg,
                                       const std::filesystem::path& ref_csv, int budget,
                                       const std::filesystem::path& out_dir,
                                       std::ostream& log) {
    cfg.validate();
    if (budget < 20) throw ValidationError("calibration budget must be >= 20");
    const Episode ref = load_csv(ref_csv);

    const CalibrationResult result = calibrate_surface(
        ref.trace, cfg.leg, cfg.cycle, cfg.calib_init, cfg.calib_bounds, budget, cfg.seed);
    const ImuTrace sim =
        simulate_match(cfg.leg, cfg.cycle, result.params, ref.trace, cfg.seed, cfg.sim_dt);
    const TraceComparison cmp = trace_discrepancy(sim, ref.trace);

    std::filesystem::create_directories(out_dir);
    save_calibration(result, out_dir / "calibration.json");
    save_alignment_csv(ref.trace, sim, cmp.lag, out_dir / "alignment.csv");

    log << "            initial      fitted\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "mu   %12.4f %12.4f\n", cfg.calib_init.mu, result.params.mu);
    log << buf;
    std::snprintf(buf, sizeof buf, "k_n  %12.1f %12.1f\n", cfg.calib_init.k_n,
                  result.params.k_n);
    log << buf;
    std::snprintf(buf, sizeof buf, "c_n  %12.2f %12.2f\n", cfg.calib_init.c_n,
                  result.params.c_n);
    log << buf;
    log << "evaluations: " << result.evaluations
        << (result.converged ? " (converged)" : " (budget exhausted)") << "\n";
    log << "trace accuracy: " << detail::fmt5(cmp.accuracy) << " (lag "
        << detail::fmt5(cmp.lag) << " s, " << cmp.aligned_pairs << " aligned jumps)\n";
    return result;
}

// Prints the effective configuration, and a summary of a JSON artifact
// (dataset manifest, model, or calibration result) when one is given.
inline void cmd_inspect(const RunConfig& cfg, const std::optional<std::filesystem::path>& path,
                        std::ostream& log) {
    if (!path) {
        log << config_summary(cfg);
        return;
    }
    std::ifstream in(*path);
    if (!in) throw ValidationError("cannot open " + path->string());
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("not valid JSON: ") + e.what());
    }

    const std::string format = j.value("format", "");
    if (format == kDatasetFormat) {
        const Dataset ds = load_dataset(*path);
        log << "dataset: " << ds.episodes.size() << " episodes, "
            << ds.class_names.size() << " classes\n";
        std::vector<long> counts(ds.class_names.size(), 0);
        std::vector<std::size_t> lengths;
        for (const Episode& e : ds.episodes) {
            ++counts[static_cast<std::size_t>(e.label)];
            lengths.push_back(e.trace.size());
        }
        for (std::size_t c = 0; c < counts.size(); ++c)
            log << "  " << ds.class_names[c] << ": " << counts[c] << " episodes\n";
        const auto [lo, hi] = std::minmax_element(lengths.begin(), lengths.end());
        log << "  samples per episode: " << *lo << " to " << *hi << "\n";
    } else if (format == kModelFormat) {
        const PipelineModel m = load_model(path->string());
        log << "model: window " << m.window << ", " << m.pca.components.rows()
            << " pca components, hidden " << m.fwd.b_z.size() << " per direction, classes:";
        for (const std::string& n : m.class_names) log << " " << n;
        log << "\n";
    } else if (j.contains("params") && j.contains("loss_history")) {
        log << "calibration: mu " << j["params"].value("mu", 0.0) << ", k_n "
            << j["params"].value("k_n", 0.0) << ", c_n " << j["params"].value("c_n", 0.0)
            << "\n  evaluations " << j.value("evaluations", 0) << ", accuracy "
            << j.value("final_accuracy", 0.0)
            << (j.value("converged", false) ? " (converged)" : "") << "\n";
    } else {
        throw ValidationError("unrecognized artifact " + path->string());
    }
}

// Maps library errors to the documented process exit codes.
template <typename Fn>
int run_with_exit_codes(std::ostream& err, Fn&& fn) {
    try {
        fn();
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::validation ? 2 : 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace surfbench
