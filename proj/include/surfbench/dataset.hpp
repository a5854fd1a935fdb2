#pragma once
// Episode containers, CSV persistence, windowing, stratified splits and
// synthetic corpus generation.
//
// The CSV layout (`t,ax,ay,az,gx,gy,gz[,label]`) is the exchange format for
// every tool in this project; real sensor logs in the same layout import
// through the identical path as simulated traces.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include <surfbench/dynamics.hpp>
#include <surfbench/errors.hpp>
#include <surfbench/pipeline.hpp>
#include <surfbench/rng.hpp>

namespace surfbench {

enum class EpisodeSource { simulated, imported };

struct EpisodeMeta {
    std::string surface;        // preset / class name
    double cycle_period = 0.0;  // s; 0 when unknown
    std::uint64_t seed = 0;     // simulation seed; 0 for imports
    std::string origin;         // source file for imports, empty otherwise
};

struct Episode {
    ImuTrace trace;
    int label = -1;  // class id, -1 = unlabeled
    EpisodeSource source = EpisodeSource::simulated;
    EpisodeMeta meta;
};

struct Dataset {
    std::vector<Episode> episodes;
    std::vector<std::string> class_names;

    void validate() const {
        if (class_names.empty()) throw ValidationError("dataset has no class names");
        const int k = static_cast<int>(class_names.size());
        for (std::size_t i = 0; i < episodes.size(); ++i) {
            const Episode& e = episodes[i];
            if (e.label < 0 || e.label >= k) {
                std::ostringstream os;
                os << "episode " << i << " label " << e.label << " outside [0," << k << ")";
                throw ValidationError(os.str());
            }
            for (std::size_t j = 1; j < e.trace.size(); ++j)
                if (!(e.trace[j].t > e.trace[j - 1].t))
                    throw NonMonotonicTime("episode " + std::to_string(i) +
                                           " has non-increasing timestamps");
        }
    }
};

namespace detail {

inline void append_float(std::string& row, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12e", v);  // 13 significant digits
    row += buf;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline double parse_double(std::string_view field, const std::string& where) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || p != field.data() + field.size())
        throw ParseError(where + ": bad number '" + std::string(field) + "'");
    return v;
}

inline int parse_label(std::string_view field, const std::string& where) {
    int v = 0;
    const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || p != field.data() + field.size() || v < 0)
        throw ParseError(where + ": bad label '" + std::string(field) + "'");
    return v;
}

}  // namespace detail

// Writes one episode; the label column is emitted only for labeled episodes.
inline void save_csv(const Episode& e, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
    const bool labeled = e.label >= 0;
    out << (labeled ? "t,ax,ay,az,gx,gy,gz,label\n" : "t,ax,ay,az,gx,gy,gz\n");
    std::string row;
    for (const ImuSample& s : e.trace) {
        row.clear();
        detail::append_float(row, s.t);
        for (int i = 0; i < 3; ++i) {
            row += ',';
            detail::append_float(row, s.acc[i]);
        }
        for (int i = 0; i < 3; ++i) {
            row += ',';
            detail::append_float(row, s.gyr[i]);
        }
        if (labeled) {
            row += ',';
            row += std::to_string(e.label);
        }
        row += '\n';
        out << row;
    }
    if (!out) throw RuntimeError("write failed for " + path.string());
}

// Parses one episode. A `label` column, when present, must be constant; the
// optional sidecar label covers files without one (and must agree otherwise).
inline Episode load_csv(const std::filesystem::path& path,
                        std::optional<int> sidecar_label = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());

    auto where = [&](long line) { return path.string() + ":" + std::to_string(line); };

    std::string line;
    long lineno = 0;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    bool has_label = false;
    if (line == "t,ax,ay,az,gx,gy,gz,label")
        has_label = true;
    else if (line != "t,ax,ay,az,gx,gy,gz")
        throw ParseError(where(lineno) + ": unexpected header '" + line + "'");

    Episode e;
    e.source = EpisodeSource::imported;
    e.meta.origin = path.string();
    const std::size_t ncols = has_label ? 8 : 7;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            if (in.eof()) break;
            throw ParseError(where(lineno) + ": blank line");
        }
        const auto fields = detail::split_fields(line);
        if (fields.size() != ncols) {
            std::ostringstream os;
            os << where(lineno) << ": expected " << ncols << " columns, got " << fields.size();
            throw ParseError(os.str());
        }
        ImuSample s;
        s.t = detail::parse_double(fields[0], where(lineno));
        for (int i = 0; i < 3; ++i) s.acc[i] = detail::parse_double(fields[1 + i], where(lineno));
        for (int i = 0; i < 3; ++i) s.gyr[i] = detail::parse_double(fields[4 + i], where(lineno));
        if (!e.trace.empty() && !(s.t > e.trace.back().t))
            throw NonMonotonicTime(where(lineno) + ": timestamps must strictly increase");
        if (has_label) {
            const int label = detail::parse_label(fields[7], where(lineno));
            if (e.label >= 0 && label != e.label)
                throw ParseError(where(lineno) + ": label changes within the episode");
            e.label = label;
        }
        e.trace.push_back(s);
    }
    if (e.trace.empty()) throw ParseError(path.string() + ": no data rows");
    if (sidecar_label) {
        if (e.label >= 0 && *sidecar_label != e.label)
            throw ParseError(path.string() + ": label column disagrees with the given label");
        e.label = *sidecar_label;
    }
    return e;
}

// Strided fixed-length windows per episode; windows never span episodes and
// inherit the episode label plus a provenance tag. Episodes shorter than the
// window contribute nothing.
inline std::vector<Window> window_dataset(const Dataset& ds, int w, int stride) {
    if (w < 2) throw ValidationError("window length must be at least 2");
    if (stride < 1) throw ValidationError("window stride must be at least 1");
    std::vector<Window> out;
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        const ImuTrace& tr = ds.episodes[e].trace;
        const auto n = static_cast<long>(tr.size());
        for (long start = 0; start + w <= n; start += stride) {
            Window win;
            win.samples.resize(w, kImuChannels);
            for (int i = 0; i < w; ++i) {
                const ImuSample& s = tr[static_cast<std::size_t>(start + i)];
                win.samples.row(i) << s.acc[0], s.acc[1], s.acc[2], s.gyr[0], s.gyr[1], s.gyr[2];
            }
            win.label = ds.episodes[e].label;
            win.episode = static_cast<int>(e);
            out.push_back(std::move(win));
        }
    }
    return out;
}

// Stratified train/test partition at episode granularity. Per class the
// episode order is shuffled with a class-specific stream and the first
// round(fraction * n) episodes (at least one, never all) go to the test set;
// both halves keep the original episode order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction,
                                         std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ValidationError("test fraction must lie in (0,1)");
    ds.validate();
    const int k = static_cast<int>(ds.class_names.size());
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < ds.episodes.size(); ++i)
        by_class[static_cast<std::size_t>(ds.episodes[i].label)].push_back(i);

    std::vector<bool> in_test(ds.episodes.size(), false);
    for (int c = 0; c < k; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        if (idx.size() < 2)
            throw InsufficientEpisodes("class '" + ds.class_names[static_cast<std::size_t>(c)] +
                                       "' needs at least 2 episodes to split");
        auto rng = make_rng(seed, "split", static_cast<std::uint64_t>(c));
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n = static_cast<long>(idx.size());
        const long n_test =
            std::clamp(std::lround(test_fraction * static_cast<double>(n)), 1L, n - 1);
        for (long i = 0; i < n_test; ++i) in_test[idx[static_cast<std::size_t>(i)]] = true;
    }

    Dataset train{{}, ds.class_names}, test{{}, ds.class_names};
    for (std::size_t i = 0; i < ds.episodes.size(); ++i)
        (in_test[i] ? test : train).episodes.push_back(ds.episodes[i]);
    return {std::move(train), std::move(test)};
}

struct CorpusOptions {
    int episodes_per_class = 40;
    double duration = 10.0;  // s per episode
    double imu_rate = 200.0;
    double period_min = 0.8, period_max = 2.0;  // jump period jitter range, s
    double sim_dt = kDefaultSimDt;
    LegModel leg;
    JumpCycle cycle;  // template; the period is redrawn per episode
    NoiseSpec noise;
};

// Simulates episodes_per_class hops per surface preset with uniformly drawn
// jump periods so no class is identifiable by cadence alone. Labels follow
// preset order. Period and episode seeds come from independent substreams of
// the corpus seed, so the i-th episode is reproducible in isolation.
inline Dataset generate_corpus(const std::vector<SurfaceParams>& presets,
                               const CorpusOptions& opt, std::uint64_t seed) {
    if (presets.empty()) throw ValidationError("corpus needs at least one surface preset");
    if (opt.episodes_per_class < 1)
        throw ValidationError("episodes_per_class must be at least 1");
    if (!(opt.period_min >= 0.1 && opt.period_max > opt.period_min))
        throw ValidationError("corpus period range is invalid");

    Dataset ds;
    for (const SurfaceParams& p : presets) {
        p.validate();
        ds.class_names.push_back(p.name);
    }
    for (std::size_t c = 0; c < presets.size(); ++c) {
        for (int e = 0; e < opt.episodes_per_class; ++e) {
            const auto idx = static_cast<std::uint64_t>(c) *
                                 static_cast<std::uint64_t>(opt.episodes_per_class) +
                             static_cast<std::uint64_t>(e);
            auto period_rng = make_rng(seed, "cycle-period", idx);
            JumpCycle cycle = opt.cycle;
            cycle.period = std::uniform_real_distribution<double>(opt.period_min,
                                                                  opt.period_max)(period_rng);
            const std::uint64_t ep_seed = derive_seed(seed, "episode", idx);
            Episode ep;
            ep.trace = simulate_episode(opt.leg, presets[c], cycle, opt.duration, opt.imu_rate,
                                        opt.noise, ep_seed, opt.sim_dt);
            ep.label = static_cast<int>(c);
            ep.source = EpisodeSource::simulated;
            ep.meta = {presets[c].name, cycle.period, ep_seed, ""};
            ds.episodes.push_back(std::move(ep));
        }
    }
    ds.validate();
    return ds;
}

namespace detail {

inline std::string sanitize_name(const std::string& name) {
    std::string out;
    for (char ch : name) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        else
            out += '_';
    }
    return out.empty() ? std::string("class") : out;
}

}  // namespace detail

constexpr const char* kDatasetFormat = "surfbench-dataset";
constexpr int kDatasetVersion = 1;

// Writes one CSV per episode plus a manifest that records labels, class names
// and per-episode provenance. `generation` is free-form caller metadata
// (config echo, corpus seed) stored verbatim for reproducibility. Returns the
// manifest path.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                                          nlohmann::ordered_json generation = {}) {
    ds.validate();
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json manifest;
    manifest["format"] = kDatasetFormat;
    manifest["version"] = kDatasetVersion;
    manifest["class_names"] = ds.class_names;
    if (!generation.is_null() && !generation.empty()) manifest["generation"] = generation;

    std::vector<int> per_class(ds.class_names.size(), 0);
    auto files = nlohmann::ordered_json::array();
    for (const Episode& e : ds.episodes) {
        const auto c = static_cast<std::size_t>(e.label);
        char num[8];
        std::snprintf(num, sizeof(num), "%03d", per_class[c]++);
        const std::string file = detail::sanitize_name(ds.class_names[c]) + "_" + num + ".csv";
        save_csv(e, dir / file);
        nlohmann::ordered_json entry;
        entry["file"] = file;
        entry["label"] = e.label;
        entry["surface"] = e.meta.surface;
        entry["cycle_period"] = e.meta.cycle_period;
        entry["seed"] = e.meta.seed;
        entry["source"] = e.source == EpisodeSource::simulated ? "simulated" : "imported";
        entry["origin"] = e.meta.origin;
        files.push_back(std::move(entry));
    }
    manifest["episodes"] = std::move(files);

    const std::filesystem::path manifest_path = dir / "manifest.json";
    std::ofstream out(manifest_path);
    if (!out) throw RuntimeError("cannot open " + manifest_path.string() + " for writing");
    out << manifest.dump(2) << '\n';
    if (!out) throw RuntimeError("write failed for " + manifest_path.string());
    return manifest_path;
}

// Loads a dataset from its manifest; episode files resolve relative to the
// manifest's directory.
inline Dataset load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(manifest_path.string() + ": " + ex.what());
    }
    if (!manifest.is_object() || manifest.value("format", "") != kDatasetFormat)
        throw ParseError(manifest_path.string() + ": not a dataset manifest");
    if (manifest.value("version", 0) != kDatasetVersion)
        throw ParseError(manifest_path.string() + ": unsupported manifest version");

    Dataset ds;
    ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
    const auto dir = manifest_path.parent_path();
    for (const auto& entry : manifest.at("episodes")) {
        const auto file = entry.at("file").get<std::string>();
        Episode e = load_csv(dir / file, entry.at("label").get<int>());
        e.source = entry.value("source", "simulated") == "imported" ? EpisodeSource::imported
                                                                    : EpisodeSource::simulated;
        e.meta.surface = entry.value("surface", "");
        e.meta.cycle_period = entry.value("cycle_period", 0.0);
        e.meta.seed = entry.value("seed", std::uint64_t{0});
        e.meta.origin = entry.value("origin", "");
        ds.episodes.push_back(std::move(e));
    }
    ds.validate();
    return ds;
}

}  // namespace surfbench
