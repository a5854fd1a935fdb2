// Plain-text run configuration: one `key = value` per line, `#` comments.
// A single RunConfig drives every CLI command so that a run is fully
// described by (config file, seed) and nothing else.
#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "surfbench/calibration.hpp"
#include "surfbench/dataset.hpp"
#include "surfbench/train.hpp"

namespace surfbench {

struct RunConfig {
    LegModel leg;
    JumpCycle cycle;
    NoiseSpec noise;
    double sim_dt = kDefaultSimDt;
    double imu_rate = 200.0;
    std::vector<SurfaceParams> presets = default_surface_presets();

    // corpus generation
    int episodes_per_class = 40;
    double episode_duration = 10.0;  // s
    double period_min = 0.8, period_max = 2.0;
    double test_fraction = 0.25;

    // recognition pipeline
    int window = 100;
    int train_stride = 10;
    int hidden = 32;
    // < 1: retained-variance fraction; >= 1: explicit component count.
    double pca = 0.99;

    TrainOptions train;

    // calibration
    int calib_budget = 300;
    SurfaceParams calib_init{0.5, 2.0e4, 100.0, "initial_guess"};
    SurfaceBounds calib_bounds;

    std::uint64_t seed = 42;

    CorpusOptions corpus_options() const {
        CorpusOptions o;
        o.episodes_per_class = episodes_per_class;
        o.duration = episode_duration;
        o.imu_rate = imu_rate;
        o.period_min = period_min;
        o.period_max = period_max;
        o.sim_dt = sim_dt;
        o.leg = leg;
        o.cycle = cycle;
        o.noise = noise;
        return o;
    }

    void validate() const {
        leg.validate();
        cycle.validate();
        if (!(sim_dt > 0.0)) throw ConfigError("sim.dt must be positive");
        if (!(imu_rate > 0.0)) throw ConfigError("imu.rate must be positive");
        if (!(noise.sigma_acc >= 0.0 && noise.sigma_gyr >= 0.0))
            throw ConfigError("imu noise levels must be >= 0");
        if (!(noise.acc_saturation > 0.0 && noise.gyr_saturation > 0.0))
            throw ConfigError("imu saturation limits must be positive");
        if (presets.empty()) throw ConfigError("at least one surface preset is required");
        for (const SurfaceParams& p : presets) p.validate();
        for (std::size_t i = 0; i < presets.size(); ++i)
            for (std::size_t j = i + 1; j < presets.size(); ++j)
                if (presets[i].name == presets[j].name)
                    throw ConfigError("duplicate preset name '" + presets[i].name + "'");
        if (episodes_per_class < 1)
            throw ConfigError("dataset.episodes_per_class must be >= 1");
        if (!(episode_duration > 0.0)) throw ConfigError("dataset.duration must be positive");
        if (!(period_min > 0.0 && period_min < period_max))
            throw ConfigError("dataset period range must satisfy 0 < min < max");
        if (!(test_fraction > 0.0 && test_fraction < 1.0))
            throw ConfigError("dataset.test_fraction must lie in (0,1)");
        if (window < 2) throw ConfigError("pipeline.window must be >= 2");
        if (train_stride < 1) throw ConfigError("pipeline.stride must be >= 1");
        if (hidden < 1) throw ConfigError("pipeline.hidden must be >= 1");
        if (!(pca > 0.0)) throw ConfigError("pipeline.pca must be positive");
        if (pca >= 1.0) {
            const double dims = std::round(pca);
            if (std::abs(pca - dims) > 1e-9 || dims > 6.0)
                throw ConfigError("pipeline.pca >= 1 must be an integer component count <= 6");
        }
        if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
        if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
        if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (!(train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 &&
              train.beta2 < 1.0))
            throw ConfigError("train Adam betas must lie in [0,1)");
        if (!(train.eps > 0.0)) throw ConfigError("train.eps must be positive");
        if (calib_budget < 20) throw ConfigError("calib.budget must be >= 20");
        calib_init.validate();
        calib_bounds.validate();
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline double config_double(std::string_view value, long line, const std::string& key) {
    const char* b = value.data();
    const char* e = b + value.size();
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc{} || ptr != e)
        throw ConfigError("line " + std::to_string(line) + ": invalid number '" +
                          std::string(value) + "' for key " + key);
    return out;
}

inline long config_int(std::string_view value, long line, const std::string& key) {
    const char* b = value.data();
    const char* e = b + value.size();
    long out = 0;
    const auto [ptr, ec] = std::from_chars(b, e, out);
    if (ec != std::errc{} || ptr != e)
        throw ConfigError("line " + std::to_string(line) + ": invalid integer '" +
                          std::string(value) + "' for key " + key);
    return out;
}

}  // namespace detail

// Parses `key = value` lines into a RunConfig starting from the defaults.
// Unknown keys are hard errors so typos cannot silently fall back. Custom
// surfaces are declared as preset.<name>.{mu,k_n,c_n}; the first preset.*
// line replaces the default preset list, and classes keep the order in which
// their names first appear.
inline RunConfig parse_config(std::istream& in) {
    RunConfig cfg;
    bool custom_presets = false;
    std::vector<SurfaceParams> presets;             // first-appearance order
    std::map<std::string, std::array<bool, 3>> seen;  // name -> {mu,k_n,c_n} set

    std::string raw;
    long line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string_view sv(raw);
        if (const auto hash = sv.find('#'); hash != std::string_view::npos)
            sv = sv.substr(0, hash);
        sv = detail::trim(sv);
        if (sv.empty()) continue;

        const auto eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line) + ": expected key = value");
        const std::string key{detail::trim(sv.substr(0, eq))};
        const std::string_view value = detail::trim(sv.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("line " + std::to_string(line) + ": empty key or value");

        auto num = [&] { return detail::config_double(value, line, key); };
        auto integer = [&] { return detail::config_int(value, line, key); };

        if (key == "leg.l1") cfg.leg.l1 = num();
        else if (key == "leg.l2") cfg.leg.l2 = num();
        else if (key == "leg.l3") cfg.leg.l3 = num();
        else if (key == "leg.m_base") cfg.leg.m_base = num();
        else if (key == "leg.m1") cfg.leg.m1 = num();
        else if (key == "leg.m2") cfg.leg.m2 = num();
        else if (key == "leg.m3") cfg.leg.m3 = num();
        else if (key == "leg.foot_radius") cfg.leg.foot_radius = num();
        else if (key == "leg.kp") cfg.leg.kp = Vec3::Constant(num());
        else if (key == "leg.kd") cfg.leg.kd = Vec3::Constant(num());
        else if (key == "cycle.period") cfg.cycle.period = num();
        else if (key == "cycle.apex_height") cfg.cycle.apex_height = num();
        else if (key == "cycle.stance_fraction") cfg.cycle.stance_fraction = num();
        else if (key == "cycle.stance_depth") cfg.cycle.stance_depth = num();
        else if (key == "imu.rate") cfg.imu_rate = num();
        else if (key == "imu.sigma_acc") cfg.noise.sigma_acc = num();
        else if (key == "imu.sigma_gyr") cfg.noise.sigma_gyr = num();
        else if (key == "imu.acc_saturation") cfg.noise.acc_saturation = num();
        else if (key == "imu.gyr_saturation") cfg.noise.gyr_saturation = num();
        else if (key == "sim.dt") cfg.sim_dt = num();
        else if (key == "dataset.episodes_per_class") cfg.episodes_per_class = static_cast<int>(integer());
        else if (key == "dataset.duration") cfg.episode_duration = num();
        else if (key == "dataset.period_min") cfg.period_min = num();
        else if (key == "dataset.period_max") cfg.period_max = num();
        else if (key == "dataset.test_fraction") cfg.test_fraction = num();
        else if (key == "pipeline.window") cfg.window = static_cast<int>(integer());
        else if (key == "pipeline.stride") cfg.train_stride = static_cast<int>(integer());
        else if (key == "pipeline.hidden") cfg.hidden = static_cast<int>(integer());
        else if (key == "pipeline.pca") cfg.pca = num();
        else if (key == "train.lr") cfg.train.lr = num();
        else if (key == "train.batch") cfg.train.batch = static_cast<int>(integer());
        else if (key == "train.epochs") cfg.train.epochs = static_cast<int>(integer());
        else if (key == "train.beta1") cfg.train.beta1 = num();
        else if (key == "train.beta2") cfg.train.beta2 = num();
        else if (key == "train.eps") cfg.train.eps = num();
        else if (key == "calib.budget") cfg.calib_budget = static_cast<int>(integer());
        else if (key == "calib.init_mu") cfg.calib_init.mu = num();
        else if (key == "calib.init_k_n") cfg.calib_init.k_n = num();
        else if (key == "calib.init_c_n") cfg.calib_init.c_n = num();
        else if (key == "calib.mu_min") cfg.calib_bounds.mu_min = num();
        else if (key == "calib.mu_max") cfg.calib_bounds.mu_max = num();
        else if (key == "calib.k_n_min") cfg.calib_bounds.kn_min = num();
        else if (key == "calib.k_n_max") cfg.calib_bounds.kn_max = num();
        else if (key == "calib.c_n_min") cfg.calib_bounds.cn_min = num();
        else if (key == "calib.c_n_max") cfg.calib_bounds.cn_max = num();
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(integer());
        else if (key.rfind("preset.", 0) == 0) {
            const std::string rest = key.substr(7);
            const auto dot = rest.rfind('.');
            if (dot == std::string::npos || dot == 0)
                throw ConfigError("line " + std::to_string(line) +
                                  ": preset keys look like preset.<name>.<field>");
            const std::string name = rest.substr(0, dot);
            const std::string field = rest.substr(dot + 1);
            custom_presets = true;
            if (!seen.count(name)) {
                presets.push_back(SurfaceParams{0.0, 0.0, 0.0, name});
                seen[name] = {false, false, false};
            }
            SurfaceParams* p = nullptr;
            for (SurfaceParams& c : presets)
                if (c.name == name) p = &c;
            if (field == "mu") { p->mu = num(); seen[name][0] = true; }
            else if (field == "k_n") { p->k_n = num(); seen[name][1] = true; }
            else if (field == "c_n") { p->c_n = num(); seen[name][2] = true; }
            else
                throw ConfigError("line " + std::to_string(line) + ": unknown preset field '" +
                                  field + "' (expected mu, k_n, or c_n)");
        } else {
            throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
        }
    }

    if (custom_presets) {
        for (const auto& [name, flags] : seen)
            if (!(flags[0] && flags[1] && flags[2]))
                throw ConfigError("preset '" + name + "' needs all of mu, k_n, c_n");
        cfg.presets = presets;
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file " + path.string());
    return parse_config(in);
}

// Round-trippable dump of the effective configuration (inspect output).
inline std::string config_summary(const RunConfig& cfg) {
    std::ostringstream os;
    os.precision(12);
    os << "leg.l1 = " << cfg.leg.l1 << "\nleg.l2 = " << cfg.leg.l2
       << "\nleg.l3 = " << cfg.leg.l3 << "\nleg.m_base = " << cfg.leg.m_base
       << "\nleg.m1 = " << cfg.leg.m1 << "\nleg.m2 = " << cfg.leg.m2
       << "\nleg.m3 = " << cfg.leg.m3 << "\nleg.foot_radius = " << cfg.leg.foot_radius
       << "\nleg.kp = " << cfg.leg.kp[0] << "\nleg.kd = " << cfg.leg.kd[0]
       << "\ncycle.period = " << cfg.cycle.period
       << "\ncycle.apex_height = " << cfg.cycle.apex_height
       << "\ncycle.stance_fraction = " << cfg.cycle.stance_fraction
       << "\ncycle.stance_depth = " << cfg.cycle.stance_depth
       << "\nimu.rate = " << cfg.imu_rate << "\nimu.sigma_acc = " << cfg.noise.sigma_acc
       << "\nimu.sigma_gyr = " << cfg.noise.sigma_gyr
       << "\nimu.acc_saturation = " << cfg.noise.acc_saturation
       << "\nimu.gyr_saturation = " << cfg.noise.gyr_saturation
       << "\nsim.dt = " << cfg.sim_dt
       << "\ndataset.episodes_per_class = " << cfg.episodes_per_class
       << "\ndataset.duration = " << cfg.episode_duration
       << "\ndataset.period_min = " << cfg.period_min
       << "\ndataset.period_max = " << cfg.period_max
       << "\ndataset.test_fraction = " << cfg.test_fraction
       << "\npipeline.window = " << cfg.window << "\npipeline.stride = " << cfg.train_stride
       << "\npipeline.hidden = " << cfg.hidden << "\npipeline.pca = " << cfg.pca
       << "\ntrain.lr = " << cfg.train.lr << "\ntrain.batch = " << cfg.train.batch
       << "\ntrain.epochs = " << cfg.train.epochs << "\ntrain.beta1 = " << cfg.train.beta1
       << "\ntrain.beta2 = " << cfg.train.beta2 << "\ntrain.eps = " << cfg.train.eps
       << "\ncalib.budget = " << cfg.calib_budget
       << "\ncalib.init_mu = " << cfg.calib_init.mu
       << "\ncalib.init_k_n = " << cfg.calib_init.k_n
       << "\ncalib.init_c_n = " << cfg.calib_init.c_n
       << "\ncalib.mu_min = " << cfg.calib_bounds.mu_min
       << "\ncalib.mu_max = " << cfg.calib_bounds.mu_max
       << "\ncalib.k_n_min = " << cfg.calib_bounds.kn_min
       << "\ncalib.k_n_max = " << cfg.calib_bounds.kn_max
       << "\ncalib.c_n_min = " << cfg.calib_bounds.cn_min
       << "\ncalib.c_n_max = " << cfg.calib_bounds.cn_max
       << "\nseed = " << cfg.seed << "\n";
    for (const SurfaceParams& p : cfg.presets) {
        os << "preset." << p.name << ".mu = " << p.mu << "\n"
           << "preset." << p.name << ".k_n = " << p.k_n << "\n"
           << "preset." << p.name << ".c_n = " << p.c_n << "\n";
    }
    return os.str();
}

}  // namespace surfbench
