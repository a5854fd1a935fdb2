// End-to-end checks of the command-line tool as a subprocess: artifact
// layout, exit codes, and determinism. SURFBENCH_CLI_PATH is injected by the
// build.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "surfbench/model_io.hpp"

using namespace surfbench;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "surfbench_cli_tests";

struct RunResult {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

RunResult run_cli(const std::string& args) {
    fs::create_directories(kRoot);
    const fs::path out = kRoot / "stdout.txt";
    const fs::path err = kRoot / "stderr.txt";
    const std::string cmd = std::string(SURFBENCH_CLI_PATH) + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int rc = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

// Small corpus config shared by the tests; cheap enough to simulate in
// well under a second.
fs::path write_config(const std::string& extra = "") {
    const fs::path p = kRoot / "run.cfg";
    fs::create_directories(kRoot);
    std::ofstream cfg(p);
    cfg << "dataset.episodes_per_class = 3\n"
           "dataset.duration = 2.5\n"
           "imu.rate = 100\n"
           "pipeline.stride = 5\n"
           "pipeline.hidden = 8\n"
           "train.epochs = 3\n"
           "train.batch = 16\n"
           "seed = 7\n"
        << extra;
    return p;
}

long count_lines(const fs::path& p) {
    std::ifstream in(p);
    long n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

// Generates the shared corpus once; later sections reuse it.
fs::path shared_corpus() {
    static fs::path manifest = [] {
        const fs::path cfg = write_config();
        const fs::path dir = kRoot / "data";
        fs::remove_all(dir);
        const RunResult r =
            run_cli("--config " + cfg.string() + " --out " + dir.string() + " gen");
        REQUIRE(r.exit_code == 0);
        return dir / "manifest.json";
    }();
    return manifest;
}

fs::path shared_model() {
    static fs::path model = [] {
        const fs::path cfg = write_config();
        const fs::path dir = kRoot / "model";
        fs::remove_all(dir);
        const RunResult r = run_cli("--config " + cfg.string() + " --out " + dir.string() +
                                    " train " + shared_corpus().string());
        REQUIRE(r.exit_code == 0);
        return dir / "model.json";
    }();
    return model;
}

}  // namespace

TEST_CASE("gen writes a complete labeled corpus deterministically", "[cli]") {
    const fs::path manifest = shared_corpus();
    REQUIRE(fs::exists(manifest));

    std::ifstream in(manifest);
    const auto j = nlohmann::json::parse(in);
    REQUIRE(j.at("class_names").size() == 4);
    CHECK(j.at("episodes").size() == 12);
    CHECK(fs::exists(manifest.parent_path() / "carpet_000.csv"));
    CHECK(fs::exists(manifest.parent_path() / "rough_tile_002.csv"));

    // Same config + seed again: byte-identical manifest and episode files.
    const fs::path cfg = write_config();
    const fs::path dir2 = kRoot / "data_repeat";
    fs::remove_all(dir2);
    REQUIRE(run_cli("--config " + cfg.string() + " --out " + dir2.string() + " gen").exit_code ==
            0);
    CHECK(slurp(dir2 / "manifest.json") == slurp(manifest));
    CHECK(slurp(dir2 / "carpet_001.csv") == slurp(manifest.parent_path() / "carpet_001.csv"));

    // A different seed changes the data.
    const fs::path dir3 = kRoot / "data_seed9";
    fs::remove_all(dir3);
    REQUIRE(run_cli("--config " + cfg.string() + " --seed 9 --out " + dir3.string() + " gen")
                .exit_code == 0);
    CHECK(slurp(dir3 / "carpet_001.csv") != slurp(manifest.parent_path() / "carpet_001.csv"));
}

TEST_CASE("bad configs fail with exit 2 before producing output", "[cli]") {
    const fs::path bad = kRoot / "bad.cfg";
    fs::create_directories(kRoot);
    {
        std::ofstream c(bad);
        c << "dataset.episodes_per_clas = 3\n";  // typo
    }
    const fs::path out = kRoot / "never_created";
    fs::remove_all(out);
    RunResult r = run_cli("--config " + bad.string() + " --out " + out.string() + " gen");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("unknown key") != std::string::npos);
    CHECK_FALSE(fs::exists(out));

    {
        std::ofstream c(bad);
        c << "preset.foo.mu = 0.5\npreset.foo.k_n = -3\npreset.foo.c_n = 10\n";
    }
    r = run_cli("--config " + bad.string() + " --out " + out.string() + " gen");
    CHECK(r.exit_code == 2);
    CHECK_FALSE(fs::exists(out));

    // Usage errors (missing required argument) are validation failures too.
    CHECK(run_cli("train").exit_code == 2);
}

TEST_CASE("train produces a loadable model and eval reports a consistent matrix", "[cli]") {
    const fs::path model_path = shared_model();
    const PipelineModel model = load_model(model_path.string());  // validates on load
    CHECK(model.window == 100);
    CHECK(model.class_names.size() == 4);

    // Repeating the training run reproduces the model bytes.
    const fs::path cfg = write_config();
    const fs::path dir2 = kRoot / "model_repeat";
    fs::remove_all(dir2);
    REQUIRE(run_cli("--config " + cfg.string() + " --out " + dir2.string() + " train " +
                    shared_corpus().string())
                .exit_code == 0);
    CHECK(slurp(dir2 / "model.json") == slurp(model_path));

    const fs::path eval_dir = kRoot / "eval";
    fs::remove_all(eval_dir);
    const RunResult r = run_cli("--out " + eval_dir.string() + " eval " + model_path.string() +
                                " " + shared_corpus().string() + " --stride 25");
    REQUIRE(r.exit_code == 0);

    // Confusion row sums must equal the per-class window counts: 3 episodes
    // of 250 samples, window 100, stride 25 -> 7 windows each.
    std::ifstream conf(eval_dir / "confusion.csv");
    std::string line;
    std::getline(conf, line);  // header
    long rows = 0;
    while (std::getline(conf, line)) {
        ++rows;
        long sum = 0;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // class name
        while (std::getline(ss, field, ',')) sum += std::stol(field);
        CHECK(sum == 21);
    }
    CHECK(rows == 4);
    CHECK(count_lines(eval_dir / "metrics.csv") == 6);  // header + 4 classes + mean
}

TEST_CASE("eval rejects a dataset whose classes do not match the model", "[cli]") {
    const fs::path cfg = write_config(
        "preset.soft.mu = 0.9\npreset.soft.k_n = 6e3\npreset.soft.c_n = 250\n"
        "preset.hard.mu = 0.25\npreset.hard.k_n = 1.2e5\npreset.hard.c_n = 40\n");
    const fs::path dir = kRoot / "data_2class";
    fs::remove_all(dir);
    REQUIRE(run_cli("--config " + cfg.string() + " --out " + dir.string() + " gen").exit_code ==
            0);
    const RunResult r = run_cli("--out " + (kRoot / "eval2").string() + " eval " +
                                shared_model().string() + " " +
                                (dir / "manifest.json").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("classes") != std::string::npos);
}

TEST_CASE("classify emits one prediction per sample after warm-up", "[cli]") {
    // Truncate an episode to 150 samples -> exactly 51 predictions.
    const fs::path src = shared_corpus().parent_path() / "tile_000.csv";
    const fs::path cut = kRoot / "tile_150.csv";
    {
        std::ifstream in(src);
        std::ofstream out(cut);
        std::string line;
        for (int i = 0; i <= 150 && std::getline(in, line); ++i) out << line << "\n";
    }

    const fs::path dir = kRoot / "cls";
    fs::remove_all(dir);
    REQUIRE(run_cli("--out " + dir.string() + " classify " + shared_model().string() + " " +
                    cut.string())
                .exit_code == 0);
    CHECK(count_lines(dir / "predictions.csv") == 52);  // header + 51 rows
    const std::string batch = slurp(dir / "predictions.csv");

    REQUIRE(run_cli("--out " + dir.string() + " classify " + shared_model().string() + " " +
                    cut.string() + " --stream")
                .exit_code == 0);
    CHECK(slurp(dir / "predictions.csv") == batch);

    std::ifstream in(dir / "predictions.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,class_id,class_name,p_carpet,p_rubber,p_tile,p_rough_tile");

    // Header-only recording: a parse failure, exit 2.
    const fs::path empty = kRoot / "empty.csv";
    {
        std::ofstream e(empty);
        e << "t,ax,ay,az,gx,gy,gz\n";
    }
    CHECK(run_cli("--out " + dir.string() + " classify " + shared_model().string() + " " +
                  empty.string())
              .exit_code == 2);
}

TEST_CASE("calibrate writes the result artifacts within the budget", "[cli]") {
    // Match the jump cadence the reference episode was generated with.
    std::ifstream min(shared_corpus());
    const auto manifest = nlohmann::json::parse(min);
    double period = 0.0;
    std::string ref_file;
    for (const auto& ep : manifest.at("episodes"))
        if (ep.at("file").get<std::string>().rfind("rubber", 0) == 0) {
            period = ep.at("cycle_period").get<double>();
            ref_file = ep.at("file").get<std::string>();
            break;
        }
    REQUIRE(period > 0.0);

    std::ostringstream extra;
    extra << "cycle.period = " << period << "\n";
    const fs::path cfg = write_config(extra.str());
    const fs::path dir = kRoot / "calib";
    fs::remove_all(dir);
    const fs::path ref = shared_corpus().parent_path() / ref_file;
    const RunResult r = run_cli("--config " + cfg.string() + " --out " + dir.string() +
                                " calibrate " + ref.string() + " --budget 24");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("trace accuracy") != std::string::npos);

    std::ifstream jin(dir / "calibration.json");
    const auto j = nlohmann::json::parse(jin);
    CHECK(j.at("evaluations").get<int>() <= 24);
    CHECK(j.at("loss_history").size() <= 24);
    CHECK(j.at("params").at("k_n").get<double>() > 0.0);
    std::ifstream acsv(dir / "alignment.csv");
    std::string header;
    std::getline(acsv, header);
    CHECK(header == "t,ref_gyr_mag,sim_gyr_mag");

    // A recording with no jumps in it cannot be calibrated against: exit 3.
    const fs::path quiet = kRoot / "quiet.csv";
    {
        std::ofstream q(quiet);
        q << "t,ax,ay,az,gx,gy,gz\n";
        for (int i = 0; i < 200; ++i)
            q << 0.01 * i << ",0,0,0,0,0,0.5\n";
    }
    CHECK(run_cli("--out " + dir.string() + " calibrate " + quiet.string()).exit_code == 3);
}

TEST_CASE("inspect summarizes artifacts", "[cli]") {
    RunResult r = run_cli("inspect " + shared_corpus().string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("12 episodes") != std::string::npos);
    r = run_cli("inspect " + shared_model().string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("window 100") != std::string::npos);
    r = run_cli("inspect");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("seed = 42") != std::string::npos);
}
