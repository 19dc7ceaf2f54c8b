#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "bezierseg/cloud_io.hpp"
#include "bezierseg/config.hpp"
#include "bezierseg/ply.hpp"

using namespace bezierseg;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        const fs::path d = fs::temp_directory_path() / "bezierseg_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// Runs the CLI with the given arguments; stdout and stderr go to log.
int run(const std::string& args, std::string* log = nullptr) {
    const fs::path out = workdir() / "last.log";
    const std::string cmd = std::string("\"") + BEZIERSEG_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (log) {
        std::ifstream in(out);
        log->assign(std::istreambuf_iterator<char>(in), {});
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string path_arg(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path two_plane_cloud() {
    ModelSpec s;
    s.patches = 2;
    s.points = 600;
    s.seed = 3;
    s.fixed_degree = DegreePair{1, 1};
    s.rational = false;
    const fs::path p = workdir() / "planes.bzc";
    save_cloud(gen_model(s), p);
    return p;
}

}  // namespace

TEST_CASE("help and usage errors") {
    std::string log;
    REQUIRE(run("--help", &log) == 0);
    REQUIRE(log.find("segment-refit") != std::string::npos);
    REQUIRE(run("gen --help") == 0);
    REQUIRE(run("") == 2);
    REQUIRE(run("frobnicate") == 2);
    REQUIRE(run("gen --bogus-flag 1 --out x") == 2);
    REQUIRE(run("gen") == 2);  // --out is required
    REQUIRE(run("gen --out " + path_arg(workdir() / "neg") + " --noise -1", &log) == 2);
    REQUIRE(log.find("noise") != std::string::npos);
    REQUIRE(run("gen --out " + path_arg(workdir() / "bad") + " --points abc") == 2);
    REQUIRE(run("gen --out " + path_arg(workdir() / "bad") + " --config /nonexistent.cfg") == 2);
}

TEST_CASE("gen is deterministic") {
    const fs::path a = workdir() / "gen_a", b = workdir() / "gen_b";
    const std::string flags = " --models 3 --points 400 --patches 3 --seed 5 --noise 0.01";
    REQUIRE(run("gen --out " + path_arg(a) + flags) == 0);
    REQUIRE(run("gen --out " + path_arg(b) + flags + " --threads 1") == 0);
    for (const char* f : {"model_00000.bzc", "model_00001.bzc", "model_00002.bzc"}) {
        REQUIRE(fs::exists(a / f));
        REQUIRE(slurp(a / f) == slurp(b / f));
    }
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    REQUIRE(manifest["format"] == "bezierseg-dataset");
    REQUIRE(manifest["models"].size() == 3);
    RunConfig cfg;
    cfg.models = 3;
    cfg.points = 400;
    cfg.patches = 3;
    cfg.seed = 5;
    const AnnotatedCloud expect = add_noise(gen_model(cfg.model_spec(1)), 0.01, cfg.noise_seed(1));
    REQUIRE(load_cloud(a / "model_00001.bzc") == expect);
    REQUIRE(manifest["models"][1]["noise_seed"] == cfg.noise_seed(1));

    const fs::path j = workdir() / "gen_json";
    REQUIRE(run("gen --json --out " + path_arg(j) + flags) == 0);
    REQUIRE(load_cloud(j / "model_00000.json") == load_cloud(a / "model_00000.bzc"));
}

TEST_CASE("config file and flag precedence") {
    const fs::path cfg = workdir() / "run.cfg";
    std::ofstream(cfg) << "points = 320\npatches = 2\nmodels = 1\n";
    const fs::path out = workdir() / "gen_cfg";
    REQUIRE(run("gen --config " + path_arg(cfg) + " --points 400 --out " + path_arg(out)) == 0);
    const AnnotatedCloud c = load_cloud(out / "model_00000.bzc");
    REQUIRE(c.num_points() == 400);
    REQUIRE(c.num_patches() == 2);
}

TEST_CASE("gradcheck command") {
    const fs::path report = workdir() / "grad.json";
    std::string log;
    REQUIRE(run("gradcheck --seeds 1 --report " + path_arg(report), &log) == 0);
    REQUIRE(log.find("max_rel_err") != std::string::npos);
    REQUIRE(nlohmann::json::parse(slurp(report))["pass"] == true);
    REQUIRE(run("gradcheck --seeds 1 --tamper") == 1);
    REQUIRE(run("gradcheck --seeds 0") == 2);
}

TEST_CASE("segment-refit with ground-truth labels") {
    ModelSpec s;
    s.patches = 3;
    s.points = 600;
    s.seed = 8;
    s.rational = false;
    const fs::path in = workdir() / "poly.bzc";
    save_cloud(gen_model(s), in);
    const fs::path report = workdir() / "fit.json", out = workdir() / "fit.bzc";
    REQUIRE(run("segment-refit --gt-labels --gt-uv --fit-tol 1e-9 --input " + path_arg(in) + " --report " +
                path_arg(report) + " --out " + path_arg(out)) == 0);
    const auto rep = nlohmann::json::parse(slurp(report));
    REQUIRE(rep["format"] == "bezierseg-fit-report");
    REQUIRE(rep["fitted"] == 3);
    for (const auto& p : rep["patches"]) REQUIRE(p["rms"].get<double>() < 1e-6);
    const AnnotatedCloud refit = load_cloud(out);
    REQUIRE(refit.num_patches() == 3);
    REQUIRE(refit.num_points() == 600);
}

TEST_CASE("segment-refit with region growing") {
    const fs::path report = workdir() / "planes.json";
    REQUIRE(run("segment-refit --input " + path_arg(two_plane_cloud()) + " --report " + path_arg(report)) == 0);
    const auto rep = nlohmann::json::parse(slurp(report));
    REQUIRE(rep["labels_source"] == "region_grow");
    REQUIRE(rep["num_labels"] == 2);
    REQUIRE(rep["fitted"] == 2);
}

TEST_CASE("segment-refit rejects unreadable input") {
    REQUIRE(run("segment-refit --input " + path_arg(workdir() / "missing.bzc")) == 2);
    std::ofstream(workdir() / "junk.bzc") << "junk";
    REQUIRE(run("segment-refit --input " + path_arg(workdir() / "junk.bzc")) == 2);
}

TEST_CASE("eval command") {
    const fs::path gt = two_plane_cloud();
    const fs::path out = workdir() / "eval.json";
    REQUIRE(run("eval --pred " + path_arg(gt) + " --gt " + path_arg(gt) + " --out " + path_arg(out)) == 0);
    const auto j = nlohmann::json::parse(slurp(out));
    REQUIRE(j["acc"] == 1.0);
    REQUIRE(j["rand_index"] == 1.0);
    REQUIRE(j["normal_err"].get<double>() < 1e-7);

    ModelSpec s;
    s.patches = 2;
    s.points = 300;
    const fs::path other = workdir() / "other.bzc";
    save_cloud(gen_model(s), other);
    std::string log;
    REQUIRE(run("eval --pred " + path_arg(other) + " --gt " + path_arg(gt), &log) == 2);
    REQUIRE(log.find("points") != std::string::npos);
}

TEST_CASE("export-ply command") {
    const fs::path in = two_plane_cloud();
    const fs::path out = workdir() / "planes.ply";
    REQUIRE(run("export-ply --input " + path_arg(in) + " --out " + path_arg(out)) == 0);
    const PlyCloud ply = read_ply(out);
    REQUIRE(ply.coords == load_cloud(in).coords);
    REQUIRE(run("export-ply --ascii --no-labels --input " + path_arg(in) + " --out " + path_arg(out)) == 0);
    for (const auto& c : read_ply(out).colors) REQUIRE(c == kUnlabeledGray);
    REQUIRE(slurp(out).find("format ascii") != std::string::npos);
}

TEST_CASE("noise-sweep command") {
    const fs::path out = workdir() / "sweep.json";
    std::string log;
    REQUIRE(run("noise-sweep --models 2 --points 800 --patches 3 --sigmas 0,0.02 --out " + path_arg(out), &log) == 0);
    REQUIRE(log.find("trend") != std::string::npos);
    REQUIRE(fs::exists(out));
}
