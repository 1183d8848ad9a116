#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kTmp = fs::temp_directory_path() / ("brf_cli_" + std::to_string(::getpid()));

int brf(const std::string& args) {
    const std::string cmd = std::string(BRF_CLI) + " " + args + " >" + (kTmp / "stdout.txt").string() + " 2>" +
                            (kTmp / "stderr.txt").string();
    fs::create_directories(kTmp);
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string first_line(const fs::path& p) {
    std::ifstream f(p);
    std::string l;
    std::getline(f, l);
    return l;
}

std::size_t line_count(const fs::path& p) {
    std::ifstream f(p);
    std::size_t n = 0;
    for (std::string l; std::getline(f, l);) ++n;
    return n;
}

const std::string kTinyTrain =
    "train --epochs 2 --hidden 6 --batch-size 16 --set syn_T=50 --set syn_train=64 --set syn_test=32 --set val_size=16";

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(brf("") == 1);
    CHECK(brf("frobnicate") == 1);
    CHECK(brf("train --bogus") == 1);
    CHECK(brf("train --set hidden") == 1);
    CHECK(brf("train --set nope=3") == 1);
    CHECK(brf("train --model lstm") == 1);
    CHECK(brf("simulate --omega 150 --flags brf --out " + (kTmp / "x.csv").string()) == 1);
    CHECK(slurp(kTmp / "stderr.txt").find("omega < 100") != std::string::npos);
    CHECK(brf("simulate --stimulus square --out " + (kTmp / "x.csv").string()) == 1);
    CHECK(brf("gradflow --mode sideways --out " + (kTmp / "g").string()) == 1);
    CHECK(brf("landscape --checkpoint " + (kTmp / "missing.json").string()) != 0);
    CHECK(brf("--help") == 0);
    CHECK(brf("--version") == 0);
}

TEST_CASE("missing data exits 2") {
    CHECK(brf("train --task smnist --data-dir /definitely/not/here --out " + (kTmp / "d").string()) == 2);
}

TEST_CASE("divergence exits 3") {
    CHECK(brf(kTinyTrain + " --lr 1e300 --out " + (kTmp / "nan").string()) == 3);
    CHECK(slurp(kTmp / "stderr.txt").find("epoch") != std::string::npos);
}

TEST_CASE("train, landscape and gradflow from a checkpoint") {
    const auto run = kTmp / "run";
    REQUIRE(brf(kTinyTrain + " --out " + run.string()) == 0);
    CHECK(line_count(run / "metrics.csv") == 3);

    const auto land = kTmp / "land";
    REQUIRE(brf("landscape --checkpoint " + (run / "checkpoints/latest.json").string() +
                " --points 5 --subset 16 --threads 2 --out " + land.string()) == 0);
    CHECK(first_line(land / "landscape.csv") == "alpha,beta,loss");
    CHECK(line_count(land / "landscape.csv") == 26);
    const auto meta = nlohmann::json::parse(slurp(land / "landscape.json"));
    CHECK(meta["format"] == "brf-landscape/1");
    CHECK(meta["split"] == "train");
    CHECK(meta["subset_size"] == 16);
    CHECK(meta["checkpoint_hash"].get<std::string>().size() == 16);
    CHECK(meta["roughness"].contains("total_variation"));
    CHECK(meta["roughness"]["complete"] == true);

    const auto gf = kTmp / "gf";
    REQUIRE(brf("gradflow --checkpoint " + (run / "checkpoints/latest.json").string() +
                " --input sample --sample 3 --mode spiking --out " + gf.string()) == 0);
    CHECK(first_line(gf / "gradflow.csv") == "t,adjoint_norm");
    CHECK(line_count(gf / "gradflow.csv") == 51);
    CHECK(nlohmann::json::parse(slurp(gf / "gradflow.json"))["sample"] == 3);
}

TEST_CASE("repeated runs write an aggregate") {
    const auto out = kTmp / "multi";
    REQUIRE(brf(kTinyTrain + " --runs 2 --seed 4 --out " + out.string()) == 0);
    CHECK(fs::exists(out / "seed_4" / "summary.json"));
    CHECK(fs::exists(out / "seed_5" / "summary.json"));
    CHECK(line_count(out / "aggregate.csv") == 3);
}

TEST_CASE("config file with overrides") {
    const auto cfg = kTmp / "c.toml";
    fs::create_directories(kTmp);
    std::ofstream(cfg) << "hidden = 5\nepochs = 1\nsyn_T = 50\nsyn_train = 48\nsyn_test = 16\nval_size = 8\n";
    const auto out = kTmp / "cfg";
    REQUIRE(brf("train --config " + cfg.string() + " --set hidden=7 --out " + out.string()) == 0);
    const auto text = slurp(out / "config.toml");
    CHECK(text.find("hidden = 7") != std::string::npos);
    CHECK(text.find("syn_T = 50") != std::string::npos);
}

TEST_CASE("simulate, phase and gradcheck artifacts") {
    const auto tr = kTmp / "sim" / "trace.csv";
    REQUIRE(brf("simulate --omega 10 --b -1 --theta-c inf --steps 50 --out " + tr.string()) == 0);
    CHECK(first_line(tr) == "t,input,u_re,u_im,abs_u,theta,b,z");
    CHECK(line_count(tr) == 51);
    const auto meta = nlohmann::json::parse(slurp(kTmp / "sim" / "trace.json"));
    CHECK(meta["format"] == "brf-trace/1");
    CHECK(meta["theta_c"] == "inf");
    CHECK(meta["spectral_radius"].get<double>() == doctest::Approx(0.995037687728459861).epsilon(1e-15));

    REQUIRE(brf("simulate --omega 10 --flags brf --b-offset 0 --stimulus constant --out " + tr.string()) == 0);

    const auto ph = kTmp / "phase";
    REQUIRE(brf("phase --omega-points 7 --b-points 4 --out " + ph.string()) == 0);
    CHECK(first_line(ph / "phase.csv") == "omega,b,spectral_radius,divergent,boundary_b");
    CHECK(line_count(ph / "phase.csv") == 29);
    CHECK(nlohmann::json::parse(slurp(ph / "phase.json"))["format"] == "brf-phase/1");

    const auto gf = kTmp / "gf0";
    REQUIRE(brf("gradflow --steps 100 --out " + gf.string()) == 0);
    CHECK(line_count(gf / "gradflow.csv") == 101);

    CHECK(brf("gradcheck --seeds 1") == 0);
    CHECK(brf("gradcheck --seeds 1 --tol 1e-30") == 3);
}

TEST_CASE("cleanup") { fs::remove_all(kTmp); }
