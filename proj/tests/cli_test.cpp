#include "wpse/common.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / (std::string("wpse-cli-") + info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Result run(const std::string& args) const {
        const std::string cmd = "cd '" + dir_.string() + "' && WPSE_LAB_THREADS=2 '" WPSE_LAB_BIN "' " + args + " 2>&1";
        Result r;
        FILE* pipe = popen(cmd.c_str(), "r");
        if (!pipe) return r;
        std::array<char, 4096> buf{};
        while (fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
        const int status = pclose(pipe);
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        return r;
    }

    std::string slurp(const fs::path& p) const {
        std::ifstream in(dir_ / p, std::ios::binary);
        std::ostringstream os;
        os << in.rdbuf();
        return os.str();
    }

    void write(const fs::path& p, const std::string& s) const { std::ofstream(dir_ / p, std::ios::binary) << s; }

    fs::path only_run(const std::string& prefix) const {
        fs::path found;
        for (const auto& e : fs::directory_iterator(dir_ / "runs"))
            if (e.path().filename().string().rfind(prefix, 0) == 0) found = e.path();
        return found;
    }

    fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenWorldIsByteDeterministic) {
    ASSERT_EQ(run("gen-world --nx 6 --ny 7 --k 3 --seed 5 -o a.json").code, 0);
    ASSERT_EQ(run("gen-world --nx 6 --ny 7 --k 3 --seed 5 -o b.json").code, 0);
    EXPECT_FALSE(slurp("a.json").empty());
    EXPECT_EQ(slurp("a.json"), slurp("b.json"));
    ASSERT_EQ(run("gen-world --nx 6 --ny 7 --k 3 --seed 6 -o c.json").code, 0);
    EXPECT_NE(slurp("a.json"), slurp("c.json"));
}

TEST_F(Cli, GenWorldRejectsMoreLabelsThanYs) {
    const Result r = run("gen-world --nx 4 --ny 2 --k 3");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("error:"), std::string::npos);
}

TEST_F(Cli, IndependentWorldHasZeroInformation) {
    const Result r = run("gen-world --nx 5 --ny 5 --k 2 --independent -o w.json");
    ASSERT_EQ(r.code, 0) << r.out;
    const auto pos = r.out.find("I(X;Y)=");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_LT(std::abs(std::stod(r.out.substr(pos + 7))), 1e-12);
}

TEST_F(Cli, CorruptedWorldNamesInvariant) {
    ASSERT_EQ(run("gen-world --nx 3 --ny 3 --k 2 -o w.json").code, 0);
    auto j = nlohmann::json::parse(slurp("w.json"));
    j["joint"][0] = j["joint"][0].get<double>() + 0.25;
    write("bad.json", j.dump());
    const Result r = run("verify-bounds --world bad.json --suites pmi-optimum");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("sum to 1"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(dir_ / "runs"));
}

TEST_F(Cli, VerifyBoundsOnSmallSuites) {
    const Result r = run("verify-bounds --suites pmi-optimum,lower-bound,mean-classifier,perturbation --worlds 5 --tables 20 "
                         "--perturbations 20 --max-n 10");
    ASSERT_EQ(r.code, 0) << r.out;
    const fs::path run_dir = only_run("verify-bounds-");
    ASSERT_FALSE(run_dir.empty());
    const auto report = nlohmann::json::parse(slurp(run_dir / "report.json"));
    EXPECT_TRUE(report["passed"].get<bool>());
    EXPECT_EQ(slurp(run_dir / "checks.csv").rfind(std::string("# wpse-lab v") + wpse::kVersion + "\n", 0), 0u);
}

TEST_F(Cli, RankPasses) {
    const Result r = run("rank --d 3 --trials 50");
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST_F(Cli, RffTestPasses) {
    const Result r = run("rff-test --kernel imq --c 1.5 --pairs 20 --seeds 200 --D 512");
    EXPECT_EQ(r.code, 0) << r.out;
}

TEST_F(Cli, TrainWritesManifestAndReportVerifiesIt) {
    ASSERT_EQ(run("gen-world --nx 5 --ny 5 --k 2 --seed 1 -o w.json").code, 0);
    ASSERT_EQ(run("train --world w.json --baseline --steps 50 --run-name base").code, 0);
    const Result wp = run("train --world w.json --wpse --m 2 --steps 50 --run-name wpse");
    ASSERT_EQ(wp.code, 0) << wp.out;
    for (const char* name : {"base", "wpse"}) {
        const auto manifest = nlohmann::json::parse(slurp(fs::path("runs") / name / "manifest.json"));
        EXPECT_EQ(manifest["command"], "train");
        EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 40u);
        for (const char* f : {"config.json", "report.json", "trace.csv", "model.json"})
            EXPECT_TRUE(manifest["files"].contains(f)) << f;
        EXPECT_EQ(slurp(fs::path("runs") / name / "trace.csv").rfind("# wpse-lab v", 0), 0u);
    }
    EXPECT_EQ(run("report runs/base runs/wpse").code, 0);
    write("runs/wpse/trace.csv", "tampered\n");
    const Result rep = run("report runs/base runs/wpse");
    EXPECT_EQ(rep.code, 1);
    EXPECT_NE(rep.out.find("modified"), std::string::npos);
}

TEST_F(Cli, ConfigHashMatchesGitBlob) {
    ASSERT_EQ(run("rank --d 1 --trials 3 --run-name r").code, 0);
    const auto manifest = nlohmann::json::parse(slurp("runs/r/manifest.json"));
    FILE* pipe = popen(("git hash-object '" + (dir_ / "runs/r/config.json").string() + "'").c_str(), "r");
    ASSERT_NE(pipe, nullptr);
    std::array<char, 128> buf{};
    std::string hash;
    while (fgets(buf.data(), buf.size(), pipe)) hash += buf.data();
    if (pclose(pipe) != 0) GTEST_SKIP() << "git unavailable";
    EXPECT_EQ(hash.substr(0, 40), manifest["config_hash"].get<std::string>());
}

TEST_F(Cli, ConfigFileAndUnknownKeys) {
    write("cfg.json", R"({"d": 2, "trials": 4})");
    ASSERT_EQ(run("rank --config cfg.json --trials 6 --run-name r").code, 0);
    const auto cfg = nlohmann::json::parse(slurp("runs/r/config.json"));
    EXPECT_EQ(cfg["d"], 2);
    EXPECT_EQ(cfg["trials"], 6);
    write("bad.json", R"({"d": 2, "lr": 0.1})");
    const Result r = run("rank --config bad.json");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("unknown key 'lr'"), std::string::npos);
}

TEST_F(Cli, TomlConfig) {
    write("cfg.toml", "d = 3\ntrials = 5\nseed = 9\n");
    ASSERT_EQ(run("rank --config cfg.toml --run-name r").code, 0);
    const auto cfg = nlohmann::json::parse(slurp("runs/r/config.json"));
    EXPECT_EQ(cfg["d"], 3);
    EXPECT_EQ(cfg["trials"], 5);
    EXPECT_EQ(cfg["seed"], 9);
    write("bad.toml", "d = 2\nlr = 0.1\n");
    EXPECT_NE(run("rank --config bad.toml").out.find("unknown key 'lr'"), std::string::npos);
    write("broken.toml", "d = = 2\n");
    const Result r = run("rank --config broken.toml");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("line 1"), std::string::npos) << r.out;
}

TEST_F(Cli, ThreadCountDoesNotChangeResults) {
    const std::string args = "verify-bounds --suites lower-bound --tables 40 --max-n 6 --run-name v";
    ASSERT_EQ(run(args).code, 0);
    const std::string one = slurp("runs/v/checks.csv");
    fs::remove_all(dir_ / "runs");
    const std::string cmd = "cd '" + dir_.string() + "' && WPSE_LAB_THREADS=1 '" WPSE_LAB_BIN "' " + args + " >/dev/null";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_EQ(slurp("runs/v/checks.csv"), one);
}

TEST_F(Cli, BadThreadVariableIsAnError) {
    const std::string cmd = "cd '" + dir_.string() + "' && WPSE_LAB_THREADS=zero '" WPSE_LAB_BIN
                            "' rank --trials 3 >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    EXPECT_EQ(WEXITSTATUS(status), 2);
}
