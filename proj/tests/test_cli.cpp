#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
    const std::string cmd = std::string(TINYEMA_BIN) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.output += buf;
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const fs::path kRoot = fs::temp_directory_path() / "tinyema_cli_test";
const std::string kTiny = std::string(TINYEMA_CONFIGS) + "/tiny.json";

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("ablate --help").code, 0);
    const auto none = run("");
    EXPECT_EQ(none.code, 2);
    const auto bogus = run("bogus");
    EXPECT_EQ(bogus.code, 2);
    EXPECT_NE(bogus.output.find("unknown command 'bogus'"), std::string::npos);
    EXPECT_EQ(run("train").code, 2);
    EXPECT_EQ(run("gen --nope").code, 2);
}

TEST(Cli, RuntimeErrorsExitOneWithASingleLine) {
    fs::create_directories(kRoot);
    const fs::path bad = kRoot / "bad.json";
    std::ofstream(bad) << R"({"train": {"rho": 0.9}})";
    const auto r = run("gen -c " + bad.string() + " -o " + (kRoot / "never").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("kind=config field=train.rho"), std::string::npos);
    EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1);
    EXPECT_EQ(run("gen --unsafe-ranges -n 1 -c " + bad.string() + " -o " + (kRoot / "unsafe").string()).code, 0);

    const auto missing = run("train -d " + (kRoot / "nowhere").string() + " -o " + (kRoot / "t").string());
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.output.find("kind=io"), std::string::npos);
}

TEST(Cli, GenTrainEvalPipeline) {
    const fs::path data = kRoot / "data";
    fs::remove_all(data);
    ASSERT_EQ(run("-q gen -c " + kTiny + " -o " + data.string() + " --png").code, 0);
    EXPECT_TRUE(fs::exists(data / "manifest.jsonl"));
    EXPECT_TRUE(fs::exists(data / "images" / "img_0000.png"));

    const fs::path tr = kRoot / "train";
    ASSERT_EQ(run("train -c " + kTiny + " -d " + data.string() + " -o " + tr.string() + " --val-fraction 0.25").code, 0);
    EXPECT_TRUE(fs::exists(tr / "snapshot.json"));
    const auto log = slurp(tr / "train_log.jsonl");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
    EXPECT_NE(log.find("val_ap"), std::string::npos);

    const fs::path ev = kRoot / "eval";
    ASSERT_EQ(run("eval -c " + kTiny + " -s " + (tr / "snapshot.json").string() + " -d " + data.string() + " -o " +
                  ev.string())
                  .code,
              0);
    EXPECT_NE(slurp(ev / "metrics.json").find("\"mAP\""), std::string::npos);
    EXPECT_EQ(slurp(ev / "pr_curve.csv").rfind("label,recall,precision,confidence", 0), 0u);
}

TEST(Cli, AblateIsReproducibleAndReportable) {
    const fs::path a = kRoot / "ab_a", b = kRoot / "ab_b";
    ASSERT_EQ(run("ablate -c " + kTiny + " -k 2 -j 2 -o " + a.string()).code, 0);
    ASSERT_EQ(run("ablate -c " + kTiny + " -k 2 -j 1 -o " + b.string()).code, 0);
    const auto csv = slurp(a / "metrics.csv");
    EXPECT_EQ(csv, slurp(b / "metrics.csv"));
    // Header, 8 configs x 2 folds, 8 aggregate rows.
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 16 + 8);

    const fs::path rep = kRoot / "report";
    ASSERT_EQ(run("report -i " + a.string() + " -o " + rep.string()).code, 0);
    EXPECT_TRUE(fs::exists(rep / "ablation.svg"));
    EXPECT_TRUE(fs::exists(rep / "pr_curves.svg"));
    EXPECT_NE(slurp(rep / "table.txt").find("+All"), std::string::npos);
}

TEST(Cli, SelftestPassesAndPrintsEveryCheck) {
    const auto r = run("selftest");
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 6);
    EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}
