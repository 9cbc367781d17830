// Copyright (c) 2026, The LDAG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace ldag;
using namespace ldag::testing;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

/// Runs the CLI with the given arguments; stderr is discarded.
RunResult run_cli(const std::string& args) {
    const std::string cmd = std::string(LDAG_CLI_PATH) + " " + args + " 2>/dev/null";
    RunResult r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t got = 0;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string fixtures_flag() { return std::string("--fixtures ") + LDAG_FIXTURE_DIR; }

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// A config small enough for a few seconds of training per run.
fs::path tiny_config(const TempDir& dir) {
    const auto path = dir / "tiny.cfg";
    std::ofstream(path) << "epochs=1\nepisodes_per_epoch=2\nbatch_size=2\neval_episodes_per_class=1\nn=2\n";
    return path;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
    return n;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
    EXPECT_EQ(run_cli("--help").code, 0);
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("no-such-command").code, 2);
    EXPECT_EQ(run_cli("train --alpha notanumber").code, 2);
    EXPECT_EQ(run_cli("train --fold 7").code, 2);
    EXPECT_EQ(run_cli("train --alpha -1").code, 2);
    EXPECT_EQ(run_cli("attributes").code, 2);
}

TEST(Cli, BadConfigFileIsUsageError) {
    TempDir dir;
    std::ofstream(dir / "bad.cfg") << "unknown_key=1\n";
    EXPECT_EQ(run_cli("eval --config " + (dir / "bad.cfg").string()).code, 2);
    EXPECT_EQ(run_cli("eval --config " + (dir / "missing.cfg").string()).code, 2);
}

TEST(Cli, AttributesPrintsNPlusOneForegroundPrompts) {
    for (int n : {0, 3, 5}) {
        const auto r = run_cli("attributes --class \"red square\" --n " + std::to_string(n) + " --offline " +
                               fixtures_flag());
        ASSERT_EQ(r.code, 0) << n;
        EXPECT_EQ(count_lines_starting(r.out, "foreground: "), std::size_t(n + 1)) << r.out;
        EXPECT_EQ(count_lines_starting(r.out, "background: "), 1u);
        EXPECT_NE(r.out.find("a photo of red square"), std::string::npos) << r.out;
    }
    EXPECT_EQ(run_cli("attributes --class \"teal star\" --offline " + fixtures_flag()).code, 2);
}

TEST(Cli, AttributesWithoutFixtureOfflineIsRuntimeError) {
    TempDir dir;
    EXPECT_EQ(run_cli("attributes --class \"red square\" --offline --fixtures " + dir.path().string()).code, 1);
}

TEST(Cli, PriorEmitsNPlusOneMapsDeterministically) {
    TempDir dir;
    const auto a = dir / "a", b = dir / "b";
    ASSERT_EQ(run_cli("prior --class \"blue circle\" --n 4 " + fixtures_flag() + " --out " + a.string()).code, 0);
    ASSERT_EQ(run_cli("prior --class \"blue circle\" --n 4 " + fixtures_flag() + " --out " + b.string()).code, 0);
    std::size_t maps = 0;
    for (const auto& entry : fs::directory_iterator(a))
        maps += entry.path().filename().string().rfind("prior_", 0) == 0;
    EXPECT_EQ(maps, 5u);
    for (int i = 0; i < 5; ++i) {
        const auto name = "prior_" + std::to_string(i) + ".pgm";
        EXPECT_EQ(read_text(a / name), read_text(b / name)) << name;
        const auto img = read_pgm(a / name);
        EXPECT_EQ(img.height, 64u);
    }
    const auto scores = nlohmann::json::parse(read_text(a / "scores.json"));
    EXPECT_EQ(scores.at("maps").size(), 5u);
    EXPECT_EQ(read_text(a / "scores.json"), read_text(b / "scores.json"));
}

TEST(Cli, GenFixturesIsDeterministicAndRefusesOverwrite) {
    TempDir dir;
    const auto a = dir / "a", b = dir / "b";
    const std::string common = " --seed 3 --config " + tiny_config(dir).string();
    ASSERT_EQ(run_cli("gen-fixtures --out " + a.string() + common).code, 0);
    ASSERT_EQ(run_cli("gen-fixtures --out " + b.string() + common).code, 0);
    const auto manifest = read_manifest(a / "manifest.json");
    EXPECT_EQ(manifest.classes.size(), 8u);
    EXPECT_EQ(manifest.seed, 3u);
    EXPECT_EQ(read_text(a / "manifest.json"), read_text(b / "manifest.json"));
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(entry.path(), a);
        EXPECT_EQ(read_text(entry.path()), read_text(b / rel)) << rel;
    }
    EXPECT_GT(files, 80u);
    EXPECT_EQ(run_cli("gen-fixtures --out " + a.string() + common).code, 1);
    EXPECT_EQ(run_cli("gen-fixtures --force --out " + a.string() + common).code, 0);
}

TEST(Cli, EvalWithoutCheckpointWritesReport) {
    TempDir dir;
    const auto out = dir / "eval";
    const auto r = run_cli("eval --config " + tiny_config(dir).string() + " " + fixtures_flag() + " --out " +
                           out.string());
    ASSERT_EQ(r.code, 0);
    const auto report = nlohmann::json::parse(read_text(out / "report.json"));
    EXPECT_EQ(report.at("episode_count"), 2);
    EXPECT_TRUE(report.at("config").at("checkpoint").is_null());
    EXPECT_GE(report.at("miou").get<double>(), 0.0);
    EXPECT_LE(report.at("miou").get<double>(), 1.0);
    EXPECT_TRUE(fs::exists(out / "episodes.csv"));
    EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "none").string() + " " + fixtures_flag() + " --out " +
                      out.string())
                  .code,
              1);
}

TEST(Cli, TrainEvalPredictRoundTrip) {
    TempDir dir;
    const auto cfg = tiny_config(dir).string();
    const auto run = dir / "run";
    ASSERT_EQ(run_cli("train --config " + cfg + " " + fixtures_flag() + " --out " + run.string()).code, 0);
    EXPECT_TRUE(fs::exists(run / "metrics.jsonl"));
    EXPECT_TRUE(fs::exists(run / "checkpoint" / "manifest.json"));
    // A second run into the same directory needs --force.
    EXPECT_EQ(run_cli("train --config " + cfg + " " + fixtures_flag() + " --out " + run.string()).code, 1);

    const auto eval = dir / "eval";
    ASSERT_EQ(run_cli("eval --config " + cfg + " " + fixtures_flag() + " --checkpoint " + (run / "checkpoint").string() +
                      " --out " + eval.string())
                  .code,
              0);
    const auto report = nlohmann::json::parse(read_text(eval / "report.json"));
    EXPECT_TRUE(report.at("config").at("checkpoint").is_string());
    // n must match the checkpoint.
    EXPECT_EQ(run_cli("eval --config " + cfg + " --n 3 " + fixtures_flag() + " --checkpoint " +
                      (run / "checkpoint").string() + " --out " + eval.string())
                  .code,
              2);

    const auto pred = dir / "pred";
    ASSERT_EQ(run_cli("predict --config " + cfg + " --class \"cyan ring\" " + fixtures_flag() + " --checkpoint " +
                      (run / "checkpoint").string() + " --out " + pred.string())
                  .code,
              0);
    EXPECT_EQ(read_mask(pred / "mask.pgm").height, 64u);
    EXPECT_TRUE(fs::exists(pred / "probability.pgm"));
    EXPECT_TRUE(nlohmann::json::parse(read_text(pred / "prediction.json")).contains("iou"));
}

TEST(Cli, AblationSweepCardinalities) {
    TempDir dir;
    const auto cfg = tiny_config(dir).string();
    const std::pair<const char*, std::size_t> sweeps[] = {{"alpha", 5}, {"n", 7}, {"toggles", 4}};
    for (const auto& [sweep, cells] : sweeps) {
        const auto out = dir / sweep;
        ASSERT_EQ(run_cli(std::string("ablate --sweep ") + sweep + " --config " + cfg + " " + fixtures_flag() +
                          " --out " + out.string())
                      .code,
                  0)
            << sweep;
        std::size_t reports = 0;
        for (const auto& entry : fs::recursive_directory_iterator(out)) {
            if (entry.path().filename() != "report.json") continue;
            ++reports;
            const auto j = nlohmann::json::parse(read_text(entry.path()));
            const auto cell = j.at("config").at("cell").get<std::string>();
            EXPECT_EQ(cell.rfind(std::string(sweep) + "/", 0), 0u) << cell;
        }
        EXPECT_EQ(reports, cells) << sweep;
        EXPECT_EQ(count_lines_starting(read_text(out / "summary.csv"), std::string(sweep) + "/"), cells);
    }
    EXPECT_EQ(run_cli("ablate --sweep bogus --config " + cfg + " --out " + (dir / "x").string()).code, 2);
}

TEST(Cli, AlphaSweepEchoesEachCellConfig) {
    TempDir dir;
    const auto out = dir / "alpha";
    ASSERT_EQ(run_cli("ablate --sweep alpha --config " + tiny_config(dir).string() + " " + fixtures_flag() +
                      " --out " + out.string())
                  .code,
              0);
    for (const char* a : {"0", "0.3", "0.5", "0.8", "1"}) {
        const auto j = nlohmann::json::parse(read_text(out / "alpha" / a / "report.json"));
        EXPECT_DOUBLE_EQ(j.at("config").at("alpha").get<double>(), std::stod(a));
        EXPECT_EQ(j.at("config").at("n"), 2);
    }
}

TEST(Cli, FilesProviderReadsGeneratedEpisodes) {
    TempDir dir;
    const auto cfg = tiny_config(dir).string();
    const auto data = dir / "data";
    ASSERT_EQ(run_cli("gen-fixtures --config " + cfg + " --out " + data.string()).code, 0);
    const auto out = dir / "eval";
    ASSERT_EQ(run_cli("eval --provider files --data " + data.string() + " --config " + cfg + " --fixtures " +
                      (data / "fixtures").string() + " --out " + out.string())
                  .code,
              0);
    const auto report = nlohmann::json::parse(read_text(out / "report.json"));
    EXPECT_EQ(report.at("episode_count"), 2);
    EXPECT_EQ(run_cli("eval --provider files --config " + cfg).code, 2);
}
