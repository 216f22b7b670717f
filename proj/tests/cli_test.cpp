#include <sstream>

#include <gtest/gtest.h>

#include "qmavis/cli.hpp"
#include "qmavis/util.hpp"
#include "support.hpp"

using namespace qmavis;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct cli_run {
  int code;
  std::string out;
  std::string err;
};

struct harness {
  testkit::temp_dir dir;
  std::vector<std::shared_ptr<backend>> built;

  harness() {
    write_file_atomic(dir / "caption.json", testkit::caption_fixture().dump());
    write_file_atomic(dir / "transcribe.json", testkit::transcript_fixture().dump());
    write_file_atomic(dir / "aggregate.json", json{{"kind", "identity"}}.dump());
    write_config(json::object());
  }

  void write_config(const json& extra) {
    json cfg{{"backends",
              {{"caption", {{"mock", "caption.json"}}},
               {"transcribe", {{"mock", "transcribe.json"}}},
               {"aggregate", {{"mock", "aggregate.json"}}}}},
             {"media", {{"program", testkit::ffmpeg_program()}}},
             {"cache_root", "cache"},
             {"output_dir", "out"}};
    cfg.merge_patch(extra);
    write_file_atomic(dir / "config.json", cfg.dump(2));
  }

  cli_run run(std::vector<std::string> args, const std::string& input = "") {
    std::istringstream in(input);
    std::ostringstream out, err;
    cli_io io{in, out, err, [this](role r, const backend_slot& slot) {
                auto b = default_backend_factory(r, slot);
                built.push_back(b);
                return b;
              }};
    const int code = run_cli(args, io);
    return {code, out.str(), err.str()};
  }

  std::vector<std::string> with_config(std::vector<std::string> args) {
    args.insert(args.begin(), {"--config", (dir / "config.json").string()});
    return args;
  }

  std::size_t calls() const {
    std::size_t n = 0;
    for (const auto& b : built) n += b->calls();
    return n;
  }

  json only_report() const {
    for (const auto& e : fs::directory_iterator(dir / "out"))
      if (e.path().filename().string().starts_with("report_")) return json::parse(read_file(e.path()));
    return nullptr;
  }
};

json error_json(const std::string& err) {
  const auto line = err.substr(err.rfind('{', err.find("\"error\"")));
  return json::parse(line.substr(0, line.find('\n')));
}

}  // namespace

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    if (testkit::ffmpeg_program().empty()) GTEST_SKIP() << "no media tool configured";
    clip_ = testkit::synthetic_clip(testkit::fixture_secs, true).string();
  }
  std::string clip_;
  harness h_;
};

TEST(CliBasics, HelpAndVersion) {
  harness h;
  auto r = h.run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("analyze"), std::string::npos);
  r = h.run({"--version"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find(std::string(version_string)), std::string::npos);
}

TEST(CliBasics, UsageErrors) {
  harness h;
  EXPECT_EQ(h.run({}).code, 2);
  EXPECT_EQ(h.run({"analyze"}).code, 2);
  EXPECT_EQ(h.run({"analyze", "x.mp4", "--bogus"}).code, 2);
  EXPECT_EQ(h.run({"analyze", "x.mp4", "--ablation", "nonsense"}).code, 2);
}

TEST(CliBasics, MissingVideoIsNotFound) {
  harness h;
  const auto r = h.run(h.with_config({"analyze", (h.dir / "missing.mp4").string()}));
  EXPECT_EQ(r.code, 2);
  const auto e = error_json(r.err);
  EXPECT_EQ(e["error"]["code"], "not-found");
  EXPECT_TRUE(r.out.empty());
}

TEST(CliBasics, BadConfigFile) {
  harness h;
  write_file_atomic(h.dir / "config.json", "{oops");
  const auto r = h.run(h.with_config({"cache", "stats"}));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_json(r.err)["error"]["code"], "config-error");
}

TEST(CliBasics, MalformedFixtureIsConfigError) {
  harness h;
  write_file_atomic(h.dir / "aggregate.json", "[1,2]");
  write_file_atomic(h.dir / "v.mp4", "x");
  const auto r = h.run(h.with_config({"analyze", (h.dir / "v.mp4").string()}));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(error_json(r.err)["error"]["code"], "fixture-parse");
}

TEST(CliBasics, DryRunTouchesNothing) {
  harness h;
  h.write_config({{"media", {{"program", "/nonexistent/media-tool"}}}});
  const auto r = h.run(h.with_config({"--dry-run", "analyze", "unused.mp4", "--duration", "95", "--chunk-secs", "30"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("chunk plan: 4 chunk(s)"), std::string::npos);
  EXPECT_NE(r.out.find("[90.000, 95.000]"), std::string::npos);
  EXPECT_NE(r.out.find("batch plan: mode=full"), std::string::npos);
  EXPECT_EQ(h.calls(), 0u);
  EXPECT_FALSE(fs::exists(h.dir / "out"));
  EXPECT_FALSE(fs::exists(h.dir / "cache"));
}

TEST(CliBasics, DryRunNeedsDuration) {
  harness h;
  const auto r = h.run(h.with_config({"analyze", "unused.mp4", "--dry-run"}));
  EXPECT_EQ(r.code, 2);
}

TEST(CliBasics, DryRunUsesConfigDefaults) {
  harness h;
  h.write_config({{"dry_run", true}, {"dry_run_duration", 3600}});
  const auto r = h.run(h.with_config({"analyze", "unused.mp4"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("6 chunk(s)"), std::string::npos);
  EXPECT_NE(r.out.find("chunk_secs=600, sample_fps=0.5"), std::string::npos);
}

TEST(CliBasics, CacheStatsAndClear) {
  harness h;
  auto r = h.run(h.with_config({"cache", "stats"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("caption: 0\n"), std::string::npos);
  EXPECT_NE(r.out.find("total: 0 entries"), std::string::npos);
}

TEST(CliConfig, FlagsOverrideFile) {
  const auto cfg = run_config_from_json(json{{"aggregation", {{"token_budget", 100}}}});
  EXPECT_EQ(cfg.pipeline.aggregation.token_budget, 100u);
  const auto defaults = run_config_from_json(json::object());
  EXPECT_FALSE(defaults.pipeline.chunking);
  EXPECT_EQ(defaults.pipeline.aggregation.token_budget, 24000u);
  EXPECT_THROW(run_config_from_json(json{{"chunking", "sometimes"}}), error);
  EXPECT_THROW(run_config_from_json(json{{"aggregation", {{"mode", "bogus"}}}}), error);
  EXPECT_THROW(run_config_from_json(json{{"backends", {{"caption", {{"endpoint", "http://x"}}}}}}), error);
}

TEST(CliConfig, RoundTrip) {
  auto j = json{{"chunking", {{"chunk_secs", 30}, {"sample_fps", 2}}},
                {"aggregation", {{"mode", "no_stt"}, {"max_batch_items", 3}}},
                {"backends", {{"aggregate", {{"endpoint", "http://h:1/v1"}, {"model_id", "m"}}}}},
                {"benchmark", {{"z", 2.576}}}};
  const auto cfg = run_config_from_json(j);
  const auto again = run_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(again), to_json(cfg));
  EXPECT_EQ(to_json(cfg)["aggregation"]["mode"], "no_stt");
  EXPECT_EQ(to_json(cfg)["backends"]["aggregate"]["model_id"], "m");
}

TEST_F(Cli, AnalyzeMatchesFold) {
  const auto r = h_.run(h_.with_config({"analyze", clip_, "--chunk-secs", "30"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, testkit::oracle_identity_fold(4, true));
  const auto report = h_.only_report();
  ASSERT_FALSE(report.is_null());
  EXPECT_EQ(report["final_text"], testkit::oracle_identity_fold(4, true));
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(h_.dir / "out"))
    manifests += e.path().filename().string().starts_with("run_manifest_");
  EXPECT_EQ(manifests, 1u);

  const auto stats = h_.run(h_.with_config({"cache", "stats"}));
  EXPECT_NE(stats.out.find("caption: 4\n"), std::string::npos) << stats.out;
  EXPECT_NE(stats.out.find("transcript: 4\n"), std::string::npos);
  EXPECT_EQ(stats.out.find("aggregate: 0\n"), std::string::npos);

  const auto declined = h_.run(h_.with_config({"cache", "clear"}), "n\n");
  EXPECT_EQ(declined.code, 0);
  EXPECT_NE(h_.run(h_.with_config({"cache", "stats"})).out.find("caption: 4\n"), std::string::npos);

  const auto cleared = h_.run(h_.with_config({"cache", "clear", "--yes"}));
  EXPECT_EQ(cleared.code, 0);
  const auto after = h_.run(h_.with_config({"cache", "stats"}));
  EXPECT_NE(after.out.find("total: 0 entries"), std::string::npos);
}

TEST_F(Cli, AblationNoStt) {
  const auto r = h_.run(h_.with_config({"analyze", clip_, "--chunk-secs", "30", "--ablation", "no-stt", "--no-cache"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = h_.only_report();
  for (const auto& a : report["chunk_artifacts"]) EXPECT_TRUE(a["transcript"].is_null());
  EXPECT_EQ(report["config"]["aggregation"]["mode"], "no_stt");
  EXPECT_FALSE(fs::exists(h_.dir / "cache"));
}

TEST_F(Cli, FlagBeatsConfigValue) {
  h_.write_config({{"aggregation", {{"token_budget", 100}}}, {"chunking", {{"chunk_secs", 60}, {"sample_fps", 1}}}});
  const auto r = h_.run(h_.with_config({"analyze", clip_, "--token-budget", "5000", "--chunk-secs", "30", "--no-cache"}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = h_.only_report();
  EXPECT_EQ(report["config"]["aggregation"]["token_budget"], 5000);
  EXPECT_EQ(report["chunk_artifacts"].size(), 4u);
}

TEST_F(Cli, RuntimeFailureExitsOne) {
  json caps = testkit::caption_fixture();
  caps["captions"].erase("2");
  write_file_atomic(h_.dir / "caption.json", caps.dump());
  const auto r = h_.run(h_.with_config({"analyze", clip_, "--chunk-secs", "30", "--no-cache"}));
  EXPECT_EQ(r.code, 1);
  const auto e = error_json(r.err);
  EXPECT_EQ(e["error"]["code"], "fixture-miss");
  EXPECT_EQ(e["error"]["stage"], "backend");
}

TEST_F(Cli, Probe) {
  const auto r = h_.run(h_.with_config({"probe", clip_}));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_NEAR(j["duration"].get<double>(), 95.0, 0.1);
  EXPECT_TRUE(j["has_audio"].get<bool>());
}

TEST_F(Cli, BenchOracleAndMalformedManifest) {
  const auto short_clip = testkit::synthetic_clip(8, true).string();
  json rules = json::array();
  std::string manifest;
  for (int i = 0; i < 3; ++i) {
    const std::string q = "Which thing is number " + std::to_string(i) + "?";
    rules.push_back({{"contains", q}, {"template", std::string("Answer: (") + static_cast<char>('A' + i) + ")"}});
    manifest += json{{"id", "rec" + std::to_string(i)}, {"video", short_clip}, {"question", q},
                     {"options", {"first", "second", "third"}}, {"answer", i}, {"duration_class", "short"}}
                    .dump() +
                "\n";
  }
  write_file_atomic(h_.dir / "aggregate.json", json{{"kind", "template"}, {"template", "no idea"}, {"rules", rules}}.dump());
  write_file_atomic(h_.dir / "caption.json", testkit::caption_fixture(1).dump());
  write_file_atomic(h_.dir / "m.jsonl", manifest);
  auto r = h_.run(h_.with_config({"bench", (h_.dir / "m.jsonl").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy: 100.0\n"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(h_.dir / "out/metrics.json"));
  EXPECT_TRUE(fs::exists(h_.dir / "out/reports/rec0.json"));
  const auto metrics = json::parse(read_file(h_.dir / "out/metrics.json"));
  EXPECT_EQ(metrics["correct"], 3);

  write_file_atomic(h_.dir / "bad.jsonl", manifest + "{\"id\":\"x\"}\nnot json\n");
  r = h_.run(h_.with_config({"bench", (h_.dir / "bad.jsonl").string()}));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 4"), std::string::npos);
  EXPECT_NE(r.err.find("line 5"), std::string::npos);
}
