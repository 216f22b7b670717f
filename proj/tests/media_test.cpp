#include <regex>

#include <gtest/gtest.h>

#include "qmavis/error.hpp"
#include "qmavis/media.hpp"
#include "qmavis/util.hpp"
#include "support.hpp"

using namespace qmavis;
namespace fs = std::filesystem;

#define REQUIRE_MEDIA_TOOL() \
  if (testkit::ffmpeg_program().empty()) GTEST_SKIP() << "no media tool configured"

namespace {

// Duration of any media file as reported by the tool itself.
double tool_duration(const fs::path& p) {
  const auto r = run_process({testkit::ffmpeg_program(), "-hide_banner", "-nostdin", "-i", p.string()});
  std::smatch m;
  const std::regex re(R"(Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?))");
  if (!std::regex_search(r.output, m, re)) return -1;
  return std::stod(m[1]) * 3600 + std::stod(m[2]) * 60 + std::stod(m[3]);
}

int16_t max_abs_sample(const std::string& wav) {
  int16_t peak = 0;
  for (std::size_t i = 44; i + 1 < wav.size(); i += 2) {
    const auto s = static_cast<int16_t>(static_cast<uint8_t>(wav[i]) | (static_cast<uint8_t>(wav[i + 1]) << 8));
    peak = std::max<int16_t>(peak, static_cast<int16_t>(s == INT16_MIN ? INT16_MAX : std::abs(s)));
  }
  return peak;
}

}  // namespace

TEST(FrameCount, Rule) {
  EXPECT_EQ(frame_count({0, 60}, 1.0), 60u);
  EXPECT_EQ(frame_count({0, 600}, 0.5), 300u);
  EXPECT_EQ(frame_count({0, 1}, 0.5), 1u);
  EXPECT_EQ(frame_count({90, 95}, 1.0), 5u);
  EXPECT_EQ(frame_count({0, 0.3}, 10.0), 3u);
}

TEST(ExpandTemplate, Substitutes) {
  EXPECT_EQ(expand_template("fps={fps}:{fps}", {{"fps", "0.5"}}), "fps=0.5:0.5");
  EXPECT_EQ(expand_template("{unknown}", {}), "{unknown}");
}

TEST(Wav, HeaderRoundTrip) {
  const std::string pcm(32000, '\0');
  const auto wav = make_wav(pcm);
  EXPECT_EQ(wav.size(), 44u + pcm.size());
  EXPECT_EQ(wav.substr(0, 4), "RIFF");
  EXPECT_DOUBLE_EQ(wav_duration(wav), 1.0);
}

TEST(ChunkDirName, Padded) { EXPECT_EQ(chunk_dir_name(7), "chunk_0007"); }

TEST(Probe, ClipWithAudio) {
  REQUIRE_MEDIA_TOOL();
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(testkit::synthetic_clip(95, true));
  EXPECT_NEAR(meta.duration, 95.0, 0.1);
  EXPECT_TRUE(meta.has_audio);
  EXPECT_EQ(meta.width, 320);
  EXPECT_EQ(meta.height, 240);
  EXPECT_NEAR(meta.native_fps, 10.0, 1e-6);
}

TEST(Probe, ClipWithoutAudio) {
  REQUIRE_MEDIA_TOOL();
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(testkit::synthetic_clip(10, false));
  EXPECT_FALSE(meta.has_audio);
  EXPECT_NEAR(meta.duration, 10.0, 0.1);
}

TEST(Probe, MissingFile) {
  const media_tool tool(testkit::media_config());
  try {
    tool.probe("/nonexistent/video.mp4");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::not_found);
  }
}

TEST(Probe, CorruptContainer) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  write_file_atomic(dir / "bad.mp4", "this is not a video");
  const media_tool tool(testkit::media_config());
  try {
    tool.probe(dir / "bad.mp4");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::probe_error);
    EXPECT_NE(std::string(e.what()).find("bad.mp4"), std::string::npos);
  }
}

TEST(ExtractFrames, CountsAndTimestamps) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(testkit::synthetic_clip(95, true));

  const auto sixty = tool.extract_frames(meta, 1, {0, 60}, 1.0, dir / "c1");
  ASSERT_EQ(sixty.frames.size(), 60u);
  EXPECT_EQ(sixty.chunk_index, 1);
  for (std::size_t k = 0; k < sixty.frames.size(); ++k) {
    EXPECT_DOUBLE_EQ(sixty.frames[k].timestamp, static_cast<double>(k));
    EXPECT_EQ(sixty.frames[k].jpeg.substr(0, 2), "\xFF\xD8");
    EXPECT_TRUE(fs::exists(sixty.frames[k].file));
  }

  const auto tail = tool.extract_frames(meta, 4, {90, 95}, 1.0, dir / "c4");
  ASSERT_EQ(tail.frames.size(), 5u);
  EXPECT_DOUBLE_EQ(tail.frames.front().timestamp, 90.0);

  const auto single = tool.extract_frames(meta, 2, {30, 31}, 0.5, dir / "c2");
  EXPECT_EQ(single.frames.size(), 1u);
}

TEST(ExtractFrames, LongChunkHalfFps) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(testkit::synthetic_clip(600, false));
  const auto frames = tool.extract_frames(meta, 1, {0, 600}, 0.5, dir / "c1");
  EXPECT_EQ(frames.frames.size(), 300u);
  EXPECT_DOUBLE_EQ(frames.frames.back().timestamp, 598.0);
}

TEST(ExtractFrames, ToolFailureCarriesCommand) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  auto cfg = testkit::media_config();
  const auto meta = media_tool(cfg).probe(testkit::synthetic_clip(10, false));
  cfg.frames_args = {"-hide_banner", "-i", "{input}", "-vf", "nosuchfilter", "{output}/frame_%05d.jpg"};
  const media_tool broken(cfg);
  try {
    broken.extract_frames(meta, 1, {0, 5}, 1.0, dir / "c1");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::media_extraction);
    EXPECT_NE(std::string(e.what()).find("nosuchfilter"), std::string::npos);
  }
}

TEST(ExtractAudio, ThirtySecondSegment) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(testkit::synthetic_clip(95, true));
  const auto seg = tool.extract_audio(meta, 2, {30, 60}, dir / "c2");
  EXPECT_NEAR(seg.duration, 30.0, 1e-9);
  EXPECT_NEAR(tool_duration(seg.file), 30.0, 0.05);
  EXPECT_EQ(seg.wav.size(), 44u + 30u * audio_sample_rate * 2u);
  EXPECT_GT(max_abs_sample(seg.wav), 1000);

  const auto tail = tool.extract_audio(meta, 4, {90, 95}, dir / "c4");
  EXPECT_NEAR(tail.duration, 5.0, 1e-9);
}

TEST(ExtractAudio, SilentStreamIsValid) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  const auto clip = dir / "silent.mp4";
  const auto r = run_process({testkit::ffmpeg_program(), "-hide_banner", "-nostdin", "-loglevel", "error", "-y", "-f",
                              "lavfi", "-i", "testsrc=duration=6:size=160x120:rate=5", "-f", "lavfi", "-i",
                              "anullsrc=r=16000:cl=mono", "-t", "6", "-c:v", "mpeg4", "-c:a", "aac", "-shortest",
                              clip.string()});
  ASSERT_EQ(r.exit_code, 0) << r.output;
  const media_tool tool(testkit::media_config());
  const auto meta = tool.probe(clip);
  ASSERT_TRUE(meta.has_audio);
  const auto seg = tool.extract_audio(meta, 1, {0, 3}, dir / "c1");
  EXPECT_NEAR(seg.duration, 3.0, 1e-9);
  EXPECT_EQ(max_abs_sample(seg.wav), 0);
}

TEST(ExtractAudio, Errors) {
  REQUIRE_MEDIA_TOOL();
  testkit::temp_dir dir;
  const media_tool tool(testkit::media_config());
  const auto silent = tool.probe(testkit::synthetic_clip(10, false));
  try {
    tool.extract_audio(silent, 1, {0, 5}, dir / "c1");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::no_audio);
  }
  const auto meta = tool.probe(testkit::synthetic_clip(95, true));
  try {
    tool.extract_audio(meta, 5, {90, 120}, dir / "c5");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_argument);
  }
}

TEST(MediaTool, CountsInvocationsAndVersion) {
  REQUIRE_MEDIA_TOOL();
  const media_tool tool(testkit::media_config());
  EXPECT_EQ(tool.invocations(), 0u);
  EXPECT_NE(tool.version().find("ffmpeg"), std::string::npos);
  tool.probe(testkit::synthetic_clip(10, false));
  EXPECT_EQ(tool.invocations(), 2u);
}
