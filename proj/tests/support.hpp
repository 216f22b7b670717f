#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmavis/fusion.hpp"
#include "qmavis/media.hpp"

namespace qmavis::testkit {

// Removed on destruction.
class temp_dir {
 public:
  explicit temp_dir(const std::string& prefix = "qmavis-test");
  ~temp_dir();
  temp_dir(const temp_dir&) = delete;
  temp_dir& operator=(const temp_dir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Empty when no media tool was found at configure time.
std::string ffmpeg_program();
media_tool_config media_config();

// testsrc video, optionally with a sine tone track. Cached per process.
std::filesystem::path synthetic_clip(double seconds, bool with_audio);

// 95 s mock fixture: 4 chunks of 30 s.
inline constexpr double fixture_secs = 95.0;
inline constexpr double fixture_chunk_secs = 30.0;
inline constexpr int fixture_chunks = 4;

std::string fixture_caption(int chunk);
std::string fixture_transcript(int chunk);
nlohmann::json caption_fixture(int chunks = fixture_chunks);
nlohmann::json transcript_fixture(int chunks = fixture_chunks, double chunk_secs = fixture_chunk_secs);

// Written out by hand from the rendering rule "[label]:\n{text}\n".
std::string oracle_item(const std::string& label, const std::string& text);
std::string oracle_identity_fold(int chunks, bool with_transcripts);

struct oracle_item_t {
  std::string label;
  std::string text;
  int group;
};

// Replays greedy grouped packing and a concatenating aggregator outside the
// library. Returns nullopt when some item would need truncation.
std::optional<std::string> oracle_concat_fold(const std::vector<oracle_item_t>& leaves, const std::string& prompt,
                                              std::size_t budget, std::size_t max_items, int* levels = nullptr);

// Sum of calls() over the configured backends.
std::size_t total_calls(const pipeline_backends& b);

}  // namespace qmavis::testkit
