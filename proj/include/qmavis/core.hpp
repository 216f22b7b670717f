#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qmavis/error.hpp"

namespace qmavis {

// A span of media time in seconds. Ranges are treated as half-open
// [start, end) except for the final chunk of a plan, which includes the end.
class time_range {
 public:
  time_range(double start, double end);

  double start() const noexcept { return start_; }
  double end() const noexcept { return end_; }
  double length() const noexcept { return end_ - start_; }

  bool overlaps(const time_range& other) const noexcept {
    return start_ < other.end_ && other.start_ < end_;
  }

  friend bool operator==(const time_range&, const time_range&) = default;

 private:
  double start_;
  double end_;
};

struct chunk {
  int index;  // 1-based
  time_range range;
};

class chunk_plan {
 public:
  chunk_plan(double video_duration, std::vector<chunk> chunks);

  double video_duration() const noexcept { return video_duration_; }
  const std::vector<chunk>& chunks() const noexcept { return chunks_; }
  std::size_t size() const noexcept { return chunks_.size(); }
  const chunk& operator[](std::size_t i) const { return chunks_[i]; }

 private:
  double video_duration_;
  std::vector<chunk> chunks_;
};

class chunking_params {
 public:
  chunking_params(double chunk_secs, double sample_fps);

  double chunk_secs() const noexcept { return chunk_secs_; }
  double sample_fps() const noexcept { return sample_fps_; }

  friend bool operator==(const chunking_params&, const chunking_params&) = default;

 private:
  double chunk_secs_;
  double sample_fps_;
};

// Duration-dependent parameter choice: short and medium videos use 60 s
// chunks at 1 fps, long videos 600 s chunks at 0.5 fps.
struct auto_chunking {
  double long_threshold_secs = 900.0;
  chunking_params short_params{60.0, 1.0};
  chunking_params long_params{600.0, 0.5};
};

struct video_meta {
  std::filesystem::path path;
  double duration = 0.0;
  bool has_audio = false;
  double native_fps = 0.0;
  int width = 0;
  int height = 0;
};

inline constexpr std::string_view default_chunk_prompt = "Describe this video in detail";
inline constexpr std::string_view default_aggregation_prompt =
    "You are given captions and audio transcripts of consecutive chunks of one long video. "
    "Aggregate them into a complete, coherent report of the whole video, paying attention to "
    "the nuances of different scenes.";
inline constexpr std::string_view question_placeholder = "{question}";

class prompt_set {
 public:
  prompt_set(std::string chunk_prompt = std::string(default_chunk_prompt),
             std::string aggregation_prompt = std::string(default_aggregation_prompt));

  const std::string& chunk_prompt() const noexcept { return chunk_prompt_; }
  const std::string& aggregation_prompt() const noexcept { return aggregation_prompt_; }

 private:
  std::string chunk_prompt_;
  std::string aggregation_prompt_;
};

struct subtitle_cue {
  time_range range;
  std::string text;
};

// Splits [0, duration] into ceil(duration / chunk_secs) contiguous chunks.
// The last chunk keeps whatever remains and may be shorter.
chunk_plan plan_chunks(double duration, double chunk_secs);

chunking_params select_params(double duration, const auto_chunking& config = {});

// Substitutes every `{question}` in the template. A template without the
// placeholder is returned unchanged, even if a question is supplied.
std::string build_chunk_prompt(std::string_view prompt_template,
                               const std::optional<std::string>& question);

}  // namespace qmavis
