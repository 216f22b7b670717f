#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qmavis/core.hpp"
#include "qmavis/util.hpp"

namespace qmavis {

struct frame {
  double timestamp;  // seconds from the start of the video
  std::string jpeg;  // encoded image bytes
  std::filesystem::path file;
};

struct frame_set {
  int chunk_index = 0;
  std::vector<frame> frames;
};

inline constexpr int audio_sample_rate = 16000;

struct audio_segment {
  int chunk_index = 0;
  time_range range{0.0, 1.0};
  std::string wav;  // RIFF/WAVE, mono, 16 kHz, 16-bit PCM
  double duration = 0.0;
  std::filesystem::path file;
};

// Argument templates for the external media tool. Placeholders:
//   {input} {output} {start} {duration} {fps} {count} {max_side} {quality} {qscale}
// Frame templates must write `frame_%05d.jpg` files (numbered from 0) into
// {output}; audio templates must write the WAV file {output}.
struct media_tool_config {
  std::string program = "ffmpeg";
  std::vector<std::string> probe_args{"-hide_banner", "-nostdin", "-i", "{input}",
                                      "-f", "null", "-t", "0", "-"};
  std::vector<std::string> frames_args{
      "-hide_banner", "-nostdin", "-loglevel", "error", "-y",
      "-ss", "{start}", "-t", "{duration}", "-i", "{input}",
      "-vf", "fps={fps},scale='min({max_side},iw)':'min({max_side},ih)':force_original_aspect_ratio=decrease",
      "-frames:v", "{count}", "-start_number", "0", "-q:v", "{qscale}",
      "{output}/frame_%05d.jpg"};
  std::vector<std::string> audio_args{
      "-hide_banner", "-nostdin", "-loglevel", "error", "-y",
      "-ss", "{start}", "-t", "{duration}", "-i", "{input}",
      "-vn", "-ac", "1", "-ar", "16000", "-c:a", "pcm_s16le", "-f", "wav", "{output}"};
  std::vector<std::string> version_args{"-version"};

  // Probe output parsing. The duration pattern captures either one group
  // (seconds) or three (hours, minutes, seconds).
  std::string duration_regex = R"(Duration:\s*(\d+):(\d+):(\d+(?:\.\d+)?))";
  std::string video_stream_regex = R"(Stream #\S+.*: Video:)";
  std::string audio_stream_regex = R"(Stream #\S+.*: Audio:)";
  std::string fps_regex = R"(Video:.*?(\d+(?:\.\d+)?) fps)";
  std::string size_regex = R"(Video:.*?\b(\d{2,5})x(\d{2,5})\b)";

  int jpeg_quality = 85;
  int max_side = 768;
  std::size_t parallelism = 4;
};

// Number of frames sampled from a range: max(1, floor(length * fps)).
std::size_t frame_count(const time_range& range, double sample_fps);

std::string expand_template(const std::string& arg, const std::map<std::string, std::string>& values);

// Wraps one external media tool. Thread-safe; concurrent invocations are
// capped by `parallelism`.
class media_tool {
 public:
  explicit media_tool(media_tool_config config = {});

  const media_tool_config& config() const noexcept { return config_; }

  video_meta probe(const std::filesystem::path& path) const;

  // Frames land in `chunk_dir` as frame_{k:05}.jpg.
  frame_set extract_frames(const video_meta& video, int chunk_index, const time_range& range,
                           double sample_fps, const std::filesystem::path& chunk_dir) const;

  // The segment is padded or trimmed to exactly round(range.length * 16000)
  // samples and written to `chunk_dir/audio.wav`.
  audio_segment extract_audio(const video_meta& video, int chunk_index, const time_range& range,
                              const std::filesystem::path& chunk_dir) const;

  std::string version() const;

  std::size_t invocations() const noexcept { return invocations_; }

 private:
  process_result run(const std::vector<std::string>& args,
                     const std::map<std::string, std::string>& values,
                     std::vector<std::string>* argv_out = nullptr) const;
  void check_range(const video_meta& video, const time_range& range) const;

  media_tool_config config_;
  mutable admission_gate gate_;
  mutable std::atomic<std::size_t> invocations_{0};
};

// Directory name for a chunk's extracted media: chunk_{index:04}.
std::string chunk_dir_name(int chunk_index);

// WAV helpers for 16-bit mono PCM.
std::string make_wav(std::string_view pcm, int sample_rate = audio_sample_rate);
double wav_duration(std::string_view wav);

}  // namespace qmavis
