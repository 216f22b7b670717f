#include "qmavis/media.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <regex>

#include <fmt/format.h>

namespace qmavis {
namespace fs = std::filesystem;

namespace {

std::string seconds_arg(double secs) { return fmt::format("{:.6f}", secs); }

int quality_to_qscale(int quality) {
  const double q = 2.0 + (100.0 - std::clamp(quality, 0, 100)) * 29.0 / 100.0;
  return std::clamp(static_cast<int>(std::lround(q)), 2, 31);
}

std::uint32_t read_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
  return v;
}

std::uint16_t read_u16(std::string_view s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

struct pcm_view {
  int sample_rate = 0;
  int channels = 0;
  int bits = 0;
  std::string_view data;
};

pcm_view parse_wav(std::string_view wav) {
  require(wav.size() >= 12 && wav.substr(0, 4) == "RIFF" && wav.substr(8, 4) == "WAVE",
          errc::media_extraction, "not a RIFF/WAVE file");
  pcm_view out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= wav.size()) {
    const auto id = wav.substr(pos, 4);
    const std::size_t size = std::min<std::size_t>(read_u32(wav, pos + 4), wav.size() - pos - 8);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      require(size >= 16, errc::media_extraction, "truncated WAV fmt chunk");
      out.channels = read_u16(wav, body + 2);
      out.sample_rate = static_cast<int>(read_u32(wav, body + 4));
      out.bits = read_u16(wav, body + 14);
      have_fmt = true;
    } else if (id == "data") {
      require(have_fmt, errc::media_extraction, "WAV data chunk precedes fmt chunk");
      out.data = wav.substr(body, size);
      return out;
    }
    pos = body + size + (size & 1);
  }
  fail(errc::media_extraction, "WAV file has no data chunk");
}

}  // namespace

std::size_t frame_count(const time_range& range, double sample_fps) {
  require(sample_fps > 0.0, errc::invalid_argument, "sample_fps must be positive");
  // The epsilon absorbs products such as 0.1 * 30 landing just below an integer.
  const double n = std::floor(range.length() * sample_fps + 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

std::string expand_template(const std::string& arg, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < arg.size()) {
    const auto open = arg.find('{', pos);
    if (open == std::string::npos) break;
    const auto close = arg.find('}', open);
    if (close == std::string::npos) break;
    const auto name = arg.substr(open + 1, close - open - 1);
    out.append(arg, pos, open - pos);
    if (const auto it = values.find(name); it != values.end()) {
      out += it->second;
    } else {
      out.append(arg, open, close - open + 1);
    }
    pos = close + 1;
  }
  out.append(arg, pos);
  return out;
}

std::string chunk_dir_name(int chunk_index) { return fmt::format("chunk_{:04}", chunk_index); }

std::string make_wav(std::string_view pcm, int sample_rate) {
  std::string out;
  out.reserve(44 + pcm.size());
  out += "RIFF";
  put_u32(out, static_cast<std::uint32_t>(36 + pcm.size()));
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, static_cast<std::uint32_t>(pcm.size()));
  out.append(pcm);
  return out;
}

double wav_duration(std::string_view wav) {
  const auto pcm = parse_wav(wav);
  require(pcm.sample_rate > 0 && pcm.channels > 0 && pcm.bits > 0, errc::media_extraction,
          "WAV header has an invalid format");
  const double bytes_per_sec = static_cast<double>(pcm.sample_rate) * pcm.channels * (pcm.bits / 8);
  return static_cast<double>(pcm.data.size()) / bytes_per_sec;
}

media_tool::media_tool(media_tool_config config)
    : config_(std::move(config)), gate_(std::max<std::size_t>(1, config_.parallelism)) {}

process_result media_tool::run(const std::vector<std::string>& args,
                               const std::map<std::string, std::string>& values,
                               std::vector<std::string>* argv_out) const {
  std::vector<std::string> argv{config_.program};
  for (const auto& a : args) argv.push_back(expand_template(a, values));
  if (argv_out) *argv_out = argv;
  admission_gate::permit permit(gate_);
  ++invocations_;
  return run_process(argv);
}

void media_tool::check_range(const video_meta& video, const time_range& range) const {
  // Container durations are rounded to centiseconds; allow that much slack.
  require(range.end() <= video.duration + 0.01, errc::invalid_argument,
          fmt::format("range [{}, {}] lies outside the video duration {}", range.start(), range.end(),
                      video.duration));
}

video_meta media_tool::probe(const fs::path& path) const {
  require(fs::exists(path), errc::not_found, fmt::format("video not found: {}", path.string()));
  std::vector<std::string> argv;
  const auto result = run(config_.probe_args, {{"input", path.string()}}, &argv);
  const auto& text = result.output;
  if (result.exit_code != 0)
    fail(errc::probe_error,
         fmt::format("probe of {} failed (exit {}): {}\n{}", path.string(), result.exit_code,
                     join_command(argv), text));

  std::smatch m;
  if (!std::regex_search(text, m, std::regex(config_.video_stream_regex)))
    fail(errc::probe_error, fmt::format("no video stream in {}:\n{}", path.string(), text));

  video_meta meta;
  meta.path = path;
  if (!std::regex_search(text, m, std::regex(config_.duration_regex)))
    fail(errc::probe_error, fmt::format("cannot read duration of {}:\n{}", path.string(), text));
  if (m.size() >= 4) {
    meta.duration = std::stod(m[1]) * 3600.0 + std::stod(m[2]) * 60.0 + std::stod(m[3]);
  } else if (m.size() >= 2) {
    meta.duration = std::stod(m[1]);
  }
  if (!(meta.duration > 0.0))
    fail(errc::probe_error, fmt::format("non-positive duration for {}", path.string()));

  meta.has_audio = std::regex_search(text, std::regex(config_.audio_stream_regex));
  if (std::regex_search(text, m, std::regex(config_.fps_regex))) meta.native_fps = std::stod(m[1]);
  if (std::regex_search(text, m, std::regex(config_.size_regex))) {
    meta.width = std::stoi(m[1]);
    meta.height = std::stoi(m[2]);
  }
  return meta;
}

frame_set media_tool::extract_frames(const video_meta& video, int chunk_index, const time_range& range,
                                     double sample_fps, const fs::path& chunk_dir) const {
  check_range(video, range);
  const std::size_t count = frame_count(range, sample_fps);

  fs::create_directories(chunk_dir);
  const auto tmp = make_unique_dir(chunk_dir.parent_path(), ".frames-");
  struct cleanup {
    fs::path dir;
    ~cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } guard{tmp};

  const std::map<std::string, std::string> values{
      {"input", video.path.string()},
      {"output", tmp.string()},
      {"start", seconds_arg(range.start())},
      {"duration", seconds_arg(range.length())},
      {"fps", fmt::format("{}", sample_fps)},
      {"count", std::to_string(count)},
      {"max_side", std::to_string(config_.max_side > 0 ? config_.max_side : 65535)},
      {"quality", std::to_string(config_.jpeg_quality)},
      {"qscale", std::to_string(quality_to_qscale(config_.jpeg_quality))},
  };
  std::vector<std::string> argv;
  const auto result = run(config_.frames_args, values, &argv);
  if (result.exit_code != 0)
    fail(errc::media_extraction,
         fmt::format("frame extraction for chunk {} failed (exit {}): {}\n{}", chunk_index,
                     result.exit_code, join_command(argv), result.output));

  std::vector<fs::path> produced;
  for (const auto& entry : fs::directory_iterator(tmp)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("frame_") && name.ends_with(".jpg")) produced.push_back(entry.path());
  }
  std::sort(produced.begin(), produced.end());
  if (produced.size() < count)
    fail(errc::media_extraction,
         fmt::format("chunk {}: expected {} frames, tool produced {}: {}\n{}", chunk_index, count,
                     produced.size(), join_command(argv), result.output));

  for (const auto& entry : fs::directory_iterator(chunk_dir)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("frame_") && name.ends_with(".jpg")) fs::remove(entry.path());
  }

  frame_set out;
  out.chunk_index = chunk_index;
  out.frames.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto dest = chunk_dir / fmt::format("frame_{:05}.jpg", k);
    fs::rename(produced[k], dest);
    out.frames.push_back({range.start() + static_cast<double>(k) / sample_fps, read_file(dest), dest});
  }
  return out;
}

audio_segment media_tool::extract_audio(const video_meta& video, int chunk_index, const time_range& range,
                                        const fs::path& chunk_dir) const {
  require(video.has_audio, errc::no_audio, fmt::format("{} has no audio stream", video.path.string()));
  check_range(video, range);

  fs::create_directories(chunk_dir);
  const auto tmp = make_unique_dir(chunk_dir.parent_path(), ".audio-");
  struct cleanup {
    fs::path dir;
    ~cleanup() {
      std::error_code ec;
      fs::remove_all(dir, ec);
    }
  } guard{tmp};

  const auto tmp_wav = tmp / "audio.wav";
  const std::map<std::string, std::string> values{
      {"input", video.path.string()},
      {"output", tmp_wav.string()},
      {"start", seconds_arg(range.start())},
      {"duration", seconds_arg(range.length())},
  };
  std::vector<std::string> argv;
  const auto result = run(config_.audio_args, values, &argv);
  if (result.exit_code != 0 || !fs::exists(tmp_wav))
    fail(errc::media_extraction,
         fmt::format("audio extraction for chunk {} failed (exit {}): {}\n{}", chunk_index,
                     result.exit_code, join_command(argv), result.output));

  const auto raw = read_file(tmp_wav);
  const auto pcm = parse_wav(raw);
  require(pcm.sample_rate == audio_sample_rate && pcm.channels == 1 && pcm.bits == 16,
          errc::media_extraction,
          fmt::format("chunk {}: expected 16 kHz mono 16-bit PCM, got {} Hz, {} ch, {} bit", chunk_index,
                      pcm.sample_rate, pcm.channels, pcm.bits));

  const auto samples = static_cast<std::size_t>(std::llround(range.length() * audio_sample_rate));
  std::string data(pcm.data.substr(0, std::min(pcm.data.size(), samples * 2)));
  data.resize(samples * 2, '\0');

  audio_segment out;
  out.chunk_index = chunk_index;
  out.range = range;
  out.wav = make_wav(data);
  out.duration = static_cast<double>(samples) / audio_sample_rate;
  out.file = chunk_dir / "audio.wav";
  write_file_atomic(out.file, out.wav);
  return out;
}

std::string media_tool::version() const {
  try {
    const auto result = run(config_.version_args, {});
    const auto line = result.output.substr(0, result.output.find('\n'));
    return line.empty() ? config_.program : line;
  } catch (const error&) {
    return config_.program + " (unavailable)";
  }
}

}  // namespace qmavis
