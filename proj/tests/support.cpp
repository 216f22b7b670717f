#include "support.hpp"

#include <map>
#include <mutex>
#include <random>

#include <fmt/format.h>

#include "qmavis/util.hpp"

namespace qmavis::testkit {
namespace fs = std::filesystem;

temp_dir::temp_dir(const std::string& prefix) { path_ = make_unique_dir(fs::temp_directory_path(), prefix); }

temp_dir::~temp_dir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string ffmpeg_program() { return QMAVIS_TEST_FFMPEG; }

media_tool_config media_config() {
  media_tool_config c;
  c.program = ffmpeg_program();
  return c;
}

fs::path synthetic_clip(double seconds, bool with_audio) {
  static std::mutex mu;
  static std::map<std::pair<double, bool>, fs::path> made;
  static temp_dir dir("qmavis-clips");
  std::lock_guard lock(mu);
  const auto key = std::make_pair(seconds, with_audio);
  if (auto it = made.find(key); it != made.end()) return it->second;

  const auto out = dir / fmt::format("clip_{}_{}.mp4", seconds, with_audio ? "av" : "v");
  std::vector<std::string> argv{ffmpeg_program(), "-hide_banner", "-nostdin", "-loglevel", "error", "-y",
                                "-f", "lavfi", "-i", fmt::format("testsrc=duration={}:size=320x240:rate=10", seconds)};
  if (with_audio) {
    argv.insert(argv.end(), {"-f", "lavfi", "-i", fmt::format("sine=frequency=440:duration={}", seconds)});
    argv.insert(argv.end(), {"-c:a", "aac"});
  }
  argv.insert(argv.end(), {"-c:v", "mpeg4", "-pix_fmt", "yuv420p", "-shortest", out.string()});
  const auto r = run_process(argv);
  if (r.exit_code != 0) throw std::runtime_error("clip synthesis failed: " + r.output);
  made[key] = out;
  return out;
}

std::string fixture_caption(int chunk) { return fmt::format("MOCK-CAPTION[{}]", chunk); }
std::string fixture_transcript(int chunk) { return fmt::format("MOCK-SPEECH[{}]", chunk); }

nlohmann::json caption_fixture(int chunks) {
  nlohmann::json captions = nlohmann::json::object();
  for (int i = 1; i <= chunks; ++i) captions[std::to_string(i)] = fixture_caption(i);
  return {{"captions", captions}};
}

nlohmann::json transcript_fixture(int chunks, double chunk_secs) {
  nlohmann::json cues = nlohmann::json::array();
  for (int i = 1; i <= chunks; ++i) {
    const double start = (i - 1) * chunk_secs + 1.0;
    cues.push_back({{"start", start}, {"end", start + 2.0}, {"text", fixture_transcript(i)}});
  }
  return {{"cues", cues}};
}

std::string oracle_item(const std::string& label, const std::string& text) {
  return "[" + label + "]:\n" + text + "\n";
}

std::string oracle_identity_fold(int chunks, bool with_transcripts) {
  std::string s;
  for (int i = 1; i <= chunks; ++i) {
    s += oracle_item("Chunk " + std::to_string(i) + " | Video", fixture_caption(i));
    if (with_transcripts) s += oracle_item("Chunk " + std::to_string(i) + " | Audio", fixture_transcript(i));
  }
  return s;
}

namespace {

std::size_t tokens_of(std::size_t bytes) { return (bytes + 3) / 4; }

}  // namespace

std::optional<std::string> oracle_concat_fold(const std::vector<oracle_item_t>& leaves, const std::string& prompt,
                                              std::size_t budget, std::size_t max_items, int* levels) {
  const std::size_t p = tokens_of(prompt.size());
  const std::size_t cap = max_items == 0 ? static_cast<std::size_t>(-1) : max_items;
  auto fits = [&](std::size_t bytes) { return p + tokens_of(bytes) <= budget; };

  std::vector<oracle_item_t> items = leaves;
  for (int level = 0;; ++level) {
    std::vector<std::size_t> sizes;
    for (const auto& it : items) {
      sizes.push_back(oracle_item(it.label, it.text).size());
      if (!fits(sizes.back())) return std::nullopt;
    }
    // Walk group by group.
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> cur;
    std::size_t cur_bytes = 0;
    std::size_t i = 0;
    while (i < items.size()) {
      std::size_t j = i, g_bytes = 0;
      while (j < items.size() && items[j].group == items[i].group) g_bytes += sizes[j++];
      const std::size_t g_count = j - i;
      if (!cur.empty()) {
        const bool here = fits(cur_bytes + g_bytes) && cur.size() + g_count <= cap;
        const bool fresh = fits(g_bytes) && g_count <= cap;
        if (!here && fresh) {
          batches.push_back(cur);
          cur.clear();
          cur_bytes = 0;
        }
      }
      for (std::size_t k = i; k < j; ++k) {
        if (!cur.empty() && (!fits(cur_bytes + sizes[k]) || cur.size() >= cap)) {
          batches.push_back(cur);
          cur.clear();
          cur_bytes = 0;
        }
        cur.push_back(k);
        cur_bytes += sizes[k];
      }
      i = j;
    }
    if (!cur.empty()) batches.push_back(cur);

    std::vector<std::string> outputs;
    for (const auto& b : batches) {
      std::string body;
      for (auto k : b) body += oracle_item(items[k].label, items[k].text);
      outputs.push_back(prompt + "\n" + body);
    }
    if (outputs.size() == 1) {
      if (levels) *levels = level + 1;
      return outputs.front();
    }
    std::vector<oracle_item_t> next;
    for (std::size_t b = 0; b < outputs.size(); ++b)
      next.push_back({"Summary " + std::to_string(b + 1), outputs[b], static_cast<int>(b) + 1});
    items = std::move(next);
    if (level > 64) return std::nullopt;
  }
}

std::size_t total_calls(const pipeline_backends& b) {
  std::size_t n = 0;
  for (const auto* p : {b.caption.get(), b.transcribe.get(), b.aggregate.get()})
    if (p) n += p->calls();
  return n;
}

}  // namespace qmavis::testkit
