#include "qmavis/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "qmavis/util.hpp"

namespace qmavis {
namespace fs = std::filesystem;

namespace {

std::string summarize_problems(const std::vector<std::pair<std::size_t, std::string>>& problems) {
  std::string out = fmt::format("manifest has {} invalid line(s)", problems.size());
  for (const auto& [line, msg] : problems) out += fmt::format("\n  line {}: {}", line, msg);
  return out;
}

bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80 || c == '\'' || c == '_';
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string safe_file_stem(std::string_view id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  if (out.empty() || out == "." || out == "..") out = "record";
  return out;
}

}  // namespace

std::string_view to_string(duration_class c) noexcept {
  switch (c) {
    case duration_class::short_video: return "short";
    case duration_class::medium_video: return "medium";
    case duration_class::long_video: return "long";
    case duration_class::unknown: return "unknown";
  }
  return "unknown";
}

duration_class duration_class_from_string(std::string_view name) {
  if (name == "short") return duration_class::short_video;
  if (name == "medium") return duration_class::medium_video;
  if (name == "long") return duration_class::long_video;
  if (name == "unknown") return duration_class::unknown;
  fail(errc::manifest_error, fmt::format("unknown duration class '{}'", name));
}

manifest_error::manifest_error(std::vector<std::pair<std::size_t, std::string>> problems)
    : error(errc::manifest_error, summarize_problems(problems)), problems_(std::move(problems)) {}

manifest load_manifest(const fs::path& path) {
  require(fs::exists(path), errc::not_found, fmt::format("manifest not found: {}", path.string()));
  std::ifstream in(path);
  require(static_cast<bool>(in), errc::manifest_error, fmt::format("cannot read manifest {}", path.string()));
  const auto base = path.parent_path();

  manifest out;
  std::vector<std::pair<std::size_t, std::string>> problems;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      require(j.is_object(), errc::manifest_error, "record is not a JSON object");
      benchmark_record r;
      r.id = j.at("id").get<std::string>();
      require(!r.id.empty(), errc::manifest_error, "id must not be empty");
      require(seen_ids.insert(r.id).second, errc::manifest_error, fmt::format("duplicate id '{}'", r.id));
      const auto video = j.at("video").get<std::string>();
      require(!video.empty(), errc::manifest_error, "video must not be empty");
      r.video = fs::path(video).is_absolute() ? fs::path(video) : base / video;
      r.question = j.at("question").get<std::string>();
      require(!r.question.empty(), errc::manifest_error, "question must not be empty");
      r.options = j.at("options").get<std::vector<std::string>>();
      require(r.options.size() >= 2 && r.options.size() <= 26, errc::manifest_error,
              fmt::format("options must number 2..26, got {}", r.options.size()));
      std::set<std::string> distinct;
      for (const auto& o : r.options) {
        require(!o.empty(), errc::manifest_error, "option texts must not be empty");
        require(distinct.insert(o).second, errc::manifest_error, fmt::format("duplicate option '{}'", o));
      }
      const auto& answer = j.at("answer");
      require(answer.is_number_integer(), errc::manifest_error, "answer must be an integer");
      const auto gold = answer.get<long long>();
      require(gold >= 0 && gold < static_cast<long long>(r.options.size()), errc::manifest_error,
              fmt::format("answer {} out of range for {} options", gold, r.options.size()));
      r.gold_index = static_cast<std::size_t>(gold);
      r.duration = duration_class_from_string(j.value("duration_class", "unknown"));
      if (j.contains("subtitles") && !j["subtitles"].is_null()) {
        const auto subs = j["subtitles"].get<std::string>();
        r.subtitles = fs::path(subs).is_absolute() ? fs::path(subs) : base / subs;
      }
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      problems.emplace_back(line_no, e.what());
    }
  }
  if (!problems.empty()) throw manifest_error(std::move(problems));
  if (out.records.empty()) out.warnings.push_back(fmt::format("manifest {} contains no records", path.string()));
  return out;
}

std::vector<subtitle_cue> parse_subtitles_text(std::string_view raw) {
  std::string text(raw);
  if (text.starts_with("\xEF\xBB\xBF")) text.erase(0, 3);
  text.erase(std::remove(text.begin(), text.end(), '\r'), text.end());

  static const std::regex timing(
      R"(^\s*(\d+):(\d{1,2}):(\d{1,2})[,.](\d{1,3})\s*-->\s*(\d+):(\d{1,2}):(\d{1,2})[,.](\d{1,3}).*$)");
  static const std::regex tags(R"(<[^>]*>)");
  auto to_secs = [](const std::smatch& m, int first) {
    const auto frac = m[first + 3].str();
    return std::stod(m[first].str()) * 3600.0 + std::stod(m[first + 1].str()) * 60.0 +
           std::stod(m[first + 2].str()) + std::stod(frac) / std::pow(10.0, static_cast<double>(frac.size()));
  };

  std::vector<subtitle_cue> cues;
  std::istringstream in(text);
  std::vector<std::string> block;
  std::size_t block_no = 0;
  auto flush = [&] {
    if (block.empty()) return;
    ++block_no;
    std::size_t t = 0;
    if (block.size() > 1 && !block[0].empty() &&
        std::all_of(block[0].begin(), block[0].end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      t = 1;
    std::smatch m;
    if (!std::regex_match(block[t], m, timing))
      fail(errc::subtitle_parse, fmt::format("cue {}: malformed timestamp line '{}'", block_no, block[t]));
    const double start = to_secs(m, 1);
    const double end = to_secs(m, 5);
    if (!(end > start))
      fail(errc::subtitle_parse, fmt::format("cue {}: end {} does not follow start {}", block_no, end, start));
    std::string body;
    for (std::size_t i = t + 1; i < block.size(); ++i) {
      if (!body.empty()) body += '\n';
      body += block[i];
    }
    cues.push_back({time_range(start, end), trim(std::regex_replace(body, tags, ""))});
    block.clear();
  };

  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) {
      flush();
    } else {
      block.push_back(line);
    }
  }
  flush();
  std::stable_sort(cues.begin(), cues.end(),
                   [](const subtitle_cue& a, const subtitle_cue& b) { return a.range.start() < b.range.start(); });
  return cues;
}

std::vector<subtitle_cue> parse_subtitles(const fs::path& path) {
  require(fs::exists(path), errc::not_found, fmt::format("subtitle file not found: {}", path.string()));
  try {
    return parse_subtitles_text(read_file(path));
  } catch (const error& e) {
    throw error(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string subtitles_for_chunk(std::span<const subtitle_cue> cues, const time_range& range) {
  std::string out;
  for (const auto& cue : cues) {
    if (cue.range.start() >= range.end()) break;
    if (!cue.range.overlaps(range) || cue.text.empty()) continue;
    if (!out.empty()) out += '\n';
    out += cue.text;
  }
  return out;
}

std::optional<std::size_t> extract_choice(std::string_view raw, std::span<const std::string> options) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const char c = raw[i];
    if (!std::isalpha(static_cast<unsigned char>(c))) continue;
    if (i > 0 && is_word_byte(raw[i - 1])) continue;
    if (i + 1 < raw.size() && is_word_byte(raw[i + 1])) continue;
    const auto index = static_cast<std::size_t>(std::toupper(static_cast<unsigned char>(c)) - 'A');
    if (index >= options.size()) continue;
    const char next = i + 1 < raw.size() ? raw[i + 1] : '\0';
    const char prev = i > 0 ? raw[i - 1] : '\0';
    const bool marked = (prev == '(' && next == ')') || next == ')' || next == '.' || next == ':';
    if (std::isupper(static_cast<unsigned char>(c)) || marked) return index;
  }

  const auto haystack = ascii_lower(raw);
  std::optional<std::size_t> found;
  for (std::size_t k = 0; k < options.size(); ++k) {
    if (haystack.find(ascii_lower(options[k])) == std::string::npos) continue;
    if (found) return std::nullopt;
    found = k;
  }
  return found;
}

confidence_interval_result confidence_interval(double p_hat, std::size_t n, double z) {
  require(p_hat >= 0.0 && p_hat <= 1.0, errc::invalid_argument, fmt::format("p_hat {} outside [0, 1]", p_hat));
  require(n >= 1, errc::invalid_argument, "n must be >= 1");
  require(z > 0.0 && std::isfinite(z), errc::invalid_argument, "z must be positive");
  const double half_width = z * std::sqrt(p_hat * (1.0 - p_hat) / static_cast<double>(n));
  return {std::clamp(p_hat - half_width, 0.0, 1.0), std::clamp(p_hat + half_width, 0.0, 1.0)};
}

metrics top1_accuracy(std::span<const eval_outcome> outcomes, double z) {
  require(!outcomes.empty(), errc::invalid_argument, "no outcomes to score");
  metrics m;
  m.z = z;
  for (const auto c : {duration_class::short_video, duration_class::medium_video, duration_class::long_video,
                       duration_class::unknown})
    m.by_duration_class[std::string(to_string(c))];
  for (const auto& o : outcomes) {
    ++m.n;
    if (o.correct) ++m.correct;
    if (o.parse_failed) ++m.parse_failures;
    if (o.errored) ++m.errors;
    auto& cls = m.by_duration_class[std::string(to_string(o.duration))];
    ++cls.n;
    if (o.correct) ++cls.correct;
  }
  m.accuracy_pct = 100.0 * static_cast<double>(m.correct) / static_cast<double>(m.n);
  m.ci = confidence_interval(static_cast<double>(m.correct) / static_cast<double>(m.n), m.n, z);
  for (auto& [name, cls] : m.by_duration_class) {
    if (cls.n == 0) continue;
    cls.accuracy_pct = 100.0 * static_cast<double>(cls.correct) / static_cast<double>(cls.n);
    cls.ci = confidence_interval(static_cast<double>(cls.correct) / static_cast<double>(cls.n), cls.n, z);
  }
  return m;
}

nlohmann::json to_json(const eval_outcome& o) {
  return {{"id", o.record_id},
          {"duration_class", to_string(o.duration)},
          {"predicted_index", o.predicted_index ? nlohmann::json(*o.predicted_index) : nlohmann::json(nullptr)},
          {"correct", o.correct},
          {"parse_failed", o.parse_failed},
          {"errored", o.errored},
          {"error", o.error_message},
          {"raw_answer", o.raw_answer},
          {"report", o.report_path}};
}

nlohmann::json to_json(const metrics& m) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [name, c] : m.by_duration_class)
    classes[name] = {{"n", c.n}, {"correct", c.correct}, {"accuracy_pct", c.accuracy_pct},
                     {"ci_low", c.ci.low}, {"ci_high", c.ci.high}};
  return {{"n", m.n},
          {"correct", m.correct},
          {"accuracy_pct", m.accuracy_pct},
          {"ci_low", m.ci.low},
          {"ci_high", m.ci.high},
          {"z", m.z},
          {"parse_failures", m.parse_failures},
          {"errors", m.errors},
          {"by_duration_class", classes}};
}

std::string format_question(const benchmark_record& record) {
  std::string out = record.question;
  out += "\nOptions:";
  for (std::size_t k = 0; k < record.options.size(); ++k)
    out += fmt::format("\n({}) {}", static_cast<char>('A' + k), record.options[k]);
  return out;
}

benchmark_result run_benchmark(std::span<const benchmark_record> records, const prompt_set& prompt_templates,
                               const benchmark_options& options, const record_runner& runner) {
  require(!records.empty(), errc::invalid_argument, "benchmark manifest has no records");
  if (!options.reports_dir.empty()) fs::create_directories(options.reports_dir);

  benchmark_result result;
  result.outcomes.resize(records.size());
  parallel_for(records.size(), options.record_parallelism, [&](std::size_t i) {
    const auto& rec = records[i];
    auto& o = result.outcomes[i];
    o.record_id = rec.id;
    o.duration = rec.duration;
    try {
      const auto question = format_question(rec);
      const prompt_set prompts(build_chunk_prompt(prompt_templates.chunk_prompt(), question),
                               build_chunk_prompt(prompt_templates.aggregation_prompt(), question));
      subtitle_source subs;
      if (options.with_subtitles && rec.subtitles) {
        auto cues = std::make_shared<std::vector<subtitle_cue>>(parse_subtitles(*rec.subtitles));
        subs = [cues](const time_range& r) -> std::optional<std::string> { return subtitles_for_chunk(*cues, r); };
      }
      const auto report = runner(rec, prompts, subs);
      o.raw_answer = report.final_text;
      if (!options.reports_dir.empty()) {
        const auto path = options.reports_dir / (safe_file_stem(rec.id) + ".json");
        write_file_atomic(path, to_json(report).dump(2));
        o.report_path = path.string();
      }
      o.predicted_index = extract_choice(o.raw_answer, rec.options);
      o.parse_failed = !o.predicted_index.has_value();
      o.correct = o.predicted_index && *o.predicted_index == rec.gold_index;
    } catch (const error& e) {
      if (options.fail_fast) throw error(e.code(), fmt::format("record {}: {}", rec.id, e.what()));
      o.errored = true;
      o.error_message = e.what();
    }
  });
  result.summary = top1_accuracy(result.outcomes, options.z);
  return result;
}

record_runner pipeline_runner(const pipeline_config& cfg, const pipeline_deps& deps) {
  return [cfg, deps](const benchmark_record& rec, const prompt_set& prompts, const subtitle_source& subs) {
    pipeline_config c = cfg;
    c.prompts = prompts;
    c.work_dir = cfg.work_dir / safe_file_stem(rec.id);
    return run_pipeline(rec.video, c, deps, subs);
  };
}

}  // namespace qmavis
