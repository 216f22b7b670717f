#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmavis/core.hpp"
#include "qmavis/error.hpp"
#include "qmavis/fusion.hpp"

namespace qmavis {

enum class duration_class { short_video, medium_video, long_video, unknown };

std::string_view to_string(duration_class c) noexcept;
duration_class duration_class_from_string(std::string_view name);

struct benchmark_record {
  std::string id;
  std::filesystem::path video;
  std::string question;
  std::vector<std::string> options;  // 2..26 distinct, non-empty
  std::size_t gold_index = 0;
  duration_class duration = duration_class::unknown;
  std::optional<std::filesystem::path> subtitles;
};

// Raised by load_manifest; lists every rejected line.
class manifest_error : public error {
 public:
  manifest_error(std::vector<std::pair<std::size_t, std::string>> problems);

  const std::vector<std::pair<std::size_t, std::string>>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::pair<std::size_t, std::string>> problems_;
};

struct manifest {
  std::vector<benchmark_record> records;
  std::vector<std::string> warnings;
};

// JSON-lines, one record per line:
//   {"id", "video", "question", "options": [...], "answer": <0-based int>,
//    "duration_class": "short"|"medium"|"long"|"unknown", "subtitles": optional path}
// Relative video and subtitle paths resolve against the manifest's directory.
manifest load_manifest(const std::filesystem::path& path);

// SRT cues sorted by start time, with <tags> stripped.
std::vector<subtitle_cue> parse_subtitles(const std::filesystem::path& path);
std::vector<subtitle_cue> parse_subtitles_text(std::string_view text);

// Newline-joined text of every cue overlapping the range.
std::string subtitles_for_chunk(std::span<const subtitle_cue> cues, const time_range& range);

// Option letter first: the first standalone letter A.. within the option
// count. Uppercase letters count bare ("answer is B"); either case counts
// when marked as "(c)", "c)", "c." or "c:". Failing that, the unique option
// whose full text occurs in `raw` (case-insensitive).
std::optional<std::size_t> extract_choice(std::string_view raw, std::span<const std::string> options);

struct confidence_interval_result {
  double low = 0.0;
  double high = 0.0;
};

// p_hat -/+ z * sqrt(p_hat (1 - p_hat) / n), clamped to [0, 1].
confidence_interval_result confidence_interval(double p_hat, std::size_t n, double z = 1.96);

struct eval_outcome {
  std::string record_id;
  duration_class duration = duration_class::unknown;
  std::optional<std::size_t> predicted_index;
  bool correct = false;
  bool parse_failed = false;
  bool errored = false;
  std::string error_message;
  std::string raw_answer;
  std::string report_path;
};

struct class_metrics {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy_pct = 0.0;
  confidence_interval_result ci;
};

struct metrics {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy_pct = 0.0;
  confidence_interval_result ci;
  double z = 1.96;
  std::size_t parse_failures = 0;
  std::size_t errors = 0;
  std::map<std::string, class_metrics> by_duration_class;
};

metrics top1_accuracy(std::span<const eval_outcome> outcomes, double z = 1.96);

nlohmann::json to_json(const eval_outcome& o);
nlohmann::json to_json(const metrics& m);

// Question text handed to {question}: the question followed by lettered options.
std::string format_question(const benchmark_record& record);

inline constexpr std::string_view default_benchmark_aggregation_prompt =
    "You are given captions and audio transcripts of consecutive chunks of one long video. "
    "Aggregate them into a complete, coherent report of the whole video, paying attention to "
    "the nuances of different scenes. Then answer the following multiple-choice question with "
    "the letter of the correct option.\nQuestion: {question}";

inline constexpr std::string_view default_benchmark_chunk_prompt =
    "Taking into account the following question: {question}, describe this video in detail";

struct benchmark_options {
  bool with_subtitles = false;
  bool fail_fast = false;
  double z = 1.96;
  std::size_t record_parallelism = 1;
  std::filesystem::path reports_dir;  // per-record reports; empty = not written
};

struct benchmark_result {
  metrics summary;
  std::vector<eval_outcome> outcomes;  // manifest order
};

// Runs one record through the pipeline with the question-conditioned prompts.
using record_runner = std::function<fusion_report(const benchmark_record&, const prompt_set&, const subtitle_source&)>;

benchmark_result run_benchmark(std::span<const benchmark_record> records, const prompt_set& prompt_templates,
                               const benchmark_options& options, const record_runner& runner);

// Convenience runner over run_pipeline; each record gets its own work dir.
record_runner pipeline_runner(const pipeline_config& cfg, const pipeline_deps& deps);

}  // namespace qmavis
