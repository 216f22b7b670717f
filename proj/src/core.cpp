#include "qmavis/core.hpp"

#include <cmath>

#include <fmt/format.h>

namespace qmavis {

std::string_view to_string(errc code) noexcept {
  switch (code) {
    case errc::invalid_argument: return "invalid-argument";
    case errc::missing_substitution: return "missing-substitution";
    case errc::not_found: return "not-found";
    case errc::probe_error: return "probe-error";
    case errc::media_extraction: return "media-extraction";
    case errc::no_audio: return "no-audio";
    case errc::backend_unavailable: return "backend-unavailable";
    case errc::request_rejected: return "request-rejected";
    case errc::empty_response: return "empty-response";
    case errc::context_exceeded: return "context-exceeded";
    case errc::protocol_error: return "protocol-error";
    case errc::fixture_parse: return "fixture-parse";
    case errc::fixture_miss: return "fixture-miss";
    case errc::interleave_integrity: return "interleave-integrity";
    case errc::budget_infeasible: return "budget-infeasible";
    case errc::aggregation_divergence: return "aggregation-divergence";
    case errc::manifest_error: return "manifest-error";
    case errc::subtitle_parse: return "subtitle-parse";
    case errc::storage_error: return "storage-error";
    case errc::integrity_error: return "integrity-error";
    case errc::config_error: return "config-error";
  }
  return "unknown";
}

time_range::time_range(double start, double end) : start_(start), end_(end) {
  require(std::isfinite(start) && std::isfinite(end), errc::invalid_argument,
          "time range bounds must be finite");
  require(start >= 0.0, errc::invalid_argument,
          fmt::format("time range start must be non-negative, got {}", start));
  require(start < end, errc::invalid_argument,
          fmt::format("time range start must precede end, got [{}, {}]", start, end));
}

chunk_plan::chunk_plan(double video_duration, std::vector<chunk> chunks)
    : video_duration_(video_duration), chunks_(std::move(chunks)) {
  require(!chunks_.empty(), errc::invalid_argument, "chunk plan must not be empty");
  require(chunks_.front().range.start() == 0.0, errc::invalid_argument,
          "chunk plan must start at 0");
  require(chunks_.back().range.end() == video_duration_, errc::invalid_argument,
          "chunk plan must end at the video duration");
  for (std::size_t i = 0; i < chunks_.size(); ++i) {
    require(chunks_[i].index == static_cast<int>(i) + 1, errc::invalid_argument,
            "chunk indices must be consecutive from 1");
    if (i + 1 < chunks_.size())
      require(chunks_[i].range.end() == chunks_[i + 1].range.start(), errc::invalid_argument,
              fmt::format("gap or overlap between chunks {} and {}", i + 1, i + 2));
  }
}

chunking_params::chunking_params(double chunk_secs, double sample_fps)
    : chunk_secs_(chunk_secs), sample_fps_(sample_fps) {
  require(std::isfinite(chunk_secs) && chunk_secs > 0.0, errc::invalid_argument,
          "chunk_secs must be positive");
  require(std::isfinite(sample_fps) && sample_fps > 0.0, errc::invalid_argument,
          "sample_fps must be positive");
  require(chunk_secs * sample_fps >= 1.0, errc::invalid_argument,
          fmt::format("chunk_secs * sample_fps must be >= 1 (got {} * {})", chunk_secs, sample_fps));
}

prompt_set::prompt_set(std::string chunk_prompt, std::string aggregation_prompt)
    : chunk_prompt_(std::move(chunk_prompt)), aggregation_prompt_(std::move(aggregation_prompt)) {
  require(!chunk_prompt_.empty(), errc::invalid_argument, "chunk prompt must not be empty");
  require(!aggregation_prompt_.empty(), errc::invalid_argument,
          "aggregation prompt must not be empty");
}

chunk_plan plan_chunks(double duration, double chunk_secs) {
  require(std::isfinite(duration) && duration > 0.0, errc::invalid_argument,
          fmt::format("duration must be positive, got {}", duration));
  require(std::isfinite(chunk_secs) && chunk_secs > 0.0, errc::invalid_argument,
          fmt::format("chunk_secs must be positive, got {}", chunk_secs));

  // Quotients within 1e-9 (relative) of an integer are exact multiples that
  // floating-point division nudged upward.
  const double q = duration / chunk_secs;
  const double nearest = std::round(q);
  auto count = static_cast<std::size_t>(nearest >= 1.0 && std::abs(q - nearest) <= 1e-9 * nearest ? nearest
                                                                                                 : std::ceil(q));
  while (count > 1 && static_cast<double>(count - 1) * chunk_secs >= duration) --count;

  std::vector<chunk> chunks;
  chunks.reserve(count);
  double start = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double end = (i + 1 == count) ? duration : static_cast<double>(i + 1) * chunk_secs;
    chunks.push_back({static_cast<int>(i) + 1, time_range(start, end)});
    start = end;
  }
  return chunk_plan(duration, std::move(chunks));
}

chunking_params select_params(double duration, const auto_chunking& config) {
  require(std::isfinite(duration) && duration > 0.0, errc::invalid_argument,
          fmt::format("duration must be positive, got {}", duration));
  return duration >= config.long_threshold_secs ? config.long_params : config.short_params;
}

std::string build_chunk_prompt(std::string_view prompt_template,
                               const std::optional<std::string>& question) {
  require(!prompt_template.empty(), errc::invalid_argument, "prompt template must not be empty");
  if (prompt_template.find(question_placeholder) == std::string_view::npos)
    return std::string(prompt_template);
  require(question.has_value() && !question->empty(), errc::missing_substitution,
          "prompt template contains {question} but no question was provided");

  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = prompt_template.find(question_placeholder, pos);
    if (hit == std::string_view::npos) break;
    out.append(prompt_template.substr(pos, hit - pos));
    out.append(*question);
    pos = hit + question_placeholder.size();
  }
  out.append(prompt_template.substr(pos));
  return out;
}

}  // namespace qmavis
