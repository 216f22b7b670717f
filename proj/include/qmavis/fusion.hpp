#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmavis/backends.hpp"
#include "qmavis/core.hpp"
#include "qmavis/media.hpp"
#include "qmavis/store.hpp"

namespace qmavis {

// ---------------------------------------------------------------------------
// Interleaving

// Declaration order is the within-chunk order.
enum class entry_kind { caption, transcript, subtitle };

struct entry {
  int chunk_index = 0;
  entry_kind kind = entry_kind::caption;
  std::string text;

  std::string id() const;     // V3, A3, S3
  std::string label() const;  // "Chunk 3 | Video"

  friend bool operator==(const entry&, const entry&) = default;
};

struct interleaved_set {
  std::vector<entry> items;

  std::size_t count(entry_kind kind) const;
  friend bool operator==(const interleaved_set&, const interleaved_set&) = default;
};

using chunk_texts = std::vector<std::pair<int, std::string>>;

// Produces [V1, A1, V2, A2, ...]. Captions must cover 1..N exactly once;
// transcripts and subtitles may cover any subset of 1..N without repeats.
interleaved_set interleave(const chunk_texts& captions, const chunk_texts& transcripts,
                           const chunk_texts& subtitles = {});

// ---------------------------------------------------------------------------
// Token estimation and budgeted batching

enum class token_estimator {
  bytes4,       // ceil(bytes / 4)
  utf8_chars4,  // ceil(code points / 4)
};

std::string_view to_string(token_estimator e) noexcept;
token_estimator token_estimator_from_string(std::string_view name);

std::size_t estimate_tokens(std::string_view text, token_estimator estimator = token_estimator::bytes4);

inline constexpr std::string_view truncation_marker = "\xE2\x80\xA6[truncated]";

// One unit of aggregation input. At level 0 items are entries of S; at
// later levels they are the previous level's outputs.
struct agg_item {
  std::string id;
  std::string label;
  std::string text;
  int group = 0;  // items sharing a group are kept in one batch when possible
  bool truncated = false;

  friend bool operator==(const agg_item&, const agg_item&) = default;
};

// "[{label}]:\n{text}\n"
std::string render_item(const agg_item& item);
std::string render_body(std::span<const agg_item> items);
std::vector<agg_item> to_agg_items(const interleaved_set& set);

struct partition_options {
  token_estimator estimator = token_estimator::bytes4;
  std::size_t max_batch_items = 0;  // 0 = unlimited
};

using batch = std::vector<agg_item>;

// Greedy contiguous packing: each batch takes items until the next one would
// push estimate(prompt) + estimate(body) over the budget. A group (one
// chunk's caption/transcript/subtitle) that would straddle a batch boundary
// but fits in a fresh batch starts a new batch instead. Items too large on
// their own are cut to a UTF-8-safe prefix followed by the truncation marker.
std::vector<batch> partition_for_budget(std::span<const agg_item> items, std::string_view prompt,
                                        std::size_t budget, const partition_options& options = {});

enum class fusion_mode { full, no_llm_concat, vlmm_aggregate, no_stt };

std::string_view to_string(fusion_mode m) noexcept;
fusion_mode fusion_mode_from_string(std::string_view name);

struct aggregation_config {
  std::size_t token_budget = 24000;
  token_estimator estimator = token_estimator::bytes4;
  fusion_mode mode = fusion_mode::full;
  int max_depth = 8;
  std::size_t max_batch_items = 0;

  // Budget must exceed estimate(prompt) + 64.
  void validate(std::string_view aggregation_prompt) const;
};

struct aggregation_call {
  int level = 0;
  int batch_index = 0;
  std::string id;  // L{level}.B{batch_index}
  std::vector<std::string> input_ids;
  std::size_t prompt_tokens = 0;
  std::size_t input_tokens = 0;
  std::string output_text;
  bool cached = false;

  friend bool operator==(const aggregation_call&, const aggregation_call&) = default;
};

struct aggregation_result {
  std::string final_text;
  std::vector<std::string> leaf_ids;
  std::vector<aggregation_call> tree;
  std::vector<std::string> warnings;
};

// Aggregates S level by level until a single batch remains. Batches within a
// level run concurrently; levels are sequential. When `cache` is given, each
// call is keyed on its exact (backend, prompt, body).
aggregation_result aggregate_recursive(const interleaved_set& items, backend& aggregator,
                                       std::string_view prompt, const aggregation_config& cfg,
                                       const cache_store* cache = nullptr);

// Structural checks on an aggregation tree: level-0 inputs are exactly the
// leaves in order, each level consumes the previous level's outputs in order,
// node counts never grow, there is a single root, and depth <= max_depth.
// Returns a description of the first violation, or nullopt.
std::optional<std::string> check_tree(std::span<const std::string> leaf_ids,
                                      std::span<const aggregation_call> tree, int max_depth);

// ---------------------------------------------------------------------------
// Pipeline

struct text_artifact {
  std::string text;
  std::string backend_id;
  std::string prompt_digest;
  bool cached = false;
  bool failed = false;

  friend bool operator==(const text_artifact&, const text_artifact&) = default;
};

struct chunk_artifact {
  int chunk_index = 0;
  time_range range{0.0, 1.0};
  std::optional<text_artifact> caption;
  std::optional<text_artifact> transcript;
  std::optional<std::string> subtitle;
};

struct fusion_report {
  int version = 1;
  nlohmann::json config;
  video_meta video;
  std::string video_digest;
  std::vector<chunk_artifact> chunk_artifacts;
  interleaved_set set;
  std::vector<std::string> leaf_ids;
  std::vector<aggregation_call> tree;
  std::string final_text;
  std::map<std::string, double> timings;
  std::vector<std::string> warnings;
};

nlohmann::json to_json(const fusion_report& report, bool include_timings = true);

inline constexpr std::string_view caption_unavailable = "[caption unavailable]";
inline constexpr std::string_view transcript_unavailable = "[transcript unavailable]";

struct pipeline_config {
  prompt_set prompts;
  std::optional<chunking_params> chunking;  // nullopt = pick by duration
  auto_chunking auto_params;
  aggregation_config aggregation;
  bool skip_failed_chunks = false;
  std::filesystem::path work_dir = "qmavis-work";
  std::size_t chunk_parallelism = 8;
};

struct pipeline_backends {
  std::shared_ptr<backend> caption;
  std::shared_ptr<backend> transcribe;
  std::shared_ptr<backend> aggregate;
};

// Returns the subtitle text for a chunk range, if any.
using subtitle_source = std::function<std::optional<std::string>(const time_range&)>;

struct pipeline_deps {
  const media_tool* media = nullptr;
  pipeline_backends backends;
  const cache_store* cache = nullptr;
};

chunking_params resolve_chunking(const pipeline_config& cfg, double duration);

// Throws errc::config_error when the mode's required backends are missing.
void check_backends_for_mode(const pipeline_backends& backends, fusion_mode mode);

nlohmann::json to_json(const pipeline_config& cfg, const pipeline_deps& deps);

fusion_report run_pipeline(const std::filesystem::path& video, const pipeline_config& cfg,
                           const pipeline_deps& deps, const subtitle_source& subtitles = {});

}  // namespace qmavis
