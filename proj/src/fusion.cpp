#include "qmavis/fusion.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "qmavis/util.hpp"

namespace qmavis {
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string_view kind_label(entry_kind k) {
  switch (k) {
    case entry_kind::caption: return "Video";
    case entry_kind::transcript: return "Audio";
    case entry_kind::subtitle: return "Subtitles";
  }
  return "?";
}

char kind_prefix(entry_kind k) {
  switch (k) {
    case entry_kind::caption: return 'V';
    case entry_kind::transcript: return 'A';
    case entry_kind::subtitle: return 'S';
  }
  return '?';
}

std::string_view kind_name(entry_kind k) {
  switch (k) {
    case entry_kind::caption: return "caption";
    case entry_kind::transcript: return "transcript";
    case entry_kind::subtitle: return "subtitle";
  }
  return "?";
}

// Additive size measure underlying each estimator; estimate = ceil(units / 4).
std::size_t estimator_units(std::string_view text, token_estimator e) {
  switch (e) {
    case token_estimator::bytes4:
      return text.size();
    case token_estimator::utf8_chars4:
      return static_cast<std::size_t>(std::count_if(
          text.begin(), text.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
  }
  return text.size();
}

std::size_t units_to_tokens(std::size_t units) { return (units + 3) / 4; }

std::size_t utf8_floor(std::string_view text, std::size_t pos) {
  pos = std::min(pos, text.size());
  while (pos > 0 && pos < text.size() && (static_cast<unsigned char>(text[pos]) & 0xC0) == 0x80) --pos;
  return pos;
}

void add_indexed(std::vector<std::optional<std::string>>& slots, const chunk_texts& texts,
                 std::string_view what, bool require_all) {
  const auto n = slots.size();
  for (const auto& [index, text] : texts) {
    require(index >= 1 && static_cast<std::size_t>(index) <= n, errc::interleave_integrity,
            fmt::format("{} index {} outside 1..{}", what, index, n));
    auto& slot = slots[static_cast<std::size_t>(index) - 1];
    require(!slot.has_value(), errc::interleave_integrity, fmt::format("duplicate {} for chunk {}", what, index));
    slot = text;
  }
  if (require_all)
    for (std::size_t i = 0; i < n; ++i)
      require(slots[i].has_value(), errc::interleave_integrity, fmt::format("missing {} for chunk {}", what, i + 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Interleaving

std::string entry::id() const { return fmt::format("{}{}", kind_prefix(kind), chunk_index); }

std::string entry::label() const { return fmt::format("Chunk {} | {}", chunk_index, kind_label(kind)); }

std::size_t interleaved_set::count(entry_kind kind) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [kind](const entry& e) { return e.kind == kind; }));
}

interleaved_set interleave(const chunk_texts& captions, const chunk_texts& transcripts,
                           const chunk_texts& subtitles) {
  require(!captions.empty(), errc::interleave_integrity, "no captions to interleave");
  const auto n = captions.size();
  std::vector<std::optional<std::string>> v(n), a(n), s(n);
  add_indexed(v, captions, "caption", true);
  add_indexed(a, transcripts, "transcript", false);
  add_indexed(s, subtitles, "subtitle", false);

  interleaved_set out;
  out.items.reserve(n + transcripts.size() + subtitles.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int index = static_cast<int>(i) + 1;
    out.items.push_back({index, entry_kind::caption, *v[i]});
    if (a[i]) out.items.push_back({index, entry_kind::transcript, *a[i]});
    if (s[i]) out.items.push_back({index, entry_kind::subtitle, *s[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimation and batching

std::string_view to_string(token_estimator e) noexcept {
  switch (e) {
    case token_estimator::bytes4: return "bytes4";
    case token_estimator::utf8_chars4: return "utf8_chars4";
  }
  return "unknown";
}

token_estimator token_estimator_from_string(std::string_view name) {
  if (name == "bytes4") return token_estimator::bytes4;
  if (name == "utf8_chars4") return token_estimator::utf8_chars4;
  fail(errc::config_error, fmt::format("unknown token estimator '{}'", name));
}

std::size_t estimate_tokens(std::string_view text, token_estimator estimator) {
  return units_to_tokens(estimator_units(text, estimator));
}

std::string render_item(const agg_item& item) { return fmt::format("[{}]:\n{}\n", item.label, item.text); }

std::string render_body(std::span<const agg_item> items) {
  std::string body;
  for (const auto& item : items) body += render_item(item);
  return body;
}

std::vector<agg_item> to_agg_items(const interleaved_set& set) {
  std::vector<agg_item> out;
  out.reserve(set.items.size());
  for (const auto& e : set.items) out.push_back({e.id(), e.label(), e.text, e.chunk_index, false});
  return out;
}

std::vector<batch> partition_for_budget(std::span<const agg_item> items, std::string_view prompt,
                                        std::size_t budget, const partition_options& options) {
  const auto est = options.estimator;
  const std::size_t prompt_tokens = estimate_tokens(prompt, est);
  auto fits = [&](std::size_t body_units) { return prompt_tokens + units_to_tokens(body_units) <= budget; };

  // Cut oversized items first so every item fits an empty batch.
  std::vector<agg_item> prepared(items.begin(), items.end());
  std::vector<std::size_t> units(prepared.size());
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    auto& item = prepared[i];
    units[i] = estimator_units(render_item(item), est);
    if (fits(units[i])) continue;

    const std::string full = item.text;
    auto cost_at = [&](std::size_t p) {
      agg_item probe = item;
      probe.text = full.substr(0, utf8_floor(full, p)) + std::string(truncation_marker);
      return estimator_units(render_item(probe), est);
    };
    if (!fits(cost_at(0)))
      fail(errc::budget_infeasible,
           fmt::format("budget {} cannot hold the prompt ({} tokens) plus item {} even after truncation", budget,
                       prompt_tokens, item.id));
    std::size_t lo = 0, hi = full.size();
    while (lo < hi) {
      const std::size_t mid = lo + (hi - lo + 1) / 2;
      if (fits(cost_at(mid))) lo = mid;
      else hi = mid - 1;
    }
    item.text = full.substr(0, utf8_floor(full, lo)) + std::string(truncation_marker);
    item.truncated = true;
    units[i] = estimator_units(render_item(item), est);
  }

  const std::size_t cap = options.max_batch_items == 0 ? prepared.size() : options.max_batch_items;
  std::vector<batch> batches;
  batch current;
  std::size_t current_units = 0;
  auto close = [&] {
    batches.push_back(std::move(current));
    current.clear();
    current_units = 0;
  };

  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const bool group_start = i == 0 || prepared[i].group != prepared[i - 1].group;
    if (group_start && !current.empty()) {
      std::size_t end = i, group_units = 0;
      while (end < prepared.size() && prepared[end].group == prepared[i].group) group_units += units[end++];
      const std::size_t group_size = end - i;
      const bool fits_here = fits(current_units + group_units) && current.size() + group_size <= cap;
      const bool fits_fresh = fits(group_units) && group_size <= cap;
      if (!fits_here && fits_fresh) close();
    }
    if (!current.empty() && (!fits(current_units + units[i]) || current.size() >= cap)) close();
    current_units += units[i];
    current.push_back(std::move(prepared[i]));
  }
  if (!current.empty()) close();
  return batches;
}

std::string_view to_string(fusion_mode m) noexcept {
  switch (m) {
    case fusion_mode::full: return "full";
    case fusion_mode::no_llm_concat: return "no_llm_concat";
    case fusion_mode::vlmm_aggregate: return "vlmm_aggregate";
    case fusion_mode::no_stt: return "no_stt";
  }
  return "unknown";
}

fusion_mode fusion_mode_from_string(std::string_view name) {
  std::string n(name);
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "full") return fusion_mode::full;
  if (n == "no_llm_concat") return fusion_mode::no_llm_concat;
  if (n == "vlmm_aggregate") return fusion_mode::vlmm_aggregate;
  if (n == "no_stt") return fusion_mode::no_stt;
  fail(errc::config_error, fmt::format("unknown mode '{}'", name));
}

void aggregation_config::validate(std::string_view aggregation_prompt) const {
  require(max_depth >= 1, errc::config_error, "max_depth must be >= 1");
  const auto prompt_tokens = estimate_tokens(aggregation_prompt, estimator);
  require(token_budget > prompt_tokens + 64, errc::budget_infeasible,
          fmt::format("token budget {} must exceed the aggregation prompt ({} tokens) plus 64", token_budget,
                      prompt_tokens));
}

aggregation_result aggregate_recursive(const interleaved_set& items, backend& aggregator, std::string_view prompt,
                                       const aggregation_config& cfg, const cache_store* cache) {
  require(!items.items.empty(), errc::invalid_argument, "nothing to aggregate");
  cfg.validate(prompt);

  aggregation_result result;
  auto level_items = to_agg_items(items);
  for (const auto& item : level_items) result.leaf_ids.push_back(item.id);

  const partition_options options{cfg.estimator, cfg.max_batch_items};
  const auto prompt_tokens = estimate_tokens(prompt, cfg.estimator);
  const auto prompt_digest = sha256_hex(prompt);

  for (int level = 0;; ++level) {
    if (level >= cfg.max_depth)
      fail(errc::aggregation_divergence,
           fmt::format("aggregation did not converge within {} levels ({} items remain)", cfg.max_depth,
                       level_items.size()));

    const auto batches = partition_for_budget(level_items, prompt, cfg.token_budget, options);
    for (const auto& b : batches)
      for (const auto& item : b)
        if (item.truncated)
          result.warnings.push_back(fmt::format("level {}: item {} truncated to fit the token budget", level, item.id));
    if (batches.size() == level_items.size() && batches.size() > 1)
      result.warnings.push_back(
          fmt::format("level {}: no items could be combined; relying on the aggregator to shorten them", level));

    std::vector<aggregation_call> calls(batches.size());
    parallel_for(batches.size(), aggregator.gate().limit(), [&](std::size_t b) {
      const auto body = render_body(batches[b]);
      auto& call = calls[b];
      call.level = level;
      call.batch_index = static_cast<int>(b);
      call.id = fmt::format("L{}.B{}", level, b);
      for (const auto& item : batches[b]) call.input_ids.push_back(item.id);
      call.prompt_tokens = prompt_tokens;
      call.input_tokens = estimate_tokens(body, cfg.estimator);

      cache_key key;
      key.stage = cache_stage::aggregate;
      key.backend_id = aggregator.id();
      key.prompt_digest = prompt_digest;
      key.params_digest = sha256_hex(body);
      if (cache) {
        if (auto hit = cache->get(key)) {
          call.output_text = std::move(*hit);
          call.cached = true;
          return;
        }
      }
      try {
        call.output_text = aggregate_text(aggregator, prompt, body).text;
      } catch (const error& e) {
        throw error(e.code(), fmt::format("aggregation level {} batch {}: {}", level, b, e.what()));
      }
      if (cache) cache->put(key, call.output_text);
    });

    if (calls.size() == 1) {
      result.final_text = calls.front().output_text;
      result.tree.push_back(std::move(calls.front()));
      return result;
    }

    std::vector<agg_item> next;
    next.reserve(calls.size());
    for (std::size_t b = 0; b < calls.size(); ++b)
      next.push_back({calls[b].id, fmt::format("Summary {}", b + 1), calls[b].output_text,
                      static_cast<int>(b) + 1, false});
    for (auto& c : calls) result.tree.push_back(std::move(c));
    level_items = std::move(next);
  }
}

std::optional<std::string> check_tree(std::span<const std::string> leaf_ids, std::span<const aggregation_call> tree,
                                      int max_depth) {
  if (tree.empty()) return "tree is empty";
  std::vector<std::string> expected(leaf_ids.begin(), leaf_ids.end());
  std::size_t pos = 0;
  int level = 0;
  std::size_t previous_nodes = expected.size();
  while (pos < tree.size()) {
    std::vector<std::string> consumed, produced;
    int batch_index = 0;
    while (pos < tree.size() && tree[pos].level == level) {
      const auto& call = tree[pos];
      if (call.batch_index != batch_index) return fmt::format("call {} out of order at level {}", call.id, level);
      if (call.input_ids.empty()) return fmt::format("call {} has no inputs", call.id);
      consumed.insert(consumed.end(), call.input_ids.begin(), call.input_ids.end());
      produced.push_back(call.id);
      ++batch_index;
      ++pos;
    }
    if (produced.empty()) return fmt::format("level {} is missing", level);
    if (consumed != expected) return fmt::format("level {} does not consume exactly the previous outputs", level);
    if (produced.size() > previous_nodes) return fmt::format("level {} has more nodes than its inputs", level);
    previous_nodes = produced.size();
    expected = std::move(produced);
    ++level;
  }
  if (expected.size() != 1) return fmt::format("tree has {} roots", expected.size());
  if (level > max_depth) return fmt::format("tree depth {} exceeds {}", level, max_depth);
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Report serialisation

namespace {

nlohmann::json artifact_json(const std::optional<text_artifact>& a) {
  if (!a) return nullptr;
  return {{"text", a->text}, {"backend_id", a->backend_id}, {"prompt_digest", a->prompt_digest},
          {"cached", a->cached}, {"failed", a->failed}};
}

nlohmann::json chunking_json(const chunking_params& p) {
  return {{"chunk_secs", p.chunk_secs()}, {"sample_fps", p.sample_fps()}};
}

}  // namespace

nlohmann::json to_json(const fusion_report& report, bool include_timings) {
  nlohmann::json chunks = nlohmann::json::array();
  for (const auto& c : report.chunk_artifacts) {
    chunks.push_back({{"chunk_index", c.chunk_index},
                      {"start", c.range.start()},
                      {"end", c.range.end()},
                      {"caption", artifact_json(c.caption)},
                      {"transcript", artifact_json(c.transcript)},
                      {"subtitle", c.subtitle ? nlohmann::json(*c.subtitle) : nlohmann::json(nullptr)}});
  }
  nlohmann::json set = nlohmann::json::array();
  for (const auto& e : report.set.items)
    set.push_back({{"id", e.id()}, {"chunk_index", e.chunk_index}, {"kind", kind_name(e.kind)}, {"text", e.text}});
  nlohmann::json tree = nlohmann::json::array();
  for (const auto& call : report.tree) {
    tree.push_back({{"level", call.level},
                    {"batch_index", call.batch_index},
                    {"id", call.id},
                    {"input_ids", call.input_ids},
                    {"prompt_tokens", call.prompt_tokens},
                    {"input_tokens", call.input_tokens},
                    {"output_text", call.output_text},
                    {"cached", call.cached}});
  }
  nlohmann::json out{
      {"version", report.version},
      {"config", report.config},
      {"video",
       {{"path", report.video.path.string()},
        {"digest", report.video_digest},
        {"duration", report.video.duration},
        {"has_audio", report.video.has_audio},
        {"native_fps", report.video.native_fps},
        {"width", report.video.width},
        {"height", report.video.height}}},
      {"chunk_artifacts", chunks},
      {"interleaved", set},
      {"leaf_ids", report.leaf_ids},
      {"tree", tree},
      {"final_text", report.final_text},
      {"warnings", report.warnings},
  };
  if (include_timings) out["timings"] = report.timings;
  return out;
}

nlohmann::json to_json(const pipeline_config& cfg, const pipeline_deps& deps) {
  nlohmann::json backends = nlohmann::json::object();
  if (deps.backends.caption) backends["caption"] = deps.backends.caption->id();
  if (deps.backends.transcribe) backends["transcribe"] = deps.backends.transcribe->id();
  if (deps.backends.aggregate) backends["aggregate"] = deps.backends.aggregate->id();
  nlohmann::json media = nullptr;
  if (deps.media) {
    const auto& m = deps.media->config();
    media = {{"program", m.program},         {"probe_args", m.probe_args}, {"frames_args", m.frames_args},
             {"audio_args", m.audio_args},   {"jpeg_quality", m.jpeg_quality}, {"max_side", m.max_side},
             {"parallelism", m.parallelism}};
  }
  return {
      {"prompts", {{"chunk_prompt", cfg.prompts.chunk_prompt()}, {"aggregation_prompt", cfg.prompts.aggregation_prompt()}}},
      {"chunking", cfg.chunking ? chunking_json(*cfg.chunking) : nlohmann::json("auto")},
      {"auto_chunking",
       {{"long_threshold_secs", cfg.auto_params.long_threshold_secs},
        {"short", chunking_json(cfg.auto_params.short_params)},
        {"long", chunking_json(cfg.auto_params.long_params)}}},
      {"aggregation",
       {{"token_budget", cfg.aggregation.token_budget},
        {"estimator", to_string(cfg.aggregation.estimator)},
        {"mode", to_string(cfg.aggregation.mode)},
        {"max_depth", cfg.aggregation.max_depth},
        {"max_batch_items", cfg.aggregation.max_batch_items}}},
      {"skip_failed_chunks", cfg.skip_failed_chunks},
      {"chunk_parallelism", cfg.chunk_parallelism},
      {"backends", backends},
      {"media", media},
  };
}

// ---------------------------------------------------------------------------
// Pipeline

chunking_params resolve_chunking(const pipeline_config& cfg, double duration) {
  return cfg.chunking ? *cfg.chunking : select_params(duration, cfg.auto_params);
}

void check_backends_for_mode(const pipeline_backends& backends, fusion_mode mode) {
  require(backends.caption != nullptr, errc::config_error, "a caption backend is required in every mode");
  if (mode == fusion_mode::full || mode == fusion_mode::no_stt)
    require(backends.aggregate != nullptr, errc::config_error,
            fmt::format("mode {} needs an aggregate backend", to_string(mode)));
  if (mode == fusion_mode::full || mode == fusion_mode::no_llm_concat || mode == fusion_mode::vlmm_aggregate)
    require(backends.transcribe != nullptr, errc::config_error,
            fmt::format("mode {} needs a transcribe backend", to_string(mode)));
}

fusion_report run_pipeline(const fs::path& video, const pipeline_config& cfg, const pipeline_deps& deps,
                           const subtitle_source& subtitles) {
  const auto t_total = clock_type::now();
  require(deps.media != nullptr, errc::config_error, "run_pipeline needs a media tool");
  const auto mode = cfg.aggregation.mode;
  check_backends_for_mode(deps.backends, mode);
  const auto chunk_prompt = build_chunk_prompt(cfg.prompts.chunk_prompt(), std::nullopt);
  const auto agg_prompt = build_chunk_prompt(cfg.prompts.aggregation_prompt(), std::nullopt);
  if (mode != fusion_mode::no_llm_concat) cfg.aggregation.validate(agg_prompt);

  fusion_report report;
  report.config = to_json(cfg, deps);

  auto t0 = clock_type::now();
  report.video = deps.media->probe(video);
  report.video_digest = sha256_file(video);
  report.timings["probe_secs"] = seconds_since(t0);

  const auto params = resolve_chunking(cfg, report.video.duration);
  report.config["resolved_chunking"] = chunking_json(params);
  const auto plan = plan_chunks(report.video.duration, params.chunk_secs());

  bool want_transcripts = mode != fusion_mode::no_stt;
  if (want_transcripts && !report.video.has_audio) {
    report.warnings.push_back("video has no audio stream; continuing with captions only");
    want_transcripts = false;
  }

  auto& captioner = *deps.backends.caption;
  const auto caption_prompt_digest = sha256_hex(chunk_prompt);
  const auto empty_prompt_digest = sha256_hex("");
  const auto& media_cfg = deps.media->config();

  report.chunk_artifacts.resize(plan.size(), chunk_artifact{0, plan[0].range, {}, {}, {}});
  std::vector<std::vector<std::string>> chunk_warnings(plan.size());

  t0 = clock_type::now();
  parallel_for(plan.size(), cfg.chunk_parallelism, [&](std::size_t i) {
    const auto& ch = plan[i];
    auto& art = report.chunk_artifacts[i];
    art.chunk_index = ch.index;
    art.range = ch.range;
    const auto chunk_dir = cfg.work_dir / chunk_dir_name(ch.index);

    cache_key caption_key{report.video_digest, ch.index, cache_stage::caption, captioner.id(), caption_prompt_digest,
                          sha256_hex(nlohmann::json{{"start", ch.range.start()},
                                                    {"end", ch.range.end()},
                                                    {"sample_fps", params.sample_fps()},
                                                    {"max_side", media_cfg.max_side},
                                                    {"jpeg_quality", media_cfg.jpeg_quality}}
                                         .dump())};
    text_artifact caption{"", captioner.id(), caption_prompt_digest, false, false};
    if (auto hit = deps.cache ? deps.cache->get(caption_key) : std::nullopt) {
      caption.text = std::move(*hit);
      caption.cached = true;
    } else {
      try {
        const auto frames = deps.media->extract_frames(report.video, ch.index, ch.range, params.sample_fps(), chunk_dir);
        caption.text = caption_chunk(captioner, chunk_prompt, frames).text;
        if (deps.cache) deps.cache->put(caption_key, caption.text);
      } catch (const error& e) {
        if (!cfg.skip_failed_chunks || e.code() == errc::integrity_error)
          throw error(e.code(), fmt::format("chunk {} caption: {}", ch.index, e.what()));
        caption.text = std::string(caption_unavailable);
        caption.failed = true;
        chunk_warnings[i].push_back(fmt::format("chunk {} caption failed: {}", ch.index, e.what()));
      }
    }
    art.caption = std::move(caption);

    if (want_transcripts) {
      auto& transcriber = *deps.backends.transcribe;
      cache_key key{report.video_digest, ch.index, cache_stage::transcript, transcriber.id(), empty_prompt_digest,
                    sha256_hex(nlohmann::json{{"start", ch.range.start()},
                                              {"end", ch.range.end()},
                                              {"sample_rate", audio_sample_rate}}
                                   .dump())};
      text_artifact transcript{"", transcriber.id(), empty_prompt_digest, false, false};
      if (auto hit = deps.cache ? deps.cache->get(key) : std::nullopt) {
        transcript.text = std::move(*hit);
        transcript.cached = true;
      } else {
        try {
          const auto audio = deps.media->extract_audio(report.video, ch.index, ch.range, chunk_dir);
          transcript.text = transcribe_chunk(transcriber, audio).text;
          if (deps.cache) deps.cache->put(key, transcript.text);
        } catch (const error& e) {
          if (!cfg.skip_failed_chunks || e.code() == errc::integrity_error)
            throw error(e.code(), fmt::format("chunk {} transcription: {}", ch.index, e.what()));
          transcript.text = std::string(transcript_unavailable);
          transcript.failed = true;
          chunk_warnings[i].push_back(fmt::format("chunk {} transcription failed: {}", ch.index, e.what()));
        }
      }
      art.transcript = std::move(transcript);
    }

    if (subtitles) {
      if (auto text = subtitles(ch.range); text && !text->empty()) art.subtitle = std::move(*text);
    }
  });
  report.timings["chunks_secs"] = seconds_since(t0);
  for (auto& w : chunk_warnings) report.warnings.insert(report.warnings.end(), w.begin(), w.end());

  chunk_texts captions, transcripts, subs;
  for (const auto& art : report.chunk_artifacts) {
    captions.emplace_back(art.chunk_index, art.caption->text);
    if (art.transcript) transcripts.emplace_back(art.chunk_index, art.transcript->text);
    if (art.subtitle) subs.emplace_back(art.chunk_index, *art.subtitle);
  }
  report.set = interleave(captions, transcripts, subs);

  t0 = clock_type::now();
  if (mode == fusion_mode::no_llm_concat) {
    const auto items = to_agg_items(report.set);
    for (const auto& item : items) report.leaf_ids.push_back(item.id);
    report.final_text = render_body(items);
  } else {
    auto& aggregator = mode == fusion_mode::vlmm_aggregate ? captioner : *deps.backends.aggregate;
    auto agg = aggregate_recursive(report.set, aggregator, agg_prompt, cfg.aggregation, deps.cache);
    report.leaf_ids = std::move(agg.leaf_ids);
    report.tree = std::move(agg.tree);
    report.final_text = std::move(agg.final_text);
    report.warnings.insert(report.warnings.end(), agg.warnings.begin(), agg.warnings.end());
  }
  report.timings["aggregate_secs"] = seconds_since(t0);
  report.timings["total_secs"] = seconds_since(t_total);
  for (const auto& w : report.warnings) spdlog::warn("{}", w);
  return report;
}

}  // namespace qmavis
