#include "qmavis/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qmavis/eval.hpp"
#include "qmavis/store.hpp"
#include "qmavis/util.hpp"

namespace qmavis {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Exit codes.
constexpr int exit_ok = 0;
constexpr int exit_runtime = 1;
constexpr int exit_usage = 2;

std::string_view stage_of(errc code) {
  switch (code) {
    case errc::probe_error:
    case errc::media_extraction:
    case errc::no_audio:
      return "media";
    case errc::backend_unavailable:
    case errc::request_rejected:
    case errc::empty_response:
    case errc::context_exceeded:
    case errc::protocol_error:
    case errc::fixture_miss:
      return "backend";
    case errc::interleave_integrity:
    case errc::budget_infeasible:
    case errc::aggregation_divergence:
      return "fusion";
    case errc::manifest_error:
    case errc::subtitle_parse:
      return "eval";
    case errc::storage_error:
    case errc::integrity_error:
      return "store";
    case errc::config_error:
    case errc::fixture_parse:
      return "config";
    default:
      return "input";
  }
}

int report_error(std::ostream& err, const error& e, int exit_code) {
  err << json{{"error", {{"code", to_string(e.code())}, {"stage", stage_of(e.code())}, {"message", e.what()}}}}.dump()
      << '\n';
  return exit_code;
}

fs::path resolve_against(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

chunking_params chunking_from_json(const json& j, const chunking_params& fallback) {
  return chunking_params(j.value("chunk_secs", fallback.chunk_secs()), j.value("sample_fps", fallback.sample_fps()));
}

json chunking_to_json(const chunking_params& p) { return {{"chunk_secs", p.chunk_secs()}, {"sample_fps", p.sample_fps()}}; }

std::optional<backend_slot> slot_from_json(const json& j, role r) {
  if (j.is_null()) return std::nullopt;
  require(j.is_object(), errc::config_error, fmt::format("backends.{} must be an object", to_string(r)));
  backend_slot slot;
  slot.remote.backend_role = r;
  if (j.contains("mock")) {
    slot.mock_fixture = j["mock"].get<std::string>();
    return slot;
  }
  auto& c = slot.remote;
  c.endpoint = j.at("endpoint").get<std::string>();
  c.model_id = j.at("model_id").get<std::string>();
  c.timeout_secs = j.value("timeout_secs", c.timeout_secs);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.concurrency_limit = j.value("concurrency_limit", c.concurrency_limit);
  c.temperature = j.value("temperature", c.temperature);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.backoff_base_secs = j.value("backoff_base_secs", c.backoff_base_secs);
  c.backoff_factor = j.value("backoff_factor", c.backoff_factor);
  c.validate();
  return slot;
}

json slot_to_json(const std::optional<backend_slot>& slot) {
  if (!slot) return nullptr;
  if (slot->mock_fixture) return {{"mock", slot->mock_fixture->string()}};
  const auto& c = slot->remote;
  return {{"endpoint", c.endpoint},
          {"model_id", c.model_id},
          {"timeout_secs", c.timeout_secs},
          {"max_retries", c.max_retries},
          {"concurrency_limit", c.concurrency_limit},
          {"temperature", c.temperature},
          {"max_output_tokens", c.max_output_tokens},
          {"api_key_env", c.api_key_env},
          {"backoff_base_secs", c.backoff_base_secs},
          {"backoff_factor", c.backoff_factor}};
}

std::string format_accuracy(double pct) {
  const double rounded = std::round(pct * 100.0) / 100.0;
  if (rounded == std::floor(rounded)) return fmt::format("{:.1f}", rounded);
  return fmt::format("{}", rounded);
}

struct cli_options {
  std::string config_path;
  std::optional<std::string> cache_root;
  std::optional<std::size_t> parallelism;
  bool dry_run = false;
  bool verbose = false;
  bool no_cache = false;

  std::string input;  // video or manifest
  std::optional<std::string> ablation;
  std::optional<std::string> output_dir;
  std::optional<std::string> question;
  std::optional<std::string> prompt;
  std::optional<double> chunk_secs;
  std::optional<double> fps;
  std::optional<std::size_t> token_budget;
  std::optional<std::size_t> max_batch_items;
  bool skip_failed_chunks = false;
  std::optional<double> duration;

  bool with_subtitles = false;
  std::optional<double> z;
  bool fail_fast = false;
  std::optional<std::size_t> record_parallelism;

  bool yes = false;
};

// Each flag patches exactly one config key, so flags always win over the file.
json flag_patch(const cli_options& o) {
  json p = json::object();
  if (o.cache_root) p["cache_root"] = *o.cache_root;
  if (o.no_cache) p["cache"] = false;
  if (o.parallelism) p["parallelism"]["media"] = *o.parallelism;
  if (o.dry_run) p["dry_run"] = true;
  if (o.verbose) p["verbose"] = true;
  if (o.ablation) p["aggregation"]["mode"] = *o.ablation;
  if (o.output_dir) p["output_dir"] = *o.output_dir;
  if (o.question) p["question"] = *o.question;
  if (o.prompt) p["prompts"]["chunk_prompt"] = *o.prompt;
  if (o.token_budget) p["aggregation"]["token_budget"] = *o.token_budget;
  if (o.max_batch_items) p["aggregation"]["max_batch_items"] = *o.max_batch_items;
  if (o.skip_failed_chunks) p["skip_failed_chunks"] = true;
  if (o.duration) p["dry_run_duration"] = *o.duration;
  if (o.with_subtitles) p["benchmark"]["with_subtitles"] = true;
  if (o.z) p["benchmark"]["z"] = *o.z;
  if (o.fail_fast) p["benchmark"]["fail_fast"] = true;
  if (o.record_parallelism) p["benchmark"]["record_parallelism"] = *o.record_parallelism;
  if (o.yes) p["assume_yes"] = true;
  return p;
}

run_config resolve_config(const cli_options& o) {
  json j = o.config_path.empty() ? json::object() : load_config_file(o.config_path);
  if (o.chunk_secs || o.fps) {
    json c = j.contains("chunking") && j["chunking"].is_object() ? j["chunking"] : json::object();
    if (o.chunk_secs) c["chunk_secs"] = *o.chunk_secs;
    if (o.fps) c["sample_fps"] = *o.fps;
    j["chunking"] = c;
  }
  j.merge_patch(flag_patch(o));
  return run_config_from_json(j);
}

void print_chunk_plan(std::ostream& out, const chunk_plan& plan, const chunking_params& params) {
  out << fmt::format("chunk plan: {} chunk(s) over {:.3f} s (chunk_secs={}, sample_fps={})\n", plan.size(),
                     plan.video_duration(), params.chunk_secs(), params.sample_fps());
  for (const auto& c : plan.chunks()) {
    const bool last = c.index == static_cast<int>(plan.size());
    out << fmt::format("  chunk {:>4}: [{:.3f}, {:.3f}{} frames={}\n", c.index, c.range.start(), c.range.end(),
                       last ? "]" : ")", frame_count(c.range, params.sample_fps()));
  }
}

void print_batch_plan(std::ostream& out, const run_config& cfg, const pipeline_backends& backends,
                      std::size_t leaf_items, std::string_view agg_prompt) {
  const auto& agg = cfg.pipeline.aggregation;
  if (agg.mode == fusion_mode::no_llm_concat) {
    out << fmt::format("batch plan: mode=no_llm_concat, {} item(s) concatenated, no aggregation calls\n", leaf_items);
    return;
  }
  const auto* aggregator =
      agg.mode == fusion_mode::vlmm_aggregate ? backends.caption.get() : backends.aggregate.get();
  const auto prompt_tokens = estimate_tokens(agg_prompt, agg.estimator);
  out << fmt::format(
      "batch plan: mode={} aggregator={} leaf_items={} token_budget={} prompt_tokens={} room_per_call={} "
      "max_batch_items={} max_depth={} estimator={}\n",
      to_string(agg.mode), aggregator ? aggregator->id() : "none", leaf_items, agg.token_budget, prompt_tokens,
      agg.token_budget > prompt_tokens ? agg.token_budget - prompt_tokens : 0,
      agg.max_batch_items == 0 ? std::string("unlimited") : std::to_string(agg.max_batch_items), agg.max_depth,
      to_string(agg.estimator));
}

int cmd_analyze(const cli_options& opts, cli_io& io) {
  run_config cfg;
  pipeline_backends backends;
  try {
    cfg = resolve_config(opts);
    init_logging(cfg.verbose);
    if (!cfg.dry_run)
      require(fs::exists(opts.input), errc::not_found, fmt::format("video not found: {}", opts.input));
    backends = build_backends(cfg, io.factory);
    check_backends_for_mode(backends, cfg.pipeline.aggregation.mode);
  } catch (const error& e) {
    return report_error(io.err, e, exit_usage);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::config_error, e.what()), exit_usage);
  }

  pipeline_config pc = cfg.pipeline;
  try {
    pc.prompts = prompt_set(build_chunk_prompt(pc.prompts.chunk_prompt(), cfg.question),
                            build_chunk_prompt(pc.prompts.aggregation_prompt(), cfg.question));
    if (pc.aggregation.mode != fusion_mode::no_llm_concat) pc.aggregation.validate(pc.prompts.aggregation_prompt());
  } catch (const error& e) {
    return report_error(io.err, e, exit_usage);
  }
  pc.work_dir = cfg.output_dir / "work";

  if (cfg.dry_run) {
    if (!cfg.dry_run_duration)
      return report_error(io.err, error(errc::config_error, "--dry-run for analyze needs --duration <seconds>"),
                          exit_usage);
    try {
      const auto params = resolve_chunking(pc, *cfg.dry_run_duration);
      const auto plan = plan_chunks(*cfg.dry_run_duration, params.chunk_secs());
      print_chunk_plan(io.out, plan, params);
      const bool transcripts = cfg.pipeline.aggregation.mode != fusion_mode::no_stt;
      print_batch_plan(io.out, cfg, backends, plan.size() * (transcripts ? 2 : 1), pc.prompts.aggregation_prompt());
    } catch (const error& e) {
      return report_error(io.err, e, exit_usage);
    }
    return exit_ok;
  }

  try {
    const media_tool media(cfg.media);
    std::optional<cache_store> cache;
    if (cfg.cache_enabled) cache.emplace(cfg.cache_root);
    const pipeline_deps deps{&media, backends, cache ? &*cache : nullptr};
    const auto report = run_pipeline(opts.input, pc, deps);

    const auto run_id = make_run_id();
    fs::create_directories(cfg.output_dir);
    const auto report_path = cfg.output_dir / fmt::format("report_{}.json", run_id);
    write_file_atomic(report_path, to_json(report).dump(2));
    run_manifest manifest{run_id,
                          utc_timestamp(),
                          to_json(cfg),
                          {{"video", report.video_digest}},
                          report_path.filename().string(),
                          {{"qmavis", std::string(version_string)}, {"media_tool", media.version()}}};
    const auto manifest_path = write_run_manifest(cfg.output_dir, manifest);
    spdlog::info("report written to {} (manifest {})", report_path.string(), manifest_path.string());
    io.out << report.final_text;
    if (!report.final_text.ends_with('\n')) io.out << '\n';
    return exit_ok;
  } catch (const error& e) {
    return report_error(io.err, e, exit_runtime);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::storage_error, e.what()), exit_runtime);
  }
}

int cmd_bench(const cli_options& opts, cli_io& io) {
  run_config cfg;
  pipeline_backends backends;
  manifest records;
  try {
    cfg = resolve_config(opts);
    init_logging(cfg.verbose);
    records = load_manifest(opts.input);
    for (const auto& w : records.warnings) spdlog::warn("{}", w);
    require(!records.records.empty(), errc::manifest_error, fmt::format("manifest {} has no records", opts.input));
    backends = build_backends(cfg, io.factory);
    check_backends_for_mode(backends, cfg.pipeline.aggregation.mode);
  } catch (const error& e) {
    return report_error(io.err, e, exit_usage);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::config_error, e.what()), exit_usage);
  }

  prompt_set templates(cfg.bench_chunk_prompt, cfg.bench_aggregation_prompt);
  if (cfg.dry_run) {
    for (const auto& r : records.records)
      io.out << fmt::format("record {} [{}]: video={} options={} subtitles={}\n", r.id, to_string(r.duration),
                            r.video.string(), r.options.size(),
                            (cfg.with_subtitles && r.subtitles) ? r.subtitles->string() : "off");
    io.out << fmt::format("chunk prompt template: {}\n", templates.chunk_prompt());
    print_batch_plan(io.out, cfg, backends, 0, templates.aggregation_prompt());
    return exit_ok;
  }

  try {
    const media_tool media(cfg.media);
    std::optional<cache_store> cache;
    if (cfg.cache_enabled) cache.emplace(cfg.cache_root);
    const pipeline_deps deps{&media, backends, cache ? &*cache : nullptr};
    pipeline_config pc = cfg.pipeline;
    pc.work_dir = cfg.output_dir / "work";

    benchmark_options bo;
    bo.with_subtitles = cfg.with_subtitles;
    bo.fail_fast = cfg.fail_fast;
    bo.z = cfg.z;
    bo.record_parallelism = cfg.record_parallelism;
    bo.reports_dir = cfg.output_dir / "reports";
    const auto result = run_benchmark(records.records, templates, bo, pipeline_runner(pc, deps));

    std::string outcomes;
    for (const auto& o : result.outcomes) {
      outcomes += to_json(o).dump() + "\n";
      if (o.errored) spdlog::error("record {} failed: {}", o.record_id, o.error_message);
    }
    write_file_atomic(cfg.output_dir / "outcomes.jsonl", outcomes);
    write_file_atomic(cfg.output_dir / "metrics.json", to_json(result.summary).dump(2));

    const auto& m = result.summary;
    io.out << "accuracy: " << format_accuracy(m.accuracy_pct) << '\n';
    io.out << fmt::format("ci: [{:.4f}, {:.4f}] (z={})\n", m.ci.low, m.ci.high, m.z);
    spdlog::info("{} of {} correct, {} parse failure(s), {} error(s)", m.correct, m.n, m.parse_failures, m.errors);
    return exit_ok;
  } catch (const error& e) {
    return report_error(io.err, e, exit_runtime);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::storage_error, e.what()), exit_runtime);
  }
}

int cmd_cache(const cli_options& opts, const std::string& action, cli_io& io) {
  run_config cfg;
  try {
    cfg = resolve_config(opts);
    init_logging(cfg.verbose);
  } catch (const error& e) {
    return report_error(io.err, e, exit_usage);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::config_error, e.what()), exit_usage);
  }
  try {
    const cache_store cache(cfg.cache_root);
    if (action == "stats") {
      const auto s = cache.stats();
      for (const auto& [stage, n] : s.entries) io.out << fmt::format("{}: {}\n", stage, n);
      io.out << fmt::format("total: {} entries, {} bytes\n", s.total_entries, s.total_bytes);
      if (s.quarantined) io.out << fmt::format("quarantined: {}\n", s.quarantined);
      return exit_ok;
    }
    const auto before = cache.stats();
    if (!cfg.assume_yes) {
      io.err << fmt::format("remove {} cache entries under {}? [y/N] ", before.total_entries, cfg.cache_root.string());
      std::string answer;
      std::getline(io.in, answer);
      if (answer != "y" && answer != "Y" && answer != "yes") {
        io.err << "cache not cleared\n";
        return exit_ok;
      }
    }
    cache.clear();
    io.out << fmt::format("cleared {} entries\n", before.total_entries);
    return exit_ok;
  } catch (const error& e) {
    return report_error(io.err, e, exit_runtime);
  }
}

int cmd_probe(const cli_options& opts, cli_io& io) {
  run_config cfg;
  try {
    cfg = resolve_config(opts);
    init_logging(cfg.verbose);
    require(fs::exists(opts.input), errc::not_found, fmt::format("video not found: {}", opts.input));
  } catch (const error& e) {
    return report_error(io.err, e, exit_usage);
  } catch (const std::exception& e) {
    return report_error(io.err, error(errc::config_error, e.what()), exit_usage);
  }
  try {
    const media_tool media(cfg.media);
    const auto meta = media.probe(opts.input);
    io.out << json{{"path", meta.path.string()},
                   {"duration", meta.duration},
                   {"has_audio", meta.has_audio},
                   {"native_fps", meta.native_fps},
                   {"width", meta.width},
                   {"height", meta.height}}
                  .dump()
           << '\n';
    return exit_ok;
  } catch (const error& e) {
    return report_error(io.err, e, exit_runtime);
  }
}

}  // namespace

fs::path default_cache_root() {
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return fs::path(xdg) / "qmavis";
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "qmavis";
  return ".qmavis-cache";
}

json load_config_file(const fs::path& path) {
  require(fs::exists(path), errc::config_error, fmt::format("config file not found: {}", path.string()));
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(errc::config_error, fmt::format("{}: {}", path.string(), e.what()));
  }
  require(j.is_object(), errc::config_error, fmt::format("{}: config must be a JSON object", path.string()));
  const auto base = fs::absolute(path).parent_path();
  if (j.contains("backends") && j["backends"].is_object())
    for (auto& [name, slot] : j["backends"].items())
      if (slot.is_object() && slot.contains("mock") && slot["mock"].is_string())
        slot["mock"] = resolve_against(base, slot["mock"].get<std::string>()).string();
  for (const auto* key : {"cache_root", "output_dir"})
    if (j.contains(key) && j[key].is_string()) j[key] = resolve_against(base, j[key].get<std::string>()).string();
  return j;
}

run_config run_config_from_json(const json& j) {
  run_config cfg;
  try {
    require(j.is_object(), errc::config_error, "config must be a JSON object");
    const json backends = j.value("backends", json::object());
    cfg.caption = slot_from_json(backends.value("caption", json(nullptr)), role::caption);
    cfg.transcribe = slot_from_json(backends.value("transcribe", json(nullptr)), role::transcribe);
    cfg.aggregate = slot_from_json(backends.value("aggregate", json(nullptr)), role::aggregate);

    auto& pc = cfg.pipeline;
    if (j.contains("chunking") && j["chunking"].is_object()) {
      pc.chunking = chunking_from_json(j["chunking"], pc.auto_params.short_params);
    } else if (j.contains("chunking")) {
      require(j["chunking"] == "auto", errc::config_error, "chunking must be \"auto\" or an object");
    }
    if (j.contains("auto_chunking")) {
      const auto& a = j["auto_chunking"];
      pc.auto_params.long_threshold_secs = a.value("long_threshold_secs", pc.auto_params.long_threshold_secs);
      if (a.contains("short")) pc.auto_params.short_params = chunking_from_json(a["short"], pc.auto_params.short_params);
      if (a.contains("long")) pc.auto_params.long_params = chunking_from_json(a["long"], pc.auto_params.long_params);
    }
    if (j.contains("prompts")) {
      const auto& p = j["prompts"];
      pc.prompts = prompt_set(p.value("chunk_prompt", pc.prompts.chunk_prompt()),
                              p.value("aggregation_prompt", pc.prompts.aggregation_prompt()));
    }
    if (j.contains("aggregation")) {
      const auto& a = j["aggregation"];
      auto& agg = pc.aggregation;
      agg.token_budget = a.value("token_budget", agg.token_budget);
      agg.max_depth = a.value("max_depth", agg.max_depth);
      agg.max_batch_items = a.value("max_batch_items", agg.max_batch_items);
      if (a.contains("estimator")) agg.estimator = token_estimator_from_string(a["estimator"].get<std::string>());
      if (a.contains("mode")) agg.mode = fusion_mode_from_string(a["mode"].get<std::string>());
    }
    pc.skip_failed_chunks = j.value("skip_failed_chunks", pc.skip_failed_chunks);
    if (j.contains("parallelism")) {
      const auto& p = j["parallelism"];
      cfg.media.parallelism = p.value("media", cfg.media.parallelism);
      pc.chunk_parallelism = p.value("chunks", pc.chunk_parallelism);
      require(cfg.media.parallelism >= 1 && pc.chunk_parallelism >= 1, errc::config_error,
              "parallelism limits must be >= 1");
    }
    if (j.contains("media")) {
      const auto& m = j["media"];
      auto& mc = cfg.media;
      mc.program = m.value("program", mc.program);
      mc.probe_args = m.value("probe_args", mc.probe_args);
      mc.frames_args = m.value("frames_args", mc.frames_args);
      mc.audio_args = m.value("audio_args", mc.audio_args);
      mc.version_args = m.value("version_args", mc.version_args);
      mc.duration_regex = m.value("duration_regex", mc.duration_regex);
      mc.video_stream_regex = m.value("video_stream_regex", mc.video_stream_regex);
      mc.audio_stream_regex = m.value("audio_stream_regex", mc.audio_stream_regex);
      mc.fps_regex = m.value("fps_regex", mc.fps_regex);
      mc.size_regex = m.value("size_regex", mc.size_regex);
      mc.jpeg_quality = m.value("jpeg_quality", mc.jpeg_quality);
      mc.max_side = m.value("max_side", mc.max_side);
    }
    if (j.contains("benchmark")) {
      const auto& b = j["benchmark"];
      cfg.bench_chunk_prompt = b.value("chunk_prompt", cfg.bench_chunk_prompt);
      cfg.bench_aggregation_prompt = b.value("aggregation_prompt", cfg.bench_aggregation_prompt);
      cfg.z = b.value("z", cfg.z);
      require(cfg.z > 0.0, errc::config_error, "z must be positive");
      cfg.with_subtitles = b.value("with_subtitles", cfg.with_subtitles);
      cfg.fail_fast = b.value("fail_fast", cfg.fail_fast);
      cfg.record_parallelism = b.value("record_parallelism", cfg.record_parallelism);
    }
    cfg.cache_enabled = j.value("cache", cfg.cache_enabled);
    cfg.cache_root = j.contains("cache_root") ? fs::path(j["cache_root"].get<std::string>()) : default_cache_root();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("question") && !j["question"].is_null()) cfg.question = j["question"].get<std::string>();
    if (j.contains("dry_run_duration") && !j["dry_run_duration"].is_null())
      cfg.dry_run_duration = j["dry_run_duration"].get<double>();
    cfg.dry_run = j.value("dry_run", cfg.dry_run);
    cfg.verbose = j.value("verbose", cfg.verbose);
    cfg.assume_yes = j.value("assume_yes", cfg.assume_yes);
  } catch (const error& e) {
    if (e.code() == errc::config_error) throw;
    fail(errc::config_error, e.what());
  } catch (const json::exception& e) {
    fail(errc::config_error, fmt::format("invalid config: {}", e.what()));
  }
  return cfg;
}

json to_json(const run_config& cfg) {
  const auto& pc = cfg.pipeline;
  const auto& m = cfg.media;
  return {
      {"backends",
       {{"caption", slot_to_json(cfg.caption)},
        {"transcribe", slot_to_json(cfg.transcribe)},
        {"aggregate", slot_to_json(cfg.aggregate)}}},
      {"chunking", pc.chunking ? chunking_to_json(*pc.chunking) : json("auto")},
      {"auto_chunking",
       {{"long_threshold_secs", pc.auto_params.long_threshold_secs},
        {"short", chunking_to_json(pc.auto_params.short_params)},
        {"long", chunking_to_json(pc.auto_params.long_params)}}},
      {"prompts", {{"chunk_prompt", pc.prompts.chunk_prompt()}, {"aggregation_prompt", pc.prompts.aggregation_prompt()}}},
      {"aggregation",
       {{"token_budget", pc.aggregation.token_budget},
        {"estimator", to_string(pc.aggregation.estimator)},
        {"mode", to_string(pc.aggregation.mode)},
        {"max_depth", pc.aggregation.max_depth},
        {"max_batch_items", pc.aggregation.max_batch_items}}},
      {"skip_failed_chunks", pc.skip_failed_chunks},
      {"parallelism", {{"media", m.parallelism}, {"chunks", pc.chunk_parallelism}}},
      {"media",
       {{"program", m.program},
        {"probe_args", m.probe_args},
        {"frames_args", m.frames_args},
        {"audio_args", m.audio_args},
        {"version_args", m.version_args},
        {"duration_regex", m.duration_regex},
        {"video_stream_regex", m.video_stream_regex},
        {"audio_stream_regex", m.audio_stream_regex},
        {"fps_regex", m.fps_regex},
        {"size_regex", m.size_regex},
        {"jpeg_quality", m.jpeg_quality},
        {"max_side", m.max_side}}},
      {"benchmark",
       {{"chunk_prompt", cfg.bench_chunk_prompt},
        {"aggregation_prompt", cfg.bench_aggregation_prompt},
        {"z", cfg.z},
        {"with_subtitles", cfg.with_subtitles},
        {"fail_fast", cfg.fail_fast},
        {"record_parallelism", cfg.record_parallelism}}},
      {"cache", cfg.cache_enabled},
      {"cache_root", cfg.cache_root.string()},
      {"output_dir", cfg.output_dir.string()},
      {"question", cfg.question ? json(*cfg.question) : json(nullptr)},
      {"dry_run_duration", cfg.dry_run_duration ? json(*cfg.dry_run_duration) : json(nullptr)},
      {"dry_run", cfg.dry_run},
      {"verbose", cfg.verbose},
      {"assume_yes", cfg.assume_yes},
  };
}

std::shared_ptr<backend> default_backend_factory(role r, const backend_slot& slot) {
  if (slot.mock_fixture) return make_mock_backend(r, *slot.mock_fixture);
  auto cfg = slot.remote;
  cfg.backend_role = r;
  return std::make_shared<http_backend>(std::move(cfg));
}

pipeline_backends build_backends(const run_config& cfg, const backend_factory& factory) {
  pipeline_backends out;
  if (cfg.caption) out.caption = factory(role::caption, *cfg.caption);
  if (cfg.transcribe) out.transcribe = factory(role::transcribe, *cfg.transcribe);
  if (cfg.aggregate) out.aggregate = factory(role::aggregate, *cfg.aggregate);
  return out;
}

void init_logging(bool verbose) {
  auto logger = spdlog::get("qmavis");
  if (!logger) {
    logger = spdlog::stderr_color_mt("qmavis");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);
}

int run_cli(const std::vector<std::string>& args, cli_io& io) {
  CLI::App app{"qmavis: long video-audio understanding by late fusion of captioner, transcriber and LLM outputs",
               "qmavis"};
  app.set_version_flag("--version", std::string(version_string));
  app.require_subcommand(1);
  app.fallthrough();

  cli_options o;
  app.add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--cache-root", o.cache_root, "cache directory (config: cache_root)");
  app.add_flag("--no-cache", o.no_cache, "disable the result cache (config: cache=false)");
  app.add_option("--parallelism", o.parallelism, "concurrent media-tool invocations (config: parallelism.media)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", o.dry_run, "print the chunk and batch plan without running anything (config: dry_run)");
  app.add_flag("-v,--verbose", o.verbose, "debug logging on stderr (config: verbose)");

  const std::vector<std::string> ablations{"full", "no-llm-concat", "vlmm-aggregate", "no-stt"};
  auto add_pipeline_flags = [&](CLI::App* cmd) {
    cmd->add_option("--ablation", o.ablation, "run mode (config: aggregation.mode)")->check(CLI::IsMember(ablations));
    cmd->add_option("--output-dir", o.output_dir, "where reports are written (config: output_dir)");
    cmd->add_option("--chunk-secs", o.chunk_secs, "fixed chunk length (config: chunking.chunk_secs)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--fps", o.fps, "frame sampling rate (config: chunking.sample_fps)")->check(CLI::PositiveNumber);
    cmd->add_option("--token-budget", o.token_budget, "max tokens per aggregation call (config: aggregation.token_budget)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-batch-items", o.max_batch_items,
                    "max items per aggregation call, 0 = unlimited (config: aggregation.max_batch_items)");
    cmd->add_flag("--skip-failed-chunks", o.skip_failed_chunks,
                  "substitute placeholders for failed chunks (config: skip_failed_chunks)");
  };

  auto* analyze = app.add_subcommand("analyze", "analyze one video; prints the final text");
  analyze->add_option("video", o.input, "input video")->required();
  add_pipeline_flags(analyze);
  analyze->add_option("--question", o.question, "substituted into {question} prompts (config: question)");
  analyze->add_option("--prompt", o.prompt, "chunk prompt template (config: prompts.chunk_prompt)");
  analyze->add_option("--duration", o.duration, "video duration for --dry-run (config: dry_run_duration)")
      ->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "run a multiple-choice benchmark manifest");
  bench->add_option("manifest", o.input, "JSON-lines manifest")->required();
  add_pipeline_flags(bench);
  bench->add_flag("--with-subtitles", o.with_subtitles, "inject per-chunk subtitles (config: benchmark.with_subtitles)");
  bench->add_option("--z", o.z, "critical value for the confidence interval (config: benchmark.z)")
      ->check(CLI::PositiveNumber);
  bench->add_flag("--fail-fast", o.fail_fast, "abort on the first failing record (config: benchmark.fail_fast)");
  bench->add_option("--record-parallelism", o.record_parallelism,
                    "records evaluated concurrently (config: benchmark.record_parallelism)")
      ->check(CLI::PositiveNumber);

  auto* cache = app.add_subcommand("cache", "inspect or clear the result cache");
  cache->require_subcommand(1);
  cache->add_subcommand("stats", "entry counts per stage and total bytes");
  auto* clear = cache->add_subcommand("clear", "remove every cache entry");
  clear->add_flag("-y,--yes", o.yes, "do not ask for confirmation (config: assume_yes)");

  auto* probe = app.add_subcommand("probe", "print a video's metadata as JSON");
  probe->add_option("video", o.input, "input video")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, io.out, io.err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, io.out, io.err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, io.out, io.err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, io.out, io.err);
    return exit_usage;
  }

  if (analyze->parsed()) return cmd_analyze(o, io);
  if (bench->parsed()) return cmd_bench(o, io);
  if (probe->parsed()) return cmd_probe(o, io);
  if (cache->parsed()) return cmd_cache(o, clear->parsed() ? "clear" : "stats", io);
  return exit_usage;
}

}  // namespace qmavis
