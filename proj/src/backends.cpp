#include "qmavis/backends.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace qmavis {
namespace {

using clock_type = std::chrono::steady_clock;

bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

bool looks_like_context_overflow(std::string_view body) {
  static const std::regex pattern(
      R"(context_length_exceeded|maximum context length|context window|too many tokens)",
      std::regex::icase);
  return std::regex_search(body.begin(), body.end(), pattern);
}

std::optional<token_usage> read_usage(const nlohmann::json& j) {
  if (!j.contains("usage") || !j["usage"].is_object()) return std::nullopt;
  const auto& u = j["usage"];
  token_usage usage;
  usage.prompt_tokens = u.value("prompt_tokens", 0);
  usage.completion_tokens = u.value("completion_tokens", 0);
  return usage;
}

std::string read_message_text(const nlohmann::json& j) {
  const auto& content = j.at("choices").at(0).at("message").at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  if (content.is_array()) {
    for (const auto& part : content)
      if (part.value("type", "") == "text") text += part.value("text", "");
    return text;
  }
  if (content.is_null()) return text;
  throw std::runtime_error("message content has unexpected type");
}

}  // namespace

std::string_view to_string(role r) noexcept {
  switch (r) {
    case role::caption: return "caption";
    case role::transcribe: return "transcribe";
    case role::aggregate: return "aggregate";
  }
  return "unknown";
}

role role_from_string(std::string_view name) {
  if (name == "caption") return role::caption;
  if (name == "transcribe") return role::transcribe;
  if (name == "aggregate") return role::aggregate;
  fail(errc::config_error, fmt::format("unknown backend role '{}'", name));
}

void backend_config::validate() const {
  require(concurrency_limit >= 1, errc::config_error, "concurrency_limit must be >= 1");
  require(max_retries >= 0, errc::config_error, "max_retries must be >= 0");
  require(timeout_secs > 0.0, errc::config_error, "timeout must be positive");
  require(temperature >= 0.0 && temperature <= 2.0, errc::config_error, "temperature must lie in [0, 2]");
  require(max_output_tokens >= 1, errc::config_error, "max_output_tokens must be positive");
  require(backoff_base_secs >= 0.0 && backoff_factor >= 1.0, errc::config_error,
          "backoff must be non-negative with factor >= 1");
}

backend_response caption_chunk(backend& b, std::string_view prompt, const frame_set& frames) {
  require(b.backend_role() == role::caption, errc::invalid_argument,
          fmt::format("caption_chunk needs a caption backend, got {}", to_string(b.backend_role())));
  require(!frames.frames.empty(), errc::invalid_argument,
          fmt::format("chunk {} has no frames to caption", frames.chunk_index));
  require(!prompt.empty(), errc::invalid_argument, "caption prompt must not be empty");
  admission_gate::permit permit(b.gate());
  b.count_call();
  auto response = b.request_caption(prompt, frames);
  require(!is_blank(response.text), errc::empty_response,
          fmt::format("{} returned an empty caption for chunk {}", b.id(), frames.chunk_index));
  return response;
}

backend_response transcribe_chunk(backend& b, const audio_segment& audio) {
  require(b.backend_role() == role::transcribe, errc::invalid_argument,
          fmt::format("transcribe_chunk needs a transcribe backend, got {}", to_string(b.backend_role())));
  require(!audio.wav.empty(), errc::invalid_argument,
          fmt::format("chunk {} has an empty audio payload", audio.chunk_index));
  admission_gate::permit permit(b.gate());
  b.count_call();
  auto response = b.request_transcription(audio);
  if (is_blank(response.text)) response.text = std::string(no_speech_marker);
  return response;
}

backend_response aggregate_text(backend& b, std::string_view prompt, std::string_view body) {
  require(b.backend_role() == role::aggregate || b.backend_role() == role::caption,
          errc::invalid_argument,
          fmt::format("aggregate_text needs an aggregate or caption backend, got {}",
                      to_string(b.backend_role())));
  require(!body.empty(), errc::invalid_argument, "aggregation body must not be empty");
  admission_gate::permit permit(b.gate());
  b.count_call();
  auto response = b.request_completion(prompt, body);
  require(!is_blank(response.text), errc::empty_response, fmt::format("{} returned an empty completion", b.id()));
  return response;
}

// ---------------------------------------------------------------------------
// http_backend

namespace {

struct attempt_result {
  int status = 0;  // 0 = transport failure
  std::string body;
  std::string transport_error;
};

template <typename Send>
std::pair<attempt_result, int> send_with_retries(const backend_config& cfg, const std::string& what,
                                                   Send&& send) {
  attempt_result last;
  const int max_attempts = cfg.max_retries + 1;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    last = send();
    const bool retryable = last.status == 0 || last.status == 429 || last.status >= 500;
    if (!retryable || attempt == max_attempts) return {last, attempt};
    const double delay = cfg.backoff_base_secs * std::pow(cfg.backoff_factor, attempt - 1);
    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
  }
  (void)what;
  return {last, max_attempts};
}

void raise_for(const attempt_result& r, int attempts, const std::string& who) {
  if (r.status == 0)
    fail(errc::backend_unavailable,
         fmt::format("{}: transport failure after {} attempt(s): {}", who, attempts, r.transport_error));
  if (r.status == 429 || r.status >= 500)
    fail(errc::backend_unavailable,
         fmt::format("{}: HTTP {} after {} attempt(s): {}", who, r.status, attempts, r.body));
  if (r.status >= 400) {
    if (looks_like_context_overflow(r.body))
      fail(errc::context_exceeded, fmt::format("{}: context exceeded (HTTP {}): {}", who, r.status, r.body));
    fail(errc::request_rejected, fmt::format("{}: request rejected (HTTP {}): {}", who, r.status, r.body));
  }
}

}  // namespace

http_backend::http_backend(backend_config config)
    : backend(config.backend_role, static_cast<std::size_t>(std::max(1, config.concurrency_limit))),
      config_(std::move(config)) {
  config_.validate();
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  require(std::regex_match(config_.endpoint, m, url), errc::config_error,
          fmt::format("endpoint '{}' is not an http(s) URL", config_.endpoint));
  host_ = m[1];
  base_path_ = m[2];
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  require(!config_.model_id.empty(), errc::config_error, "model_id must not be empty");
}

std::string http_backend::id() const { return config_.endpoint + "#" + config_.model_id; }

nlohmann::json http_backend::chat_request_body(std::string_view prompt, const frame_set& frames) const {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", std::string(prompt)}});
  for (const auto& f : frames.frames) {
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:image/jpeg;base64," + base64_encode(f.jpeg)}}}});
  }
  return {{"model", config_.model_id},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
          {"temperature", config_.temperature},
          {"max_tokens", config_.max_output_tokens}};
}

nlohmann::json http_backend::completion_request_body(std::string_view prompt, std::string_view body) const {
  nlohmann::json messages = nlohmann::json::array();
  messages.push_back({{"role", "system"}, {"content", std::string(prompt)}});
  messages.push_back({{"role", "user"}, {"content", std::string(body)}});
  return {{"model", config_.model_id},
          {"messages", messages},
          {"temperature", config_.temperature},
          {"max_tokens", config_.max_output_tokens}};
}

namespace {

httplib::Client make_client(const std::string& host, const backend_config& cfg) {
  httplib::Client cli(host);
  const auto secs = static_cast<time_t>(cfg.timeout_secs);
  const auto usecs = static_cast<time_t>((cfg.timeout_secs - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  return cli;
}

httplib::Headers auth_headers(const backend_config& cfg) {
  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    if (const char* token = std::getenv(cfg.api_key_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  return headers;
}

attempt_result to_attempt(const httplib::Result& res) {
  attempt_result r;
  if (!res) {
    r.transport_error = httplib::to_string(res.error());
    return r;
  }
  r.status = res->status;
  r.body = res->body;
  return r;
}

backend_response parse_chat(const attempt_result& r, const std::string& who) {
  backend_response out;
  try {
    const auto j = nlohmann::json::parse(r.body);
    out.text = read_message_text(j);
    out.usage = read_usage(j);
  } catch (const std::exception& e) {
    fail(errc::protocol_error, fmt::format("{}: malformed chat response: {}", who, e.what()));
  }
  return out;
}

}  // namespace

backend_response http_backend::request_caption(std::string_view prompt, const frame_set& frames) {
  const auto t0 = clock_type::now();
  const auto payload = chat_request_body(prompt, frames).dump();
  const auto path = base_path_ + "/chat/completions";
  auto [result, attempts] = send_with_retries(config_, "caption", [&] {
    auto cli = make_client(host_, config_);
    return to_attempt(cli.Post(path, auth_headers(config_), payload, "application/json"));
  });
  const auto who = fmt::format("{} (chunk {})", id(), frames.chunk_index);
  raise_for(result, attempts, who);
  auto out = parse_chat(result, who);
  out.attempt_count = attempts;
  out.latency_secs = seconds_since(t0);
  return out;
}

backend_response http_backend::request_completion(std::string_view prompt, std::string_view body) {
  const auto t0 = clock_type::now();
  const auto payload = completion_request_body(prompt, body).dump();
  const auto path = base_path_ + "/chat/completions";
  auto [result, attempts] = send_with_retries(config_, "aggregate", [&] {
    auto cli = make_client(host_, config_);
    return to_attempt(cli.Post(path, auth_headers(config_), payload, "application/json"));
  });
  raise_for(result, attempts, id());
  auto out = parse_chat(result, id());
  out.attempt_count = attempts;
  out.latency_secs = seconds_since(t0);
  return out;
}

backend_response http_backend::request_transcription(const audio_segment& audio) {
  const auto t0 = clock_type::now();
  const auto path = base_path_ + "/audio/transcriptions";
  httplib::MultipartFormDataItems items{
      {"file", audio.wav, "audio.wav", "audio/wav"},
      {"model", config_.model_id, "", ""},
      {"response_format", "json", "", ""},
      {"temperature", fmt::format("{}", config_.temperature), "", ""},
  };
  auto [result, attempts] = send_with_retries(config_, "transcribe", [&] {
    auto cli = make_client(host_, config_);
    return to_attempt(cli.Post(path, auth_headers(config_), items));
  });
  const auto who = fmt::format("{} (chunk {})", id(), audio.chunk_index);
  raise_for(result, attempts, who);
  backend_response out;
  try {
    const auto j = nlohmann::json::parse(result.body);
    out.text = j.at("text").get<std::string>();
    out.usage = read_usage(j);
  } catch (const std::exception& e) {
    fail(errc::protocol_error, fmt::format("{}: malformed transcription response: {}", who, e.what()));
  }
  out.attempt_count = attempts;
  out.latency_secs = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// mock_backend

mock_backend::mock_backend(role r, nlohmann::json fixture) : backend(r, 64) {
  try {
    require(fixture.is_object(), errc::fixture_parse, "mock fixture must be a JSON object");
    if (fixture.contains("role"))
      require(fixture["role"].get<std::string>() == to_string(r), errc::fixture_parse,
              fmt::format("fixture role '{}' does not match {}", fixture["role"].get<std::string>(), to_string(r)));
    id_ = fmt::format("mock:{}:{}", to_string(r), sha256_hex(fixture.dump()).substr(0, 16));

    switch (r) {
      case role::caption: {
        require(fixture.contains("captions") && fixture["captions"].is_object(), errc::fixture_parse,
                "caption fixture needs a \"captions\" object");
        for (const auto& [key, value] : fixture["captions"].items()) {
          std::size_t used = 0;
          const int index = std::stoi(key, &used);
          require(used == key.size() && index >= 1, errc::fixture_parse,
                  fmt::format("caption fixture key '{}' is not a chunk index", key));
          captions_[index] = value.get<std::string>();
        }
        parse_aggregator(fixture.value("aggregate", nlohmann::json{{"kind", "identity"}}));
        break;
      }
      case role::transcribe: {
        require(fixture.contains("cues") && fixture["cues"].is_array(), errc::fixture_parse,
                "transcribe fixture needs a \"cues\" array");
        for (const auto& cue : fixture["cues"])
          cues_.push_back({time_range(cue.at("start").get<double>(), cue.at("end").get<double>()),
                           cue.at("text").get<std::string>()});
        break;
      }
      case role::aggregate:
        parse_aggregator(fixture);
        break;
    }
  } catch (const error& e) {
    if (e.code() == errc::fixture_parse) throw;
    fail(errc::fixture_parse, fmt::format("malformed {} fixture: {}", to_string(r), e.what()));
  } catch (const std::exception& e) {
    fail(errc::fixture_parse, fmt::format("malformed {} fixture: {}", to_string(r), e.what()));
  }
}

void mock_backend::parse_aggregator(const nlohmann::json& spec) {
  require(spec.is_object(), errc::fixture_parse, "aggregator fixture must be an object");
  const auto kind = spec.value("kind", "identity");
  if (kind == "identity") {
    kind_ = aggregator_kind::identity;
  } else if (kind == "concat") {
    kind_ = aggregator_kind::concat;
  } else if (kind == "template") {
    kind_ = aggregator_kind::templated;
    template_ = spec.at("template").get<std::string>();
    for (const auto& r : spec.value("rules", nlohmann::json::array()))
      rules_.push_back({r.at("contains").get<std::string>(), r.at("template").get<std::string>()});
  } else {
    fail(errc::fixture_parse, fmt::format("unknown aggregator kind '{}'", kind));
  }
}

backend_response mock_backend::request_caption(std::string_view, const frame_set& frames) {
  const auto it = captions_.find(frames.chunk_index);
  require(it != captions_.end(), errc::fixture_miss,
          fmt::format("caption fixture has no entry for chunk {}", frames.chunk_index));
  return {it->second, std::nullopt, 0.0, 1};
}

backend_response mock_backend::request_transcription(const audio_segment& audio) {
  std::string text;
  for (const auto& cue : cues_) {
    if (!cue.range.overlaps(audio.range)) continue;
    if (!text.empty()) text += '\n';
    text += cue.text;
  }
  return {text, std::nullopt, 0.0, 1};
}

backend_response mock_backend::request_completion(std::string_view prompt, std::string_view body) {
  switch (kind_) {
    case aggregator_kind::identity:
      return {std::string(body), std::nullopt, 0.0, 1};
    case aggregator_kind::concat:
      return {fmt::format("{}\n{}", prompt, body), std::nullopt, 0.0, 1};
    case aggregator_kind::templated:
      break;
  }
  const std::string request = fmt::format("{}\n{}", prompt, body);
  const std::string* chosen = &template_;
  for (const auto& r : rules_) {
    if (request.find(r.contains) != std::string::npos) {
      chosen = &r.output_template;
      break;
    }
  }
  const std::map<std::string, std::string> values{
      {"prompt", std::string(prompt)},
      {"body", std::string(body)},
      {"body_bytes", std::to_string(body.size())},
      {"body_sha8", sha256_hex(body).substr(0, 8)},
  };
  return {expand_template(*chosen, values), std::nullopt, 0.0, 1};
}

std::shared_ptr<backend> make_mock_backend(role r, const nlohmann::json& fixture) {
  return std::make_shared<mock_backend>(r, fixture);
}

std::shared_ptr<backend> make_mock_backend(role r, const std::filesystem::path& fixture_path) {
  const auto text = read_file(fixture_path);
  nlohmann::json fixture;
  try {
    fixture = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(errc::fixture_parse, fmt::format("{}: {}", fixture_path.string(), e.what()));
  }
  return make_mock_backend(r, fixture);
}

}  // namespace qmavis
