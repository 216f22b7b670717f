#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmavis/core.hpp"
#include "qmavis/media.hpp"
#include "qmavis/util.hpp"

namespace qmavis {

enum class role { caption, transcribe, aggregate };

std::string_view to_string(role r) noexcept;
role role_from_string(std::string_view name);

struct backend_config {
  role backend_role = role::aggregate;
  std::string endpoint;  // e.g. http://host:8000/v1
  std::string model_id;
  double timeout_secs = 300.0;
  int max_retries = 3;
  int concurrency_limit = 4;
  double temperature = 0.0;
  int max_output_tokens = 1024;
  std::string api_key_env;  // name of the variable holding a bearer token

  // Retry delay before re-attempt k (1-based) is base * factor^(k-1).
  double backoff_base_secs = 1.0;
  double backoff_factor = 2.0;

  void validate() const;
};

struct token_usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct backend_response {
  std::string text;
  std::optional<token_usage> usage;
  double latency_secs = 0.0;
  int attempt_count = 1;
};

inline constexpr std::string_view no_speech_marker = "[no speech]";

// One model service. Implementations perform the raw request only; the
// free functions below validate inputs, enforce the concurrency limit and
// normalise outputs.
class backend {
 public:
  backend(role r, std::size_t concurrency_limit) : role_(r), gate_(concurrency_limit) {}
  virtual ~backend() = default;
  backend(const backend&) = delete;
  backend& operator=(const backend&) = delete;

  role backend_role() const noexcept { return role_; }

  // Stable identity of the model behind this handle (endpoint + model id for
  // remote services). Used in cache keys.
  virtual std::string id() const = 0;

  virtual backend_response request_caption(std::string_view prompt, const frame_set& frames) = 0;
  virtual backend_response request_transcription(const audio_segment& audio) = 0;
  virtual backend_response request_completion(std::string_view prompt, std::string_view body) = 0;

  admission_gate& gate() noexcept { return gate_; }
  std::size_t calls() const noexcept { return calls_; }
  void count_call() noexcept { ++calls_; }

 private:
  role role_;
  admission_gate gate_;
  std::atomic<std::size_t> calls_{0};
};

backend_response caption_chunk(backend& b, std::string_view prompt, const frame_set& frames);
backend_response transcribe_chunk(backend& b, const audio_segment& audio);
// Accepted on aggregate backends and on caption backends (video model acting
// as the aggregator).
backend_response aggregate_text(backend& b, std::string_view prompt, std::string_view body);

// OpenAI-compatible HTTP client: chat completions for caption/aggregate,
// audio transcriptions for transcribe.
class http_backend final : public backend {
 public:
  explicit http_backend(backend_config config);

  std::string id() const override;
  const backend_config& config() const noexcept { return config_; }

  backend_response request_caption(std::string_view prompt, const frame_set& frames) override;
  backend_response request_transcription(const audio_segment& audio) override;
  backend_response request_completion(std::string_view prompt, std::string_view body) override;

  nlohmann::json chat_request_body(std::string_view prompt, const frame_set& frames) const;
  nlohmann::json completion_request_body(std::string_view prompt, std::string_view body) const;

 private:
  backend_config config_;
  std::string host_;       // scheme://host[:port]
  std::string base_path_;  // path prefix without trailing slash
};

// Deterministic scripted backend. Fixture shapes by role:
//   caption:    {"captions": {"<chunk index>": "text", ...}, "aggregate": <aggregator>?}
//   transcribe: {"cues": [{"start": s, "end": e, "text": "..."}, ...]}
//   aggregate:  {"kind": "identity"|"concat"|"template", "template": "...",
//                "rules": [{"contains": "...", "template": "..."}]}
// Templates understand {prompt} {body} {body_bytes} {body_sha8}. A caption
// fixture without "aggregate" aggregates as identity.
class mock_backend final : public backend {
 public:
  mock_backend(role r, nlohmann::json fixture);

  std::string id() const override { return id_; }

  backend_response request_caption(std::string_view prompt, const frame_set& frames) override;
  backend_response request_transcription(const audio_segment& audio) override;
  backend_response request_completion(std::string_view prompt, std::string_view body) override;

 private:
  struct rule {
    std::string contains;
    std::string output_template;
  };
  enum class aggregator_kind { identity, concat, templated };

  void parse_aggregator(const nlohmann::json& spec);

  std::string id_;
  std::map<int, std::string> captions_;
  std::vector<subtitle_cue> cues_;
  aggregator_kind kind_ = aggregator_kind::identity;
  std::string template_;
  std::vector<rule> rules_;
};

std::shared_ptr<backend> make_mock_backend(role r, const nlohmann::json& fixture);
std::shared_ptr<backend> make_mock_backend(role r, const std::filesystem::path& fixture_path);

}  // namespace qmavis
