#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qmavis {

// Every failure raised by the library carries one of these codes so callers
// (the CLI in particular) can map failures to exit codes and stage labels.
enum class errc {
  invalid_argument,
  missing_substitution,
  not_found,
  probe_error,
  media_extraction,
  no_audio,
  backend_unavailable,
  request_rejected,
  empty_response,
  context_exceeded,
  protocol_error,
  fixture_parse,
  fixture_miss,
  interleave_integrity,
  budget_infeasible,
  aggregation_divergence,
  manifest_error,
  subtitle_parse,
  storage_error,
  integrity_error,
  config_error,
};

std::string_view to_string(errc code) noexcept;

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool cond, errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace qmavis
