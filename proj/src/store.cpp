#include "qmavis/store.hpp"

#include <chrono>
#include <ctime>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "qmavis/error.hpp"
#include "qmavis/util.hpp"

namespace qmavis {
namespace fs = std::filesystem;

namespace {
constexpr cache_stage all_stages[] = {cache_stage::caption, cache_stage::transcript, cache_stage::aggregate};
}

std::string_view to_string(cache_stage s) noexcept {
  switch (s) {
    case cache_stage::caption: return "caption";
    case cache_stage::transcript: return "transcript";
    case cache_stage::aggregate: return "aggregate";
  }
  return "unknown";
}

nlohmann::json cache_key::to_json() const {
  return {{"video_digest", video_digest}, {"chunk_index", chunk_index},
          {"stage", std::string(to_string(stage))}, {"backend_id", backend_id},
          {"prompt_digest", prompt_digest}, {"params_digest", params_digest}};
}

std::string cache_key::digest() const {
  // nlohmann::json objects serialise with sorted keys, which makes this canonical.
  return sha256_hex("qmavis-cache-v1\n" + to_json().dump());
}

cache_store::cache_store(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  require(!ec, errc::storage_error, fmt::format("cannot create cache root {}: {}", root_.string(), ec.message()));
}

fs::path cache_store::entry_path(const cache_key& key) const {
  const auto d = key.digest();
  return root_ / std::string(to_string(key.stage)) / d.substr(0, 2) / (d + ".json");
}

void cache_store::quarantine(const fs::path& path, std::string_view reason) const {
  std::error_code ec;
  const auto dir = root_ / "quarantine";
  fs::create_directories(dir, ec);
  const auto dest = dir / fmt::format("{}.{}", path.filename().string(),
                                      std::chrono::system_clock::now().time_since_epoch().count());
  fs::rename(path, dest, ec);
  if (ec) fs::remove(path, ec);
  spdlog::warn("cache entry {} quarantined: {}", path.string(), reason);
}

std::optional<std::string> cache_store::read_entry(const fs::path& path, const cache_key& key) const {
  std::string raw;
  try {
    raw = read_file(path);
  } catch (const error&) {
    return std::nullopt;
  }
  try {
    const auto j = nlohmann::json::parse(raw);
    const auto text = j.at("text").get<std::string>();
    if (j.at("checksum").get<std::string>() != sha256_hex(text)) {
      quarantine(path, "checksum mismatch");
      return std::nullopt;
    }
    if (j.at("key") != key.to_json()) {
      quarantine(path, "key fields do not match the entry's address");
      return std::nullopt;
    }
    return text;
  } catch (const std::exception& e) {
    quarantine(path, e.what());
    return std::nullopt;
  }
}

std::optional<std::string> cache_store::get(const cache_key& key) const {
  const auto path = entry_path(key);
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    ++misses_;
    return std::nullopt;
  }
  auto text = read_entry(path, key);
  ++(text ? hits_ : misses_);
  return text;
}

void cache_store::put(const cache_key& key, std::string_view text) const {
  const auto path = entry_path(key);
  std::error_code ec;
  if (fs::exists(path, ec)) {
    if (const auto existing = read_entry(path, key)) {
      if (*existing == text) return;
      fail(errc::integrity_error,
           fmt::format("cache key {} already holds different {} text", key.digest(), to_string(key.stage)));
    }
  }
  fs::create_directories(path.parent_path(), ec);
  if (ec)
    fail(errc::storage_error, fmt::format("cannot create {}: {}", path.parent_path().string(), ec.message()));
  const nlohmann::json entry{{"key", key.to_json()}, {"text", std::string(text)}, {"checksum", sha256_hex(text)}};
  write_file_atomic(path, entry.dump());
}

cache_stats cache_store::stats() const {
  cache_stats out;
  for (const auto stage : all_stages) {
    const auto name = std::string(to_string(stage));
    auto& count = out.entries[name];
    const auto dir = root_ / name;
    std::error_code ec;
    if (!fs::exists(dir, ec)) continue;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
      if (entry.path().filename().string().starts_with(".")) continue;
      ++count;
      out.total_bytes += entry.file_size();
    }
    out.total_entries += count;
  }
  std::error_code ec;
  if (fs::exists(root_ / "quarantine", ec))
    for (const auto& entry : fs::directory_iterator(root_ / "quarantine")) {
      (void)entry;
      ++out.quarantined;
    }
  return out;
}

void cache_store::clear() const {
  std::error_code ec;
  for (const auto stage : all_stages) {
    fs::remove_all(root_ / std::string(to_string(stage)), ec);
    if (ec) fail(errc::storage_error, fmt::format("cannot clear {}: {}", root_.string(), ec.message()));
  }
  fs::remove_all(root_ / "quarantine", ec);
  if (ec) fail(errc::storage_error, fmt::format("cannot clear {}: {}", root_.string(), ec.message()));
}

nlohmann::json run_manifest::to_json() const {
  return {{"run_id", run_id},       {"created_at", created_at},       {"config", config},
          {"input_digests", input_digests}, {"report_path", report_path}, {"tool_versions", tool_versions}};
}

fs::path write_run_manifest(const fs::path& dir, const run_manifest& manifest) {
  fs::create_directories(dir);
  const auto path = dir / fmt::format("run_manifest_{}.json", manifest.run_id);
  require(!fs::exists(path), errc::integrity_error,
          fmt::format("run manifest {} is already finalised", path.string()));
  write_file_atomic(path, manifest.to_json().dump(2));
  return path;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string make_run_id() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  std::mt19937 rng{std::random_device{}()};
  return fmt::format("{}-{:06x}", buf, rng() & 0xffffff);
}

}  // namespace qmavis
