#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace qmavis {

enum class cache_stage { caption, transcript, aggregate };

std::string_view to_string(cache_stage s) noexcept;

struct cache_key {
  std::string video_digest;
  int chunk_index = 0;
  cache_stage stage = cache_stage::caption;
  std::string backend_id;
  std::string prompt_digest;
  std::string params_digest;

  // SHA-256 over a canonical serialisation of every field.
  std::string digest() const;
  nlohmann::json to_json() const;
};

struct cache_stats {
  std::map<std::string, std::size_t> entries;  // per stage, every stage present
  std::size_t total_entries = 0;
  std::uintmax_t total_bytes = 0;
  std::size_t quarantined = 0;
};

// On-disk layout: root/{stage}/{digest[0:2]}/{digest}.json holding the key
// fields, the text and a SHA-256 checksum of the text. Writes go through a
// temp file and rename, so concurrent readers never observe partial entries.
// Corrupt entries are moved to root/quarantine/ and reported as misses.
class cache_store {
 public:
  explicit cache_store(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  std::optional<std::string> get(const cache_key& key) const;

  // Idempotent for identical text; differing text for an existing key raises
  // errc::integrity_error.
  void put(const cache_key& key, std::string_view text) const;

  cache_stats stats() const;
  // Removes every entry, including quarantined ones.
  void clear() const;

  std::filesystem::path entry_path(const cache_key& key) const;

  std::size_t hits() const noexcept { return hits_; }
  std::size_t misses() const noexcept { return misses_; }

 private:
  std::optional<std::string> read_entry(const std::filesystem::path& path, const cache_key& key) const;
  void quarantine(const std::filesystem::path& path, std::string_view reason) const;

  std::filesystem::path root_;
  mutable std::atomic<std::size_t> hits_{0};
  mutable std::atomic<std::size_t> misses_{0};
};

struct run_manifest {
  std::string run_id;
  std::string created_at;  // ISO-8601 UTC
  nlohmann::json config;
  std::map<std::string, std::string> input_digests;
  std::string report_path;
  std::map<std::string, std::string> tool_versions;

  nlohmann::json to_json() const;
};

// Finalises the manifest at dir/run_manifest_{run_id}.json. Refuses to
// overwrite an existing manifest.
std::filesystem::path write_run_manifest(const std::filesystem::path& dir, const run_manifest& manifest);

std::string make_run_id();
std::string utc_timestamp();

}  // namespace qmavis
