#include <fstream>

#include <gtest/gtest.h>

#include "qmavis/store.hpp"
#include "qmavis/util.hpp"
#include "support.hpp"

using namespace qmavis;
namespace fs = std::filesystem;

namespace {

cache_key key(int chunk = 1, cache_stage stage = cache_stage::caption) {
  return {"videodigest", chunk, stage, "mock:caption:abc", sha256_hex("prompt"), sha256_hex("params")};
}

}  // namespace

TEST(CacheKey, DigestCoversEveryField) {
  const auto base = key();
  std::vector<cache_key> variants(6, base);
  variants[0].video_digest = "other";
  variants[1].chunk_index = 2;
  variants[2].stage = cache_stage::transcript;
  variants[3].backend_id = "other";
  variants[4].prompt_digest = "other";
  variants[5].params_digest = "other";
  for (const auto& v : variants) EXPECT_NE(v.digest(), base.digest());
  EXPECT_EQ(key().digest(), base.digest());
  EXPECT_EQ(base.digest().size(), 64u);
}

TEST(CacheStore, RoundTripAndMiss) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path());
  EXPECT_FALSE(cache.get(key()).has_value());
  cache.put(key(), "x");
  EXPECT_EQ(cache.get(key()), "x");
  EXPECT_FALSE(cache.get(key(2)).has_value());
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_EQ(cache.misses(), 2u);
  const auto p = cache.entry_path(key());
  EXPECT_EQ(p.parent_path().parent_path().filename(), "caption");
  EXPECT_EQ(p.parent_path().filename().string(), key().digest().substr(0, 2));
}

TEST(CacheStore, IdempotentPut) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path());
  cache.put(key(), "x");
  cache.put(key(), "x");
  EXPECT_EQ(cache.stats().entries.at("caption"), 1u);
}

TEST(CacheStore, ConflictingPutIsIntegrityError) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path());
  cache.put(key(), "x");
  try {
    cache.put(key(), "y");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::integrity_error);
  }
  EXPECT_EQ(cache.get(key()), "x");
}

TEST(CacheStore, DurableAcrossInstances) {
  testkit::temp_dir dir;
  cache_store(dir.path()).put(key(), "persisted");
  EXPECT_EQ(cache_store(dir.path()).get(key()), "persisted");
}

TEST(CacheStore, CorruptEntryQuarantined) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path());
  cache.put(key(), "some cached caption text");
  const auto p = cache.entry_path(key());
  auto bytes = read_file(p);
  const auto at = bytes.find("cached caption");
  ASSERT_NE(at, std::string::npos);
  bytes[at] ^= 0x01;
  {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << bytes;
  }
  EXPECT_FALSE(cache.get(key()).has_value());
  EXPECT_FALSE(fs::exists(p));
  EXPECT_EQ(cache.stats().quarantined, 1u);
  cache.put(key(), "fresh");
  EXPECT_EQ(cache.get(key()), "fresh");
}

TEST(CacheStore, GarbageEntryQuarantined) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path());
  cache.put(key(), "x");
  write_file_atomic(cache.entry_path(key()), "not json at all");
  EXPECT_FALSE(cache.get(key()).has_value());
  EXPECT_EQ(cache.stats().quarantined, 1u);
}

TEST(CacheStore, StatsAndClear) {
  testkit::temp_dir dir;
  const cache_store cache(dir.path() / "c");
  auto s = cache.stats();
  EXPECT_EQ(s.total_entries, 0u);
  for (const auto* stage : {"caption", "transcript", "aggregate"}) EXPECT_EQ(s.entries.at(stage), 0u);

  for (int i = 1; i <= 4; ++i) {
    cache.put(key(i), "c");
    cache.put(key(i, cache_stage::transcript), "t");
  }
  cache.put(key(0, cache_stage::aggregate), "a");
  s = cache.stats();
  EXPECT_EQ(s.entries.at("caption"), 4u);
  EXPECT_EQ(s.entries.at("transcript"), 4u);
  EXPECT_EQ(s.entries.at("aggregate"), 1u);
  EXPECT_EQ(s.total_entries, 9u);
  EXPECT_GT(s.total_bytes, 0u);

  cache.clear();
  s = cache.stats();
  EXPECT_EQ(s.total_entries, 0u);
  EXPECT_EQ(s.total_bytes, 0u);
  EXPECT_FALSE(cache.get(key(1)).has_value());
}

TEST(CacheStore, UnwritableRootIsStorageError) {
  testkit::temp_dir dir;
  write_file_atomic(dir / "file", "x");
  try {
    const cache_store cache(dir / "file");
    cache.put(key(), "x");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::storage_error);
  }
}

TEST(RunManifest, WrittenOnceWithAllFields) {
  testkit::temp_dir dir;
  run_manifest m{make_run_id(), utc_timestamp(), {{"k", 1}}, {{"video", "abc"}}, "report.json", {{"ffmpeg", "7"}}};
  const auto p = write_run_manifest(dir.path(), m);
  EXPECT_EQ(p.filename(), "run_manifest_" + m.run_id + ".json");
  const auto j = nlohmann::json::parse(read_file(p));
  EXPECT_EQ(j["run_id"], m.run_id);
  EXPECT_EQ(j["config"]["k"], 1);
  EXPECT_EQ(j["input_digests"]["video"], "abc");
  EXPECT_EQ(j["report_path"], "report.json");
  EXPECT_EQ(j["tool_versions"]["ffmpeg"], "7");
  EXPECT_THROW(write_run_manifest(dir.path(), m), error);
  EXPECT_NE(make_run_id(), m.run_id);
  EXPECT_EQ(m.created_at.back(), 'Z');
}
