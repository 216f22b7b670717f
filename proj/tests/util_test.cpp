#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include <gtest/gtest.h>

#include "qmavis/error.hpp"
#include "qmavis/util.hpp"
#include "support.hpp"

using namespace qmavis;

TEST(Digest, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(base64_encode(""), "");
  EXPECT_EQ(base64_encode("f"), "Zg==");
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
}

TEST(Files, AtomicWriteAndRead) {
  testkit::temp_dir dir;
  const auto p = dir / "sub/file.txt";
  write_file_atomic(p, "hello");
  EXPECT_EQ(read_file(p), "hello");
  write_file_atomic(p, std::string("a\0b", 3));
  EXPECT_EQ(read_file(p).size(), 3u);
  EXPECT_EQ(sha256_file(p), sha256_hex(std::string("a\0b", 3)));
  std::size_t leftovers = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "sub")) leftovers += e.path().filename() != "file.txt";
  EXPECT_EQ(leftovers, 0u);
}

TEST(Files, MissingFile) {
  try {
    read_file("/nonexistent/qmavis");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::not_found);
  }
}

TEST(Process, CapturesOutputAndExitCode) {
  const auto r = run_process({"sh", "-c", "echo out; echo err 1>&2; exit 3"});
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_NE(r.output.find("out"), std::string::npos);
  EXPECT_NE(r.output.find("err"), std::string::npos);
}

TEST(Process, MissingProgram) {
  try {
    run_process({"qmavis-definitely-not-a-program"});
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::not_found);
  }
}

TEST(Process, JoinQuotes) { EXPECT_EQ(join_command({"a", "b c", "it's"}), "a 'b c' 'it'\\''s'"); }

TEST(AdmissionGate, CapsConcurrency) {
  admission_gate gate(3);
  std::atomic<int> active{0}, peak{0};
  parallel_for(24, 12, [&](std::size_t) {
    admission_gate::permit p(gate);
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --active;
  });
  EXPECT_LE(peak.load(), 3);
  EXPECT_GE(peak.load(), 2);
}

TEST(ParallelFor, RunsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 7, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsLowestFailure) {
  try {
    parallel_for(8, 1, [](std::size_t i) {
      if (i >= 3) throw std::runtime_error("fail " + std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "fail 3");
  }
}
