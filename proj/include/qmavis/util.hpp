#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qmavis {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);
std::string base64_encode(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file, fsyncs and renames over `path`. Creates
// missing parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

// Creates a fresh, uniquely named directory under `parent`.
std::filesystem::path make_unique_dir(const std::filesystem::path& parent, std::string_view prefix);

struct process_result {
  int exit_code = -1;
  std::string output;  // interleaved stdout + stderr
};

// Runs argv[0] (looked up on PATH) with the given arguments, capturing output.
// Throws qmavis::error(not_found) when the program cannot be started.
process_result run_process(const std::vector<std::string>& argv);

std::string join_command(const std::vector<std::string>& argv);

// Caps the number of concurrent holders. Unlike std::counting_semaphore the
// limit is a runtime value.
class admission_gate {
 public:
  explicit admission_gate(std::size_t limit);

  void acquire();
  void release();

  std::size_t limit() const noexcept { return limit_; }

  class permit {
   public:
    explicit permit(admission_gate& gate) : gate_(&gate) { gate_->acquire(); }
    permit(const permit&) = delete;
    permit& operator=(const permit&) = delete;
    ~permit() { gate_->release(); }

   private:
    admission_gate* gate_;
  };

 private:
  std::size_t limit_;
  std::size_t in_use_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

// Runs fn(0..count-1) on at most `parallelism` worker threads. After the first
// failure no new indices are started; the lowest failing index's exception is
// rethrown once all workers have joined.
void parallel_for(std::size_t count, std::size_t parallelism,
                  const std::function<void(std::size_t)>& fn);

}  // namespace qmavis
