#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qmavis/backends.hpp"
#include "qmavis/eval.hpp"
#include "qmavis/fusion.hpp"
#include "qmavis/media.hpp"

namespace qmavis {

inline constexpr std::string_view version_string = "0.1.0";

// A backend entry from the config: either a remote service or a mock fixture.
struct backend_slot {
  backend_config remote;
  std::optional<std::filesystem::path> mock_fixture;
};

// Fully resolved operator configuration. Built from defaults, then the JSON
// config file, then command-line flags (each flag patches one config key).
struct run_config {
  std::optional<backend_slot> caption;
  std::optional<backend_slot> transcribe;
  std::optional<backend_slot> aggregate;

  pipeline_config pipeline;
  media_tool_config media;

  std::string bench_chunk_prompt{default_benchmark_chunk_prompt};
  std::string bench_aggregation_prompt{default_benchmark_aggregation_prompt};
  double z = 1.96;
  bool with_subtitles = false;
  bool fail_fast = false;
  std::size_t record_parallelism = 1;

  bool cache_enabled = true;
  std::filesystem::path cache_root;
  std::filesystem::path output_dir = "qmavis-out";
  std::optional<std::string> question;
  std::optional<double> dry_run_duration;
  bool dry_run = false;
  bool verbose = false;
  bool assume_yes = false;
};

std::filesystem::path default_cache_root();

// Relative paths inside a config file (fixtures, cache root, output dir)
// resolve against the file's directory.
nlohmann::json load_config_file(const std::filesystem::path& path);
run_config run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const run_config& cfg);

using backend_factory = std::function<std::shared_ptr<backend>(role, const backend_slot&)>;
std::shared_ptr<backend> default_backend_factory(role r, const backend_slot& slot);

pipeline_backends build_backends(const run_config& cfg, const backend_factory& factory);

struct cli_io {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
  backend_factory factory = default_backend_factory;
};

void init_logging(bool verbose);

// Entry point used by the binary; args exclude the program name.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, cli_io& io);

}  // namespace qmavis
