// Run directories, manifests, and lockfiles. Every command writes its
// manifest (config snapshot, dataset hashes, source hash, seeds, timestamps)
// before doing any work, so a run is reproducible from the manifest alone.
#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <upesv/source_hash.hpp>

#include "upesv/common.hpp"

namespace upesv::cli {

inline std::string runs_root() {
  if (const char* env = std::getenv("UPESV_RUNS_DIR"); env && *env)
    return env;
  return "runs";
}

inline std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Exclusive lockfile; released on destruction. A held lock means another
// command owns the run directory.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir)
      : path_(run_dir + "/.lock") {
    std::filesystem::create_directories(run_dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require<DataError>(fd_ >= 0,
                       cat("run directory is locked (", path_,
                           " exists); another command may be using it"));
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::filesystem::remove(path_);
    }
  }

 private:
  std::string path_;
  int fd_ = -1;
};

struct RunManifest {
  std::string run_id;
  nlohmann::json config_snapshot;
  std::vector<std::pair<std::string, std::string>> dataset_hashes;  // path, sha256
  std::vector<uint64_t> seeds;
  std::string command;

  nlohmann::json to_json() const {
    nlohmann::json datasets = nlohmann::json::object();
    for (const auto& [path, hash] : dataset_hashes) datasets[path] = hash;
    return {{"run_id", run_id},
            {"command", command},
            {"config", config_snapshot},
            {"dataset_hashes", datasets},
            {"seeds", seeds},
            {"code_version", kSourceHash},
            {"tool_version", kVersion},
            {"created", iso_timestamp()}};
  }
};

// Writes the manifest into the run directory before anything else happens.
inline std::string prepare_run_dir(const std::string& run_id,
                                   RunManifest manifest, bool force) {
  std::string dir = runs_root() + "/" + run_id;
  if (std::filesystem::exists(dir + "/manifest.json"))
    require<ConfigError>(force, cat("run '", run_id,
                                    "' already exists; pass --force to reuse"));
  std::filesystem::create_directories(dir);
  manifest.run_id = run_id;
  write_file(dir + "/manifest.json", manifest.to_json().dump(2) + "\n");
  return dir;
}

}  // namespace upesv::cli
