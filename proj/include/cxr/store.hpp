#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cxr {

/// Immutable blobs named by their SHA-256. Writes go through a temporary
/// file and a rename, so a blob is either absent or complete.
class BlobStore {
 public:
  explicit BlobStore(std::filesystem::path dir);

  std::string put(std::string_view bytes);
  std::optional<std::string> get(std::string_view digest) const;
  bool contains(std::string_view digest) const;

 private:
  std::filesystem::path path_for(std::string_view digest) const;
  std::filesystem::path dir_;
};

/// Append-only NDJSON log with snapshot compaction. Every event carries a
/// string "event_id" and is assigned a monotonically increasing "seq".
/// append() returns only after the line is on stable storage.
class EventLog {
 public:
  /// Opens (creating if needed) dir/events.ndjson. An unterminated last
  /// line left by a crash is cut off before anything else is written.
  explicit EventLog(std::filesystem::path dir);
  ~EventLog();
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;

  struct Replay {
    std::optional<nlohmann::json> snapshot;
    std::uint64_t snapshot_seq = 0;
    /// Events after the snapshot in seq order, first occurrence of each
    /// event_id only.
    std::vector<nlohmann::json> events;
    std::size_t skipped_lines = 0;
    std::size_t duplicate_events = 0;
  };

  Replay replay() const;

  /// Adds "seq" to the event, writes it and fsyncs. Returns the seq.
  std::uint64_t append(nlohmann::json event);

  /// Persists `state` as the snapshot covering every event appended so far,
  /// then starts an empty log.
  void compact(const nlohmann::json& state);

  std::uint64_t last_seq() const;
  std::size_t appended_since_snapshot() const;

  const std::filesystem::path& log_path() const { return log_path_; }

 private:
  void open_for_append();

  std::filesystem::path dir_;
  std::filesystem::path log_path_;
  std::filesystem::path snapshot_path_;
  mutable std::mutex mu_;
  int fd_ = -1;
  std::uint64_t last_seq_ = 0;
  std::size_t since_snapshot_ = 0;
};

/// fsync of a directory, making renames and creations inside it durable.
void sync_directory(const std::filesystem::path& dir);

/// Writes `bytes` to `path` via a temporary sibling, fsync and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace cxr
