#include "cxr/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "cxr/digest.hpp"
#include "cxr/error.hpp"

namespace cxr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(Errc::Io, fmt::format("{}: {}", what, std::strerror(errno)));
}

void write_all(int fd, std::string_view bytes, const std::string& what) {
  while (!bytes.empty()) {
    const ssize_t n = ::write(fd, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error(what);
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_hex_digest(std::string_view d) {
  if (d.size() != 64) return false;
  for (char c : d) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

}  // namespace

void sync_directory(const fs::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) io_error("open directory " + dir.string());
  const int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) io_error("fsync directory " + dir.string());
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) io_error("create " + tmp.string());
  try {
    write_all(fd, bytes, "write " + tmp.string());
    if (::fsync(fd) != 0) io_error("fsync " + tmp.string());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) io_error("rename " + tmp.string());
  sync_directory(path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

BlobStore::BlobStore(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

fs::path BlobStore::path_for(std::string_view digest) const {
  if (!is_hex_digest(digest)) throw Error(Errc::BadRequest, "malformed blob digest");
  return dir_ / std::string(digest.substr(0, 2)) / std::string(digest);
}

std::string BlobStore::put(std::string_view bytes) {
  const std::string digest = sha256_hex(bytes);
  const fs::path path = path_for(digest);
  if (fs::exists(path)) return digest;
  fs::create_directories(path.parent_path());
  write_file_atomic(path, bytes);
  return digest;
}

std::optional<std::string> BlobStore::get(std::string_view digest) const {
  const fs::path path = path_for(digest);
  if (!fs::exists(path)) return std::nullopt;
  return read_all(path);
}

bool BlobStore::contains(std::string_view digest) const { return is_hex_digest(digest) && fs::exists(path_for(digest)); }

EventLog::EventLog(fs::path dir)
    : dir_(std::move(dir)), log_path_(dir_ / "events.ndjson"), snapshot_path_(dir_ / "snapshot.json") {
  fs::create_directories(dir_);
  // Cut an unterminated tail so the next append starts on a fresh line.
  const std::string content = read_all(log_path_);
  if (!content.empty() && content.back() != '\n') {
    const auto last_nl = content.rfind('\n');
    const auto keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    fs::resize_file(log_path_, keep);
  }
  const Replay r = replay();
  last_seq_ = r.snapshot_seq;
  for (const json& e : r.events) last_seq_ = std::max(last_seq_, e.at("seq").get<std::uint64_t>());
  since_snapshot_ = r.events.size();
  open_for_append();
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::open_for_append() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = ::open(log_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd_ < 0) io_error("open " + log_path_.string());
  sync_directory(dir_);
}

EventLog::Replay EventLog::replay() const {
  Replay out;
  std::set<std::string> seen;
  const std::string snap = read_all(snapshot_path_);
  if (!snap.empty()) {
    const json s = json::parse(snap, nullptr, false);
    if (s.is_discarded() || !s.contains("seq") || !s.contains("state")) {
      throw Error(Errc::Io, "corrupt snapshot " + snapshot_path_.string());
    }
    out.snapshot_seq = s["seq"].get<std::uint64_t>();
    out.snapshot = s["state"];
    for (const json& id : s.value("event_ids", json::array())) seen.insert(id.get<std::string>());
  }
  std::istringstream in(read_all(log_path_));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json e = json::parse(line, nullptr, false);
    if (e.is_discarded() || !e.is_object() || !e.contains("seq") || !e.contains("event_id") ||
        !e["event_id"].is_string() || !e["seq"].is_number_unsigned()) {
      ++out.skipped_lines;
      continue;
    }
    if (e["seq"].get<std::uint64_t>() <= out.snapshot_seq) continue;
    if (!seen.insert(e["event_id"].get<std::string>()).second) {
      ++out.duplicate_events;
      continue;
    }
    out.events.push_back(e);
  }
  return out;
}

std::uint64_t EventLog::append(json event) {
  if (!event.is_object() || !event.contains("event_id") || !event["event_id"].is_string()) {
    throw Error(Errc::InvalidArgument, "event needs a string event_id");
  }
  std::lock_guard lock(mu_);
  const std::uint64_t seq = last_seq_ + 1;
  event["seq"] = seq;
  const std::string line = event.dump() + "\n";
  write_all(fd_, line, "append " + log_path_.string());
  if (::fdatasync(fd_) != 0) io_error("fsync " + log_path_.string());
  last_seq_ = seq;
  ++since_snapshot_;
  return seq;
}

void EventLog::compact(const json& state) {
  std::lock_guard lock(mu_);
  // Event ids stay known after compaction so replays still dedupe.
  json ids = json::array();
  {
    std::set<std::string> all;
    const std::string snap = read_all(snapshot_path_);
    if (!snap.empty()) {
      const json s = json::parse(snap, nullptr, false);
      if (!s.is_discarded()) {
        for (const json& id : s.value("event_ids", json::array())) all.insert(id.get<std::string>());
      }
    }
    std::istringstream in(read_all(log_path_));
    std::string line;
    while (std::getline(in, line)) {
      const json e = json::parse(line, nullptr, false);
      if (!e.is_discarded() && e.is_object() && e.contains("event_id") && e["event_id"].is_string()) {
        all.insert(e["event_id"].get<std::string>());
      }
    }
    for (const std::string& id : all) ids.push_back(id);
  }
  const json snapshot{{"seq", last_seq_}, {"state", state}, {"event_ids", ids}};
  write_file_atomic(snapshot_path_, snapshot.dump());
  // A crash here leaves old events whose seq the snapshot already covers;
  // replay skips them.
  write_file_atomic(log_path_, "");
  open_for_append();
  since_snapshot_ = 0;
}

std::uint64_t EventLog::last_seq() const {
  std::lock_guard lock(mu_);
  return last_seq_;
}

std::size_t EventLog::appended_since_snapshot() const {
  std::lock_guard lock(mu_);
  return since_snapshot_;
}

}  // namespace cxr
