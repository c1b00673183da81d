#include "cxr/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "cxr/error.hpp"

extern char** environ;

namespace cxr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(Errc::Config, fmt::format("invalid value '{}' for {}", value, key));
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, value);
  }
}

std::string join_labels(const std::vector<PathologyLabel>& labels) {
  std::string out;
  for (const PathologyLabel& l : labels) {
    if (!out.empty()) out += ", ";
    out += l.name();
  }
  return out;
}

using Setter = std::function<void(Config&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"backend.kind",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v == "tiny-reference") c.pipeline.backend.kind = BackendKind::TinyReference;
         else if (v == "fixture") c.pipeline.backend.kind = BackendKind::Fixture;
         else bad_value(k, v);
         c.pipeline.backend.name = v;
       }},
      {"backend.seed",
       [](Config& c, const std::string& k, const std::string& v) {
         if (v.empty()) c.pipeline.backend.seed.reset();
         else c.pipeline.backend.seed = static_cast<std::uint64_t>(to_int(k, v));
       }},
      {"backend.fixture_path",
       [](Config& c, const std::string&, const std::string& v) {
         if (v.empty()) c.pipeline.backend.fixture_path.reset();
         else c.pipeline.backend.fixture_path = v;
       }},
      {"resolutions",
       [](Config& c, const std::string& k, const std::string& v) {
         const auto parts = split(v, ',');
         if (parts.size() != 3) bad_value(k, v);
         for (std::size_t i = 0; i < 3; ++i) c.pipeline.resolutions.sides[i] = static_cast<int>(to_int(k, parts[i]));
       }},
      {"decision_threshold",
       [](Config& c, const std::string& k, const std::string& v) { c.pipeline.decision_threshold = to_double(k, v); }},
      {"detection.nms_threshold",
       [](Config& c, const std::string& k, const std::string& v) { c.pipeline.detection.nms_threshold = to_double(k, v); }},
      {"detection.top_proposals",
       [](Config& c, const std::string& k, const std::string& v) {
         c.pipeline.detection.top_proposals_infer = static_cast<std::size_t>(to_int(k, v));
       }},
      {"detection.score_threshold",
       [](Config& c, const std::string& k, const std::string& v) { c.pipeline.detection.score_threshold = to_double(k, v); }},
      {"critical_set",
       [](Config& c, const std::string&, const std::string& v) {
         c.pipeline.critical_set.clear();
         if (v.empty()) return;
         for (const std::string& name : split(v, ',')) c.pipeline.critical_set.push_back(PathologyLabel::parse(name));
       }},
      {"segmentation.crop_margin",
       [](Config& c, const std::string& k, const std::string& v) { c.pipeline.crop_margin = to_double(k, v); }},
      {"segmentation.crop_side",
       [](Config& c, const std::string& k, const std::string& v) { c.pipeline.crop_side = static_cast<int>(to_int(k, v)); }},
      {"segmentation.seed",
       [](Config& c, const std::string& k, const std::string& v) {
         c.pipeline.segmentation_seed = static_cast<std::uint64_t>(to_int(k, v));
       }},
      {"anonymize.salt", [](Config& c, const std::string&, const std::string& v) { c.pipeline.anonymize_salt = v; }},
      {"store.dir", [](Config& c, const std::string&, const std::string& v) { c.service.store_dir = v; }},
      {"store.snapshot_every",
       [](Config& c, const std::string& k, const std::string& v) {
         c.service.snapshot_every = static_cast<std::size_t>(to_int(k, v));
       }},
      {"service.host", [](Config& c, const std::string&, const std::string& v) { c.service.host = v; }},
      {"service.port",
       [](Config& c, const std::string& k, const std::string& v) { c.service.port = static_cast<int>(to_int(k, v)); }},
      {"service.workers",
       [](Config& c, const std::string& k, const std::string& v) { c.service.workers = static_cast<int>(to_int(k, v)); }},
      {"service.max_upload_bytes",
       [](Config& c, const std::string& k, const std::string& v) {
         c.service.max_upload_bytes = static_cast<std::size_t>(to_int(k, v));
       }},
      {"service.backend_attempts",
       [](Config& c, const std::string& k, const std::string& v) {
         c.service.backend_attempts = static_cast<int>(to_int(k, v));
       }},
  };
  return table;
}

}  // namespace

PipelineConfig::PipelineConfig() {
  backend.seed = 42;
  critical_set = {PathologyLabel::parse("Pneumothorax"), PathologyLabel::parse("Hydro Pneumothorax"),
                  PathologyLabel::parse("Pneumoperitoneum")};
}

void PipelineConfig::validate() const {
  backend.validate();
  detection.validate();
  if (!(decision_threshold > 0.0 && decision_threshold < 1.0)) {
    throw Error(Errc::Config, "decision_threshold must be in (0,1)");
  }
  if (!(crop_margin >= 0.0 && crop_margin <= 1.0)) throw Error(Errc::Config, "crop_margin must be in [0,1]");
  if (crop_side < 4 || crop_side > 256 || crop_side % 4 != 0) {
    throw Error(Errc::Config, "crop_side must be a multiple of 4 in [4,256]");
  }
  for (int side : resolutions.sides) {
    if (side <= 0) throw Error(Errc::Config, "resolutions must be positive");
  }
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(Errc::Config, "service.port out of range");
  if (workers < 1) throw Error(Errc::Config, "service.workers must be >= 1");
  if (max_upload_bytes == 0) throw Error(Errc::Config, "service.max_upload_bytes must be positive");
  if (backend_attempts < 1) throw Error(Errc::Config, "service.backend_attempts must be >= 1");
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::Config, fmt::format("line {}: expected key = value", line_no));
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!setters().contains(key)) throw Error(Errc::Config, fmt::format("line {}: unknown key '{}'", line_no, key));
    kv[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

void apply_env_overrides(std::map<std::string, std::string>& kv, const std::vector<std::string>& env) {
  for (const std::string& entry : env) {
    if (!entry.starts_with(kEnvPrefix)) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(kEnvPrefix.size(), eq - kEnvPrefix.size());
    // Match against the known keys with '.' read as '_'.
    for (const auto& [key, setter] : setters()) {
      std::string mangled;
      for (char ch : key) mangled += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (mangled == name) kv[key] = trim(std::string_view(entry).substr(eq + 1));
    }
  }
}

Config config_from_key_values(const std::map<std::string, std::string>& kv) {
  Config c;
  // The seed default applies only to the tiny backend.
  if (auto it = kv.find("backend.kind"); it != kv.end() && it->second == "fixture") c.pipeline.backend.seed.reset();
  for (const auto& [key, value] : kv) {
    auto it = setters().find(key);
    if (it == setters().end()) throw Error(Errc::Config, fmt::format("unknown key '{}'", key));
    it->second(c, key, value);
  }
  c.pipeline.validate();
  c.service.validate();
  return c;
}

Config load_config(const std::filesystem::path& file) {
  std::map<std::string, std::string> kv;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw Error(Errc::Io, "cannot read config " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    kv = parse_key_values(ss.str());
  }
  std::vector<std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) env.emplace_back(*e);
  apply_env_overrides(kv, env);
  return config_from_key_values(kv);
}

std::map<std::string, std::string> default_key_values() {
  const Config c;
  const auto& rs = c.pipeline.resolutions.sides;
  return {
      {"backend.kind", "tiny-reference"},
      {"backend.seed", std::to_string(*c.pipeline.backend.seed)},
      {"backend.fixture_path", ""},
      {"resolutions", fmt::format("{},{},{}", rs[0], rs[1], rs[2])},
      {"decision_threshold", fmt::format("{}", c.pipeline.decision_threshold)},
      {"detection.nms_threshold", fmt::format("{}", c.pipeline.detection.nms_threshold)},
      {"detection.top_proposals", std::to_string(c.pipeline.detection.top_proposals_infer)},
      {"detection.score_threshold", fmt::format("{}", c.pipeline.detection.score_threshold)},
      {"critical_set", join_labels(c.pipeline.critical_set)},
      {"segmentation.crop_margin", fmt::format("{}", c.pipeline.crop_margin)},
      {"segmentation.crop_side", std::to_string(c.pipeline.crop_side)},
      {"segmentation.seed", std::to_string(c.pipeline.segmentation_seed)},
      {"anonymize.salt", c.pipeline.anonymize_salt},
      {"store.dir", c.service.store_dir.string()},
      {"store.snapshot_every", std::to_string(c.service.snapshot_every)},
      {"service.host", c.service.host},
      {"service.port", std::to_string(c.service.port)},
      {"service.workers", std::to_string(c.service.workers)},
      {"service.max_upload_bytes", std::to_string(c.service.max_upload_bytes)},
      {"service.backend_attempts", std::to_string(c.service.backend_attempts)},
  };
}

}  // namespace cxr
