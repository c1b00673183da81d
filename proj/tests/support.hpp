#pragma once

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "cxr/backends.hpp"
#include "cxr/config.hpp"
#include "cxr/error.hpp"
#include "cxr/synth.hpp"

namespace cxr::test {

inline Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cxr-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline SynthOptions clean_options(std::size_t count, std::uint64_t seed) {
  SynthOptions o;
  o.count = count;
  o.seed = seed;
  o.width = 64;
  o.height = 64;
  o.p_not_xray = 0.0;
  o.p_not_chest = 0.0;
  return o;
}

/// Replaces the output of every record of `stage` in `s`.
inline void set_stage(SynthStudy& s, std::string_view stage, const nlohmann::json& output) {
  for (FixtureRecord& r : s.fixtures) {
    if (r.stage == stage) r.output = output;
  }
}

inline std::vector<FixtureRecord> all_fixtures(const std::vector<SynthStudy>& studies) {
  std::vector<FixtureRecord> out;
  for (const SynthStudy& s : studies) out.insert(out.end(), s.fixtures.begin(), s.fixtures.end());
  return out;
}

inline std::shared_ptr<const ModelBackend> fixture_backend(const std::vector<SynthStudy>& studies) {
  return std::make_shared<FixtureBackend>(all_fixtures(studies));
}

inline PipelineConfig fixture_pipeline_config() {
  PipelineConfig cfg;
  cfg.backend.kind = BackendKind::Fixture;
  cfg.backend.name = "fixture";
  cfg.backend.seed.reset();
  cfg.backend.fixture_path = "unused";
  return cfg;
}

inline Config service_config(const std::filesystem::path& store) {
  Config c;
  c.pipeline = fixture_pipeline_config();
  c.service.store_dir = store;
  c.service.workers = 1;
  return c;
}

inline std::string as_string(const std::vector<std::uint8_t>& bytes) { return {bytes.begin(), bytes.end()}; }

}  // namespace cxr::test
