#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cxr/backends.hpp"
#include "cxr/config.hpp"
#include "cxr/error.hpp"
#include "cxr/http.hpp"
#include "cxr/metrics.hpp"
#include "cxr/pipeline.hpp"
#include "cxr/service.hpp"
#include "cxr/synth.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::Io, fmt::format("cannot read {}", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Command-line backend flags win over the config file.
void apply_backend_flags(PipelineConfig& cfg, const std::string& backend, const std::string& fixtures) {
  if (backend == "fixture") {
    cfg.backend.kind = BackendKind::Fixture;
    cfg.backend.name = "fixture";
    cfg.backend.seed.reset();
  } else if (backend == "tiny-reference") {
    cfg.backend.kind = BackendKind::TinyReference;
    cfg.backend.name = "tiny-reference";
    cfg.backend.fixture_path.reset();
    if (!cfg.backend.seed) cfg.backend.seed = 42;
  }
  if (!fixtures.empty()) cfg.backend.fixture_path = fixtures;
  cfg.validate();
}

int serve(const fs::path& config_path) {
  const Config cfg = load_config(config_path);
  std::shared_ptr<const ModelBackend> backend = make_backend(cfg.pipeline.backend, cfg.pipeline.resolutions);

  // Block termination signals before any thread starts so only the waiter
  // below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  StudyService service(cfg, backend);
  HttpServer server(service);
  const int port = server.bind(cfg.service.host, cfg.service.port);
  fmt::print(stderr, "listening on {}:{} (backend {}, store {})\n", cfg.service.host, port, backend->name(),
             cfg.service.store_dir.string());

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    fmt::print(stderr, "signal {}, shutting down\n", sig);
    server.stop();
  });
  server.listen();
  // listen() can also return on its own; wake the waiter in that case.
  kill(getpid(), SIGTERM);
  waiter.join();
  return 0;
}

int run(const fs::path& input, const fs::path& out, const fs::path& config_path, const std::string& backend,
        const std::string& fixtures) {
  Config cfg = load_config(config_path);
  apply_backend_flags(cfg.pipeline, backend, fixtures);
  const RunSummary s = run_directory(input, cfg.pipeline, out);
  fmt::print(stderr, "{} studies, {} rejected, {} abnormal -> {}\n", s.studies, s.rejected, s.abnormal, out.string());
  return 0;
}

int evaluate(const fs::path& pred, const fs::path& ref, const std::string& by, const std::string& format) {
  const auto fmt_kind = report_format_from_string(format);
  if (!fmt_kind) throw Error(Errc::BadRequest, "format must be csv or markdown");
  const JoinedRecords joined = join_records(read_file(pred), read_file(ref));
  for (const std::string& n : joined.notices) fmt::print(stderr, "note: {}\n", n);
  if (by.empty()) {
    const MetricReport report = build_report(joined.records);
    std::cout << render_report(report, *fmt_kind);
    if (report.classification) {
      const ClassificationSummary& c = *report.classification;
      const auto show = [](std::string_view name, const EstimateWithInterval& e) {
        if (!e.point) return fmt::format("{} NA", name);
        return fmt::format("{} {:.2f}% [{:.2f}, {:.2f}]", name, 100 * *e.point, 100 * e.interval->lower,
                           100 * e.interval->upper);
      };
      fmt::print(stderr, "classification tp={} fp={} fn={} tn={}; {}; {}; {}; {}\n", c.counts.tp, c.counts.fp,
                 c.counts.fn, c.counts.tn, show("PPV", c.ppv), show("NPV", c.npv), show("PPA", c.ppa),
                 show("NPA", c.npa));
    }
    return 0;
  }
  const auto dim = subgroup_dimension_from_string(by);
  if (!dim) throw Error(Errc::BadRequest, "--by must be age, gender, machine or manufacturer");
  const SubgroupTable t = subgroup_report(joined.records, *dim);
  for (const std::string& n : t.notices) fmt::print(stderr, "note: {}\n", n);
  std::cout << render_subgroup(t, *fmt_kind);
  return 0;
}

int synth(const fs::path& out, std::size_t count, std::uint64_t seed, int size) {
  SynthOptions opts;
  opts.count = count;
  opts.seed = seed;
  opts.width = size;
  opts.height = size;
  const auto studies = write_synthetic_corpus(out, opts);
  fmt::print(stderr, "wrote {} studies to {}\n", studies.size(), out.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray triage: batch runs, evaluation and the review service"};
  app.require_subcommand(1);

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", config_path, "key=value config file");

  std::string input, out, backend, fixtures;
  auto* run_cmd = app.add_subcommand("run", "Process a directory of DICOM files into prediction lines");
  run_cmd->add_option("--input", input, "directory searched recursively for *.dcm")->required();
  run_cmd->add_option("--out", out, "prediction NDJSON output")->required();
  run_cmd->add_option("--backend", backend, "fixture or tiny-reference (overrides config)")
      ->check(CLI::IsMember({"fixture", "tiny-reference", "tiny"}))
      ->transform([](std::string v) { return v == "tiny" ? std::string("tiny-reference") : v; });
  run_cmd->add_option("--fixtures", fixtures, "fixture NDJSON for the fixture backend");
  run_cmd->add_option("--config", config_path, "key=value config file");

  std::string pred, ref, by, format = "csv";
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against references");
  eval_cmd->add_option("--pred,--predictions", pred, "prediction NDJSON")->required();
  eval_cmd->add_option("--ref,--references", ref, "reference NDJSON")->required();
  eval_cmd->add_option("--by", by, "subgroup dimension: age, gender, machine or manufacturer");
  eval_cmd->add_option("--format", format, "csv or markdown");

  std::size_t count = 20;
  std::uint64_t seed = 1;
  int size = 128;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus with fixtures and references");
  synth_cmd->add_option("--out", out, "output directory")->required();
  synth_cmd->add_option("--count", count, "number of studies");
  synth_cmd->add_option("--seed", seed, "generator seed");
  synth_cmd->add_option("--size", size, "image side in pixels")->check(CLI::Range(32, 1024));

  auto* defaults_cmd = app.add_subcommand("defaults", "Print every config key with its default");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path);
    if (*run_cmd) return run(input, out, config_path, backend, fixtures);
    if (*eval_cmd) return evaluate(pred, ref, by, format);
    if (*synth_cmd) return synth(out, count, seed, size);
    if (*defaults_cmd) {
      for (const auto& [k, v] : default_key_values()) fmt::print("{} = {}\n", k, v);
      return 0;
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error [{}]: {}\n", errc_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
