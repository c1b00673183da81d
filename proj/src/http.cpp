#include "cxr/http.hpp"

#include <httplib.h>

#include <fmt/format.h>

#include "cxr/error.hpp"

namespace cxr {

using json = nlohmann::json;

int http_status(Errc code) {
  switch (code) {
    case Errc::NotFound: return 404;
    case Errc::Conflict: return 409;
    case Errc::PayloadTooLarge: return 413;
    case Errc::BadRequest:
    case Errc::UnknownLabel:
    case Errc::InvalidArgument: return 400;
    case Errc::BackendUnavailable: return 503;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, json{{"error", std::string(code)}, {"message", message}});
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

ReportFormat format_param(const httplib::Request& req, bool& as_json) {
  const std::string f = req.has_param("format") ? req.get_param_value("format") : "csv";
  as_json = f == "json";
  if (as_json) return ReportFormat::Csv;
  const auto parsed = report_format_from_string(f);
  if (!parsed) throw Error(Errc::BadRequest, "format must be csv, markdown or json");
  return *parsed;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json estimate_json(const EstimateWithInterval& e) {
  json j{{"point", optional_json(e.point)}};
  j["interval"] = e.interval ? json::array({e.interval->lower, e.interval->upper}) : json(nullptr);
  return j;
}

json live_json(const LiveReport& r) {
  json rows = json::array();
  for (const AgreementRow& a : r.agreement) {
    rows.push_back({{"label", std::string(a.label.name())},
                    {"accepted", a.accepted},
                    {"total", a.total},
                    {"agreement_pct", 100.0 * static_cast<double>(a.accepted) / a.total}});
  }
  json j{{"reviewed_studies", r.reviewed_studies}, {"rows", rows}};
  if (r.report.classification) {
    const ClassificationSummary& c = *r.report.classification;
    j["classification"] = {{"tp", c.counts.tp}, {"fp", c.counts.fp},     {"fn", c.counts.fn},
                           {"tn", c.counts.tn}, {"ppv", estimate_json(c.ppv)}, {"npv", estimate_json(c.npv)},
                           {"ppa", estimate_json(c.ppa)}, {"npa", estimate_json(c.npa)}, {"auc", optional_json(c.auc)}};
  } else {
    j["classification"] = nullptr;
  }
  return j;
}

json subgroup_json(const SubgroupTable& t) {
  json rows = json::array();
  for (const SubgroupRow& r : t.rows) {
    rows.push_back({{"group", r.group},
                    {"records", r.records},
                    {"auc", optional_json(r.auc)},
                    {"accuracy_pct", optional_json(r.accuracy_pct)},
                    {"precision_pct", optional_json(r.precision_pct)},
                    {"recall_pct", optional_json(r.recall_pct)},
                    {"sensitivity_pct", optional_json(r.sensitivity_pct)},
                    {"specificity_pct", optional_json(r.specificity_pct)}});
  }
  return json{{"dimension", std::string(to_string(t.dimension))}, {"rows", rows}, {"notices", t.notices}};
}

const char* content_type(ReportFormat f) { return f == ReportFormat::Markdown ? "text/markdown" : "text/csv"; }

}  // namespace

struct HttpServer::Impl {
  StudyService& service;
  httplib::Server server;

  explicit Impl(StudyService& s) : service(s) {
    server.set_payload_max_length(service.config().service.max_upload_bytes);

    server.Post("/studies", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const SubmitResult r = service.submit(req.body);
                  send_json(res, 202, json{{"study_id", r.study_id}, {"duplicate", !r.created}});
                }));

    server.Get("/studies/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, service.study(req.path_params.at("id")));
               }));

    server.Get("/studies/:id/predictions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, 200, service.predictions(req.path_params.at("id")));
               }));

    server.Get("/worklist", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 WorklistFilter filter;
                 for (const auto& [k, v] : req.params) {
                   if (filter.contains(k)) throw Error(Errc::BadRequest, "repeated filter key " + k);
                   filter[k] = v;
                 }
                 send_json(res, 200, service.worklist(filter));
               }));

    server.Post("/predictions/:id/feedback", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const json body = json::parse(req.body, nullptr, false);
                  if (body.is_discarded()) throw Error(Errc::BadRequest, "feedback body is not JSON");
                  const FeedbackAck ack =
                      service.record_feedback(req.path_params.at("id"), body, req.get_header_value("X-Reviewer-Id"));
                  send_json(res, ack.duplicate ? 200 : 201,
                            json{{"event_id", ack.event.event_id},
                                 {"study_id", ack.event.study_id},
                                 {"finding_ref", ack.event.finding_ref},
                                 {"verdict", std::string(to_string(ack.event.verdict))},
                                 {"reviewer_id", ack.event.reviewer_id},
                                 {"status", std::string(to_string(ack.status))},
                                 {"duplicate", ack.duplicate}});
                }));

    server.Get("/reports/live", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 bool as_json = false;
                 const ReportFormat f = format_param(req, as_json);
                 const LiveReport r = service.live_report();
                 if (as_json) send_json(res, 200, live_json(r));
                 else res.set_content(render_report(r.report, f), content_type(f));
               }));

    server.Get("/reports/subgroup", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 if (!req.has_param("by")) throw Error(Errc::BadRequest, "missing by=");
                 const auto dim = subgroup_dimension_from_string(req.get_param_value("by"));
                 if (!dim) throw Error(Errc::BadRequest, "by must be age, gender, machine or manufacturer");
                 bool as_json = false;
                 const ReportFormat f = format_param(req, as_json);
                 const SubgroupTable t = service.subgroup_report(*dim);
                 if (as_json) send_json(res, 200, subgroup_json(t));
                 else res.set_content(render_subgroup(t, f), content_type(f));
               }));

    server.Get("/export/feedback", guarded([this](const httplib::Request&, httplib::Response& res) {
                 res.set_content(service.export_feedback_dataset(), "application/x-ndjson");
               }));

    server.Get("/blobs/:digest", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto b = service.blob(req.path_params.at("digest"));
                 if (!b) throw Error(Errc::NotFound, "no such blob");
                 res.set_content(*b, "application/octet-stream");
               }));
  }
};

HttpServer::HttpServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::Io, fmt::format("cannot bind {}:{}", host, port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace cxr
