#pragma once

#include <memory>
#include <string>

#include "cxr/service.hpp"

namespace cxr {

/// HTTP status for a library error code.
int http_status(Errc code);

/// JSON API over a StudyService:
///   POST /studies                      upload DICOM bytes, 202 {study_id, duplicate}
///   GET  /studies/{id}                 study record
///   GET  /studies/{id}/predictions     prediction line
///   GET  /worklist?key=value...        Critical first, then oldest first
///   POST /predictions/{id}/feedback    X-Reviewer-Id header required
///   GET  /reports/live?format=         csv (default), markdown or json
///   GET  /reports/subgroup?by=&format= by: age, gender, machine, manufacturer
///   GET  /export/feedback              labeled examples, NDJSON
///   GET  /blobs/{digest}               stored blob bytes
class HttpServer {
 public:
  explicit HttpServer(StudyService& service);
  ~HttpServer();

  /// Binds host:port (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cxr
