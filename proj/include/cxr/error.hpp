#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cxr {

/// Every failure raised by the library carries one of these codes so callers
/// (the pipeline in particular) can map errors onto stable reason strings.
enum class Errc {
  // ingest
  MissingMagic,
  UnsupportedTransferSyntax,
  MissingPixelData,
  MalformedElement,
  UnsupportedPixelFormat,
  EmptyImage,
  NegativeAge,
  // preprocess
  DegenerateKeypoints,
  InvalidArgument,
  // backends
  BackendUnavailable,
  KeypointsNotFound,
  UnsupportedResolution,
  ArityMismatch,
  InvalidProbability,
  // detection
  InvalidBox,
  DegenerateResult,
  UnknownLabel,
  // segmentation
  ShapeMismatch,
  // metrics
  EmptyInput,
  UndefinedMetric,
  ZeroSample,
  SingleClass,
  RangeError,
  // service / storage
  NotFound,
  Conflict,
  BadRequest,
  PayloadTooLarge,
  Io,
  Config,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cxr
