#include "cxr/error.hpp"

namespace cxr {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingMagic: return "MissingMagic";
    case Errc::UnsupportedTransferSyntax: return "UnsupportedTransferSyntax";
    case Errc::MissingPixelData: return "MissingPixelData";
    case Errc::MalformedElement: return "MalformedElement";
    case Errc::UnsupportedPixelFormat: return "UnsupportedPixelFormat";
    case Errc::EmptyImage: return "EmptyImage";
    case Errc::NegativeAge: return "NegativeAge";
    case Errc::DegenerateKeypoints: return "DegenerateKeypoints";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::KeypointsNotFound: return "KeypointsNotFound";
    case Errc::UnsupportedResolution: return "UnsupportedResolution";
    case Errc::ArityMismatch: return "ArityMismatch";
    case Errc::InvalidProbability: return "InvalidProbability";
    case Errc::InvalidBox: return "InvalidBox";
    case Errc::DegenerateResult: return "DegenerateResult";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::ZeroSample: return "ZeroSample";
    case Errc::SingleClass: return "SingleClass";
    case Errc::RangeError: return "RangeError";
    case Errc::NotFound: return "NotFound";
    case Errc::Conflict: return "Conflict";
    case Errc::BadRequest: return "BadRequest";
    case Errc::PayloadTooLarge: return "PayloadTooLarge";
    case Errc::Io: return "Io";
    case Errc::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace cxr
