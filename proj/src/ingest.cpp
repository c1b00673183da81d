#include "cxr/ingest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <map>

#include "cxr/digest.hpp"
#include "cxr/error.hpp"

namespace cxr {

namespace {

constexpr std::size_t kPreambleSize = 128;
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

constexpr std::uint32_t make_tag(std::uint16_t group, std::uint16_t element) {
  return (static_cast<std::uint32_t>(group) << 16) | element;
}

namespace tag {
constexpr std::uint32_t TransferSyntax = make_tag(0x0002, 0x0010);
constexpr std::uint32_t MediaStorageSopClass = make_tag(0x0002, 0x0002);
constexpr std::uint32_t StudyDate = make_tag(0x0008, 0x0020);
constexpr std::uint32_t StudyTime = make_tag(0x0008, 0x0030);
constexpr std::uint32_t Modality = make_tag(0x0008, 0x0060);
constexpr std::uint32_t Manufacturer = make_tag(0x0008, 0x0070);
constexpr std::uint32_t PatientName = make_tag(0x0010, 0x0010);
constexpr std::uint32_t PatientId = make_tag(0x0010, 0x0020);
constexpr std::uint32_t PatientBirthDate = make_tag(0x0010, 0x0030);
constexpr std::uint32_t PatientSex = make_tag(0x0010, 0x0040);
constexpr std::uint32_t PatientAge = make_tag(0x0010, 0x1010);
constexpr std::uint32_t PatientAddress = make_tag(0x0010, 0x1040);
constexpr std::uint32_t IdentityRemoved = make_tag(0x0012, 0x0062);
constexpr std::uint32_t ViewPosition = make_tag(0x0018, 0x5101);
constexpr std::uint32_t StudyInstanceUid = make_tag(0x0020, 0x000D);
constexpr std::uint32_t SamplesPerPixel = make_tag(0x0028, 0x0002);
constexpr std::uint32_t PhotometricInterpretation = make_tag(0x0028, 0x0004);
constexpr std::uint32_t NumberOfFrames = make_tag(0x0028, 0x0008);
constexpr std::uint32_t Rows = make_tag(0x0028, 0x0010);
constexpr std::uint32_t Columns = make_tag(0x0028, 0x0011);
constexpr std::uint32_t BitsAllocated = make_tag(0x0028, 0x0100);
constexpr std::uint32_t BitsStored = make_tag(0x0028, 0x0101);
constexpr std::uint32_t HighBit = make_tag(0x0028, 0x0102);
constexpr std::uint32_t PixelRepresentation = make_tag(0x0028, 0x0103);
constexpr std::uint32_t PixelData = make_tag(0x7FE0, 0x0010);
constexpr std::uint32_t Item = make_tag(0xFFFE, 0xE000);
constexpr std::uint32_t ItemDelimitation = make_tag(0xFFFE, 0xE00D);
constexpr std::uint32_t SequenceDelimitation = make_tag(0xFFFE, 0xE0DD);
}  // namespace tag

bool has_long_length(std::string_view vr) {
  static constexpr std::array<std::string_view, 13> kLong = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                                             "SV", "UC", "UN", "UR", "UT", "UV"};
  return std::find(kLong.begin(), kLong.end(), vr) != kLong.end();
}

struct Element {
  std::uint32_t tag = 0;
  std::string vr;
  std::span<const std::uint8_t> value;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data, std::size_t pos = 0) : data_(data), pos_(pos) {}

  bool at_end() const { return pos_ >= data_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    const std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) | (static_cast<std::uint32_t>(data_[pos_ + 1]) << 8) |
                            (static_cast<std::uint32_t>(data_[pos_ + 2]) << 16) |
                            (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t peek_tag() const {
    if (data_.size() - pos_ < 4) throw Error(Errc::MalformedElement, "truncated tag");
    const std::uint16_t g = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    const std::uint16_t e = static_cast<std::uint16_t>(data_[pos_ + 2] | (data_[pos_ + 3] << 8));
    return make_tag(g, e);
  }

  /// Reads one explicit-VR element header; value is left unread when the
  /// length is undefined.
  Element element(std::uint32_t& length) {
    Element el;
    const std::uint16_t g = u16();
    const std::uint16_t e = u16();
    el.tag = make_tag(g, e);
    const auto vr = take(2);
    el.vr.assign(vr.begin(), vr.end());
    if (!std::isupper(vr[0]) || !std::isupper(vr[1])) {
      throw Error(Errc::MalformedElement, "invalid VR at offset " + std::to_string(pos_ - 2));
    }
    if (has_long_length(el.vr)) {
      take(2);
      length = u32();
    } else {
      length = u16();
    }
    if (length != kUndefinedLength) el.value = take(length);
    return el;
  }

  /// Skips an undefined-length sequence body up to and including its
  /// delimitation item.
  void skip_undefined_sequence() {
    for (;;) {
      const std::uint16_t group = u16();
      const std::uint16_t elem = u16();
      const std::uint32_t t = make_tag(group, elem);
      const std::uint32_t len = u32();
      if (t == tag::SequenceDelimitation) return;
      if (t != tag::Item) throw Error(Errc::MalformedElement, "expected sequence item");
      if (len != kUndefinedLength) {
        take(len);
        continue;
      }
      for (;;) {
        if (peek_tag() == tag::ItemDelimitation) {
          u16();
          u16();
          u32();
          break;
        }
        std::uint32_t inner = 0;
        const Element nested = element(inner);
        if (inner == kUndefinedLength) {
          if (nested.vr != "SQ" && nested.vr != "UN") {
            throw Error(Errc::MalformedElement, "undefined length on non-sequence element");
          }
          skip_undefined_sequence();
        }
      }
    }
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw Error(Errc::MalformedElement,
                  "element overruns stream at offset " + std::to_string(pos_) + " (need " + std::to_string(n) + ")");
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_;
};

std::string as_text(std::span<const std::uint8_t> value) {
  std::string s(value.begin(), value.end());
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

std::uint16_t as_u16(const Element& el) {
  if (el.value.size() < 2) throw Error(Errc::MalformedElement, "short US value");
  return static_cast<std::uint16_t>(el.value[0] | (el.value[1] << 8));
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

std::optional<std::string> timestamp_from(const std::string& date, const std::string& time) {
  if (date.size() != 8 || !all_digits(date)) return std::nullopt;
  std::string out = date.substr(0, 4) + "-" + date.substr(4, 2) + "-" + date.substr(6, 2);
  std::string hms = time.substr(0, std::min<std::size_t>(time.size(), 6));
  if (hms.size() >= 4 && all_digits(hms)) {
    while (hms.size() < 6) hms.push_back('0');
    out += "T" + hms.substr(0, 2) + ":" + hms.substr(2, 2) + ":" + hms.substr(4, 2);
  }
  return out;
}

// --- writer -------------------------------------------------------------

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v));
    u16(static_cast<std::uint16_t>(v >> 16));
  }

  void element(std::uint32_t t, std::string_view vr, std::span<const std::uint8_t> value) {
    u16(static_cast<std::uint16_t>(t >> 16));
    u16(static_cast<std::uint16_t>(t));
    out_.push_back(static_cast<std::uint8_t>(vr[0]));
    out_.push_back(static_cast<std::uint8_t>(vr[1]));
    if (has_long_length(vr)) {
      u16(0);
      u32(static_cast<std::uint32_t>(value.size()));
    } else {
      u16(static_cast<std::uint16_t>(value.size()));
    }
    bytes(value);
  }

  void text(std::uint32_t t, std::string_view vr, std::string_view s) {
    std::vector<std::uint8_t> v(s.begin(), s.end());
    if (v.size() % 2 != 0) v.push_back(vr == "UI" ? '\0' : ' ');
    element(t, vr, v);
  }

  void us(std::uint32_t t, std::uint16_t value) {
    const std::array<std::uint8_t, 2> v{static_cast<std::uint8_t>(value), static_cast<std::uint8_t>(value >> 8)};
    element(t, "US", v);
  }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

}  // namespace

std::optional<int> parse_age_string(std::string_view value) {
  if (value.size() != 4) return std::nullopt;
  const std::string_view digits = value.substr(0, 3);
  if (!all_digits(digits)) return std::nullopt;
  int n = 0;
  std::from_chars(digits.data(), digits.data() + digits.size(), n);
  int years = 0;
  switch (std::toupper(static_cast<unsigned char>(value[3]))) {
    case 'Y': years = n; break;
    case 'M': years = n / 12; break;
    case 'W': years = (n * 7) / 365; break;
    case 'D': years = n / 365; break;
    default: return std::nullopt;
  }
  if (years < 0 || years > kMaxAgeYears) return std::nullopt;
  return years;
}

Manufacturer normalize_manufacturer(std::string_view free_text) {
  std::string s = upper(free_text);
  const auto start = s.find_first_not_of(' ');
  s = start == std::string::npos ? std::string() : s.substr(start);
  if (s.starts_with("GE")) return Manufacturer::GEHealthcare;
  if (s.starts_with("SIEMENS")) return Manufacturer::Siemens;
  if (s.starts_with("PHILIPS")) return Manufacturer::Philips;
  return Manufacturer::Other;
}

MachineType machine_type_for_modality(std::string_view modality) {
  const std::string m = upper(modality);
  if (m == "CR") return MachineType::CR;
  if (m == "DX" || m == "DR") return MachineType::DR;
  return MachineType::Unknown;
}

ParsedStudy parse_dicom(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleSize + 4 || bytes[kPreambleSize] != 'D' || bytes[kPreambleSize + 1] != 'I' ||
      bytes[kPreambleSize + 2] != 'C' || bytes[kPreambleSize + 3] != 'M') {
    throw Error(Errc::MissingMagic, "no DICM magic after 128-byte preamble");
  }

  Reader reader(bytes, kPreambleSize + 4);
  std::map<std::uint32_t, Element> elements;
  std::optional<std::string> transfer_syntax;
  bool pixel_seen = false;

  while (!reader.at_end()) {
    std::uint32_t length = 0;
    Element el = reader.element(length);
    if (el.tag >> 16 != 0x0002 && !transfer_syntax) {
      throw Error(Errc::UnsupportedTransferSyntax, "file meta lacks (0002,0010)");
    }
    if (el.tag >> 16 != 0x0002 && *transfer_syntax != kExplicitVrLittleEndian) {
      throw Error(Errc::UnsupportedTransferSyntax, *transfer_syntax);
    }
    if (length == kUndefinedLength) {
      if (el.tag == tag::PixelData) {
        throw Error(Errc::UnsupportedPixelFormat, "encapsulated pixel data");
      }
      if (el.vr != "SQ" && el.vr != "UN") {
        throw Error(Errc::MalformedElement, "undefined length on non-sequence element");
      }
      reader.skip_undefined_sequence();
      continue;
    }
    if (el.tag == tag::TransferSyntax) transfer_syntax = as_text(el.value);
    if (el.tag == tag::PixelData) pixel_seen = true;
    elements[el.tag] = el;
  }
  if (!transfer_syntax) throw Error(Errc::UnsupportedTransferSyntax, "file meta lacks (0002,0010)");
  if (*transfer_syntax != kExplicitVrLittleEndian) throw Error(Errc::UnsupportedTransferSyntax, *transfer_syntax);
  if (!pixel_seen) throw Error(Errc::MissingPixelData, "no (7FE0,0010) element");

  auto text = [&](std::uint32_t t) -> std::optional<std::string> {
    auto it = elements.find(t);
    if (it == elements.end()) return std::nullopt;
    return as_text(it->second.value);
  };
  auto require_us = [&](std::uint32_t t, const char* name) -> std::uint16_t {
    auto it = elements.find(t);
    if (it == elements.end()) throw Error(Errc::MalformedElement, std::string("missing ") + name);
    return as_u16(it->second);
  };

  ParsedStudy out;
  StudyMetadata& m = out.metadata;
  m.study_id = text(tag::StudyInstanceUid).value_or("");
  if (auto age = text(tag::PatientAge)) m.patient_age_years = parse_age_string(*age);
  if (auto sex = text(tag::PatientSex)) {
    const std::string s = upper(*sex);
    m.sex = s == "M" ? Sex::Male : s == "F" ? Sex::Female : Sex::Unknown;
  }
  if (auto man = text(tag::Manufacturer)) m.manufacturer = normalize_manufacturer(*man);
  m.modality = text(tag::Modality).value_or("");
  m.machine_type = machine_type_for_modality(m.modality);
  if (auto view = text(tag::ViewPosition)) {
    const std::string v = upper(*view);
    m.view_hint = v == "PA" ? ViewHint::PA : v == "AP" ? ViewHint::AP : ViewHint::Unknown;
  }
  if (auto date = text(tag::StudyDate)) m.acquired_at = timestamp_from(*date, text(tag::StudyTime).value_or(""));
  m.patient_name = text(tag::PatientName);
  m.patient_id = text(tag::PatientId);
  m.patient_address = text(tag::PatientAddress);
  m.patient_birth_date = text(tag::PatientBirthDate);
  m.identity_removed = upper(text(tag::IdentityRemoved).value_or("")) == "YES";

  RawImage& img = out.image;
  const std::uint16_t rows = require_us(tag::Rows, "Rows");
  const std::uint16_t cols = require_us(tag::Columns, "Columns");
  const std::uint16_t allocated = require_us(tag::BitsAllocated, "BitsAllocated");
  const std::uint16_t stored = elements.contains(tag::BitsStored) ? as_u16(elements[tag::BitsStored]) : allocated;
  if (elements.contains(tag::SamplesPerPixel) && as_u16(elements[tag::SamplesPerPixel]) != 1) {
    throw Error(Errc::UnsupportedPixelFormat, "only single-sample grayscale is supported");
  }
  if (elements.contains(tag::PixelRepresentation) && as_u16(elements[tag::PixelRepresentation]) != 0) {
    throw Error(Errc::UnsupportedPixelFormat, "signed pixel data");
  }
  if (auto frames = text(tag::NumberOfFrames); frames && !frames->empty() && *frames != "1") {
    throw Error(Errc::UnsupportedPixelFormat, "multi-frame image");
  }
  if (allocated != 8 && allocated != 16) {
    throw Error(Errc::UnsupportedPixelFormat, "BitsAllocated " + std::to_string(allocated));
  }
  if (stored == 0 || stored > allocated) {
    throw Error(Errc::UnsupportedPixelFormat, "BitsStored " + std::to_string(stored));
  }
  const std::string photometric = upper(text(tag::PhotometricInterpretation).value_or("MONOCHROME2"));
  if (photometric == "MONOCHROME1") {
    img.photometric = Photometric::Monochrome1;
  } else if (photometric == "MONOCHROME2") {
    img.photometric = Photometric::Monochrome2;
  } else {
    throw Error(Errc::UnsupportedPixelFormat, "photometric " + photometric);
  }

  img.width = cols;
  img.height = rows;
  img.bits_stored = stored;
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  const std::size_t bytes_per = allocated / 8;
  const auto& pixel_value = elements[tag::PixelData].value;
  if (pixel_value.size() < count * bytes_per) {
    throw Error(Errc::MalformedElement, "pixel data shorter than Rows x Columns");
  }
  const std::uint32_t mask = (1u << stored) - 1u;
  img.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t v = pixel_value[i * bytes_per];
    if (bytes_per == 2) v |= static_cast<std::uint32_t>(pixel_value[i * bytes_per + 1]) << 8;
    img.pixels[i] = static_cast<std::uint16_t>(v & mask);
  }
  return out;
}

std::vector<std::uint8_t> serialize_dicom(const StudyMetadata& meta, const RawImage& img) {
  if (img.width <= 0 || img.height <= 0 || img.width > 0xFFFF || img.height > 0xFFFF) {
    throw Error(Errc::EmptyImage, "raster dimensions out of range");
  }
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error(Errc::InvalidArgument, "pixel count does not match dimensions");
  }
  if (img.bits_stored < 1 || img.bits_stored > 16) {
    throw Error(Errc::UnsupportedPixelFormat, "BitsStored " + std::to_string(img.bits_stored));
  }
  const std::uint16_t allocated = img.bits_stored <= 8 ? 8 : 16;

  Writer meta_group;
  const std::string_view sop_class =
      meta.machine_type == MachineType::CR ? "1.2.840.10008.5.1.4.1.1.1" : "1.2.840.10008.5.1.4.1.1.1.1";
  meta_group.text(tag::MediaStorageSopClass, "UI", sop_class);
  meta_group.text(tag::TransferSyntax, "UI", kExplicitVrLittleEndian);

  Writer w;
  w.bytes(std::vector<std::uint8_t>(kPreambleSize, 0));
  w.bytes(std::array<std::uint8_t, 4>{'D', 'I', 'C', 'M'});
  const std::array<std::uint8_t, 4> group_length{
      static_cast<std::uint8_t>(meta_group.buffer().size()), static_cast<std::uint8_t>(meta_group.buffer().size() >> 8),
      static_cast<std::uint8_t>(meta_group.buffer().size() >> 16),
      static_cast<std::uint8_t>(meta_group.buffer().size() >> 24)};
  w.element(make_tag(0x0002, 0x0000), "UL", group_length);
  w.bytes(meta_group.buffer());

  if (meta.acquired_at && meta.acquired_at->size() >= 10) {
    const std::string& ts = *meta.acquired_at;
    w.text(tag::StudyDate, "DA", ts.substr(0, 4) + ts.substr(5, 2) + ts.substr(8, 2));
    if (ts.size() >= 19) w.text(tag::StudyTime, "TM", ts.substr(11, 2) + ts.substr(14, 2) + ts.substr(17, 2));
  }
  if (!meta.modality.empty()) w.text(tag::Modality, "CS", meta.modality);
  w.text(tag::Manufacturer, "LO", to_string(meta.manufacturer));
  if (meta.patient_name) w.text(tag::PatientName, "PN", *meta.patient_name);
  if (meta.patient_id) w.text(tag::PatientId, "LO", *meta.patient_id);
  if (meta.patient_birth_date) w.text(tag::PatientBirthDate, "DA", *meta.patient_birth_date);
  if (meta.sex != Sex::Unknown) w.text(tag::PatientSex, "CS", meta.sex == Sex::Male ? "M" : "F");
  if (meta.patient_age_years) {
    char age[8];
    std::snprintf(age, sizeof age, "%03dY", *meta.patient_age_years);
    w.text(tag::PatientAge, "AS", age);
  }
  if (meta.patient_address) w.text(tag::PatientAddress, "LO", *meta.patient_address);
  if (meta.identity_removed) w.text(tag::IdentityRemoved, "CS", "YES");
  if (meta.view_hint != ViewHint::Unknown) w.text(tag::ViewPosition, "CS", to_string(meta.view_hint));
  if (!meta.study_id.empty()) w.text(tag::StudyInstanceUid, "UI", meta.study_id);
  w.us(tag::SamplesPerPixel, 1);
  w.text(tag::PhotometricInterpretation, "CS",
         img.photometric == Photometric::Monochrome1 ? "MONOCHROME1" : "MONOCHROME2");
  w.us(tag::Rows, static_cast<std::uint16_t>(img.height));
  w.us(tag::Columns, static_cast<std::uint16_t>(img.width));
  w.us(tag::BitsAllocated, allocated);
  w.us(tag::BitsStored, static_cast<std::uint16_t>(img.bits_stored));
  w.us(tag::HighBit, static_cast<std::uint16_t>(img.bits_stored - 1));
  w.us(tag::PixelRepresentation, 0);

  std::vector<std::uint8_t> pixel_bytes;
  pixel_bytes.reserve(img.pixels.size() * (allocated / 8) + 1);
  for (std::uint16_t v : img.pixels) {
    pixel_bytes.push_back(static_cast<std::uint8_t>(v));
    if (allocated == 16) pixel_bytes.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  if (pixel_bytes.size() % 2 != 0) pixel_bytes.push_back(0);
  w.element(tag::PixelData, allocated == 8 ? "OB" : "OW", pixel_bytes);
  return std::move(w.buffer());
}

StudyMetadata anonymize(const StudyMetadata& meta, std::string_view salt) {
  if (meta.identity_removed) return meta;
  StudyMetadata out = meta;
  out.study_id = "anon-" + Sha256().update(salt).update(std::string_view("\x1f", 1)).update(meta.study_id).hex().substr(0, 32);
  out.patient_name.reset();
  out.patient_id.reset();
  out.patient_address.reset();
  out.patient_birth_date.reset();
  out.acquired_at.reset();
  out.identity_removed = true;
  return out;
}

Image8 to_eight_bit(const RawImage& img) {
  if (img.width <= 0 || img.height <= 0 || img.pixels.empty()) throw Error(Errc::EmptyImage, "no pixels");
  if (img.bits_stored < 8 || img.bits_stored > 16) {
    throw Error(Errc::UnsupportedPixelFormat, "BitsStored must be in [8,16]");
  }
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw Error(Errc::InvalidArgument, "pixel count does not match dimensions");
  }
  const auto [lo_it, hi_it] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const std::uint32_t lo = *lo_it;
  const std::uint32_t range = *hi_it - lo;
  Image8 out(img.width, img.height, 0);
  if (range == 0) return out;
  const bool invert = img.photometric == Photometric::Monochrome1;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    // Rounded integer map keeps the transform exactly monotone.
    const std::uint32_t scaled = ((img.pixels[i] - lo) * 255u + range / 2) / range;
    out.pixels[i] = static_cast<std::uint8_t>(invert ? 255u - scaled : scaled);
  }
  return out;
}

AgeBand age_band(int age_years) {
  if (age_years < 0) throw Error(Errc::NegativeAge, std::to_string(age_years));
  if (age_years < 18) return AgeBand::Under18;
  if (age_years < 40) return AgeBand::A18to40;
  if (age_years < 60) return AgeBand::A40to60;
  if (age_years < 75) return AgeBand::A60to75;
  return AgeBand::A75plus;
}

std::string_view to_string(Sex v) {
  switch (v) {
    case Sex::Male: return "Male";
    case Sex::Female: return "Female";
    case Sex::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(Manufacturer v) {
  switch (v) {
    case Manufacturer::GEHealthcare: return "GE Healthcare";
    case Manufacturer::Siemens: return "Siemens";
    case Manufacturer::Philips: return "Philips";
    case Manufacturer::Other: return "Other Manufacturers";
  }
  return "Other Manufacturers";
}

std::string_view to_string(MachineType v) {
  switch (v) {
    case MachineType::CR: return "CR";
    case MachineType::DR: return "DR";
    case MachineType::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(ViewHint v) {
  switch (v) {
    case ViewHint::PA: return "PA";
    case ViewHint::AP: return "AP";
    case ViewHint::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::string_view to_string(AgeBand v) {
  switch (v) {
    case AgeBand::Under18: return "Under 18";
    case AgeBand::A18to40: return "18-40";
    case AgeBand::A40to60: return "40-60";
    case AgeBand::A60to75: return "60-75";
    case AgeBand::A75plus: return "75+";
  }
  return "Unknown";
}

std::optional<Sex> sex_from_string(std::string_view s) {
  for (Sex v : kAllSexes) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<Manufacturer> manufacturer_from_string(std::string_view s) {
  for (Manufacturer v : kAllManufacturers) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<MachineType> machine_type_from_string(std::string_view s) {
  for (MachineType v : kAllMachineTypes) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<AgeBand> age_band_from_string(std::string_view s) {
  for (AgeBand v : kAllAgeBands) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

}  // namespace cxr
