#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cxr/image.hpp"

namespace cxr {

enum class Sex { Male, Female, Unknown };
enum class Manufacturer { GEHealthcare, Siemens, Philips, Other };
enum class MachineType { CR, DR, Unknown };
enum class ViewHint { PA, AP, Unknown };
enum class Photometric { Monochrome1, Monochrome2 };

/// Half-open age partition used by the subgroup tables.
enum class AgeBand { Under18, A18to40, A40to60, A60to75, A75plus };

inline constexpr AgeBand kAllAgeBands[] = {AgeBand::Under18, AgeBand::A18to40, AgeBand::A40to60, AgeBand::A60to75,
                                           AgeBand::A75plus};
inline constexpr Sex kAllSexes[] = {Sex::Male, Sex::Female, Sex::Unknown};
inline constexpr Manufacturer kAllManufacturers[] = {Manufacturer::GEHealthcare, Manufacturer::Siemens,
                                                     Manufacturer::Philips, Manufacturer::Other};
inline constexpr MachineType kAllMachineTypes[] = {MachineType::CR, MachineType::DR, MachineType::Unknown};

inline constexpr int kMaxAgeYears = 130;

struct StudyMetadata {
  std::string study_id;
  std::optional<int> patient_age_years;
  Sex sex = Sex::Unknown;
  Manufacturer manufacturer = Manufacturer::Other;
  MachineType machine_type = MachineType::Unknown;
  std::string modality;
  ViewHint view_hint = ViewHint::Unknown;
  /// "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS".
  std::optional<std::string> acquired_at;

  // Direct identifiers. anonymize() clears all of them.
  std::optional<std::string> patient_name;
  std::optional<std::string> patient_id;
  std::optional<std::string> patient_address;
  std::optional<std::string> patient_birth_date;
  bool identity_removed = false;

  friend bool operator==(const StudyMetadata&, const StudyMetadata&) = default;
};

struct RawImage {
  int width = 0;
  int height = 0;
  int bits_stored = 16;
  Photometric photometric = Photometric::Monochrome2;
  std::vector<std::uint16_t> pixels;

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

struct ParsedStudy {
  StudyMetadata metadata;
  RawImage image;
};

inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

/// Parses a Part-10 file restricted to explicit-VR little-endian, single
/// frame, uncompressed grayscale.
ParsedStudy parse_dicom(std::span<const std::uint8_t> bytes);

/// Writes the tag subset parse_dicom understands. parse_dicom of the result
/// reproduces (meta, img) exactly when meta.machine_type agrees with
/// machine_type_for_modality(meta.modality).
std::vector<std::uint8_t> serialize_dicom(const StudyMetadata& meta, const RawImage& img);

/// Decodes a DICOM AS value ("045Y", "018M", ...). Sub-year units floor.
std::optional<int> parse_age_string(std::string_view value);

Manufacturer normalize_manufacturer(std::string_view free_text);
MachineType machine_type_for_modality(std::string_view modality);

/// Drops direct identifiers, replaces study_id with a salted SHA-256 and
/// marks the record; a record that is already marked passes through as-is.
StudyMetadata anonymize(const StudyMetadata& meta, std::string_view salt);

/// Min-max window to [0,255]; MONOCHROME1 is inverted so brighter means
/// higher. Constant images map to all zeros.
Image8 to_eight_bit(const RawImage& img);

AgeBand age_band(int age_years);

std::string_view to_string(Sex v);
std::string_view to_string(Manufacturer v);
std::string_view to_string(MachineType v);
std::string_view to_string(ViewHint v);
std::string_view to_string(AgeBand v);

std::optional<Sex> sex_from_string(std::string_view s);
std::optional<Manufacturer> manufacturer_from_string(std::string_view s);
std::optional<MachineType> machine_type_from_string(std::string_view s);
std::optional<AgeBand> age_band_from_string(std::string_view s);

}  // namespace cxr
