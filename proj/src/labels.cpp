#include "cxr/labels.hpp"

#include <algorithm>
#include <cctype>
#include <string>
#include <utility>

#include "cxr/error.hpp"

namespace cxr {

namespace {

constexpr std::array<std::string_view, kPathologyCount> kCanonical = {
    "Alveolar Lung Opacity",
    "Atelectasis",
    "Azygous Lobe",
    "Bifid Rib",
    "Bronchiectasis",
    "Bullous Emphysema",
    "Cardiomegaly",
    "Cavity",
    "Cervical Rib",
    "Clavicle Fracture",
    "Clavicle Fracture with PO",
    "Consolidation",
    "Dextrocardia",
    "Dextrocardia with situs inversus",
    "Diaphragmatic Hump",
    "Elevated Diaphragm",
    "Esophageal Stent",
    "Fibrosis",
    "Fissural Thickening",
    "Flattened Diaphragm",
    "Foreign Body - Cardiac Valves",
    "Foreign Body - Chemoport",
    "Foreign Body - Chest Leads",
    "Foreign Body - CV Line",
    "Foreign Body - Endotracheal tube",
    "Foreign Body - Intercostal",
    "Foreign Body - Nasogastric Tube",
    "Foreign Body - Nasojejunal Tube",
    "Foreign Body - Pacemaker",
    "Foreign Body - Pigtail Catheter",
    "Foreign Body - Spinal Fusion",
    "Foreign Body - Sternal Sutures",
    "Foreign Body - Tracheostomy Tube",
    "Hilar Lymphadenopathy",
    "Hilar Prominence",
    "Humerus Fracture",
    "Humerus Post OP",
    "Hydro Pneumothorax",
    "Hypoplastic Rib",
    "Interstitial Lung Disease",
    "Interstitial Lung Opacity",
    "Lobe Collapse",
    "Lung Collapse",
    "Lung Mass",
    "Lymph Node Calcification",
    "Mastectomy",
    "Mediastinal Mass",
    "Mediastinal Shift",
    "Mediastinal Widening",
    "Milliary Tuberculosis",
    "Nodule",
    "Old Healed Clavicle Fracture",
    "Old Rib Fracture",
    "Old Tuberculosis",
    "Pericardial Cyst",
    "Pleural Calcification",
    "Pleural Effusion",
    "Pleural Plaque",
    "Pleural Thickening",
    "Pneumonia",
    "Pneumoperitoneum",
    "Pneumothorax",
    "Prominent Bronchovascular Markings",
    "Pulmonary Edema",
    "Reticulo-nodular Appearance",
    "Rib Fracture",
    "Scapula Fracture",
    "Scoliosis",
    "Subcutaneous Emphysema",
    "Surgical Staples",
    "Thyroid Lesion",
    "Tracheal and Mediastinal Shift",
    "Tracheal Shift",
    "Tuberculosis",
    "Unfolding of Aorta",
};

// Spellings used by the metric tables for the same findings.
constexpr std::pair<std::string_view, std::string_view> kAliases[] = {
    {"Foreign Body - ETT", "Foreign Body - Endotracheal tube"},
    {"Foreign Body - Endotracheal Tube", "Foreign Body - Endotracheal tube"},
    {"Foreign Body - ICD", "Foreign Body - Intercostal"},
    {"Foreign Body - Intercostal Drain", "Foreign Body - Intercostal"},
    {"Foreign Body - NG Tube", "Foreign Body - Nasogastric Tube"},
    {"ILD", "Interstitial Lung Disease"},
    {"Old TB", "Old Tuberculosis"},
    {"Miliary Tuberculosis", "Milliary Tuberculosis"},
};

std::string fold(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  while (!out.empty() && out.back() == ' ') out.pop_back();
  const auto start = out.find_first_not_of(' ');
  return start == std::string::npos ? std::string() : out.substr(start);
}

std::optional<std::size_t> canonical_index(std::string_view name) {
  const std::string key = fold(name);
  for (std::size_t i = 0; i < kCanonical.size(); ++i) {
    if (fold(kCanonical[i]) == key) return i;
  }
  for (const auto& [alias, target] : kAliases) {
    if (fold(alias) == key) return canonical_index(target);
  }
  return std::nullopt;
}

}  // namespace

PathologyLabel PathologyLabel::from_index(std::size_t index) {
  if (index >= kPathologyCount) throw Error(Errc::UnknownLabel, "label index " + std::to_string(index));
  return PathologyLabel(static_cast<std::uint8_t>(index));
}

std::optional<PathologyLabel> PathologyLabel::resolve(std::string_view name) {
  if (auto idx = canonical_index(name)) return PathologyLabel(static_cast<std::uint8_t>(*idx));
  return std::nullopt;
}

PathologyLabel PathologyLabel::parse(std::string_view name) {
  if (auto label = resolve(name)) return *label;
  throw Error(Errc::UnknownLabel, std::string(name));
}

std::string_view PathologyLabel::name() const { return kCanonical[index_]; }

const std::array<std::string_view, kPathologyCount>& canonical_pathology_names() { return kCanonical; }

}  // namespace cxr
