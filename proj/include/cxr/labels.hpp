#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace cxr {

inline constexpr std::size_t kPathologyCount = 75;

/// One of the 75 canonical findings. The index is the canonical order,
/// which is also the row order of every rendered report.
class PathologyLabel {
 public:
  constexpr PathologyLabel() = default;

  /// Throws UnknownLabel for an out-of-range index.
  static PathologyLabel from_index(std::size_t index);
  /// Exact canonical name, alias, or case-insensitive match of either.
  static std::optional<PathologyLabel> resolve(std::string_view name);
  /// As resolve(), throwing UnknownLabel on a miss.
  static PathologyLabel parse(std::string_view name);

  constexpr std::size_t index() const { return index_; }
  std::string_view name() const;

  friend constexpr bool operator==(PathologyLabel, PathologyLabel) = default;
  friend constexpr auto operator<=>(PathologyLabel, PathologyLabel) = default;

 private:
  constexpr explicit PathologyLabel(std::uint8_t index) : index_(index) {}
  std::uint8_t index_ = 0;
};

const std::array<std::string_view, kPathologyCount>& canonical_pathology_names();

}  // namespace cxr
