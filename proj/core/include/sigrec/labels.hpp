#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sigrec {

// Parameter-count classes: exact counts 0..8 plus a bucket for everything
// larger. Class index i < 9 means "exactly i parameters".
inline constexpr int kPcClasses = 10;
inline constexpr int kPcOthers = 9;

// Parameter-type classes at one position. kPtNull marks a position past the
// end of the parameter list.
inline constexpr int kPtClasses = 12;
inline constexpr int kPtOthers = 10;
inline constexpr int kPtNull = 11;

const std::array<std::string, kPcClasses>& pc_class_names();
const std::array<std::string, kPtClasses>& pt_class_names();

/// Canonical class string for a class index ("0".."8"/"others" for PC,
/// "struct*".."NULL" for PT). Throws InvalidArgument when out of range.
const std::string& pc_class_name(int cls);
const std::string& pt_class_name(int cls);

/// Inverse of the above; nullopt when the string is not a class name.
std::optional<int> pc_class_from_name(std::string_view name);
std::optional<int> pt_class_from_name(std::string_view name);

/// Maps a raw parameter count to its class (counts >= 9 collapse to others).
int pc_class_from_count(std::uint64_t count);

/// Maps a source-level type name to a PT class. Whitespace is trimmed and
/// internal spaces before '*' removed, so "char *" and "char*" agree. Names
/// outside the taxonomy return kPtOthers, or nullopt when
/// `unknown_to_others` is false.
std::optional<int> pt_class_from_type(std::string_view type_name,
                                      bool unknown_to_others = true);

/// Ground-truth signature: parameter count plus the first three parameter
/// types.
struct SignatureLabel {
  int pc = 0;
  std::array<int, 3> pt{kPtNull, kPtNull, kPtNull};

  /// Positions past the count must be NULL, positions within it must not be.
  bool valid() const;

  bool operator==(const SignatureLabel&) const = default;
};

}  // namespace sigrec
