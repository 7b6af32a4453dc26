#include "sigrec/labels.hpp"

#include <algorithm>
#include <cctype>

#include "sigrec/common.hpp"

namespace sigrec {
namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

const std::array<std::string, kPcClasses>& pc_class_names() {
  static const std::array<std::string, kPcClasses> names = {
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "others"};
  return names;
}

const std::array<std::string, kPtClasses>& pt_class_names() {
  static const std::array<std::string, kPtClasses> names = {
      "struct*", "int",  "char*", "void*",  "int*", "enum",
      "char",    "void", "float", "struct", "others", "NULL"};
  return names;
}

const std::string& pc_class_name(int cls) {
  if (cls < 0 || cls >= kPcClasses)
    throw InvalidArgument("pc class out of range: " + std::to_string(cls));
  return pc_class_names()[static_cast<size_t>(cls)];
}

const std::string& pt_class_name(int cls) {
  if (cls < 0 || cls >= kPtClasses)
    throw InvalidArgument("pt class out of range: " + std::to_string(cls));
  return pt_class_names()[static_cast<size_t>(cls)];
}

std::optional<int> pc_class_from_name(std::string_view name) {
  const auto& names = pc_class_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<int>(it - names.begin());
}

std::optional<int> pt_class_from_name(std::string_view name) {
  const auto& names = pt_class_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<int>(it - names.begin());
}

int pc_class_from_count(std::uint64_t count) {
  return count < 9 ? static_cast<int>(count) : kPcOthers;
}

std::optional<int> pt_class_from_type(std::string_view type_name,
                                      bool unknown_to_others) {
  std::string t = trim(type_name);
  // Collapse "char *" -> "char*" and similar.
  std::string canon;
  canon.reserve(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] == ' ' && i + 1 < t.size() && t[i + 1] == '*') continue;
    canon.push_back(t[i]);
  }
  if (auto cls = pt_class_from_name(canon)) return cls;
  // Any named struct pointer / struct value maps onto the generic classes.
  if (canon.rfind("struct ", 0) == 0) {
    return canon.back() == '*' ? 0 : 9;
  }
  if (unknown_to_others) return kPtOthers;
  return std::nullopt;
}

bool SignatureLabel::valid() const {
  if (pc < 0 || pc >= kPcClasses) return false;
  for (int cls : pt)
    if (cls < 0 || cls >= kPtClasses) return false;
  // With pc == others (>= 9 params) every observed position is occupied.
  int count = pc == kPcOthers ? 9 : pc;
  for (int i = 0; i < 3; ++i) {
    bool past_end = i >= count;
    if (past_end && pt[static_cast<size_t>(i)] != kPtNull) return false;
    if (!past_end && pt[static_cast<size_t>(i)] == kPtNull) return false;
  }
  return true;
}

}  // namespace sigrec
