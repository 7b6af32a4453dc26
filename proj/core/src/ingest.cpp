#include "sigrec/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "sigrec/common.hpp"
#include "sigrec/hash.hpp"
#include "sigrec/rng.hpp"

namespace sigrec {
namespace {

using nlohmann::json;

bool is_lower_hex(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
  });
}

std::string_view trim_view(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

/// Drops "# ..." trailers and collapses whitespace runs to single spaces.
std::string normalize_text(std::string_view text) {
  if (auto pos = text.find('#'); pos != std::string_view::npos)
    text = text.substr(0, pos);
  std::string out;
  out.reserve(text.size());
  bool in_space = true;  // swallow leading whitespace
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
      continue;
    }
    if (in_space && !out.empty()) out.push_back(' ');
    in_space = false;
    out.push_back(c);
  }
  return out;
}

// A function header line: "0000000000001149 <add>:". Returns the symbol
// name, or nullopt when the line has a different shape. Throws when the
// shape matches but the address is not hex.
std::optional<std::string> match_header(std::string_view line, size_t lineno) {
  std::string_view t = trim_view(line);
  if (t.size() < 4 || t.back() != ':' || t[t.size() - 2] != '>')
    return std::nullopt;
  size_t open = t.find('<');
  if (open == std::string_view::npos || open == 0) return std::nullopt;
  std::string_view addr = trim_view(t.substr(0, open));
  if (addr.find(' ') != std::string_view::npos) return std::nullopt;
  if (!is_lower_hex(addr))
    throw ParseError("function header with non-hex address", lineno);
  std::string_view name = t.substr(open + 1, t.size() - 2 - (open + 1));
  if (name.empty()) throw ParseError("function header with empty name", lineno);
  return std::string(name);
}

// An instruction line: "   4:\t55 ...\tpush   %rbp". Returns the normalized
// text column; empty string for bytes-only continuation lines and "..."
// elisions.
std::optional<std::string> match_instruction(std::string_view line) {
  std::string_view t = line;
  size_t b = 0;
  while (b < t.size() && std::isspace(static_cast<unsigned char>(t[b]))) ++b;
  t = t.substr(b);
  size_t colon = t.find(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  if (!is_lower_hex(t.substr(0, colon))) return std::nullopt;
  std::string_view rest = t.substr(colon + 1);
  // Layout after the offset is tab-separated: bytes, then the text column.
  size_t tab = rest.find('\t', 1);
  if (tab == std::string_view::npos) return std::string();  // bytes only
  std::string text = normalize_text(rest.substr(tab + 1));
  if (text == "...") return std::string();
  return text;
}

bool is_noise(std::string_view line) {
  std::string_view t = trim_view(line);
  if (t.empty() || t == "...") return true;
  if (t.rfind("Disassembly of section", 0) == 0) return true;
  if (t.find("file format") != std::string_view::npos) return true;
  return false;
}

bool is_immediate_like(std::string_view tok) {
  if (tok.empty()) return false;
  if (tok[0] == '$') tok = tok.substr(1);
  if (!tok.empty() && tok[0] == '-') tok = tok.substr(1);
  if (tok.rfind("0x", 0) == 0) return is_lower_hex(tok.substr(2));
  if (!is_lower_hex(tok)) return false;
  return std::any_of(tok.begin(), tok.end(),
                     [](char c) { return c >= '0' && c <= '9'; });
}

bool is_token_delim(char c) {
  return c == ' ' || c == '(' || c == ')' || c == ',' || c == ':' || c == '*';
}

std::string label_key(const std::string& binary, const std::string& function) {
  std::string key = binary;
  key.push_back('\0');
  key += function;
  return key;
}

json require_field(const json& obj, const char* key, size_t lineno) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ParseError(std::string("missing field \"") + key + "\"", lineno);
  return *it;
}

}  // namespace

ParsedListing parse_listing(std::istream& in, std::string binary_id) {
  ParsedListing out;
  RawFunction current;
  bool in_function = false;

  auto flush = [&] {
    if (!in_function) return;
    if (current.instructions.empty())
      ++out.stats.empty_functions_dropped;
    else
      out.functions.push_back(std::move(current));
    current = RawFunction{};
    in_function = false;
  };

  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    if (auto name = match_header(line, lineno)) {
      flush();
      in_function = true;
      current.binary = binary_id;
      current.name = *name;
      continue;
    }
    if (auto text = match_instruction(line)) {
      if (text->empty()) {  // continuation or elision
        ++out.stats.skipped_lines;
        continue;
      }
      if (!in_function)
        throw ParseError("instruction before any function header", lineno);
      current.instructions.push_back(std::move(*text));
      ++out.stats.instruction_lines;
      continue;
    }
    if (is_noise(line)) {
      ++out.stats.skipped_lines;
      continue;
    }
    throw ParseError("unrecognizable listing line: " + line, lineno);
  }
  flush();
  out.stats.functions = out.functions.size();
  return out;
}

ParsedListing parse_listing_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open listing: " + path);
  return parse_listing(in, std::filesystem::path(path).stem().string());
}

std::string sanitize_instruction(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::string token;
  int depth = 0;
  bool seen_mnemonic = false;

  auto flush_token = [&] {
    if (token.empty()) return;
    if (!seen_mnemonic) {
      seen_mnemonic = true;
      out += token;
    } else if (depth == 0 && is_immediate_like(token)) {
      out += "IMM";
    } else {
      out += token;
    }
    token.clear();
  };

  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c == '<') {
      flush_token();
      while (!out.empty() && out.back() == ' ') out.pop_back();
      size_t close = text.find('>', i + 1);
      out += "<FUNC>";
      if (close == std::string_view::npos) break;
      i = close;
      continue;
    }
    if (is_token_delim(c)) {
      flush_token();
      out.push_back(c);
      if (c == '(') ++depth;
      if (c == ')' && depth > 0) --depth;
      continue;
    }
    token.push_back(c);
  }
  flush_token();
  return out;
}

std::vector<std::string> sanitize_instructions(
    const std::vector<std::string>& instructions) {
  std::vector<std::string> out;
  out.reserve(instructions.size());
  for (const auto& text : instructions) out.push_back(sanitize_instruction(text));
  return out;
}

std::string function_hash(const std::vector<std::string>& sanitized) {
  std::string joined;
  for (size_t i = 0; i < sanitized.size(); ++i) {
    if (i) joined.push_back('\n');
    joined += sanitized[i];
  }
  return md5_hex(joined);
}

std::size_t dedup_by_hash(std::vector<DatasetRecord>& records) {
  std::unordered_set<std::string> seen;
  std::size_t before = records.size();
  std::erase_if(records, [&](const DatasetRecord& r) {
    return !seen.insert(r.hash).second;
  });
  return before - records.size();
}

std::vector<DatasetRecord> build_dataset(
    const std::vector<RawFunction>& functions,
    const std::vector<LabelRecord>& labels, IngestStats& stats) {
  std::unordered_map<std::string, const LabelRecord*> by_key;
  for (const auto& label : labels) {
    auto [it, inserted] =
        by_key.emplace(label_key(label.binary, label.function), &label);
    if (!inserted)
      throw FormatError("duplicate label for " + label.binary +
                        ":" + label.function);
  }

  std::vector<DatasetRecord> records;
  records.reserve(functions.size());
  for (const auto& fn : functions) {
    DatasetRecord rec;
    rec.binary = fn.binary;
    rec.function = fn.name;
    rec.instructions = sanitize_instructions(fn.instructions);
    rec.hash = function_hash(rec.instructions);
    records.push_back(std::move(rec));
  }

  stats.duplicates_removed = dedup_by_hash(records);

  std::unordered_set<std::string> used;
  std::vector<DatasetRecord> labeled;
  labeled.reserve(records.size());
  for (auto& rec : records) {
    auto it = by_key.find(label_key(rec.binary, rec.function));
    if (it == by_key.end()) {
      ++stats.unlabeled_dropped;
      continue;
    }
    const LabelRecord& label = *it->second;
    used.insert(it->first);
    rec.label.pc = pc_class_from_count(label.pc);
    size_t observed = std::min<std::uint64_t>(label.pc, 3);
    if (label.param_types.size() < observed)
      throw FormatError("label for " + rec.binary + ":" + rec.function +
                        " lists fewer types than its parameter count");
    for (size_t i = 0; i < 3; ++i) {
      rec.label.pt[i] = i < observed
                            ? *pt_class_from_type(label.param_types[i])
                            : kPtNull;
    }
    if (!rec.label.valid())
      throw FormatError("inconsistent label for " + rec.binary + ":" +
                        rec.function);
    labeled.push_back(std::move(rec));
  }
  stats.unused_labels = by_key.size() - used.size();
  stats.records = labeled.size();
  return labeled;
}

SplitResult split_dataset(const std::vector<DatasetRecord>& records,
                          double ratio, std::uint64_t seed) {
  if (ratio < 0.0 || ratio > 1.0)
    throw InvalidArgument("split ratio must be in [0, 1]");
  std::vector<size_t> order(records.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  auto n_train = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(records.size())));
  n_train = std::min(n_train, records.size());

  SplitResult split;
  split.train.reserve(n_train);
  split.test.reserve(records.size() - n_train);
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_train ? split.train : split.test).push_back(records[order[i]]);
  return split;
}

void write_dataset_jsonl(std::ostream& out,
                         const std::vector<DatasetRecord>& records) {
  for (const auto& rec : records) {
    json obj;
    obj["source_id"] = json::array({rec.binary, rec.function});
    obj["instructions"] = rec.instructions;
    obj["pc"] = pc_class_name(rec.label.pc);
    obj["pt1"] = pt_class_name(rec.label.pt[0]);
    obj["pt2"] = pt_class_name(rec.label.pt[1]);
    obj["pt3"] = pt_class_name(rec.label.pt[2]);
    obj["hash"] = rec.hash;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing dataset");
}

void write_dataset_jsonl_file(const std::string& path,
                              const std::vector<DatasetRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  write_dataset_jsonl(out, records);
}

std::vector<DatasetRecord> read_dataset_jsonl(std::istream& in) {
  std::vector<DatasetRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim_view(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad JSON: ") + e.what(), lineno);
    }
    try {
      DatasetRecord rec;
      json sid = require_field(obj, "source_id", lineno);
      if (!sid.is_array() || sid.size() != 2)
        throw ParseError("source_id must be a [binary, function] pair",
                         lineno);
      rec.binary = sid[0].get<std::string>();
      rec.function = sid[1].get<std::string>();
      rec.instructions =
          require_field(obj, "instructions", lineno).get<std::vector<std::string>>();
      rec.hash = require_field(obj, "hash", lineno).get<std::string>();
      auto pc = pc_class_from_name(
          require_field(obj, "pc", lineno).get<std::string>());
      if (!pc) throw ParseError("unknown pc class", lineno);
      rec.label.pc = *pc;
      const char* pt_keys[3] = {"pt1", "pt2", "pt3"};
      for (int i = 0; i < 3; ++i) {
        auto pt = pt_class_from_name(
            require_field(obj, pt_keys[i], lineno).get<std::string>());
        if (!pt)
          throw ParseError(std::string("unknown ") + pt_keys[i] + " class",
                           lineno);
        rec.label.pt[static_cast<size_t>(i)] = *pt;
      }
      if (!rec.label.valid())
        throw ParseError("inconsistent pc/pt labels", lineno);
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad record: ") + e.what(), lineno);
    }
  }
  return records;
}

std::vector<DatasetRecord> read_dataset_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  return read_dataset_jsonl(in);
}

std::vector<LabelRecord> read_labels_jsonl(std::istream& in) {
  std::vector<LabelRecord> labels;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim_view(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad JSON: ") + e.what(), lineno);
    }
    try {
      LabelRecord rec;
      rec.binary = require_field(obj, "binary", lineno).get<std::string>();
      rec.function = require_field(obj, "function", lineno).get<std::string>();
      json pc = require_field(obj, "pc", lineno);
      if (!pc.is_number_unsigned())
        throw ParseError("pc must be a non-negative integer", lineno);
      rec.pc = pc.get<std::uint64_t>();
      rec.param_types =
          require_field(obj, "pts", lineno).get<std::vector<std::string>>();
      labels.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad label record: ") + e.what(), lineno);
    }
  }
  return labels;
}

std::vector<LabelRecord> read_labels_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels: " + path);
  return read_labels_jsonl(in);
}

void write_labels_jsonl(std::ostream& out,
                        const std::vector<LabelRecord>& labels) {
  for (const auto& rec : labels) {
    json obj;
    obj["binary"] = rec.binary;
    obj["function"] = rec.function;
    obj["pc"] = rec.pc;
    obj["pts"] = rec.param_types;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing labels");
}

}  // namespace sigrec
