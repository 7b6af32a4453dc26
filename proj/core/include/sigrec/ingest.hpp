#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "sigrec/labels.hpp"

namespace sigrec {

/// One function lifted out of a disassembly listing. `instructions` holds
/// the textual instruction column, whitespace-normalized, in address order.
struct RawFunction {
  std::string binary;
  std::string name;
  std::vector<std::string> instructions;
};

struct ParseStats {
  std::size_t functions = 0;
  std::size_t empty_functions_dropped = 0;
  std::size_t instruction_lines = 0;
  std::size_t skipped_lines = 0;
};

struct ParsedListing {
  std::vector<RawFunction> functions;
  ParseStats stats;
};

/// Parses `objdump -d` AT&T-syntax output. `binary_id` tags every function
/// (callers typically pass the listing file's stem). Function headers look
/// like "0000000000001149 <add>:"; instruction lines are
/// "   4:\t55 ...\tpush   %rbp". Bytes-only continuation lines, section
/// banners, "file format" lines, blank lines and "..." elisions are
/// skipped. Trailing "# ..." comments are stripped and interior whitespace
/// is collapsed to single spaces. An instruction before any header, a bad
/// header address, or an unrecognizable non-blank line raises ParseError
/// with the 1-based line number. Functions with no instructions are dropped
/// (counted in stats).
ParsedListing parse_listing(std::istream& in, std::string binary_id);
ParsedListing parse_listing_file(const std::string& path);

/// Rewrites one normalized instruction so that address-like literals cannot
/// leak identity: numeric literals outside parentheses become "IMM"
/// ("$0x8", "-0x4", bare hex branch targets), and "<symbol+0x10>" becomes
/// "<FUNC>" with the preceding space removed. Tokens inside parentheses
/// (registers, index scales) and the leading mnemonic are preserved.
/// Idempotent: sanitize_instruction(sanitize_instruction(s)) == s sanitized.
std::string sanitize_instruction(std::string_view text);

std::vector<std::string> sanitize_instructions(
    const std::vector<std::string>& instructions);

/// Content hash of a sanitized instruction sequence: MD5 hex digest of the
/// newline-joined text. Used to collapse duplicate function bodies.
std::string function_hash(const std::vector<std::string>& sanitized);

/// One labeled, sanitized function ready for model consumption.
struct DatasetRecord {
  std::string binary;
  std::string function;
  std::vector<std::string> instructions;  // sanitized
  SignatureLabel label;
  std::string hash;

  bool operator==(const DatasetRecord&) const = default;
};

/// Ground truth for one function as read from the label sidecar.
struct LabelRecord {
  std::string binary;
  std::string function;
  std::uint64_t pc = 0;
  std::vector<std::string> param_types;
};

struct IngestStats {
  ParseStats parse;
  std::size_t duplicates_removed = 0;
  std::size_t unlabeled_dropped = 0;
  std::size_t unused_labels = 0;
  std::size_t records = 0;
};

/// Removes records whose hash was already seen, keeping the first
/// occurrence. Returns the number removed.
std::size_t dedup_by_hash(std::vector<DatasetRecord>& records);

/// Sanitizes, hashes, dedups and labels the parsed functions. Functions
/// without a matching (binary, function) label are dropped; both directions
/// of mismatch are counted in `stats`. Duplicate label keys raise
/// FormatError.
std::vector<DatasetRecord> build_dataset(
    const std::vector<RawFunction>& functions,
    const std::vector<LabelRecord>& labels, IngestStats& stats);

struct SplitResult {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
};

/// Deterministic shuffled split: records are permuted by an RNG seeded with
/// `seed` and the first round(ratio * n) go to train. Same inputs, same
/// split — across runs and machines.
SplitResult split_dataset(const std::vector<DatasetRecord>& records,
                          double ratio, std::uint64_t seed);

/// JSONL serialization. One object per line with keys: source_id (a
/// [binary, function] pair), instructions, pc, pt1, pt2, pt3 (class name
/// strings), hash. Reading validates class names and the label invariant.
void write_dataset_jsonl(std::ostream& out,
                         const std::vector<DatasetRecord>& records);
void write_dataset_jsonl_file(const std::string& path,
                              const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset_jsonl(std::istream& in);
std::vector<DatasetRecord> read_dataset_jsonl_file(const std::string& path);

/// Label sidecar JSONL: {"binary": ..., "function": ..., "pc": N,
/// "pts": ["int", ...]} per line.
std::vector<LabelRecord> read_labels_jsonl(std::istream& in);
std::vector<LabelRecord> read_labels_jsonl_file(const std::string& path);
void write_labels_jsonl(std::ostream& out,
                        const std::vector<LabelRecord>& labels);

}  // namespace sigrec
