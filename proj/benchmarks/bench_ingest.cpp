#include <benchmark/benchmark.h>

#include <sstream>
#include <string>
#include <vector>

#include "sigrec/ingest.hpp"

namespace {

std::string make_listing(int functions, int instructions_each) {
  std::ostringstream out;
  char addr[32];
  for (int f = 0; f < functions; ++f) {
    std::snprintf(addr, sizeof(addr), "%016x", f * 0x100);
    out << addr << " <fn" << f << ">:\n";
    for (int i = 0; i < instructions_each; ++i) {
      std::snprintf(addr, sizeof(addr), "%x", f * 0x100 + i * 4);
      switch (i % 5) {
        case 0: out << "   " << addr << ":\t55\tpush   %rbp\n"; break;
        case 1: out << "   " << addr << ":\t48 83 ec 08\tsub    $0x8,%rsp\n"; break;
        case 2: out << "   " << addr << ":\t8b 55 fc\tmov    -0x4(%rbp),%edx\n"; break;
        case 3:
          out << "   " << addr << ":\te8 dc fe ff ff\tcall   1050 <memcpy@plt>\n";
          break;
        default: out << "   " << addr << ":\tc3\tret\n"; break;
      }
    }
  }
  return out.str();
}

void BM_ParseListing(benchmark::State& state) {
  std::string listing = make_listing(64, 40);
  for (auto _ : state) {
    std::istringstream in(listing);
    auto parsed = sigrec::parse_listing(in, "bench");
    benchmark::DoNotOptimize(parsed.functions.data());
  }
  state.SetBytesProcessed(static_cast<int64_t>(state.iterations()) *
                          static_cast<int64_t>(listing.size()));
}
BENCHMARK(BM_ParseListing);

void BM_SanitizeInstruction(benchmark::State& state) {
  const std::vector<std::string> lines = {
      "mov -0x4(%rbp),%edx",
      "call 1050 <memcpy@plt>",
      "lea (%rdi,%rsi,1),%eax",
      "movabs $0x4141414141414141,%rax",
      "jne 401f31 <main+0x34>",
  };
  size_t bytes = 0;
  for (auto _ : state) {
    for (const auto& line : lines) {
      auto s = sigrec::sanitize_instruction(line);
      benchmark::DoNotOptimize(s.data());
      bytes += line.size();
    }
  }
  state.SetBytesProcessed(static_cast<int64_t>(bytes));
}
BENCHMARK(BM_SanitizeInstruction);

}  // namespace

BENCHMARK_MAIN();
