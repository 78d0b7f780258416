#include <atomic>
#include <cstdlib>
#include <string>

#include "ncfkkt/kernels.hpp"

namespace ncfkkt::kernels {

#ifndef NCFKKT_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(NCFKKT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* initial_table() {
  const char* env = std::getenv("NCFKKT_ISA");
  if (env != nullptr && std::string(env) == "scalar") return &scalar_table();
  if (cpu_supports_avx2() && avx2_table() != nullptr) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select_isa(Isa isa) {
  if (isa == Isa::Avx2 && cpu_supports_avx2() && avx2_table() != nullptr) {
    current().store(avx2_table(), std::memory_order_release);
  } else {
    current().store(&scalar_table(), std::memory_order_release);
  }
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

}  // namespace ncfkkt::kernels
