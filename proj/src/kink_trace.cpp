#include "miq3d/kink_trace.hpp"

namespace miq3d {

namespace {
thread_local KinkTrace* current = nullptr;
}

KinkTrace::KinkTrace() : previous_(current) { current = this; }

KinkTrace::~KinkTrace() { current = previous_; }

bool KinkTrace::active() { return current != nullptr; }

void KinkTrace::record(std::uint64_t branch) {
  if (!current) return;
  // FNV-1a over the 8 bytes of branch
  for (int b = 0; b < 8; ++b) {
    current->digest_ ^= (branch >> (8 * b)) & 0xffu;
    current->digest_ *= 0x100000001b3ULL;
  }
}

}  // namespace miq3d
