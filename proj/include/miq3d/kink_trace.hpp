#pragma once

// Records which side of each non-differentiable point an evaluation took
// (ReLU sign patterns, Hungarian assignments). Finite-difference checks use
// it to tell when x - h and x + h straddle a kink. Recording is a no-op unless
// a trace is installed on the calling thread.

#include <cstdint>

namespace miq3d {

class KinkTrace {
 public:
  KinkTrace();
  ~KinkTrace();
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;

  std::uint64_t digest() const { return digest_; }
  void reset() { digest_ = kSeed; }

  static bool active();
  static void record(std::uint64_t branch);

 private:
  static constexpr std::uint64_t kSeed = 0xcbf29ce484222325ULL;
  std::uint64_t digest_ = kSeed;
  KinkTrace* previous_;
};

}  // namespace miq3d
