#ifndef DLQR_RNG_HPP
#define DLQR_RNG_HPP

#include <cmath>
#include <cstdint>

namespace dlqr {

// Deterministic stream generator built on splitmix64. Streams meant to
// run in parallel (one per rollout) are derived by mixing the base seed
// with a stream index, so draw order inside one stream never depends on
// how many other streams exist or which thread touched them first.
class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream)
      : state_(mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^
                   mix(stream + 0xbf58476d1ce4e5b9ULL))) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform on (0, 1]: never zero, safe for log().
  double next_open_unit() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via the Box-Muller transform. Draws are generated
  // in pairs; the spare is cached inside the stream.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_open_unit();
    const double u2 = next_open_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

  // +1 or -1 with equal probability (unit variance, like next_normal()).
  double next_rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace dlqr

#endif  // DLQR_RNG_HPP
