#pragma once

#include <array>
#include <cstdint>

namespace lowdens {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// Output is a pure function of (key, counter), so any stream position can be
// reached without replaying earlier draws.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) noexcept;
};

// Purpose tags keep the independent random streams of a run apart.
enum class StreamTag : std::uint8_t {
  Data = 1,
  Split = 2,
  Init = 3,
  Train = 4,
  Latent = 5,
  StepNoise = 6,
  Diffuse = 7,
  Nll = 8,
  Bootstrap = 9,
  Misc = 15,
};

// Packs (tag, group, index, step) into a 64-bit stream id:
// tag 4 bits | group 12 bits | index 28 bits | step 20 bits.
std::uint64_t stream_id(StreamTag tag, std::uint32_t group, std::uint32_t index,
                        std::uint32_t step = 0);

// A single reproducible stream keyed by a seed and addressed by a stream id.
// Each draw advances an internal 64-bit block counter.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform on (0, 1].
  double uniform_open_low() noexcept { return 1.0 - uniform(); }
  double normal() noexcept;
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  void refill() noexcept;

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lowdens
