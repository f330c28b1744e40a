#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace optlab {

/// Independent randomness domains of one experiment. Each stream draws from
/// its own counter space, so consuming dropout masks never shifts the data
/// order or the initialization.
enum class StreamId : std::uint32_t {
  init = 1,
  data_order = 2,
  dropout = 3,
  noise = 4,
  synthetic = 5,
};

std::string_view to_string(StreamId id);

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3"). Maps a 128-bit counter and 64-bit key to 128 bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based random stream. The value produced at a given position is a
/// pure function of (seed, stream id, subkey, counter); copying a stream
/// copies its position and nothing else is shared.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId stream, std::uint64_t subkey = 0)
      : seed_(seed), stream_(stream), subkey_(subkey) {}

  /// A fresh stream at counter 0 keyed by this stream's identity plus `key`
  /// (epoch index, draw index, iteration, ...).
  RngStream derive(std::uint64_t key) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1]; safe to take the log of.
  double uniform_open_low();
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Four independent 32-bit words from one counter step.
  std::array<std::uint32_t, 4> next_block() { return block(); }

  std::uint64_t seed() const noexcept { return seed_; }
  StreamId stream() const noexcept { return stream_; }
  std::uint64_t subkey() const noexcept { return subkey_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::array<std::uint32_t, 4> block();

  std::uint64_t seed_;
  StreamId stream_;
  std::uint64_t subkey_;
  std::uint64_t counter_ = 0;
};

}  // namespace optlab
