#include "optlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace optlab {

std::string_view to_string(StreamId id) {
  switch (id) {
    case StreamId::init: return "init";
    case StreamId::data_order: return "data_order";
    case StreamId::dropout: return "dropout";
    case StreamId::noise: return "noise";
    case StreamId::synthetic: return "synthetic";
  }
  return "unknown";
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

// splitmix64 finalizer, used to fold (stream, subkey) into the key words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RngStream RngStream::derive(std::uint64_t key) const {
  return RngStream(seed_, stream_, mix64(subkey_ ^ mix64(key + 1)));
}

std::array<std::uint32_t, 4> RngStream::block() {
  // Counter words: position (64 bits) and subkey (64 bits); key words: seed
  // folded with the stream id.
  const std::uint64_t key = seed_ ^ mix64(static_cast<std::uint64_t>(stream_));
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
      static_cast<std::uint32_t>(subkey_), static_cast<std::uint32_t>(subkey_ >> 32)};
  ++counter_;
  return philox4x32(ctr, {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)});
}

std::uint64_t RngStream::next_u64() {
  const auto b = block();
  return (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform_open_low() {
  return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
}

double RngStream::normal() {
  // Box-Muller on the two halves of a single Philox block.
  const auto b = block();
  const std::uint64_t a = (static_cast<std::uint64_t>(b[1]) << 32) | b[0];
  const std::uint64_t c = (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
  const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(c >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  // Lemire's multiply-shift; the bias is below 2^-64 * n.
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

}  // namespace optlab
