#pragma once

// Counter-based seeding: every random stream is identified by a tuple of
// integers, so results do not depend on the order in which streams are
// consumed.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dva {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t stream_seed(std::initializer_list<uint64_t> ids) {
  uint64_t h = 0x6a09e667f3bcc908ull;
  for (uint64_t id : ids) h = splitmix64(h ^ splitmix64(id));
  return h;
}

inline std::mt19937_64 make_stream(std::initializer_list<uint64_t> ids) {
  return std::mt19937_64(stream_seed(ids));
}

// Stream tags keep unrelated consumers of the same seed apart.
enum StreamTag : uint64_t {
  kResetStream = 1,
  kNoiseStream = 2,
  kInitStream = 3,
  kCriticStream = 4,
  kEvalStream = 5,
  kVerifyStream = 6,
};

}  // namespace dva
