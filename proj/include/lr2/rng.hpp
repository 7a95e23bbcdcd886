#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lr2 {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Folds a (root, arena, episode, agent, ...) path into one stream seed.
// Every random draw in the lab is keyed by such a path, so results are
// independent of worker count and scheduling.
inline uint64_t substream(std::initializer_list<uint64_t> path) {
  uint64_t h = 0x6a09e667f3bcc909ull;
  for (uint64_t v : path) h = splitmix64(h ^ v);
  return h;
}

inline std::mt19937_64 engine_for(std::initializer_list<uint64_t> path) {
  return std::mt19937_64(substream(path));
}

// purpose tags for substream paths
namespace stream {
inline constexpr uint64_t kInitReputation = 1;
inline constexpr uint64_t kInitAction = 2;
inline constexpr uint64_t kAct = 3;
inline constexpr uint64_t kAssess = 4;
inline constexpr uint64_t kPpoShuffle = 5;
inline constexpr uint64_t kNetInit = 6;
inline constexpr uint64_t kWellMixed = 7;
inline constexpr uint64_t kAdversary = 8;
inline constexpr uint64_t kHatRollout = 10;
inline constexpr uint64_t kReplicate = 11;
}  // namespace stream

// Counter-based stream: cheap to construct per (agent, step) path, which
// keeps draws independent of scheduling without mt19937 seeding costs.
class StreamRng {
 public:
  using result_type = uint64_t;
  explicit StreamRng(uint64_t seed) : state_(seed) {}
  explicit StreamRng(std::initializer_list<uint64_t> path) : state_(substream(path)) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ull; }
  result_type operator()() { return splitmix64(state_++); }

 private:
  uint64_t state_;
};

// 53-bit uniform in [0,1); independent of libstdc++ distribution details
template <class Rng>
inline double uniform01(Rng& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

}  // namespace lr2
