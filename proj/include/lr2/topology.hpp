#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lr2/rng.hpp"

namespace lr2 {

enum class TopologyKind : uint8_t {
  LatticeVonNeumann,
  LatticeMoore,
  Honeycomb,
  WellMixed,
};

inline const char* to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::LatticeVonNeumann: return "von_neumann";
    case TopologyKind::LatticeMoore: return "moore";
    case TopologyKind::Honeycomb: return "honeycomb";
    default: return "well_mixed";
  }
}

// Interaction structure with deterministic neighbour enumeration.
// Lattice kinds are fixed after construction; well-mixed graphs resample a
// k-regular round graph per timestep as a pure function of (seed, t).
class NeighborGraph {
 public:
  // Adjacency snapshot for one timestep. Owns its table for well-mixed
  // rounds; views the static table for lattices.
  class Round {
   public:
    std::span<const int32_t> neighbours(int i) const {
      const auto& t = external_ ? *external_ : owned_;
      return {t.data() + static_cast<std::size_t>(i) * deg_,
              static_cast<std::size_t>(deg_)};
    }
    // slot of `nbr` within agent i's neighbour list; -1 if not adjacent
    int slot_of(int i, int nbr) const {
      auto nb = neighbours(i);
      for (int s = 0; s < deg_; ++s)
        if (nb[s] == nbr) return s;
      return -1;
    }
    int degree() const { return deg_; }

   private:
    friend class NeighborGraph;
    const std::vector<int32_t>* external_ = nullptr;
    std::vector<int32_t> owned_;
    int deg_ = 0;
  };

  static NeighborGraph lattice(int side, TopologyKind kind) {
    if (kind == TopologyKind::WellMixed)
      throw std::invalid_argument("lattice: well-mixed is not a lattice kind");
    if (side < 3)
      throw std::invalid_argument("lattice: side " + std::to_string(side) +
                                  " < 3 (torus wrap would self-link)");
    if (kind == TopologyKind::Honeycomb && side % 2 != 0)
      throw std::invalid_argument("lattice: honeycomb tiling needs an even side, got " +
                                  std::to_string(side));
    NeighborGraph g;
    g.kind_ = kind;
    g.n_ = side * side;
    g.side_ = side;
    g.degree_ = kind == TopologyKind::LatticeMoore ? 8
                : kind == TopologyKind::Honeycomb ? 3
                                                  : 4;
    g.table_.resize(static_cast<std::size_t>(g.n_) * g.degree_);
    const int L = side;
    auto at = [L](int r, int c) {
      return ((r + L) % L) * L + (c + L) % L;
    };
    for (int r = 0; r < L; ++r) {
      for (int c = 0; c < L; ++c) {
        int32_t* row = g.table_.data() + static_cast<std::size_t>(at(r, c)) * g.degree_;
        if (kind == TopologyKind::Honeycomb) {
          // brick-wall embedding: one vertical bond per site by parity
          row[0] = (r + c) % 2 == 0 ? at(r - 1, c) : at(r + 1, c);
          row[1] = at(r, c + 1);
          row[2] = at(r, c - 1);
        } else {
          // compass order N, E, S, W; Moore appends NE, SE, SW, NW
          row[0] = at(r - 1, c);
          row[1] = at(r, c + 1);
          row[2] = at(r + 1, c);
          row[3] = at(r, c - 1);
          if (kind == TopologyKind::LatticeMoore) {
            row[4] = at(r - 1, c + 1);
            row[5] = at(r + 1, c + 1);
            row[6] = at(r + 1, c - 1);
            row[7] = at(r - 1, c - 1);
          }
        }
      }
    }
    return g;
  }

  static NeighborGraph well_mixed(int n, int k, uint64_t seed) {
    if (k < 1 || k >= n)
      throw std::invalid_argument("well_mixed: need 1 <= k < n");
    if ((static_cast<long long>(n) * k) % 2 != 0)
      throw std::invalid_argument("well_mixed: n*k must be even for a k-regular round, got n=" +
                                  std::to_string(n) + " k=" + std::to_string(k));
    NeighborGraph g;
    g.kind_ = TopologyKind::WellMixed;
    g.n_ = n;
    g.degree_ = k;
    g.seed_ = seed;
    return g;
  }

  TopologyKind kind() const { return kind_; }
  int n_agents() const { return n_; }
  int degree() const { return degree_; }
  int side() const { return side_; }
  bool resamples_each_step() const { return kind_ == TopologyKind::WellMixed; }

  // Adjacency for timestep t. Lattices ignore t.
  Round round(int t) const {
    Round r;
    r.deg_ = degree_;
    if (kind_ != TopologyKind::WellMixed) {
      r.external_ = &table_;
      return r;
    }
    r.owned_ = sample_round(t);
    return r;
  }

  std::vector<int32_t> neighbours(int i, int t) const {
    if (i < 0 || i >= n_)
      throw std::out_of_range("neighbours: agent index " + std::to_string(i));
    Round r = round(t);
    auto nb = r.neighbours(i);
    return {nb.begin(), nb.end()};
  }

 private:
  // Seeded k-regular simple round graph: configuration-model pairing with
  // double-edge-swap repair of self loops and multi-edges.
  std::vector<int32_t> sample_round(int t) const {
    auto eng = engine_for({seed_, stream::kWellMixed, static_cast<uint64_t>(t)});
    const int n = n_, k = degree_;
    std::vector<int32_t> stubs(static_cast<std::size_t>(n) * k);
    for (int v = 0; v < n; ++v)
      for (int j = 0; j < k; ++j) stubs[static_cast<std::size_t>(v) * k + j] = v;

    const std::size_t m = stubs.size() / 2;
    std::vector<std::pair<int32_t, int32_t>> edges(m);
    std::unordered_map<uint64_t, int> cnt;
    auto key = [n](int32_t a, int32_t b) {
      const uint64_t lo = static_cast<uint64_t>(a < b ? a : b);
      const uint64_t hi = static_cast<uint64_t>(a < b ? b : a);
      return hi * static_cast<uint64_t>(n) + lo;
    };
    auto is_bad = [&](std::size_t e) {
      const auto [a, b] = edges[e];
      return a == b || cnt[key(a, b)] > 1;
    };

    bool ok = false;
    std::vector<std::size_t> bad;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      std::shuffle(stubs.begin(), stubs.end(), eng);
      cnt.clear();
      for (std::size_t e = 0; e < m; ++e) {
        edges[e] = {stubs[2 * e], stubs[2 * e + 1]};
        ++cnt[key(edges[e].first, edges[e].second)];
      }
      for (int pass = 0; pass < 400; ++pass) {
        bad.clear();
        for (std::size_t e = 0; e < m; ++e)
          if (is_bad(e)) bad.push_back(e);
        if (bad.empty()) {
          ok = true;
          break;
        }
        for (std::size_t e : bad) {
          const std::size_t f = eng() % m;
          if (f == e) continue;
          auto [a, b] = edges[e];
          auto [x, y] = edges[f];
          // two valid re-pairings of a double-edge swap; pick one at random
          if (eng() & 1) std::swap(x, y);
          --cnt[key(a, b)];
          --cnt[key(x, y)];
          edges[e] = {a, y};
          edges[f] = {x, b};
          ++cnt[key(a, y)];
          ++cnt[key(x, b)];
        }
      }
    }
    if (!ok)
      throw std::runtime_error("well_mixed: failed to sample a simple k-regular round");

    std::vector<int32_t> table(static_cast<std::size_t>(n) * k);
    std::vector<int> fill(n, 0);
    for (const auto& [a, b] : edges) {
      table[static_cast<std::size_t>(a) * k + fill[a]++] = b;
      table[static_cast<std::size_t>(b) * k + fill[b]++] = a;
    }
    // opponents listed in ascending index order
    for (int v = 0; v < n; ++v)
      std::sort(table.begin() + static_cast<std::size_t>(v) * k,
                table.begin() + static_cast<std::size_t>(v) * k + k);
    return table;
  }

  TopologyKind kind_ = TopologyKind::LatticeVonNeumann;
  int n_ = 0;
  int degree_ = 0;
  int side_ = 0;
  uint64_t seed_ = 0;
  std::vector<int32_t> table_;
};

}  // namespace lr2
