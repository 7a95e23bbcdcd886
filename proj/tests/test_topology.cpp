#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "lr2/topology.hpp"

using namespace lr2;

namespace {

void check_symmetry_and_regularity(const NeighborGraph& g, int t) {
  auto rd = g.round(t);
  for (int i = 0; i < g.n_agents(); ++i) {
    auto nb = rd.neighbours(i);
    REQUIRE(static_cast<int>(nb.size()) == g.degree());
    std::set<int32_t> uniq(nb.begin(), nb.end());
    CHECK(uniq.size() == nb.size());
    CHECK(uniq.count(i) == 0);
    for (int32_t j : nb) CHECK(rd.slot_of(j, i) >= 0);
  }
}

}  // namespace

TEST_CASE("von Neumann lattice basics") {
  auto g = NeighborGraph::lattice(20, TopologyKind::LatticeVonNeumann);
  CHECK(g.n_agents() == 400);
  CHECK(g.degree() == 4);
  check_symmetry_and_regularity(g, 0);
}

TEST_CASE("3x3 torus wrap in compass order") {
  auto g = NeighborGraph::lattice(3, TopologyKind::LatticeVonNeumann);
  // agent (0,0): N=(2,0)=6, E=(0,1)=1, S=(1,0)=3, W=(0,2)=2
  auto nb = g.neighbours(0, 0);
  CHECK(nb == std::vector<int32_t>{6, 1, 3, 2});
  // centre agent (1,1)=4: N=(0,1)=1, E=(1,2)=5, S=(2,1)=7, W=(1,0)=3
  auto centre = g.neighbours(4, 0);
  CHECK(centre == std::vector<int32_t>{1, 5, 7, 3});
}

TEST_CASE("lattice construction errors") {
  CHECK_THROWS_AS(NeighborGraph::lattice(2, TopologyKind::LatticeVonNeumann),
                  std::invalid_argument);
  CHECK_THROWS_AS(NeighborGraph::lattice(5, TopologyKind::Honeycomb),
                  std::invalid_argument);
}

TEST_CASE("Moore lattice has eight ordered neighbours") {
  auto g = NeighborGraph::lattice(5, TopologyKind::LatticeMoore);
  CHECK(g.degree() == 8);
  for (int i = 0; i < g.n_agents(); ++i)
    CHECK(g.neighbours(i, 0).size() == 8);
  check_symmetry_and_regularity(g, 0);
  // agent (2,2)=12 on L=5: N,E,S,W,NE,SE,SW,NW
  auto nb = g.neighbours(12, 0);
  CHECK(nb == std::vector<int32_t>{7, 13, 17, 11, 8, 18, 16, 6});
}

TEST_CASE("honeycomb brick-wall is 3-regular and symmetric") {
  auto g = NeighborGraph::lattice(6, TopologyKind::Honeycomb);
  CHECK(g.degree() == 3);
  CHECK(g.n_agents() == 36);
  check_symmetry_and_regularity(g, 0);
}

TEST_CASE("well-mixed pairing rounds") {
  auto g = NeighborGraph::well_mixed(400, 1, 7);
  CHECK(g.degree() == 1);
  CHECK(g.resamples_each_step());
  for (int t = 0; t < 3; ++t) {
    auto rd = g.round(t);
    std::set<std::pair<int, int>> pairs;
    for (int i = 0; i < 400; ++i) {
      auto nb = rd.neighbours(i);
      REQUIRE(nb.size() == 1);
      const int j = nb[0];
      CHECK(rd.neighbours(j)[0] == i);
      pairs.insert({std::min(i, j), std::max(i, j)});
    }
    CHECK(pairs.size() == 200);
  }
}

TEST_CASE("well-mixed k=3 on 4 agents is the complete graph") {
  auto g = NeighborGraph::well_mixed(4, 3, 123);
  auto rd = g.round(0);
  for (int i = 0; i < 4; ++i) {
    std::set<int32_t> nb;
    for (int32_t j : rd.neighbours(i)) nb.insert(j);
    CHECK(nb.size() == 3);
    CHECK(nb.count(i) == 0);
  }
}

TEST_CASE("well-mixed infeasible configurations error") {
  CHECK_THROWS_AS(NeighborGraph::well_mixed(5, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(NeighborGraph::well_mixed(4, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(NeighborGraph::well_mixed(4, 0, 0), std::invalid_argument);
}

TEST_CASE("well-mixed rounds are symmetric, regular, deterministic") {
  auto g = NeighborGraph::well_mixed(30, 4, 99);
  for (int t = 0; t < 10; ++t) check_symmetry_and_regularity(g, t);

  auto g2 = NeighborGraph::well_mixed(30, 4, 99);
  for (int t = 0; t < 10; ++t) {
    for (int i = 0; i < 30; ++i) CHECK(g.neighbours(i, t) == g2.neighbours(i, t));
  }
  // different timesteps resample
  bool any_diff = false;
  for (int i = 0; i < 30 && !any_diff; ++i)
    any_diff = g.neighbours(i, 0) != g.neighbours(i, 1);
  CHECK(any_diff);
  // ascending opponent order
  for (int t = 0; t < 5; ++t) {
    for (int i = 0; i < 30; ++i) {
      auto nb = g.neighbours(i, t);
      CHECK(std::is_sorted(nb.begin(), nb.end()));
    }
  }
}

TEST_CASE("well-mixed k=8 rounds stay simple") {
  auto g = NeighborGraph::well_mixed(100, 8, 5);
  for (int t = 0; t < 5; ++t) check_symmetry_and_regularity(g, t);
}

TEST_CASE("neighbours validates the agent index") {
  auto g = NeighborGraph::lattice(3, TopologyKind::LatticeVonNeumann);
  CHECK_THROWS_AS(g.neighbours(9, 0), std::out_of_range);
}
