#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "lr2/reputation.hpp"
#include "lr2/rng.hpp"

using namespace lr2;

namespace {

// brute-force restatement of each norm's prose, evaluated independently
int norm_prose(NormTag tag, DilemmaAction donor, ReputationBit recipient) {
  const bool coop = donor == DilemmaAction::Cooperate;
  const bool good = recipient == ReputationBit::Good;
  switch (tag) {
    case NormTag::SternJudging:
      // good for helping a good recipient or refusing a bad one
      return (coop && good) || (!coop && !good) ? 1 : 0;
    case NormTag::SimpleStanding:
      // any cooperation is good; defection is bad only against good recipients
      return coop || !good ? 1 : 0;
    case NormTag::Shunning:
      // any defection is bad; cooperation counts only toward good recipients
      return coop && good ? 1 : 0;
    case NormTag::ImageScore:
      // first-order: the action alone decides
      return coop ? 1 : 0;
  }
  return 0;
}

}  // namespace

TEST_CASE("norm truth tables match their prose over all four inputs") {
  for (auto tag : {NormTag::SternJudging, NormTag::SimpleStanding, NormTag::Shunning,
                   NormTag::ImageScore}) {
    const auto norm = SocialNorm::make(tag);
    for (auto donor : {DilemmaAction::Cooperate, DilemmaAction::Defect}) {
      for (auto rec : {ReputationBit::Good, ReputationBit::Bad}) {
        INFO("norm=" << to_string(tag) << " donor_coop="
                     << (donor == DilemmaAction::Cooperate) << " recipient_good="
                     << (rec == ReputationBit::Good));
        CHECK(assess_norm(norm, donor, rec) == norm_prose(tag, donor, rec));
      }
    }
  }
}

TEST_CASE("norm spot values") {
  CHECK(assess_norm(SocialNorm::make(NormTag::SternJudging), DilemmaAction::Defect,
                    ReputationBit::Bad) == 1);
  CHECK(assess_norm(SocialNorm::make(NormTag::ImageScore), DilemmaAction::Defect,
                    ReputationBit::Good) == 0);
  CHECK(assess_norm(SocialNorm::make(NormTag::SimpleStanding), DilemmaAction::Cooperate,
                    ReputationBit::Bad) == 1);
}

TEST_CASE("binarize with the documented tie-break") {
  CHECK(binarize(0.75) == ReputationBit::Good);
  CHECK(binarize(0.5) == ReputationBit::Good);
  CHECK(binarize(0.1) == ReputationBit::Bad);
}

TEST_CASE("reputation update arithmetic and fixed points") {
  std::vector<double> ones{1.0, 1.0, 1.0};
  CHECK(update_reputation(1.0, ones, 0.3) == 1.0);
  std::vector<double> zeros{0.0, 0.0, 0.0, 0.0};
  CHECK(update_reputation(0.0, zeros, 0.9) == 0.0);
  std::vector<double> mixed{0.2, 0.6};  // mean 0.4
  CHECK(update_reputation(0.8, mixed, 0.5) == Catch::Approx(0.6));
  CHECK_THROWS_AS(update_reputation(0.5, std::vector<double>{}, 0.5),
                  std::invalid_argument);
}

TEST_CASE("reputation update stays in the convex hull") {
  auto eng = engine_for({21, 0});
  for (int i = 0; i < 100000; ++i) {
    const double prev = uniform01(eng);
    const double alpha = uniform01(eng);
    const int n = 1 + static_cast<int>(eng() % 8);
    std::vector<double> a(n);
    double mean = 0.0;
    for (double& v : a) {
      v = uniform01(eng);
      mean += v;
    }
    mean /= n;
    const double next = update_reputation(prev, a, alpha);
    CHECK(next >= 0.0);
    CHECK(next <= 1.0);
    CHECK(next >= std::min(prev, mean) - 1e-12);
    CHECK(next <= std::max(prev, mean) + 1e-12);
  }
}

TEST_CASE("image score with full cooperation converges geometrically to 1") {
  // every assessor grants 1, so 1 - P_t = alpha * (1 - P_{t-1})
  const double alpha = 0.5;
  double p = 0.2;
  std::vector<double> ones{1.0, 1.0, 1.0, 1.0};
  double prev_gap = 1.0 - p;
  for (int t = 0; t < 40; ++t) {
    const double next = update_reputation(p, ones, alpha);
    CHECK(next >= p);
    CHECK(1.0 - next == Catch::Approx(alpha * prev_gap).epsilon(1e-6).margin(1e-15));
    prev_gap = 1.0 - next;
    p = next;
  }
  CHECK(p == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("learned assessment from a zero head gives 0.5 everywhere") {
  MlpLayout L{.in_dim = 8, .hidden = 32, .policy_dim = 4};
  std::vector<double> eta(L.n_params(), 0.0);
  auto eng = engine_for({21, 1});
  std::vector<double> obs{1, 0, 1, 1, 0.5, 0.25, 0.75, 0.5};
  auto a = assess_learned(L, eta, obs, eng);
  REQUIRE(a.prob.size() == 4);
  for (double p : a.prob) CHECK(p == 0.5);
}

TEST_CASE("learned assessment is deterministic for a fixed stream") {
  MlpLayout L{.in_dim = 8, .hidden = 32, .policy_dim = 4};
  auto init_eng = engine_for({21, 2});
  auto eta = init_mlp_params(L, init_eng);
  std::vector<double> obs{1, 1, 0, 0, 0.9, 0.1, 0.4, 0.6};
  auto e1 = engine_for({21, 3});
  auto e2 = engine_for({21, 3});
  auto a1 = assess_learned(L, eta, obs, e1);
  auto a2 = assess_learned(L, eta, obs, e2);
  CHECK(a1.prob == a2.prob);
  CHECK(a1.bit == a2.bit);
}

TEST_CASE("learned assessment probabilities stay strictly inside (0,1)") {
  MlpLayout L{.in_dim = 8, .hidden = 32, .policy_dim = 4};
  auto eng = engine_for({21, 4});
  for (int trial = 0; trial < 10000 / 4; ++trial) {
    auto eta = init_mlp_params(L, eng);
    // random scale-up keeps logits finite but large
    for (double& v : eta) v *= 1.0 + 10.0 * uniform01(eng);
    std::vector<double> obs(8);
    for (double& v : obs) v = uniform01(eng);
    auto a = assess_learned(L, eta, obs, eng);
    for (double p : a.prob) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}
