#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lr2/net.hpp"
#include "lr2/payoff.hpp"
#include "lr2/rng.hpp"

namespace lr2 {

enum class ReputationBit : uint8_t { Bad = 0, Good = 1 };

// Continuous reputation bridged to the binary norms; ties at 0.5 are Good so
// fresh agents near the midpoint are not condemned by default.
inline ReputationBit binarize(double P) {
  return P >= 0.5 ? ReputationBit::Good : ReputationBit::Bad;
}

enum class NormTag : uint8_t { SternJudging, SimpleStanding, Shunning, ImageScore };

inline const char* to_string(NormTag t) {
  switch (t) {
    case NormTag::SternJudging: return "sj";
    case NormTag::SimpleStanding: return "ss";
    case NormTag::Shunning: return "sh";
    default: return "is";
  }
}

// Second/first-order norm as a 4-bit table d = (d_GC, d_GD, d_BC, d_BD):
// the judgment for (recipient standing, donor action).
struct SocialNorm {
  NormTag tag = NormTag::ImageScore;
  std::array<uint8_t, 4> table{1, 0, 1, 0};

  static SocialNorm make(NormTag t) {
    switch (t) {
      case NormTag::SternJudging: return {t, {1, 0, 0, 1}};
      case NormTag::SimpleStanding: return {t, {1, 0, 1, 1}};
      case NormTag::Shunning: return {t, {1, 0, 0, 0}};
      default: return {t, {1, 0, 1, 0}};
    }
  }
};

inline int assess_norm(const SocialNorm& norm, DilemmaAction donor_action,
                       ReputationBit recipient) {
  const int idx = (recipient == ReputationBit::Good ? 0 : 2) +
                  (donor_action == DilemmaAction::Defect ? 1 : 0);
  return norm.table[idx];
}

// Running-average reputation update: P_t = a*P_{t-1} + (1-a)/n * sum(p).
// A convex combination of values in [0,1] stays in [0,1] without clamping.
inline double update_reputation(double prev, std::span<const double> assessments,
                                double alpha) {
  if (assessments.empty())
    throw std::invalid_argument("update_reputation: empty assessment list");
  double mean = 0.0;
  for (double a : assessments) mean += a;
  mean /= static_cast<double>(assessments.size());
  return alpha * prev + (1.0 - alpha) * mean;
}

struct Assessment {
  std::vector<double> prob;
  std::vector<uint8_t> bit;
};

// Learned assessment: per-neighbour Bernoulli probabilities from the
// evaluation network's sigmoid head plus bits sampled from the run's stream.
template <class Rng>
inline void assess_learned(const MlpLayout& L, std::span<const double> eta,
                           std::span<const double> obs, Rng& eng,
                           MlpScratch& ws, NetworkOutput& net_out, Assessment& out) {
  mlp_forward(L, eta, obs, ws, net_out);
  const std::size_t n = net_out.logits.size();
  out.prob.resize(n);
  out.bit.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    out.prob[s] = sigmoid(net_out.logits[s]);
    out.bit[s] = uniform01(eng) < out.prob[s] ? 1 : 0;
  }
}

template <class Rng>
inline Assessment assess_learned(const MlpLayout& L, std::span<const double> eta,
                                 std::span<const double> obs, Rng& eng) {
  MlpScratch ws;
  NetworkOutput net;
  Assessment out;
  assess_learned(L, eta, obs, eng, ws, net, out);
  return out;
}

}  // namespace lr2
