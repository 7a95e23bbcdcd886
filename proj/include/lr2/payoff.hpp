#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lr2 {

// Actions of the two-player symmetric game. The one-hot encoding used by
// the payoff bilinear form is (1,0) for C and (0,1) for D.
enum class DilemmaAction : uint8_t { Cooperate = 0, Defect = 1 };

inline double coop_flag(DilemmaAction a) {
  return a == DilemmaAction::Cooperate ? 1.0 : 0.0;
}

inline std::array<double, 2> one_hot_of(DilemmaAction a) {
  return a == DilemmaAction::Cooperate ? std::array<double, 2>{1.0, 0.0}
                                       : std::array<double, 2>{0.0, 1.0};
}

// 2x2 payoff matrix. The standard normalization fixes R=1, P=0; aggregate
// construction allows arbitrary entries for scaled/degenerate cases.
struct PayoffMatrix {
  double R = 1.0;
  double S = 0.0;
  double T = 0.0;
  double P = 0.0;
};

enum class GameClass : uint8_t { PrisonersDilemma, Snowdrift, StagHunt, Other };

inline const char* to_string(GameClass g) {
  switch (g) {
    case GameClass::PrisonersDilemma: return "prisoners_dilemma";
    case GameClass::Snowdrift: return "snowdrift";
    case GameClass::StagHunt: return "stag_hunt";
    default: return "other";
  }
}

// Normalized construction: R=1, P=0, with T in [0,2] and S in [-1,1].
inline PayoffMatrix make_payoff_matrix(double T, double S) {
  if (!(T >= 0.0 && T <= 2.0))
    throw std::invalid_argument("make_payoff_matrix: T=" + std::to_string(T) +
                                " outside [0, 2]");
  if (!(S >= -1.0 && S <= 1.0))
    throw std::invalid_argument("make_payoff_matrix: S=" + std::to_string(S) +
                                " outside [-1, 1]");
  return PayoffMatrix{1.0, S, T, 0.0};
}

// Strict orderings only; ties fall through to Other.
inline GameClass classify_game(const PayoffMatrix& m) {
  if (m.T > m.R && m.R > m.P && m.P > m.S) return GameClass::PrisonersDilemma;
  if (m.T > m.R && m.R > m.S && m.S > m.P) return GameClass::Snowdrift;
  if (m.R > m.T && m.T > m.P && m.P > m.S) return GameClass::StagHunt;
  return GameClass::Other;
}

// a_i' M a_j for one-hot action vectors.
inline double pairwise_payoff(DilemmaAction a_i, DilemmaAction a_j,
                              const PayoffMatrix& m) {
  if (a_i == DilemmaAction::Cooperate)
    return a_j == DilemmaAction::Cooperate ? m.R : m.S;
  return a_j == DilemmaAction::Cooperate ? m.T : m.P;
}

struct EnvReward {
  double total = 0.0;
  std::vector<double> per_neighbour;
};

// Sum of pairwise payoffs against each neighbour, kept in neighbour order.
// The per-neighbour decomposition feeds the evaluation reward downstream.
inline void env_reward(DilemmaAction a_i,
                       std::span<const DilemmaAction> neighbour_actions,
                       const PayoffMatrix& m, EnvReward& out) {
  if (neighbour_actions.empty())
    throw std::invalid_argument("env_reward: empty neighbour list (degree-0 agent)");
  out.per_neighbour.resize(neighbour_actions.size());
  double total = 0.0;
  for (std::size_t s = 0; s < neighbour_actions.size(); ++s) {
    const double p = pairwise_payoff(a_i, neighbour_actions[s], m);
    out.per_neighbour[s] = p;
    total += p;
  }
  out.total = total;
}

inline EnvReward env_reward(DilemmaAction a_i,
                            std::span<const DilemmaAction> neighbour_actions,
                            const PayoffMatrix& m) {
  EnvReward out;
  env_reward(a_i, neighbour_actions, m, out);
  return out;
}

}  // namespace lr2
