#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lr2/net.hpp"
#include "lr2/payoff.hpp"
#include "lr2/topology.hpp"

namespace lr2 {

// Linear entropy-weight schedule over global environment steps.
struct EntropySchedule {
  double start = 0.1;
  double end = 0.0;
  uint64_t horizon = 1;

  double at(uint64_t steps_done) const {
    if (horizon == 0) return end;
    const double f = std::min(1.0, static_cast<double>(steps_done) /
                                       static_cast<double>(horizon));
    return start + (end - start) * f;
  }
};

enum class DilemmaUpdateMode : uint8_t { Ppo, Reinforce };
enum class AssessmentMode : uint8_t { Probability, Hard };

struct Hyperparameters {
  double beta = 0.6;        // environmental vs reputation reward mix
  double mu = 0.2;          // disagreement sensitivity
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double ppo_clip = 0.2;
  double value_clip = 0.2;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int ppo_epochs = 4;
  int minibatch = 5;        // timesteps per minibatch
  double lr = 3e-4;
  double eval_lr = -1.0;    // <0: use lr for the evaluation-policy step
  EntropySchedule entropy;
  double alpha = 0.5;       // reputation smoothing
  AssessmentMode assessment_mode = AssessmentMode::Probability;
  DilemmaUpdateMode dilemma_update = DilemmaUpdateMode::Ppo;

  double eval_rate_base() const { return eval_lr < 0.0 ? lr : eval_lr; }

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(beta)) throw std::invalid_argument("hyper: beta outside [0,1]");
    if (mu < 0.0) throw std::invalid_argument("hyper: mu must be >= 0");
    if (!in01(gamma)) throw std::invalid_argument("hyper: gamma outside [0,1]");
    if (!in01(gae_lambda)) throw std::invalid_argument("hyper: gae_lambda outside [0,1]");
    if (!in01(alpha)) throw std::invalid_argument("hyper: alpha outside [0,1]");
    if (ppo_clip <= 0.0) throw std::invalid_argument("hyper: ppo_clip must be > 0");
    if (ppo_epochs < 1 || minibatch < 1)
      throw std::invalid_argument("hyper: ppo_epochs and minibatch must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("hyper: lr must be > 0");
    if (entropy.start < entropy.end)
      throw std::invalid_argument("hyper: entropy weight must be non-increasing");
  }
};

// Reputation-reshaped reward: beta*r + P*(1-beta)*r. beta=1 reproduces the
// environmental reward bit-exactly.
inline double reshape_reward(double r_env, double P, double beta) {
  return beta * r_env + P * (1.0 - beta) * r_env;
}

// Everything one agent records over an episode. The reshaped reward is
// recomputable from (env_total, reputation) and the run's beta.
struct Trajectory {
  int T = 0, deg = 0, obs_dim = 0, eval_obs_dim = 0;
  std::vector<double> obs;         // T x obs_dim
  std::vector<uint8_t> action;     // T, DilemmaAction values
  std::vector<double> logprob;     // T
  std::vector<double> value;       // T
  double bootstrap_value = 0.0;
  std::vector<double> env_total;   // T
  std::vector<double> payoff;      // T x deg, per-neighbour decomposition
  std::vector<double> eval_obs;    // T x eval_obs_dim
  std::vector<double> given_prob;  // T x deg, my assessment of neighbour slot
  std::vector<uint8_t> given_bit;  // T x deg
  std::vector<double> recv_prob;   // T x deg, slot s = neighbour s's assessment of me
  std::vector<uint8_t> recv_bit;   // T x deg
  std::vector<double> reputation;  // T, P after the step-t update
  std::vector<double> reshaped;    // T

  void resize(int T_, int deg_, int obs_dim_, int eval_obs_dim_) {
    T = T_;
    deg = deg_;
    obs_dim = obs_dim_;
    eval_obs_dim = eval_obs_dim_;
    obs.assign(static_cast<std::size_t>(T) * obs_dim, 0.0);
    action.assign(T, 0);
    logprob.assign(T, 0.0);
    value.assign(T, 0.0);
    bootstrap_value = 0.0;
    env_total.assign(T, 0.0);
    payoff.assign(static_cast<std::size_t>(T) * deg, 0.0);
    eval_obs.assign(static_cast<std::size_t>(T) * eval_obs_dim, 0.0);
    given_prob.assign(static_cast<std::size_t>(T) * deg, 0.0);
    given_bit.assign(static_cast<std::size_t>(T) * deg, 0);
    recv_prob.assign(static_cast<std::size_t>(T) * deg, 0.0);
    recv_bit.assign(static_cast<std::size_t>(T) * deg, 0);
    reputation.assign(T, 0.0);
    reshaped.assign(T, 0.0);
  }

  std::span<const double> obs_row(int t) const {
    return {obs.data() + static_cast<std::size_t>(t) * obs_dim,
            static_cast<std::size_t>(obs_dim)};
  }
  std::span<const double> eval_obs_row(int t) const {
    return {eval_obs.data() + static_cast<std::size_t>(t) * eval_obs_dim,
            static_cast<std::size_t>(eval_obs_dim)};
  }
  std::span<const double> payoff_row(int t) const {
    return {payoff.data() + static_cast<std::size_t>(t) * deg,
            static_cast<std::size_t>(deg)};
  }
};

// ---- observation encodings ----

// dilemma input: own reputation then neighbours' in slot order
inline void dilemma_observation(int i, std::span<const double> reputation,
                                const NeighborGraph::Round& rd,
                                std::span<double> out) {
  auto nb = rd.neighbours(i);
  out[0] = reputation[i];
  for (std::size_t s = 0; s < nb.size(); ++s) out[1 + s] = reputation[nb[s]];
}

// action-history input for the D-D baseline: own last action then neighbours'
inline void dd_observation(int i, std::span<const uint8_t> last_action,
                           const NeighborGraph::Round& rd, std::span<double> out) {
  auto nb = rd.neighbours(i);
  out[0] = coop_flag(static_cast<DilemmaAction>(last_action[i]));
  for (std::size_t s = 0; s < nb.size(); ++s)
    out[1 + s] = coop_flag(static_cast<DilemmaAction>(last_action[nb[s]]));
}

// evaluation input: neighbours' current actions, then the assessments the
// assessor itself received last step, both in slot order
inline void evaluation_observation(int i, std::span<const uint8_t> current_action,
                                   std::span<const double> received_last,
                                   const NeighborGraph::Round& rd,
                                   std::span<double> out) {
  auto nb = rd.neighbours(i);
  const int deg = rd.degree();
  for (int s = 0; s < deg; ++s)
    out[s] = coop_flag(static_cast<DilemmaAction>(current_action[nb[s]]));
  for (int s = 0; s < deg; ++s) out[deg + s] = received_last[s];
}

// ---- returns and advantages ----

inline void compute_returns_and_advantages(std::span<const double> rewards,
                                           std::span<const double> values,
                                           double bootstrap_value, double gamma,
                                           double gae_lambda,
                                           std::vector<double>& advantages,
                                           std::vector<double>& returns) {
  const int T = static_cast<int>(rewards.size());
  if (T == 0) throw std::invalid_argument("compute_returns_and_advantages: empty trajectory");
  if (values.size() != rewards.size())
    throw std::invalid_argument("compute_returns_and_advantages: length mismatch");
  advantages.resize(T);
  returns.resize(T);
  double gae = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double next_v = t == T - 1 ? bootstrap_value : values[t + 1];
    const double delta = rewards[t] + gamma * next_v - values[t];
    gae = delta + gamma * gae_lambda * gae;
    advantages[t] = gae;
  }
  for (int t = 0; t < T; ++t) returns[t] = advantages[t] + values[t];
}

// zero mean, unit variance over the whole batch; eps guards zero variance
inline void normalize_advantages(std::span<double> a, double eps = 1e-8) {
  if (a.empty()) return;
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : a) v = (v - mean) / (sd + eps);
}

// G_t = sum_{l>=t} gamma^(l-t) x_l
inline void discounted_suffix(std::span<const double> x, double gamma,
                              std::span<double> out) {
  double acc = 0.0;
  for (int t = static_cast<int>(x.size()) - 1; t >= 0; --t) {
    acc = x[t] + gamma * acc;
    out[t] = acc;
  }
}

// ---- evaluation reward and disagreement ----

// Per-neighbour payoff centered on the neighbourhood mean. Sums to zero.
inline void evaluation_reward(std::span<const double> per_neighbour,
                              std::vector<double>& out) {
  if (per_neighbour.empty())
    throw std::invalid_argument("evaluation_reward: empty payoff list");
  double mean = 0.0;
  for (double v : per_neighbour) mean += v;
  mean /= static_cast<double>(per_neighbour.size());
  out.resize(per_neighbour.size());
  for (std::size_t s = 0; s < per_neighbour.size(); ++s)
    out[s] = per_neighbour[s] - mean;
}

// One timestep's assessments for the whole population:
// prob[i*deg + slot] = agent i's probability for its slot-th neighbour.
struct StepAssessmentsView {
  std::span<const double> prob;
  int deg = 0;
};

// D^i: squared spread between my assessment of each neighbour j and every
// assessment j receives. The k=i term is identically zero.
inline double disagreement_penalty(int i, const StepAssessmentsView& a,
                                   const NeighborGraph::Round& rd) {
  if (a.deg != rd.degree() || a.prob.empty())
    throw std::invalid_argument("disagreement_penalty: missing assessment entries");
  auto nb = rd.neighbours(i);
  double d = 0.0;
  for (int s = 0; s < a.deg; ++s) {
    const int j = nb[s];
    const double mine = a.prob[static_cast<std::size_t>(i) * a.deg + s];
    auto jn = rd.neighbours(j);
    for (int32_t k : jn) {
      const int slot = rd.slot_of(k, j);
      const double theirs = a.prob[static_cast<std::size_t>(k) * a.deg + slot];
      d += (mine - theirs) * (mine - theirs);
    }
  }
  return d;
}

}  // namespace lr2
