#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "lr2/autodiff.hpp"
#include "lr2/learner.hpp"
#include "lr2/net.hpp"
#include "lr2/rng.hpp"

namespace lr2 {

struct DilemmaUpdateDiag {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
};

struct UpdateScratch {
  Tape tape;
  MlpVarScratch net;
  std::vector<Var> theta_vars, logits;
  std::vector<double> adv, ret, grads;
  std::vector<int> idx;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Clipped-surrogate PPO step over one episode's trajectory: minibatched
// epochs of policy + clipped value loss - entropy bonus, stepped by Adam.
// Advantages are normalized once per episode.
inline DilemmaUpdateDiag ppo_update(const MlpLayout& L, std::span<double> theta,
                                    AdamState& adam, const Trajectory& traj,
                                    const Hyperparameters& h, double entropy_weight,
                                    uint64_t shuffle_seed, UpdateScratch& ws) {
  const int T = traj.T;
  compute_returns_and_advantages(traj.reshaped, traj.value, traj.bootstrap_value,
                                 h.gamma, h.gae_lambda, ws.adv, ws.ret);
  normalize_advantages(ws.adv);
  ws.idx.resize(T);
  std::iota(ws.idx.begin(), ws.idx.end(), 0);

  DilemmaUpdateDiag diag;
  int n_minibatches = 0;
  Var value_var{};
  ws.tape.reset();
  ws.tape.leaves(theta, ws.theta_vars);
  const Tape::Mark base = ws.tape.mark();
  for (int epoch = 0; epoch < h.ppo_epochs; ++epoch) {
    StreamRng eng({shuffle_seed, static_cast<uint64_t>(epoch)});
    std::shuffle(ws.idx.begin(), ws.idx.end(), eng);
    for (int start = 0; start < T; start += h.minibatch) {
      const int n = std::min(h.minibatch, T - start);
      ws.tape.rewind(base);
      for (std::size_t p = 0; p < theta.size(); ++p)
        ws.tape.set_value(ws.theta_vars[p], theta[p]);
      Var pg_sum = ws.tape.constant(0.0);
      Var v_sum = ws.tape.constant(0.0);
      Var h_sum = ws.tape.constant(0.0);
      for (int k = 0; k < n; ++k) {
        const int t = ws.idx[start + k];
        mlp_forward_var(ws.tape, L, ws.theta_vars, traj.obs_row(t), ws.net, ws.logits,
                        &value_var, true);
        Var lp = logprob2_var(ws.logits[0], ws.logits[1], traj.action[t]);
        Var ratio = exp(lp - traj.logprob[t]);
        const double a = ws.adv[t];
        Var pg1 = ratio * -a;
        Var pg2 = vclamp(ratio, 1.0 - h.ppo_clip, 1.0 + h.ppo_clip) * -a;
        pg_sum = pg_sum + vmax(pg1, pg2);
        Var l_unclipped = sqr(value_var - ws.ret[t]);
        if (h.value_clip > 0.0) {
          Var v_clipped = traj.value[t] + vclamp(value_var - traj.value[t],
                                                 -h.value_clip, h.value_clip);
          v_sum = v_sum + vmax(l_unclipped, sqr(v_clipped - ws.ret[t]));
        } else {
          v_sum = v_sum + l_unclipped;
        }
        h_sum = h_sum + entropy2_var(ws.logits[0], ws.logits[1]);
      }
      const double inv_n = 1.0 / n;
      Var loss = pg_sum * inv_n + v_sum * (0.5 * h.value_coef * inv_n) -
                 h_sum * (entropy_weight * inv_n);
      ws.tape.backward(loss);
      ws.grads.resize(theta.size());
      ws.tape.grads(ws.theta_vars, ws.grads);
      const double gn = l2_norm(ws.grads);
      if (h.max_grad_norm > 0.0 && gn > h.max_grad_norm) {
        const double scale = h.max_grad_norm / gn;
        for (double& g : ws.grads) g *= scale;
      }
      adam_step(theta, ws.grads, adam, &L);
      diag.policy_loss += pg_sum.value() * inv_n;
      diag.value_loss += 0.5 * v_sum.value() * inv_n;
      diag.entropy += h_sum.value() * inv_n;
      diag.grad_norm += gn;
      ++n_minibatches;
    }
  }
  diag.policy_loss /= n_minibatches;
  diag.value_loss /= n_minibatches;
  diag.entropy /= n_minibatches;
  diag.grad_norm /= n_minibatches;
  return diag;
}

// Plain one-step policy-gradient ascent on the discounted return. This is
// the update form the evaluation-policy differentiation is written against.
inline DilemmaUpdateDiag reinforce_update(const MlpLayout& L, std::span<double> theta,
                                          const Trajectory& traj, double rate,
                                          double gamma, UpdateScratch& ws) {
  const int T = traj.T;
  ws.ret.resize(T);
  discounted_suffix(traj.reshaped, gamma, ws.ret);
  ws.tape.reset();
  ws.tape.leaves(theta, ws.theta_vars);
  Var objective = ws.tape.constant(0.0);
  double entropy_acc = 0.0;
  for (int t = 0; t < T; ++t) {
    mlp_forward_var(ws.tape, L, ws.theta_vars, traj.obs_row(t), ws.net, ws.logits,
                    nullptr, false);
    Var lp = logprob2_var(ws.logits[0], ws.logits[1], traj.action[t]);
    objective = fma(lp, ws.ret[t], objective);
    entropy_acc += entropy2_var(ws.logits[0], ws.logits[1]).value();
  }
  ws.tape.backward(objective);
  ws.grads.resize(theta.size());
  ws.tape.grads(ws.theta_vars, ws.grads);
  for (std::size_t p = 0; p < theta.size(); ++p) theta[p] += rate * ws.grads[p];
  DilemmaUpdateDiag diag;
  diag.policy_loss = -objective.value();
  diag.entropy = entropy_acc / T;
  diag.grad_norm = l2_norm(ws.grads);
  return diag;
}

// c[t*P+p] = d log pi_theta(a_t|o_t) / d theta_p, the per-step score
// gradients retained for differentiating through a neighbour's update.
inline void reinforce_logprob_grads(const MlpLayout& L, std::span<const double> theta,
                                    const Trajectory& traj, UpdateScratch& ws,
                                    std::vector<double>& c_out) {
  const int P = L.n_params();
  c_out.resize(static_cast<std::size_t>(traj.T) * P);
  ws.tape.reset();
  ws.tape.leaves(theta, ws.theta_vars);
  const Tape::Mark base = ws.tape.mark();
  for (int t = 0; t < traj.T; ++t) {
    ws.tape.rewind(base);
    mlp_forward_var(ws.tape, L, ws.theta_vars, traj.obs_row(t), ws.net, ws.logits,
                    nullptr, false);
    Var lp = logprob2_var(ws.logits[0], ws.logits[1], traj.action[t]);
    ws.tape.backward(lp);
    ws.tape.grads(ws.theta_vars,
                  std::span<double>(c_out.data() + static_cast<std::size_t>(t) * P, P));
  }
}

// ---- evaluation-policy update ----

// One interaction partner's data for the shaping gradient. reward_path is
// false when the partner's reward ignores reputation (beta = 1), which
// removes the whole differentiation path through its update. met_step and
// met_slot list the timesteps the pair interacted and the assessor's slot
// for the partner at each of them; on fixed topologies that is every step
// at a constant slot, on resampling ones a subsequence.
struct NeighbourPathInputs {
  static constexpr uint32_t kNoExt = 0xffffffffu;

  bool reward_path = false;
  double beta = 0.6;
  int degree = 0;                              // |Omega_j|
  double initial_reputation = 0.0;             // P_j at episode start
  std::span<const double> env_reward;          // T
  std::span<const double> other_assessor_sum;  // T, assessments of j by k != i
  std::span<const double> logprob_grads;       // T x P_j (c matrix)
  std::span<const double> theta;               // P_j
  std::span<const double> new_obs;             // T x obs_dim, post-update rollout
  int new_obs_dim = 0;
  std::span<const uint8_t> new_actions;        // T
  std::span<const int32_t> met_step;           // M, sorted
  std::span<const int32_t> met_slot;           // M
  std::span<const double> gprime;              // M, aligned with met_step
  // offset of this partner's pre-scaled, time-reversed score rows inside
  // the external coefficient block; kNoExt falls back to stashing
  // lambda * logprob_grads on the tape
  uint32_t ext_coeff_offset = kNoExt;
};

struct EvalUpdateScratch {
  Tape tape;
  std::vector<Var> eta_vars, q, r_vars, g_vars, theta_hat, probs;
  std::vector<double> coeff;
};

// MLP-backed models for the production nets; the templated core below also
// accepts hand-rolled models for closed-form cross-checks.
struct MlpPolicyModel {
  MlpLayout layout;
  mutable MlpVarScratch ws;
  mutable std::vector<Var> logits;

  int n_params() const { return layout.n_params(); }
  Var logprob_var(Tape& tape, std::span<const Var> params, std::span<const double> obs,
                  int action) const {
    mlp_forward_var(tape, layout, params, obs, ws, logits, nullptr, false);
    return logprob2_var(logits[0], logits[1], action);
  }
};

struct MlpEvalModel {
  MlpLayout layout;
  mutable MlpVarScratch ws;
  mutable std::vector<Var> logits;

  int n_params() const { return layout.n_params(); }
  void assess_var(Tape& tape, std::span<const Var> eta, std::span<const double> obs,
                  std::vector<Var>& out) const {
    mlp_forward_var(tape, layout, eta, obs, ws, logits, nullptr, false);
    out.clear();
    for (Var z : logits) out.push_back(sigmoid(z));
  }
};

// Gradient of the evaluation objective with respect to eta. Two paths:
//   1. through each neighbour's one-step update: my assessment probabilities
//      enter its reputation (running average), hence its reshaped rewards,
//      returns, and updated policy; the new-trajectory log-probs weighted by
//      G' close the chain. The inner score gradients c are data here, so the
//      whole composition stays first-order.
//   2. the direct -mu * sum_t gamma^t D_t term, whose q-dependence is my own
//      assessments on the recorded trajectory.
template <class PolicyModel, class EvalModel>
inline void evaluation_update_gradient(
    const PolicyModel& policy, const EvalModel& eval_model,
    std::span<const double> eta, std::span<const double> eval_obs, int eval_obs_dim,
    int T, int deg, std::span<const NeighbourPathInputs> paths,
    std::span<const double> peer_assess, int peer_stride, double gamma, double mu,
    double lambda_inner, double alpha, EvalUpdateScratch& ws,
    std::vector<double>& grad_out,
    std::span<const double> external_coeffs = {}) {
  Tape& tape = ws.tape;
  tape.reset();
  tape.set_external(external_coeffs);
  tape.leaves(eta, ws.eta_vars);

  // my assessment probabilities on the recorded episode, step by step
  ws.q.clear();
  ws.q.reserve(static_cast<std::size_t>(T) * deg);
  for (int t = 0; t < T; ++t) {
    std::span<const double> obs(eval_obs.data() + static_cast<std::size_t>(t) * eval_obs_dim,
                                static_cast<std::size_t>(eval_obs_dim));
    eval_model.assess_var(tape, ws.eta_vars, obs, ws.probs);
    if (static_cast<int>(ws.probs.size()) != deg)
      throw std::invalid_argument("evaluation_update: assessment head/degree mismatch");
    for (Var v : ws.probs) ws.q.push_back(v);
  }

  Var pseudo = tape.constant(0.0);
  for (const NeighbourPathInputs& path : paths) {
    if (!path.reward_path || path.met_step.empty()) continue;
    const int pn = policy.n_params();
    // partner's reputation chain and reshaped rewards as functions of q;
    // my assessment enters only at the steps we actually met
    ws.r_vars.clear();
    Var rep = tape.constant(path.initial_reputation);
    const double share = (1.0 - alpha) / path.degree;
    std::size_t m = 0;
    for (int t = 0; t < T; ++t) {
      if (m < path.met_step.size() && path.met_step[m] == t) {
        Var contrib = ws.q[static_cast<std::size_t>(t) * deg + path.met_slot[m]] +
                      path.other_assessor_sum[t];
        rep = fma(rep, alpha, contrib * share);
        ++m;
      } else {
        rep = fma(rep, alpha, tape.constant(share * path.other_assessor_sum[t]));
      }
      const double e = path.env_reward[t];
      ws.r_vars.push_back(rep * ((1.0 - path.beta) * e) + path.beta * e);
    }
    // discounted returns in one contiguous run of slots (descending t), so
    // each updated parameter is a single dot against stashed coefficients
    ws.g_vars.resize(T);
    Var g = ws.r_vars[T - 1] + 0.0;
    ws.g_vars[T - 1] = g;
    for (int t = T - 2; t >= 0; --t) {
      g = fma(g, gamma, ws.r_vars[t]);
      ws.g_vars[t] = g;
    }
    const Var g_head = ws.g_vars[T - 1];
    ws.theta_hat.clear();
    ws.theta_hat.reserve(pn);
    if (path.ext_coeff_offset != NeighbourPathInputs::kNoExt) {
      for (int p = 0; p < pn; ++p)
        ws.theta_hat.push_back(tape.dot_external(
            g_head, path.ext_coeff_offset + static_cast<uint32_t>(p) * T, T, Var{},
            path.theta[p]));
    } else {
      ws.coeff.resize(T);
      for (int p = 0; p < pn; ++p) {
        for (int t = 0; t < T; ++t)
          ws.coeff[T - 1 - t] =
              lambda_inner * path.logprob_grads[static_cast<std::size_t>(t) * pn + p];
        ws.theta_hat.push_back(tape.dot_coeffs(g_head, ws.coeff, Var{}, path.theta[p]));
      }
    }
    for (std::size_t k = 0; k < path.met_step.size(); ++k) {
      const int t = path.met_step[k];
      std::span<const double> obs(
          path.new_obs.data() + static_cast<std::size_t>(t) * path.new_obs_dim,
          static_cast<std::size_t>(path.new_obs_dim));
      Var lp = policy.logprob_var(tape, ws.theta_hat, obs, path.new_actions[t]);
      pseudo = fma(lp, path.gprime[k], pseudo);
    }
  }

  if (mu > 0.0 && peer_stride > 0) {
    double disc = 1.0;
    for (int t = 0; t < T; ++t) {
      for (int s = 0; s < deg; ++s) {
        Var mine = ws.q[static_cast<std::size_t>(t) * deg + s];
        const std::size_t base = (static_cast<std::size_t>(t) * deg + s) * peer_stride;
        for (int r = 0; r < peer_stride; ++r)
          pseudo = fma(sqr(mine - peer_assess[base + r]), -mu * disc, pseudo);
      }
      disc *= gamma;
    }
  }

  tape.backward(pseudo);
  grad_out.resize(eta.size());
  tape.grads(ws.eta_vars, grad_out);
}

}  // namespace lr2
