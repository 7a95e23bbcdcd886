#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lr2/learner.hpp"
#include "lr2/metrics.hpp"
#include "lr2/net.hpp"
#include "lr2/parallel.hpp"
#include "lr2/payoff.hpp"
#include "lr2/reputation.hpp"
#include "lr2/rng.hpp"
#include "lr2/topology.hpp"
#include "lr2/updates.hpp"

namespace lr2 {

enum class Method : uint8_t { Lr2, Dd, Ippo, NormSj, NormSs, NormSh, NormIs };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Lr2: return "lr2";
    case Method::Dd: return "dd";
    case Method::Ippo: return "ippo";
    case Method::NormSj: return "norm:sj";
    case Method::NormSs: return "norm:ss";
    case Method::NormSh: return "norm:sh";
    default: return "norm:is";
  }
}

inline bool method_is_norm(Method m) {
  return m == Method::NormSj || m == Method::NormSs || m == Method::NormSh ||
         m == Method::NormIs;
}
inline bool method_uses_reputation(Method m) { return m != Method::Dd; }
inline bool method_trains_eval(Method m) {
  return m == Method::Lr2 || m == Method::Ippo;
}
inline NormTag method_norm_tag(Method m) {
  switch (m) {
    case Method::NormSj: return NormTag::SternJudging;
    case Method::NormSs: return NormTag::SimpleStanding;
    case Method::NormSh: return NormTag::Shunning;
    default: return NormTag::ImageScore;
  }
}

enum class Variant : uint8_t { LR2, DD, IPPO, Norm, Adversarial };

struct AgentState {
  Variant variant = Variant::LR2;
  std::vector<double> theta, eta;
  AdamState adam;
  double reputation = 0.5;
  uint8_t last_action = 0;
  std::vector<double> received_last;  // per neighbour slot
};

// reward mixing weight the agent actually uses; adversarial and IPPO agents
// ignore the reputation share
inline double effective_beta(Variant v, double beta) {
  return v == Variant::IPPO || v == Variant::Adversarial ? 1.0 : beta;
}

// One training cell: a single population, game, method, seed.
struct RunSpec {
  double game_T = 1.3, game_S = -0.3;
  TopologyKind topology = TopologyKind::LatticeVonNeumann;
  int side = 10;    // lattice side
  int n = 100;      // declared population size
  int k = 1;        // well-mixed opponents per round
  Method method = Method::Lr2;
  Hyperparameters hyper;
  double adversarial_fraction = 0.0;
  int arenas = 1;
  int episodes = 2000;
  int timesteps = 20;
  uint64_t seed = 1;
  int workers = 1;
  int log_every = 1;
  std::string run_id = "run";

  PayoffMatrix payoff() const { return make_payoff_matrix(game_T, game_S); }

  NeighborGraph build_graph() const {
    if (topology == TopologyKind::WellMixed)
      return NeighborGraph::well_mixed(n, k, substream({seed, stream::kWellMixed}));
    return NeighborGraph::lattice(side, topology);
  }

  void validate(const NeighborGraph& g) const {
    hyper.validate();
    if (n != g.n_agents())
      throw std::invalid_argument("run: population " + std::to_string(n) +
                                  " does not match topology size " +
                                  std::to_string(g.n_agents()));
    if (arenas < 1 || episodes < 1 || timesteps < 1)
      throw std::invalid_argument("run: arenas, episodes, timesteps must be >= 1");
    if (adversarial_fraction < 0.0 || adversarial_fraction > 1.0)
      throw std::invalid_argument("run: adversarial_fraction outside [0,1]");
    if (adversarial_fraction > 0.0 && method != Method::Lr2)
      throw std::invalid_argument("run: adversarial agents require method lr2");
  }
};

struct Population {
  MlpLayout dilemma_layout, eval_layout;
  std::vector<AgentState> agents;
};

// fraction of cooperators among the step's actions
inline double measure_cooperation(std::span<const uint8_t> actions) {
  if (actions.empty()) return 0.0;
  int c = 0;
  for (uint8_t a : actions)
    if (static_cast<DilemmaAction>(a) == DilemmaAction::Cooperate) ++c;
  return static_cast<double>(c) / static_cast<double>(actions.size());
}

// Conditional means at one step over the trajectory archive. Empty
// conditions yield NaN markers, never zero.
struct ConditionalStats {
  double reward_coop = std::numeric_limits<double>::quiet_NaN();
  double reward_defect = std::numeric_limits<double>::quiet_NaN();
  double reputation_coop = std::numeric_limits<double>::quiet_NaN();
  double reputation_defect = std::numeric_limits<double>::quiet_NaN();
};

inline ConditionalStats strategy_conditioned_stats(std::span<const Trajectory> archive,
                                                   int t, bool has_reputation) {
  double rc = 0, rd = 0, pc = 0, pd = 0;
  int nc = 0, nd = 0;
  for (const auto& traj : archive) {
    if (static_cast<DilemmaAction>(traj.action[t]) == DilemmaAction::Cooperate) {
      rc += traj.reshaped[t];
      pc += traj.reputation[t];
      ++nc;
    } else {
      rd += traj.reshaped[t];
      pd += traj.reputation[t];
      ++nd;
    }
  }
  ConditionalStats out;
  if (nc > 0) {
    out.reward_coop = rc / nc;
    if (has_reputation) out.reputation_coop = pc / nc;
  }
  if (nd > 0) {
    out.reward_defect = rd / nd;
    if (has_reputation) out.reputation_defect = pd / nd;
  }
  return out;
}

inline Population init_population(const RunSpec& spec, const NeighborGraph& graph,
                                  int arena) {
  const int n = graph.n_agents();
  const int deg = graph.degree();
  Population pop;
  pop.dilemma_layout = MlpLayout{.in_dim = 1 + deg, .hidden = 32, .policy_dim = 2};
  pop.eval_layout = MlpLayout{.in_dim = 2 * deg, .hidden = 32, .policy_dim = deg};
  pop.agents.resize(n);

  const uint64_t root = spec.seed;
  const int n_minibatches = (spec.timesteps + spec.hyper.minibatch - 1) / spec.hyper.minibatch;
  const uint64_t adam_horizon = static_cast<uint64_t>(spec.episodes) *
                                spec.hyper.ppo_epochs * n_minibatches;

  std::vector<int> adversarial(n, 0);
  if (spec.adversarial_fraction > 0.0) {
    const int count = static_cast<int>(std::llround(spec.adversarial_fraction * n));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    StreamRng eng({root, static_cast<uint64_t>(arena), stream::kAdversary});
    std::shuffle(order.begin(), order.end(), eng);
    for (int c = 0; c < count; ++c) adversarial[order[c]] = 1;
  }

  for (int i = 0; i < n; ++i) {
    AgentState& a = pop.agents[i];
    switch (spec.method) {
      case Method::Lr2:
        a.variant = adversarial[i] ? Variant::Adversarial : Variant::LR2;
        break;
      case Method::Dd: a.variant = Variant::DD; break;
      case Method::Ippo: a.variant = Variant::IPPO; break;
      default: a.variant = Variant::Norm; break;
    }
    auto theta_eng = engine_for({root, static_cast<uint64_t>(arena), stream::kNetInit,
                                 static_cast<uint64_t>(i), 0});
    a.theta = init_mlp_params(pop.dilemma_layout, theta_eng);
    a.adam.lr = spec.hyper.lr;
    a.adam.horizon = adam_horizon;
    a.adam.init(a.theta.size());
    if (method_trains_eval(spec.method)) {
      auto eta_eng = engine_for({root, static_cast<uint64_t>(arena), stream::kNetInit,
                                 static_cast<uint64_t>(i), 1});
      a.eta = init_mlp_params(pop.eval_layout, eta_eng);
    }
    a.received_last.assign(deg, 0.5);
    // episode-0 draws so a freshly built population is already valid
    StreamRng rep_eng({root, static_cast<uint64_t>(arena), stream::kInitReputation, 0, 0,
                       static_cast<uint64_t>(i)});
    a.reputation = uniform01(rep_eng);
    StreamRng act_eng({root, static_cast<uint64_t>(arena), stream::kInitAction, 0, 0,
                       static_cast<uint64_t>(i)});
    a.last_action = static_cast<uint8_t>(uniform01(act_eng) < 0.5
                                             ? DilemmaAction::Cooperate
                                             : DilemmaAction::Defect);
    std::fill(a.received_last.begin(), a.received_last.end(), a.reputation);
  }
  return pop;
}

// initial reputation draw of the recorded episode; the evaluation update
// replays this value as the head of each neighbour's reputation chain
inline double episode_initial_reputation(const RunSpec& spec, int arena, int episode,
                                         int agent) {
  StreamRng eng({spec.seed, static_cast<uint64_t>(arena), stream::kInitReputation, 0,
                 static_cast<uint64_t>(episode), static_cast<uint64_t>(agent)});
  return uniform01(eng);
}

struct EpisodeView {
  int arena = 0;
  int episode = 0;
  std::span<const uint8_t> final_actions;
  std::span<const double> reputations;
  const Population* population = nullptr;
};
using EpisodeHook = std::function<void(const EpisodeView&)>;

struct TrainResult {
  std::vector<Population> populations;
  std::vector<std::vector<double>> cooperation;       // [arena][episode]
  std::vector<std::vector<Trajectory>> last_episode;  // [arena][agent]
};

namespace detail {

// per-partner staging for one agent's evaluation update
struct PartnerBuild {
  int agent = -1;
  std::vector<int32_t> met_step, met_slot;
  std::vector<double> eval_term;  // per met step: centered payoff - mu*D
  std::vector<double> gprime;     // discounted over the met subsequence
  std::vector<double> other_sum;  // all T steps
};

struct WorkerScratch {
  MlpScratch net;
  NetworkOutput out;
  Assessment assess;
  EnvReward env;
  UpdateScratch update;
  EvalUpdateScratch eval_update;
  std::vector<DilemmaAction> nbr_actions;
  std::vector<double> obs;
  std::vector<double> recv_row;
  // evaluation-update staging
  std::vector<PartnerBuild> partners;
  std::vector<int> partner_index;   // agent id -> partner slot, -1 if unseen
  std::vector<double> r_eval;       // deg
  std::vector<double> peer_assess;  // T x deg x (deg-1)
  std::vector<double> eta_grad;
  std::vector<NeighbourPathInputs> paths;
  MlpPolicyModel policy_model;
  MlpEvalModel eval_model;
};

struct ArenaBuffers {
  std::vector<Trajectory> traj, traj_hat;
  std::vector<double> reputation;
  std::vector<uint8_t> actions, last_actions;
  std::vector<double> assess_prob;   // N x deg, current step
  std::vector<uint8_t> assess_bit;   // N x deg
  std::vector<double> recv_last;     // N x deg
  std::vector<double> disagreement;  // N x T (recorded episode)
  std::vector<double> theta_old;     // N x P
  std::vector<std::vector<double>> cmat;  // per agent, T x P
  std::vector<double> cmat_rev;      // N x P x T, time-reversed, lambda-scaled
  std::vector<DilemmaUpdateDiag> diag;
  std::vector<double> eval_grad_norm;
  std::vector<NeighborGraph::Round> rounds;
  std::vector<WorkerScratch> scratch;
};

// One full rollout (phase 1 acting + phase 2 assessment and reputation
// update) writing per-agent trajectories. `salt` separates the recorded
// episode from the post-update cross-validation rollout.
inline void rollout(const RunSpec& spec, const NeighborGraph& graph,
                    const PayoffMatrix& payoff, Population& pop, int arena,
                    int episode, uint64_t salt, std::vector<Trajectory>& traj,
                    ArenaBuffers& buf, WorkerPool& pool) {
  const int n = graph.n_agents();
  const int deg = graph.degree();
  const int T = spec.timesteps;
  const bool uses_rep = method_uses_reputation(spec.method);
  const bool norm_mode = method_is_norm(spec.method);
  const SocialNorm norm = SocialNorm::make(method_norm_tag(spec.method));
  const int obs_dim = 1 + deg;
  const int eval_obs_dim = 2 * deg;
  const uint64_t root = spec.seed;
  const uint64_t ar = static_cast<uint64_t>(arena);
  const uint64_t ep = static_cast<uint64_t>(episode);
  const double alpha = spec.hyper.alpha;
  const bool hard = spec.hyper.assessment_mode == AssessmentMode::Hard;

  // fresh episode state: random reputations, forced first actions; the D-D
  // baseline owns no reputation state at all
  pool.for_each(n, [&](int i, int) {
    if (uses_rep) {
      StreamRng rep_eng({root, ar, stream::kInitReputation, salt, ep, static_cast<uint64_t>(i)});
      buf.reputation[i] = uniform01(rep_eng);
      for (int s = 0; s < deg; ++s)
        buf.recv_last[static_cast<std::size_t>(i) * deg + s] = buf.reputation[i];
    }
    StreamRng act_eng({root, ar, stream::kInitAction, salt, ep, static_cast<uint64_t>(i)});
    buf.last_actions[i] = static_cast<uint8_t>(uniform01(act_eng) < 0.5
                                                   ? DilemmaAction::Cooperate
                                                   : DilemmaAction::Defect);
    traj[i].resize(T, deg, obs_dim, eval_obs_dim);
  });

  for (int t = 0; t < T; ++t) {
    const auto& rd = buf.rounds[t];
    // phase 1: act
    pool.for_each(n, [&](int i, int w) {
      WorkerScratch& ws = buf.scratch[w];
      AgentState& ag = pop.agents[i];
      ws.obs.resize(obs_dim);
      if (ag.variant == Variant::DD)
        dd_observation(i, buf.last_actions, rd, ws.obs);
      else
        dilemma_observation(i, buf.reputation, rd, ws.obs);
      mlp_forward(pop.dilemma_layout, ag.theta, ws.obs, ws.net, ws.out);
      auto [pc, pd] = softmax2(ws.out.logits[0], ws.out.logits[1]);
      int a;
      if (t == 0) {
        a = static_cast<int>(buf.last_actions[i]);  // forced initial strategy
      } else {
        StreamRng eng({root, ar, stream::kAct, salt, ep, static_cast<uint64_t>(t),
                       static_cast<uint64_t>(i)});
        a = uniform01(eng) < pc ? 0 : 1;
      }
      buf.actions[i] = static_cast<uint8_t>(a);
      Trajectory& tr = traj[i];
      std::copy(ws.obs.begin(), ws.obs.end(),
                tr.obs.begin() + static_cast<std::size_t>(t) * obs_dim);
      tr.action[t] = static_cast<uint8_t>(a);
      tr.logprob[t] = a == 0 ? std::log(pc) : std::log(pd);
      tr.value[t] = ws.out.value;
    });

    // environmental rewards from the joint actions
    pool.for_each(n, [&](int i, int w) {
      WorkerScratch& ws = buf.scratch[w];
      auto nb = rd.neighbours(i);
      ws.nbr_actions.resize(deg);
      for (int s = 0; s < deg; ++s)
        ws.nbr_actions[s] = static_cast<DilemmaAction>(buf.actions[nb[s]]);
      env_reward(static_cast<DilemmaAction>(buf.actions[i]), ws.nbr_actions, payoff,
                 ws.env);
      Trajectory& tr = traj[i];
      tr.env_total[t] = ws.env.total;
      std::copy(ws.env.per_neighbour.begin(), ws.env.per_neighbour.end(),
                tr.payoff.begin() + static_cast<std::size_t>(t) * deg);
    });

    if (uses_rep) {
      // phase 2: assessments of every neighbour
      pool.for_each(n, [&](int i, int w) {
        WorkerScratch& ws = buf.scratch[w];
        AgentState& ag = pop.agents[i];
        Trajectory& tr = traj[i];
        auto nb = rd.neighbours(i);
        double* prob_row = buf.assess_prob.data() + static_cast<std::size_t>(i) * deg;
        uint8_t* bit_row = buf.assess_bit.data() + static_cast<std::size_t>(i) * deg;
        if (norm_mode) {
          const ReputationBit own = binarize(buf.reputation[i]);
          for (int s = 0; s < deg; ++s) {
            const int bit = assess_norm(
                norm, static_cast<DilemmaAction>(buf.actions[nb[s]]), own);
            prob_row[s] = static_cast<double>(bit);
            bit_row[s] = static_cast<uint8_t>(bit);
          }
          std::fill_n(tr.eval_obs.begin() + static_cast<std::size_t>(t) * eval_obs_dim,
                      eval_obs_dim, 0.0);
        } else {
          std::span<double> eobs(tr.eval_obs.data() + static_cast<std::size_t>(t) * eval_obs_dim,
                                 eval_obs_dim);
          evaluation_observation(
              i, buf.actions,
              std::span<const double>(buf.recv_last.data() + static_cast<std::size_t>(i) * deg,
                                      deg),
              rd, eobs);
          StreamRng eng({root, ar, stream::kAssess, salt, ep, static_cast<uint64_t>(t),
                         static_cast<uint64_t>(i)});
          assess_learned(pop.eval_layout, ag.eta, eobs, eng, ws.net, ws.out, ws.assess);
          std::copy(ws.assess.prob.begin(), ws.assess.prob.end(), prob_row);
          std::copy(ws.assess.bit.begin(), ws.assess.bit.end(), bit_row);
        }
        std::copy_n(prob_row, deg,
                    tr.given_prob.begin() + static_cast<std::size_t>(t) * deg);
        std::copy_n(bit_row, deg,
                    tr.given_bit.begin() + static_cast<std::size_t>(t) * deg);
      });

      // reputation update barrier: gather what each agent received
      pool.for_each(n, [&](int i, int w) {
        WorkerScratch& ws = buf.scratch[w];
        Trajectory& tr = traj[i];
        auto nb = rd.neighbours(i);
        ws.recv_row.resize(deg);
        for (int s = 0; s < deg; ++s) {
          const int j = nb[s];
          const int sj = rd.slot_of(j, i);
          const double p = buf.assess_prob[static_cast<std::size_t>(j) * deg + sj];
          const uint8_t b = buf.assess_bit[static_cast<std::size_t>(j) * deg + sj];
          tr.recv_prob[static_cast<std::size_t>(t) * deg + s] = p;
          tr.recv_bit[static_cast<std::size_t>(t) * deg + s] = b;
          ws.recv_row[s] = hard ? static_cast<double>(b) : p;
        }
        tr.reputation[t] = update_reputation(buf.reputation[i], ws.recv_row, alpha);
      });
      // commit reputations and the received-assessment observations
      pool.for_each(n, [&](int i, int) {
        buf.reputation[i] = traj[i].reputation[t];
        for (int s = 0; s < deg; ++s) {
          const std::size_t idx = static_cast<std::size_t>(i) * deg + s;
          buf.recv_last[idx] = hard
                                   ? static_cast<double>(traj[i].recv_bit[static_cast<std::size_t>(t) * deg + s])
                                   : traj[i].recv_prob[static_cast<std::size_t>(t) * deg + s];
        }
      });
    }

    // reshaped rewards
    pool.for_each(n, [&](int i, int) {
      Trajectory& tr = traj[i];
      const Variant v = pop.agents[i].variant;
      if (v == Variant::DD) {
        tr.reputation[t] = std::numeric_limits<double>::quiet_NaN();
        tr.reshaped[t] = tr.env_total[t];
      } else {
        tr.reshaped[t] = reshape_reward(tr.env_total[t], tr.reputation[t],
                                        effective_beta(v, spec.hyper.beta));
      }
      buf.last_actions[i] = buf.actions[i];
    });
  }

  // bootstrap value at the post-episode observation
  pool.for_each(n, [&](int i, int w) {
    WorkerScratch& ws = buf.scratch[w];
    AgentState& ag = pop.agents[i];
    const auto& rd = buf.rounds[T - 1];
    ws.obs.resize(obs_dim);
    if (ag.variant == Variant::DD)
      dd_observation(i, buf.last_actions, rd, ws.obs);
    else
      dilemma_observation(i, buf.reputation, rd, ws.obs);
    mlp_forward(pop.dilemma_layout, ag.theta, ws.obs, ws.net, ws.out);
    traj[i].bootstrap_value = ws.out.value;
  });
}

}  // namespace detail

// Runs the full training schedule for one spec: per episode a recorded
// rollout, dilemma updates for every agent, a fresh rollout under the
// updated policies, and evaluation-policy updates that differentiate
// through the neighbours' one-step updates.
inline TrainResult run_training(const RunSpec& spec, MetricsSink& sink,
                                const EpisodeHook& hook = {}) {
  const NeighborGraph graph = spec.build_graph();
  spec.validate(graph);
  const PayoffMatrix payoff = spec.payoff();
  const int n = graph.n_agents();
  const int deg = graph.degree();
  const int T = spec.timesteps;
  const bool uses_rep = method_uses_reputation(spec.method);
  const bool trains_eval = method_trains_eval(spec.method);
  const uint64_t total_steps = static_cast<uint64_t>(spec.episodes) * T;

  Hyperparameters hyper = spec.hyper;
  if (hyper.entropy.horizon == 0) hyper.entropy.horizon = total_steps;
  RunSpec rs = spec;
  rs.hyper = hyper;

  WorkerPool pool(spec.workers);
  TrainResult result;
  result.cooperation.assign(spec.arenas, {});

  detail::ArenaBuffers buf;
  buf.scratch.resize(pool.workers());
  for (auto& w : buf.scratch) {
    w.policy_model.layout = MlpLayout{.in_dim = 1 + deg, .hidden = 32, .policy_dim = 2};
    w.eval_model.layout = MlpLayout{.in_dim = 2 * deg, .hidden = 32, .policy_dim = deg};
  }
  buf.traj.resize(n);
  buf.traj_hat.resize(n);
  buf.reputation.assign(n, 0.5);
  buf.actions.assign(n, 0);
  buf.last_actions.assign(n, 0);
  buf.assess_prob.assign(static_cast<std::size_t>(n) * deg, 0.0);
  buf.assess_bit.assign(static_cast<std::size_t>(n) * deg, 0);
  buf.recv_last.assign(static_cast<std::size_t>(n) * deg, 0.5);
  buf.disagreement.assign(static_cast<std::size_t>(n) * T, 0.0);
  buf.diag.resize(n);
  buf.eval_grad_norm.assign(n, 0.0);
  buf.cmat.resize(n);

  for (int arena = 0; arena < spec.arenas; ++arena) {
    Population pop = init_population(rs, graph, arena);
    const int P = pop.dilemma_layout.n_params();
    buf.theta_old.assign(static_cast<std::size_t>(n) * P, 0.0);
    result.cooperation[arena].reserve(spec.episodes);

    for (int episode = 0; episode < spec.episodes; ++episode) {
      // interaction rounds for this episode; well-mixed populations resample
      // per global timestep, lattices reuse the static table
      buf.rounds.clear();
      for (int t = 0; t < T; ++t) buf.rounds.push_back(graph.round(episode * T + t));

      detail::rollout(rs, graph, payoff, pop, arena, episode, 0, buf.traj, buf, pool);

      // ---- metrics from the recorded episode ----
      double coop = 0.0;
      for (int t = 0; t < T; ++t) {
        int c = 0;
        for (int i = 0; i < n; ++i)
          if (static_cast<DilemmaAction>(buf.traj[i].action[t]) == DilemmaAction::Cooperate)
            ++c;
        coop += static_cast<double>(c) / n;
      }
      coop /= T;
      result.cooperation[arena].push_back(coop);

      // ---- dilemma updates ----
      const double lambda_now =
          annealed_rate(hyper.lr, static_cast<uint64_t>(episode),
                        static_cast<uint64_t>(spec.episodes));
      const double omega = hyper.entropy.at(static_cast<uint64_t>(episode + 1) * T);

      if (trains_eval) {
        // retain pre-update parameters and per-step score gradients
        pool.for_each(n, [&](int i, int w) {
          AgentState& ag = pop.agents[i];
          std::copy(ag.theta.begin(), ag.theta.end(),
                    buf.theta_old.begin() + static_cast<std::size_t>(i) * P);
          if (effective_beta(ag.variant, hyper.beta) < 1.0)
            reinforce_logprob_grads(pop.dilemma_layout, ag.theta, buf.traj[i],
                                    buf.scratch[w].update, buf.cmat[i]);
          else
            buf.cmat[i].clear();
        });
      }

      pool.for_each(n, [&](int i, int w) {
        AgentState& ag = pop.agents[i];
        if (hyper.dilemma_update == DilemmaUpdateMode::Ppo) {
          buf.diag[i] = ppo_update(
              pop.dilemma_layout, ag.theta, ag.adam, buf.traj[i], hyper, omega,
              substream({spec.seed, static_cast<uint64_t>(arena), stream::kPpoShuffle,
                         static_cast<uint64_t>(episode), static_cast<uint64_t>(i)}),
              buf.scratch[w].update);
        } else {
          buf.diag[i] = reinforce_update(pop.dilemma_layout, ag.theta, buf.traj[i],
                                         lambda_now, hyper.gamma, buf.scratch[w].update);
        }
      });

      // ---- evaluation updates on a fresh post-update rollout ----
      if (trains_eval) {
        detail::rollout(rs, graph, payoff, pop, arena, episode, stream::kHatRollout,
                        buf.traj_hat, buf, pool);

        // disagreement per (agent, step) on the recorded episode
        for (int t = 0; t < T; ++t) {
          for (int i = 0; i < n; ++i)
            std::copy_n(buf.traj[i].given_prob.begin() + static_cast<std::size_t>(t) * deg,
                        deg, buf.assess_prob.begin() + static_cast<std::size_t>(i) * deg);
          StepAssessmentsView view{buf.assess_prob, deg};
          const auto& rd = buf.rounds[t];
          pool.for_each(n, [&](int i, int) {
            buf.disagreement[static_cast<std::size_t>(i) * T + t] =
                disagreement_penalty(i, view, rd);
          });
        }

        const double eval_rate =
            annealed_rate(hyper.eval_rate_base(), static_cast<uint64_t>(episode),
                          static_cast<uint64_t>(spec.episodes));
        const bool hard = hyper.assessment_mode == AssessmentMode::Hard;
        pool.for_each(n, [&](int i, int w) {
          detail::WorkerScratch& ws = buf.scratch[w];
          AgentState& ag = pop.agents[i];
          ws.partner_index.assign(n, -1);
          int n_partners = 0;
          ws.peer_assess.assign(static_cast<std::size_t>(T) * deg * (deg - 1), 0.0);
          const double* d_row = buf.disagreement.data() + static_cast<std::size_t>(i) * T;

          // partner discovery plus per-met-step evaluation rewards; on fixed
          // topologies every neighbour is met at every step
          for (int t = 0; t < T; ++t) {
            const auto& rdt = buf.rounds[t];
            evaluation_reward(buf.traj_hat[i].payoff_row(t), ws.r_eval);
            auto nb = rdt.neighbours(i);
            for (int s = 0; s < deg; ++s) {
              const int j = nb[s];
              int idx = ws.partner_index[j];
              if (idx < 0) {
                idx = n_partners++;
                ws.partner_index[j] = idx;
                if (static_cast<int>(ws.partners.size()) < n_partners)
                  ws.partners.emplace_back();
                detail::PartnerBuild& pb = ws.partners[idx];
                pb.agent = j;
                pb.met_step.clear();
                pb.met_slot.clear();
                pb.eval_term.clear();
              }
              detail::PartnerBuild& pb = ws.partners[idx];
              pb.met_step.push_back(t);
              pb.met_slot.push_back(s);
              pb.eval_term.push_back(ws.r_eval[s] - hyper.mu * d_row[t]);

              // peer assessments of target j at this step, excluding mine
              int slot = 0;
              for (int r = 0; r < deg; ++r) {
                const int k = rdt.neighbours(j)[r];
                if (k == i) continue;
                ws.peer_assess[(static_cast<std::size_t>(t) * deg + s) * (deg - 1) + slot] =
                    buf.traj[k].given_prob[static_cast<std::size_t>(t) * deg +
                                           rdt.slot_of(k, j)];
                ++slot;
              }
            }
          }

          ws.paths.assign(n_partners, {});
          for (int pi = 0; pi < n_partners; ++pi) {
            detail::PartnerBuild& pb = ws.partners[pi];
            const int j = pb.agent;
            const AgentState& agj = pop.agents[j];
            NeighbourPathInputs& path = ws.paths[pi];
            const double beta_j = effective_beta(agj.variant, hyper.beta);
            path.reward_path = beta_j < 1.0 && !buf.cmat[j].empty();
            path.beta = beta_j;
            path.degree = deg;
            path.initial_reputation = episode_initial_reputation(spec, arena, episode, j);
            path.env_reward = buf.traj[j].env_total;
            path.logprob_grads = buf.cmat[j];
            path.theta = std::span<const double>(
                buf.theta_old.data() + static_cast<std::size_t>(j) * P,
                static_cast<std::size_t>(P));
            path.new_obs = buf.traj_hat[j].obs;
            path.new_obs_dim = buf.traj_hat[j].obs_dim;
            path.new_actions = buf.traj_hat[j].action;

            // G' over the met subsequence, discounted by the actual gaps
            const std::size_t M = pb.met_step.size();
            pb.gprime.resize(M);
            double acc = 0.0;
            for (std::size_t m = M; m-- > 0;) {
              const double gap = m + 1 < M
                                     ? std::pow(hyper.gamma,
                                                pb.met_step[m + 1] - pb.met_step[m])
                                     : 0.0;
              acc = pb.eval_term[m] + gap * acc;
              pb.gprime[m] = acc;
            }
            path.met_step = pb.met_step;
            path.met_slot = pb.met_slot;
            path.gprime = pb.gprime;

            // sum of the partner's received assessments excluding mine
            pb.other_sum.assign(T, 0.0);
            std::size_t m = 0;
            for (int t = 0; t < T; ++t) {
              const int mine = m < M && pb.met_step[m] == t
                                   ? buf.rounds[t].slot_of(j, i)
                                   : -1;
              if (mine >= 0) ++m;
              double other = 0.0;
              for (int r = 0; r < deg; ++r) {
                if (r == mine) continue;
                other += hard
                             ? static_cast<double>(
                                   buf.traj[j].recv_bit[static_cast<std::size_t>(t) * deg + r])
                             : buf.traj[j].recv_prob[static_cast<std::size_t>(t) * deg + r];
              }
              pb.other_sum[t] = other;
            }
            path.other_assessor_sum = pb.other_sum;
          }

          evaluation_update_gradient(ws.policy_model, ws.eval_model, ag.eta,
                                     buf.traj[i].eval_obs, 2 * deg, T, deg, ws.paths,
                                     ws.peer_assess, deg - 1, hyper.gamma, hyper.mu,
                                     lambda_now, hyper.alpha, ws.eval_update,
                                     ws.eta_grad);
          buf.eval_grad_norm[i] = l2_norm(ws.eta_grad);
          for (std::size_t p = 0; p < ag.eta.size(); ++p)
            ag.eta[p] += eval_rate * ws.eta_grad[p];
        });
      }

      // ---- emit metrics ----
      if (episode % spec.log_every == 0 || episode == spec.episodes - 1) {
        auto emit = [&](const char* name, double v) {
          sink.row(MetricRow{arena, episode, -1, name, v});
        };
        emit("cooperation", coop);
        double rc = 0, rd_ = 0, pc = 0, pd = 0;
        int nc = 0, nd = 0;
        for (int t = 0; t < T; ++t) {
          for (int i = 0; i < n; ++i) {
            const auto& tr = buf.traj[i];
            if (static_cast<DilemmaAction>(tr.action[t]) == DilemmaAction::Cooperate) {
              rc += tr.reshaped[t];
              if (uses_rep) pc += tr.reputation[t];
              ++nc;
            } else {
              rd_ += tr.reshaped[t];
              if (uses_rep) pd += tr.reputation[t];
              ++nd;
            }
          }
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        emit("reward_coop", nc ? rc / nc : nan);
        emit("reward_defect", nd ? rd_ / nd : nan);
        emit("reputation_coop", uses_rep && nc ? pc / nc : nan);
        emit("reputation_defect", uses_rep && nd ? pd / nd : nan);
        double pl = 0, vl = 0, en = 0, gn = 0, egn = 0;
        for (int i = 0; i < n; ++i) {
          pl += buf.diag[i].policy_loss;
          vl += buf.diag[i].value_loss;
          en += buf.diag[i].entropy;
          gn += buf.diag[i].grad_norm;
          egn += buf.eval_grad_norm[i];
        }
        emit("policy_loss", pl / n);
        emit("value_loss", vl / n);
        emit("entropy", en / n);
        emit("dilemma_grad_norm", gn / n);
        emit("eval_grad_norm", trains_eval ? egn / n : std::numeric_limits<double>::quiet_NaN());
      }

      if (hook) {
        EpisodeView view;
        view.arena = arena;
        view.episode = episode;
        view.final_actions = buf.last_actions;
        view.reputations = buf.reputation;
        view.population = &pop;
        hook(view);
      }
    }
    result.populations.push_back(std::move(pop));
    result.last_episode.push_back(buf.traj);
  }
  return result;
}

}  // namespace lr2
