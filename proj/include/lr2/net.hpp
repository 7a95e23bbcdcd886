#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lr2/autodiff.hpp"
#include "lr2/rng.hpp"

namespace lr2 {

// Two tanh hidden layers of fixed width, a linear policy head and a scalar
// value head, flattened into one parameter vector with a named block layout.
struct MlpLayout {
  int in_dim = 0;
  int hidden = 32;
  int policy_dim = 0;

  int w1_off() const { return 0; }
  int b1_off() const { return hidden * in_dim; }
  int w2_off() const { return b1_off() + hidden; }
  int b2_off() const { return w2_off() + hidden * hidden; }
  int wp_off() const { return b2_off() + hidden; }
  int bp_off() const { return wp_off() + policy_dim * hidden; }
  int wv_off() const { return bp_off() + policy_dim; }
  int bv_off() const { return wv_off() + hidden; }
  int n_params() const { return bv_off() + 1; }

  const char* block_name(int p) const {
    if (p < b1_off()) return "w1";
    if (p < w2_off()) return "b1";
    if (p < b2_off()) return "w2";
    if (p < wp_off()) return "b2";
    if (p < bp_off()) return "wp";
    if (p < wv_off()) return "bp";
    if (p < bv_off()) return "wv";
    return "bv";
  }

  bool operator==(const MlpLayout&) const = default;
};

struct NetworkOutput {
  std::vector<double> logits;
  double value = 0.0;
};

struct MlpScratch {
  std::vector<double> h1, h2;
};

inline void mlp_forward(const MlpLayout& L, std::span<const double> params,
                        std::span<const double> input, MlpScratch& ws,
                        NetworkOutput& out) {
  if (static_cast<int>(input.size()) != L.in_dim)
    throw std::invalid_argument("mlp_forward: input length " + std::to_string(input.size()) +
                                " != in_dim " + std::to_string(L.in_dim));
  if (static_cast<int>(params.size()) != L.n_params())
    throw std::invalid_argument("mlp_forward: parameter vector size mismatch");
  const int H = L.hidden;
  ws.h1.resize(H);
  ws.h2.resize(H);
  const double* w1 = params.data() + L.w1_off();
  const double* b1 = params.data() + L.b1_off();
  for (int u = 0; u < H; ++u) {
    double acc = b1[u];
    const double* row = w1 + static_cast<std::size_t>(u) * L.in_dim;
    for (int k = 0; k < L.in_dim; ++k) acc += row[k] * input[k];
    ws.h1[u] = std::tanh(acc);
  }
  const double* w2 = params.data() + L.w2_off();
  const double* b2 = params.data() + L.b2_off();
  for (int u = 0; u < H; ++u) {
    double acc = b2[u];
    const double* row = w2 + static_cast<std::size_t>(u) * H;
    for (int k = 0; k < H; ++k) acc += row[k] * ws.h1[k];
    ws.h2[u] = std::tanh(acc);
  }
  out.logits.resize(L.policy_dim);
  const double* wp = params.data() + L.wp_off();
  const double* bp = params.data() + L.bp_off();
  for (int u = 0; u < L.policy_dim; ++u) {
    double acc = bp[u];
    const double* row = wp + static_cast<std::size_t>(u) * H;
    for (int k = 0; k < H; ++k) acc += row[k] * ws.h2[k];
    out.logits[u] = acc;
  }
  const double* wv = params.data() + L.wv_off();
  double acc = params[L.bv_off()];
  for (int k = 0; k < H; ++k) acc += wv[k] * ws.h2[k];
  out.value = acc;
}

inline NetworkOutput mlp_forward(const MlpLayout& L, std::span<const double> params,
                                 std::span<const double> input) {
  MlpScratch ws;
  NetworkOutput out;
  mlp_forward(L, params, input, ws, out);
  return out;
}

struct MlpVarScratch {
  std::vector<Var> h1, h2, row, pre;
};

// Tape forward over Var parameters with a constant input; the value head is
// skipped for pure log-prob paths. Contiguous parameter ranges (the common
// case: leaves or a freshly built update row) take the fused dot path with
// one node per neuron; anything else falls back to per-multiply nodes.
inline void mlp_forward_var(Tape& tape, const MlpLayout& L, std::span<const Var> params,
                            std::span<const double> input, MlpVarScratch& ws,
                            std::vector<Var>& logits_out, Var* value_out,
                            bool want_value = true) {
  if (static_cast<int>(input.size()) != L.in_dim)
    throw std::invalid_argument("mlp_forward_var: input length mismatch");
  if (static_cast<int>(params.size()) != L.n_params())
    throw std::invalid_argument("mlp_forward_var: parameter vector size mismatch");
  const int H = L.hidden;
  const VarRange range = VarRange::of(params);
  logits_out.clear();

  if (range.valid()) {
    const uint32_t in_off = tape.stash_coeffs(input);
    ws.pre.clear();
    for (int u = 0; u < H; ++u)
      ws.pre.push_back(tape.dot_coeffs_at(range[L.w1_off() + u * L.in_dim], in_off,
                                          L.in_dim, range[L.b1_off() + u]));
    Var h1_first{};
    for (int u = 0; u < H; ++u) {
      Var h = tanh(ws.pre[u]);
      if (u == 0) h1_first = h;
    }
    ws.pre.clear();
    for (int u = 0; u < H; ++u)
      ws.pre.push_back(tape.dot_range(range[L.w2_off() + u * H], h1_first, H,
                                      range[L.b2_off() + u]));
    Var h2_first{};
    for (int u = 0; u < H; ++u) {
      Var h = tanh(ws.pre[u]);
      if (u == 0) h2_first = h;
    }
    for (int u = 0; u < L.policy_dim; ++u)
      logits_out.push_back(
          tape.dot_range(range[L.wp_off() + u * H], h2_first, H, range[L.bp_off() + u]));
    if (want_value && value_out)
      *value_out = tape.dot_range(range[L.wv_off()], h2_first, H, range[L.bv_off()]);
    return;
  }

  ws.h1.clear();
  ws.h2.clear();
  for (int u = 0; u < H; ++u) {
    Var acc = params[L.b1_off() + u];
    for (int k = 0; k < L.in_dim; ++k)
      acc = fma(params[L.w1_off() + u * L.in_dim + k], input[k], acc);
    ws.h1.push_back(tanh(acc));
  }
  for (int u = 0; u < H; ++u) {
    Var acc = params[L.b2_off() + u];
    for (int k = 0; k < H; ++k) acc = fma(params[L.w2_off() + u * H + k], ws.h1[k], acc);
    ws.h2.push_back(tanh(acc));
  }
  for (int u = 0; u < L.policy_dim; ++u) {
    Var acc = params[L.bp_off() + u];
    for (int k = 0; k < H; ++k) acc = fma(params[L.wp_off() + u * H + k], ws.h2[k], acc);
    logits_out.push_back(acc);
  }
  if (want_value && value_out) {
    Var acc = params[L.bv_off()];
    for (int k = 0; k < H; ++k) acc = fma(params[L.wv_off() + k], ws.h2[k], acc);
    *value_out = acc;
  }
}

// ---- probability helpers ----

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::pair<double, double> softmax2(double z0, double z1) {
  const double m = z0 > z1 ? z0 : z1;
  const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
  const double z = e0 + e1;
  return {e0 / z, e1 / z};
}

inline std::pair<double, double> log_softmax2(double z0, double z1) {
  const double m = z0 > z1 ? z0 : z1;
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  return {z0 - lse, z1 - lse};
}

// Shannon entropy in nats of a discrete distribution, with 0*log0 := 0.
inline double entropy_of(std::span<const double> p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || v > 1.0 + 1e-9)
      throw std::invalid_argument("entropy_of: entries must lie in [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("entropy_of: distribution sums to " + std::to_string(sum));
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// stable log-softmax over two Var logits
inline std::pair<Var, Var> log_softmax2_var(Var z0, Var z1) {
  // the larger logit anchors the log-sum-exp; the selection itself is
  // locally constant so gradients stay exact
  Var zm = z0.value() >= z1.value() ? z0 : z1;
  Var lse = log(exp(z0 - zm) + exp(z1 - zm)) + zm;
  return {z0 - lse, z1 - lse};
}

inline Var logprob2_var(Var z0, Var z1, int action) {
  auto [lp0, lp1] = log_softmax2_var(z0, z1);
  return action == 0 ? lp0 : lp1;
}

inline Var entropy2_var(Var z0, Var z1) {
  auto [lp0, lp1] = log_softmax2_var(z0, z1);
  Var p0 = exp(lp0), p1 = exp(lp1);
  return -(p0 * lp0 + p1 * lp1);
}

// ---- initialization ----

// Glorot-uniform scaled by gain; sqrt(2) on hidden layers, small gain on the
// policy head so initial action distributions start near-uniform.
inline std::vector<double> init_mlp_params(const MlpLayout& L, std::mt19937_64& eng) {
  std::vector<double> p(L.n_params(), 0.0);
  auto fill = [&](int off, int rows, int cols, double gain) {
    const double limit = gain * std::sqrt(6.0 / (rows + cols));
    for (int i = 0; i < rows * cols; ++i) p[off + i] = (2.0 * uniform01(eng) - 1.0) * limit;
  };
  fill(L.w1_off(), L.hidden, L.in_dim, std::sqrt(2.0));
  fill(L.w2_off(), L.hidden, L.hidden, std::sqrt(2.0));
  fill(L.wp_off(), L.policy_dim, L.hidden, 0.01);
  fill(L.wv_off(), 1, L.hidden, 1.0);
  return p;
}

// ---- Adam with linear learning-rate annealing ----

inline double annealed_rate(double base, uint64_t step, uint64_t horizon) {
  if (horizon == 0) return base;
  const double f = 1.0 - static_cast<double>(step) / static_cast<double>(horizon);
  return f > 0.0 ? base * f : 0.0;
}

struct AdamState {
  double lr = 3e-4;       // base rate
  uint64_t horizon = 0;   // anneal-to-zero horizon in steps; 0 = constant
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t step = 0;
  std::vector<double> m, v;

  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
  }
};

inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& st, const MlpLayout* layout = nullptr) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::string where = layout ? std::string(layout->block_name(static_cast<int>(i)))
                                 : "index " + std::to_string(i);
      throw std::runtime_error("adam_step: non-finite gradient in parameter block " + where);
    }
  }
  const double rate = annealed_rate(st.lr, st.step, st.horizon);
  const uint64_t t = st.step + 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grads[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grads[i] * grads[i];
    const double mh = st.m[i] / bc1;
    const double vh = st.v[i] / bc2;
    params[i] -= rate * mh / (std::sqrt(vh) + st.eps);
  }
  ++st.step;
}

}  // namespace lr2
