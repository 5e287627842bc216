#include "bsrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsrl/errors.hpp"
#include "bsrl/layers.hpp"

namespace bsrl {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kMlp: return "mlp";
    case Variant::kSummary: return "summary";
    case Variant::kBelief: return "belief";
    case Variant::kBeliefGated: return "belief_gated";
    case Variant::kBeliefPrivileged: return "belief_privileged";
    case Variant::kRwkvBelief: return "rwkv_belief";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) {
      return v;
    }
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected mlp, summary, belief, belief_gated, belief_privileged, rwkv_belief)");
}

bool has_belief(Variant v) {
  return v == Variant::kBelief || v == Variant::kBeliefGated || v == Variant::kBeliefPrivileged ||
         v == Variant::kRwkvBelief;
}

bool has_accumulators(Variant v) {
  return v == Variant::kSummary || v == Variant::kBelief || v == Variant::kBeliefGated ||
         v == Variant::kBeliefPrivileged;
}

void AdapterConfig::validate(Variant variant, const PolicyDims& dims) const {
  if (!enabled) {
    return;
  }
  if (!has_belief(variant)) {
    throw ConfigError("adapter.enabled requires a belief variant, got " + std::string(to_string(variant)));
  }
  if (rank < 1 || rank > dims.belief) {
    throw ConfigError("adapter.rank must lie in [1, " + std::to_string(dims.belief) + "], got " +
                      std::to_string(rank));
  }
}

namespace {

std::size_t trunk_input(Variant v, const PolicyDims& d) {
  switch (v) {
    case Variant::kMlp: return 1;
    case Variant::kSummary: return d.summary;
    default: return 2 * d.belief;
  }
}

}  // namespace

ParamLayout Policy::make_layout(Variant variant, const AdapterConfig& adapter, const PolicyDims& d) {
  adapter.validate(variant, d);
  ParamLayout l;
  const std::size_t ds = d.state;
  const std::size_t db = d.belief;
  if (has_accumulators(variant)) {
    l.add("acc.theta1", ds);
    l.add("acc.in1", ds);
    l.add("acc.theta2", ds);
    l.add("acc.in2", ds);
  }
  if (variant == Variant::kSummary) {
    l.add("summary.w", d.summary, 2 * ds);
    l.add("summary.b", d.summary);
  }
  if (variant == Variant::kBelief || variant == Variant::kBeliefGated || variant == Variant::kBeliefPrivileged) {
    l.add("belief.mu.w", db, ds);
    l.add("belief.mu.b", db);
    l.add("belief.logsig.w", db, 2 * ds);
    l.add("belief.logsig.b", db);
  }
  if (variant == Variant::kBeliefGated) {
    l.add("gate.w", 2 * ds, 2 * db);
  }
  if (variant == Variant::kRwkvBelief) {
    const std::size_t w = d.rwkv_width;
    l.add("rwkv.embed.w", w, 2);
    l.add("rwkv.embed.b", w);
    l.add("rwkv.ln.g", w);
    l.add("rwkv.ln.b", w);
    l.add("rwkv.mix_k", w);
    l.add("rwkv.mix_v", w);
    l.add("rwkv.mix_r", w);
    l.add("rwkv.key", w, w);
    l.add("rwkv.value", w, w);
    l.add("rwkv.receptance", w, w);
    l.add("rwkv.decay", w);
    l.add("rwkv.bonus", w);
    l.add("rwkv.output", w, w);
    l.add("rwkv.psi.w", w, 3 * w);
    l.add("rwkv.psi.b", w);
    l.add("rwkv.w_mu", db, w);
    l.add("rwkv.w_logsig", db, w);
    l.add("rwkv.cm.key", d.rwkv_ffn, w);
    l.add("rwkv.cm.value", w, d.rwkv_ffn);
    l.add("rwkv.cm.receptance", w, w);
  }
  if (adapter.enabled) {
    l.add("adapter.g.w", adapter.rank, 2 * db);
    l.add("adapter.g.b", adapter.rank);
    l.add("adapter.u", 2 * db, adapter.rank);
  }
  l.add("trunk.w1", d.hidden, trunk_input(variant, d));
  l.add("trunk.b1", d.hidden);
  l.add("trunk.w2", d.hidden, d.hidden);
  l.add("trunk.b2", d.hidden);
  l.add("pi.w", 3, d.hidden);
  l.add("pi.b", 3);
  l.add("v.w", 1, d.hidden);
  l.add("v.b", 1);
  return l;
}

Policy::Policy(Variant variant, std::uint64_t init_seed, AdapterConfig adapter, PolicyDims dims)
    : variant_(variant), dims_(dims), adapter_(adapter), params_(make_layout(variant, adapter, dims)) {
  bind_slices();
  initialize(init_seed);
}

Policy::Policy(Variant variant, ParamStore params, AdapterConfig adapter, PolicyDims dims)
    : variant_(variant), dims_(dims), adapter_(adapter), params_(std::move(params)) {
  if (!(params_.layout() == make_layout(variant, adapter, dims))) {
    throw IntegrityError("parameter layout does not match variant " + std::string(to_string(variant)));
  }
  bind_slices();
}

void Policy::bind_slices() {
  auto get = [&](std::string_view name) { return params_.contains(name) ? params_.slice(name) : Slice{}; };
  sl_.trunk_w1 = get("trunk.w1");
  sl_.trunk_b1 = get("trunk.b1");
  sl_.trunk_w2 = get("trunk.w2");
  sl_.trunk_b2 = get("trunk.b2");
  sl_.pi_w = get("pi.w");
  sl_.pi_b = get("pi.b");
  sl_.v_w = get("v.w");
  sl_.v_b = get("v.b");
  sl_.theta1 = get("acc.theta1");
  sl_.in1 = get("acc.in1");
  sl_.theta2 = get("acc.theta2");
  sl_.in2 = get("acc.in2");
  sl_.mu_w = get("belief.mu.w");
  sl_.mu_b = get("belief.mu.b");
  sl_.logsig_w = get("belief.logsig.w");
  sl_.logsig_b = get("belief.logsig.b");
  sl_.summary_w = get("summary.w");
  sl_.summary_b = get("summary.b");
  sl_.gate_w = get("gate.w");
  sl_.adapter_g_w = get("adapter.g.w");
  sl_.adapter_g_b = get("adapter.g.b");
  sl_.adapter_u = get("adapter.u");
  sl_.embed_w = get("rwkv.embed.w");
  sl_.embed_b = get("rwkv.embed.b");
  sl_.ln_g = get("rwkv.ln.g");
  sl_.ln_b = get("rwkv.ln.b");
  sl_.mix_k = get("rwkv.mix_k");
  sl_.mix_v = get("rwkv.mix_v");
  sl_.mix_r = get("rwkv.mix_r");
  sl_.key = get("rwkv.key");
  sl_.value = get("rwkv.value");
  sl_.receptance = get("rwkv.receptance");
  sl_.decay = get("rwkv.decay");
  sl_.bonus = get("rwkv.bonus");
  sl_.output = get("rwkv.output");
  sl_.psi_w = get("rwkv.psi.w");
  sl_.psi_b = get("rwkv.psi.b");
  sl_.w_mu = get("rwkv.w_mu");
  sl_.w_logsig = get("rwkv.w_logsig");
  sl_.cm_key = get("rwkv.cm.key");
  sl_.cm_value = get("rwkv.cm.value");
  sl_.cm_receptance = get("rwkv.cm.receptance");
}

void Policy::initialize(std::uint64_t seed) {
  Rng rng = make_stream(seed, StreamDomain::kInit, static_cast<std::uint64_t>(variant_));
  // Matrices (cols > 1) get the fan-in rule; vectors are handled by name below.
  for (const auto& e : params_.layout().entries()) {
    if (e.slice.cols > 1 || e.name.find(".w") != std::string::npos) {
      init_dense_weight(params_.view(e.slice), e.slice.cols, rng);
    }
  }
  if (has_accumulators(variant_)) {
    // Decays sigmoid(theta) in roughly [0.85, 0.94].
    const double center = std::log(0.9 / 0.1);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    std::uniform_real_distribution<double> input(-1.0, 1.0);
    for (const Slice& s : {sl_.theta1, sl_.theta2}) {
      for (double& v : params_.view(s)) {
        v = center + jitter(rng);
      }
    }
    for (const Slice& s : {sl_.in1, sl_.in2}) {
      for (double& v : params_.view(s)) {
        v = input(rng);
      }
    }
  }
  if (variant_ == Variant::kRwkvBelief) {
    std::fill(params_.view(sl_.ln_g).begin(), params_.view(sl_.ln_g).end(), 1.0);
    for (const Slice& s : {sl_.mix_k, sl_.mix_v, sl_.mix_r}) {
      std::fill(params_.view(s).begin(), params_.view(s).end(), 0.5);
    }
    // exp(-exp(p)) = 0.9 at the center of the spread.
    const double center = std::log(-std::log(0.9));
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (double& v : params_.view(sl_.decay)) {
      v = center + jitter(rng);
    }
  }
  if (adapter_.enabled) {
    // U = 0 makes the adapter an exact identity at initialization.
    std::fill(params_.view(sl_.adapter_u).begin(), params_.view(sl_.adapter_u).end(), 0.0);
  }
}

RecurrentState Policy::initial_state() const {
  RecurrentState s;
  if (has_accumulators(variant_)) {
    s.s1.assign(dims_.state, 0.0);
    s.s2.assign(dims_.state, 0.0);
  }
  if (variant_ == Variant::kRwkvBelief) {
    s.h.assign(dims_.rwkv_width, 0.0);
    s.num.assign(dims_.rwkv_width, 0.0);
    s.den.assign(dims_.rwkv_width, 0.0);
    s.prev_x.assign(dims_.rwkv_width, 0.0);
  }
  return s;
}

GraphState Policy::graph_initial_state(Tape& tape) const { return graph_load_state(tape, initial_state()); }

GraphState Policy::graph_load_state(Tape& tape, const RecurrentState& s) const {
  GraphState g;
  if (has_accumulators(variant_)) {
    g.s1 = tape.constant(s.s1);
    g.s2 = tape.constant(s.s2);
  }
  if (variant_ == Variant::kRwkvBelief) {
    g.h = tape.constant(s.h);
    g.num = tape.constant(s.num);
    g.den = tape.constant(s.den);
    g.prev_x = tape.constant(s.prev_x);
  }
  return g;
}

Var Policy::trunk_and_heads(Tape& tape, Var features, StepGraph& out) const {
  const Var h1 = dense(tape, features, sl_.trunk_w1, sl_.trunk_b1, Activation::kTanh);
  const Var h2 = dense(tape, h1, sl_.trunk_w2, sl_.trunk_b2, Activation::kTanh);
  out.logits = dense(tape, h2, sl_.pi_w, sl_.pi_b, Activation::kIdentity);
  out.value = dense(tape, h2, sl_.v_w, sl_.v_b, Activation::kIdentity);
  return h2;
}

Var Policy::adapter_graph(Tape& tape, Var features) const {
  const Var g = dense(tape, features, sl_.adapter_g_w, sl_.adapter_g_b, Activation::kTanh);
  return tape.add(features, tape.matvec(sl_.adapter_u, g));
}

void Policy::belief_readout(Tape& tape, Var s1, Var s2, Var& mu, Var& log_sigma) const {
  mu = tape.affine(sl_.mu_w, sl_.mu_b, s1);
  log_sigma = tape.affine(sl_.logsig_w, sl_.logsig_b, tape.concat(s1, s2));
}

StepGraph Policy::mlp_step(Tape& tape, double obs) const {
  StepGraph out;
  trunk_and_heads(tape, tape.constant(obs), out);
  return out;
}

StepGraph Policy::accumulator_step(Tape& tape, GraphState& st, double obs) const {
  const Var a1 = tape.sigmoid(tape.param(sl_.theta1));
  const Var a2 = tape.sigmoid(tape.param(sl_.theta2));
  st.s1 = tape.add(tape.mul(a1, st.s1), tape.scale(tape.param(sl_.in1), obs));
  st.s2 = tape.add(tape.mul(a2, st.s2), tape.scale(tape.param(sl_.in2), obs * obs));

  StepGraph out;
  Var features;
  if (variant_ == Variant::kSummary) {
    features = tape.affine(sl_.summary_w, sl_.summary_b, tape.concat(st.s1, st.s2));
  } else {
    Var mu, log_sigma;
    belief_readout(tape, st.s1, st.s2, mu, log_sigma);
    out.mu = mu;
    out.log_sigma = log_sigma;
    features = tape.concat(mu, log_sigma);
    if (adapter_.enabled) {
      features = adapter_graph(tape, features);
    }
  }
  trunk_and_heads(tape, features, out);
  return out;
}

StepGraph Policy::gated_step(Tape& tape, GraphState& st, double obs) const {
  const std::size_t ds = dims_.state;
  Var mu_prev, log_sigma_prev;
  belief_readout(tape, st.s1, st.s2, mu_prev, log_sigma_prev);
  const Var gate = tape.sigmoid(tape.matvec(sl_.gate_w, tape.concat(mu_prev, log_sigma_prev)));
  const Var g1 = tape.slice(gate, 0, ds);
  const Var g2 = tape.slice(gate, ds, ds);

  const Var a1 = tape.sigmoid(tape.param(sl_.theta1));
  const Var a2 = tape.sigmoid(tape.param(sl_.theta2));
  const Var carry1 = tape.mul(a1, st.s1);
  const Var carry2 = tape.mul(a2, st.s2);
  const Var write1 = tape.scale(tape.param(sl_.in1), obs);
  const Var write2 = tape.scale(tape.param(sl_.in2), obs * obs);
  // g * carry + (1 - g) * write, written as write + g * (carry - write).
  st.s1 = tape.add(write1, tape.mul(g1, tape.sub(carry1, write1)));
  st.s2 = tape.add(write2, tape.mul(g2, tape.sub(carry2, write2)));

  StepGraph out;
  Var mu, log_sigma;
  belief_readout(tape, st.s1, st.s2, mu, log_sigma);
  out.mu = mu;
  out.log_sigma = log_sigma;
  out.gate = gate;
  Var features = tape.concat(mu, log_sigma);
  if (adapter_.enabled) {
    features = adapter_graph(tape, features);
  }
  trunk_and_heads(tape, features, out);
  return out;
}

Var Policy::layer_norm(Tape& tape, Var x) const {
  const double inv_n = 1.0 / static_cast<double>(tape.dim(x));
  const Var centered = tape.sub(x, tape.scale(tape.sum(x), inv_n));
  const Var var = tape.scale(tape.sum(tape.square(centered)), inv_n);
  const Var normed = tape.mul(centered, tape.unary(Unary::kRsqrt, tape.shift(var, 1e-5)));
  return tape.add(tape.mul(tape.param(sl_.ln_g), normed), tape.param(sl_.ln_b));
}

StepGraph Policy::rwkv_step(Tape& tape, GraphState& st, double obs) const {
  // Time mix over the normalized sum of the new token and the carried
  // feature state; the normalization keeps the h -> x -> h loop bounded.
  const double raw[2] = {obs, obs * obs};
  const Var embedded = tape.affine(sl_.embed_w, sl_.embed_b, tape.constant(raw));
  const Var x = layer_norm(tape, tape.add(embedded, st.h));
  const Var delta = tape.sub(x, st.prev_x);
  const Var xk = tape.add(st.prev_x, tape.mul(tape.param(sl_.mix_k), delta));
  const Var xv = tape.add(st.prev_x, tape.mul(tape.param(sl_.mix_v), delta));
  const Var xr = tape.add(st.prev_x, tape.mul(tape.param(sl_.mix_r), delta));
  const Var k = tape.matvec(sl_.key, xk);
  const Var v = tape.matvec(sl_.value, xv);
  const Var r = tape.matvec(sl_.receptance, xr);

  const Var ek = tape.exp(k);
  const Var euk = tape.exp(tape.add(tape.param(sl_.bonus), k));
  const Var wkv = tape.div(tape.add(st.num, tape.mul(euk, v)), tape.add(st.den, euk));
  const Var decay = tape.exp(tape.scale(tape.exp(tape.param(sl_.decay)), -1.0));
  st.num = tape.add(tape.mul(decay, st.num), tape.mul(ek, v));
  st.den = tape.add(tape.mul(decay, st.den), ek);
  const Var u = tape.matvec(sl_.output, tape.mul(tape.sigmoid(r), wkv));

  // Belief branch reads the time-mix output and the temporal memory, the
  // latter flattened as (num/den, log den) so its scale stays bounded.
  const Var memory = tape.concat(tape.div(st.num, st.den), tape.log(st.den));
  const Var z = dense(tape, tape.concat(u, memory), sl_.psi_w, sl_.psi_b, Activation::kTanh);
  StepGraph out;
  out.wkv = wkv;
  out.mu = tape.matvec(sl_.w_mu, z);
  out.log_sigma = tape.matvec(sl_.w_logsig, z);

  // Channel mix produces the feature state carried to the next step.
  const Var inner = tape.unary(Unary::kReluSquare, tape.matvec(sl_.cm_key, u));
  st.h = tape.mul(tape.sigmoid(tape.matvec(sl_.cm_receptance, u)), tape.matvec(sl_.cm_value, inner));
  st.prev_x = x;

  Var features = tape.concat(*out.mu, *out.log_sigma);
  if (adapter_.enabled) {
    features = adapter_graph(tape, features);
  }
  trunk_and_heads(tape, features, out);
  return out;
}

StepGraph Policy::graph_step(Tape& tape, GraphState& state, double obs) const {
  switch (variant_) {
    case Variant::kMlp: return mlp_step(tape, obs);
    case Variant::kSummary:
    case Variant::kBelief:
    case Variant::kBeliefPrivileged: return accumulator_step(tape, state, obs);
    case Variant::kBeliefGated: return gated_step(tape, state, obs);
    case Variant::kRwkvBelief: return rwkv_step(tape, state, obs);
  }
  throw ContractViolation("unknown variant");
}

namespace {

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

void store(const Tape& tape, Var v, std::vector<double>& out) {
  const auto s = tape.value(v);
  out.assign(s.begin(), s.end());
}

}  // namespace

PolicyOutput Policy::forward(RecurrentState& state, double obs, Tape& scratch) const {
  if (!std::isfinite(obs)) {
    throw NumericError("non-finite observation");
  }
  scratch.reset(params_.values());
  GraphState g = graph_load_state(scratch, state);
  const StepGraph step = graph_step(scratch, g, obs);

  PolicyOutput out;
  const auto logits = scratch.value(step.logits);
  std::copy(logits.begin(), logits.end(), out.logits.begin());
  out.value = scratch.item(step.value);
  if (step.mu) out.mu = to_vec(scratch.value(*step.mu));
  if (step.log_sigma) out.log_sigma = to_vec(scratch.value(*step.log_sigma));
  if (step.gate) out.gate = to_vec(scratch.value(*step.gate));

  if (has_accumulators(variant_)) {
    store(scratch, g.s1, state.s1);
    store(scratch, g.s2, state.s2);
  }
  if (variant_ == Variant::kRwkvBelief) {
    store(scratch, g.h, state.h);
    store(scratch, g.num, state.num);
    store(scratch, g.den, state.den);
    store(scratch, g.prev_x, state.prev_x);
  }
  ++state.t;
  return out;
}

PolicyOutput Policy::forward(RecurrentState& state, double obs) const {
  thread_local Tape scratch;
  return forward(state, obs, scratch);
}

BeliefState Policy::adapter_apply(const BeliefState& belief) const {
  if (!adapter_.enabled) {
    throw ContractViolation("adapter_apply on a policy without an adapter");
  }
  if (belief.mu.size() != dims_.belief || belief.log_sigma.size() != dims_.belief) {
    throw ContractViolation("adapter_apply: belief has the wrong width");
  }
  Tape tape(params_.values());
  const Var b = tape.concat(tape.constant(belief.mu), tape.constant(belief.log_sigma));
  const auto out = tape.value(adapter_graph(tape, b));
  BeliefState res;
  res.mu.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(dims_.belief));
  res.log_sigma.assign(out.begin() + static_cast<std::ptrdiff_t>(dims_.belief), out.end());
  return res;
}

std::vector<double> Policy::decays() const {
  if (!has_accumulators(variant_)) {
    throw ContractViolation("decays() requires an accumulator variant");
  }
  std::vector<double> out;
  for (const Slice& s : {sl_.theta1, sl_.theta2}) {
    for (double th : params_.view(s)) {
      out.push_back(1.0 / (1.0 + std::exp(-th)));
    }
  }
  return out;
}

namespace {

double l2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

StabilityReport stability_probe(const Policy& policy, double input_bound, std::size_t steps, Rng& rng) {
  if (!has_accumulators(policy.variant())) {
    throw ContractViolation("stability_probe needs a policy with contractive accumulators");
  }
  const ParamStore& p = policy.params();
  const auto decays = policy.decays();
  StabilityReport rep;
  rep.rho = *std::max_element(decays.begin(), decays.end());
  rep.input_bound = input_bound;
  rep.steps = steps;
  const double X = input_bound;
  const double in1 = l2(p.view("acc.in1")) * X;
  const double in2 = l2(p.view("acc.in2")) * X * X;
  rep.input_norm = std::sqrt(in1 * in1 + in2 * in2);
  rep.state_bound = rep.input_norm / (1.0 - rep.rho);

  const bool belief = has_belief(policy.variant());
  if (belief) {
    // ||W s + b|| <= ||W||_F ||s|| + ||b||, for both readouts.
    rep.belief_bound = (l2(p.view("belief.mu.w")) + l2(p.view("belief.logsig.w"))) * rep.state_bound +
                       l2(p.view("belief.mu.b")) + l2(p.view("belief.logsig.b"));
  }

  const std::size_t ds = policy.dims().state;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-X, X);
  Tape tape;
  // Drives: constant +X, constant -X, alternating sign, uniform, random sign.
  for (int drive = 0; drive < 5; ++drive) {
    RecurrentState st = policy.initial_state();
    std::vector<double> dir(2 * ds);
    for (double& d : dir) d = gauss(rng);
    const double scale = rep.state_bound * unit(rng) / std::max(l2(dir), 1e-300);
    for (std::size_t i = 0; i < ds; ++i) {
      st.s1[i] = dir[i] * scale;
      st.s2[i] = dir[ds + i] * scale;
    }
    for (std::size_t t = 0; t < steps; ++t) {
      double x = 0.0;
      switch (drive) {
        case 0: x = X; break;
        case 1: x = -X; break;
        case 2: x = (t % 2 == 0) ? X : -X; break;
        case 3: x = sym(rng); break;
        default: x = unit(rng) < 0.5 ? X : -X; break;
      }
      const PolicyOutput out = policy.forward(st, x, tape);
      const double sn = std::sqrt(std::pow(l2(st.s1), 2) + std::pow(l2(st.s2), 2));
      rep.max_state_norm = std::max(rep.max_state_norm, sn);
      if (belief) {
        const double bn = std::sqrt(std::pow(l2(*out.mu), 2) + std::pow(l2(*out.log_sigma), 2));
        rep.max_belief_norm = std::max(rep.max_belief_norm, bn);
      }
    }
  }
  return rep;
}

}  // namespace bsrl
