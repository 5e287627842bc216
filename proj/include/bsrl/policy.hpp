#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bsrl/param_store.hpp"
#include "bsrl/rng.hpp"
#include "bsrl/tape.hpp"

namespace bsrl {

enum class Variant { kMlp, kSummary, kBelief, kBeliefGated, kBeliefPrivileged, kRwkvBelief };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::kMlp,         Variant::kSummary,
                                                     Variant::kBelief,      Variant::kBeliefGated,
                                                     Variant::kBeliefPrivileged, Variant::kRwkvBelief};

std::string_view to_string(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);

/// Variants that emit mu / log_sigma.
bool has_belief(Variant v);
/// Variants driven by the (s1, s2) accumulator pair.
bool has_accumulators(Variant v);

struct PolicyDims {
  std::size_t state = 16;    // d_s, width of s1 and s2
  std::size_t belief = 8;    // d_b, width of mu and of log_sigma
  std::size_t hidden = 32;   // trunk width
  std::size_t summary = 14;  // opaque summary width, sized to match belief parameter count
  std::size_t rwkv_width = 16;
  std::size_t rwkv_ffn = 32;

  bool operator==(const PolicyDims&) const = default;
};

/// Low-rank residual on the concatenated [mu ; log_sigma] vector.
struct AdapterConfig {
  bool enabled = false;
  std::size_t rank = 4;

  /// 1 <= rank <= d_b when enabled; only belief variants accept an adapter.
  void validate(Variant variant, const PolicyDims& dims) const;
  bool operator==(const AdapterConfig&) const = default;
};

struct PolicyOutput {
  std::array<double, 3> logits{};  // Wait, GuessPos, GuessNeg
  double value = 0.0;
  std::optional<std::vector<double>> mu;
  std::optional<std::vector<double>> log_sigma;
  std::optional<std::vector<double>> gate;
};

struct BeliefState {
  std::vector<double> mu;
  std::vector<double> log_sigma;
};

/// Per-episode recurrent carrier. Accumulator variants use s1/s2; the RWKV
/// block uses h (feature state), num/den (decayed WKV accumulators) and
/// prev_x (token-shift buffer). Everything starts at zero.
struct RecurrentState {
  std::vector<double> s1;
  std::vector<double> s2;
  std::vector<double> h;
  std::vector<double> num;
  std::vector<double> den;
  std::vector<double> prev_x;
  int t = 0;
};

/// Tape handles for the carrier of one step.
struct GraphState {
  Var s1, s2, h, num, den, prev_x;
};

struct StepGraph {
  Var logits;
  Var value;
  std::optional<Var> mu;
  std::optional<Var> log_sigma;
  std::optional<Var> gate;
  std::optional<Var> wkv;  // RWKV normalized readout before receptance gating
};

class Policy {
 public:
  /// Fresh initialization: dense weights U(+-1/sqrt(fan_in)), biases zero,
  /// accumulator decays sigmoid(theta) spread around 0.9.
  Policy(Variant variant, std::uint64_t init_seed, AdapterConfig adapter = {}, PolicyDims dims = {});
  /// Wraps existing parameters; throws IntegrityError if the layout differs
  /// from the one this variant expects.
  Policy(Variant variant, ParamStore params, AdapterConfig adapter, PolicyDims dims = {});

  static ParamLayout make_layout(Variant variant, const AdapterConfig& adapter, const PolicyDims& dims);

  Variant variant() const { return variant_; }
  const PolicyDims& dims() const { return dims_; }
  const AdapterConfig& adapter() const { return adapter_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  RecurrentState initial_state() const;

  /// One value-level step. Advances `state` in place.
  PolicyOutput forward(RecurrentState& state, double obs, Tape& scratch) const;
  PolicyOutput forward(RecurrentState& state, double obs) const;

  /// Graph-level API used for training. The tape must have been reset with a
  /// parameter vector laid out like params() (not necessarily the same
  /// values, which is how finite-difference probes evaluate perturbed points).
  GraphState graph_initial_state(Tape& tape) const;
  GraphState graph_load_state(Tape& tape, const RecurrentState& state) const;
  StepGraph graph_step(Tape& tape, GraphState& state, double obs) const;

  /// b~ = b + U tanh(G b + c) on [mu ; log_sigma]. Requires an enabled adapter.
  BeliefState adapter_apply(const BeliefState& belief) const;

  /// Elementwise decays sigmoid(theta_i) of the s1 and s2 accumulators.
  std::vector<double> decays() const;

 private:
  struct Slices {
    Slice trunk_w1, trunk_b1, trunk_w2, trunk_b2, pi_w, pi_b, v_w, v_b;
    Slice theta1, in1, theta2, in2;
    Slice mu_w, mu_b, logsig_w, logsig_b;
    Slice summary_w, summary_b;
    Slice gate_w;
    Slice adapter_g_w, adapter_g_b, adapter_u;
    Slice embed_w, embed_b, ln_g, ln_b, mix_k, mix_v, mix_r, key, value, receptance, decay, bonus, output;
    Slice psi_w, psi_b, w_mu, w_logsig, cm_key, cm_value, cm_receptance;
  };

  void bind_slices();
  void initialize(std::uint64_t seed);
  Var trunk_and_heads(Tape& tape, Var features, StepGraph& out) const;
  Var adapter_graph(Tape& tape, Var features) const;
  Var layer_norm(Tape& tape, Var x) const;
  void belief_readout(Tape& tape, Var s1, Var s2, Var& mu, Var& log_sigma) const;

  StepGraph mlp_step(Tape& tape, double obs) const;
  StepGraph accumulator_step(Tape& tape, GraphState& state, double obs) const;
  StepGraph gated_step(Tape& tape, GraphState& state, double obs) const;
  StepGraph rwkv_step(Tape& tape, GraphState& state, double obs) const;

  Variant variant_;
  PolicyDims dims_;
  AdapterConfig adapter_;
  ParamStore params_;
  Slices sl_;
};

struct StabilityReport {
  double rho = 0.0;            // largest decay
  double input_bound = 0.0;
  double input_norm = 0.0;     // C = ||(b1 X, b2 X^2)||_2
  double state_bound = 0.0;    // C / (1 - rho)
  double max_state_norm = 0.0; // sup_t ||(s1, s2)||_2 observed
  double belief_bound = 0.0;   // readout Lipschitz bound applied to state_bound
  double max_belief_norm = 0.0;
  std::size_t steps = 0;

  bool within_bounds() const { return max_state_norm <= state_bound && max_belief_norm <= belief_bound; }
};

/// Drives the accumulator recurrence with inputs |x| <= input_bound from
/// random starts inside the analytic ball and reports the observed sup of the
/// state and belief norms next to their closed-form bounds.
StabilityReport stability_probe(const Policy& policy, double input_bound, std::size_t steps, Rng& rng);

}  // namespace bsrl
