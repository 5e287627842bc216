#include <doctest.h>

#include <cmath>
#include <random>

#include "bsrl/errors.hpp"
#include "bsrl/policy.hpp"
#include "bsrl/selfcheck.hpp"
#include "bsrl/train.hpp"

using namespace bsrl;

namespace {

double logit(double a) { return std::log(a / (1.0 - a)); }

void fill(std::span<double> s, double v) {
  for (double& x : s) x = v;
}

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_variant("lstm"), ConfigError);
}

TEST_CASE("parameter counts") {
  const auto count = [](Variant v) { return Policy(v, 0).params().size(); };
  CHECK(count(Variant::kMlp) == 1252);
  CHECK(count(Variant::kBelief) == 2196);
  CHECK(count(Variant::kBeliefPrivileged) == 2196);
  CHECK(count(Variant::kBeliefGated) == 2708);
  CHECK(count(Variant::kRwkvBelief) == 5236);
  const double belief = static_cast<double>(count(Variant::kBelief));
  CHECK(std::abs(static_cast<double>(count(Variant::kSummary)) - belief) / belief <= 0.05);
}

TEST_CASE("output fields by variant") {
  for (Variant v : kAllVariants) {
    const Policy p(v, 3);
    RecurrentState s = p.initial_state();
    const PolicyOutput out = p.forward(s, 0.4);
    CHECK(out.mu.has_value() == has_belief(v));
    CHECK(out.log_sigma.has_value() == has_belief(v));
    CHECK(out.gate.has_value() == (v == Variant::kBeliefGated));
    for (double l : out.logits) CHECK(std::isfinite(l));
    CHECK(std::isfinite(out.value));
    if (has_belief(v)) {
      CHECK(out.mu->size() == 8);
      CHECK(out.log_sigma->size() == 8);
    }
  }
}

TEST_CASE("mlp with zeroed heads is uniform") {
  Policy p(Variant::kMlp, 1);
  fill(p.params().view("pi.w"), 0.0);
  fill(p.params().view("pi.b"), 0.0);
  RecurrentState s = p.initial_state();
  for (double obs : {-3.0, 0.0, 2.5}) {
    const PolicyOutput out = p.forward(s, obs);
    for (double l : out.logits) CHECK(l == 0.0);
  }
}

TEST_CASE("mlp output stays finite over random parameters and observations") {
  Policy p(Variant::kMlp, 2);
  Rng rng = make_stream(2, StreamDomain::kCheck, 0);
  std::uniform_real_distribution<double> w(-3.0, 3.0);
  std::uniform_real_distribution<double> obs(-10.0, 10.0);
  Tape tape;
  std::size_t finite = 0;
  const std::size_t draws = 100000;
  auto values = p.params().values();
  for (std::size_t k = 0; k < draws; ++k) {
    for (double& x : values) x = w(rng);
    RecurrentState s = p.initial_state();
    const PolicyOutput out = p.forward(s, obs(rng), tape);
    finite += std::isfinite(out.logits[0]) && std::isfinite(out.logits[1]) && std::isfinite(out.logits[2]) &&
              std::isfinite(out.value);
  }
  CHECK(finite == draws);
}

TEST_CASE("non-finite observations are rejected") {
  const Policy p(Variant::kBelief, 0);
  RecurrentState s = p.initial_state();
  CHECK_THROWS_AS(p.forward(s, std::nan("")), NumericError);
}

TEST_CASE("belief readout from the zero state equals the biases") {
  const Policy p(Variant::kBelief, 4);
  RecurrentState s = p.initial_state();
  const PolicyOutput out = p.forward(s, 0.0);
  for (double v : s.s1) CHECK(v == 0.0);
  for (double v : s.s2) CHECK(v == 0.0);
  const auto mb = p.params().view("belief.mu.b");
  const auto lb = p.params().view("belief.logsig.b");
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK((*out.mu)[i] == mb[i]);
    CHECK((*out.log_sigma)[i] == lb[i]);
  }
}

TEST_CASE("accumulators converge to the geometric limit") {
  for (Variant v : {Variant::kBelief, Variant::kSummary}) {
    Policy p(v, 5);
    fill(p.params().view("acc.theta1"), logit(0.9));
    fill(p.params().view("acc.in1"), 0.1);
    for (double c : {1.0, 0.5}) {
      RecurrentState s = p.initial_state();
      for (int t = 0; t < 200; ++t) p.forward(s, c);
      for (double x : s.s1) CHECK(std::abs(x - 0.1 * c / (1.0 - 0.9)) < 1e-6);
    }
  }
}

TEST_CASE("sign-flipped stream flips s1 and leaves s2") {
  const Policy p(Variant::kBelief, 6);
  RecurrentState a = p.initial_state(), b = p.initial_state();
  Rng rng = make_stream(6, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    const double x = n(rng);
    p.forward(a, x);
    p.forward(b, -x);
  }
  for (std::size_t i = 0; i < a.s1.size(); ++i) {
    CHECK(a.s1[i] == -b.s1[i]);
    CHECK(a.s2[i] == b.s2[i]);
  }
}

TEST_CASE("decays lie strictly inside (0, 1) and start near 0.9") {
  for (Variant v : {Variant::kSummary, Variant::kBelief, Variant::kBeliefGated}) {
    const auto d = Policy(v, 7).decays();
    double mean = 0.0;
    for (double a : d) {
      CHECK(a > 0.0);
      CHECK(a < 1.0);
      mean += a;
    }
    CHECK(mean / static_cast<double>(d.size()) == doctest::Approx(0.9).epsilon(0.05));
  }
  Policy extreme(Variant::kBelief, 7);
  fill(extreme.params().view("acc.theta1"), 30.0);
  fill(extreme.params().view("acc.theta2"), -30.0);
  for (double a : extreme.decays()) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
  }
}

TEST_CASE("summary with zero input from the zero state ignores the recurrence weights") {
  Policy a(Variant::kSummary, 8);
  Policy b = a;
  fill(b.params().view("acc.in1"), 5.0);
  fill(b.params().view("acc.theta2"), -2.0);
  RecurrentState sa = a.initial_state(), sb = b.initial_state();
  const PolicyOutput oa = a.forward(sa, 0.0);
  const PolicyOutput ob = b.forward(sb, 0.0);
  for (int k = 0; k < 3; ++k) CHECK(oa.logits[k] == ob.logits[k]);
}

TEST_CASE("gate with zero weights is one half") {
  Policy p(Variant::kBeliefGated, 9);
  fill(p.params().view("gate.w"), 0.0);
  RecurrentState s = p.initial_state();
  p.forward(s, 0.7);
  const auto before = s;
  const PolicyOutput out = p.forward(s, -0.3);
  for (double g : *out.gate) CHECK(g == 0.5);
  const auto a = p.decays();
  const auto in1 = p.params().view("acc.in1");
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(s.s1[i] == doctest::Approx(0.5 * a[i] * before.s1[i] + 0.5 * in1[i] * -0.3).epsilon(1e-14));
  }
}

TEST_CASE("saturated gate freezes the state to pure carry") {
  Policy p(Variant::kBeliefGated, 10);
  fill(p.params().view("belief.mu.w"), 0.0);
  fill(p.params().view("belief.logsig.w"), 0.0);
  fill(p.params().view("belief.mu.b"), 1.0);
  fill(p.params().view("belief.logsig.b"), 1.0);
  fill(p.params().view("gate.w"), 50.0);
  RecurrentState s = p.initial_state();
  Rng rng = make_stream(10, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& x : s.s1) x = n(rng);
  for (double& x : s.s2) x = n(rng);
  const auto a = p.decays();
  for (double obs : {3.0, -2.0}) {
    const auto prev = s;
    const PolicyOutput out = p.forward(s, obs);
    for (double g : *out.gate) CHECK(g > 1.0 - 1e-12);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(s.s1[i] == doctest::Approx(a[i] * prev.s1[i]).epsilon(1e-12));
      CHECK(s.s2[i] == doctest::Approx(a[16 + i] * prev.s2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("gate entries stay inside (0, 1)") {
  const Policy p(Variant::kBeliefGated, 11);
  RecurrentState s = p.initial_state();
  Rng rng = make_stream(11, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int t = 0; t < 200; ++t) {
    const PolicyOutput out = p.forward(s, n(rng));
    for (double g : *out.gate) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
  }
}

TEST_CASE("belief readouts stay finite and the scale stays positive") {
  for (Variant v : {Variant::kBelief, Variant::kBeliefGated, Variant::kBeliefPrivileged, Variant::kRwkvBelief}) {
    const Policy p(v, 12);
    Rng rng = make_stream(12, StreamDomain::kCheck, 0);
    std::normal_distribution<double> n(0.0, 1.5);
    RecurrentState s = p.initial_state();
    for (int t = 0; t < 50; ++t) {
      const PolicyOutput out = p.forward(s, n(rng));
      for (double m : *out.mu) CHECK(std::isfinite(m));
      for (double l : *out.log_sigma) {
        CHECK(std::isfinite(l));
        CHECK(std::exp(l) > 0.0);
      }
    }
  }
}

TEST_CASE("episodes do not leak state") {
  for (Variant v : kAllVariants) {
    const Policy p(v, 13);
    const double first[] = {0.4, -1.2, 2.0};
    const double second[] = {-0.3, 0.9};
    RecurrentState fresh = p.initial_state();
    std::vector<PolicyOutput> want;
    for (double x : second) want.push_back(p.forward(fresh, x));

    RecurrentState s = p.initial_state();
    for (double x : first) p.forward(s, x);
    s = p.initial_state();
    for (std::size_t t = 0; t < 2; ++t) {
      const PolicyOutput got = p.forward(s, second[t]);
      for (int k = 0; k < 3; ++k) CHECK(got.logits[k] == want[t].logits[k]);
      CHECK(got.value == want[t].value);
    }
  }
}

TEST_CASE("adapter") {
  const AdapterConfig ad{true, 4};
  SUBCASE("zero U is the identity") {
    const Policy p(Variant::kBelief, 14, ad);
    const BeliefState b{{1, 2, 3, 4, 5, 6, 7, 8}, {-1, -2, -3, -4, -5, -6, -7, -8}};
    const BeliefState t = p.adapter_apply(b);
    CHECK(t.mu == b.mu);
    CHECK(t.log_sigma == b.log_sigma);
  }
  SUBCASE("the perturbation lies in the column space of U") {
    Policy p(Variant::kBelief, 15, ad);
    Rng rng = make_stream(15, StreamDomain::kCheck, 0);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& x : p.params().view("adapter.u")) x = n(rng);
    for (double& x : p.params().view("adapter.g.b")) x = n(rng);
    BeliefState b;
    for (int i = 0; i < 8; ++i) {
      b.mu.push_back(n(rng));
      b.log_sigma.push_back(n(rng));
    }
    const BeliefState t = p.adapter_apply(b);
    std::vector<double> d(16);
    for (int i = 0; i < 8; ++i) {
      d[i] = t.mu[i] - b.mu[i];
      d[8 + i] = t.log_sigma[i] - b.log_sigma[i];
    }
    CHECK(l2(d) > 1e-3);
    // Least squares via modified Gram-Schmidt on the 16 x 4 columns of U.
    const auto u = p.params().view("adapter.u");
    const Slice& us = p.params().slice("adapter.u");
    REQUIRE(us.rows == 16);
    REQUIRE(us.cols == 4);
    std::vector<std::vector<double>> q;
    for (std::size_t c = 0; c < 4; ++c) {
      std::vector<double> col(16);
      for (std::size_t r = 0; r < 16; ++r) col[r] = u[r * 4 + c];
      for (const auto& e : q) {
        double dot = 0.0;
        for (std::size_t r = 0; r < 16; ++r) dot += e[r] * col[r];
        for (std::size_t r = 0; r < 16; ++r) col[r] -= dot * e[r];
      }
      const double nrm = l2(col);
      for (double& x : col) x /= nrm;
      q.push_back(col);
    }
    std::vector<double> res = d;
    for (const auto& e : q) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 16; ++r) dot += e[r] * res[r];
      for (std::size_t r = 0; r < 16; ++r) res[r] -= dot * e[r];
    }
    CHECK(l2(res) < 1e-10);
  }
  SUBCASE("full rank is a full residual layer") {
    const Policy p(Variant::kBelief, 16, AdapterConfig{true, 8});
    CHECK(p.params().slice("adapter.u").rows == 16);
    CHECK(p.params().slice("adapter.u").cols == 8);
    CHECK(p.params().slice("adapter.g.w").rows == 8);
    CHECK(p.params().slice("adapter.g.w").cols == 16);
  }
  SUBCASE("rank and variant validation") {
    CHECK_THROWS_AS(Policy(Variant::kBelief, 0, AdapterConfig{true, 0}), ConfigError);
    CHECK_THROWS_AS(Policy(Variant::kBelief, 0, AdapterConfig{true, 9}), ConfigError);
    CHECK_THROWS_AS(Policy(Variant::kSummary, 0, AdapterConfig{true, 4}), ConfigError);
    CHECK_THROWS_AS(Policy(Variant::kMlp, 0, AdapterConfig{true, 4}), ConfigError);
    CHECK_NOTHROW(Policy(Variant::kRwkvBelief, 0, AdapterConfig{true, 2}));
    const Policy plain(Variant::kBelief, 0);
    CHECK_THROWS_AS(plain.adapter_apply(BeliefState{}), ContractViolation);
  }
}

TEST_CASE("rwkv first step reads out the first value vector") {
  const Policy p(Variant::kRwkvBelief, 17);
  const ParamStore& w = p.params();
  const double obs = 0.8;
  Tape tape(w.values());
  GraphState g = p.graph_initial_state(tape);
  const StepGraph step = p.graph_step(tape, g, obs);
  const auto wkv = tape.value(*step.wkv);

  // Independent evaluation: embed, layer-normalize, mix with a zero shift
  // buffer, project with the value matrix.
  const std::size_t n = 16;
  const auto ew = w.view("rwkv.embed.w");
  const auto eb = w.view("rwkv.embed.b");
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = ew[2 * i] * obs + ew[2 * i + 1] * obs * obs + eb[i];
  double mean = 0.0;
  for (double x : e) mean += x / n;
  double var = 0.0;
  for (double x : e) var += (x - mean) * (x - mean) / n;
  const auto lg = w.view("rwkv.ln.g");
  const auto lb = w.view("rwkv.ln.b");
  const auto mv = w.view("rwkv.mix_v");
  const auto vw = w.view("rwkv.value");
  std::vector<double> xv(n);
  for (std::size_t i = 0; i < n; ++i) xv[i] = mv[i] * (lg[i] * (e[i] - mean) / std::sqrt(var + 1e-5) + lb[i]);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += vw[i * n + j] * xv[j];
    CHECK(wkv[i] == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("rwkv denominators stay positive and constant input converges") {
  const Policy p(Variant::kRwkvBelief, 18);
  Rng rng = make_stream(18, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 1.5);
  for (int stream = 0; stream < 20; ++stream) {
    RecurrentState s = p.initial_state();
    for (int t = 0; t < 60; ++t) {
      p.forward(s, n(rng));
      for (double d : s.den) CHECK(d > 0.0);
    }
  }
  RecurrentState s = p.initial_state();
  PolicyOutput prev, cur;
  for (int t = 0; t < 500; ++t) {
    prev = cur;
    cur = p.forward(s, 0.6);
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    diff = std::max(diff, std::abs((*cur.mu)[i] - (*prev.mu)[i]));
    diff = std::max(diff, std::abs((*cur.log_sigma)[i] - (*prev.log_sigma)[i]));
  }
  for (int k = 0; k < 3; ++k) diff = std::max(diff, std::abs(cur.logits[k] - prev.logits[k]));
  CHECK(diff < 1e-8);
}

TEST_CASE("stability bound, scalar geometric cases") {
  PolicyDims dims;
  dims.state = 1;
  SUBCASE("a = 0.5, b = 1 bounds s1 by 2") {
    Policy p(Variant::kBelief, 19, {}, dims);
    fill(p.params().view("acc.theta1"), logit(0.5));
    fill(p.params().view("acc.theta2"), logit(0.5));
    fill(p.params().view("acc.in1"), 1.0);
    fill(p.params().view("acc.in2"), 0.0);
    Rng rng = make_stream(19, StreamDomain::kCheck, 0);
    const StabilityReport r = stability_probe(p, 1.0, 10000, rng);
    CHECK(r.state_bound == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.max_state_norm <= 2.0);
    CHECK(r.max_state_norm > 1.99);
    CHECK(r.within_bounds());
  }
  SUBCASE("a = 0.9, b = 1 on x^2 bounds s2 by 10") {
    Policy p(Variant::kBelief, 20, {}, dims);
    fill(p.params().view("acc.theta1"), logit(0.9));
    fill(p.params().view("acc.theta2"), logit(0.9));
    fill(p.params().view("acc.in1"), 0.0);
    fill(p.params().view("acc.in2"), 1.0);
    Rng rng = make_stream(20, StreamDomain::kCheck, 0);
    const StabilityReport r = stability_probe(p, 1.0, 10000, rng);
    CHECK(r.state_bound == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(r.max_state_norm <= 10.0);
    CHECK(r.max_state_norm > 9.99);
  }
}

TEST_CASE("stability bound holds for fresh and briefly trained policies") {
  for (Variant v : {Variant::kSummary, Variant::kBelief, Variant::kBeliefGated, Variant::kBeliefPrivileged}) {
    TrainConfig cfg;
    cfg.variant = v;
    cfg.opt_steps = 30;
    cfg.batch_episodes = 32;
    const TrainResult trained = train_run(cfg, 21);
    for (const Policy* p : {&trained.policy}) {
      Rng rng = make_stream(21, StreamDomain::kCheck, 0);
      const StabilityReport r = stability_probe(*p, 4.0, 10000, rng);
      CHECK(r.within_bounds());
      CHECK(r.max_state_norm > 0.0);
    }
    Rng rng = make_stream(22, StreamDomain::kCheck, 0);
    CHECK(stability_probe(Policy(v, 22), 4.0, 10000, rng).within_bounds());
  }
  Rng rng = make_stream(23, StreamDomain::kCheck, 0);
  CHECK_THROWS_AS(stability_probe(Policy(Variant::kRwkvBelief, 0), 1.0, 10, rng), ContractViolation);
}

TEST_CASE("gradients of every variant match finite differences") {
  SelfCheckOptions opt;
  for (Variant v : kAllVariants) {
    const CheckResult r = check_gradient(v, {}, opt);
    INFO(format_check(r));
    CHECK(r.passed);
    CHECK(r.measured < 1e-4);
  }
  const CheckResult r = check_gradient(Variant::kBeliefGated, AdapterConfig{true, 3}, opt);
  INFO(format_check(r));
  CHECK(r.passed);
}

TEST_CASE("loading parameters of another variant is an integrity error") {
  const Policy belief(Variant::kBelief, 0);
  CHECK_THROWS_AS(Policy(Variant::kBeliefGated, belief.params(), {}), IntegrityError);
  CHECK_NOTHROW(Policy(Variant::kBeliefPrivileged, belief.params(), {}));
}
