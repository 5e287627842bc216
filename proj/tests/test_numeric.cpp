#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "bsrl/adam.hpp"
#include "bsrl/checkpoint.hpp"
#include "bsrl/errors.hpp"
#include "bsrl/gradcheck.hpp"
#include "bsrl/hashing.hpp"
#include "bsrl/layers.hpp"
#include "bsrl/param_store.hpp"
#include "bsrl/tape.hpp"

using namespace bsrl;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& tag) {
  auto d = fs::temp_directory_path() / ("bsrl-test-numeric-" + tag);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("param layout slices are contiguous and cover the vector") {
  ParamLayout l;
  const Slice a = l.add("a", 3, 2);
  const Slice b = l.add("b", 4);
  const Slice c = l.add("c", 1, 5);
  CHECK(a.offset == 0);
  CHECK(b.offset == 6);
  CHECK(c.offset == 10);
  CHECK(l.size() == 15);
  CHECK_THROWS_AS(l.add("a", 1), ContractViolation);
  CHECK_THROWS_AS(l.add("z", 0), ContractViolation);

  ParamStore s(l);
  CHECK(s.size() == 15);
  CHECK(s.slice("b") == b);
  CHECK(s.contains("c"));
  CHECK_FALSE(s.contains("d"));
  s.view("b")[2] = 4.5;
  CHECK(s.values()[8] == 4.5);
}

TEST_CASE("dense layer") {
  ParamLayout l;
  const Slice w = l.add("w", 2, 2);
  const Slice b = l.add("b", 2);
  std::vector<double> p(l.size(), 0.0);
  Tape tape(p);
  const double in[2] = {-1.0, 2.0};

  SUBCASE("zero weights give zeros") {
    const Var y = dense(tape, tape.constant(in), w, b, Activation::kIdentity);
    CHECK(tape.value(y)[0] == 0.0);
    CHECK(tape.value(y)[1] == 0.0);
  }
  SUBCASE("identity weight then relu") {
    p[0] = p[3] = 1.0;
    tape.reset(p);
    const Var y = dense(tape, tape.constant(in), w, b, Activation::kRelu);
    CHECK(tape.value(y)[0] == 0.0);
    CHECK(tape.value(y)[1] == 2.0);
  }
}

TEST_CASE("dense layer matches a hand-written matrix product") {
  ParamLayout l;
  const Slice w = l.add("w", 3, 3);
  const Slice b = l.add("b", 3);
  Rng rng = make_stream(1, StreamDomain::kCheck, 0);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> p(l.size());
  for (double& v : p) v = u(rng);
  const double x[3] = {u(rng), u(rng), u(rng)};
  Tape tape(p);
  for (Activation act : {Activation::kIdentity, Activation::kTanh, Activation::kRelu, Activation::kSoftplus}) {
    tape.reset(p);
    const Var y = dense(tape, tape.constant(x), w, b, act);
    for (int i = 0; i < 3; ++i) {
      double acc = p[9 + i];
      for (int j = 0; j < 3; ++j) acc += p[3 * i + j] * x[j];
      double want = acc;
      if (act == Activation::kTanh) want = std::tanh(acc);
      if (act == Activation::kRelu) want = acc > 0 ? acc : 0.0;
      if (act == Activation::kSoftplus) want = std::log1p(std::exp(acc));
      CHECK(tape.value(y)[i] == doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("categorical head") {
  Rng rng = make_stream(2, StreamDomain::kCheck, 0);
  const double uniform[3] = {0.0, 0.0, 0.0};
  const auto p = softmax(uniform);
  for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(entropy_of(uniform) - std::log(3.0)) < 1e-12);
  const auto s = categorical_head(uniform, rng);
  CHECK(s.log_prob == doctest::Approx(-std::log(3.0)));
  CHECK(s.entropy == doctest::Approx(std::log(3.0)));

  const double peaked[3] = {10.0, 0.0, 0.0};
  CHECK(softmax(peaked)[0] == doctest::Approx(0.99990).epsilon(1e-5));
  const double onehot[3] = {50.0, 0.0, 0.0};
  CHECK(entropy_of(onehot) < 1e-10);

  const double bad[3] = {0.0, std::nan(""), 1.0};
  CHECK_THROWS_AS(categorical_head(bad, rng), NumericError);
  const double inf[3] = {0.0, INFINITY, 1.0};
  CHECK_THROWS_AS(softmax(inf), NumericError);
}

TEST_CASE("softmax is normalized and positive") {
  Rng rng = make_stream(3, StreamDomain::kCheck, 0);
  std::uniform_real_distribution<double> u(-40.0, 40.0);
  for (int c = 0; c < 1000; ++c) {
    const double l[3] = {u(rng), u(rng), u(rng)};
    const auto p = softmax(l);
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-12);
    for (double v : p) CHECK(v > 0.0);
  }
}

TEST_CASE("categorical head samples in proportion to the probabilities") {
  Rng rng = make_stream(4, StreamDomain::kCheck, 0);
  const double l[3] = {0.5, -0.2, 1.0};
  const auto p = softmax(l);
  int counts[3] = {0, 0, 0};
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[categorical_head(l, rng).action];
  for (int a = 0; a < 3; ++a) {
    const double se = std::sqrt(p[a] * (1 - p[a]) / n);
    CHECK(std::abs(counts[a] / double(n) - p[a]) < 4 * se);
  }
}

TEST_CASE("backward of a square") {
  ParamLayout l;
  const Slice t = l.add("theta", 1);
  std::vector<double> p{3.0};
  Tape tape(p);
  const Var th = tape.param(t);
  const Var loss = tape.sum(tape.mul(th, th));
  std::vector<double> g(1, 0.0);
  tape.backward(loss, g);
  CHECK(g[0] == 6.0);
}

TEST_CASE("softmax cross-entropy gradient is p minus one-hot") {
  ParamLayout l;
  const Slice s = l.add("logits", 3);
  Rng rng = make_stream(5, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> p{n(rng), n(rng), n(rng)};
    const int target = c % 3;
    Tape tape(p);
    const Var ce = tape.scale(tape.pick(tape.log_softmax(tape.param(s)), target), -1.0);
    std::vector<double> g(3, 0.0);
    tape.backward(ce, g);
    const auto prob = softmax(p);
    for (int a = 0; a < 3; ++a) {
      CHECK(g[a] == doctest::Approx(prob[a] - (a == target ? 1.0 : 0.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward preconditions") {
  std::vector<double> p{1.0, 2.0};
  std::vector<double> g(2, 0.0);
  Tape empty;
  CHECK_THROWS_AS(empty.backward(Var{0}, g), ContractViolation);
  Tape tape(p);
  ParamLayout l;
  const Slice s = l.add("x", 2);
  const Var v = tape.param(s);
  CHECK_THROWS_AS(tape.backward(v, g), ContractViolation);  // not a scalar
  std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(tape.backward(tape.sum(v), wrong), ContractViolation);
}

TEST_CASE("non-participating parameters get zero gradient and reruns are bit-identical") {
  ParamLayout l;
  const Slice a = l.add("a", 2);
  l.add("unused", 3);
  std::vector<double> p{0.3, -0.7, 9.0, 9.0, 9.0};
  std::vector<double> g1(5, 0.0), g2(5, 0.0);
  for (auto* g : {&g1, &g2}) {
    Tape tape(p);
    const Var x = tape.param(a);
    const Var y = tape.sum(tape.mul(tape.tanh(x), tape.exp(x)));
    tape.backward(y, *g);
  }
  CHECK(g1[2] == 0.0);
  CHECK(g1[3] == 0.0);
  CHECK(g1[4] == 0.0);
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * 5) == 0);
}

TEST_CASE("every tape primitive passes a finite-difference check") {
  ParamLayout l;
  const Slice w = l.add("w", 3, 4);
  const Slice b = l.add("b", 3);
  const Slice v = l.add("v", 4);
  Rng rng = make_stream(6, StreamDomain::kCheck, 0);
  std::uniform_real_distribution<double> u(0.2, 1.2);
  std::vector<double> p(l.size());
  for (double& x : p) x = u(rng);

  const auto build = [&](Tape& t) {
    const Var x = t.param(v);
    const Var h = t.affine(w, b, x);
    const Var a = t.unary(Unary::kSoftplus, h);
    const Var r = t.unary(Unary::kReluSquare, t.shift(h, -1.5));
    const Var s = t.sigmoid(t.matvec(w, t.square(x)));
    const Var q = t.div(t.add(a, s), t.shift(t.exp(t.scale(r, 0.1)), 0.5));
    const Var c = t.concat(q, t.unary(Unary::kRsqrt, t.shift(t.square(x), 1.0)));
    const Var m = t.sub(t.slice(c, 1, 3), t.log(t.shift(t.slice(c, 4, 3), 0.1)));
    const Var ls = t.log_softmax(m);
    const Var bc = t.mul(t.pick(ls, 2), t.tanh(t.sum(x)));
    return t.sum(t.add(t.mul(m, bc), t.unary(Unary::kRelu, m)));
  };
  const auto loss = [&](std::span<const double> q) {
    Tape t(q);
    return t.item(build(t));
  };
  const auto grad = [&](std::span<const double> q) {
    Tape t(q);
    std::vector<double> g(q.size(), 0.0);
    t.backward(build(t), g);
    return g;
  };
  GradCheckOptions opt;
  const auto rep = finite_diff_check(loss, grad, p, opt, rng);
  CHECK(rep.coordinates_checked == p.size());
  CHECK(rep.passed());
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("finite-difference check on a quadratic and a deliberate error") {
  std::vector<double> p(100);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = 0.02 * static_cast<double>(i) - 1.0 + 0.001;
  const auto loss = [](std::span<const double> q) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += 0.5 * static_cast<double>(1 + i % 3) * q[i] * q[i];
    return s;
  };
  const auto grad = [](std::span<const double> q) {
    std::vector<double> g(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) g[i] = static_cast<double>(1 + i % 3) * q[i];
    return g;
  };
  Rng rng = make_stream(7, StreamDomain::kCheck, 0);
  GradCheckOptions opt;
  const auto ok = finite_diff_check(loss, grad, p, opt, rng);
  CHECK(ok.coordinates_checked == 64);
  CHECK(ok.max_rel_error < 1e-8);
  CHECK(ok.passed());

  const auto broken = [&](std::span<const double> q) {
    auto g = grad(q);
    for (double& x : g) x *= 1.01;
    return g;
  };
  const auto bad = finite_diff_check(loss, broken, p, opt, rng);
  CHECK_FALSE(bad.passed());
  CHECK(bad.failures.size() > 0);
  CHECK(bad.max_rel_error > 1e-3);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState st(2, {});
    adam_step(p, g, st);
    CHECK(p == std::vector<double>{1.0, -2.0});
    CHECK(st.step == 1);
    adam_step(p, g, st);
    CHECK(st.step == 2);
  }
  SUBCASE("first bias-corrected step moves by lr") {
    std::vector<double> p{0.5};
    const std::vector<double> g{1.0};
    AdamConfig cfg;
    cfg.lr = 0.001;
    AdamState st(1, cfg);
    adam_step(p, g, st);
    // m_hat = 1, v_hat = 1 -> lr * 1 / (1 + eps)
    CHECK(0.5 - p[0] == doctest::Approx(0.001 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("dimension mismatch") {
    std::vector<double> p{0.0, 0.0};
    const std::vector<double> g{1.0};
    AdamState st(2, {});
    CHECK_THROWS_AS(adam_step(p, g, st), ContractViolation);
  }
  SUBCASE("identical runs give identical trajectories") {
    std::vector<double> a{0.3, -0.1, 2.0}, b = a;
    AdamState sa(3, {}), sb(3, {});
    for (int k = 0; k < 50; ++k) {
      const std::vector<double> ga{std::sin(k * 0.3), a[1] * a[2], -a[0]};
      const std::vector<double> gb{std::sin(k * 0.3), b[1] * b[2], -b[0]};
      adam_step(a, ga, sa);
      adam_step(b, gb, sb);
    }
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 3) == 0);
  }
}

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip is bit-exact") {
  ParamLayout l;
  l.add("w", 3, 4);
  l.add("b", 3);
  ParamStore s(l);
  Rng rng = make_stream(8, StreamDomain::kCheck, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : s.values()) v = n(rng);
  s.values()[0] = -0.0;
  s.values()[1] = 1e-310;  // subnormal
  const auto dir = scratch_dir("roundtrip");
  const auto path = dir / "p.ckpt";
  save_checkpoint(path, s, {"abc123", 42, {{"variant", "belief"}}});
  CHECK(fs::exists(checkpoint_blob_path(path)));
  CHECK(fs::file_size(checkpoint_blob_path(path)) == 15 * 8);
  const Checkpoint c = load_checkpoint(path);
  CHECK(c.info.config_hash == "abc123");
  CHECK(c.info.seed == 42);
  CHECK(c.info.meta.at("variant") == "belief");
  CHECK(c.params.layout() == l);
  CHECK(std::memcmp(c.params.values().data(), s.values().data(), 15 * sizeof(double)) == 0);

  const std::string text = read_file(path);
  CHECK(text.find("param = w 3 4 0") != std::string::npos);
  CHECK(text.find("param = b 3 1 12") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint integrity failures") {
  ParamLayout l;
  l.add("w", 4);
  ParamStore s(l);
  const auto dir = scratch_dir("integrity");
  const auto path = dir / "p.ckpt";
  save_checkpoint(path, s, {"h", 0, {}});

  SUBCASE("corrupted blob") {
    std::string blob = read_file(checkpoint_blob_path(path));
    blob[3] ^= 1;
    write_file(checkpoint_blob_path(path), blob);
    CHECK_THROWS_AS(load_checkpoint(path), IntegrityError);
  }
  SUBCASE("truncated blob") {
    std::string blob = read_file(checkpoint_blob_path(path));
    write_file(checkpoint_blob_path(path), blob.substr(0, 8));
    CHECK_THROWS_AS(load_checkpoint(path), IntegrityError);
  }
  SUBCASE("missing blob") {
    fs::remove(checkpoint_blob_path(path));
    CHECK_THROWS_AS(load_checkpoint(path), IntegrityError);
  }
  fs::remove_all(dir);
}
