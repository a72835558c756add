// Acceptance gate: one PASS / FAIL / BLOCKED line per criterion.
//   acceptance --offline    criteria 1, 2, 7, 8 (no external data)
//   acceptance --datasets   criteria 3-6, needs $APGCN_DATA_DIR/{citeseer,cora_ml}.apgb
// Exit 0 when nothing failed, 1 on any FAIL, 77 when every selected criterion is BLOCKED.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "apgcn/apgcn.hpp"
#include "apgcn/cli.hpp"
#include "test_util.hpp"

using namespace apgcn;
using oracle::dot;
using oracle::max_rel_error;
using oracle::numeric_grad;
using oracle::random_matrix;
namespace fs = std::filesystem;

namespace {

// pinned tolerances
constexpr double kSumTol = 1e-9;
constexpr double kOpGradTol = 1e-6;
constexpr double kModelGradTol = 1e-4;
constexpr double kCrossingGuard = 1e-4;
constexpr double kExactTol = 1e-12;
constexpr double kCiteseerMinAcc = 0.735;
constexpr double kCiteseerMinK = 7.5;
constexpr double kCiteseerMaxK = 10.0;
constexpr double kCiteseerMaxMinutes = 10.0;
constexpr double kCoraMinAcc = 0.830;
constexpr double kCoraMinGap = 0.010;
constexpr double kAlphaMaxSpread = 0.06;

enum class Status { pass, fail, blocked };

struct Outcome {
  Status status = Status::pass;
  std::string detail;
};

struct Check {
  std::string detail;
  bool ok = true;
  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
  Outcome done(const std::string& summary) const { return {ok ? Status::pass : Status::fail, ok ? summary : detail}; }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

const DropoutConfig kNoDropout{0.0, 0.0, 0.0};

ModelParams<double> random_params(std::size_t d, std::size_t hidden, std::size_t c, Rng& r, double q_scale) {
  auto p = ModelParams<double>::init(d, hidden, c, r, 0.0);
  p.b1.value = random_matrix(1, hidden, r, -0.1, 0.1);
  p.b2.value = random_matrix(1, c, r, -0.1, 0.1);
  p.halt_w.value = random_matrix(c, 1, r, -q_scale, q_scale);
  p.halt_b.value = random_matrix(1, 1, r, -q_scale, q_scale);
  return p;
}

// ------------------------------------------------------------ criterion 1

Outcome properties() {
  Check c;
  Rng r(2024);
  for (int t = 0; t < 1000; ++t) {
    const int T = 1 + static_cast<int>(r.below(15));
    std::vector<double> h(static_cast<std::size_t>(T));
    const double hi = r.uniform(0.01, 1.0);
    for (auto& v : h) v = r.uniform(1e-6, hi);
    const double eps = r.uniform(0.001, 0.5);
    const auto s = halting_schedule<double>(h, {T, eps, 0.0});
    double sum = 0;
    for (double v : s.p) sum += v;
    c.require(std::abs(sum - 1.0) <= kSumTol, fmt("sum of weights off by %.3g", std::abs(sum - 1.0)));
    c.require(s.K >= 1 && s.K <= T, "K outside [1, T]");
    c.require(s.S > s.K && s.S <= s.K + 1, "S outside (K, K+1]");
    int prev = s.K;
    for (double e2 = eps + 0.05; e2 < 1.0; e2 += 0.05) {
      const auto w = halting_schedule<double>(h, {T, e2, 0.0});
      c.require(w.K <= prev, "K increased with epsilon");
      prev = w.K;
    }
  }

  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rs(100 + s);
    auto g = oracle::random_connected_graph(10 + rs.below(11), 0.2, 5, 3, s);
    auto in = make_inputs<double>(g);
    auto p = random_params(5, 6, 3, rs, 2.0);

    auto fwd = adaptive_forward(in, p, {10, 0.01, 0.0}, kNoDropout, Mode::eval, rs);
    for (std::size_t i = 0; i < g.n_nodes; ++i) {
      double sum = 0;
      for (int k = 0; k < fwd.trace.K[i]; ++k) sum += fwd.trace.p(i, static_cast<std::size_t>(k));
      c.require(std::abs(sum - 1.0) <= kSumTol, "node weights do not sum to 1");
    }

    const auto z1 = propagate_fixed(in, p, 1);
    auto one = adaptive_forward(in, p, {1, 0.01, 0.0}, kNoDropout, Mode::eval, rs);
    c.require(max_rel_error(one.z_hat, z1) <= kExactTol, "T = 1 does not give z^1");

    auto sat = p;
    sat.halt_w.value.fill(0.0);
    sat.halt_b.value(0, 0) = 20.0;
    auto f = adaptive_forward(in, sat, {10, 0.01, 0.0}, kNoDropout, Mode::eval, rs);
    c.require(max_rel_error(f.z_hat, z1) <= kExactTol, "saturated halting does not give z^1");
    for (std::size_t i = 0; i < g.n_nodes; ++i)
      c.require(f.trace.K[i] == 1 && f.trace.R[i] == 1.0, "saturated halting: K != 1 or R != 1");
  }
  return c.done("1000 schedules and 20 graphs");
}

// ------------------------------------------------------------ criterion 2

double op_gradients() {
  double worst = 0;
  auto track = [&](double e) { worst = std::max(worst, e); };
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng r(500 + s);
    auto x = random_matrix(5, 4, r);
    ParamTensor<double> w(random_matrix(4, 3, r)), b(random_matrix(1, 3, r));
    auto probe = random_matrix(5, 3, r);
    auto fa = [&] { return dot(probe, affine_forward(x, w, b)); };
    auto ga = affine_backward(probe, x, w.value);
    track(max_rel_error(ga.dx, numeric_grad(x, fa)));
    track(max_rel_error(ga.dw, numeric_grad(w.value, fa)));
    track(max_rel_error(ga.db, numeric_grad(b.value, fa)));

    auto y = random_matrix(6, 4, r, -3, 3);
    for (auto& v : y.storage())
      while (std::abs(v) <= 1e-3) v = r.uniform(-3, 3);
    auto probe2 = random_matrix(6, 4, r);
    auto fr = [&] { return dot(probe2, relu(y)); };
    track(max_rel_error(relu_backward(probe2, y), numeric_grad(y, fr)));
    auto fs = [&] { return dot(probe2, sigmoid(y)); };
    track(max_rel_error(sigmoid_backward(probe2, sigmoid(y)), numeric_grad(y, fs)));

    DropoutMask<double> mask;
    dropout_forward(y, 0.5, Mode::train, r, mask);
    const auto fixed = mask;
    auto fd = [&] {
      Matrix<double> v = y;
      for (std::size_t i = 0; i < v.size(); ++i) v.storage()[i] *= fixed.scale[i];
      return dot(probe2, v);
    };
    track(max_rel_error(dropout_backward(probe2, mask), numeric_grad(y, fd)));

    auto logits = random_matrix(8, 3, r, -3, 3);
    std::vector<std::int32_t> labels(8);
    for (auto& v : labels) v = static_cast<std::int32_t>(r.below(3));
    std::vector<std::size_t> m{0, 2, 3, 5, 7};
    auto fc = [&] { return softmax_cross_entropy(logits, labels, m).loss; };
    track(max_rel_error(softmax_cross_entropy(logits, labels, m).dlogits, numeric_grad(logits, fc)));

    auto g = oracle::random_connected_graph(10 + r.below(6), 0.25, 3, 2, s);
    const auto op = build_operator<double>(g);
    auto z = random_matrix(g.n_nodes, 3, r);
    auto probe3 = random_matrix(g.n_nodes, 3, r);
    auto fp = [&] { return dot(probe3, propagate(op, z)); };
    track(max_rel_error(propagate(op, probe3), numeric_grad(z, fp)));
  }
  return worst;
}

double crossing_margin(const HaltingTrace<double>& tr, const HaltingConfig& cfg) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < tr.n_nodes(); ++i) {
    double cum = 0;
    for (int k = 1; k <= tr.K[i]; ++k) {
      cum += tr.h(i, static_cast<std::size_t>(k - 1));
      if (k < cfg.max_steps) margin = std::min(margin, std::abs(cum - (1.0 - cfg.epsilon)));
    }
  }
  return margin;
}

/// Max relative error of the full penalised loss gradient on one graph, or
/// nullopt when the instance is too close to a halting threshold.
std::optional<double> model_gradient(std::uint64_t seed) {
  Rng r(seed);
  const std::size_t n = 10 + r.below(6);
  auto g = oracle::random_connected_graph(n, 0.2, 5, 3, seed);
  auto in = make_inputs<double>(g);
  auto p = random_params(5, 6, 3, r, 1.5);
  p.halt_b.value(0, 0) = r.uniform(-2.5, 0.5);
  const HaltingConfig cfg{4, 0.01, 0.01};
  std::vector<std::size_t> mask;
  for (std::size_t i = 0; i < n; i += 2) mask.push_back(i);

  auto fwd = adaptive_forward(in, p, cfg, kNoDropout, Mode::eval, r);
  if (crossing_margin(fwd.trace, cfg) < kCrossingGuard) return std::nullopt;
  const auto base_K = fwd.trace.K;
  bool stable = true;
  auto loss = [&] {
    Rng unused(0);
    auto f = adaptive_forward(in, p, cfg, kNoDropout, Mode::eval, unused);
    stable &= f.trace.K == base_K;
    return penalized_loss(f.z_hat, g.labels, mask, f.trace, cfg).total;
  };
  auto l = penalized_loss(fwd.z_hat, g.labels, mask, fwd.trace, cfg);
  p.zero_grad();
  adaptive_backward(fwd, l.dlogits, cfg, p, in.op);
  double worst = 0;
  p.for_each([&](ParamTensor<double>& t) {
    const auto analytic = t.grad;
    worst = std::max(worst, max_rel_error(analytic, numeric_grad(t.value, loss)));
  });
  if (!stable) return std::nullopt;
  return worst;
}

Outcome gradients() {
  Check c;
  const double ops = op_gradients();
  c.require(ops < kOpGradTol, fmt("op gradient rel. error %.3g >= 1e-6", ops));
  double worst = 0;
  int checked = 0;
  for (std::uint64_t s = 1; checked < 20 && s < 500; ++s) {
    if (auto e = model_gradient(s)) {
      worst = std::max(worst, *e);
      ++checked;
    }
  }
  c.require(checked == 20, "fewer than 20 graphs cleared the crossing guard");
  c.require(worst < kModelGradTol, fmt("model gradient rel. error %.3g >= 1e-4", worst));
  return c.done(fmt("ops max rel. error %.2g, model max rel. error %.2g over 20 graphs", ops, worst));
}

// ------------------------------------------------------------ criterion 7

Outcome sbm_sanity() {
  SbmSpec spec;
  spec.blocks = 3;
  spec.nodes_per_block = 100;
  spec.p_in = 0.05;
  spec.p_out = 0.005;
  spec.feature_noise = 3.0;
  spec.seed = 7;
  const auto g = generate_sbm(spec);
  TrainConfig cfg;
  cfg.alpha = 0.001;
  auto plan = ExperimentPlan::reduced("sbm", cfg, 5, 1);
  plan.n_per_class = 5;
  plan.visible_size = 200;
  plan.stopping_size = 80;
  const auto ap = summarize(run_grid<float>(plan, g));
  plan.config.model = ModelKind::fixed;
  plan.config.fixed_steps = 0;
  const auto mlp = summarize(run_grid<float>(plan, g));
  Check c;
  c.require(ap.n_runs == 5 && mlp.n_runs == 5, "runs failed");
  c.require(mlp.accuracy.mean < ap.accuracy.mean,
            fmt("MLP %.4f not below adaptive %.4f", mlp.accuracy.mean, ap.accuracy.mean));
  return c.done(fmt("adaptive %.4f vs MLP %.4f mean test accuracy (5 splits)", ap.accuracy.mean, mlp.accuracy.mean));
}

// ------------------------------------------------------------ criterion 8

Outcome infrastructure() {
  Check c;
  SbmSpec spec;
  spec.blocks = 3;
  spec.nodes_per_block = 40;
  spec.p_in = 0.2;
  spec.p_out = 0.02;
  spec.feature_noise = 1.0;
  spec.seed = 3;
  const auto g = read_bundle(write_bundle(generate_sbm(spec)));
  const auto bytes = write_bundle(g);
  c.require(write_bundle(read_bundle(bytes)) == bytes, "round trip is not bitwise identical");
  c.require(read_bundle(bytes) == g, "round trip changed the graph");

  Rng r(8);
  int detected = 0;
  for (int t = 0; t < 100; ++t) {
    auto bad = bytes;
    const auto at = r.below(bad.size());
    bad[at] ^= static_cast<std::uint8_t>(1 + r.below(255));
    try {
      read_bundle(bad);
    } catch (const DataError& e) {
      detected += e.code() == DataErrc::crc_mismatch;
    }
  }
  c.require(detected == 100, fmt("only %.0f of 100 byte flips reported as CRC mismatch", detected));

  const auto dir = fs::temp_directory_path() / ("apgcn_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_bundle(g, dir / "g.apgb");
  cli::TrainOptions o;
  o.bundle = (dir / "g.apgb").string();
  o.split = {5, 80, 30};
  o.config.max_epochs = 80;
  o.config.patience = 20;
  o.config.alpha = 0.001;
  std::ostringstream a, b;
  cli::cmd_train(o, a);
  cli::cmd_train(o, b);
  c.require(!a.str().empty() && a.str() == b.str(), "cmd_train reruns differ");

  const std::string cmd = std::string("'") + APGCN_TOOL + "' train --bundle '" + o.bundle +
                          "' --n-per-class 5 --visible-size 80 --stopping-size 30 --max-epochs 80 --patience 20 --out '";
  const auto run = [&](const std::string& name) {
    if (std::system((cmd + (dir / name).string() + "'").c_str()) != 0) return std::string();
    std::ifstream in(dir / name, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const auto first = run("a.jsonl");
  c.require(!first.empty() && first == run("b.jsonl"), "tool reruns differ");
  fs::remove_all(dir);
  return c.done(fmt("%.0f-byte bundle round trip, 100/100 flips detected, %.0f-byte identical reruns",
                    static_cast<double>(bytes.size()), static_cast<double>(a.str().size())));
}

// ------------------------------------------------------------ criteria 3-6

std::optional<GraphBundle> dataset(const char* name) {
  const char* dir = std::getenv("APGCN_DATA_DIR");
  if (!dir) return std::nullopt;
  const auto path = fs::path(dir) / (std::string(name) + ".apgb");
  if (!fs::exists(path)) return std::nullopt;
  return load_bundle(path);
}

Outcome blocked(const char* name) {
  return {Status::blocked, std::string("needs $APGCN_DATA_DIR/") + name + ".apgb"};
}

Outcome citeseer() {
  auto g = dataset("citeseer");
  if (!g) return blocked("citeseer");
  TrainConfig cfg;
  cfg.alpha = 0.001;
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = summarize(run_grid<float>(ExperimentPlan::reduced("citeseer", cfg, 5, 1), *g));
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  Check c;
  c.require(s.n_runs == 5, "runs failed");
  c.require(s.accuracy.mean >= kCiteseerMinAcc, fmt("accuracy %.4f < 0.735", s.accuracy.mean));
  c.require(s.mean_K >= kCiteseerMinK && s.mean_K <= kCiteseerMaxK, fmt("mean K %.3f outside [7.5, 10]", s.mean_K));
  c.require(minutes < kCiteseerMaxMinutes, fmt("took %.1f min", minutes));
  return c.done(fmt("accuracy %.4f, mean K %.3f, %.1f min", s.accuracy.mean, s.mean_K, minutes));
}

Outcome cora_ml() {
  auto g = dataset("cora_ml");
  if (!g) return blocked("cora_ml");
  TrainConfig cfg;
  cfg.alpha = 0.005;
  auto plan = ExperimentPlan::reduced("cora_ml", cfg, 5, 1);
  const auto ap = summarize(run_grid<float>(plan, *g));
  plan.config.model = ModelKind::fixed;
  plan.config.fixed_steps = 2;
  const auto fixed = summarize(run_grid<float>(plan, *g));
  Check c;
  c.require(ap.n_runs == 5 && fixed.n_runs == 5, "runs failed");
  c.require(ap.accuracy.mean >= kCoraMinAcc, fmt("accuracy %.4f < 0.830", ap.accuracy.mean));
  c.require(ap.accuracy.mean - fixed.accuracy.mean >= kCoraMinGap,
            fmt("gap over fixed K=2 is %.4f < 0.010", ap.accuracy.mean - fixed.accuracy.mean));
  return c.done(fmt("accuracy %.4f vs fixed K=2 %.4f", ap.accuracy.mean, fixed.accuracy.mean));
}

Outcome alpha_direction() {
  auto g = dataset("cora_ml");
  if (!g) return blocked("cora_ml");
  const auto pts = sweep_alpha<float>(ExperimentPlan::reduced("cora_ml", {}, 3, 1), *g, {0.05, 0.005, 0.0005});
  Check c;
  double lo = 1, hi = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c.require(pts[i].summary.n_runs == 3, "runs failed");
    lo = std::min(lo, pts[i].summary.accuracy.mean);
    hi = std::max(hi, pts[i].summary.accuracy.mean);
    if (i) c.require(pts[i].summary.mean_K > pts[i - 1].summary.mean_K, "mean K not strictly decreasing in alpha");
  }
  c.require(hi - lo <= kAlphaMaxSpread, fmt("accuracy spread %.4f > 0.06", hi - lo));
  return c.done(fmt("mean K %.3f / %.3f / %.3f", pts[0].summary.mean_K, pts[1].summary.mean_K, pts[2].summary.mean_K) +
                fmt(" at alpha 0.05 / 0.005 / 0.0005, spread %.4f", hi - lo));
}

Outcome train_size_direction() {
  auto g = dataset("cora_ml");
  if (!g) return blocked("cora_ml");
  const auto pts = sweep_train_size<float>(ExperimentPlan::reduced("cora_ml", {}, 3, 1), *g, {5, 20, 60});
  Check c;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    c.require(pts[i].summary.n_runs == 3, "runs failed");
    if (i)
      c.require(pts[i].summary.accuracy.mean > pts[i - 1].summary.accuracy.mean,
                "accuracy not strictly increasing in n_per_class");
  }
  c.require(pts[0].summary.mean_K > pts[2].summary.mean_K, "mean K at n=5 not above n=60");
  return c.done(fmt("accuracy %.4f / %.4f / %.4f", pts[0].summary.accuracy.mean, pts[1].summary.accuracy.mean,
                    pts[2].summary.accuracy.mean) +
                fmt(", mean K %.3f / %.3f at n = 5 / 60", pts[0].summary.mean_K, pts[2].summary.mean_K));
}

struct Criterion {
  int id;
  const char* name;
  bool offline;
  Outcome (*fn)();
};

const Criterion kCriteria[] = {
    {1, "property suite", true, properties},
    {2, "gradient suite", true, gradients},
    {3, "citeseer reduced plan", false, citeseer},
    {4, "cora_ml reduced plan", false, cora_ml},
    {5, "alpha sensitivity direction", false, alpha_direction},
    {6, "train size direction", false, train_size_direction},
    {7, "sbm structural sanity", true, sbm_sanity},
    {8, "infrastructure", true, infrastructure},
};

}  // namespace

int main(int argc, char** argv) {
  bool want_offline = true, want_datasets = true;
  if (argc > 1) {
    const std::string mode = argv[1];
    if (mode == "--offline") want_datasets = false;
    else if (mode == "--datasets") want_offline = false;
    else {
      std::fprintf(stderr, "usage: %s [--offline | --datasets]\n", argv[0]);
      return 2;
    }
  }
  int failed = 0, blocked_n = 0, ran = 0;
  for (const auto& cr : kCriteria) {
    if (cr.offline ? !want_offline : !want_datasets) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.fn();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "BLOCKED";
    std::printf("criterion %d %-28s %-7s %s (%.1fs)\n", cr.id, cr.name, tag, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.status == Status::fail;
    blocked_n += o.status == Status::blocked;
  }
  if (failed) return 1;
  return ran > 0 && blocked_n == ran ? 77 : 0;
}
