#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "apgcn/graph.hpp"
#include "apgcn/model.hpp"
#include "apgcn/rng.hpp"
#include "apgcn/training.hpp"

namespace apgcn {

/// Seeded visible/invisible split. A random visible set of `visible_size`
/// nodes holds n_per_class training nodes per class, then `stopping_size`
/// early-stopping nodes; the rest of the visible set is validation and every
/// node outside it is test. All index lists are returned sorted.
inline Splits make_splits(const GraphBundle& g, std::uint64_t seed, std::size_t n_per_class, std::size_t visible_size,
                          std::size_t stopping_size) {
  if (n_per_class == 0) throw InvalidArgument("make_splits: n_per_class must be >= 1");
  if (visible_size > g.n_nodes) throw InvalidArgument("make_splits: visible_size exceeds node count");

  std::vector<std::size_t> order(g.n_nodes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0x5EED5EEDULL));
  shuffle(order.begin(), order.end(), rng);
  const std::vector<std::size_t> visible(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(visible_size));

  std::vector<std::size_t> present(g.n_classes, 0);
  for (auto y : g.labels) ++present[static_cast<std::size_t>(y)];

  Splits s;
  std::vector<std::size_t> taken(g.n_classes, 0);
  std::vector<char> used(g.n_nodes, 0);
  for (auto i : visible) {
    const auto y = static_cast<std::size_t>(g.labels[i]);
    if (taken[y] < n_per_class) {
      ++taken[y];
      used[i] = 1;
      s.train.push_back(i);
    }
  }
  for (std::size_t c = 0; c < g.n_classes; ++c)
    if (present[c] > 0 && taken[c] < n_per_class)
      throw InvalidArgument("make_splits: class " + std::to_string(c) + " has only " + std::to_string(taken[c]) +
                            " visible nodes, need " + std::to_string(n_per_class));
  for (auto i : visible) {
    if (used[i]) continue;
    if (s.stop.size() < stopping_size) {
      s.stop.push_back(i);
    } else {
      s.valid.push_back(i);
    }
    used[i] = 1;
  }
  if (s.stop.size() < stopping_size) throw InvalidArgument("make_splits: visible set too small for stopping split");
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    if (!used[i]) s.test.push_back(i);
  for (auto* v : {&s.train, &s.stop, &s.valid, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

struct ExperimentPlan {
  std::string dataset;
  std::vector<std::uint64_t> split_seeds;
  std::vector<std::uint64_t> init_seeds;
  std::size_t n_per_class = 20;
  std::size_t visible_size = 1500;
  std::size_t stopping_size = 500;
  TrainConfig config;

  std::size_t n_runs() const { return split_seeds.size() * init_seeds.size(); }

  /// 20 split seeds x 5 initialisations.
  static ExperimentPlan full(std::string dataset, TrainConfig cfg) {
    ExperimentPlan p;
    p.dataset = std::move(dataset);
    for (std::uint64_t s = 1; s <= 20; ++s) p.split_seeds.push_back(s);
    for (std::uint64_t s = 1; s <= 5; ++s) p.init_seeds.push_back(s);
    p.config = cfg;
    return p;
  }

  static ExperimentPlan reduced(std::string dataset, TrainConfig cfg, std::size_t n_splits = 5,
                                std::size_t n_inits = 1) {
    ExperimentPlan p;
    p.dataset = std::move(dataset);
    for (std::uint64_t s = 1; s <= n_splits; ++s) p.split_seeds.push_back(s);
    for (std::uint64_t s = 1; s <= n_inits; ++s) p.init_seeds.push_back(s);
    p.config = cfg;
    return p;
  }

  void validate() const {
    if (split_seeds.empty() || init_seeds.empty()) throw InvalidArgument("ExperimentPlan: no seeds");
    if (n_per_class == 0) throw InvalidArgument("ExperimentPlan: n_per_class must be >= 1");
    config.validate();
  }
};

struct RunResult {
  std::uint64_t split_seed = 0;
  std::uint64_t init_seed = 0;
  bool ok = true;
  bool numerical_failure = false;
  std::string error;
  double test_accuracy = 0.0;
  double mean_K = 0.0;
  std::vector<std::size_t> K_histogram;
  int epochs_run = 0;
  int best_epoch = 0;
  double wall_time_ms_per_epoch = 0.0;
};

/// Trains and evaluates one (split, init) pair.
template <typename T = float>
RunResult run_single(const GraphBundle& g, const ModelInputs<T>& in, const ExperimentPlan& plan,
                     std::uint64_t split_seed, std::uint64_t init_seed, std::vector<EpochRecord>* history = nullptr) {
  RunResult r;
  r.split_seed = split_seed;
  r.init_seed = init_seed;
  const auto& cfg = plan.config;
  const Splits splits = make_splits(g, split_seed, plan.n_per_class, plan.visible_size, plan.stopping_size);
  Rng rng(mix_seed(split_seed, init_seed));
  auto params = ModelParams<T>::init(g.d_features(), cfg.hidden, g.n_classes, rng, cfg.l2_first_layer,
                                     cfg.l2_include_bias, cfg.halting_bias());
  auto trained = train(in, g.labels, splits, std::move(params), cfg, rng);
  const auto ev = evaluate(in, g.labels, trained.params, cfg, splits.test);
  r.test_accuracy = ev.accuracy;
  r.mean_K = ev.mean_K;
  r.K_histogram = ev.K_histogram;
  r.epochs_run = trained.epochs_run;
  r.best_epoch = trained.best_epoch;
  r.wall_time_ms_per_epoch = trained.ms_per_epoch;
  if (history) *history = std::move(trained.history);
  return r;
}

struct GridOptions {
  std::size_t jobs = 1;
  /// Record failures and keep going instead of rethrowing.
  bool continue_on_error = false;
};

/// Every (split_seed, init_seed) pair, in split-major order. Each run owns
/// its RNG, so results do not depend on `jobs`.
template <typename T = float>
std::vector<RunResult> run_grid(const ExperimentPlan& plan, const GraphBundle& g, const GridOptions& opts = {}) {
  plan.validate();
  const ModelInputs<T> in = make_inputs<T>(g, plan.config.op_kind);
  std::vector<std::pair<std::uint64_t, std::uint64_t>> jobs;
  for (auto s : plan.split_seeds)
    for (auto i : plan.init_seeds) jobs.emplace_back(s, i);

  std::vector<RunResult> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<char> numerical(jobs.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      try {
        results[k] = run_single<T>(g, in, plan, jobs[k].first, jobs[k].second);
      } catch (const std::exception& e) {
        numerical[k] = dynamic_cast<const NumericalError*>(&e) != nullptr;
        results[k].numerical_failure = numerical[k];
        results[k].split_seed = jobs[k].first;
        results[k].init_seed = jobs[k].second;
        results[k].ok = false;
        results[k].error = e.what();
        errors[k] = "run split_seed=" + std::to_string(jobs[k].first) +
                    " init_seed=" + std::to_string(jobs[k].second) + ": " + e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(opts.jobs, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (!opts.continue_on_error)
    for (std::size_t k = 0; k < errors.size(); ++k) {
      if (errors[k].empty()) continue;
      if (numerical[k]) throw NumericalError(errors[k]);
      throw InvalidArgument(errors[k]);
    }
  return results;
}

struct ConfidenceInterval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap of the mean. The input is sorted before resampling
/// so the result does not depend on its order.
inline ConfidenceInterval bootstrap_ci(std::vector<double> values, double level = 0.95, std::size_t resamples = 1000,
                                       std::uint64_t seed = 0) {
  if (values.empty()) throw InvalidArgument("bootstrap_ci: empty input");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("bootstrap_ci: level must be in (0, 1)");
  if (resamples == 0) throw InvalidArgument("bootstrap_ci: need at least one resample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  ConfidenceInterval ci;
  ci.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);

  Rng rng(mix_seed(seed, 0xB0075));
  std::vector<double> means(resamples);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += values[rng.below(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  const auto pick = [&](double q) {
    auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(resamples)));
    return means[std::min(idx, resamples - 1)];
  };
  ci.lo = pick(tail);
  ci.hi = pick(1.0 - tail);
  return ci;
}

/// Aggregate of a grid: accuracy CI over successful runs, mean budget, and
/// K-density (average over runs of the per-run fraction of nodes at each K).
struct GridSummary {
  std::size_t n_runs = 0;
  std::size_t n_failed = 0;
  ConfidenceInterval accuracy;
  double mean_K = 0.0;
  std::vector<double> K_density;
};

inline GridSummary summarize(const std::vector<RunResult>& runs, std::uint64_t bootstrap_seed = 0) {
  GridSummary s;
  std::vector<double> acc;
  for (const auto& r : runs) {
    if (!r.ok) {
      ++s.n_failed;
      continue;
    }
    acc.push_back(r.test_accuracy);
    s.mean_K += r.mean_K;
    if (s.K_density.size() < r.K_histogram.size()) s.K_density.resize(r.K_histogram.size(), 0.0);
    double total = 0.0;
    for (auto c : r.K_histogram) total += static_cast<double>(c);
    for (std::size_t k = 0; k < r.K_histogram.size(); ++k)
      if (total > 0) s.K_density[k] += static_cast<double>(r.K_histogram[k]) / total;
  }
  s.n_runs = acc.size();
  if (acc.empty()) return s;
  s.accuracy = bootstrap_ci(acc, 0.95, 1000, bootstrap_seed);
  s.mean_K /= static_cast<double>(acc.size());
  for (auto& d : s.K_density) d /= static_cast<double>(acc.size());
  return s;
}

struct SweepPoint {
  double value = 0.0;  // alpha or n_per_class
  std::vector<RunResult> runs;
  GridSummary summary;
};

template <typename T = float>
std::vector<SweepPoint> sweep_alpha(const ExperimentPlan& plan, const GraphBundle& g, const std::vector<double>& alphas,
                                    const GridOptions& opts = {}) {
  if (alphas.empty()) throw InvalidArgument("sweep_alpha: no alpha values");
  std::vector<SweepPoint> out;
  for (double a : alphas) {
    ExperimentPlan p = plan;
    p.config.alpha = a;
    SweepPoint pt;
    pt.value = a;
    pt.runs = run_grid<T>(p, g, opts);
    pt.summary = summarize(pt.runs);
    out.push_back(std::move(pt));
  }
  return out;
}

template <typename T = float>
std::vector<SweepPoint> sweep_train_size(const ExperimentPlan& plan, const GraphBundle& g,
                                         const std::vector<std::size_t>& sizes, const GridOptions& opts = {}) {
  if (sizes.empty()) throw InvalidArgument("sweep_train_size: no sizes");
  for (auto s : sizes)
    if (s == 0) throw InvalidArgument("sweep_train_size: n_per_class must be >= 1");
  std::vector<SweepPoint> out;
  for (auto n : sizes) {
    ExperimentPlan p = plan;
    p.n_per_class = n;
    SweepPoint pt;
    pt.value = static_cast<double>(n);
    pt.runs = run_grid<T>(p, g, opts);
    pt.summary = summarize(pt.runs);
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace apgcn
