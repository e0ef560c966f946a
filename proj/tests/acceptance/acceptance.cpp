// Acceptance checks AC1-AC8. Prints one [PASS]/[FAIL] line per criterion and
// exits nonzero if any criterion fails.
//
// `--known-red AC5` (repeatable) names criteria that are expected to fail. Their
// [FAIL] lines are still printed; the exit status is then nonzero only if another
// criterion fails or a known-red criterion passes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steinfed/config.hpp"
#include "steinfed/experiment.hpp"
#include "steinfed/federation.hpp"
#include "steinfed/kernels.hpp"
#include "steinfed/metrics.hpp"
#include "steinfed/models.hpp"
#include "steinfed/pvi.hpp"
#include "steinfed/svgd.hpp"

using namespace steinfed;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Vector random_vector(Rng& rng, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

ParticleSet random_particles(Rng& rng, std::size_t count, std::size_t dim, double scale = 1.0) {
  ParticleSet p(count, dim);
  for (std::size_t n = 0; n < count; ++n) p[n] = random_vector(rng, dim, scale);
  return p;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& x) {
  const double h = 1e-4;
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(plus) - f(minus)) / (2 * h);
  }
  return g;
}

// Largest |a - b| / max(1, |b|) over coordinates.
double rel_error(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  }
  return worst;
}

ExperimentConfig config(const std::string& name, std::uint64_t seed, const std::string& out) {
  ExperimentConfig cfg = load_config(std::string(STEINFED_CONFIG_DIR) + "/" + name);
  cfg.seed = seed;
  cfg.output.dir = out;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "steinfed_acceptance" / name;
  fs::remove_all(dir);
  return dir;
}

// --- AC1 --------------------------------------------------------------------

Verdict ac1() {
  int good = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParticleSet p = random_particles(rng, 50, 1, 3.0);
    AdaGradState opt(0.5);
    p = run_svgd(std::move(p), [](const Vector& x) { return Vector(-x); }, 500, opt, KernelConfig::median());
    const double mean = p.mean()[0], var = p.variance()[0];
    const bool ok = std::abs(mean) <= 0.05 && var >= 0.9 && var <= 1.1;
    good += ok;
    rows += format(" s%d:(%.3f,%.3f)", int(seed), mean, var);
  }
  return {good >= 9, format("%d/10 seeds in range;", good) + rows};
}

// --- AC2 --------------------------------------------------------------------

Verdict ac2() {
  Rng rng(2024);
  std::uniform_int_distribution<int> count(1, 5), dim(1, 3);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto n = static_cast<std::size_t>(count(rng));
    const auto d = static_cast<std::size_t>(dim(rng));
    const ParticleSet p = random_particles(rng, n, d);
    const Vector mu = random_vector(rng, d);
    auto target = [&](const Vector& x) { return Vector(-(x - mu)); };
    const double h = n >= 2 ? median_bandwidth(p) : 1.0;
    const Matrix got = svgd_direction(p, target, KernelConfig::median());
    for (std::size_t i = 0; i < n; ++i) {
      Vector acc = Vector::Zero(static_cast<Eigen::Index>(d));
      for (std::size_t j = 0; j < n; ++j) {
        const Vector xj = p[j], xi = p[i];
        const double k = std::exp(-(xj - xi).squaredNorm() / h);
        acc += k * target(xj) - (2.0 / h) * (xj - xi) * k;
      }
      acc /= static_cast<double>(n);
      worst = std::max(worst, (got.col(static_cast<Eigen::Index>(i)) - acc).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= 1e-12, format("100 instances, max abs diff %.2e", worst)};
}

// --- AC3 --------------------------------------------------------------------

std::shared_ptr<GaussianMixtureLoss> random_mixture(Rng& rng, std::size_t d) {
  std::uniform_real_distribution<double> w(0.5, 2.0);
  std::vector<GaussianMixtureLoss::Component> comps;
  for (int c = 0; c < 3; ++c) {
    comps.push_back({w(rng), random_vector(rng, d, 2.0), Vector(random_vector(rng, d).cwiseAbs().array() + 0.5)});
  }
  return std::make_shared<GaussianMixtureLoss>(comps);
}

Verdict ac3() {
  Rng rng(33);
  const KdeConfig kde{0.55};
  std::vector<std::pair<std::string, double>> worst;
  auto track = [&](const std::string& name, double err) {
    for (auto& [n, e] : worst) {
      if (n == name) {
        e = std::max(e, err);
        return;
      }
    }
    worst.emplace_back(name, err);
  };
  for (int t = 0; t < 100; ++t) {
    const Vector x = random_vector(rng, 3), y = random_vector(rng, 3);
    const double h = 0.5 + std::abs(random_vector(rng, 1)[0]);
    track("kernel", rel_error(rbf_kernel_grad_first(x, y, h),
                              central_difference([&](const Vector& z) { return rbf_kernel(z, y, h); }, x)));

    const ParticleSet p = random_particles(rng, 6, 3);
    track("kde", rel_error(kde_log_density_grad(p, kde, x),
                           central_difference([&](const Vector& z) { return kde_log_density(p, kde, z); }, x)));

    const auto mix = random_mixture(rng, 2);
    const Vector m = random_vector(rng, 2, 2.0);
    track("mixture", rel_error(mix->neg_loss_grad(m, 1.0),
                               central_difference([&](const Vector& z) { return -mix->loss(z, 1.0); }, m)));

    Matrix f(10, 5);
    for (Eigen::Index i = 0; i < 10; ++i) f.row(i) = random_vector(rng, 5).transpose();
    std::vector<int> labels;
    for (int i = 0; i < 10; ++i) labels.push_back(i % 4);
    const SoftmaxHeadLoss head(f, labels, 4);
    const Vector w = random_vector(rng, head.dim());
    track("softmax", rel_error(head.neg_loss_grad(w, 1.0),
                               central_difference([&](const Vector& z) { return -head.loss(z, 1.0); }, w)));

    const ServerState server{random_particles(rng, 5, 2), 0, kde, KernelConfig::median()};
    const AgentState agent{1, mix, random_particles(rng, 5, 2), AgentRole::kForget, std::nullopt, std::nullopt};
    auto log_tilted = [&](const Vector& z, double sign) {
      return kde_log_density(server.global, kde, z) - kde_log_density(agent.local, kde, z) -
             sign * mix->loss(z, 1.0);
    };
    track("tilted learning",
          rel_error(tilted_grad_learning(server, agent, 1.0, m),
                    central_difference([&](const Vector& z) { return log_tilted(z, 1.0); }, m)));
    track("tilted unlearning",
          rel_error(tilted_grad_unlearning(server, agent, 1.0, m),
                    central_difference([&](const Vector& z) { return log_tilted(z, -1.0); }, m)));

    const ParticleSet a = random_particles(rng, 4, 2), b = random_particles(rng, 4, 2),
                      c = random_particles(rng, 4, 2);
    auto log_t = [&](const Vector& z) {
      return kde_log_density(a, kde, z) - kde_log_density(b, kde, z) + kde_log_density(c, kde, z);
    };
    track("distillation", rel_error(distill_target_grad(a, b, c, kde, m), central_difference(log_t, m)));
  }
  bool ok = true;
  std::string detail = "100 points each, max rel err:";
  for (const auto& [name, e] : worst) {
    ok = ok && e <= 1e-5;
    detail += format(" %s %.1e,", name.c_str(), e);
  }
  detail.pop_back();
  return {ok, detail};
}

// --- AC4 --------------------------------------------------------------------

Verdict ac4() {
  int good = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ExperimentConfig fs_cfg = config("mixture_forget_svgd.json", seed, scratch("ac4").string());
    const ExperimentConfig ul_cfg = config("mixture_ulpvi.json", seed, scratch("ac4").string());
    const Problem fs_problem = build_problem(fs_cfg);
    const Problem ul_problem = build_problem(ul_cfg);

    const PhaseResult dsvgd = run_learning(fs_cfg, fs_problem);
    const PhaseResult forget = run_unlearning(fs_cfg, fs_problem, dsvgd.snapshot);
    const PhaseResult pvi = run_learning(ul_cfg, ul_problem);
    const PhaseResult ulpvi = run_unlearning(ul_cfg, ul_problem, pvi.snapshot);

    const double kl_dsvgd = dsvgd.log.back().record.kl, kl_pvi = pvi.log.back().record.kl;
    const double kl_forget = forget.log.back().record.kl, kl_ulpvi = ulpvi.log.back().record.kl;
    const bool ok = kl_dsvgd < kl_pvi && kl_forget < kl_ulpvi;
    good += ok;
    rows += format(" s%d:(%.3f<%.3f,%.3f<%.3f)%s", int(seed), kl_dsvgd, kl_pvi, kl_forget, kl_ulpvi,
                   ok ? "" : "x");
  }
  return {good >= 8, format("%d/10 seeds; (learn dsvgd<pvi, unlearn forget<ulpvi):", good) + rows};
}

// --- AC5 --------------------------------------------------------------------

Verdict ac5() {
  int good = 0;
  std::string rows;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ExperimentConfig cfg = config("multilabel_desk.json", seed, scratch("ac5").string());
    const Problem problem = build_problem(cfg);
    const PhaseResult learned = run_learning(cfg, problem);
    const PhaseResult unlearned = run_unlearning(cfg, problem, learned.snapshot);
    const PhaseResult retrained = run_retraining(cfg, problem, learned.snapshot.round + 1);

    std::vector<MetricRecord> records = learned.records();
    for (const auto& r : unlearned.records()) records.push_back(r);
    for (const auto& r : retrained.records()) records.push_back(r);
    const ForgettingSummary s = summarize_forgetting(records, problem.num_classes);

    const bool forgot = s.unlearn_rounds >= 0 && s.unlearn_rounds <= 100;
    // A retrain that never reaches the criterion needs more than the whole budget.
    const int retrain = s.retrain_iterations >= 0 ? s.retrain_iterations : cfg.retrain.budget + 1;
    const bool faster = forgot && 5 * s.unlearn_rounds <= retrain;
    good += faster;
    rows += format(" s%d:(%d vs %d%s)%s", int(seed), s.unlearn_rounds, s.retrain_iterations,
                   s.retrain_iterations < 0 ? ">budget" : "", faster ? "" : "x");
  }
  return {good >= 8, format("%d/10 seeds with 5*unlearn rounds <= retrain iterations; (unlearn vs retrain):", good) +
                         rows};
}

// --- AC6 --------------------------------------------------------------------

Verdict ac6() {
  std::string detail;
  bool ok = true;

  // Round isolation on the mixture problem with three agents.
  {
    const Prior prior = Prior::uniform(1, -10.0, 10.0);
    std::vector<AgentState> agents;
    const std::vector<std::vector<GaussianMixtureLoss::Component>> specs = {
        {{1.0, Vector::Constant(1, 1.0), Vector::Constant(1, 4.0)}},
        {{1.0, Vector::Constant(1, -3.0), Vector::Constant(1, 1.0)}, {1.0, Vector::Constant(1, 3.0), Vector::Constant(1, 2.0)}},
        {{1.0, Vector::Constant(1, 0.5), Vector::Constant(1, 2.0)}}};
    for (int k = 1; k <= 3; ++k) {
      agents.push_back(AgentState{k, std::make_shared<GaussianMixtureLoss>(specs[static_cast<std::size_t>(k - 1)]),
                                  init_local_particles(prior, 30, 6, k),
                                  k == 2 ? AgentRole::kForget : AgentRole::kRetain, std::nullopt, std::nullopt});
    }
    Rng rng(6);
    ProtocolConfig pc;
    pc.local_iters = 20;
    pc.distill_iters = 20;
    pc.step = 0.5;
    pc.distill_step = 0.5;
    pc.prior = prior;
    Federation fed(ServerState{prior.sample(30, rng), 0, KdeConfig{0.55}, KernelConfig::median()}, agents, pc);
    int violations = 0, rounds = 0;
    auto check_round = [&](const std::function<int()>& step) {
      const std::vector<AgentState> before = fed.agents();
      const int k = step();
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (before[i].id != k && !(fed.agents()[i].local == before[i].local)) ++violations;
      }
      ++rounds;
    };
    for (int r = 0; r < 9; ++r) check_round([&] { return fed.next_learning_round(r); });
    fed.begin_unlearning();
    for (int r = 0; r < 2; ++r) check_round([&] { return fed.next_unlearning_round(r); });
    ok = ok && violations == 0;
    detail += format("isolation %d violations in %d rounds;", violations, rounds);
  }

  // Byte-identical metrics for every method.
  {
    int identical = 0, total = 0;
    for (const char* name : {"mixture_forget_svgd.json", "mixture_ulpvi.json", "multilabel_desk.json"}) {
      std::string texts[2];
      for (int run = 0; run < 2; ++run) {
        ExperimentConfig cfg = config(name, 3, scratch("ac6_" + std::to_string(run)).string());
        run_experiment(cfg);
        std::ifstream in(fs::path(cfg.output.dir) / kMetricsFile, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        texts[run] = s.str();
      }
      identical += !texts[0].empty() && texts[0] == texts[1];
      ++total;
    }
    ok = ok && identical == total;
    detail += format(" determinism %d/%d configs byte-identical;", identical, total);
  }

  // One particle: SVGD reduces to AdaGrad ascent on the log-density.
  {
    auto score = [](const Vector& x) { return Vector(-(x.array() - 1.5) / 2.0); };
    ParticleSet p = ParticleSet::from_rows({{-4.0, 2.0}});
    AdaGradState svgd_opt(0.3);
    const ParticleSet via_svgd = run_svgd(p, score, 200, svgd_opt, KernelConfig::median());
    Vector x = p[0];
    Vector acc = Vector::Zero(2);
    for (int i = 0; i < 200; ++i) {
      const Vector g = score(x);
      acc.array() += g.array().square();
      x.array() += 0.3 * g.array() / (1e-6 + acc.array().sqrt());
    }
    const bool same = via_svgd[0] == x;
    ok = ok && same;
    detail += same ? " single-particle trajectory bit-identical" : " single-particle trajectory differs";
  }
  return {ok, detail};
}

// --- AC7 --------------------------------------------------------------------

Verdict ac7() {
  auto scalar = [](double v) { return Vector::Constant(1, v); };
  const GaussianNatParams prior = GaussianNatParams::from_moments(scalar(0.0), scalar(16.0));
  const GaussianMixtureLoss a({{1.0, scalar(1.0), scalar(4.0)}});
  const GaussianMixtureLoss b({{1.0, scalar(-3.0), scalar(1.0)}, {1.0, scalar(3.0), scalar(2.0)}});
  const LocalLoss* losses[] = {&a, &b};
  PviConfig cfg;
  cfg.seed = 7;

  GaussianNatParams global = prior, unlearn = GaussianNatParams::zero(1);
  std::vector<GaussianNatParams> local(2, GaussianNatParams::zero(1));
  double worst = 0.0;
  auto check = [&] {
    GaussianNatParams sum = prior + unlearn;
    for (const auto& f : local) sum = sum + f;
    worst = std::max({worst, std::abs(sum.eta1[0] - global.eta1[0]), std::abs(sum.eta2[0] - global.eta2[0])});
  };
  for (int r = 0; r < 20; ++r) {
    const auto k = static_cast<std::size_t>(r % 2);
    PviOutcome o = pvi_round(global, local[k], *losses[k], cfg, r);
    global = o.global;
    local[k] = o.local;
    check();
  }
  for (int r = 0; r < 3; ++r) {
    PviOutcome o = ulpvi_round(global, unlearn, a, cfg, 20 + r);
    global = o.global;
    unlearn = o.local;
    check();
  }

  // Conjugate case: prior N(0, 16), Gaussian likelihood centred at 2.5 with variance 0.8.
  const double y = 2.5, s2 = 0.8;
  const GaussianMixtureLoss lik({{1.0, scalar(y), scalar(s2)}});
  PviConfig cc;
  cc.samples = 20000;
  cc.seed = 7;
  GaussianNatParams g = prior, f = GaussianNatParams::zero(1);
  for (int r = 0; r < 40; ++r) {
    PviOutcome o = pvi_round(g, f, lik, cc, r);
    g = o.global;
    f = o.local;
  }
  const double prec = 1.0 / 16.0 + 1.0 / s2;
  const GaussianMoments m = nat_to_moment(g);
  const double mean_err = std::abs(m.mean[0] - (y / s2) / prec);
  const double var_err = std::abs(m.variance[0] - 1.0 / prec);
  const bool ok = worst <= 1e-10 && mean_err <= 1e-2 && var_err <= 1e-2;
  return {ok, format("telescoping max err %.1e over 23 rounds; conjugate mean err %.4f, variance err %.4f",
                     worst, mean_err, var_err)};
}

// --- AC8 --------------------------------------------------------------------

Verdict ac8() {
  const double kl = grid_kl([](double x) { return -0.5 * x * x; },
                            [](double x) { return -0.5 * (x - 1.0) * (x - 1.0); }, Grid1D{});
  return {std::abs(kl - 0.5) <= 1e-3, format("KL(N(0,1) || N(1,1)) = %.6f", kl)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> known_red;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-red" && i + 1 < argc) {
      known_red.insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--known-red ACn]...\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"AC1 svgd moments", ac1},         {"AC2 direction transcription", ac2},
      {"AC3 gradient suite", ac3},       {"AC4 mixture vs parametric", ac4},
      {"AC5 unlearning speed", ac5},     {"AC6 protocol invariants", ac6},
      {"AC7 pvi baseline", ac7},         {"AC8 grid kl calibration", ac8},
  };
  int failed = 0, unexpected = 0;
  for (const auto& [name, run] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %s (%.2fs): %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), secs, v.detail.c_str());
    std::fflush(stdout);
    const bool expected_red = known_red.count(name.substr(0, name.find(' '))) > 0;
    failed += !v.pass;
    unexpected += v.pass == expected_red;
  }
  if (!known_red.empty()) {
    std::printf("%d criteria failed, %zu expected; %d outcome(s) differ from expectation\n", failed,
                known_red.size(), unexpected);
    return unexpected == 0 ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
