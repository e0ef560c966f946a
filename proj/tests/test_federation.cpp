#include <doctest.h>

#include <cmath>
#include <memory>

#include "steinfed/errors.hpp"
#include "steinfed/federation.hpp"
#include "steinfed/metrics.hpp"
#include "support.hpp"

using namespace steinfed;
using namespace steinfed::testing;

namespace {

class ZeroLoss final : public LocalLoss {
 public:
  explicit ZeroLoss(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  double loss(const Vector&, double) const override { return 0.0; }
  Vector neg_loss_grad(const Vector&, double) const override {
    return Vector::Zero(static_cast<Eigen::Index>(dim_));
  }

 private:
  std::size_t dim_;
};

std::shared_ptr<const GaussianMixtureLoss> gaussian_loss(const Vector& mean, const Vector& var) {
  return std::make_shared<GaussianMixtureLoss>(
      std::vector<GaussianMixtureLoss::Component>{{1.0, mean, var}});
}

std::shared_ptr<const GaussianMixtureLoss> random_mixture(Rng& rng, std::size_t d) {
  std::vector<GaussianMixtureLoss::Component> comps;
  for (int i = 0; i < 2; ++i) {
    comps.push_back({0.5 + i, random_vector(rng, d, 2.0),
                     Vector(random_vector(rng, d).cwiseAbs().array() + 0.5)});
  }
  return std::make_shared<GaussianMixtureLoss>(comps);
}

Vector scalar(double x) { return Vector::Constant(1, x); }

// Mixture setup: agent 1 N(1,4), agent 2 N(-3,1) + N(3,2), uniform prior on [-10, 10].
std::vector<std::shared_ptr<const GaussianMixtureLoss>> mixture_agents() {
  return {gaussian_loss(scalar(1.0), scalar(4.0)),
          std::make_shared<GaussianMixtureLoss>(std::vector<GaussianMixtureLoss::Component>{
              {1.0, scalar(-3.0), scalar(1.0)}, {1.0, scalar(3.0), scalar(2.0)}})};
}

double kde_kl_to(const ParticleSet& p, const KdeConfig& kde, const LogDensity1D& log_target,
                 const Grid1D& grid) {
  return grid_kl([&](double x) { return kde_log_density(p, kde, scalar(x)); }, log_target, grid);
}

}  // namespace

TEST_CASE("tilted learning score decomposes into three terms") {
  Rng rng(41);
  const KdeConfig kde{0.55};
  for (int t = 0; t < 100; ++t) {
    const ServerState server{random_particles(rng, 6, 2), 0, kde, KernelConfig::median()};
    const AgentState agent{1, random_mixture(rng, 2), random_particles(rng, 6, 2), AgentRole::kForget,
                           std::nullopt, std::nullopt};
    const Vector theta = random_vector(rng, 2);
    const double alpha = 0.5 + t * 0.01;
    const Vector q = kde_log_density_grad(server.global, kde, theta);
    const Vector tk = kde_log_density_grad(agent.local, kde, theta);
    const Vector lk = agent.loss->neg_loss_grad(theta, alpha);
    CHECK(max_abs_diff(tilted_grad_learning(server, agent, alpha, theta), q - tk + lk) < 1e-12);
    CHECK(max_abs_diff(tilted_grad_unlearning(server, agent, alpha, theta), q - tk - lk) < 1e-12);
    const Vector sum = tilted_grad_learning(server, agent, alpha, theta) +
                       tilted_grad_unlearning(server, agent, alpha, theta);
    CHECK(max_abs_diff(sum, 2.0 * cavity_score(server.global, agent.local, kde, theta)) < 1e-12);

    const Prior prior = Prior::gaussian(2, 0.0, 4.0);
    CHECK(max_abs_diff(tilted_grad_learning(server, agent, alpha, theta, &prior),
                       q - tk + lk + prior_log_grad(prior, theta)) < 1e-12);
  }
}

TEST_CASE("tilted scores match finite differences") {
  Rng rng(43);
  const KdeConfig kde{0.55};
  for (int t = 0; t < 100; ++t) {
    const ServerState server{random_particles(rng, 5, 2), 0, kde, KernelConfig::median()};
    const AgentState agent{1, random_mixture(rng, 2), random_particles(rng, 5, 2), AgentRole::kForget,
                           std::nullopt, std::nullopt};
    const Vector theta = random_vector(rng, 2);
    auto log_tilted = [&](const Vector& z, double sign) {
      return kde_log_density(server.global, kde, z) - kde_log_density(agent.local, kde, z) -
             sign * agent.loss->loss(z, 1.0);
    };
    CHECK(close_rel(tilted_grad_learning(server, agent, 1.0, theta),
                    numeric_gradient([&](const Vector& z) { return log_tilted(z, 1.0); }, theta), 1e-5));
    CHECK(close_rel(tilted_grad_unlearning(server, agent, 1.0, theta),
                    numeric_gradient([&](const Vector& z) { return log_tilted(z, -1.0); }, theta), 1e-5));
  }
}

TEST_CASE("tilted scores in special configurations") {
  Rng rng(47);
  const KdeConfig kde{0.55};
  const ParticleSet shared = random_particles(rng, 5, 2);
  const ServerState server{shared, 0, kde, KernelConfig::median()};
  const auto loss = random_mixture(rng, 2);
  AgentState agent{2, loss, shared, AgentRole::kForget, std::nullopt, std::nullopt};
  const Vector theta = random_vector(rng, 2);
  CHECK(tilted_grad_learning(server, agent, 0.7, theta) == loss->neg_loss_grad(theta, 0.7));
  CHECK(tilted_grad_unlearning(server, agent, 0.7, theta) == Vector(-loss->neg_loss_grad(theta, 0.7)));

  agent.local = random_particles(rng, 5, 2);
  agent.loss = std::make_shared<ZeroLoss>(2);
  CHECK(max_abs_diff(tilted_grad_learning(server, agent, 1.0, theta),
                     cavity_score(server.global, agent.local, kde, theta)) < 1e-15);

  agent.role = AgentRole::kRetain;
  CHECK_THROWS_AS(tilted_grad_unlearning(server, agent, 1.0, theta), ProtocolError);
}

TEST_CASE("distillation target") {
  Rng rng(53);
  const KdeConfig kde{0.55};
  for (int t = 0; t < 100; ++t) {
    const ParticleSet a = random_particles(rng, 4, 2), b = random_particles(rng, 4, 2),
                      c = random_particles(rng, 4, 2);
    const Vector theta = random_vector(rng, 2);
    const Vector expected = kde_log_density_grad(a, kde, theta) - kde_log_density_grad(b, kde, theta) +
                            kde_log_density_grad(c, kde, theta);
    CHECK(max_abs_diff(distill_target_grad(a, b, c, kde, theta), expected) < 1e-12);
    auto log_t = [&](const Vector& z) {
      return kde_log_density(a, kde, z) - kde_log_density(b, kde, z) + kde_log_density(c, kde, z);
    };
    CHECK(close_rel(distill_target_grad(a, b, c, kde, theta), numeric_gradient(log_t, theta), 1e-5));
    CHECK(max_abs_diff(distill_target_grad(b, b, c, kde, theta), kde_log_density_grad(c, kde, theta)) < 1e-12);
    CHECK(max_abs_diff(distill_target_grad(a, a, a, kde, theta), kde_log_density_grad(a, kde, theta)) < 1e-12);
  }
}

TEST_CASE("schedules") {
  ProtocolConfig cfg;
  for (int r = 0; r < 4; ++r) CHECK(schedule(cfg, r, {2, 1}) == (r % 2 == 0 ? 1 : 2));
  for (int r = 0; r < 5; ++r) CHECK(schedule(cfg, r, {3}) == 3);
  CHECK_THROWS_AS(schedule(cfg, 0, {}), ProtocolError);

  cfg.schedule = SchedulePolicy::kFixedSequence;
  cfg.sequence = {2, 2, 1};
  CHECK(schedule(cfg, 0, {1, 2}) == 2);
  CHECK(schedule(cfg, 1, {1, 2}) == 2);
  CHECK(schedule(cfg, 2, {1, 2}) == 1);
  CHECK_THROWS_AS(schedule(cfg, 3, {1, 2}), ProtocolError);
  CHECK_THROWS_AS(schedule(cfg, 0, {1}), ProtocolError);
}

TEST_CASE("no-op round only advances the counter") {
  Rng rng(59);
  const ServerState server{random_particles(rng, 5, 1), 3, KdeConfig{}, KernelConfig::median()};
  const AgentState agent{1, random_mixture(rng, 1), random_particles(rng, 5, 1), AgentRole::kForget,
                         std::nullopt, std::nullopt};
  ProtocolConfig cfg;
  cfg.local_iters = 0;
  cfg.distill_iters = 0;
  for (const RoundOutcome& out : {learning_round(server, agent, cfg), unlearning_round(server, agent, cfg)}) {
    CHECK(out.server.global == server.global);
    CHECK(out.agent.local == agent.local);
    CHECK(out.server.round == 4);
  }
}

TEST_CASE("single agent with matching local particles runs plain svgd on the loss") {
  Rng rng(61);
  for (std::size_t n = 1; n <= 5; ++n) {
    const ParticleSet start = random_particles(rng, n, 1, 2.0);
    const auto loss = random_mixture(rng, 1);
    const ServerState server{start, 0, KdeConfig{}, KernelConfig::median()};
    const AgentState agent{1, loss, start, AgentRole::kRetain, std::nullopt, std::nullopt};
    ProtocolConfig cfg;
    cfg.local_iters = 30;
    cfg.distill_iters = 5;
    cfg.step = 0.1;
    const RoundOutcome out = learning_round(server, agent, cfg);

    AdaGradState opt(cfg.step, cfg.fudge);
    auto target = [&](const Vector& x) { return loss->neg_loss_grad(x, cfg.alpha); };
    CHECK(out.server.global == run_svgd(start, target, 30, opt, KernelConfig::median()));
  }
}

TEST_CASE("unlearning with an empty shard is a cavity-only round") {
  Rng rng(67);
  const ServerState server{random_particles(rng, 6, 1), 0, KdeConfig{}, KernelConfig::median()};
  const AgentState agent{1, std::make_shared<ZeroLoss>(1), random_particles(rng, 6, 1),
                         AgentRole::kForget, std::nullopt, std::nullopt};
  ProtocolConfig cfg;
  cfg.local_iters = 10;
  cfg.distill_iters = 10;
  const RoundOutcome a = learning_round(server, agent, cfg);
  const RoundOutcome b = unlearning_round(server, agent, cfg);
  CHECK(a.server.global == b.server.global);
  CHECK(a.agent.local == b.agent.local);

  AgentState retain = agent;
  retain.role = AgentRole::kRetain;
  CHECK_THROWS_AS(unlearning_round(server, retain, cfg), ProtocolError);
}

namespace {

Federation make_federation(std::uint64_t seed, int agents, std::size_t n, int local_iters = 10,
                           bool forget_all = false) {
  const Prior prior = Prior::uniform(1, -10.0, 10.0);
  Rng rng(seed);
  ServerState server{prior.sample(n, rng), 0, KdeConfig{0.55}, KernelConfig::median()};
  std::vector<AgentState> list;
  const auto losses = mixture_agents();
  for (int k = 1; k <= agents; ++k) {
    const auto loss = losses[static_cast<std::size_t>((k - 1) % 2)];
    list.push_back({k, loss, init_local_particles(prior, n, seed, k),
                    k == 1 || forget_all ? AgentRole::kForget : AgentRole::kRetain, std::nullopt, std::nullopt});
  }
  ProtocolConfig cfg;
  cfg.local_iters = local_iters;
  cfg.distill_iters = local_iters;
  cfg.step = 0.5;
  cfg.distill_step = 0.5;
  cfg.seed = seed;
  cfg.prior = prior;
  return Federation(server, list, cfg);
}

}  // namespace

TEST_CASE("a round touches only the global set and the scheduled agent") {
  Federation fed = make_federation(3, 3, 12);
  for (int r = 0; r < 6; ++r) {
    const std::vector<AgentState> before = fed.agents();
    const ParticleSet global_before = fed.server().global;
    const int k = fed.next_learning_round(r);
    CHECK(fed.server().round == r + 1);
    CHECK(fed.server().global.size() == 12);
    CHECK(fed.server().global.dim() == 1);
    CHECK(!(fed.server().global == global_before));
    for (std::size_t i = 0; i < before.size(); ++i) {
      const AgentState& now = fed.agents()[i];
      CHECK(now.local.size() == 12);
      if (now.id == k) {
        CHECK(!(now.local == before[i].local));
      } else {
        CHECK(now.local == before[i].local);
      }
    }
  }
}

TEST_CASE("federation runs are deterministic") {
  Federation a = make_federation(5, 2, 10), b = make_federation(5, 2, 10);
  for (int r = 0; r < 4; ++r) {
    a.next_learning_round(r);
    b.next_learning_round(r);
  }
  a.begin_unlearning();
  b.begin_unlearning();
  a.next_unlearning_round(0);
  b.next_unlearning_round(0);
  CHECK(a.server().global == b.server().global);
  for (std::size_t i = 0; i < a.agents().size(); ++i) CHECK(a.agents()[i].local == b.agents()[i].local);
}

TEST_CASE("begin_unlearning redraws only forget agents") {
  Federation fed = make_federation(7, 2, 10);
  fed.next_learning_round(0);
  fed.next_learning_round(1);
  const auto before = fed.agents();
  fed.begin_unlearning();
  CHECK(!(fed.agent(1).local == before[0].local));
  CHECK(fed.agent(2).local == before[1].local);
  CHECK(fed.forget_ids() == std::vector<int>{1});
  CHECK(fed.next_unlearning_round(0) == 1);
  CHECK(fed.next_unlearning_round(1) == 1);
  CHECK_THROWS_AS(fed.unlearning_round(2), ProtocolError);
}

TEST_CASE("mixture learning improves on the prior draw") {
  Federation fed = make_federation(11, 2, 50, 50);
  const auto losses = mixture_agents();
  auto log_target = [&](double x) {
    return losses[0]->log_mixture(scalar(x)) + losses[1]->log_mixture(scalar(x));
  };
  const Grid1D grid;
  const KdeConfig kde{0.55};
  const double initial = kde_kl_to(fed.server().global, kde, log_target, grid);
  for (int r = 0; r < 6; ++r) fed.next_learning_round(r);
  const double learned = kde_kl_to(fed.server().global, kde, log_target, grid);
  CHECK(learned < initial);
  CHECK(learned < 0.5);
}

TEST_CASE("unlearning a concentrated shard lowers its likelihood") {
  // q is concentrated on the forgotten mode and t_k carries all of it.
  Rng rng(71);
  const auto loss = gaussian_loss(scalar(2.0), scalar(0.25));
  ParticleSet global(20, 1);
  for (std::size_t n = 0; n < 20; ++n) global[n][0] = 2.0 + 0.3 * random_vector(rng, 1)[0];
  const ServerState server{global, 0, KdeConfig{0.55}, KernelConfig::median()};
  const AgentState agent{1, loss, global, AgentRole::kForget, std::nullopt, std::nullopt};
  ProtocolConfig cfg;
  cfg.local_iters = 50;
  cfg.distill_iters = 50;
  cfg.step = 0.1;
  auto mean_loglik = [&](const ParticleSet& p) {
    double s = 0.0;
    for (std::size_t n = 0; n < p.size(); ++n) s += loss->log_mixture(p[n]);
    return s / static_cast<double>(p.size());
  };
  const RoundOutcome out = unlearning_round(server, agent, cfg);
  CHECK(mean_loglik(out.server.global) < mean_loglik(global));
}

TEST_CASE("unlearning every agent moves back toward the prior") {
  Federation fed = make_federation(13, 2, 50, 50, true);
  const Grid1D grid;
  const KdeConfig kde{0.55};
  // The uniform prior is flat on the grid.
  auto log_prior = [](double) { return 0.0; };
  for (int r = 0; r < 6; ++r) fed.next_learning_round(r);
  const double learned = kde_kl_to(fed.server().global, kde, log_prior, grid);
  fed.begin_unlearning();
  fed.next_unlearning_round(0);
  fed.next_unlearning_round(1);
  CHECK(kde_kl_to(fed.server().global, kde, log_prior, grid) < learned);
}

TEST_CASE("retraining from scratch") {
  const Prior prior = Prior::gaussian(1, 0.0, 9.0);
  const auto losses = mixture_agents();
  std::vector<AgentState> agents = {
      {1, losses[0], ParticleSet(8, 1), AgentRole::kRetain, std::nullopt, std::nullopt},
      {2, losses[1], ParticleSet(8, 1), AgentRole::kRetain, std::nullopt, std::nullopt}};
  ProtocolConfig cfg;
  cfg.step = 0.2;
  cfg.seed = 5;

  SUBCASE("nothing forgotten is ordinary centralized learning") {
    ParticleSet initial;
    const ServerState out = retrain_from_scratch(
        agents, prior, 8, KdeConfig{}, KernelConfig::median(), cfg, RetrainMode::kCentralized, 40,
        [&](int it, const ParticleSet& p) {
          if (it == 0) initial = p;
          return true;
        });
    auto target = [&](const Vector& x) {
      return Vector(prior_log_grad(prior, x) +
                    Vector(losses[0]->neg_loss_grad(x, 1.0) + losses[1]->neg_loss_grad(x, 1.0)));
    };
    AdaGradState opt(cfg.step, cfg.fudge);
    ParticleSet manual = initial;
    for (int i = 0; i < 40; ++i) manual = run_svgd(manual, target, 1, opt, KernelConfig::median());
    CHECK(out.global == manual);
    CHECK(out.round == 40);
  }
  SUBCASE("everything forgotten leaves prior sampling") {
    for (auto& a : agents) a.role = AgentRole::kForget;
    ParticleSet initial;
    const ServerState out = retrain_from_scratch(
        agents, prior, 8, KdeConfig{}, KernelConfig::median(), cfg, RetrainMode::kCentralized, 25,
        [&](int it, const ParticleSet& p) {
          if (it == 0) initial = p;
          return true;
        });
    auto target = [&](const Vector& x) { return prior_log_grad(prior, x); };
    AdaGradState opt(cfg.step, cfg.fudge);
    CHECK(out.global == run_svgd(initial, target, 25, opt, KernelConfig::median()));
    CHECK_THROWS_AS(retrain_from_scratch(agents, prior, 8, KdeConfig{}, KernelConfig::median(), cfg,
                                         RetrainMode::kFederated, 2),
                    ProtocolError);
  }
  SUBCASE("observer can stop early") {
    int calls = 0;
    const ServerState out = retrain_from_scratch(
        agents, prior, 8, KdeConfig{}, KernelConfig::median(), cfg, RetrainMode::kFederated, 10,
        [&](int it, const ParticleSet&) {
          ++calls;
          return it < 3;
        });
    CHECK(calls == 4);
    CHECK(out.round == 3);
  }
}
