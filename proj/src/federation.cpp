#include "steinfed/federation.hpp"

#include <algorithm>
#include <random>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

constexpr std::uint64_t kLearnStream = 0x10ca1;
constexpr std::uint64_t kUnlearnStream = 0xf0e6e7;
constexpr std::uint64_t kRetrainStream = 0x7e7a1;

Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

Projection make_projection(const ProtocolConfig& cfg) {
  if (!cfg.prior || cfg.prior->kind() != Prior::Kind::kUniform) return {};
  const Prior prior = *cfg.prior;
  return [prior](ParticleSet& p) { prior.clamp(p); };
}

AdaGradState take_optimizer(const std::optional<AdaGradState>& stored, const ProtocolConfig& cfg,
                            double step) {
  if (cfg.persist_optimizer && stored) return *stored;
  return AdaGradState(step, cfg.fudge);
}

void check_round(const ServerState& server, const AgentState& agent, const ProtocolConfig& cfg) {
  if (server.global.empty()) throw ProtocolError("server holds no particles");
  if (!agent.loss) throw ProtocolError("agent " + std::to_string(agent.id) + " has no loss");
  if (agent.local.size() != server.global.size() || agent.local.dim() != server.global.dim()) {
    throw ProtocolError("agent " + std::to_string(agent.id) +
                        ": local particles do not match the server's N and d");
  }
  if (cfg.local_iters < 0 || cfg.distill_iters < 0) throw ProtocolError("negative iteration count");
  if (!(cfg.alpha > 0.0)) throw ProtocolError("alpha must be positive");
}

RoundOutcome run_round(const ServerState& server, const AgentState& agent,
                       const ProtocolConfig& cfg, const TargetGradient& target) {
  const Projection project = make_projection(cfg);

  // Step 2: SVGD on a downloaded copy of the global particles.
  AdaGradState global_opt = take_optimizer(agent.global_opt, cfg, cfg.step);
  ParticleSet uploaded = run_svgd(server.global, target, cfg.local_iters, global_opt,
                                  server.kernel, project);

  // Step 3: distill the updated approximate likelihood into the local particles.
  const ParticleSet& old_global = server.global;
  const ParticleSet& old_local = agent.local;
  const KdeConfig kde = server.kde;
  auto distill = [&](const Vector& theta) {
    return distill_target_grad(uploaded, old_global, old_local, kde, theta);
  };
  AdaGradState local_opt = take_optimizer(agent.local_opt, cfg, cfg.distill_step);
  ParticleSet local = run_svgd(agent.local, distill, cfg.distill_iters, local_opt,
                               server.kernel, project);

  RoundOutcome out{server, agent};
  out.server.global = std::move(uploaded);
  out.server.round = server.round + 1;
  out.agent.local = std::move(local);
  if (cfg.persist_optimizer) {
    out.agent.global_opt = global_opt;
    out.agent.local_opt = local_opt;
  }
  return out;
}

}  // namespace

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kLearn: return "learn";
    case Phase::kUnlearn: return "unlearn";
    case Phase::kRetrain: return "retrain";
  }
  return "unknown";
}

Vector cavity_score(const ParticleSet& global, const ParticleSet& local, const KdeConfig& kde,
                    const Vector& theta) {
  return kde_log_density_grad(global, kde, theta) - kde_log_density_grad(local, kde, theta);
}

Vector tilted_grad_learning(const ServerState& server, const AgentState& agent, double alpha,
                            const Vector& theta, const Prior* prior_score) {
  Vector g = cavity_score(server.global, agent.local, server.kde, theta);
  g += agent.loss->neg_loss_grad(theta, alpha);
  if (prior_score) g += prior_log_grad(*prior_score, theta);
  return g;
}

Vector tilted_grad_unlearning(const ServerState& server, const AgentState& agent, double alpha,
                              const Vector& theta, const Prior* prior_score) {
  if (agent.role != AgentRole::kForget) {
    throw ProtocolError("agent " + std::to_string(agent.id) + " is not in the forget set");
  }
  Vector g = cavity_score(server.global, agent.local, server.kde, theta);
  g -= agent.loss->neg_loss_grad(theta, alpha);
  if (prior_score) g += prior_log_grad(*prior_score, theta);
  return g;
}

Vector distill_target_grad(const ParticleSet& new_global, const ParticleSet& old_global,
                           const ParticleSet& old_local, const KdeConfig& kde,
                           const Vector& theta) {
  return kde_log_density_grad(new_global, kde, theta) -
         kde_log_density_grad(old_global, kde, theta) +
         kde_log_density_grad(old_local, kde, theta);
}

RoundOutcome learning_round(const ServerState& server, const AgentState& agent,
                            const ProtocolConfig& cfg) {
  check_round(server, agent, cfg);
  const Prior* prior = (cfg.include_prior_score && cfg.prior) ? &*cfg.prior : nullptr;
  auto target = [&](const Vector& theta) {
    return tilted_grad_learning(server, agent, cfg.alpha, theta, prior);
  };
  return run_round(server, agent, cfg, target);
}

RoundOutcome unlearning_round(const ServerState& server, const AgentState& agent,
                              const ProtocolConfig& cfg) {
  check_round(server, agent, cfg);
  if (agent.role != AgentRole::kForget) {
    throw ProtocolError("agent " + std::to_string(agent.id) + " is not in the forget set");
  }
  const Prior* prior = (cfg.include_prior_score && cfg.prior) ? &*cfg.prior : nullptr;
  auto target = [&](const Vector& theta) {
    return tilted_grad_unlearning(server, agent, cfg.alpha, theta, prior);
  };
  return run_round(server, agent, cfg, target);
}

int schedule(const ProtocolConfig& cfg, int round, const std::vector<int>& eligible) {
  if (eligible.empty()) throw ProtocolError("no eligible agent to schedule");
  if (round < 0) throw ProtocolError("negative round index");
  if (cfg.schedule == SchedulePolicy::kRoundRobin) {
    std::vector<int> ids = eligible;
    std::sort(ids.begin(), ids.end());
    return ids[static_cast<std::size_t>(round) % ids.size()];
  }
  if (static_cast<std::size_t>(round) >= cfg.sequence.size()) {
    throw ProtocolError("fixed schedule exhausted at round " + std::to_string(round));
  }
  const int id = cfg.sequence[static_cast<std::size_t>(round)];
  if (std::find(eligible.begin(), eligible.end(), id) == eligible.end()) {
    throw ProtocolError("scheduled agent " + std::to_string(id) + " is not eligible");
  }
  return id;
}

ParticleSet init_local_particles(const Prior& prior, std::size_t count, std::uint64_t seed,
                                 int agent_id) {
  Rng rng = make_rng(seed, kLearnStream, static_cast<std::uint64_t>(agent_id));
  return prior.sample(count, rng);
}

// --- Federation -------------------------------------------------------------

Federation::Federation(ServerState server, std::vector<AgentState> agents, ProtocolConfig cfg)
    : server_(std::move(server)), agents_(std::move(agents)), cfg_(std::move(cfg)) {
  if (agents_.empty()) throw ProtocolError("federation needs at least one agent");
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    for (std::size_t j = i + 1; j < agents_.size(); ++j) {
      if (agents_[i].id == agents_[j].id) throw ProtocolError("duplicate agent id");
    }
  }
}

std::size_t Federation::index_of(int id) const {
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    if (agents_[i].id == id) return i;
  }
  throw ProtocolError("unknown agent " + std::to_string(id));
}

const AgentState& Federation::agent(int id) const { return agents_[index_of(id)]; }

std::vector<int> Federation::agent_ids() const {
  std::vector<int> ids;
  for (const auto& a : agents_) ids.push_back(a.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> Federation::forget_ids() const {
  std::vector<int> ids;
  for (const auto& a : agents_) {
    if (a.role == AgentRole::kForget) ids.push_back(a.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

int Federation::learning_round(int id) {
  const std::size_t i = index_of(id);
  RoundOutcome out = steinfed::learning_round(server_, agents_[i], cfg_);
  server_ = std::move(out.server);
  agents_[i] = std::move(out.agent);
  return id;
}

int Federation::unlearning_round(int id) {
  const std::size_t i = index_of(id);
  RoundOutcome out = steinfed::unlearning_round(server_, agents_[i], cfg_);
  server_ = std::move(out.server);
  agents_[i] = std::move(out.agent);
  return id;
}

int Federation::next_learning_round(int phase_round) {
  return learning_round(schedule(cfg_, phase_round, agent_ids()));
}

int Federation::next_unlearning_round(int phase_round) {
  ProtocolConfig rr = cfg_;
  rr.schedule = SchedulePolicy::kRoundRobin;
  return unlearning_round(schedule(rr, phase_round, forget_ids()));
}

void Federation::begin_unlearning() {
  if (!cfg_.prior) throw ProtocolError("unlearning needs a prior to draw local particles");
  for (auto& a : agents_) {
    if (a.role != AgentRole::kForget) continue;
    Rng rng = make_rng(cfg_.seed, kUnlearnStream, static_cast<std::uint64_t>(a.id));
    a.local = cfg_.prior->sample(server_.global.size(), rng);
    a.global_opt.reset();
    a.local_opt.reset();
  }
}

// --- Retraining -------------------------------------------------------------

ServerState retrain_from_scratch(const std::vector<AgentState>& agents, const Prior& prior,
                                 std::size_t particle_count, const KdeConfig& kde,
                                 const KernelConfig& kernel, const ProtocolConfig& cfg,
                                 RetrainMode mode, int budget, const RetrainObserver& observer) {
  if (budget < 0) throw ProtocolError("negative retrain budget");
  if (particle_count == 0) throw ProtocolError("retrain needs at least one particle");
  std::vector<const AgentState*> retained;
  for (const auto& a : agents) {
    if (a.role == AgentRole::kRetain) retained.push_back(&a);
  }

  Rng rng = make_rng(cfg.seed, kRetrainStream, 0);
  ServerState server{prior.sample(particle_count, rng), 0, kde, kernel};

  if (mode == RetrainMode::kFederated) {
    if (retained.empty()) throw ProtocolError("retrain: no retained agents");
    std::vector<AgentState> fresh;
    for (const AgentState* a : retained) {
      AgentState copy{a->id, a->loss, init_local_particles(prior, particle_count, cfg.seed, a->id),
                      AgentRole::kRetain, std::nullopt, std::nullopt};
      fresh.push_back(std::move(copy));
    }
    ProtocolConfig fcfg = cfg;
    fcfg.prior = prior;
    Federation fed(server, std::move(fresh), fcfg);
    if (observer && !observer(0, fed.server().global)) return fed.server();
    for (int r = 0; r < budget; ++r) {
      fed.next_learning_round(r);
      if (observer && !observer(r + 1, fed.server().global)) break;
    }
    return fed.server();
  }

  std::vector<std::shared_ptr<const LocalLoss>> parts;
  for (const AgentState* a : retained) parts.push_back(a->loss);
  const SumLoss pooled(std::move(parts), prior.dim());
  const double alpha = cfg.alpha;
  auto target = [&](const Vector& theta) {
    return Vector(prior_log_grad(prior, theta) + pooled.neg_loss_grad(theta, alpha));
  };
  ProtocolConfig pcfg = cfg;
  pcfg.prior = prior;
  const Projection project = make_projection(pcfg);
  AdaGradState opt(cfg.step, cfg.fudge);
  if (observer && !observer(0, server.global)) return server;
  for (int it = 0; it < budget; ++it) {
    server.global = run_svgd(std::move(server.global), target, 1, opt, kernel, project);
    server.round = it + 1;
    if (observer && !observer(it + 1, server.global)) break;
  }
  return server;
}

}  // namespace steinfed
