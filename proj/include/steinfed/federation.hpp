#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "steinfed/kernels.hpp"
#include "steinfed/models.hpp"
#include "steinfed/svgd.hpp"

namespace steinfed {

enum class AgentRole { kRetain, kForget };

/// An agent's shard (through its loss) and the local particles whose KDE
/// represents its approximate likelihood t_k.
struct AgentState {
  int id = 0;
  std::shared_ptr<const LocalLoss> loss;
  ParticleSet local;
  AgentRole role = AgentRole::kRetain;
  // Only populated when ProtocolConfig::persist_optimizer is set.
  std::optional<AdaGradState> global_opt;
  std::optional<AdaGradState> local_opt;
};

struct ServerState {
  ParticleSet global;
  int round = 0;
  KdeConfig kde;
  KernelConfig kernel;
};

enum class SchedulePolicy { kRoundRobin, kFixedSequence };

struct ProtocolConfig {
  double alpha = 1.0;
  int local_iters = 100;    // SVGD steps on the global particles per round
  int distill_iters = 100;  // SVGD steps on the agent's local particles per round
  double step = 0.05;
  double distill_step = 0.05;
  double fudge = 1e-6;
  SchedulePolicy schedule = SchedulePolicy::kRoundRobin;
  std::vector<int> sequence;  // agent ids, for kFixedSequence
  std::uint64_t seed = 0;
  // Adds grad log p0 to the learning and unlearning targets. Local particles
  // drawn from a non-flat prior carry a p0 factor that this restores.
  bool include_prior_score = false;
  // Keep AdaGrad accumulators across rounds instead of resetting them.
  bool persist_optimizer = false;
  // Supplies the support clamp and, if enabled, the prior score.
  std::optional<Prior> prior;
};

/// grad log q(theta) - grad log t_k(theta), both as KDEs.
Vector cavity_score(const ParticleSet& global, const ParticleSet& local, const KdeConfig& kde,
                    const Vector& theta);

/// Score of the learning target q/t_k * exp(-L_k/alpha).
Vector tilted_grad_learning(const ServerState& server, const AgentState& agent, double alpha,
                            const Vector& theta, const Prior* prior_score = nullptr);

/// Score of the unlearning target q/t_k * exp(+L_k/alpha). Forget agents only.
Vector tilted_grad_unlearning(const ServerState& server, const AgentState& agent, double alpha,
                              const Vector& theta, const Prior* prior_score = nullptr);

/// grad log t_k^new = grad log q^new - grad log q^old + grad log t_k^old.
Vector distill_target_grad(const ParticleSet& new_global, const ParticleSet& old_global,
                           const ParticleSet& old_local, const KdeConfig& kde,
                           const Vector& theta);

struct RoundOutcome {
  ServerState server;
  AgentState agent;
};

/// One learning round with the scheduled agent: download, L SVGD steps on the
/// tilted target, upload, then L_local distillation steps on the local particles.
RoundOutcome learning_round(const ServerState& server, const AgentState& agent,
                            const ProtocolConfig& cfg);

/// Same shape as learning_round with the sign of the loss flipped.
RoundOutcome unlearning_round(const ServerState& server, const AgentState& agent,
                              const ProtocolConfig& cfg);

/// Agent id for `round`. Round robin cycles `eligible` in ascending order.
int schedule(const ProtocolConfig& cfg, int round, const std::vector<int>& eligible);

/// Local particles drawn from the prior with a per-agent seed offset.
ParticleSet init_local_particles(const Prior& prior, std::size_t count, std::uint64_t seed,
                                 int agent_id);

enum class Phase { kLearn, kUnlearn, kRetrain };
const char* phase_name(Phase phase);

/// Server plus agents, advanced one round at a time.
class Federation {
 public:
  Federation(ServerState server, std::vector<AgentState> agents, ProtocolConfig cfg);

  const ServerState& server() const { return server_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  const AgentState& agent(int id) const;
  const ProtocolConfig& config() const { return cfg_; }

  std::vector<int> agent_ids() const;
  std::vector<int> forget_ids() const;

  // Runs one round with agent `id` and returns it.
  int learning_round(int id);
  int unlearning_round(int id);

  // Schedules the next agent and runs its round. Learning follows the
  // configured policy; unlearning cycles the forget set in ascending order.
  // `phase_round` is the round index within the current phase.
  int next_learning_round(int phase_round);
  int next_unlearning_round(int phase_round);

  // Redraws the local particles of every forget agent at random from the prior.
  void begin_unlearning();

 private:
  std::size_t index_of(int id) const;
  ServerState server_;
  std::vector<AgentState> agents_;
  ProtocolConfig cfg_;
};

enum class RetrainMode { kCentralized, kFederated };

// Called with the iteration (centralized) or round (federated) index, starting at 0
// for the freshly drawn particles. Returning false stops the run.
using RetrainObserver = std::function<bool(int, const ParticleSet&)>;

/// Exact-unlearning reference: fresh prior particles trained only on the
/// agents with role kRetain. Centralized mode runs `budget` SVGD iterations
/// on p0 * exp(-sum_k L_k / alpha); federated mode runs `budget` learning rounds.
ServerState retrain_from_scratch(const std::vector<AgentState>& agents, const Prior& prior,
                                 std::size_t particle_count, const KdeConfig& kde,
                                 const KernelConfig& kernel, const ProtocolConfig& cfg,
                                 RetrainMode mode, int budget,
                                 const RetrainObserver& observer = {});

}  // namespace steinfed
