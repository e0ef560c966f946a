#include "steinfed/experiment.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

#include <json.hpp>

#include "steinfed/errors.hpp"

namespace steinfed {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kGlobalStream = 0x91ab;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kTestStream = 0x7e57;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<int> class_range(int agent_id, int labels_per_agent) {
  std::vector<int> out;
  for (int j = 0; j < labels_per_agent; ++j) out.push_back((agent_id - 1) * labels_per_agent + j);
  return out;
}

Dataset concat(const std::vector<Dataset>& parts, int num_classes) {
  Dataset out;
  out.num_classes = num_classes;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.inputs.rows();
  out.inputs.resize(rows, parts.empty() ? 0 : parts.front().inputs.cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.inputs.middleRows(at, p.inputs.rows()) = p.inputs;
    at += p.inputs.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

ProtocolConfig protocol_for(const ExperimentConfig& cfg, const Problem& problem) {
  ProtocolConfig p = cfg.protocol;
  p.seed = cfg.seed;
  p.prior = problem.prior;
  return p;
}

PviConfig pvi_for(const ExperimentConfig& cfg) {
  PviConfig p = cfg.pvi.pvi;
  p.seed = cfg.seed;
  p.alpha = cfg.protocol.alpha;
  return p;
}

std::vector<AgentState> make_agents(const ExperimentConfig& cfg, const Problem& problem) {
  std::vector<AgentState> agents;
  for (int k = 1; k <= cfg.agents; ++k) {
    const auto i = static_cast<std::size_t>(k - 1);
    agents.push_back({k, problem.losses[i],
                      init_local_particles(problem.prior, static_cast<std::size_t>(cfg.particles),
                                           cfg.seed, k),
                      problem.roles[i], std::nullopt, std::nullopt});
  }
  return agents;
}

GaussianNatParams eta_of(const Snapshot& s) {
  if (s.rows.rows() != 2) throw DataError("snapshot: parametric state needs 2 rows (eta1, eta2)");
  return GaussianNatParams{s.rows.row(0).transpose(), s.rows.row(1).transpose()};
}

Snapshot snapshot_of(const GaussianNatParams& eta, int round, std::uint64_t seed) {
  Snapshot s;
  s.rows.resize(2, static_cast<Eigen::Index>(eta.dim()));
  s.rows.row(0) = eta.eta1.transpose();
  s.rows.row(1) = eta.eta2.transpose();
  s.round = round;
  s.seed = seed;
  return s;
}

void check_snapshot(const ExperimentConfig& cfg, const Problem& problem, const Snapshot& s) {
  const auto expect_rows = is_parametric(cfg.method) ? 2 : cfg.particles;
  if (s.rows.rows() != expect_rows || s.rows.cols() != static_cast<Eigen::Index>(problem.dim)) {
    throw DataError("snapshot is " + std::to_string(s.rows.rows()) + " x " +
                    std::to_string(s.rows.cols()) + " but the config expects " +
                    std::to_string(expect_rows) + " x " + std::to_string(problem.dim));
  }
}

double mean_forgotten_loss(const ExperimentConfig& cfg, const Problem& problem,
                           const ParticleSet& particles) {
  const auto ids = problem.forget_ids();
  if (ids.empty()) return kNaN;
  double total = 0.0;
  for (std::size_t n = 0; n < particles.size(); ++n) {
    const Vector theta = particles[n];
    for (int id : ids) {
      total += problem.losses[static_cast<std::size_t>(id - 1)]->loss(theta, cfg.protocol.alpha);
    }
  }
  return total / static_cast<double>(particles.size() * ids.size());
}

// Unnormalized log target on the grid: prior times the mixtures of `ids`.
LogDensity1D mixture_target(const Problem& problem, std::vector<int> ids) {
  return [&problem, ids](double x) {
    Vector v = Vector::Constant(1, x);
    double lp = problem.prior.log_density(v);
    for (int id : ids) lp += problem.mixtures[static_cast<std::size_t>(id - 1)]->log_mixture(v);
    return lp;
  };
}

std::vector<int> target_ids(const Problem& problem, Phase phase) {
  if (phase == Phase::kLearn) {
    std::vector<int> all;
    for (std::size_t i = 0; i < problem.losses.size(); ++i) all.push_back(static_cast<int>(i) + 1);
    return all;
  }
  return problem.retain_ids();
}

RoundLog evaluate(const ExperimentConfig& cfg, const Problem& problem,
                  const ParticleSet& samples, const LogDensity1D& log_q, Phase phase,
                  int round) {
  RoundLog out;
  MetricRecord& r = out.record;
  r.round = round;
  r.phase = phase_name(phase);
  r.forgotten_acc = kNaN;
  r.retained_acc = kNaN;
  r.kl = kNaN;
  r.forgot_loss = mean_forgotten_loss(cfg, problem, samples);
  if (problem.kind == ExperimentKind::kGaussianMixture) {
    r.kl = grid_kl(log_q, mixture_target(problem, target_ids(problem, phase)), problem.grid);
  } else {
    std::vector<int> classes;
    for (int c = 0; c < problem.num_classes; ++c) classes.push_back(c);
    const AccuracyReport acc = predict_accuracy(samples, problem.layout, problem.test_features,
                                                problem.test_labels, classes);
    out.per_class = acc.per_class;
    if (!problem.forgotten_classes.empty()) r.forgotten_acc = acc.macro(problem.forgotten_classes);
    if (!problem.retained_classes.empty()) r.retained_acc = acc.macro(problem.retained_classes);
  }
  return out;
}

RoundLog evaluate_particles(const ExperimentConfig& cfg, const Problem& problem,
                            const ParticleSet& particles, Phase phase, int round) {
  const KdeConfig kde = cfg.kde;
  auto log_q = [&particles, kde](double x) {
    return kde_log_density(particles, kde, Vector::Constant(1, x));
  };
  return evaluate(cfg, problem, particles, log_q, phase, round);
}

RoundLog evaluate_gaussian(const ExperimentConfig& cfg, const Problem& problem,
                           const GaussianNatParams& eta, Phase phase, int round) {
  if (!eta.valid()) throw NumericError("parametric state is not a valid Gaussian");
  // Fixed evaluation stream so that the same eta always gives the same record.
  Rng rng = make_rng(cfg.seed, kEvalStream);
  const ParticleSet samples = sample_gaussian(eta, static_cast<std::size_t>(cfg.particles), rng);
  auto log_q = [&eta](double x) { return gaussian_log_density(eta, Vector::Constant(1, x)); };
  return evaluate(cfg, problem, samples, log_q, phase, round);
}

std::vector<int> all_ids(int agents) {
  std::vector<int> ids;
  for (int k = 1; k <= agents; ++k) ids.push_back(k);
  return ids;
}

}  // namespace

std::vector<int> Problem::forget_ids() const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == AgentRole::kForget) ids.push_back(static_cast<int>(i) + 1);
  }
  return ids;
}

std::vector<int> Problem::retain_ids() const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == AgentRole::kRetain) ids.push_back(static_cast<int>(i) + 1);
  }
  return ids;
}

Problem build_problem(const ExperimentConfig& cfg) {
  validate(cfg);
  Problem p;
  p.kind = cfg.experiment;
  p.roles.assign(static_cast<std::size_t>(cfg.agents), AgentRole::kRetain);
  for (int id : cfg.forget) p.roles[static_cast<std::size_t>(id - 1)] = AgentRole::kForget;

  if (cfg.experiment == ExperimentKind::kGaussianMixture) {
    p.dim = 1;
    p.prior = Prior::uniform(1, cfg.mixture.prior_lo, cfg.mixture.prior_hi);
    p.grid = cfg.mixture.grid;
    for (const auto& spec : cfg.mixture.agents) {
      std::vector<GaussianMixtureLoss::Component> comps;
      for (const auto& c : spec) {
        comps.push_back({c.weight, Vector::Constant(1, c.mean), Vector::Constant(1, c.variance)});
      }
      auto loss = std::make_shared<GaussianMixtureLoss>(std::move(comps));
      p.mixtures.push_back(loss);
      p.losses.push_back(loss);
    }
  } else {
    const MultilabelSettings& m = cfg.multilabel;
    Dataset train, test;
    if (m.source == DataSource::kSynthetic) {
      SyntheticConfig sc = m.synthetic;
      sc.seed = cfg.seed;
      train = load_synthetic(sc);
      test = load_synthetic_split(sc, cfg.seed ^ kTestStream, m.test_count);
    } else {
      train = load_idx(m.idx.train_images, m.idx.train_labels);
      test = load_idx(m.idx.test_images, m.idx.test_labels);
    }
    p.num_classes = train.num_classes;
    const auto shards =
        partition_non_iid(train, cfg.agents, m.labels_per_agent, m.examples_per_agent, cfg.seed);

    MlpPretrainConfig pc = m.pretrain;
    pc.seed = cfg.seed;
    const PretrainResult pre = pretrain_map(concat(shards, train.num_classes), pc);

    for (const auto& shard : shards) {
      p.losses.push_back(std::make_shared<SoftmaxHeadLoss>(pre.features.transform(shard.inputs),
                                                           shard.labels, train.num_classes));
    }
    p.layout = HeadLayout{pre.features.output_dim(), train.num_classes};
    p.dim = p.layout.param_count();
    p.prior = Prior::gaussian(p.dim, 0.0, m.prior_variance);
    p.test_features = pre.features.transform(test.inputs);
    p.test_labels = test.labels;
    for (int k = 1; k <= cfg.agents; ++k) {
      auto& dest = p.roles[static_cast<std::size_t>(k - 1)] == AgentRole::kForget
                       ? p.forgotten_classes
                       : p.retained_classes;
      for (int c : class_range(k, m.labels_per_agent)) dest.push_back(c);
    }
  }
  p.pvi_prior = GaussianNatParams::from_moments(Vector::Constant(p.dim, cfg.pvi.prior_mean),
                                                Vector::Constant(p.dim, cfg.pvi.prior_variance));
  return p;
}

std::vector<MetricRecord> PhaseResult::records() const {
  std::vector<MetricRecord> out;
  for (const auto& l : log) out.push_back(l.record);
  return out;
}

RoundLog evaluate_snapshot(const ExperimentConfig& cfg, const Problem& problem,
                           const Snapshot& snapshot, Phase phase) {
  if (is_parametric(cfg.method) && phase != Phase::kRetrain) {
    check_snapshot(cfg, problem, snapshot);
    return evaluate_gaussian(cfg, problem, eta_of(snapshot), phase, snapshot.round);
  }
  if (snapshot.rows.cols() != static_cast<Eigen::Index>(problem.dim) || snapshot.rows.rows() < 1) {
    throw DataError("snapshot dimension " + std::to_string(snapshot.rows.cols()) +
                    " does not match the problem (" + std::to_string(problem.dim) + ")");
  }
  return evaluate_particles(cfg, problem, particles_of(snapshot), phase, snapshot.round);
}

PhaseResult run_learning(const ExperimentConfig& cfg, const Problem& problem) {
  PhaseResult out;
  const Stopwatch clock(cfg.output.record_wall_time);
  const auto ids = all_ids(cfg.agents);

  if (is_parametric(cfg.method)) {
    const PviConfig pc = pvi_for(cfg);
    GaussianNatParams global = problem.pvi_prior;
    std::vector<GaussianNatParams> local(ids.size(), GaussianNatParams::zero(problem.dim));
    out.log.push_back(evaluate_gaussian(cfg, problem, global, Phase::kLearn, 0));
    for (int r = 0; r < cfg.learn_rounds; ++r) {
      const int id = schedule(cfg.protocol, r, ids);
      const auto i = static_cast<std::size_t>(id - 1);
      PviOutcome o = pvi_round(global, local[i], *problem.losses[i], pc, r);
      global = std::move(o.global);
      local[i] = std::move(o.local);
      RoundLog l = evaluate_gaussian(cfg, problem, global, Phase::kLearn, r + 1);
      l.agent = id;
      l.record.wall_ms = clock.ms();
      out.log.push_back(std::move(l));
    }
    out.snapshot = snapshot_of(global, cfg.learn_rounds, cfg.seed);
    return out;
  }

  Rng rng = make_rng(cfg.seed, kGlobalStream);
  ServerState server{problem.prior.sample(static_cast<std::size_t>(cfg.particles), rng), 0, cfg.kde,
                     cfg.kernel};
  Federation fed(std::move(server), make_agents(cfg, problem), protocol_for(cfg, problem));
  out.log.push_back(evaluate_particles(cfg, problem, fed.server().global, Phase::kLearn, 0));
  for (int r = 0; r < cfg.learn_rounds; ++r) {
    const int id = fed.next_learning_round(r);
    RoundLog l = evaluate_particles(cfg, problem, fed.server().global, Phase::kLearn, r + 1);
    l.agent = id;
    l.record.wall_ms = clock.ms();
    out.log.push_back(std::move(l));
  }
  out.snapshot = steinfed::snapshot_of(fed.server().global, cfg.learn_rounds, cfg.seed);
  return out;
}

PhaseResult run_unlearning(const ExperimentConfig& cfg, const Problem& problem,
                           const Snapshot& learned) {
  check_snapshot(cfg, problem, learned);
  const auto forget = problem.forget_ids();
  if (forget.empty()) throw ConfigError("forget", "unlearning needs at least one agent to forget");
  PhaseResult out;
  const Stopwatch clock(cfg.output.record_wall_time);
  const int base = learned.round;

  if (is_parametric(cfg.method)) {
    const PviConfig pc = pvi_for(cfg);
    GaussianNatParams global = eta_of(learned);
    // Fresh unlearning factors, one per forget agent.
    std::vector<GaussianNatParams> factor(forget.size(), GaussianNatParams::zero(problem.dim));
    ProtocolConfig rr;
    for (int r = 0; r < cfg.unlearn_rounds; ++r) {
      const int id = schedule(rr, r, forget);
      const auto j = static_cast<std::size_t>(r) % forget.size();
      const auto i = static_cast<std::size_t>(id - 1);
      PviOutcome o = ulpvi_round(global, factor[j], *problem.losses[i], pc, base + r + 1);
      global = std::move(o.global);
      factor[j] = std::move(o.local);
      RoundLog l = evaluate_gaussian(cfg, problem, global, Phase::kUnlearn, base + r + 1);
      l.agent = id;
      l.record.wall_ms = clock.ms();
      out.log.push_back(std::move(l));
    }
    out.snapshot = snapshot_of(global, base + cfg.unlearn_rounds, cfg.seed);
    return out;
  }

  ServerState server{particles_of(learned), base, cfg.kde, cfg.kernel};
  Federation fed(std::move(server), make_agents(cfg, problem), protocol_for(cfg, problem));
  fed.begin_unlearning();
  for (int r = 0; r < cfg.unlearn_rounds; ++r) {
    const int id = fed.next_unlearning_round(r);
    RoundLog l = evaluate_particles(cfg, problem, fed.server().global, Phase::kUnlearn, base + r + 1);
    l.agent = id;
    l.record.wall_ms = clock.ms();
    out.log.push_back(std::move(l));
  }
  out.snapshot = steinfed::snapshot_of(fed.server().global, base + cfg.unlearn_rounds, cfg.seed);
  return out;
}

PhaseResult run_retraining(const ExperimentConfig& cfg, const Problem& problem, int first_round) {
  PhaseResult out;
  const Stopwatch clock(cfg.output.record_wall_time);
  ParticleSet last;
  int last_round = first_round;
  auto observer = [&](int it, const ParticleSet& particles) {
    RoundLog l = evaluate_particles(cfg, problem, particles, Phase::kRetrain, first_round + it);
    l.record.wall_ms = clock.ms();
    out.log.push_back(std::move(l));
    last = particles;
    last_round = first_round + it;
    return true;
  };
  retrain_from_scratch(make_agents(cfg, problem), problem.prior,
                       static_cast<std::size_t>(cfg.particles), cfg.kde, cfg.kernel,
                       protocol_for(cfg, problem), cfg.retrain.mode, cfg.retrain.budget, observer);
  out.snapshot = steinfed::snapshot_of(last, last_round, cfg.seed);
  return out;
}

ForgettingSummary summarize_forgetting(const std::vector<MetricRecord>& records,
                                       int num_classes) {
  if (num_classes < 1) throw NumericError("summary: num_classes must be positive");
  ForgettingSummary s;
  const double chance = 1.0 / static_cast<double>(num_classes);
  const MetricRecord* last_learn = nullptr;
  for (const auto& r : records) {
    if (r.phase == phase_name(Phase::kLearn)) last_learn = &r;
  }
  if (!last_learn) return s;
  s.reference_retained = last_learn->retained_acc;

  std::vector<MetricRecord> unlearn{*last_learn};
  std::vector<MetricRecord> retrain;
  for (const auto& r : records) {
    if (r.phase == phase_name(Phase::kUnlearn)) unlearn.push_back(r);
    if (r.phase == phase_name(Phase::kRetrain)) retrain.push_back(r);
  }
  if (unlearn.size() > 1) {
    const int f = first_forgetting_round(unlearn, chance, s.reference_retained);
    if (f >= 0) s.unlearn_rounds = f - last_learn->round;
  }
  if (!retrain.empty()) {
    const int f = first_forgetting_round(retrain, chance, s.reference_retained);
    if (f >= 0) s.retrain_iterations = f - retrain.front().round;
  }
  return s;
}

std::string snapshot_file(Phase phase) { return std::string(phase_name(phase)) + ".snap"; }

void write_metrics(const std::string& path, const std::vector<RoundLog>& log, bool append) {
  std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
  if (!out) throw DataError("cannot write metrics file '" + path + "'");
  if (!append) out << kMetricsHeader << '\n';
  for (const auto& l : log) out << format_metric_row(l.record) << '\n';
}

void write_transcript(const std::string& path, const std::vector<RoundLog>& log, bool append) {
  std::ofstream out(path, append ? std::ios::binary | std::ios::app : std::ios::binary);
  if (!out) throw DataError("cannot write transcript '" + path + "'");
  for (const auto& l : log) {
    nlohmann::json j;
    j["round"] = l.record.round;
    j["phase"] = l.record.phase;
    j["agent"] = l.agent;
    j["forgotten_acc"] = l.record.forgotten_acc;
    j["retained_acc"] = l.record.retained_acc;
    j["kl"] = l.record.kl;
    j["forgot_loss"] = l.record.forgot_loss;
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, a] : l.per_class) per_class[std::to_string(c)] = a;
    j["per_class"] = per_class;
    j["wall_ms"] = l.record.wall_ms;
    out << j.dump() << '\n';
  }
}

std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const Problem problem = build_problem(cfg);
  const fs::path dir(cfg.output.dir);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "config.json", std::ios::binary);
    out << dump_config(cfg) << '\n';
  }
  const std::string metrics = (dir / kMetricsFile).string();
  const std::string transcript = (dir / kTranscriptFile).string();

  PhaseResult learned = run_learning(cfg, problem);
  write_metrics(metrics, learned.log, false);
  write_transcript(transcript, learned.log, false);
  write_snapshot((dir / snapshot_file(Phase::kLearn)).string(), learned.snapshot);
  std::vector<MetricRecord> all = learned.records();

  std::optional<PhaseResult> next;
  Phase phase = Phase::kLearn;
  if (cfg.method == Method::kForgetSvgd || cfg.method == Method::kUlpvi) {
    next = run_unlearning(cfg, problem, learned.snapshot);
    phase = Phase::kUnlearn;
  } else if (cfg.method == Method::kRetrain) {
    next = run_retraining(cfg, problem, learned.snapshot.round + 1);
    phase = Phase::kRetrain;
  }
  if (next) {
    write_metrics(metrics, next->log, true);
    write_transcript(transcript, next->log, true);
    write_snapshot((dir / snapshot_file(phase)).string(), next->snapshot);
    for (const auto& r : next->records()) all.push_back(r);
  }
  return all;
}

}  // namespace steinfed
