#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "steinfed/config.hpp"
#include "steinfed/metrics.hpp"
#include "steinfed/snapshot.hpp"

namespace steinfed {

/// Everything a run needs besides the optimizer state: prior, per-agent
/// losses and the evaluation data for the chosen experiment.
struct Problem {
  ExperimentKind kind = ExperimentKind::kGaussianMixture;
  std::size_t dim = 0;
  Prior prior = Prior::uniform(1, -10.0, 10.0);
  GaussianNatParams pvi_prior;
  std::vector<std::shared_ptr<const LocalLoss>> losses;  // agent k at index k - 1
  std::vector<AgentRole> roles;

  // Mixture experiment.
  std::vector<std::shared_ptr<const GaussianMixtureLoss>> mixtures;
  Grid1D grid;

  // Multilabel experiment.
  HeadLayout layout;
  Matrix test_features;
  std::vector<int> test_labels;
  std::vector<int> forgotten_classes;
  std::vector<int> retained_classes;
  int num_classes = 0;

  std::vector<int> forget_ids() const;
  std::vector<int> retain_ids() const;
};

/// Builds losses and evaluation data. For the multilabel experiment this
/// loads or generates the data, partitions it and pretrains the feature map.
Problem build_problem(const ExperimentConfig& cfg);

/// A metric record plus the details kept only in the transcript.
struct RoundLog {
  MetricRecord record;
  int agent = 0;  // 0 for records not produced by a round
  std::map<int, double> per_class;
};

struct PhaseResult {
  std::vector<RoundLog> log;
  Snapshot snapshot;
  std::vector<MetricRecord> records() const;
};

/// Evaluates a saved state. `phase` selects the KL target: all agents for
/// learning, retained agents otherwise.
RoundLog evaluate_snapshot(const ExperimentConfig& cfg, const Problem& problem,
                           const Snapshot& snapshot, Phase phase);

/// Learning from the prior: one record for the initial state, then one per round.
PhaseResult run_learning(const ExperimentConfig& cfg, const Problem& problem);

/// Unlearning the forget set starting from a learned state. Records continue
/// the round numbering of `learned`.
PhaseResult run_unlearning(const ExperimentConfig& cfg, const Problem& problem,
                           const Snapshot& learned);

/// Retraining from scratch on the retained agents, with records numbered from
/// `first_round` (the fresh prior draw) onwards.
PhaseResult run_retraining(const ExperimentConfig& cfg, const Problem& problem, int first_round);

/// Iteration counts for the forget-versus-retrain comparison.
struct ForgettingSummary {
  double reference_retained = 0.0;  // retained accuracy at the end of learning
  int unlearn_rounds = -1;          // rounds until forgetting, -1 if never
  int retrain_iterations = -1;      // retrain iterations (or rounds) until forgetting
};

/// Applies first_forgetting_round with chance 1/num_classes to the unlearning
/// records (preceded by the last learning record) and to the retraining records.
ForgettingSummary summarize_forgetting(const std::vector<MetricRecord>& records,
                                       int num_classes);

/// Runs learning, then unlearning (forget_svgd, ulpvi) or retraining (retrain).
/// Writes metrics.csv, transcript.jsonl, config.json and a snapshot per phase
/// under cfg.output.dir and returns all records.
std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg);

// File names inside the output directory.
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kTranscriptFile = "transcript.jsonl";
std::string snapshot_file(Phase phase);

// Writing helpers shared with the command-line tool.
void write_metrics(const std::string& path, const std::vector<RoundLog>& log, bool append);
void write_transcript(const std::string& path, const std::vector<RoundLog>& log, bool append);

}  // namespace steinfed
