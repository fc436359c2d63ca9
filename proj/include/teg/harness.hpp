#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "teg/egnn.hpp"
#include "teg/episodes.hpp"
#include "teg/gcn.hpp"
#include "teg/graph.hpp"
#include "teg/params.hpp"
#include "teg/structural.hpp"

namespace teg {

// Flat key=value run configuration. Every knob of a run lives here so that
// the serialized form plus the code version pins the result exactly.
struct RunConfig {
  // Data: a graph file, or a generated stochastic block model when empty.
  std::string dataset_path;
  SbmConfig sbm{15, 40, 32, 0.15, 0.02, 0.3, 1.0, 1};

  // Class split and its own seed; dataset-level choices stay fixed while
  // run seeds vary, mirroring repeated runs on one benchmark.
  std::size_t split_base = 5;
  std::size_t split_valid = 5;
  std::size_t split_novel = 5;
  std::uint64_t split_seed = 1;

  // Structural features.
  int anchor_count = 16;
  AnchorScheme anchor_scheme = AnchorScheme::kExpectedCount;
  std::uint64_t anchor_seed = 1;

  // Diversity restriction of the training pool.
  double class_fraction = 1.0;
  double label_availability = 1.0;
  std::uint64_t restrict_seed = 1;

  // Model shape.
  std::size_t hidden_dim = 64;  // semantic embedding and coordinate width
  double dropout_rate = 0.5;
  std::size_t gcn_layers = 1;
  int egnn_layers = 2;
  int message_dim = 64;
  TaskGraphMode task_graph_mode = TaskGraphMode::kComplete;

  // Episode shape. train_way 0 means "same as n_way"; smaller values train
  // with fewer ways than evaluation uses.
  int n_way = 5;
  int k_shot = 5;
  int m_query = 5;
  int train_way = 0;

  // Schedules.
  int train_episodes = 500;
  int val_interval = 25;  // 0 disables validation
  int val_episodes = 20;
  int eval_episodes = 50;
  int eval_seeds = 5;

  double gamma = 0.5;  // blend of task-level and graph-level loss
  AdamConfig adam;
  std::uint64_t seed = 0;  // master run seed

  int effective_train_way() const { return train_way > 0 ? train_way : n_way; }

  static RunConfig from_file(const std::string& path);
  // Applies one key=value assignment; unknown keys throw.
  void apply(const std::string& key, const std::string& value);
  // Canonical form: every key, sorted, full double precision.
  std::string serialize() const;
  // FNV-1a hash of the canonical form, as fixed-width hex.
  std::string content_hash() const;
  void validate() const;
};

// Everything derived from config and data that stays fixed across a run:
// graph, split, normalized adjacency, anchors, structural features, pools.
struct Workspace {
  RunConfig cfg;
  Graph graph;
  ClassSplit split;
  NormalizedAdjacency adjacency;
  AnchorSet anchors;
  Tensor structural;  // |V| x anchor_count
  LabelPool train_pool;
  LabelPool valid_pool;  // falls back to the training pool when no classes
  LabelPool novel_pool;  // falls back to the training pool when no classes

  GcnConfig gcn_config() const;
  EgnnConfig egnn_config() const;
};

Workspace prepare(const RunConfig& cfg);

// Fresh Glorot/zero initialization of all model parameters, seeded from the
// run seed. Training starts here; untrained baselines use it directly.
ParamStore init_model_params(const Workspace& ws);

// Semantic embeddings of all nodes with fixed parameters (inference mode).
Tensor semantic_embeddings(const Workspace& ws, const ParamStore& params);

struct TrainResult {
  ParamStore params;       // best validation parameters, final when none ran
  AdamState adam;          // optimizer state at the end of training
  double best_val_acc = -1.0;
  int best_episode = -1;
  double final_loss = 0.0;
};

// Episodic training. Writes one JSON line per episode (and per validation
// probe) to `log` when given. Throws std::runtime_error naming the episode
// if the loss degenerates.
TrainResult train(const Workspace& ws, std::ostream* log);

// The full blended episode loss as a closure for numerical gradient
// checking: deterministic in the parameters, so dropout stays off. The
// task supplies the episode shape; the blend comes from the config.
std::function<Tape::ValueId(Tape&, const ParamStore&)> episode_loss_builder(
    const Workspace& ws, const MetaTask& task);

struct EvalSummary {
  std::vector<double> per_seed_accuracy;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation across seeds
};

// The evaluation stream every standard caller derives from the run seed.
std::uint64_t default_eval_seed(const RunConfig& cfg);

// Episodic evaluation over eval_seeds independent streams of eval_episodes
// episodes each. Parallelism (TEG_THREADS, default 1) never changes
// results or output bytes. `dump` receives one JSON line per episode with
// nodes, labels and predictions when given.
EvalSummary evaluate(const Workspace& ws, const ParamStore& params,
                     const LabelPool& pool, std::uint64_t base_seed,
                     std::ostream* log = nullptr, std::ostream* dump = nullptr);

// Orthogonal matrix from Gram-Schmidt on Gaussian rows; redraws on rank
// deficiency and verifies Q Q^T = I to 1e-10.
Tensor random_orthogonal(std::size_t dim, Rng& rng);

// Global symmetry probe: rows map to rows * q + lambda, optionally with
// additive Gaussian noise of width noise_sigma on the transformed copy.
struct TransformSpec {
  Tensor q;
  double lambda = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

TransformSpec make_transform(std::size_t dim, double noise_sigma,
                             std::uint64_t seed);

struct AuditResult {
  double reference_accuracy = 0.0;
  std::vector<double> transformed_accuracy;  // one per transform
  double mean_transformed_accuracy = 0.0;
  double agreement = 0.0;          // matching query predictions, all pairs
  double max_coord_rel_err = 0.0;  // embeddings vs transformed reference
  double max_prop_abs_err = 0.0;
};

// Replays fixed episodes under `transforms` random global symmetries of the
// semantic embedding space and measures how predictions and embeddings
// move. With zero noise both error columns stay at float-error level and
// agreement stays at 1 up to ties; noise degrades them smoothly.
AuditResult equivariance_audit(const Workspace& ws, const ParamStore& params,
                               const LabelPool& pool, int episodes,
                               int transforms, double noise_sigma,
                               std::ostream* log = nullptr);

struct GridCell {
  double class_fraction = 1.0;
  double label_availability = 1.0;
  std::string status;  // "ok" or "infeasible"
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

// Trains and evaluates one run per (fraction, availability) combination,
// holding everything else fixed. Cells whose restricted pool cannot field
// training episodes are reported as infeasible instead of failing the
// sweep. Writes CSV (header plus one row per cell) to `csv` when given.
std::vector<GridCell> diversity_grid(const RunConfig& base_cfg,
                                     const std::vector<double>& fractions,
                                     const std::vector<double>& availabilities,
                                     std::ostream* csv = nullptr);

}  // namespace teg
