#include "teg/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <thread>
#include <utility>

namespace teg {
namespace {

using nlohmann::json;

// Salts separating every derived random stream from the master run seed.
constexpr std::uint64_t kSaltInit = 1;
constexpr std::uint64_t kSaltDropout = 2;
constexpr std::uint64_t kSaltTrainEpisode = 3;
constexpr std::uint64_t kSaltValidation = 4;
constexpr std::uint64_t kSaltEval = 5;
constexpr std::uint64_t kSaltAudit = 6;
constexpr std::uint64_t kSaltNoise = 7;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

double parse_double_value(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) fail("config key '" + key + "': empty value");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) {
    fail("config key '" + key + "': bad number '" + text + "'");
  }
  if (!std::isfinite(v)) fail("config key '" + key + "': non-finite value");
  return v;
}

long long parse_int_value(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) fail("config key '" + key + "': empty value");
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) {
    fail("config key '" + key + "': bad integer '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || t[0] == '-') {
    fail("config key '" + key + "': bad unsigned integer '" + text + "'");
  }
  char* end = nullptr;
  const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size()) {
    fail("config key '" + key + "': bad unsigned integer '" + text + "'");
  }
  return v;
}

// One declarative row per config key keeps parsing and serialization in
// lockstep; the table is sorted by name and serialize walks it in order.
struct ConfigKey {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

ConfigKey int_key(const char* name, int RunConfig::*field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            const long long x = parse_int_value(name, v);
            if (x < INT32_MIN || x > INT32_MAX) {
              fail(std::string("config key '") + name + "': out of range");
            }
            c.*field = static_cast<int>(x);
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

ConfigKey size_key(const char* name, std::size_t RunConfig::*field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            const long long x = parse_int_value(name, v);
            if (x < 0) {
              fail(std::string("config key '") + name + "': negative value");
            }
            c.*field = static_cast<std::size_t>(x);
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

ConfigKey u64_key(const char* name, std::uint64_t RunConfig::*field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            c.*field = parse_u64_value(name, v);
          },
          [field](const RunConfig& c) { return std::to_string(c.*field); }};
}

ConfigKey double_key(const char* name, double RunConfig::*field) {
  return {name,
          [name, field](RunConfig& c, const std::string& v) {
            c.*field = parse_double_value(name, v);
          },
          [field](const RunConfig& c) { return fmt_double(c.*field); }};
}

template <typename T, typename M>
ConfigKey nested_size_key(const char* name, M RunConfig::*mem,
                          T M::*field) {
  return {name,
          [name, mem, field](RunConfig& c, const std::string& v) {
            const long long x = parse_int_value(name, v);
            if (x < 0) {
              fail(std::string("config key '") + name + "': negative value");
            }
            c.*mem.*field = static_cast<T>(x);
          },
          [mem, field](const RunConfig& c) {
            return std::to_string(c.*mem.*field);
          }};
}

template <typename M>
ConfigKey nested_double_key(const char* name, M RunConfig::*mem,
                            double M::*field) {
  return {name,
          [name, mem, field](RunConfig& c, const std::string& v) {
            c.*mem.*field = parse_double_value(name, v);
          },
          [mem, field](const RunConfig& c) {
            return fmt_double(c.*mem.*field);
          }};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(int_key("anchors.count", &RunConfig::anchor_count));
    k.push_back(
        {"anchors.scheme",
         [](RunConfig& c, const std::string& v) {
           const std::string t = trim(v);
           if (t == "expected") {
             c.anchor_scheme = AnchorScheme::kExpectedCount;
           } else if (t == "bernoulli") {
             c.anchor_scheme = AnchorScheme::kBernoulli;
           } else {
             fail("config key 'anchors.scheme': expected 'expected' or "
                  "'bernoulli', got '" +
                  v + "'");
           }
         },
         [](const RunConfig& c) {
           return std::string(c.anchor_scheme == AnchorScheme::kExpectedCount
                                  ? "expected"
                                  : "bernoulli");
         }});
    k.push_back(u64_key("anchors.seed", &RunConfig::anchor_seed));
    k.push_back({"data.path",
                 [](RunConfig& c, const std::string& v) {
                   c.dataset_path = trim(v);
                 },
                 [](const RunConfig& c) { return c.dataset_path; }});
    k.push_back(int_key("episode.k_shot", &RunConfig::k_shot));
    k.push_back(int_key("episode.m_query", &RunConfig::m_query));
    k.push_back(int_key("episode.n_way", &RunConfig::n_way));
    k.push_back(int_key("episode.train_way", &RunConfig::train_way));
    k.push_back(int_key("eval.episodes", &RunConfig::eval_episodes));
    k.push_back(int_key("eval.seeds", &RunConfig::eval_seeds));
    k.push_back(double_key("loss.gamma", &RunConfig::gamma));
    k.push_back(double_key("model.dropout", &RunConfig::dropout_rate));
    k.push_back(int_key("model.egnn_layers", &RunConfig::egnn_layers));
    k.push_back(size_key("model.gcn_layers", &RunConfig::gcn_layers));
    k.push_back(size_key("model.hidden_dim", &RunConfig::hidden_dim));
    k.push_back(int_key("model.message_dim", &RunConfig::message_dim));
    k.push_back(
        {"model.task_graph",
         [](RunConfig& c, const std::string& v) {
           const std::string t = trim(v);
           if (t == "complete") {
             c.task_graph_mode = TaskGraphMode::kComplete;
           } else if (t == "bipartite") {
             c.task_graph_mode = TaskGraphMode::kBipartite;
           } else {
             fail("config key 'model.task_graph': expected 'complete' or "
                  "'bipartite', got '" +
                  v + "'");
           }
         },
         [](const RunConfig& c) {
           return std::string(c.task_graph_mode == TaskGraphMode::kComplete
                                  ? "complete"
                                  : "bipartite");
         }});
    k.push_back(nested_double_key("opt.beta1", &RunConfig::adam,
                                  &AdamConfig::beta1));
    k.push_back(nested_double_key("opt.beta2", &RunConfig::adam,
                                  &AdamConfig::beta2));
    k.push_back(nested_double_key("opt.eps", &RunConfig::adam,
                                  &AdamConfig::eps));
    k.push_back(nested_double_key("opt.lr", &RunConfig::adam,
                                  &AdamConfig::lr));
    k.push_back(nested_double_key("opt.weight_decay", &RunConfig::adam,
                                  &AdamConfig::weight_decay));
    k.push_back(double_key("restrict.class_fraction",
                           &RunConfig::class_fraction));
    k.push_back(double_key("restrict.label_availability",
                           &RunConfig::label_availability));
    k.push_back(u64_key("restrict.seed", &RunConfig::restrict_seed));
    k.push_back(nested_size_key("sbm.classes", &RunConfig::sbm,
                                &SbmConfig::num_classes));
    k.push_back(nested_size_key("sbm.feature_dim", &RunConfig::sbm,
                                &SbmConfig::feature_dim));
    k.push_back(nested_double_key("sbm.mean_scale", &RunConfig::sbm,
                                  &SbmConfig::class_mean_scale));
    k.push_back(nested_size_key("sbm.nodes_per_class", &RunConfig::sbm,
                                &SbmConfig::nodes_per_class));
    k.push_back(nested_double_key("sbm.noise_scale", &RunConfig::sbm,
                                  &SbmConfig::noise_scale));
    k.push_back(nested_double_key("sbm.p_in", &RunConfig::sbm,
                                  &SbmConfig::p_in));
    k.push_back(nested_double_key("sbm.p_out", &RunConfig::sbm,
                                  &SbmConfig::p_out));
    k.push_back({"sbm.seed",
                 [](RunConfig& c, const std::string& v) {
                   c.sbm.seed = parse_u64_value("sbm.seed", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.sbm.seed); }});
    k.push_back(u64_key("seed", &RunConfig::seed));
    k.push_back(size_key("split.base", &RunConfig::split_base));
    k.push_back(size_key("split.novel", &RunConfig::split_novel));
    k.push_back(u64_key("split.seed", &RunConfig::split_seed));
    k.push_back(size_key("split.valid", &RunConfig::split_valid));
    k.push_back(int_key("train.episodes", &RunConfig::train_episodes));
    k.push_back(int_key("train.val_episodes", &RunConfig::val_episodes));
    k.push_back(int_key("train.val_interval", &RunConfig::val_interval));
    return k;
  }();
  return keys;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) {
    m = std::max(m, std::fabs(t.data()[i]));
  }
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::logic_error("max_abs_diff: shape mismatch");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

std::vector<int> range_vec(int begin, int end) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(end - begin));
  for (int i = begin; i < end; ++i) out.push_back(i);
  return out;
}

std::size_t eval_threads(std::size_t jobs) {
  std::size_t n = 1;
  if (const char* env = std::getenv("TEG_THREADS")) {
    const std::string t = trim(env);
    if (!t.empty()) {
      char* end = nullptr;
      const long long v = std::strtoll(t.c_str(), &end, 10);
      if (end != t.c_str() + t.size() || v < 1) {
        throw std::runtime_error("TEG_THREADS must be a positive integer");
      }
      n = static_cast<std::size_t>(v);
    }
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

struct Models {
  GcnEncoder gcn;
  TaskEmbedder embedder;
};

Models make_models(const Workspace& ws) {
  return Models{GcnEncoder(ws.gcn_config()), TaskEmbedder(ws.egnn_config())};
}

// Full per-episode inference from precomputed inputs: task embedding when
// the blend uses it, then prototype classification of the queries.
struct EpisodeOutput {
  Tensor coords;  // task embeddings, num_nodes x hidden_dim
  Tensor props;   // invariant channel after embedding
  std::vector<int> predictions;
  double acc = 0.0;
};

EpisodeOutput run_episode_on(const Workspace& ws, const Models& models,
                             const ParamStore& params, const Tensor& coords,
                             const Tensor& props, const MetaTask& task) {
  EpisodeOutput out;
  if (ws.cfg.gamma > 0.0 && models.embedder.config().layers > 0) {
    Tape tape;
    const TaskGraph tg = build_task_graph(task.num_support(), task.num_query(),
                                          ws.cfg.task_graph_mode);
    const auto emb = models.embedder.embed(tape, tape.constant(coords),
                                           tape.constant(props), tg, params);
    out.coords = tape.value(emb.coords);
    out.props = tape.value(emb.props);
  } else {
    out.coords = coords;
    out.props = props;
  }
  const Tensor zs =
      kernels::gather_rows(out.coords, range_vec(0, task.num_support()));
  const Tensor zq = kernels::gather_rows(
      out.coords, range_vec(task.num_support(), task.num_nodes()));
  const Tensor protos = prototype_matrix(zs, task.n_way, task.k_shot);
  const Tensor probs = class_probabilities(zq, protos);
  out.predictions = predict_classes(probs);
  out.acc = accuracy(out.predictions, task.query_labels());
  return out;
}

EpisodeOutput run_episode(const Workspace& ws, const Models& models,
                          const ParamStore& params, const Tensor& h_all,
                          const MetaTask& task) {
  const std::vector<int> nodes = task.all_nodes();
  return run_episode_on(ws, models, params, kernels::gather_rows(h_all, nodes),
                        kernels::gather_rows(ws.structural, nodes), task);
}

// Mean episode accuracy over a dedicated validation stream.
double validation_accuracy(const Workspace& ws, const Models& models,
                           const ParamStore& params, std::uint64_t seed) {
  const Tensor h = semantic_embeddings(ws, params);
  double total = 0.0;
  for (int e = 0; e < ws.cfg.val_episodes; ++e) {
    const MetaTask task =
        sample_task(ws.valid_pool, ws.cfg.n_way, ws.cfg.k_shot,
                    ws.cfg.m_query, mix_seed(seed, e));
    total += run_episode(ws, models, params, h, task).acc;
  }
  return total / static_cast<double>(ws.cfg.val_episodes);
}

Tensor apply_q_lambda(const Tensor& rows, const TransformSpec& spec) {
  Tensor out = kernels::matmul(rows, spec.q);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] += spec.lambda;
  return out;
}

Tensor apply_transform(const Tensor& rows, const TransformSpec& spec,
                       std::uint64_t episode_index) {
  Tensor out = apply_q_lambda(rows, spec);
  if (spec.noise_sigma > 0.0) {
    Rng rng(mix_seed(spec.noise_seed, episode_index));
    for (std::size_t i = 0; i < out.numel(); ++i) {
      out.data()[i] += rng.normal(0.0, spec.noise_sigma);
    }
  }
  return out;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    try {
      cfg.apply(trim(t.substr(0, eq)), t.substr(eq + 1));
    } catch (const std::exception& ex) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               ex.what());
    }
  }
  cfg.validate();
  return cfg;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys()) {
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  }
  fail("unknown config key '" + key + "'");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const ConfigKey& k : config_keys()) {
    out += k.name;
    out += '=';
    out += k.get(*this);
    out += '\n';
  }
  return out;
}

std::string RunConfig::content_hash() const {
  const std::string text = serialize();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void RunConfig::validate() const {
  if (hidden_dim < 1) fail("model.hidden_dim must be at least 1");
  if (gcn_layers < 1) fail("model.gcn_layers must be at least 1");
  if (egnn_layers < 0) fail("model.egnn_layers must not be negative");
  if (message_dim < 1) fail("model.message_dim must be at least 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    fail("model.dropout must lie in [0, 1)");
  }
  if (anchor_count < 1) fail("anchors.count must be at least 1");
  if (n_way < 1 || k_shot < 1 || m_query < 1) {
    fail("episode.n_way, episode.k_shot and episode.m_query must be at "
         "least 1");
  }
  if (train_way < 0) fail("episode.train_way must not be negative");
  if (train_episodes < 0) fail("train.episodes must not be negative");
  if (val_interval < 0) fail("train.val_interval must not be negative");
  if (val_interval > 0 && val_episodes < 1) {
    fail("train.val_episodes must be at least 1 when validation runs");
  }
  if (eval_episodes < 1) fail("eval.episodes must be at least 1");
  if (eval_seeds < 1) fail("eval.seeds must be at least 1");
  if (gamma < 0.0 || gamma > 1.0) fail("loss.gamma must lie in [0, 1]");
  if (class_fraction <= 0.0 || class_fraction > 1.0 ||
      label_availability <= 0.0 || label_availability > 1.0) {
    fail("restrict fractions must lie in (0, 1]");
  }
  if (adam.lr <= 0.0) fail("opt.lr must be positive");
  if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 ||
      adam.beta2 >= 1.0) {
    fail("opt.beta1 and opt.beta2 must lie in [0, 1)");
  }
  if (adam.eps <= 0.0) fail("opt.eps must be positive");
  if (adam.weight_decay < 0.0) fail("opt.weight_decay must not be negative");
  if (split_base < 1) fail("split.base must be at least 1");
}

GcnConfig Workspace::gcn_config() const {
  GcnConfig c;
  c.input_dim = graph.feature_dim();
  c.output_dim = cfg.hidden_dim;
  c.layers = cfg.gcn_layers;
  c.dropout_rate = cfg.dropout_rate;
  return c;
}

EgnnConfig Workspace::egnn_config() const {
  EgnnConfig c;
  c.layers = cfg.egnn_layers;
  c.coord_dim = static_cast<int>(cfg.hidden_dim);
  c.prop_dim = cfg.anchor_count;
  c.message_dim = cfg.message_dim;
  return c;
}

Workspace prepare(const RunConfig& cfg) {
  cfg.validate();
  Workspace ws;
  ws.cfg = cfg;
  ws.graph = cfg.dataset_path.empty() ? generate_sbm(cfg.sbm)
                                      : load_graph(cfg.dataset_path);
  ws.split = split_classes(ws.graph, cfg.split_base, cfg.split_valid,
                           cfg.split_novel, cfg.split_seed);
  ws.adjacency = normalize_adjacency(ws.graph);
  ws.anchors = attach_anchors(ws.graph, cfg.anchor_count, cfg.anchor_seed,
                              cfg.anchor_scheme);
  ws.structural = build_structural_features(ws.graph, ws.anchors);
  ws.train_pool = restrict_pool(ws.graph, ws.split, cfg.class_fraction,
                                cfg.label_availability, cfg.restrict_seed);
  ws.valid_pool = ws.split.valid.empty() ? ws.train_pool
                                         : full_pool(ws.graph, ws.split.valid);
  ws.novel_pool = ws.split.novel.empty() ? ws.train_pool
                                         : full_pool(ws.graph, ws.split.novel);
  return ws;
}

ParamStore init_model_params(const Workspace& ws) {
  const Models models = make_models(ws);
  ParamStore store;
  Rng rng(mix_seed(ws.cfg.seed, kSaltInit));
  models.gcn.init_params(store, rng);
  models.embedder.init_params(store, rng);
  return store;
}

Tensor semantic_embeddings(const Workspace& ws, const ParamStore& params) {
  const GcnEncoder gcn(ws.gcn_config());
  Tape tape;
  const auto h = gcn.forward(tape, ws.adjacency,
                             tape.constant(ws.graph.features()), params,
                             false, nullptr);
  return tape.value(h);
}

TrainResult train(const Workspace& ws, std::ostream* log) {
  const RunConfig& cfg = ws.cfg;
  const Models models = make_models(ws);
  TrainResult result;
  result.params = init_model_params(ws);
  result.adam = AdamState::create(result.params, cfg.adam);
  Rng dropout_rng(mix_seed(cfg.seed, kSaltDropout));

  const int tw = cfg.effective_train_way();
  const bool have_node = cfg.gamma > 0.0;
  const bool have_graph = cfg.gamma < 1.0;

  ParamStore best;
  bool any_val = false;

  for (int e = 0; e < cfg.train_episodes; ++e) {
    try {
      const MetaTask task =
          sample_task(ws.train_pool, tw, cfg.k_shot, cfg.m_query,
                      mix_seed(cfg.seed, kSaltTrainEpisode, e));
      Tape tape;
      const auto x = tape.constant(ws.graph.features());
      const auto h = models.gcn.forward(tape, ws.adjacency, x, result.params,
                                        true, &dropout_rng);
      Tape::ValueId loss_node = 0;
      Tape::ValueId loss_graph = 0;
      if (have_graph) {
        const auto hs = tape.gather_rows(h, task.support_nodes);
        const auto hq = tape.gather_rows(h, task.query_nodes);
        loss_graph = proto_nll(tape, hs, hq, tw, cfg.k_shot, cfg.m_query);
      }
      if (have_node) {
        const std::vector<int> nodes = task.all_nodes();
        const auto coords = tape.gather_rows(h, nodes);
        const auto props =
            tape.constant(kernels::gather_rows(ws.structural, nodes));
        const TaskGraph tg = build_task_graph(
            task.num_support(), task.num_query(), cfg.task_graph_mode);
        const auto emb =
            models.embedder.embed(tape, coords, props, tg, result.params);
        const auto zs =
            tape.gather_rows(emb.coords, range_vec(0, task.num_support()));
        const auto zq = tape.gather_rows(
            emb.coords, range_vec(task.num_support(), task.num_nodes()));
        loss_node = proto_nll(tape, zs, zq, tw, cfg.k_shot, cfg.m_query);
      }
      const Tape::ValueId total =
          have_node && have_graph
              ? tape.add(tape.scale(loss_node, cfg.gamma),
                         tape.scale(loss_graph, 1.0 - cfg.gamma))
              : (have_node ? loss_node : loss_graph);
      tape.backward(total);
      const auto grads = collect_grads(tape, result.params);
      adam_step(result.params, grads, result.adam);
      result.final_loss = tape.value(total).scalar_value();
      if (log) {
        json j;
        j["episode"] = e;
        j["loss"] = result.final_loss;
        if (have_node) j["loss_node"] = tape.value(loss_node).scalar_value();
        if (have_graph) j["loss_graph"] = tape.value(loss_graph).scalar_value();
        *log << j.dump() << "\n";
      }
    } catch (const std::exception& ex) {
      throw std::runtime_error("training episode " + std::to_string(e) + ": " +
                               ex.what());
    }

    if (cfg.val_interval > 0 &&
        ((e + 1) % cfg.val_interval == 0 || e + 1 == cfg.train_episodes)) {
      const double acc = validation_accuracy(
          ws, models, result.params, mix_seed(cfg.seed, kSaltValidation, e));
      if (acc > result.best_val_acc) {
        result.best_val_acc = acc;
        result.best_episode = e;
        best = result.params;
      }
      any_val = true;
      if (log) {
        json j;
        j["episode"] = e;
        j["val_accuracy"] = acc;
        *log << j.dump() << "\n";
      }
    }
  }

  if (any_val) result.params = best;
  return result;
}

std::uint64_t default_eval_seed(const RunConfig& cfg) {
  return mix_seed(cfg.seed, kSaltEval);
}

std::function<Tape::ValueId(Tape&, const ParamStore&)> episode_loss_builder(
    const Workspace& ws, const MetaTask& task) {
  return [ws, task](Tape& tape, const ParamStore& params) -> Tape::ValueId {
    const RunConfig& cfg = ws.cfg;
    const Models models = make_models(ws);
    const bool have_node = cfg.gamma > 0.0;
    const bool have_graph = cfg.gamma < 1.0;
    const auto x = tape.constant(ws.graph.features());
    const auto h =
        models.gcn.forward(tape, ws.adjacency, x, params, false, nullptr);
    Tape::ValueId loss_node = 0;
    Tape::ValueId loss_graph = 0;
    if (have_graph) {
      const auto hs = tape.gather_rows(h, task.support_nodes);
      const auto hq = tape.gather_rows(h, task.query_nodes);
      loss_graph =
          proto_nll(tape, hs, hq, task.n_way, task.k_shot, task.m_query);
    }
    if (have_node) {
      const std::vector<int> nodes = task.all_nodes();
      const auto coords = tape.gather_rows(h, nodes);
      const auto props =
          tape.constant(kernels::gather_rows(ws.structural, nodes));
      const TaskGraph tg = build_task_graph(
          task.num_support(), task.num_query(), cfg.task_graph_mode);
      const auto emb = models.embedder.embed(tape, coords, props, tg, params);
      const auto zs =
          tape.gather_rows(emb.coords, range_vec(0, task.num_support()));
      const auto zq = tape.gather_rows(
          emb.coords, range_vec(task.num_support(), task.num_nodes()));
      loss_node =
          proto_nll(tape, zs, zq, task.n_way, task.k_shot, task.m_query);
    }
    return have_node && have_graph
               ? tape.add(tape.scale(loss_node, cfg.gamma),
                          tape.scale(loss_graph, 1.0 - cfg.gamma))
               : (have_node ? loss_node : loss_graph);
  };
}

EvalSummary evaluate(const Workspace& ws, const ParamStore& params,
                     const LabelPool& pool, std::uint64_t base_seed,
                     std::ostream* log, std::ostream* dump) {
  const RunConfig& cfg = ws.cfg;
  const Models models = make_models(ws);
  const Tensor h = semantic_embeddings(ws, params);

  const std::size_t seeds = static_cast<std::size_t>(cfg.eval_seeds);
  const std::size_t per_seed = static_cast<std::size_t>(cfg.eval_episodes);
  const std::size_t total = seeds * per_seed;
  std::vector<MetaTask> tasks;
  tasks.reserve(total);
  for (std::size_t s = 0; s < seeds; ++s) {
    for (std::size_t e = 0; e < per_seed; ++e) {
      tasks.push_back(sample_task(pool, cfg.n_way, cfg.k_shot, cfg.m_query,
                                  mix_seed(base_seed, s, e)));
    }
  }

  // Fan-out over episodes into fixed result slots: thread count can never
  // change values or output order.
  std::vector<EpisodeOutput> outs(total);
  const std::size_t workers = eval_threads(total);
  if (workers <= 1) {
    for (std::size_t i = 0; i < total; ++i) {
      outs[i] = run_episode(ws, models, params, h, tasks[i]);
    }
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < total; i += workers) {
            outs[i] = run_episode(ws, models, params, h, tasks[i]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  EvalSummary summary;
  for (std::size_t s = 0; s < seeds; ++s) {
    double acc = 0.0;
    for (std::size_t e = 0; e < per_seed; ++e) {
      acc += outs[s * per_seed + e].acc;
    }
    acc /= static_cast<double>(per_seed);
    summary.per_seed_accuracy.push_back(acc);
    if (log) {
      json j;
      j["accuracy"] = acc;
      j["seed"] = s;
      *log << j.dump() << "\n";
    }
  }
  summary.mean_accuracy = mean_of(summary.per_seed_accuracy);
  summary.std_accuracy =
      sample_std(summary.per_seed_accuracy, summary.mean_accuracy);
  if (log) {
    json j;
    j["episodes_per_seed"] = per_seed;
    j["mean_accuracy"] = summary.mean_accuracy;
    j["seeds"] = seeds;
    j["std_accuracy"] = summary.std_accuracy;
    *log << j.dump() << "\n";
  }
  if (dump) {
    for (std::size_t i = 0; i < total; ++i) {
      const MetaTask& task = tasks[i];
      json j;
      j["seed"] = i / per_seed;
      j["episode"] = i % per_seed;
      j["classes"] = task.classes;
      j["support_nodes"] = task.support_nodes;
      j["query_nodes"] = task.query_nodes;
      j["query_labels"] = task.query_labels();
      j["predictions"] = outs[i].predictions;
      j["accuracy"] = outs[i].acc;
      *dump << j.dump() << "\n";
    }
  }
  return summary;
}

Tensor random_orthogonal(std::size_t dim, Rng& rng) {
  if (dim == 0) fail("random_orthogonal: dim must be at least 1");
  for (int attempt = 0; attempt < 16; ++attempt) {
    Tensor q({dim, dim});
    for (std::size_t i = 0; i < q.numel(); ++i) q.data()[i] = rng.normal();
    // Modified Gram-Schmidt with one re-orthogonalization pass.
    bool degenerate = false;
    for (std::size_t i = 0; i < dim && !degenerate; ++i) {
      double* row = q.data() + i * dim;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          const double* prev = q.data() + j * dim;
          double dot = 0.0;
          for (std::size_t c = 0; c < dim; ++c) dot += row[c] * prev[c];
          for (std::size_t c = 0; c < dim; ++c) row[c] -= dot * prev[c];
        }
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < dim; ++c) norm += row[c] * row[c];
      norm = std::sqrt(norm);
      if (norm < 1e-8) {
        degenerate = true;
        break;
      }
      for (std::size_t c = 0; c < dim; ++c) row[c] /= norm;
    }
    if (degenerate) continue;
    const Tensor gram = kernels::matmul(q, kernels::transpose(q));
    double err = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        err = std::max(err, std::fabs(gram.at(i, j) - (i == j ? 1.0 : 0.0)));
      }
    }
    if (err <= 1e-10) return q;
  }
  throw std::runtime_error("random_orthogonal: repeated degenerate draws");
}

TransformSpec make_transform(std::size_t dim, double noise_sigma,
                             std::uint64_t seed) {
  if (noise_sigma < 0.0) fail("make_transform: noise_sigma must not be negative");
  Rng rng(seed);
  TransformSpec spec;
  spec.q = random_orthogonal(dim, rng);
  spec.lambda = rng.uniform(-2.0, 2.0);
  spec.noise_sigma = noise_sigma;
  spec.noise_seed = mix_seed(seed, kSaltNoise);
  return spec;
}

AuditResult equivariance_audit(const Workspace& ws, const ParamStore& params,
                               const LabelPool& pool, int episodes,
                               int transforms, double noise_sigma,
                               std::ostream* log) {
  if (episodes < 1) fail("equivariance_audit: episodes must be at least 1");
  if (transforms < 1) fail("equivariance_audit: transforms must be at least 1");
  const RunConfig& cfg = ws.cfg;
  const Models models = make_models(ws);
  const Tensor h = semantic_embeddings(ws, params);

  struct Reference {
    MetaTask task;
    Tensor coords;  // gathered inputs
    Tensor props;
    EpisodeOutput out;
  };
  std::vector<Reference> refs;
  refs.reserve(static_cast<std::size_t>(episodes));
  AuditResult result;
  for (int e = 0; e < episodes; ++e) {
    Reference r{sample_task(pool, cfg.n_way, cfg.k_shot, cfg.m_query,
                            mix_seed(cfg.seed, kSaltAudit, e)),
                Tensor(), Tensor(), EpisodeOutput()};
    const std::vector<int> nodes = r.task.all_nodes();
    r.coords = kernels::gather_rows(h, nodes);
    r.props = kernels::gather_rows(ws.structural, nodes);
    r.out = run_episode_on(ws, models, params, r.coords, r.props, r.task);
    result.reference_accuracy += r.out.acc;
    refs.push_back(std::move(r));
  }
  result.reference_accuracy /= static_cast<double>(episodes);

  const std::size_t queries_per_episode =
      static_cast<std::size_t>(cfg.n_way) * static_cast<std::size_t>(cfg.m_query);
  std::size_t matched = 0;
  for (int t = 0; t < transforms; ++t) {
    const TransformSpec spec = make_transform(
        cfg.hidden_dim, noise_sigma, mix_seed(cfg.seed, kSaltAudit, 0xf0, t));
    double acc = 0.0;
    double coord_err = 0.0;
    double prop_err = 0.0;
    std::size_t t_matched = 0;
    for (int e = 0; e < episodes; ++e) {
      const Reference& r = refs[static_cast<std::size_t>(e)];
      const Tensor moved =
          apply_transform(r.coords, spec, static_cast<std::uint64_t>(e));
      const EpisodeOutput out =
          run_episode_on(ws, models, params, moved, r.props, r.task);
      const Tensor expected = apply_q_lambda(r.out.coords, spec);
      coord_err = std::max(
          coord_err, max_abs_diff(out.coords, expected) /
                         std::max(max_abs(expected), 1e-12));
      prop_err = std::max(prop_err, max_abs_diff(out.props, r.out.props));
      for (std::size_t q = 0; q < queries_per_episode; ++q) {
        if (out.predictions[q] == r.out.predictions[q]) ++t_matched;
      }
      acc += out.acc;
    }
    acc /= static_cast<double>(episodes);
    result.transformed_accuracy.push_back(acc);
    result.max_coord_rel_err = std::max(result.max_coord_rel_err, coord_err);
    result.max_prop_abs_err = std::max(result.max_prop_abs_err, prop_err);
    matched += t_matched;
    if (log) {
      json j;
      j["transform"] = t;
      j["accuracy"] = acc;
      j["agreement"] = static_cast<double>(t_matched) /
                       static_cast<double>(queries_per_episode *
                                           static_cast<std::size_t>(episodes));
      j["max_coord_rel_err"] = coord_err;
      j["max_prop_abs_err"] = prop_err;
      *log << j.dump() << "\n";
    }
  }
  result.mean_transformed_accuracy = mean_of(result.transformed_accuracy);
  result.agreement =
      static_cast<double>(matched) /
      static_cast<double>(queries_per_episode *
                          static_cast<std::size_t>(episodes) *
                          static_cast<std::size_t>(transforms));
  if (log) {
    json j;
    j["agreement"] = result.agreement;
    j["episodes"] = episodes;
    j["max_coord_rel_err"] = result.max_coord_rel_err;
    j["max_prop_abs_err"] = result.max_prop_abs_err;
    j["mean_transformed_accuracy"] = result.mean_transformed_accuracy;
    j["noise_sigma"] = noise_sigma;
    j["reference_accuracy"] = result.reference_accuracy;
    j["transforms"] = transforms;
    *log << j.dump() << "\n";
  }
  return result;
}

std::vector<GridCell> diversity_grid(const RunConfig& base_cfg,
                                     const std::vector<double>& fractions,
                                     const std::vector<double>& availabilities,
                                     std::ostream* csv) {
  if (fractions.empty() || availabilities.empty()) {
    fail("diversity_grid: fraction and availability lists must be non-empty");
  }
  if (csv) {
    *csv << "class_fraction,label_availability,status,mean_accuracy,"
            "std_accuracy\n";
  }
  std::vector<GridCell> cells;
  for (double f : fractions) {
    for (double a : availabilities) {
      RunConfig cfg = base_cfg;
      cfg.class_fraction = f;
      cfg.label_availability = a;
      GridCell cell;
      cell.class_fraction = f;
      cell.label_availability = a;
      const Workspace ws = prepare(cfg);
      const std::size_t k = static_cast<std::size_t>(cfg.k_shot);
      const std::size_t m = static_cast<std::size_t>(cfg.m_query);
      const bool ok =
          ws.train_pool.feasible(
              static_cast<std::size_t>(cfg.effective_train_way()), k, m) &&
          (cfg.val_interval == 0 ||
           ws.valid_pool.feasible(static_cast<std::size_t>(cfg.n_way), k, m)) &&
          ws.novel_pool.feasible(static_cast<std::size_t>(cfg.n_way), k, m);
      if (ok) {
        cell.status = "ok";
        const TrainResult tr = train(ws, nullptr);
        const EvalSummary ev =
            evaluate(ws, tr.params, ws.novel_pool, default_eval_seed(cfg));
        cell.mean_accuracy = ev.mean_accuracy;
        cell.std_accuracy = ev.std_accuracy;
      } else {
        cell.status = "infeasible";
      }
      if (csv) {
        *csv << fmt_double(f) << ',' << fmt_double(a) << ',' << cell.status
             << ',';
        if (cell.status == "ok") {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.6f,%.6f", cell.mean_accuracy,
                        cell.std_accuracy);
          *csv << buf << "\n";
        } else {
          *csv << ",\n";
        }
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace teg
