#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "teg/harness.hpp"

namespace {

using nlohmann::json;

teg::RunConfig build_config(const std::string& config_path,
                            const std::vector<std::string>& sets) {
  teg::RunConfig cfg;
  if (!config_path.empty()) cfg = teg::RunConfig::from_file(config_path);
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

const teg::LabelPool& pick_pool(const teg::Workspace& ws,
                                const std::string& name) {
  if (name == "base") return ws.train_pool;
  if (name == "valid") return ws.valid_pool;
  if (name == "novel") return ws.novel_pool;
  throw std::invalid_argument("unknown pool '" + name +
                              "', expected base, valid or novel");
}

teg::ParamStore load_or_init_params(const teg::Workspace& ws,
                                    const std::string& checkpoint) {
  if (checkpoint.empty()) return teg::init_model_params(ws);
  return teg::load_checkpoint(checkpoint).params;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used != item.size()) {
      throw std::invalid_argument("bad number '" + item + "' in list");
    }
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty number list");
  return out;
}

int run_train(const teg::RunConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  {
    auto cfg_out = open_out((dir / "config.txt").string());
    cfg_out << cfg.serialize();
  }
  const teg::Workspace ws = teg::prepare(cfg);
  auto log = open_out((dir / "train_log.jsonl").string());
  const teg::TrainResult result = teg::train(ws, &log);
  teg::save_checkpoint((dir / "checkpoint.bin").string(), result.params,
                       &result.adam);
  json j;
  j["config_hash"] = cfg.content_hash();
  j["checkpoint"] = (dir / "checkpoint.bin").string();
  j["final_loss"] = result.final_loss;
  if (result.best_episode >= 0) {
    j["best_val_accuracy"] = result.best_val_acc;
    j["best_episode"] = result.best_episode;
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int run_eval(const teg::RunConfig& cfg, const std::string& checkpoint,
             const std::string& pool_name, const std::string& log_path,
             const std::string& dump_path) {
  const teg::Workspace ws = teg::prepare(cfg);
  const teg::ParamStore params = load_or_init_params(ws, checkpoint);
  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file = open_out(log_path);
    log = &log_file;
  }
  std::ofstream dump_file;
  std::ostream* dump = nullptr;
  if (!dump_path.empty()) {
    dump_file = open_out(dump_path);
    dump = &dump_file;
  }
  const teg::EvalSummary summary =
      teg::evaluate(ws, params, pick_pool(ws, pool_name),
                    teg::default_eval_seed(cfg), log, dump);
  if (log != &std::cout) {
    json j;
    j["config_hash"] = cfg.content_hash();
    j["mean_accuracy"] = summary.mean_accuracy;
    j["std_accuracy"] = summary.std_accuracy;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int run_audit(const teg::RunConfig& cfg, const std::string& checkpoint,
              const std::string& pool_name, int episodes, int transforms,
              double noise, const std::string& log_path) {
  const teg::Workspace ws = teg::prepare(cfg);
  const teg::ParamStore params = load_or_init_params(ws, checkpoint);
  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file = open_out(log_path);
    log = &log_file;
  }
  const teg::AuditResult result =
      teg::equivariance_audit(ws, params, pick_pool(ws, pool_name), episodes,
                              transforms, noise, log);
  if (log != &std::cout) {
    json j;
    j["agreement"] = result.agreement;
    j["max_coord_rel_err"] = result.max_coord_rel_err;
    j["max_prop_abs_err"] = result.max_prop_abs_err;
    j["mean_transformed_accuracy"] = result.mean_transformed_accuracy;
    j["reference_accuracy"] = result.reference_accuracy;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int run_grid(const teg::RunConfig& cfg, const std::string& fractions,
             const std::string& availabilities, const std::string& csv_path) {
  std::ofstream csv_file;
  std::ostream* csv = &std::cout;
  if (!csv_path.empty()) {
    csv_file = open_out(csv_path);
    csv = &csv_file;
  }
  teg::diversity_grid(cfg, parse_double_list(fractions),
                      parse_double_list(availabilities), csv);
  return 0;
}

int run_gen(const teg::RunConfig& cfg, const std::string& out_path) {
  const teg::Graph graph = teg::generate_sbm(cfg.sbm);
  teg::save_graph(graph, out_path);
  json j;
  j["path"] = out_path;
  j["nodes"] = graph.num_nodes();
  j["edges"] = graph.num_edges();
  j["classes"] = graph.num_classes();
  std::cout << j.dump() << "\n";
  return 0;
}

int run_diag_anchors(const teg::RunConfig& cfg) {
  const teg::Workspace ws = teg::prepare(cfg);
  json links = json::array();
  for (const auto& l : ws.anchors.links) links.push_back(l.size());
  json j;
  j["anchors"] = ws.anchors.count;
  j["scheme"] = ws.cfg.anchor_scheme == teg::AnchorScheme::kExpectedCount
                    ? "expected"
                    : "bernoulli";
  j["link_counts"] = links;
  j["zero_ratio"] = teg::zero_ratio(ws.structural);
  std::cout << j.dump() << "\n";
  return 0;
}

int run_grad_check(const teg::RunConfig& cfg, double step,
                   std::size_t samples, double tolerance) {
  const teg::Workspace ws = teg::prepare(cfg);
  const teg::ParamStore params = teg::init_model_params(ws);
  const teg::MetaTask task =
      teg::sample_task(ws.train_pool, cfg.effective_train_way(), cfg.k_shot,
                       cfg.m_query, teg::mix_seed(cfg.seed, 0x6c));
  teg::GradCheckOptions options;
  options.step = step;
  options.max_samples = samples;
  options.seed = cfg.seed;
  const teg::GradCheckResult result =
      teg::grad_check(params, teg::episode_loss_builder(ws, task), options);
  json j;
  j["max_rel_err"] = result.max_rel_err;
  j["coords_checked"] = result.coords_checked;
  j["worst_param"] = result.worst_param;
  j["worst_index"] = result.worst_index;
  j["worst_analytic"] = result.worst_analytic;
  j["worst_numeric"] = result.worst_numeric;
  std::cout << j.dump() << "\n";
  return result.max_rel_err <= tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Few-shot node classification on graphs with a task-symmetric "
      "embedder: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key=value config file")
      ->envname("TEG_CONFIG");
  app.add_option("--set", sets, "config override, key=value; repeatable");

  auto* train = app.add_subcommand("train", "train a model episodically");
  std::string out_dir = "run";
  train->add_option("--out-dir", out_dir,
                    "directory for config, log and checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a model over episodes");
  std::string checkpoint;
  std::string pool_name = "novel";
  std::string log_path;
  std::string dump_path;
  eval->add_option("--checkpoint", checkpoint,
                   "saved parameters; fresh initialization when absent");
  eval->add_option("--pool", pool_name, "episode classes: base, valid, novel");
  eval->add_option("--log", log_path, "accuracy JSONL file; stdout if unset");
  eval->add_option("--dump", dump_path, "per-episode JSONL dump file");

  auto* audit = app.add_subcommand(
      "audit-equivariance",
      "replay episodes under random rotations plus translation");
  int audit_episodes = 100;
  int audit_transforms = 10;
  double audit_noise = 0.0;
  std::string audit_checkpoint;
  std::string audit_pool = "novel";
  std::string audit_log;
  audit->add_option("--episodes", audit_episodes, "episodes to replay");
  audit->add_option("--transforms", audit_transforms,
                    "random transforms per episode");
  audit->add_option("--noise", audit_noise,
                    "Gaussian noise width on transformed embeddings");
  audit->add_option("--checkpoint", audit_checkpoint,
                    "saved parameters; fresh initialization when absent");
  audit->add_option("--pool", audit_pool, "episode classes");
  audit->add_option("--log", audit_log, "JSONL file; stdout if unset");

  auto* grid = app.add_subcommand(
      "diversity-grid", "accuracy as task diversity is restricted");
  std::string fractions = "1.0,0.5,0.25";
  std::string availabilities = "1.0,0.5,0.25";
  std::string csv_path;
  grid->add_option("--fractions", fractions,
                   "comma list of class fractions to keep");
  grid->add_option("--availabilities", availabilities,
                   "comma list of per-class label availabilities");
  grid->add_option("--csv", csv_path, "CSV output file; stdout if unset");

  auto* gen = app.add_subcommand("gen-synthetic",
                                 "write a block-model graph to a file");
  std::string gen_out = "synthetic.graph";
  gen->add_option("--out", gen_out, "output graph file");

  auto* diag = app.add_subcommand("diag-anchors",
                                  "anchor attachment and coverage statistics");

  auto* check = app.add_subcommand("grad-check",
                                   "numerical check of the loss gradient");
  double check_step = 1e-5;
  std::size_t check_samples = 200;
  double check_tolerance = 1e-4;
  check->add_option("--step", check_step, "finite difference step");
  check->add_option("--samples", check_samples, "parameter coordinate budget");
  check->add_option("--tolerance", check_tolerance,
                    "maximum relative error for exit code 0");

  CLI11_PARSE(app, argc, argv);

  try {
    const teg::RunConfig cfg = build_config(config_path, sets);
    if (train->parsed()) return run_train(cfg, out_dir);
    if (eval->parsed()) {
      return run_eval(cfg, checkpoint, pool_name, log_path, dump_path);
    }
    if (audit->parsed()) {
      return run_audit(cfg, audit_checkpoint, audit_pool, audit_episodes,
                       audit_transforms, audit_noise, audit_log);
    }
    if (grid->parsed()) return run_grid(cfg, fractions, availabilities, csv_path);
    if (gen->parsed()) return run_gen(cfg, gen_out);
    if (diag->parsed()) return run_diag_anchors(cfg);
    if (check->parsed()) {
      return run_grad_check(cfg, check_step, check_samples, check_tolerance);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
