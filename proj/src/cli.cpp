#include "schemanet/cli.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "schemanet/data_io.hpp"
#include "schemanet/evaluation.hpp"
#include "schemanet/gradcheck.hpp"
#include "schemanet/synth.hpp"
#include "schemanet/training.hpp"

namespace schemanet {
namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Flat key = value file; '#' starts a comment line. Keys are option names
// without the leading dashes. Values already given as flags are kept.
void apply_config_file(CLI::App& app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    CLI::Option* opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config" || key == "spec")
      throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

struct ModelOptions {
  ModelConfig config;

  void add(CLI::App& app) {
    app.add_option("--dim", config.dim, "Model width d")->capture_default_str();
    app.add_option("--layers", config.layers, "Graph transformer layers L")->capture_default_str();
    app.add_option("--heads", config.heads, "Attention heads K")->capture_default_str();
    app.add_option("--ffn-hidden", config.ffn_hidden, "Hidden width of f")->capture_default_str();
    app.add_option("--inject-hidden", config.inject_hidden, "Hidden width of g")->capture_default_str();
    app.add_option("--predicate-hidden", config.predicate_hidden, "Hidden width of the predicate init net")
        ->capture_default_str();
    app.add_option("--object-dropout", config.object_dropout, "Dropout on ingested object features")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 0.999999));
    app.add_option("--predicate-dropout", config.predicate_dropout, "Dropout on initial predicate features")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 0.999999));
    app.add_option("--leaky-slope", config.leaky_slope, "Leaky ReLU slope")->capture_default_str();
  }
};

struct TrainOptions {
  TrainConfig config;
  std::string optimizer = "adam";

  void add(CLI::App& app) {
    app.add_option("--assimilations", config.assimilations, "Assimilations per training step")
        ->capture_default_str();
    app.add_option("--lr", config.lr, "Learning rate")->capture_default_str();
    app.add_option("--batch", config.batch_size, "Scenes per image batch")->capture_default_str();
    app.add_option("--kb-batch", config.kb_batch_size, "Triples per KB batch")->capture_default_str();
    app.add_option("--epochs", config.epochs, "Training epochs")->capture_default_str();
    app.add_option("--max-replace-rate", config.max_replace_rate, "Scheduled-sampling maximum rate")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    app.add_option("--ramp-end", config.ramp_end_epoch, "Epoch reaching the maximum rate (0: a third of training)")
        ->capture_default_str();
    app.add_option("--kb-weight", config.kb_weight, "Loss weight of KB batches")->capture_default_str();
    app.add_option("--optimizer", optimizer, "adam or sgd")
        ->capture_default_str()
        ->check(CLI::IsMember({"adam", "sgd"}));
  }

  void finish() { config.optimizer = optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam; }
};

std::vector<SceneRepGraph> build_graphs(std::span<const SceneRecord> records, const Vocabulary& vocab,
                                        std::size_t dim) {
  std::vector<SceneRepGraph> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    try {
      out.push_back(build_srg(r, vocab, dim));
    } catch (const std::exception& e) {
      throw DataError("scene '" + r.id + "': " + e.what());
    }
  }
  return out;
}

int cmd_train(const std::string& config_path, const ModelOptions& model_opts, TrainOptions train_opts,
              const std::string& data, const std::string& vocab_path, const std::string& kb_path,
              const std::string& out_path, std::string log_path, std::ostream& err) {
  if (data.empty() && kb_path.empty()) throw UsageError("train needs --data, --kb or both");
  (void)config_path;
  train_opts.finish();
  const Vocabulary vocab = load_vocab(vocab_path);
  ModelConfig mc = model_opts.config;
  mc.num_object_classes = vocab.num_objects();
  mc.num_predicate_classes = vocab.num_predicates();
  if (mc.num_object_classes == 0 || mc.num_predicate_classes == 0) throw DataError("vocabulary has an empty class list");

  std::vector<SceneRepGraph> graphs;
  if (!data.empty()) {
    const auto records = load_dataset(data, vocab, mc.dim);
    graphs = build_graphs(records, vocab, mc.dim);
  }
  std::vector<KbTriple> kb;
  if (!kb_path.empty()) kb = load_kb(kb_path, vocab);
  if (graphs.empty() && kb.empty()) throw DataError("no training scenes and no triples");
  err << "train: " << graphs.size() << " scenes, " << kb.size() << " triples, " << train_opts.config.epochs
      << " epochs\n";

  std::mt19937_64 init_rng(train_opts.config.seed);
  ModelParams<float> model = ModelParams<float>::init(mc, init_rng);
  TrainConfig tc = train_opts.config;
  tc.seed = train_opts.config.seed + 1;
  Trainer trainer(model, tc);

  if (log_path.empty()) log_path = out_path + ".log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw DataError("cannot open log file '" + log_path + "'");
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    const LossReport report = trainer.train_epoch(graphs, kb);
    write_epoch_log(log, e, report);
    err << "epoch " << e << " total " << report.total << " replaced " << report.replaced << "\n";
  }
  save_checkpoint(model, vocab, trainer.step(), out_path);
  err << "wrote " << out_path << "\n";
  return kExitOk;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos || std::stoull(item) == 0)
      throw UsageError("--k expects a comma-separated list of positive integers, got '" + text + "'");
    ks.push_back(std::stoull(item));
  }
  if (ks.empty()) throw UsageError("--k is empty");
  return ks;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, const std::string& vocab_path,
             const std::string& task, const std::string& constrained, const std::string& ks_text,
             std::size_t assimilations, std::size_t workers, const std::string& csv_path, std::ostream& out,
             std::ostream& err) {
  EvalOptions options;
  options.task = parse_task(task);
  options.constrained = constrained == "true";
  options.ks = parse_ks(ks_text);
  options.assimilations = assimilations;
  options.workers = workers;

  std::optional<Vocabulary> expected;
  if (!vocab_path.empty()) expected = load_vocab(vocab_path);
  const Checkpoint ck = load_checkpoint(ckpt_path, expected ? &*expected : nullptr);
  const auto records = load_dataset(data, ck.vocab, ck.model.config.dim);
  const auto graphs = build_graphs(records, ck.vocab, ck.model.config.dim);
  err << "eval: " << graphs.size() << " scenes, task " << task_name(options.task) << "\n";
  const auto reports = evaluate(ck.model, graphs, options);

  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      json per_predicate = json::object();
      for (const auto& [cls, v] : r.per_predicate[i]) per_predicate[ck.vocab.predicates()[cls]] = v;
      out << json{{"task", task_name(r.task)},
                  {"constrained", r.constrained},
                  {"step", r.step},
                  {"k", r.ks[i]},
                  {"recall", r.recall[i]},
                  {"mean_recall", r.mean_recall[i]},
                  {"per_predicate_recall", per_predicate},
                  {"object_accuracy", r.object_accuracy},
                  {"predicate_accuracy", r.predicate_accuracy},
                  {"node_accuracy", r.node_accuracy}}
                 .dump()
          << '\n';
    }
  }
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot open '" + csv_path + "' for writing");
    csv << "task,constrained,step";
    for (std::size_t k : options.ks) csv << ",R@" << k;
    for (std::size_t k : options.ks) csv << ",mR@" << k;
    csv << '\n' << std::setprecision(6);
    for (const auto& r : reports) {
      csv << task_name(r.task) << ',' << (r.constrained ? "true" : "false") << ',' << r.step;
      for (double v : r.recall) csv << ',' << 100.0 * v;
      for (double v : r.mean_recall) csv << ',' << 100.0 * v;
      csv << '\n';
    }
  }
  return kExitOk;
}

int cmd_link_predict(const std::string& ckpt_path, const std::string& pairs_path, std::size_t top,
                     std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  std::ifstream in(pairs_path);
  if (!in) throw DataError("cannot open '" + pairs_path + "' for reading");
  std::vector<ClassPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::string where = pairs_path + ": line " + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + "malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("head") || !j.contains("tail") || !j["head"].is_string() ||
        !j["tail"].is_string())
      throw DataError(where + "expected {\"head\": name, \"tail\": name}");
    const auto h = ck.vocab.object_index(j["head"].get<std::string>());
    const auto t = ck.vocab.object_index(j["tail"].get<std::string>());
    if (!h) throw DataError(where + "unknown object class '" + j["head"].get<std::string>() + "'");
    if (!t) throw DataError(where + "unknown object class '" + j["tail"].get<std::string>() + "'");
    pairs.push_back({*h, *t});
  }
  const auto ranked = pkg_link_predict(ck.model, pairs, top);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    json preds = json::array();
    for (const auto& r : ranked[i])
      preds.push_back({{"predicate", ck.vocab.predicates()[r.predicate]}, {"probability", r.probability}});
    out << json{{"head", ck.vocab.objects()[pairs[i].head]},
                {"tail", ck.vocab.objects()[pairs[i].tail]},
                {"predictions", preds}}
               .dump()
        << '\n';
  }
  return kExitOk;
}

int cmd_export(const std::string& ckpt_path, const std::string& what, const std::string& out_path,
               std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const bool objects = what == "object-schema";
  const Tensor<float>& matrix = objects ? ck.model.bank.objects.value : ck.model.bank.predicates.value;
  const auto& names = objects ? ck.vocab.objects() : ck.vocab.predicates();
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw DataError("cannot open '" + out_path + "' for writing");
  }
  std::ostream& dst = out_path.empty() ? out : file;
  dst << "class";
  for (std::size_t k = 0; k < matrix.cols(); ++k) dst << ",d" << k;
  dst << '\n' << std::setprecision(9);
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    dst << names[r];
    for (float v : matrix.row(r)) dst << ',' << v;
    dst << '\n';
  }
  return kExitOk;
}

int cmd_synth(const SynthWorldSpec& spec, const std::string& out_dir, std::ostream& err) {
  const SynthWorld world = synth_generate(spec);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  save_vocab(world.vocab, dir / "vocab.json");
  save_dataset(dir / "train.jsonl", world.train);
  save_dataset(dir / "test.jsonl", world.test);
  save_kb(dir / "kb.jsonl", world.kb, world.vocab);
  std::ofstream pkg(dir / "pkg.jsonl");
  if (!pkg) throw DataError("cannot write '" + (dir / "pkg.jsonl").string() + "'");
  const std::size_t co = spec.num_object_classes;
  for (std::size_t h = 0; h < co; ++h) {
    for (std::size_t t = 0; t < co; ++t) {
      json probs = json::object();
      for (std::size_t p = 0; p < spec.num_predicate_classes; ++p)
        probs[world.vocab.predicates()[p]] = world.pkg[h * co + t][p];
      pkg << json{{"head", world.vocab.objects()[h]}, {"tail", world.vocab.objects()[t]}, {"predicates", probs}}
                 .dump()
          << '\n';
    }
  }
  err << "synth: " << world.train.size() << " train, " << world.test.size() << " test scenes, " << world.kb.size()
      << " triples -> " << out_dir << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool tamper, std::ostream& out) {
  const auto entries = gradcheck_suite(seed, tamper);
  bool all = true;
  out << std::left << std::setw(24) << "check" << std::setw(14) << "max_rel_err" << std::setw(9) << "checked"
      << "result\n";
  for (const auto& e : entries) {
    all = all && e.report.passed;
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << e.report.max_rel_error;
    out << std::left << std::setw(24) << e.name << std::setw(14) << err.str() << std::setw(9) << e.report.checked
        << (e.report.passed ? "PASS" : "FAIL") << '\n';
  }
  out << (all ? "all checks passed" : "gradient check FAILED") << '\n';
  return all ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-graph classification with schemata"};
  app.name("schemanet");
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_config, train_data, train_vocab, train_kb, train_out, train_log;
  ModelOptions model_opts;
  TrainOptions train_opts;
  train->add_option("--config", train_config, "Flat key = value file; flags override it")->check(CLI::ExistingFile);
  train->add_option("--data", train_data, "Training scenes (JSON lines)")->check(CLI::ExistingFile);
  train->add_option("--vocab", train_vocab, "Vocabulary JSON")->check(CLI::ExistingFile)->required();
  train->add_option("--kb", train_kb, "Knowledge-base triples (JSON lines)")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--log", train_log, "Epoch log path (default: <out>.log.jsonl)");
  train->add_option("--seed", train_opts.config.seed, "Random seed")->capture_default_str();
  model_opts.add(*train);
  train_opts.add(*train);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on labeled scenes");
  std::string eval_ckpt, eval_data, eval_vocab, eval_task = "sgcls", eval_constrained = "true", eval_k = "20,50,100",
                                                  eval_csv;
  std::size_t eval_assim = 0, eval_workers = 1;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->check(CLI::ExistingFile)->required();
  eval->add_option("--data", eval_data, "Scenes (JSON lines)")->check(CLI::ExistingFile)->required();
  eval->add_option("--vocab", eval_vocab, "Vocabulary that must match the checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--task", eval_task, "sgcls or predcls")
      ->capture_default_str()
      ->check(CLI::IsMember({"sgcls", "predcls"}, CLI::ignore_case));
  eval->add_option("--constrained", eval_constrained, "Graph constraint: true or false")
      ->capture_default_str()
      ->check(CLI::IsMember({"true", "false"}));
  eval->add_option("--k", eval_k, "Comma-separated K values")->capture_default_str();
  eval->add_option("--assimilations", eval_assim, "Assimilation steps to report")->capture_default_str();
  eval->add_option("--workers", eval_workers, "Evaluation threads")->capture_default_str()->check(
      CLI::PositiveNumber);
  eval->add_option("--csv", eval_csv, "Also write a table (one row per step)");

  // link-predict
  auto* link = app.add_subcommand("link-predict", "Rank predicates for class pairs without image evidence");
  std::string link_ckpt, link_pairs;
  std::size_t link_top = 5;
  link->add_option("--ckpt", link_ckpt, "Checkpoint")->check(CLI::ExistingFile)->required();
  link->add_option("--pairs", link_pairs, "Pairs file: {\"head\", \"tail\"} per line")->check(CLI::ExistingFile)->required();
  link->add_option("--top", link_top, "Predicates per pair")->capture_default_str()->check(CLI::PositiveNumber);

  // export
  auto* exp = app.add_subcommand("export", "Write a schema matrix as CSV");
  std::string exp_ckpt, exp_what, exp_format = "csv", exp_out;
  exp->add_option("--ckpt", exp_ckpt, "Checkpoint")->check(CLI::ExistingFile)->required();
  exp->add_option("--what", exp_what, "object-schema or predicate-schema")
      ->required()
      ->check(CLI::IsMember({"object-schema", "predicate-schema"}));
  exp->add_option("--format", exp_format, "Output format")->capture_default_str()->check(CLI::IsMember({"csv"}));
  exp->add_option("--out", exp_out, "Output file (default: standard output)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  SynthWorldSpec spec;
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "Flat key = value file with the options below; flags override it")->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--objects", spec.num_object_classes, "Object classes")->capture_default_str();
  synth->add_option("--predicates", spec.num_predicate_classes, "Predicate classes")->capture_default_str();
  synth->add_option("--dim", spec.dim, "Feature width")->capture_default_str();
  synth->add_option("--majority-mass", spec.majority_mass, "PKG mass of each pair's majority predicate")
      ->capture_default_str();
  synth->add_option("--prototype-scale", spec.prototype_scale, "Std of prototype coordinates")
      ->capture_default_str();
  synth->add_option("--prototype-group", spec.prototype_group, "Classes sharing one prototype")
      ->capture_default_str();
  synth->add_option("--sigma", spec.feature_sigma, "Feature noise std")->capture_default_str();
  synth->add_option("--occlusion", spec.occlusion_rate, "Probability an object's feature is pure noise")
      ->capture_default_str();
  synth->add_option("--scene-types", spec.scene_types, "Scene types (0: i.i.d. classes)")->capture_default_str();
  synth->add_option("--classes-per-type", spec.classes_per_type, "Classes favoured by each type")
      ->capture_default_str();
  synth->add_option("--type-mass", spec.type_mass, "Probability an object comes from its type's classes")
      ->capture_default_str();
  synth->add_option("--geometry-group", spec.geometry_group, "Predicates sharing a geometry template")
      ->capture_default_str();
  synth->add_option("--geometry-noise", spec.geometry_noise, "Geometry noise std")->capture_default_str();
  synth->add_option("--train", spec.train_scenes, "Train scenes")->capture_default_str();
  synth->add_option("--test", spec.test_scenes, "Test scenes")->capture_default_str();
  synth->add_option("--min-objects", spec.min_objects, "Objects per scene, lower bound")->capture_default_str();
  synth->add_option("--max-objects", spec.max_objects, "Objects per scene, upper bound")->capture_default_str();
  synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
  std::uint64_t grad_seed = 0;
  bool grad_tamper = false;
  grad->add_option("--seed", grad_seed, "Random seed")->capture_default_str();
  grad->add_flag("--tamper", grad_tamper, "Corrupt analytic gradients (negative control; must fail)");

  std::vector<std::string> argv_store{"schemanet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (train->parsed() && !train_config.empty()) apply_config_file(*train, train_config);
    if (synth->parsed() && !synth_spec.empty()) apply_config_file(*synth, synth_spec);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train->parsed())
      return cmd_train(train_config, model_opts, train_opts, train_data, train_vocab, train_kb, train_out, train_log,
                       err);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_vocab, eval_task, eval_constrained, eval_k, eval_assim,
                      eval_workers, eval_csv, out, err);
    if (link->parsed()) return cmd_link_predict(link_ckpt, link_pairs, link_top, out);
    if (exp->parsed()) return cmd_export(exp_ckpt, exp_what, exp_out, out);
    if (synth->parsed()) return cmd_synth(spec, synth_out, err);
    if (grad->parsed()) return cmd_gradcheck(grad_seed, grad_tamper, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace schemanet
