// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number (default: all). Exit code 0 only when all selected pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "../support/metric_oracle.hpp"
#include "../support/temp_dir.hpp"
#include "schemanet/cli.hpp"
#include "schemanet/data_io.hpp"
#include "schemanet/evaluation.hpp"
#include "schemanet/gradcheck.hpp"
#include "schemanet/synth.hpp"
#include "schemanet/training.hpp"

using namespace schemanet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelConfig bench_model() {
  ModelConfig c;
  c.dim = 64;
  c.layers = 2;
  c.heads = 2;
  c.ffn_hidden = 128;
  c.inject_hidden = 64;
  c.predicate_hidden = 64;
  c.object_dropout = 0.5;
  c.num_object_classes = 20;
  c.num_predicate_classes = 10;
  return c;
}

TrainConfig bench_training(std::size_t epochs, std::size_t assimilations, std::uint64_t seed) {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 16;
  tc.epochs = epochs;
  tc.assimilations = assimilations;
  tc.seed = seed;
  return tc;
}

// The synthetic benchmark: 20 object / 10 predicate classes, d=64,
// occlusion 0.3, 2000 train / 500 test scenes (library defaults).
SynthWorldSpec bench_world(std::uint64_t seed) {
  SynthWorldSpec spec;
  spec.seed = seed;
  return spec;
}

std::vector<SceneRepGraph> graphs_of(std::span<const SceneRecord> records, const Vocabulary& vocab, std::size_t dim) {
  std::vector<SceneRepGraph> out;
  for (const auto& r : records) out.push_back(build_srg(r, vocab, dim));
  return out;
}

SceneRepGraph random_graph(std::mt19937_64& rng, std::size_t dim, std::size_t co, std::size_t cp) {
  const std::size_t n = 2 + rng() % 7;
  const std::size_t m = rng() % 12;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<double> pos(-3, 3), ext(0.2, 3);
  Tensor<float> f(n, dim);
  for (auto& v : f.values()) v = normal(rng);
  std::vector<BoundingBox> boxes;
  for (std::size_t i = 0; i < n; ++i) boxes.push_back({pos(rng), pos(rng), ext(rng), ext(rng)});
  std::vector<std::size_t> heads, tails;
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t h = rng() % n;
    heads.push_back(h);
    tails.push_back((h + 1 + rng() % (n - 1)) % n);
  }
  auto g = make_graph(dim, f, boxes, heads, tails);
  for (std::size_t i = 0; i < n; ++i) g.object_labels.push_back(rng() % co);
  for (std::size_t r = 0; r < m; ++r) g.predicate_labels.push_back(rng() % cp);
  return g;
}

Tensor<float> rows_of(const Tensor<float>& z, const std::vector<std::size_t>& idx) {
  Tensor<float> out(idx.size(), z.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(z.row(idx[i]).begin(), z.row(idx[i]).end(), out.row(i).begin());
  return out;
}

double max_simplex_error(const Tensor<float>& p) {
  double worst = 0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double total = 0;
    for (float v : p.row(i)) {
      if (v < 0) return 1e9;
      total += v;
    }
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return worst;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto entries = gradcheck_suite(0);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  bool all = true;
  for (const auto& e : entries) {
    all = all && e.report.passed && e.report.max_rel_error < 1e-4;
    if (e.report.max_rel_error >= worst) {
      worst = e.report.max_rel_error;
      worst_name = e.name;
    }
  }
  bool control = true;
  for (const auto& e : gradcheck_suite(0, true)) control = control && !e.report.passed;
  return {all && control && secs < 60.0,
          std::to_string(entries.size()) + " checks, max rel err " + fmt("%.2e", worst) + " (" + worst_name + "), " +
              fmt("%.1f", secs) + " s, tampered run fails: " + (control ? "yes" : "no")};
}

Outcome simplex_suite() {
  std::mt19937_64 rng(2);
  ModelConfig c = bench_model();
  c.heads = 3;
  const auto model = ModelParams<float>::init(c, rng);
  double attention_err = 0, class_err = 0, ln_mean = 0, ln_var = 0;
  std::size_t attention_rows = 0, class_rows = 0, ln_rows = 0, ln_skipped = 0;
  std::mt19937_64 unused(0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = random_graph(rng, c.dim, c.num_object_classes, c.num_predicate_classes);
    Tape<float> tape(false);
    Var<float> z = initial_features(tape, model, g, false, unused);
    for (const auto& layer : model.stack.layers) {
      const Tensor<float> zs = z.value();
      for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        const Tensor<float> zi = rows_of(zs, {i});
        for (auto [dir, nb] : {std::pair{Direction::In, g.in_neighbors(i)}, std::pair{Direction::Out, g.out_neighbors(i)}}) {
          if (nb.empty()) continue;
          for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const auto a = attention_coefficients(layer, h, dir, zi, rows_of(zs, nb), model.slope());
            double total = 0;
            for (float v : a.values()) total += v < 0 ? 1e9 : v;
            attention_err = std::max(attention_err, std::abs(total - 1.0));
            ++attention_rows;
          }
        }
      }
      // Pre-affine LN statistics of the layer input; eps shrinks the
      // variance of near-constant rows, so those only count toward the mean.
      Var<float> n = layer_norm(z, tape.constant(Tensor<float>(1, c.dim, 1.0f)), tape.constant(Tensor<float>(1, c.dim)));
      for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        double in_mu = 0, in_var = 0;
        for (float v : zs.row(i)) in_mu += v;
        in_mu /= c.dim;
        for (float v : zs.row(i)) in_var += (v - in_mu) * (v - in_mu);
        in_var /= c.dim;
        double mu = 0, var = 0;
        for (float v : n.value().row(i)) mu += v;
        mu /= c.dim;
        for (float v : n.value().row(i)) var += (v - mu) * (v - mu);
        var /= c.dim;
        ln_mean = std::max(ln_mean, std::abs(mu));
        if (in_var >= 1e-2) {
          ln_var = std::max(ln_var, std::abs(var - 1.0));
          ++ln_rows;
        } else {
          ++ln_skipped;
        }
      }
      z = transformer_layer(tape, layer, z, g, model.slope());
    }
    Tape<float> t2(false);
    const auto trace = assimilate(t2, model, g, initial_features(t2, model, g, false, unused), 3);
    for (const auto& step : trace.steps) {
      class_err = std::max(class_err, max_simplex_error(step.objects.value()));
      class_err = std::max(class_err, max_simplex_error(step.predicates.value()));
      class_rows += g.num_nodes();
    }
  }
  const bool pass = attention_err <= 1e-6 && class_err <= 1e-6 && ln_mean < 1e-5 && ln_var < 1e-3;
  return {pass, std::to_string(attention_rows) + " attention rows (max |sum-1| " + fmt("%.1e", attention_err) + "), " +
                    std::to_string(class_rows) + " classification rows (" + fmt("%.1e", class_err) +
                    "), LN |mean| " + fmt("%.1e", ln_mean) + ", |var-1| " + fmt("%.1e", ln_var) + " over " +
                    std::to_string(ln_rows) + " rows (" + std::to_string(ln_skipped) + " near-constant rows skipped)"};
}

Outcome kb_equivalence() {
  std::mt19937_64 rng(3);
  const ModelConfig c = bench_model();
  const auto model = ModelParams<float>::init(c, rng);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<ClassPair> pair{{rng() % c.num_object_classes, rng() % c.num_object_classes}};
    Tape<float> direct(false);
    const Tensor<float> want = kb_assimilate(direct, model, pair).value();

    Tape<float> tape(false);
    const auto g = kb_graph(pair, c.dim);
    const std::vector<std::size_t> cls{pair[0].head, pair[0].tail};
    AlphaHook<float> seed = [&](std::size_t, const Classification<float>&) {
      return Classification<float>{
          tape.constant(one_hot_rows<float>(cls, c.num_object_classes)),
          tape.constant(Tensor<float>(1, c.num_predicate_classes, 1.0f / static_cast<float>(c.num_predicate_classes)))};
    };
    const auto trace = assimilate(tape, model, g, tape.constant(Tensor<float>(3, c.dim)), 1, seed);
    const auto& got = trace.steps[1].predicates.value();
    for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(double(got[k]) - double(want[k])));
  }
  return {worst <= 1e-6, "100 triples, max |diff| " + fmt("%.2e", worst)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(4);
  std::vector<oracle::MicroInstance> set;
  for (int i = 0; i < 1000; ++i) set.push_back(oracle::random_instance(rng));
  std::size_t comparisons = 0, mismatches = 0, subset_fail = 0, monotone_fail = 0;
  for (Task task : {Task::SGCls, Task::PredCls}) {
    for (bool constrained : {true, false}) {
      std::vector<ImageRanking> images;
      for (const auto& inst : set) images.push_back(oracle::library_ranking(inst, task, constrained));
      for (std::size_t i = 0; i < set.size(); ++i) {
        const std::vector<oracle::MicroInstance> one{set[i]};
        const std::span<const ImageRanking> img(&images[i], 1);
        double prev = 0;
        for (std::size_t k = 1; k <= 20; ++k) {
          const double r = recall_at_k(img, k, task);
          mismatches += r != oracle::recall(one, task, constrained, k);
          mismatches += mean_recall_at_k(img, k, task).value != oracle::mean_recall(one, task, constrained, k);
          comparisons += 2;
          monotone_fail += r < prev;
          prev = r;
        }
      }
      for (std::size_t k : {1, 5, 20, 50}) {
        mismatches += recall_at_k(images, k, task) != oracle::recall(set, task, constrained, k);
        mismatches += mean_recall_at_k(images, k, task).value != oracle::mean_recall(set, task, constrained, k);
        comparisons += 2;
      }
    }
    for (const auto& inst : set) {
      const auto c = oracle::library_ranking(inst, task, true).candidates;
      const auto u = oracle::library_ranking(inst, task, false).candidates;
      std::set<std::pair<std::size_t, std::size_t>> all;
      for (const auto& t : u) all.insert({t.pair_index, t.predicate});
      for (const auto& t : c) subset_fail += all.count({t.pair_index, t.predicate}) == 0;
    }
  }
  return {mismatches == 0 && subset_fail == 0 && monotone_fail == 0,
          "1000 instances, " + std::to_string(comparisons) + " comparisons, " + std::to_string(mismatches) +
              " mismatches, subset violations " + std::to_string(subset_fail) + ", monotonicity violations " +
              std::to_string(monotone_fail)};
}

Outcome scheduled_sampling() {
  std::mt19937_64 rng(5);
  const std::size_t co = 6, cp = 4;
  std::size_t touched_correct = 0, over_cap = 0, not_one_hot = 0, total_replaced = 0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int call = 0; call < 1000; ++call) {
    const auto g = random_graph(rng, 4, co, cp);
    Tensor<float> po(g.num_objects, co), pp(g.num_predicates, cp);
    // Rows either peaked on the label or on a random class.
    auto fill = [&](Tensor<float>& t, const std::vector<std::size_t>& labels) {
      for (std::size_t i = 0; i < t.rows(); ++i) {
        const std::size_t peak = unit(rng) < 0.5 ? labels[i] : rng() % t.cols();
        for (std::size_t k = 0; k < t.cols(); ++k) t(i, k) = (k == peak ? 0.5f : 0.5f / float(t.cols() - 1));
      }
    };
    fill(po, g.object_labels);
    fill(pp, g.predicate_labels);
    const double rate = unit(rng);
    Tape<float> tape(false);
    std::size_t n = 0;
    const auto out =
        scheduled_replace(tape, Classification<float>{tape.constant(po), tape.constant(pp)}, g, rate, rng, &n);
    std::size_t changed = 0;
    auto scan = [&](const Tensor<float>& before, const Tensor<float>& after, const std::vector<std::size_t>& labels) {
      const auto predicted = row_argmax(before);
      for (std::size_t i = 0; i < before.rows(); ++i) {
        bool same = true;
        for (std::size_t k = 0; k < before.cols(); ++k) same = same && before(i, k) == after(i, k);
        if (same) continue;
        ++changed;
        touched_correct += predicted[i] == labels[i];
        for (std::size_t k = 0; k < before.cols(); ++k) not_one_hot += after(i, k) != (k == labels[i] ? 1.0f : 0.0f);
      }
    };
    scan(po, out.objects.value(), g.object_labels);
    scan(pp, out.predicates.value(), g.predicate_labels);
    over_cap += changed > replacement_cap(rate, g.num_nodes()) || changed != n;
    total_replaced += changed;
  }
  return {touched_correct == 0 && over_cap == 0 && not_one_hot == 0,
          "1000 calls, " + std::to_string(total_replaced) + " rows replaced, correct rows touched " +
              std::to_string(touched_correct) + ", cap violations " + std::to_string(over_cap)};
}

Outcome assimilation_gain() {
  const auto t0 = Clock::now();
  const std::size_t steps = 4, epochs = 8;
  std::vector<double> mean(steps + 1, 0.0);
  std::ostringstream per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto spec = bench_world(seed);
    const auto world = synth_generate(spec);
    const auto train = graphs_of(world.train, world.vocab, spec.dim);
    const auto test = graphs_of(world.test, world.vocab, spec.dim);
    std::mt19937_64 rng(seed);
    auto model = ModelParams<float>::init(bench_model(), rng);
    Trainer trainer(model, bench_training(epochs, steps, seed));
    for (std::size_t e = 0; e < epochs; ++e) trainer.train_epoch(train, {});
    EvalOptions eo;
    eo.task = Task::SGCls;
    eo.assimilations = steps;
    eo.ks = {20};
    const auto reports = evaluate(model, test, eo);
    per_seed << " seed " << seed << ":";
    for (const auto& r : reports) {
      mean[r.step] += r.node_accuracy / 3.0;
      per_seed << ' ' << fmt("%.3f", r.node_accuracy);
    }
  }
  const double gain = 100.0 * (mean[1] - mean[0]);
  bool plateau = true;
  for (std::size_t t = 2; t < steps; ++t) plateau = plateau && mean[t + 1] >= mean[t] - 0.01;
  std::string curve;
  for (double a : mean) curve += fmt(" %.3f", a);
  return {gain >= 3.0 && plateau && seconds_since(t0) < 15 * 60,
          "mean accuracy by step" + curve + ", step 1 - step 0 = " + fmt("%.2f", gain) + " points;" + per_seed.str() +
              "; " + fmt("%.0f", seconds_since(t0)) + " s"};
}

struct PriorRun {
  double ic = 0;
  double icp = 0;
  std::size_t pkg_agree = 0;
  std::size_t pkg_pairs = 0;
};

// Criteria 7 and 8 share the trained models.
std::vector<PriorRun> prior_runs() {
  static std::vector<PriorRun> cached;
  if (!cached.empty()) return cached;
  const std::size_t steps = 4, epochs = 30;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto spec = bench_world(seed);
    const auto world = synth_generate(spec);
    const std::size_t labeled = world.train.size() / 10;
    const std::span<const SceneRecord> all(world.train);
    const auto kb = kb_from_records(all.subspan(labeled), world.vocab);
    const auto train = graphs_of(all.first(labeled), world.vocab, spec.dim);
    const auto test = graphs_of(world.test, world.vocab, spec.dim);
    PriorRun run;
    for (int variant = 0; variant < 2; ++variant) {
      const bool icp = variant == 1;
      std::mt19937_64 rng(seed);
      auto model = ModelParams<float>::init(bench_model(), rng);
      Trainer trainer(model, bench_training(epochs, icp ? steps : 0, seed));
      for (std::size_t e = 0; e < epochs; ++e)
        trainer.train_epoch(train, icp ? std::span<const KbTriple>(kb) : std::span<const KbTriple>());
      EvalOptions eo;
      eo.task = Task::PredCls;
      eo.constrained = true;
      eo.ks = {20};
      eo.assimilations = icp ? steps : 0;
      const auto reports = evaluate(model, test, eo);
      (icp ? run.icp : run.ic) = reports.back().recall[0];
      if (!icp) continue;
      // Counting oracle over the full generated train split.
      const std::size_t co = spec.num_object_classes, cp = spec.num_predicate_classes;
      std::vector<std::vector<std::size_t>> counts(co * co, std::vector<std::size_t>(cp, 0));
      for (const auto& r : world.train)
        for (const auto& rel : r.relations)
          ++counts[*world.vocab.object_index(r.objects[rel.head].label) * co +
                   *world.vocab.object_index(r.objects[rel.tail].label)][*world.vocab.predicate_index(rel.predicate)];
      for (std::size_t h = 0; h < co; ++h)
        for (std::size_t t = 0; t < co; ++t) {
          const auto& row = counts[h * co + t];
          std::size_t n = 0, majority = 0;
          for (std::size_t p = 0; p < cp; ++p) {
            n += row[p];
            if (row[p] > row[majority]) majority = p;
          }
          if (n < 20) continue;
          ++run.pkg_pairs;
          run.pkg_agree += pkg_link_predict(model, h, t, 1)[0].predicate == majority;
        }
    }
    cached.push_back(run);
  }
  return cached;
}

Outcome data_efficiency() {
  const auto t0 = Clock::now();
  const auto runs = prior_runs();
  double gain = 0;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    gain += 100.0 * (runs[i].icp - runs[i].ic) / static_cast<double>(runs.size());
    detail += " seed " + std::to_string(i + 1) + ": IC " + fmt("%.3f", runs[i].ic) + " IC+ICP " + fmt("%.3f", runs[i].icp) + ";";
  }
  return {gain >= 5.0 && seconds_since(t0) < 20 * 60,
          "PredCls R@20 (10% labeled)" + detail + " mean gain " + fmt("%.2f", gain) + " points, " +
              fmt("%.0f", seconds_since(t0)) + " s"};
}

Outcome pkg_recovery() {
  const auto runs = prior_runs();
  std::size_t agree = 0, pairs = 0;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    agree += runs[i].pkg_agree;
    pairs += runs[i].pkg_pairs;
    detail += " seed " + std::to_string(i + 1) + ": " + std::to_string(runs[i].pkg_agree) + "/" +
              std::to_string(runs[i].pkg_pairs) + ";";
  }
  const double rate = pairs == 0 ? 0.0 : static_cast<double>(agree) / static_cast<double>(pairs);
  bool each = true;
  for (const auto& r : runs) each = each && r.pkg_pairs > 0 && r.pkg_agree >= 0.7 * static_cast<double>(r.pkg_pairs);
  return {each && rate >= 0.7, "top-1 agrees with the counted majority on" + detail + " overall " + fmt("%.1f%%", 100 * rate)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  TempDir dir;
  std::ostringstream out, err;
  const std::string world = (dir / "w").string();
  if (run_cli({"synth", "--out", world, "--train", "200", "--test", "20"}, out, err) != 0)
    return {false, "synth failed: " + err.str()};
  auto train = [&](const std::string& name) {
    return run_cli({"train", "--data", world + "/train.jsonl", "--kb", world + "/kb.jsonl", "--vocab",
                    world + "/vocab.json", "--out", (dir / name).string(), "--seed", "17", "--dim", "64", "--layers",
                    "2", "--heads", "2", "--ffn-hidden", "128", "--inject-hidden", "64", "--predicate-hidden", "64",
                    "--epochs", "2", "--lr", "1e-3", "--batch", "16"},
                   out, err);
  };
  if (train("a.ckpt") != 0 || train("b.ckpt") != 0) return {false, "train failed: " + err.str()};
  const std::string a = slurp(dir / "a.ckpt"), b = slurp(dir / "b.ckpt");
  const auto ck = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(ck.model, ck.vocab, ck.step, dir / "c.ckpt");
  const std::string c = slurp(dir / "c.ckpt");
  const auto again = load_checkpoint(dir / "c.ckpt");
  bool params_equal = true;
  const auto p = ck.model.parameters(), q = again.model.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) params_equal = params_equal && p[i]->value == q[i]->value;
  return {a == b && a == c && params_equal,
          "two training runs " + std::string(a == b ? "identical" : "DIFFER") + " (" + std::to_string(a.size()) +
              " bytes), load/save round trip " + (a == c && params_equal ? "bitwise equal" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"gradient fidelity", gradient_fidelity}},
      {2, {"simplex and normalization", simplex_suite}},
      {3, {"triple-only equivalence", kb_equivalence}},
      {4, {"metric oracle", metric_oracle}},
      {5, {"scheduled-sampling contract", scheduled_sampling}},
      {6, {"assimilation gain", assimilation_gain}},
      {7, {"prior-injection data efficiency", data_efficiency}},
      {8, {"PKG recovery", pkg_recovery}},
      {9, {"determinism", determinism}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::stoi(argv[i]));
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.push_back(k);

  bool all = true;
  for (int k : selected) {
    const auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << ". " << it->second.first << ": " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
