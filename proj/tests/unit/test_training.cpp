#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "schemanet/synth.hpp"
#include "schemanet/training.hpp"

using namespace schemanet;

namespace {

ModelConfig config(std::size_t objects = 5, std::size_t predicates = 4) {
  ModelConfig c;
  c.dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.ffn_hidden = 16;
  c.inject_hidden = 16;
  c.predicate_hidden = 8;
  c.num_object_classes = objects;
  c.num_predicate_classes = predicates;
  c.object_dropout = 0.0;
  c.predicate_dropout = 0.0;
  return c;
}

std::vector<SceneRepGraph> toy_scenes(std::size_t count, std::uint64_t seed) {
  SynthWorldSpec spec;
  spec.num_object_classes = 5;
  spec.num_predicate_classes = 4;
  spec.dim = 8;
  spec.scene_types = 0;
  spec.prototype_scale = 1.0;
  spec.feature_sigma = 0.3;
  spec.train_scenes = count;
  spec.test_scenes = 0;
  spec.min_objects = 3;
  spec.max_objects = 4;
  spec.seed = seed;
  const auto world = synth_generate(spec);
  std::vector<SceneRepGraph> out;
  for (const auto& r : world.train) out.push_back(build_srg(r, world.vocab, 8));
  return out;
}

template <typename T>
AssimilationTrace<T> constant_trace(Tape<T>& tape, const std::vector<Tensor<T>>& objects,
                                    const std::vector<Tensor<T>>& predicates) {
  AssimilationTrace<T> trace;
  for (std::size_t s = 0; s < objects.size(); ++s)
    trace.steps.push_back({tape.constant(objects[s]), tape.constant(predicates[s])});
  return trace;
}

float eval_loss(const ModelParams<float>& model, const SceneRepGraph& g, std::size_t assimilations) {
  Tape<float> tape(false);
  std::mt19937_64 unused(0);
  auto trace = assimilate(tape, model, g, initial_features(tape, model, g, false, unused), assimilations);
  return multi_task_loss(tape, trace, g).total.value()[0];
}

}  // namespace

TEST_CASE("ic_loss") {
  auto g = make_graph(4, Tensor<float>(2, 4), std::vector<BoundingBox>(2), std::vector<std::size_t>{0},
                      std::vector<std::size_t>{1});
  g.object_labels = {2, 0};
  g.predicate_labels = {1};
  Tape<double> tape;
  const std::vector<std::size_t> obj{2, 0}, pred{1};
  auto perfect = constant_trace<double>(tape, {one_hot_rows<double>(obj, 3)}, {one_hot_rows<double>(pred, 2)});
  CHECK(ic_loss(tape, perfect, g).value()[0] == 0.0);

  auto objects_only = make_graph(4, Tensor<float>(2, 4), std::vector<BoundingBox>(2), std::vector<std::size_t>{},
                                 std::vector<std::size_t>{});
  objects_only.object_labels = {7, 149};
  auto uniform = constant_trace<double>(tape, {Tensor<double>(2, 150, 1.0 / 150)}, {Tensor<double>(0, 50)});
  CHECK(ic_loss(tape, uniform, objects_only).value()[0] == doctest::Approx(std::log(150.0)));
  CHECK(std::log(150.0) == doctest::Approx(5.011).epsilon(1e-3));

  auto unlabeled = g;
  unlabeled.predicate_labels.clear();
  CHECK_THROWS(ic_loss(tape, perfect, unlabeled));
}

TEST_CASE("multi_task_loss") {
  std::mt19937_64 rng(1);
  auto model = ModelParams<double>::init(config(), rng).cast<double>();
  auto scenes = toy_scenes(1, 3);
  const auto& g = scenes[0];
  std::mt19937_64 unused(0);

  Tape<double> t0(false);
  auto trace0 = assimilate(t0, model, g, initial_features(t0, model, g, false, unused), 0);
  CHECK(multi_task_loss(t0, trace0, g).total.value()[0] == ic_loss(t0, trace0, g).value()[0]);

  Tape<double> t2(false);
  auto trace2 = assimilate(t2, model, g, initial_features(t2, model, g, false, unused), 2);
  auto mt = multi_task_loss(t2, trace2, g);
  double total = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    // Pooled per-node cross-entropy recomputed from the raw rows.
    double ce = 0;
    const auto& po = trace2.steps[s].objects.value();
    const auto& pp = trace2.steps[s].predicates.value();
    for (std::size_t i = 0; i < g.num_objects; ++i) ce -= std::log(po(i, g.object_labels[i]));
    for (std::size_t r = 0; r < g.num_predicates; ++r) ce -= std::log(pp(r, g.predicate_labels[r]));
    ce /= static_cast<double>(g.num_nodes());
    CHECK(mt.report.step_loss[s] == doctest::Approx(ce).epsilon(1e-9));
    total += ce;
  }
  CHECK(std::abs(mt.total.value()[0] - total) < 1e-6);
  CHECK(mt.report.total == doctest::Approx(total));

  const std::vector<double> weights{1.0, 0.5, 2.0};
  auto weighted = multi_task_loss(t2, trace2, g, weights);
  CHECK(weighted.total.value()[0] ==
        doctest::Approx(mt.report.step_loss[0] + 0.5 * mt.report.step_loss[1] + 2.0 * mt.report.step_loss[2]));

  Tape<double> tp;
  auto perfect = constant_trace<double>(
      tp, std::vector<Tensor<double>>(3, one_hot_rows<double>(g.object_labels, 5)),
      std::vector<Tensor<double>>(3, one_hot_rows<double>(g.predicate_labels, 4)));
  CHECK(multi_task_loss(tp, perfect, g).total.value()[0] == 0.0);
}

TEST_CASE("replacement cap and selection") {
  CHECK(replacement_cap(0.1, 10) == 1);
  CHECK(replacement_cap(0.1, 30) == 3);
  CHECK(replacement_cap(0.1, 31) == 4);
  CHECK(replacement_cap(0.0, 100) == 0);
  CHECK(replacement_cap(1.0, 7) == 7);

  std::mt19937_64 rng(2);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  const std::vector<std::size_t> predicted{0, 1, 2, 0, 0, 2, 2, 1, 1, 1};  // 4 wrong
  std::set<std::size_t> wrong{3, 5, 7, 8};
  std::set<std::size_t> seen;
  for (int i = 0; i < 200; ++i) {
    auto picked = select_replacements(predicted, labels, 0.10, rng);
    REQUIRE(picked.size() == 1);
    CHECK(wrong.count(picked[0]) == 1);
    seen.insert(picked[0]);
  }
  CHECK(seen == wrong);
  CHECK(select_replacements(labels, labels, 0.5, rng).empty());
  CHECK(select_replacements(predicted, labels, 0.0, rng).empty());
  CHECK(select_replacements(predicted, labels, 1.0, rng).size() == 4);
}

TEST_CASE("scheduled_replace") {
  std::mt19937_64 rng(3);
  Tensor<double> alpha(10, 4, 0.0);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 0, 1, 2, 3, 0, 1};
  const std::vector<std::size_t> predicted{0, 1, 2, 0, 0, 2, 2, 1, 1, 1};
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t c = 0; c < 4; ++c) alpha(i, c) = 0.1;
    alpha(i, predicted[i]) = 0.7;
  }
  std::size_t replaced = 0;
  auto out = scheduled_replace(alpha, labels, 0.10, rng, &replaced);
  CHECK(replaced == 1);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    bool same = true;
    for (std::size_t c = 0; c < 4; ++c) same = same && out(i, c) == alpha(i, c);
    if (same) continue;
    ++changed;
    CHECK(predicted[i] != labels[i]);
    for (std::size_t c = 0; c < 4; ++c) CHECK(out(i, c) == (c == labels[i] ? 1.0 : 0.0));
  }
  CHECK(changed == 1);

  CHECK(scheduled_replace(alpha, labels, 0.0, rng) == alpha);
  auto correct = one_hot_rows<double>(labels, 4);
  CHECK(scheduled_replace(correct, labels, 0.5, rng) == correct);

  // Pooled version over a graph: every row wrong, rate 1 replaces all of them.
  auto g = toy_scenes(1, 5)[0];
  Tape<double> tape;
  Tensor<double> po(g.num_objects, 5, 0.1), pp(g.num_predicates, 4, 0.1);
  for (std::size_t i = 0; i < g.num_objects; ++i) po(i, (g.object_labels[i] + 1) % 5) = 0.6;
  for (std::size_t r = 0; r < g.num_predicates; ++r) pp(r, (g.predicate_labels[r] + 1) % 4) = 0.7;
  Classification<double> a{tape.constant(po), tape.constant(pp)};
  std::size_t n = 0;
  auto full = scheduled_replace(tape, a, g, 1.0, rng, &n);
  CHECK(n == g.num_nodes());
  CHECK(full.objects.value() == one_hot_rows<double>(g.object_labels, 5));
  CHECK(full.predicates.value() == one_hot_rows<double>(g.predicate_labels, 4));
  n = 0;
  auto part = scheduled_replace(tape, a, g, 0.1, rng, &n);
  CHECK(n == replacement_cap(0.1, g.num_nodes()));
  (void)part;
}

TEST_CASE("ramp") {
  TrainConfig c;
  c.epochs = 30;
  c.max_replace_rate = 0.10;
  CHECK(ramp(0, c) == 0.0);
  CHECK(ramp(10, c) == doctest::Approx(0.10));
  CHECK(ramp(5, c) == doctest::Approx(0.05));
  CHECK(ramp(25, c) == doctest::Approx(0.10));
  c.ramp_end_epoch = 4;
  CHECK(ramp(2, c) == doctest::Approx(0.05));
  CHECK(ramp(4, c) == 0.10);
}

TEST_CASE("kb_loss weights triples by count") {
  std::mt19937_64 rng(4);
  auto model = ModelParams<double>::init(config(), rng);
  Tape<double> tape(false);
  const std::vector<KbTriple> merged{{0, 1, 2, 2}, {3, 0, 1, 1}};
  const std::vector<KbTriple> repeated{{0, 1, 2, 1}, {0, 1, 2, 1}, {3, 0, 1, 1}};
  CHECK(kb_loss(tape, model, merged).value()[0] == doctest::Approx(kb_loss(tape, model, repeated).value()[0]));
  CHECK_THROWS(kb_loss(tape, model, std::vector<KbTriple>{}));
  CHECK_THROWS(kb_loss(tape, model, std::vector<KbTriple>{{0, 9, 1, 1}}));
}

TEST_CASE("one small optimizer step reduces the loss") {
  std::mt19937_64 rng(5);
  auto model = ModelParams<float>::init(config(), rng);
  auto scenes = toy_scenes(2, 6);
  const SceneRepGraph* parts[] = {&scenes[0], &scenes[1]};
  auto batch = merge_graphs(std::span<const SceneRepGraph* const>(parts));
  TrainConfig tc;
  tc.lr = 1e-6;
  tc.assimilations = 2;
  Trainer trainer(model, tc);
  const float before = eval_loss(model, batch, 2);
  auto report = trainer.train_image_batch(batch, 0.0);
  CHECK(report.total == doctest::Approx(before).epsilon(1e-5));
  CHECK(eval_loss(model, batch, 2) < before);
}

TEST_CASE("training lowers the loss on a toy set") {
  std::mt19937_64 rng(6);
  auto model = ModelParams<float>::init(config(), rng);
  auto scenes = toy_scenes(5, 7);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 1;
  tc.assimilations = 1;
  tc.epochs = 10;
  Trainer trainer(model, tc);
  std::vector<double> losses;
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    const auto r = trainer.train_epoch(scenes, {});
    CHECK(r.image_batches == 5);
    losses.push_back(r.total);
  }
  CHECK(trainer.step() == 50);
  CHECK((losses[0] + losses[1]) / 2 > (losses[8] + losses[9]) / 2);
}

TEST_CASE("train_epoch determinism and the empty KB") {
  auto scenes = toy_scenes(6, 8);
  const std::vector<KbTriple> kb{{0, 1, 2, 3}, {4, 0, 3, 1}, {1, 3, 0, 2}};
  auto run = [&](bool with_kb, std::span<const KbTriple> empty) {
    std::mt19937_64 rng(9);
    auto cfg = config();
    cfg.object_dropout = 0.5;
    auto model = ModelParams<float>::init(cfg, rng);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 2;
    tc.kb_batch_size = 2;
    tc.epochs = 3;
    tc.seed = 11;
    Trainer trainer(model, tc);
    LossReport last;
    for (int e = 0; e < 3; ++e) last = trainer.train_epoch(scenes, with_kb ? std::span<const KbTriple>(kb) : empty);
    return std::pair{model, last};
  };
  auto [m1, r1] = run(true, {});
  auto [m2, r2] = run(true, {});
  CHECK(r1.total == r2.total);
  CHECK(r1.kb_batches == 2);
  for (std::size_t i = 0; i < m1.parameters().size(); ++i)
    CHECK(m1.parameters()[i]->value == m2.parameters()[i]->value);

  const std::vector<KbTriple> none;
  auto [a, ra] = run(false, {});
  auto [b, rb] = run(false, none);
  CHECK(ra.total == rb.total);
  CHECK(ra.kb_batches == 0);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i]->value == b.parameters()[i]->value);
}

TEST_CASE("train_epoch errors") {
  std::mt19937_64 rng(10);
  auto model = ModelParams<float>::init(config(), rng);
  Trainer trainer(model, TrainConfig{});
  CHECK_THROWS_AS(trainer.train_epoch({}, {}), std::invalid_argument);

  auto scenes = toy_scenes(1, 11);
  model.bank.objects.value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(trainer.train_epoch(scenes, {}), NumericError);
}

TEST_CASE("scheduled sampling rate grows during training") {
  std::mt19937_64 rng(12);
  auto model = ModelParams<float>::init(config(), rng);
  auto scenes = toy_scenes(4, 13);
  TrainConfig tc;
  tc.epochs = 3;
  tc.ramp_end_epoch = 2;
  tc.max_replace_rate = 0.5;
  tc.batch_size = 4;
  Trainer trainer(model, tc);
  CHECK(trainer.train_epoch(scenes, {}).rate == 0.0);
  CHECK(trainer.train_epoch(scenes, {}).rate == doctest::Approx(0.25));
  auto third = trainer.train_epoch(scenes, {});
  CHECK(third.rate == doctest::Approx(0.5));
  CHECK(third.replaced > 0);
}

TEST_CASE("epoch log records") {
  LossReport r;
  r.object_loss = {1.5, 1.25};
  r.predicate_loss = {0.5, 0.25};
  r.step_loss = {1.0, 0.75};
  r.total = 1.75;
  r.replaced = 3;
  r.rate = 0.05;
  std::ostringstream out;
  write_epoch_log(out, 4, r);
  write_epoch_log(out, 5, r);
  std::istringstream in(out.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j["epoch"] == 4 + lines);
    CHECK(j["replaced"] == 3);
    CHECK(j["rate"] == doctest::Approx(0.05));
    CHECK(j["step_loss"].size() == 2);
    ++lines;
  }
  CHECK(lines == 2);
}
