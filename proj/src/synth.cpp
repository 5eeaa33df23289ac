#include "schemanet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "schemanet/data_io.hpp"

namespace schemanet {
namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

std::vector<std::vector<double>> draw_pkg(const SynthWorldSpec& spec, std::mt19937_64& rng) {
  const std::size_t co = spec.num_object_classes, cp = spec.num_predicate_classes;
  std::uniform_int_distribution<std::size_t> pick(0, cp - 1);
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::vector<std::vector<double>> pkg(co * co, std::vector<double>(cp, 0.0));
  for (auto& row : pkg) {
    const std::size_t major = pick(rng);
    if (cp == 1) {
      row[0] = 1.0;
      continue;
    }
    double rest = 0.0;
    for (std::size_t c = 0; c < cp; ++c) {
      if (c == major) continue;
      row[c] = gamma(rng);
      rest += row[c];
    }
    for (std::size_t c = 0; c < cp; ++c) {
      row[c] = c == major ? spec.majority_mass : (1.0 - spec.majority_mass) * row[c] / rest;
    }
  }
  return pkg;
}

struct Template {
  double tx, ty, tw, th;
};

struct Box {
  double x, y, w, h;
};

SceneRecord draw_scene(const SynthWorldSpec& spec, const SynthWorld& world, const std::vector<Template>& templates,
                       const std::vector<std::vector<std::size_t>>& type_classes, std::string id,
                       std::mt19937_64& rng) {
  const std::size_t co = spec.num_object_classes;
  std::uniform_int_distribution<std::size_t> count(spec.min_objects, spec.max_objects);
  std::uniform_int_distribution<std::size_t> cls(0, co - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t n = count(rng);
  std::vector<std::size_t> classes(n);
  if (type_classes.empty()) {
    for (auto& c : classes) c = cls(rng);
  } else {
    std::uniform_int_distribution<std::size_t> type_pick(0, type_classes.size() - 1);
    const auto& subset = type_classes[type_pick(rng)];
    std::uniform_int_distribution<std::size_t> member(0, subset.size() - 1);
    for (auto& c : classes) c = unit(rng) < spec.type_mass ? subset[member(rng)] : cls(rng);
  }

  SceneRecord rec;
  rec.id = std::move(id);
  std::vector<Box> boxes(n);
  boxes[0] = {100.0 * unit(rng), 100.0 * unit(rng), 5.0 + 15.0 * unit(rng), 5.0 + 15.0 * unit(rng)};
  for (std::size_t i = 1; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> parent_pick(0, i - 1);
    const std::size_t parent = parent_pick(rng);
    const bool child_is_head = unit(rng) < 0.5;
    const std::size_t head = child_is_head ? i : parent;
    const std::size_t tail = child_is_head ? parent : i;
    std::discrete_distribution<std::size_t> pred(world.pkg[classes[head] * co + classes[tail]].begin(),
                                                 world.pkg[classes[head] * co + classes[tail]].end());
    const std::size_t p = pred(rng);
    const Template& g = templates[p / spec.geometry_group];
    const double s = spec.geometry_noise;
    const Template t{g.tx + s * normal(rng), g.ty + s * normal(rng), g.tw + s * normal(rng),
                     g.th + s * normal(rng)};
    const Box& known = boxes[parent];
    if (child_is_head) {
      boxes[i] = {known.x + t.tx * known.w, known.y + t.ty * known.h, known.w * std::exp(t.tw),
                  known.h * std::exp(t.th)};
    } else {
      const double w = known.w / std::exp(t.tw), h = known.h / std::exp(t.th);
      boxes[i] = {known.x - t.tx * w, known.y - t.ty * h, w, h};
    }
    rec.relations.push_back({head, world.vocab.predicates()[p], tail});
  }
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.feature_sigma));
  for (std::size_t i = 0; i < n; ++i) {
    const bool occluded = unit(rng) < spec.occlusion_rate;
    std::vector<float> f(spec.dim);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      const float base = occluded ? 0.0f : world.prototypes(classes[i], k);
      f[k] = spec.feature_sigma > 0 ? base + noise(rng) : base;
    }
    rec.objects.push_back({{boxes[i].x, boxes[i].y, boxes[i].w, boxes[i].h}, world.vocab.objects()[classes[i]], f});
  }
  return rec;
}

}  // namespace

SynthWorld synth_generate(const SynthWorldSpec& spec) {
  const std::size_t co = spec.num_object_classes, cp = spec.num_predicate_classes;
  if (co == 0 || cp == 0) throw std::invalid_argument("synth: need at least one object and one predicate class");
  if (spec.dim == 0) throw std::invalid_argument("synth: feature width must be positive");
  if (spec.min_objects < 2 || spec.max_objects < spec.min_objects)
    throw std::invalid_argument("synth: objects per scene must satisfy 2 <= min <= max");
  if (spec.occlusion_rate < 0.0 || spec.occlusion_rate >= 1.0)
    throw std::invalid_argument("synth: occlusion rate must lie in [0, 1)");
  if (spec.feature_sigma < 0.0) throw std::invalid_argument("synth: negative feature sigma");
  if (spec.prototype_group == 0) throw std::invalid_argument("synth: prototype group must be positive");
  if (spec.geometry_group == 0) throw std::invalid_argument("synth: geometry group must be positive");
  if (spec.scene_types > 0 && (spec.classes_per_type == 0 || spec.type_mass < 0.0 || spec.type_mass > 1.0))
    throw std::invalid_argument("synth: scene types need a nonempty class subset and a mass in [0, 1]");
  if (spec.majority_mass <= 0.0 || spec.majority_mass > 1.0)
    throw std::invalid_argument("synth: majority mass must lie in (0, 1]");

  std::mt19937_64 rng(spec.seed);
  SynthWorld world;
  std::vector<std::string> objects, predicates;
  for (std::size_t i = 0; i < co; ++i) objects.push_back(numbered("obj", i, 3));
  for (std::size_t i = 0; i < cp; ++i) predicates.push_back(numbered("pred", i, 3));
  world.vocab = Vocabulary(objects, predicates);

  if (spec.pkg.empty()) {
    world.pkg = draw_pkg(spec, rng);
  } else {
    if (spec.pkg.size() != co * co) throw std::invalid_argument("synth: PKG needs one row per ordered class pair");
    for (const auto& row : spec.pkg) {
      if (row.size() != cp) throw std::invalid_argument("synth: PKG row width must equal the predicate count");
      double total = 0.0;
      for (double v : row) {
        if (!(v >= 0.0)) throw std::invalid_argument("synth: negative PKG entry");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("synth: PKG row does not sum to 1");
    }
    world.pkg = spec.pkg;
  }

  if (spec.prototypes.empty()) {
    std::normal_distribution<float> normal(0.0f, static_cast<float>(spec.prototype_scale));
    world.prototypes = Tensor<float>(co, spec.dim);
    for (std::size_t c = 0; c < co; ++c) {
      for (std::size_t k = 0; k < spec.dim; ++k)
        world.prototypes(c, k) = c % spec.prototype_group == 0 ? normal(rng) : world.prototypes(c - 1, k);
    }
  } else {
    if (spec.prototypes.rows() != co || spec.prototypes.cols() != spec.dim)
      throw std::invalid_argument("synth: prototypes must be classes x dim");
    world.prototypes = spec.prototypes;
  }

  const std::size_t groups = (cp + spec.geometry_group - 1) / spec.geometry_group;
  std::uniform_real_distribution<double> offset(-1.5, 1.5), logscale(-0.7, 0.7);
  std::vector<Template> templates(groups);
  for (auto& t : templates) t = {offset(rng), offset(rng), logscale(rng), logscale(rng)};

  // Types take consecutive slices of a shuffled class list, wrapping around.
  std::vector<std::vector<std::size_t>> type_classes(spec.scene_types);
  if (spec.scene_types > 0) {
    std::vector<std::size_t> order(co);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t next = 0;
    for (auto& subset : type_classes)
      for (std::size_t k = 0; k < std::min(spec.classes_per_type, co); ++k) subset.push_back(order[next++ % co]);
  }

  for (std::size_t i = 0; i < spec.train_scenes; ++i)
    world.train.push_back(draw_scene(spec, world, templates, type_classes, numbered("train-", i, 6), rng));
  for (std::size_t i = 0; i < spec.test_scenes; ++i)
    world.test.push_back(draw_scene(spec, world, templates, type_classes, numbered("test-", i, 6), rng));
  world.kb = kb_from_records(world.train, world.vocab);
  return world;
}

std::vector<std::size_t> pkg_majority(const std::vector<std::vector<double>>& pkg) {
  std::vector<std::size_t> out;
  for (const auto& row : pkg)
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  return out;
}

}  // namespace schemanet
