#include "schemanet/data_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace schemanet {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::vector<std::string> string_list(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw DataError(std::string("vocabulary: missing array '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : j[key]) {
    if (!v.is_string()) throw DataError(std::string("vocabulary: non-string entry in '") + key + "'");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::size_t index_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0)
    throw DataError(std::string("field '") + key + "' must be a nonnegative integer");
  return j[key].get<std::size_t>();
}

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw DataError(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

SceneRecord parse_scene(const json& j, const Vocabulary& vocab, std::optional<std::size_t>& dim) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  SceneRecord rec;
  rec.id = string_field(j, "id");
  if (!j.contains("objects") || !j["objects"].is_array()) throw DataError("missing array 'objects'");
  for (const auto& o : j["objects"]) {
    if (!o.is_object()) throw DataError("object entry is not a JSON object");
    ObjectAnnotation obj;
    if (!o.contains("box") || !o["box"].is_array() || o["box"].size() != 4)
      throw DataError("object box must be [x, y, w, h]");
    for (const auto& v : o["box"])
      if (!v.is_number()) throw DataError("object box must hold numbers");
    obj.box = {o["box"][0].get<double>(), o["box"][1].get<double>(), o["box"][2].get<double>(),
               o["box"][3].get<double>()};
    if (!(obj.box.w > 0) || !(obj.box.h > 0)) throw DataError("object box needs positive width and height");
    obj.label = string_field(o, "label");
    if (!vocab.object_index(obj.label)) throw DataError("unknown object label '" + obj.label + "'");
    if (o.contains("feature") && !o["feature"].is_null()) {
      if (!o["feature"].is_array()) throw DataError("feature must be an array");
      std::vector<float> f;
      for (const auto& v : o["feature"]) {
        if (!v.is_number()) throw DataError("feature must hold numbers");
        f.push_back(v.get<float>());
      }
      if (dim && f.size() != *dim)
        throw DataError("feature width " + std::to_string(f.size()) + ", expected " + std::to_string(*dim));
      dim = f.size();
      obj.feature = std::move(f);
    }
    rec.objects.push_back(std::move(obj));
  }
  if (j.contains("relations")) {
    if (!j["relations"].is_array()) throw DataError("'relations' must be an array");
    for (const auto& r : j["relations"]) {
      if (!r.is_object()) throw DataError("relation entry is not a JSON object");
      RelationAnnotation rel{index_field(r, "head"), string_field(r, "predicate"), index_field(r, "tail")};
      if (rel.head >= rec.objects.size() || rel.tail >= rec.objects.size())
        throw DataError("relation index out of range (" + std::to_string(rec.objects.size()) + " objects)");
      if (rel.head == rel.tail) throw DataError("relation from an object to itself");
      if (!vocab.predicate_index(rel.predicate)) throw DataError("unknown predicate '" + rel.predicate + "'");
      rec.relations.push_back(std::move(rel));
    }
  }
  return rec;
}

json scene_json(const SceneRecord& rec) {
  json objects = json::array();
  for (const auto& o : rec.objects) {
    json obj{{"box", {o.box.x, o.box.y, o.box.w, o.box.h}}, {"label", o.label}};
    if (o.feature) obj["feature"] = *o.feature;
    objects.push_back(std::move(obj));
  }
  json relations = json::array();
  for (const auto& r : rec.relations)
    relations.push_back({{"head", r.head}, {"predicate", r.predicate}, {"tail", r.tail}});
  return {{"id", rec.id}, {"objects", std::move(objects)}, {"relations", std::move(relations)}};
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

Vocabulary load_vocab(const std::filesystem::path& path) {
  auto in = open_in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("vocabulary '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw DataError("vocabulary '" + path.string() + "' is not a JSON object");
  return Vocabulary(string_list(j, "objects"), string_list(j, "predicates"));
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << json{{"objects", vocab.objects()}, {"predicates", vocab.predicates()}}.dump(1) << '\n';
}

std::vector<SceneRecord> read_dataset(std::istream& in, const Vocabulary& vocab, std::optional<std::size_t> dim) {
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      out.push_back(parse_scene(json::parse(line), vocab, dim));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SceneRecord> load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                                      std::optional<std::size_t> dim) {
  auto in = open_in(path);
  try {
    return read_dataset(in, vocab, dim);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, std::span<const SceneRecord> records) {
  for (const auto& r : records) out << scene_json(r).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, std::span<const SceneRecord> records) {
  auto out = open_out(path);
  write_dataset(out, records);
}

std::vector<KbTriple> read_kb(std::istream& in, const Vocabulary& vocab) {
  std::vector<KbTriple> out;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> position;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw DataError("triple is not a JSON object");
      const std::string head = string_field(j, "head"), pred = string_field(j, "predicate"),
                        tail = string_field(j, "tail");
      auto h = vocab.object_index(head), t = vocab.object_index(tail);
      auto p = vocab.predicate_index(pred);
      if (!h) throw DataError("unknown object label '" + head + "'");
      if (!t) throw DataError("unknown object label '" + tail + "'");
      if (!p) throw DataError("unknown predicate '" + pred + "'");
      std::uint64_t count = 1;
      if (j.contains("count")) {
        if (!j["count"].is_number_integer() || j["count"].get<long long>() < 1)
          throw DataError("count must be an integer >= 1");
        count = j["count"].get<std::uint64_t>();
      }
      auto [it, fresh] = position.emplace(std::make_tuple(*h, *p, *t), out.size());
      if (fresh) {
        out.push_back({*h, *p, *t, count});
      } else {
        out[it->second].count += count;
      }
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<KbTriple> load_kb(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto in = open_in(path);
  try {
    return read_kb(in, vocab);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_kb(std::ostream& out, std::span<const KbTriple> triples, const Vocabulary& vocab) {
  for (const auto& t : triples) {
    out << json{{"head", vocab.objects().at(t.head)},
                {"predicate", vocab.predicates().at(t.predicate)},
                {"tail", vocab.objects().at(t.tail)},
                {"count", t.count}}
               .dump()
        << '\n';
  }
}

void save_kb(const std::filesystem::path& path, std::span<const KbTriple> triples, const Vocabulary& vocab) {
  auto out = open_out(path);
  write_kb(out, triples, vocab);
}

std::vector<KbTriple> kb_from_records(std::span<const SceneRecord> records, const Vocabulary& vocab) {
  std::vector<KbTriple> out;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> position;
  for (const auto& rec : records) {
    for (const auto& r : rec.relations) {
      auto h = vocab.object_index(rec.objects.at(r.head).label);
      auto t = vocab.object_index(rec.objects.at(r.tail).label);
      auto p = vocab.predicate_index(r.predicate);
      if (!h || !t || !p) throw DataError("scene '" + rec.id + "': label outside the vocabulary");
      auto [it, fresh] = position.emplace(std::make_tuple(*h, *p, *t), out.size());
      if (fresh) {
        out.push_back({*h, *p, *t, 1});
      } else {
        ++out[it->second].count;
      }
    }
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'C', 'H', 'M'};

template <typename U>
void put_le(std::string& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

json config_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn_hidden", c.ffn_hidden},
          {"inject_hidden", c.inject_hidden},
          {"predicate_hidden", c.predicate_hidden},
          {"object_dropout", c.object_dropout},
          {"predicate_dropout", c.predicate_dropout},
          {"leaky_slope", c.leaky_slope},
          {"num_object_classes", c.num_object_classes},
          {"num_predicate_classes", c.num_predicate_classes}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ffn_hidden = j.at("ffn_hidden").get<std::size_t>();
  c.inject_hidden = j.at("inject_hidden").get<std::size_t>();
  c.predicate_hidden = j.at("predicate_hidden").get<std::size_t>();
  c.object_dropout = j.at("object_dropout").get<double>();
  c.predicate_dropout = j.at("predicate_dropout").get<double>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.num_object_classes = j.at("num_object_classes").get<std::size_t>();
  c.num_predicate_classes = j.at("num_predicate_classes").get<std::size_t>();
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams<float>& model, const Vocabulary& vocab, std::uint64_t step,
                     const std::filesystem::path& path) {
  if (vocab.num_objects() != model.config.num_object_classes ||
      vocab.num_predicates() != model.config.num_predicate_classes)
    throw DataError("save_checkpoint: vocabulary size does not match the model");
  json tensors = json::array();
  for (const auto* p : model.parameters())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  const json meta{{"config", config_json(model.config)},
                  {"vocab_digest", vocab.digest()},
                  {"objects", vocab.objects()},
                  {"predicates", vocab.predicates()},
                  {"step", step},
                  {"tensors", std::move(tensors)}};
  const std::string meta_text = meta.dump();

  std::string buf(kMagic, 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint64_t>(buf, meta_text.size());
  buf += meta_text;
  for (const auto* p : model.parameters()) {
    for (float v : p->value.values()) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    auto out = open_out(tmp, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary* expected) {
  auto in = open_in(path, std::ios::binary);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
  const std::string where = "checkpoint '" + path.string() + "': ";
  if (buf.size() < 16) throw DataError(where + "truncated header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw DataError(where + "bad magic");
  const auto version = get_le<std::uint32_t>(bytes + 4);
  if (version != kCheckpointVersion)
    throw DataError(where + "version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const auto meta_len = get_le<std::uint64_t>(bytes + 8);
  if (meta_len > buf.size() - 16) throw DataError(where + "truncated metadata");
  json meta;
  try {
    meta = json::parse(buf.substr(16, meta_len));
  } catch (const json::exception& e) {
    throw DataError(where + "bad metadata: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.vocab = Vocabulary(meta.at("objects").get<std::vector<std::string>>(),
                          meta.at("predicates").get<std::vector<std::string>>());
    ck.step = meta.at("step").get<std::uint64_t>();
    if (ck.vocab.digest() != meta.at("vocab_digest").get<std::string>())
      throw DataError(where + "stored vocabulary does not match its digest");
    std::mt19937_64 rng(0);
    ck.model = ModelParams<float>::init(config_from_json(meta.at("config")), rng);
  } catch (const json::exception& e) {
    throw DataError(where + "bad metadata: " + e.what());
  }
  if (expected && expected->digest() != ck.vocab.digest())
    throw DataError(where + "vocabulary digest " + ck.vocab.digest() + " does not match " + expected->digest());

  const auto& listed = meta.at("tensors");
  auto params = ck.model.parameters();
  if (listed.size() != params.size()) throw DataError(where + "tensor list does not match the architecture");
  std::size_t offset = 16 + meta_len;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (listed[i].at("name").get<std::string>() != p->name ||
        listed[i].at("rows").get<std::size_t>() != p->value.rows() ||
        listed[i].at("cols").get<std::size_t>() != p->value.cols())
      throw DataError(where + "tensor " + std::to_string(i) + " does not match '" + p->name + "'");
    const std::size_t need = p->value.size() * 4;
    if (buf.size() - offset < need) throw DataError(where + "truncated tensor data at '" + p->name + "'");
    for (auto& v : p->value.values()) {
      v = std::bit_cast<float>(get_le<std::uint32_t>(bytes + offset));
      offset += 4;
    }
  }
  if (offset != buf.size()) throw DataError(where + "trailing bytes after tensor data");
  return ck;
}

}  // namespace schemanet
