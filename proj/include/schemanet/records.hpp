#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace schemanet {

struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;
};

struct ObjectAnnotation {
  BoundingBox box;
  std::string label;
  std::optional<std::vector<float>> feature;
};

struct RelationAnnotation {
  std::size_t head = 0;
  std::string predicate;
  std::size_t tail = 0;
};

/// One annotated image.
struct SceneRecord {
  std::string id;
  std::vector<ObjectAnnotation> objects;
  std::vector<RelationAnnotation> relations;
};

/// Ordered class names; position fixes the class index.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> objects, std::vector<std::string> predicates);

  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<std::string>& predicates() const { return predicates_; }
  std::size_t num_objects() const { return objects_.size(); }
  std::size_t num_predicates() const { return predicates_.size(); }

  std::optional<std::size_t> object_index(const std::string& name) const;
  std::optional<std::size_t> predicate_index(const std::string& name) const;

  /// FNV-1a 64 over the names and their order, as 16 hex digits.
  std::string digest() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.objects_ == b.objects_ && a.predicates_ == b.predicates_;
  }

 private:
  std::vector<std::string> objects_;
  std::vector<std::string> predicates_;
  std::unordered_map<std::string, std::size_t> object_ids_;
  std::unordered_map<std::string, std::size_t> predicate_ids_;
};

/// Class-level triple from a knowledge base.
struct KbTriple {
  std::size_t head = 0;
  std::size_t predicate = 0;
  std::size_t tail = 0;
  std::uint64_t count = 1;

  friend bool operator==(const KbTriple&, const KbTriple&) = default;
};

/// Input validation failure with a location (file line, record id...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace schemanet
