#include "schemanet/records.hpp"

#include <cstdio>

namespace schemanet {

Vocabulary::Vocabulary(std::vector<std::string> objects, std::vector<std::string> predicates)
    : objects_(std::move(objects)), predicates_(std::move(predicates)) {
  for (std::size_t i = 0; i < objects_.size(); ++i) {
    if (!object_ids_.emplace(objects_[i], i).second)
      throw DataError("vocabulary: duplicate object class '" + objects_[i] + "'");
  }
  for (std::size_t i = 0; i < predicates_.size(); ++i) {
    if (!predicate_ids_.emplace(predicates_[i], i).second)
      throw DataError("vocabulary: duplicate predicate class '" + predicates_[i] + "'");
  }
}

std::optional<std::size_t> Vocabulary::object_index(const std::string& name) const {
  auto it = object_ids_.find(name);
  if (it == object_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Vocabulary::predicate_index(const std::string& name) const {
  auto it = predicate_ids_.find(name);
  if (it == predicate_ids_.end()) return std::nullopt;
  return it->second;
}

std::string Vocabulary::digest() const {
  std::uint64_t hash = 1469598103934665603ULL;
  auto feed = [&hash](unsigned char c) {
    hash ^= c;
    hash *= 1099511628211ULL;
  };
  auto feed_list = [&feed](const std::vector<std::string>& names) {
    for (const auto& n : names) {
      for (unsigned char c : n) feed(c);
      feed('\n');
    }
  };
  feed_list(objects_);
  feed(0);
  feed_list(predicates_);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace schemanet
