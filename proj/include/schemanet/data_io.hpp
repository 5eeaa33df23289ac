#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "schemanet/model.hpp"
#include "schemanet/records.hpp"

namespace schemanet {

/// {"objects": [...], "predicates": [...]}
Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

/// One JSON scene per line. With `dim`, every present feature must have
/// that width; otherwise present features must agree with each other.
/// Blank lines are skipped. Errors name the line.
std::vector<SceneRecord> read_dataset(std::istream& in, const Vocabulary& vocab,
                                      std::optional<std::size_t> dim = std::nullopt);
std::vector<SceneRecord> load_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                                      std::optional<std::size_t> dim = std::nullopt);
void write_dataset(std::ostream& out, std::span<const SceneRecord> records);
void save_dataset(const std::filesystem::path& path, std::span<const SceneRecord> records);

/// One {"head", "predicate", "tail", "count"?} object per line. Repeated
/// triples are merged by summing counts; first-appearance order is kept.
std::vector<KbTriple> read_kb(std::istream& in, const Vocabulary& vocab);
std::vector<KbTriple> load_kb(const std::filesystem::path& path, const Vocabulary& vocab);
void write_kb(std::ostream& out, std::span<const KbTriple> triples, const Vocabulary& vocab);
void save_kb(const std::filesystem::path& path, std::span<const KbTriple> triples, const Vocabulary& vocab);

/// Class-level triple counts over the relations of `records`.
std::vector<KbTriple> kb_from_records(std::span<const SceneRecord> records, const Vocabulary& vocab);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> model;
  Vocabulary vocab;
  std::uint64_t step = 0;
};

/// "SCHM", u32 version, u64 metadata length, metadata JSON, then every
/// parameter as raw little-endian f32 in `parameters()` order. Written to a
/// temporary file and renamed into place.
void save_checkpoint(const ModelParams<float>& model, const Vocabulary& vocab, std::uint64_t step,
                     const std::filesystem::path& path);

/// Throws DataError on a bad magic, version mismatch, truncation, trailing
/// bytes, or (when `expected` is given) a vocabulary digest mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Vocabulary* expected = nullptr);

}  // namespace schemanet
