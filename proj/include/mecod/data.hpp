#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecod/model.hpp"

namespace mecod {

enum class Split { train, dev, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct FactTriple {
  std::string subject;
  std::string relation_id;
  std::string object;
  Split split = Split::test;

  bool operator==(const FactTriple&) const = default;
};

/// relation_id -> triples in file order.
using TripleSet = std::map<std::string, std::vector<FactTriple>>;

enum class DatasetFormat { lama_trex, wiki_uni, synth };

DatasetFormat parse_format(const std::string& tag);

struct LoadReport {
  std::map<std::string, int> dropped_multi_token;
  std::map<std::string, int> dropped_unknown;
  /// WIKI-UNI relations whose object counts are not uniform.
  std::vector<std::string> nonuniform_relations;
  std::vector<std::string> warnings;
};

struct LoadResult {
  TripleSet triples;
  LoadReport report;
};

/// Reads JSON-lines records {sub_label, obj_label, predicate_id[, split]}.
/// WIKI-UNI records may use {subject, object, relation} and are normalised.
/// When `model` is given, objects that are not exactly one token are dropped
/// and counted. Records without a split get `default_split`.
LoadResult load_triples(const std::filesystem::path& path, DatasetFormat format, const MaskedLm* model = nullptr,
                        Split default_split = Split::test);

void save_triples(const std::filesystem::path& path, const TripleSet& triples);

/// First `n_train` records of each relation become train, the next `n_dev`
/// dev, the rest test (the 800/200 training-data convention).
void assign_standard_splits(TripleSet& triples, std::size_t n_train = 800, std::size_t n_dev = 200);

/// Largest-remainder apportionment of `total` items over `groups` groups with
/// weights proportional to 1 / rank^skew. skew = 0 gives sizes within +-1.
std::vector<int> zipf_group_sizes(int total, int groups, double skew);

struct SynthWorldConfig {
  int n_relations = 5;
  int n_subjects_per_relation = 200;
  int n_objects_per_relation = 10;
  double skew = 1.5;
  int vocab_extra = 200;
  std::uint64_t seed = 7;
  double train_fraction = 0.5;
  double dev_fraction = 0.2;
  int n_filler_sentences = 400;
  int n_family_names = 50;
  /// Probability that a subject's family name is the clan name of its object
  /// (otherwise uniform). Gives the model a partially reliable cue.
  double family_signal = 0.7;

  void validate() const;
};

nlohmann::json to_json(const SynthWorldConfig& c);
SynthWorldConfig synth_config_from_json(const nlohmann::json& j);

struct SynthWorld {
  SynthWorldConfig config;
  std::vector<std::string> corpus;
  TripleSet triples;
  Vocabulary vocabulary;
  std::map<std::string, std::string> relation_phrases;
  /// relation -> object vocabulary of that relation in descending frequency.
  std::map<std::string, std::vector<std::string>> objects_by_frequency;
};

/// Generates a fact world whose per-relation object frequencies follow a
/// Zipf law, plus a pretraining corpus with one sentence per fact and
/// filler sentences. Splits are disjoint by subject; output is seed-determined.
SynthWorld generate_synth_world(const SynthWorldConfig& config);

/// relation -> template spec; `style` is "ptuning", "prefix" or "manual".
std::map<std::string, std::string> synth_templates(const SynthWorld& world, const std::string& style);

}  // namespace mecod
