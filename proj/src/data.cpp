#include "mecod/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mecod/error.hpp"
#include "mecod/io.hpp"

namespace mecod {

using json = nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "test";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::parse, "unknown split '" + s + "'");
}

DatasetFormat parse_format(const std::string& tag) {
  if (tag == "lama_trex") return DatasetFormat::lama_trex;
  if (tag == "wiki_uni") return DatasetFormat::wiki_uni;
  if (tag == "synth") return DatasetFormat::synth;
  throw Error(ErrorKind::invalid_argument, "unknown dataset format '" + tag + "'");
}

namespace {

std::string field(const json& rec, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    auto it = rec.find(n);
    if (it != rec.end() && it->is_string()) return it->get<std::string>();
  }
  return {};
}

}  // namespace

LoadResult load_triples(const std::filesystem::path& path, DatasetFormat format, const MaskedLm* model,
                        Split default_split) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  LoadResult result;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
    FactTriple t;
    if (format == DatasetFormat::wiki_uni) {
      t.subject = field(rec, {"sub_label", "subject", "sub"});
      t.object = field(rec, {"obj_label", "object", "obj"});
      t.relation_id = field(rec, {"predicate_id", "relation", "predicate"});
    } else {
      t.subject = field(rec, {"sub_label"});
      t.object = field(rec, {"obj_label"});
      t.relation_id = field(rec, {"predicate_id"});
    }
    if (t.subject.empty() || t.object.empty() || t.relation_id.empty()) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) +
                                        ": record lacks sub_label/obj_label/predicate_id");
    }
    const std::string split = field(rec, {"split"});
    t.split = split.empty() ? default_split : parse_split(split);

    if (model) {
      try {
        if (model->tokenize(t.object).size() != 1) {
          ++result.report.dropped_multi_token[t.relation_id];
          continue;
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::unknown_symbol) throw;
        ++result.report.dropped_unknown[t.relation_id];
        continue;
      }
    }
    result.triples[t.relation_id].push_back(std::move(t));
  }
  if (result.triples.empty()) result.report.warnings.push_back("no triples loaded from " + path.string());

  if (format == DatasetFormat::wiki_uni) {
    for (const auto& [rel, triples] : result.triples) {
      std::map<std::string, int> counts;
      for (const auto& t : triples) ++counts[t.object];
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end(),
                                                [](const auto& a, const auto& b) { return a.second < b.second; });
      if (lo->second != hi->second) {
        result.report.nonuniform_relations.push_back(rel);
        result.report.warnings.push_back("relation " + rel + " has non-uniform object counts (" +
                                         std::to_string(lo->second) + ".." + std::to_string(hi->second) + ")");
      }
    }
  }
  return result;
}

void save_triples(const std::filesystem::path& path, const TripleSet& triples) {
  std::string text;
  for (const auto& [rel, list] : triples) {
    for (const auto& t : list) {
      json rec{{"sub_label", t.subject}, {"obj_label", t.object}, {"predicate_id", t.relation_id},
               {"split", to_string(t.split)}};
      text += rec.dump() + "\n";
    }
  }
  io::write_text(path, text);
}

void assign_standard_splits(TripleSet& triples, std::size_t n_train, std::size_t n_dev) {
  for (auto& [rel, list] : triples) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      list[i].split = i < n_train ? Split::train : (i < n_train + n_dev ? Split::dev : Split::test);
    }
  }
}

std::vector<int> zipf_group_sizes(int total, int groups, double skew) {
  if (groups <= 0 || total < 0 || skew < 0) throw Error(ErrorKind::invalid_argument, "zipf_group_sizes: bad arguments");
  std::vector<double> w(static_cast<std::size_t>(groups));
  for (int i = 0; i < groups; ++i) w[static_cast<std::size_t>(i)] = std::pow(static_cast<double>(i + 1), -skew);
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<int> sizes(w.size());
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double exact = total * w[i] / wsum;
    sizes[i] = static_cast<int>(std::floor(exact));
    assigned += sizes[i];
    remainders.emplace_back(exact - sizes[i], static_cast<int>(i));
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < total - assigned; ++k) ++sizes[static_cast<std::size_t>(remainders[static_cast<std::size_t>(k)].second)];
  return sizes;
}

void SynthWorldConfig::validate() const {
  if (n_relations <= 0 || n_subjects_per_relation <= 0) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: relation and subject counts must be positive");
  }
  if (n_objects_per_relation < 3) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: at least 3 objects per relation are required");
  }
  if (skew < 0) throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: skew must be >= 0");
  if (train_fraction <= 0 || dev_fraction < 0 || train_fraction + dev_fraction >= 1.0) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: bad split fractions");
  }
  if (n_family_names <= 0 || vocab_extra < 0 || n_filler_sentences < 0) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: negative size");
  }
  if (family_signal < 0 || family_signal > 1) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: family_signal must lie in [0, 1]");
  }
}

json to_json(const SynthWorldConfig& c) {
  return json{{"n_relations", c.n_relations},
              {"n_subjects_per_relation", c.n_subjects_per_relation},
              {"n_objects_per_relation", c.n_objects_per_relation},
              {"skew", c.skew},
              {"vocab_extra", c.vocab_extra},
              {"seed", c.seed},
              {"train_fraction", c.train_fraction},
              {"dev_fraction", c.dev_fraction},
              {"n_filler_sentences", c.n_filler_sentences},
              {"n_family_names", c.n_family_names},
              {"family_signal", c.family_signal}};
}

SynthWorldConfig synth_config_from_json(const json& j) {
  SynthWorldConfig c;
  c.n_relations = j.value("n_relations", c.n_relations);
  c.n_subjects_per_relation = j.value("n_subjects_per_relation", c.n_subjects_per_relation);
  c.n_objects_per_relation = j.value("n_objects_per_relation", c.n_objects_per_relation);
  c.skew = j.value("skew", c.skew);
  c.vocab_extra = j.value("vocab_extra", c.vocab_extra);
  c.seed = j.value("seed", c.seed);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  c.dev_fraction = j.value("dev_fraction", c.dev_fraction);
  c.n_filler_sentences = j.value("n_filler_sentences", c.n_filler_sentences);
  c.n_family_names = j.value("n_family_names", c.n_family_names);
  c.family_signal = j.value("family_signal", c.family_signal);
  return c;
}

namespace {

const std::vector<std::string>& relation_phrase_bank() {
  static const std::vector<std::string> bank = {
      "was born in the city of", "speaks the native language", "is a citizen of the state",
      "works in the field of",   "was developed by the firm",  "plays the instrument called",
      "is located in the region", "is a member of the party",   "writes in the style of",
      "died in the town of",      "is affiliated with the club", "holds the religion of",
  };
  return bank;
}

class WordMaker {
 public:
  explicit WordMaker(std::mt19937_64& rng) : rng_(rng) {}

  std::string make(bool capital) {
    static const std::string cons = "bdfgklmnprstvz";
    static const std::string vow = "aeiou";
    std::uniform_int_distribution<int> nsyl(2, 3);
    std::uniform_int_distribution<std::size_t> c(0, cons.size() - 1);
    std::uniform_int_distribution<std::size_t> v(0, vow.size() - 1);
    for (;;) {
      std::string w;
      const int n = nsyl(rng_);
      for (int i = 0; i < n; ++i) {
        w += cons[c(rng_)];
        w += vow[v(rng_)];
      }
      if (capital) w[0] = static_cast<char>(w[0] - 'a' + 'A');
      if (used_.insert(w).second) return w;
    }
  }

  void reserve(const std::string& w) { used_.insert(w); }

 private:
  std::mt19937_64& rng_;
  std::set<std::string> used_;
};

}  // namespace

SynthWorld generate_synth_world(const SynthWorldConfig& config) {
  config.validate();
  const auto& bank = relation_phrase_bank();
  if (config.n_relations > static_cast<int>(bank.size())) {
    throw Error(ErrorKind::invalid_argument, "SynthWorldConfig: at most " + std::to_string(bank.size()) + " relations");
  }
  std::mt19937_64 rng(config.seed);
  WordMaker words(rng);
  SynthWorld world;
  world.config = config;

  std::vector<std::string> vocab{std::string(Vocabulary::kPad), std::string(Vocabulary::kMask),
                                 std::string(Vocabulary::kUnk), "."};
  std::set<std::string> in_vocab(vocab.begin(), vocab.end());
  auto add_word = [&](const std::string& w) {
    if (in_vocab.insert(w).second) vocab.push_back(w);
  };

  std::vector<std::string> filler;
  for (int i = 0; i < config.vocab_extra; ++i) {
    filler.push_back(words.make(false));
    add_word(filler.back());
  }
  std::vector<std::string> family;
  for (int i = 0; i < config.n_family_names; ++i) {
    family.push_back(words.make(true));
    add_word(family.back());
  }

  std::uniform_int_distribution<int> lead_len(0, 2);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler.empty() ? 0 : filler.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_family(0, family.size() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  for (int r = 0; r < config.n_relations; ++r) {
    const std::string rel = "R" + std::to_string(r + 1);
    const std::string& phrase = bank[static_cast<std::size_t>(r)];
    world.relation_phrases[rel] = phrase;
    {
      std::istringstream ss(phrase);
      std::string w;
      while (ss >> w) {
        words.reserve(w);
        add_word(w);
      }
    }

    std::vector<std::string> objects;
    for (int o = 0; o < config.n_objects_per_relation; ++o) {
      objects.push_back(words.make(true));
      add_word(objects.back());
    }
    // objects[] order is the frequency rank
    world.objects_by_frequency[rel] = objects;
    const auto sizes = zipf_group_sizes(config.n_subjects_per_relation, config.n_objects_per_relation, config.skew);
    std::vector<std::string> assignment;
    for (std::size_t o = 0; o < objects.size(); ++o) assignment.insert(assignment.end(), static_cast<std::size_t>(sizes[o]), objects[o]);
    std::shuffle(assignment.begin(), assignment.end(), rng);
    std::map<std::string, std::size_t> object_rank;
    for (std::size_t o = 0; o < objects.size(); ++o) object_rank[objects[o]] = o;

    const int n = config.n_subjects_per_relation;
    const int n_train = static_cast<int>(std::lround(n * config.train_fraction));
    const int n_dev = static_cast<int>(std::lround(n * config.dev_fraction));
    auto& list = world.triples[rel];
    for (int s = 0; s < n; ++s) {
      const std::string given = words.make(true);
      add_word(given);
      FactTriple t;
      // The family name hints at the object with probability family_signal.
      const std::size_t clan = (static_cast<std::size_t>(r) * objects.size() + object_rank.at(assignment[static_cast<std::size_t>(s)])) % family.size();
      t.subject = given + " " + family[unif(rng) < config.family_signal ? clan : pick_family(rng)];
      t.relation_id = rel;
      t.object = assignment[static_cast<std::size_t>(s)];
      t.split = s < n_train ? Split::train : (s < n_train + n_dev ? Split::dev : Split::test);
      list.push_back(t);

      std::string sentence;
      if (!filler.empty()) {
        for (int k = lead_len(rng); k > 0; --k) sentence += filler[pick_filler(rng)] + " ";
      }
      sentence += t.subject + " " + phrase + " " + t.object + " .";
      world.corpus.push_back(std::move(sentence));
    }
  }

  if (!filler.empty()) {
    std::uniform_int_distribution<int> len(4, 8);
    for (int i = 0; i < config.n_filler_sentences; ++i) {
      std::string sentence;
      for (int k = len(rng); k > 0; --k) sentence += filler[pick_filler(rng)] + " ";
      sentence += ".";
      world.corpus.push_back(std::move(sentence));
    }
  }
  std::shuffle(world.corpus.begin(), world.corpus.end(), rng);
  world.vocabulary = Vocabulary(std::move(vocab));
  return world;
}

std::map<std::string, std::string> synth_templates(const SynthWorld& world, const std::string& style) {
  std::map<std::string, std::string> out;
  for (const auto& [rel, phrase] : world.relation_phrases) {
    if (style == "ptuning") {
      out[rel] = "[P] [P] [P] [X] [P] [P] [P] [Y] [P] [P] [P]";
    } else if (style == "prefix") {
      out[rel] = "[P] [P] [P] [P] [P] [X] " + phrase + " [Y] .";
    } else if (style == "manual") {
      out[rel] = "[X] " + phrase + " [Y] .";
    } else {
      throw Error(ErrorKind::invalid_argument, "unknown template style '" + style + "'");
    }
  }
  return out;
}

}  // namespace mecod
