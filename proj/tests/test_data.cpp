#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "mecod/data.hpp"
#include "mecod/error.hpp"
#include "mecod/io.hpp"
#include "mecod/templates.hpp"
#include "support.hpp"

using namespace mecod;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  io::write_text(path, text);
  return path;
}

}  // namespace

TEST_CASE("load triples") {
  SUBCASE("empty file gives an empty set and a warning") {
    const auto path = temp_file("mecod_test_empty.jsonl", "");
    const LoadResult r = load_triples(path, DatasetFormat::lama_trex);
    CHECK(r.triples.empty());
    CHECK(r.report.warnings.size() == 1);
    std::filesystem::remove(path);
  }
  SUBCASE("multi-token and unknown objects are filtered and counted") {
    const TinyMlm model = test::small_model();
    const auto path = temp_file("mecod_test_filter.jsonl",
                                R"({"sub_label":"Pierre Messmer","obj_label":"French","predicate_id":"P103"})"
                                "\n"
                                R"({"sub_label":"Pierre","obj_label":"the French","predicate_id":"P103"})"
                                "\n"
                                R"({"sub_label":"Pierre","obj_label":"Klingon","predicate_id":"P103"})"
                                "\n");
    const LoadResult r = load_triples(path, DatasetFormat::lama_trex, &model);
    REQUIRE(r.triples.count("P103"));
    CHECK(r.triples.at("P103").size() == 1);
    CHECK(r.report.dropped_multi_token.at("P103") == 1);
    CHECK(r.report.dropped_unknown.at("P103") == 1);
    std::filesystem::remove(path);
  }
  SUBCASE("malformed record reports its line") {
    const auto path = temp_file("mecod_test_bad.jsonl",
                                R"({"sub_label":"a","obj_label":"b","predicate_id":"P1"})"
                                "\n{not json\n");
    try {
      load_triples(path, DatasetFormat::lama_trex);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
    std::filesystem::remove(path);
  }
  SUBCASE("unknown format tag") { CHECK_THROWS_AS(parse_format("trex"), Error); }
  SUBCASE("uniform-object datasets are checked") {
    const auto path = temp_file("mecod_test_uni.jsonl",
                                R"({"subject":"a","object":"x","relation":"P1"})"
                                "\n"
                                R"({"subject":"b","object":"y","relation":"P1"})"
                                "\n"
                                R"({"subject":"c","object":"x","relation":"P2"})"
                                "\n"
                                R"({"subject":"d","object":"x","relation":"P2"})"
                                "\n"
                                R"({"subject":"e","object":"y","relation":"P2"})"
                                "\n");
    const LoadResult r = load_triples(path, DatasetFormat::wiki_uni);
    CHECK(r.triples.at("P1").size() == 2);
    CHECK(r.report.nonuniform_relations == std::vector<std::string>{"P2"});
    std::filesystem::remove(path);
  }
  SUBCASE("standard splits") {
    TripleSet s;
    for (int i = 0; i < 12; ++i) s["P1"].push_back({"s" + std::to_string(i), "P1", "o", Split::test});
    assign_standard_splits(s, 8, 2);
    CHECK(s["P1"][7].split == Split::train);
    CHECK(s["P1"][8].split == Split::dev);
    CHECK(s["P1"][9].split == Split::dev);
    CHECK(s["P1"][10].split == Split::test);
  }
}

TEST_CASE("zipf group sizes") {
  SUBCASE("zero skew is uniform within one") {
    for (int total : {100, 101, 107, 9}) {
      const auto sizes = zipf_group_sizes(total, 10, 0.0);
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      CHECK(*hi - *lo <= 1);
      CHECK(std::accumulate(sizes.begin(), sizes.end(), 0) == total);
    }
  }
  SUBCASE("skewed sizes are non-increasing and sum to the total") {
    const auto sizes = zipf_group_sizes(200, 10, 1.5);
    CHECK(std::accumulate(sizes.begin(), sizes.end(), 0) == 200);
    for (std::size_t i = 1; i < sizes.size(); ++i) CHECK(sizes[i - 1] >= sizes[i]);
  }
}

TEST_CASE("synthetic world") {
  SynthWorldConfig c;
  c.seed = 11;
  const SynthWorld w = generate_synth_world(c);

  SUBCASE("object frequencies follow the Zipf law") {
    std::vector<double> expected(10);
    double z = 0.0;
    for (int i = 0; i < 10; ++i) z += std::pow(i + 1.0, -1.5);
    for (int i = 0; i < 10; ++i) expected[static_cast<std::size_t>(i)] = 200.0 * std::pow(i + 1.0, -1.5) / z;
    for (const auto& [rel, objects] : w.objects_by_frequency) {
      std::map<std::string, int> counts;
      for (const auto& t : w.triples.at(rel)) ++counts[t.object];
      REQUIRE(objects.size() == 10);
      double chi2 = 0.0;
      for (std::size_t i = 0; i < objects.size(); ++i) {
        const double d = counts[objects[i]] - expected[i];
        chi2 += d * d / expected[i];
      }
      const boost::math::chi_squared dist(9.0);
      CAPTURE(rel);
      CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.01);
    }
  }
  SUBCASE("zero skew gives equal groups") {
    SynthWorldConfig u = c;
    u.skew = 0.0;
    const SynthWorld wu = generate_synth_world(u);
    for (const auto& [rel, list] : wu.triples) {
      std::map<std::string, int> counts;
      for (const auto& t : list) ++counts[t.object];
      int lo = 1 << 30, hi = 0;
      for (const auto& [o, n] : counts) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      CHECK(hi - lo <= 1);
    }
  }
  SUBCASE("splits are disjoint by subject") {
    for (const auto& [rel, list] : w.triples) {
      std::map<Split, std::set<std::string>> by_split;
      for (const auto& t : list) by_split[t.split].insert(t.subject);
      CHECK(by_split[Split::train].size() > 0);
      CHECK(by_split[Split::dev].size() > 0);
      CHECK(by_split[Split::test].size() > 0);
      for (const auto& s : by_split[Split::train]) {
        CHECK_FALSE(by_split[Split::test].count(s));
        CHECK_FALSE(by_split[Split::dev].count(s));
      }
      for (const auto& s : by_split[Split::dev]) CHECK_FALSE(by_split[Split::test].count(s));
    }
  }
  SUBCASE("shape of the world") {
    CHECK(w.triples.size() == 5);
    std::size_t facts = 0;
    for (const auto& [rel, list] : w.triples) {
      CHECK(list.size() == 200);
      facts += list.size();
    }
    CHECK(w.corpus.size() == facts + static_cast<std::size_t>(c.n_filler_sentences));
    // Every corpus word is in the vocabulary and every object is a single token.
    const TinyMlm probe = test::small_model(1, 16, w.vocabulary);
    for (const auto& s : w.corpus) CHECK_NOTHROW(probe.tokenize(s));
    for (const auto& [rel, list] : w.triples) {
      for (const auto& t : list) CHECK(probe.tokenize(t.object).size() == 1);
    }
  }
  SUBCASE("seed-deterministic") {
    const SynthWorld again = generate_synth_world(c);
    CHECK(again.corpus == w.corpus);
    CHECK(again.triples == w.triples);
    CHECK(again.vocabulary.tokens() == w.vocabulary.tokens());
    SynthWorldConfig other = c;
    other.seed = 12;
    CHECK(generate_synth_world(other).corpus != w.corpus);
  }
  SUBCASE("templates for every relation and style") {
    for (const char* style : {"ptuning", "prefix", "manual"}) {
      const auto t = synth_templates(w, style);
      CHECK(t.size() == 5);
      for (const auto& [rel, spec] : t) CHECK_NOTHROW(parse_template(spec, rel));
    }
    CHECK(parse_template(synth_templates(w, "ptuning").begin()->second).tunable_count() == 9);
  }
  SUBCASE("config validation and json") {
    SynthWorldConfig bad = c;
    bad.n_objects_per_relation = 2;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.family_signal = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
    const SynthWorldConfig back = synth_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
  }
}

TEST_CASE("triple file round-trip") {
  SynthWorldConfig c;
  c.n_relations = 1;
  c.n_subjects_per_relation = 100;
  const SynthWorld w = generate_synth_world(c);
  const auto path = std::filesystem::temp_directory_path() / "mecod_test_triples.jsonl";
  save_triples(path, w.triples);
  const LoadResult back = load_triples(path, DatasetFormat::synth);
  CHECK(back.triples == w.triples);
  CHECK(back.triples.begin()->second.size() == 100);
  std::filesystem::remove(path);
}
