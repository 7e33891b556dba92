#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecod/analytics.hpp"
#include "mecod/cli.hpp"
#include "mecod/diagnostics.hpp"
#include "mecod/io.hpp"

using namespace mecod;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "mecod");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "mecod_cli_test" / name;
  fs::remove_all(p);
  return p;
}

// Small world shared by the pipeline tests, built once.
const fs::path& world_dir() {
  static const fs::path dir = [] {
    const fs::path d = scratch("world/nested/run");  // parents do not exist yet
    const Run r = run({"synth", "--out", d.string(), "--n_relations", "2", "--n_subjects_per_relation", "60",
                       "--vocab_extra", "30", "--n_filler_sentences", "20", "--hidden_dim", "16", "--num_layers", "1",
                       "--ffn_dim", "32", "--mlm_epochs", "8", "--seed", "5"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    return d;
  }();
  return dir;
}

std::vector<std::string> data_args() {
  const fs::path& w = world_dir();
  return {"--model", (w / "model.bin").string(), "--triples", (w / "triples.jsonl").string(), "--templates",
          (w / "templates.json").string(), "--format", "synth"};
}

std::vector<std::string> train_args(const fs::path& out, std::vector<std::string> extra) {
  std::vector<std::string> a{"train"};
  for (auto& s : data_args()) a.push_back(s);
  for (auto& s : std::vector<std::string>{"--out", out.string(), "--epochs", "2", "--lr", "3e-3", "--pool_size", "30",
                                          "--seed", "3"}) {
    a.push_back(s);
  }
  for (auto& s : extra) a.push_back(s);
  return a;
}

std::string log_of(const fs::path& dir, const std::string& rel) { return io::read_text(dir / rel / "log.jsonl"); }

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--mode", "baseline"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);

  const fs::path cfg = scratch("bad_config") / "c.json";
  io::write_text(cfg, R"({"no_such_key": 1})");
  CHECK(run({"synth", "--out", scratch("x").string(), "--config", cfg.string()}).code == kExitUsage);
  io::write_text(cfg, R"({"skew": "steep"})");
  CHECK(run({"synth", "--out", scratch("x").string(), "--config", cfg.string()}).code == kExitUsage);
}

TEST_CASE("synth writes the world, model and manifest") {
  const fs::path& w = world_dir();
  for (const char* f : {"vocab.txt", "corpus.txt", "triples.jsonl", "templates.json", "world.json", "model.bin",
                        "manifest.json"}) {
    CHECK_MESSAGE(fs::exists(w / f), f);
  }
  const json m = json::parse(io::read_text(w / "manifest.json"));
  CHECK(m["command"] == "synth");
  CHECK(m["seeds"]["world"] == 5);
  CHECK(m["options"]["n_relations"] == 2);
  CHECK(m["outputs"].contains("model.bin"));

  SUBCASE("same seed gives an identical manifest") {
    const fs::path again = scratch("world_again");
    const Run r = run({"synth", "--out", again.string(), "--n_relations", "2", "--n_subjects_per_relation", "60",
                       "--vocab_extra", "30", "--n_filler_sentences", "20", "--hidden_dim", "16", "--num_layers", "1",
                       "--ffn_dim", "32", "--mlm_epochs", "8", "--seed", "5"});
    REQUIRE(r.code == kExitOk);
    CHECK(io::read_text(again / "manifest.json") == io::read_text(w / "manifest.json"));
  }
  SUBCASE("config file overrides flags") {
    const fs::path out = scratch("world_cfg");
    const fs::path cfg = scratch("cfg") / "synth.json";
    io::write_text(cfg, R"({"n_relations": 1, "mlm_epochs": 1, "n_subjects_per_relation": 30})");
    const Run r = run({"synth", "--out", out.string(), "--n_relations", "4", "--config", cfg.string(), "--hidden_dim",
                       "8", "--num_layers", "1", "--ffn_dim", "8", "--vocab_extra", "10", "--n_filler_sentences", "5"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const json m2 = json::parse(io::read_text(out / "manifest.json"));
    CHECK(m2["options"]["n_relations"] == 1);
    CHECK(json::parse(io::read_text(out / "templates.json")).size() == 1);
  }
}

TEST_CASE("train, eval, diagnose and report") {
  const fs::path base = scratch("base"), full = scratch("mecod"), zero = scratch("zero");
  const Run rb = run(train_args(base, {"--mode", "baseline"}));
  REQUIRE_MESSAGE(rb.code == kExitOk, rb.err);
  const Run rm = run(train_args(full, {"--mode", "mecod", "--jobs", "2"}));
  REQUIRE_MESSAGE(rm.code == kExitOk, rm.err);
  const Run rz = run(train_args(zero, {"--mode", "mecod", "--lambda1", "0", "--lambda2", "0"}));
  REQUIRE_MESSAGE(rz.code == kExitOk, rz.err);

  const std::vector<std::string> rels{"R1", "R2"};
  for (const auto& rel : rels) {
    for (const char* f : {"prompt.bin", "selector.bin", "log.jsonl", "summary.json"}) {
      CHECK(fs::exists(base / rel / f));
      CHECK(fs::exists(full / rel / f));
    }
    CHECK(log_of(zero, rel) == log_of(base, rel));
    CHECK(log_of(full, rel) != log_of(base, rel));
  }
  CHECK(fs::exists(base / "manifest.json"));

  SUBCASE("undersampling flag changes the training data") {
    const fs::path under = scratch("under");
    const Run r = run(train_args(under, {"--mode", "baseline", "--undersample", "--relations", "R1"}));
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(fs::exists(under / "R1" / "log.jsonl"));
    CHECK_FALSE(fs::exists(under / "R2"));
    CHECK(json::parse(io::read_text(under / "manifest.json"))["options"]["undersample"] == true);
  }

  SUBCASE("eval writes dumps and a report consistent with analytics") {
    const fs::path ev = scratch("eval_base");
    std::vector<std::string> a{"eval"};
    for (auto& s : data_args()) a.push_back(s);
    for (auto& s : std::vector<std::string>{"--checkpoints", base.string(), "--out", ev.string(), "--top_m", "64"}) {
      a.push_back(s);
    }
    const Run r = run(a);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const std::string csv = io::read_text(ev / "report.csv");
    CHECK(io::lines(csv).size() == 1 + 2 + 1);

    std::vector<LogitDump> dumps;
    for (const auto& rel : rels) dumps.push_back(read_logit_dump(ev / "dumps" / (rel + ".dump")));
    CHECK(report_csv(build_report(dumps)) == csv);
    const auto row = io::split_csv_line(io::lines(csv)[1]);
    CHECK(std::stod(row[2]) == doctest::Approx(p_at_1(dumps[0].results)).epsilon(1e-6));
    CHECK(std::stod(row[3]) == doctest::Approx(mrr(dumps[0].results)).epsilon(1e-6));
    CHECK(std::stod(row[4]) == doctest::Approx(object_bias_entropy(dumps[0].relation_query)).epsilon(1e-6));

    const fs::path ev2 = scratch("eval_base_again");
    a[a.size() - 3] = ev2.string();
    REQUIRE(run(a).code == kExitOk);
    CHECK(io::read_text(ev2 / "report.csv") == csv);
    CHECK(io::read_text(ev2 / "dumps" / "R1.dump") == io::read_text(ev / "dumps" / "R1.dump"));

    const fs::path ev3 = scratch("eval_mecod");
    std::vector<std::string> b = a;
    b[b.size() - 5] = full.string();
    b[b.size() - 3] = ev3.string();
    REQUIRE(run(b).code == kExitOk);

    const fs::path rep = scratch("report");
    const Run rr = run({"report", "--eval", "baseline=" + ev.string(), "--eval", "mecod=" + ev3.string(), "--out",
                        rep.string()});
    REQUIRE_MESSAGE(rr.code == kExitOk, rr.err);
    const std::string md = io::read_text(rep / "comparison.md");
    CHECK(md.find("| baseline |") != std::string::npos);
    CHECK(md.find("| mecod |") != std::string::npos);
    CHECK(io::lines(io::read_text(rep / "plot_data.csv")).size() == 1 + 2 * 2 * 10);
    CHECK(fs::exists(rep / "report_baseline.csv"));
    CHECK(fs::exists(rep / "manifest.json"));
  }

  SUBCASE("diagnose emits parseable tables") {
    const std::string triples = io::read_text(world_dir() / "triples.jsonl");
    const json first = json::parse(io::lines(triples).front());
    const fs::path out = scratch("diag");
    std::vector<std::string> a{"diagnose", "--model", (world_dir() / "model.bin").string(), "--templates",
                               (world_dir() / "templates.json").string(), "--checkpoints", full.string(),
                               "--relation", first["predicate_id"], "--subject", first["sub_label"], "--object",
                               first["obj_label"], "--out", out.string(), "--top_k", "5"};
    const Run r = run(a);
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const CaseStudy cs = parse_case_study_csv(io::read_text(out / "case_study.csv"));
    CHECK(cs.original.size() == 5);
    CHECK(cs.subject == first["sub_label"]);
    const auto [labels, words] = parse_slot_words_csv(io::read_text(out / "neighbors.csv"));
    CHECK(labels.front() == "Front-1");
    CHECK(words.size() == 9);
    CHECK(io::read_text(out / "diagnostics.md").find("| gold |") != std::string::npos);

    const fs::path again = scratch("diag_again");
    a[a.size() - 3] = again.string();
    REQUIRE(run(a).code == kExitOk);
    CHECK(io::read_text(again / "case_study.csv") == io::read_text(out / "case_study.csv"));
    CHECK(io::read_text(again / "candidates.csv") == io::read_text(out / "candidates.csv"));
  }
}

TEST_CASE("runtime failures exit with 2") {
  std::vector<std::string> a{"eval", "--model", (scratch("missing") / "model.bin").string(), "--triples",
                             (world_dir() / "triples.jsonl").string(), "--templates",
                             (world_dir() / "templates.json").string(), "--out", scratch("eval_fail").string()};
  CHECK(run(a).code == kExitFailure);
}

#ifdef MECOD_CLI_PATH
TEST_CASE("the installed binary reports exit codes") {
  const std::string bin = MECOD_CLI_PATH;
  CHECK(std::system((bin + " --help > /dev/null 2>&1").c_str()) == 0);
  const int usage = std::system((bin + " train > /dev/null 2>&1").c_str());
  CHECK(WEXITSTATUS(usage) == kExitUsage);
}
#endif
