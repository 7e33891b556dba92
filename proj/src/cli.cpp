#include "mecod/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mecod/analytics.hpp"
#include "mecod/data.hpp"
#include "mecod/diagnostics.hpp"
#include "mecod/error.hpp"
#include "mecod/io.hpp"
#include "mecod/model.hpp"
#include "mecod/objectives.hpp"
#include "mecod/templates.hpp"
#include "mecod/training.hpp"

namespace mecod {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config-file values replace flag values; unknown keys are rejected.
void apply_config(json& opts, const std::string& path) {
  if (path.empty()) return;
  json file;
  try {
    file = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw UsageError("cannot parse config file " + path + ": " + e.what());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (!file.is_object()) throw UsageError("config file must hold a JSON object");
  for (const auto& [key, value] : file.items()) {
    if (!opts.contains(key)) throw UsageError("unknown config key '" + key + "'");
    if (opts[key].is_number() != value.is_number() || opts[key].is_string() != value.is_string() ||
        opts[key].is_boolean() != value.is_boolean()) {
      throw UsageError("config key '" + key + "' has the wrong type");
    }
    opts[key] = value;
  }
}

template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(e.what());
  }
}

class Manifest {
 public:
  Manifest(std::string command, json options) {
    j_["command"] = std::move(command);
    j_["options"] = std::move(options);
    j_["inputs"] = json::object();
    j_["seeds"] = json::object();
  }
  void seed(const std::string& name, std::uint64_t v) { j_["seeds"][name] = v; }
  void input(const std::string& path) {
    if (!path.empty()) j_["inputs"][path] = io::hex64(io::hash_file(path));
  }
  // Hashes every regular file under `dir` except the manifest itself.
  void write(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    json outputs = json::object();
    for (const auto& f : files) outputs[fs::relative(f, dir).generic_string()] = io::hex64(io::hash_file(f));
    j_["outputs"] = outputs;
    io::write_text(dir / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  json j_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> pick_relations(const std::string& requested, const TripleSet& triples,
                                        const std::map<std::string, PromptTemplate>& templates) {
  std::vector<std::string> out;
  if (requested.empty()) {
    for (const auto& [rel, list] : triples) {
      if (templates.count(rel)) out.push_back(rel);
    }
    return out;
  }
  for (const auto& rel : split_list(requested)) {
    if (!triples.count(rel)) throw Error(ErrorKind::invalid_argument, "no triples for relation " + rel);
    if (!templates.count(rel)) throw Error(ErrorKind::invalid_argument, "no template for relation " + rel);
    out.push_back(rel);
  }
  return out;
}

LoadResult load_for(const json& opts, const MaskedLm& model, std::ostream& err) {
  LoadResult r = load_triples(opts.at("triples").get<std::string>(), parse_format(opts.at("format").get<std::string>()),
                              &model);
  if (opts.value("standard_splits", false)) assign_standard_splits(r.triples);
  for (const auto& w : r.report.warnings) err << "warning: " << w << "\n";
  for (const auto& [rel, n] : r.report.dropped_multi_token) {
    err << "note: " << rel << ": dropped " << n << " multi-token objects\n";
  }
  for (const auto& [rel, n] : r.report.dropped_unknown) {
    err << "note: " << rel << ": dropped " << n << " records with unknown words\n";
  }
  return r;
}

// ---------------------------------------------------------------- synth

int cmd_synth(json opts, const fs::path& out, const std::string& config, std::ostream& os) {
  apply_config(opts, config);
  const SynthWorldConfig wc = as_usage([&] {
    SynthWorldConfig c = synth_config_from_json(opts);
    c.validate();
    return c;
  });
  TinyMlmConfig mc = as_usage([&] {
    TinyMlmConfig c;
    c.hidden_dim = opts.at("hidden_dim");
    c.num_layers = opts.at("num_layers");
    c.num_heads = opts.at("num_heads");
    c.ffn_dim = opts.at("ffn_dim");
    c.max_seq_len = opts.at("max_seq_len");
    c.seed = opts.at("mlm_seed");
    c.epochs = opts.at("mlm_epochs");
    c.batch_size = opts.at("mlm_batch_size");
    c.lr = opts.at("mlm_lr");
    c.mask_prob = opts.at("mask_prob");
    c.vocab_size = 1;
    c.validate();
    return c;
  });
  const std::string style = opts.at("template_style");
  if (style != "ptuning" && style != "prefix" && style != "manual") throw UsageError("unknown template style " + style);

  fs::create_directories(out);
  const SynthWorld world = generate_synth_world(wc);
  os << "world: " << world.vocabulary.size() << " words, " << world.corpus.size() << " corpus sentences\n";
  world.vocabulary.save(out / "vocab.txt");
  std::string corpus;
  for (const auto& s : world.corpus) corpus += s + "\n";
  io::write_text(out / "corpus.txt", corpus);
  save_triples(out / "triples.jsonl", world.triples);
  std::map<std::string, PromptTemplate> templates;
  for (const auto& [rel, spec] : synth_templates(world, style)) templates.emplace(rel, parse_template(spec, rel));
  save_templates(out / "templates.json", templates);
  json info{{"relation_phrases", world.relation_phrases}, {"objects_by_frequency", world.objects_by_frequency}};
  io::write_text(out / "world.json", info.dump(2) + "\n");

  const TinyMlm model = train_tiny_mlm(world.corpus, mc, world.vocabulary);
  model.save(out / "model.bin");
  os << "tiny MLM: final epoch loss " << model.training_losses.back() << "\n";

  Manifest m("synth", opts);
  m.input(config);
  m.seed("world", wc.seed);
  m.seed("mlm", mc.seed);
  m.write(out);
  return kExitOk;
}

// ---------------------------------------------------------------- train

bool train_one(const std::string& rel, const std::vector<FactTriple>& all, const PromptTemplate& tmpl,
               const MaskedLm& model, const MecodConfig& mecod, const TrainConfig& tc, bool undersample_train,
               const fs::path& dir, std::ostream& os) {
  try {
    std::vector<FactTriple> triples;
    std::vector<FactTriple> train_part;
    for (const auto& t : all) (t.split == Split::train ? train_part : triples).push_back(t);
    std::vector<std::string> warnings;
    if (undersample_train) {
      std::string warning;
      train_part = undersample(train_part, tc.seed, &warning);
      if (!warning.empty()) warnings.push_back(warning);
    }
    triples.insert(triples.begin(), train_part.begin(), train_part.end());
    TrainConfig local = tc;
    local.diagnostics_dir = dir;
    TrainResult res = train_relation(triples, tmpl, model, mecod, local);
    res.prompt.save(dir / "prompt.bin");
    res.selector.save(dir / "selector.bin");
    io::write_text(dir / "log.jsonl", training_log_jsonl(res.log));
    warnings.insert(warnings.end(), res.warnings.begin(), res.warnings.end());
    json summary{{"relation", rel},
                 {"best_epoch", res.best_epoch},
                 {"best_dev_p1", res.best_dev_p1},
                 {"n_train", train_part.size()},
                 {"warnings", warnings}};
    io::write_text(dir / "summary.json", summary.dump(2) + "\n");
    os << rel << ": best epoch " << res.best_epoch << ", dev P@1 " << res.best_dev_p1 << "\n";
    return true;
  } catch (const std::exception& e) {
    io::write_text(dir / "error.txt", std::string(e.what()) + "\n");
    os << rel << ": FAILED: " << e.what() << "\n";
    return false;
  }
}

int cmd_train(json opts, const fs::path& out, const std::string& config, std::ostream& os, std::ostream& err) {
  apply_config(opts, config);
  const MecodConfig mecod = as_usage([&] { return mecod_config_from_json(opts); });
  const TrainConfig tc = as_usage([&] {
    TrainConfig c = train_config_from_json(opts);
    c.validate();
    return c;
  });
  const int jobs = opts.at("jobs");
  if (jobs < 1) throw UsageError("--jobs must be >= 1");

  const TinyMlm model = TinyMlm::load(opts.at("model").get<std::string>());
  mecod.validate(model.handle().vocab_size);
  const auto templates = load_templates(opts.at("templates").get<std::string>());
  const LoadResult data = load_for(opts, model, err);
  const auto relations = pick_relations(opts.at("relations"), data.triples, templates);
  if (relations.empty()) throw Error(ErrorKind::invalid_argument, "no relation has both triples and a template");
  const bool under = opts.at("undersample");

  fs::create_directories(out);
  std::vector<std::string> failed;
  if (jobs == 1) {
    for (const auto& rel : relations) {
      if (!train_one(rel, data.triples.at(rel), templates.at(rel), model, mecod, tc, under, out / rel, os)) {
        failed.push_back(rel);
      }
    }
  } else {
    std::map<pid_t, std::string> running;
    std::size_t next = 0;
    auto reap = [&] {
      int status = 0;
      const pid_t pid = ::waitpid(-1, &status, 0);
      if (pid <= 0) return;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed.push_back(running.at(pid));
      running.erase(pid);
    };
    while (next < relations.size() || !running.empty()) {
      if (next < relations.size() && static_cast<int>(running.size()) < jobs) {
        const std::string rel = relations[next++];
        os.flush();
        err.flush();
        const pid_t pid = ::fork();
        if (pid < 0) throw Error(ErrorKind::io, "fork failed");
        if (pid == 0) {
          const bool ok = train_one(rel, data.triples.at(rel), templates.at(rel), model, mecod, tc, under, out / rel, os);
          os.flush();
          ::_exit(ok ? 0 : kExitFailure);
        }
        running.emplace(pid, rel);
      } else {
        reap();
      }
    }
    std::sort(failed.begin(), failed.end());
  }

  Manifest m("train", opts);
  m.input(opts.at("model"));
  m.input(opts.at("triples"));
  m.input(opts.at("templates"));
  m.input(config);
  m.seed("train", tc.seed);
  m.write(out);
  if (!failed.empty()) {
    err << "training failed for:";
    for (const auto& r : failed) err << ' ' << r;
    err << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(json opts, const fs::path& out, const std::string& config, std::ostream& os, std::ostream& err) {
  apply_config(opts, config);
  EvalConfig ec;
  ec.top_m = opts.at("top_m");
  ec.subject_mask_count = opts.at("subject_mask_count");
  const int k = opts.at("k");
  if (ec.top_m < 1 || ec.subject_mask_count < 1 || k < 2) throw UsageError("top_m, subject_mask_count >= 1 and k >= 2");
  const Split split = as_usage([&] { return parse_split(opts.at("split")); });

  const TinyMlm model = TinyMlm::load(opts.at("model").get<std::string>());
  const auto templates = load_templates(opts.at("templates").get<std::string>());
  const LoadResult data = load_for(opts, model, err);
  const auto relations = pick_relations(opts.at("relations"), data.triples, templates);
  if (relations.empty()) throw Error(ErrorKind::invalid_argument, "no relation has both triples and a template");
  const fs::path checkpoints = opts.at("checkpoints").get<std::string>();

  fs::create_directories(out / "dumps");
  Manifest m("eval", opts);
  std::vector<LogitDump> dumps;
  for (const auto& rel : relations) {
    const PromptTemplate& tmpl = templates.at(rel);
    std::optional<ContinuousPrompt> prompt;
    if (tmpl.tunable_count() > 0) {
      if (checkpoints.empty()) throw Error(ErrorKind::invalid_argument, "template for " + rel + " needs --checkpoints");
      const fs::path p = checkpoints / rel / "prompt.bin";
      prompt = ContinuousPrompt::load(p);
      m.input(p.string());
    }
    std::vector<FactTriple> subset;
    for (const auto& t : data.triples.at(rel)) {
      if (t.split == split) subset.push_back(t);
    }
    if (subset.empty()) throw Error(ErrorKind::invalid_argument, "no " + to_string(split) + " triples for " + rel);
    LogitDump d = evaluate_relation(prompt ? &*prompt : nullptr, subset, tmpl, model, ec);
    d.relation_id = rel;
    write_logit_dump(out / "dumps" / (rel + ".dump"), d);
    dumps.push_back(std::move(d));
  }
  const BiasReport report = build_report(dumps, k);
  io::write_text(out / "report.csv", report_csv(report));
  io::write_text(out / "report.json", to_json(report).dump(2) + "\n");
  os << report_csv(report);

  m.input(opts.at("model"));
  m.input(opts.at("triples"));
  m.input(opts.at("templates"));
  m.input(config);
  m.write(out);
  return kExitOk;
}

// ---------------------------------------------------------------- diagnose

int cmd_diagnose(json opts, const fs::path& out, const std::string& config, std::ostream& os) {
  apply_config(opts, config);
  const int top_m = opts.at("top_m");
  const int top_k = opts.at("top_k");
  if (top_m < 1 || top_k < 1) throw UsageError("top_m and top_k must be >= 1");
  const TinyMlm model = TinyMlm::load(opts.at("model").get<std::string>());
  const auto templates = load_templates(opts.at("templates").get<std::string>());
  const std::string rel = opts.at("relation");
  if (!templates.count(rel)) throw Error(ErrorKind::invalid_argument, "no template for relation " + rel);
  const PromptTemplate& tmpl = templates.at(rel);
  FactTriple triple{opts.at("subject"), rel, opts.at("object"), Split::test};
  if (triple.subject.empty() || triple.object.empty()) throw UsageError("--subject and --object are required");

  Manifest m("diagnose", opts);
  std::optional<ContinuousPrompt> prompt;
  if (tmpl.tunable_count() > 0) {
    const fs::path p = fs::path(opts.at("checkpoints").get<std::string>()) / rel / "prompt.bin";
    prompt = ContinuousPrompt::load(p);
    m.input(p.string());
  }
  fs::create_directories(out);
  std::string md = "# Diagnostics for " + rel + "\n\n";
  if (prompt) {
    const auto labels = slot_labels(tmpl);
    const auto nn = nearest_neighbors(*prompt, model, top_m);
    const auto cand = mlm_candidates_at_prompt_positions(*prompt, render(tmpl, triple.subject, model), model, top_m);
    io::write_text(out / "neighbors.csv", slot_words_csv(labels, nn));
    io::write_text(out / "candidates.csv", slot_words_csv(labels, cand));
    md += "## Nearest vocabulary neighbours\n\n" + slot_words_markdown("slot", labels, nn) + "\n";
    md += "## MLM candidate words at prompt positions\n\n" + slot_words_markdown("slot", labels, cand) + "\n";
  }
  const CaseStudy cs = case_study(triple, prompt ? &*prompt : nullptr, tmpl, model, top_k);
  io::write_text(out / "case_study.csv", case_study_csv(cs));
  md += "## Case study\n\n" + case_study_markdown(cs);
  io::write_text(out / "diagnostics.md", md);
  os << md;

  m.input(opts.at("model"));
  m.input(opts.at("templates"));
  m.input(config);
  m.write(out);
  return kExitOk;
}

// ---------------------------------------------------------------- report

int cmd_report(json opts, const fs::path& out, const std::string& config, std::ostream& os) {
  apply_config(opts, config);
  const int k = opts.at("k");
  if (k < 2) throw UsageError("k must be >= 2");
  const auto evals = opts.at("eval").get<std::vector<std::string>>();
  if (evals.empty()) throw UsageError("at least one --eval NAME=DIR is required");

  Manifest m("report", opts);
  std::vector<std::pair<std::string, BiasReport>> reports;
  std::vector<std::pair<std::string, std::vector<LogitDump>>> all_dumps;
  for (const auto& e : evals) {
    const auto eq = e.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--eval expects NAME=DIR, got '" + e + "'");
    const std::string name = e.substr(0, eq);
    const fs::path dir = fs::path(e.substr(eq + 1)) / "dumps";
    if (!fs::is_directory(dir)) throw Error(ErrorKind::io, "no dumps directory in " + e.substr(eq + 1));
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.path().extension() == ".dump") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<LogitDump> dumps;
    for (const auto& f : files) {
      dumps.push_back(read_logit_dump(f));
      m.input(f.string());
    }
    if (dumps.empty()) throw Error(ErrorKind::io, "no .dump files in " + dir.string());
    reports.emplace_back(name, build_report(dumps, k));
    all_dumps.emplace_back(name, std::move(dumps));
  }
  fs::create_directories(out);
  for (const auto& [name, rep] : reports) io::write_text(out / ("report_" + name + ".csv"), report_csv(rep));
  io::write_text(out / "comparison.md", comparison_markdown(reports));
  io::write_text(out / "comparison.csv", comparison_csv(reports));
  io::write_text(out / "plot_data.csv", plot_data_csv(all_dumps, k));
  os << comparison_markdown(reports);
  m.input(config);
  m.write(out);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& os, std::ostream& err) {
  CLI::App app{"Object-bias probing and MeCoD prompt debiasing"};
  app.require_subcommand(1);
  std::string out, config;
  json opts;
  std::function<int()> action;

  // synth
  SynthWorldConfig wc;
  TinyMlmConfig mc;
  mc.epochs = 150;
  std::string style = "ptuning";
  auto* synth = app.add_subcommand("synth", "Generate a synthetic fact world and pretrain the tiny MLM on it");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--config", config, "JSON file whose keys override the flags");
  synth->add_option("--n_relations", wc.n_relations);
  synth->add_option("--n_subjects_per_relation", wc.n_subjects_per_relation);
  synth->add_option("--n_objects_per_relation", wc.n_objects_per_relation);
  synth->add_option("--skew", wc.skew, "Zipf exponent of object frequencies");
  synth->add_option("--vocab_extra", wc.vocab_extra, "Number of filler words");
  synth->add_option("--seed", wc.seed);
  synth->add_option("--train_fraction", wc.train_fraction);
  synth->add_option("--dev_fraction", wc.dev_fraction);
  synth->add_option("--n_filler_sentences", wc.n_filler_sentences);
  synth->add_option("--n_family_names", wc.n_family_names);
  synth->add_option("--family_signal", wc.family_signal);
  synth->add_option("--hidden_dim", mc.hidden_dim);
  synth->add_option("--num_layers", mc.num_layers);
  synth->add_option("--num_heads", mc.num_heads);
  synth->add_option("--ffn_dim", mc.ffn_dim);
  synth->add_option("--max_seq_len", mc.max_seq_len);
  synth->add_option("--mlm_seed", mc.seed);
  synth->add_option("--mlm_epochs", mc.epochs);
  synth->add_option("--mlm_batch_size", mc.batch_size);
  synth->add_option("--mlm_lr", mc.lr);
  synth->add_option("--mask_prob", mc.mask_prob);
  synth->add_option("--template_style", style, "ptuning, prefix or manual");
  synth->callback([&] {
    opts = to_json(wc);
    opts.update(json{{"hidden_dim", mc.hidden_dim},
                     {"num_layers", mc.num_layers},
                     {"num_heads", mc.num_heads},
                     {"ffn_dim", mc.ffn_dim},
                     {"max_seq_len", mc.max_seq_len},
                     {"mlm_seed", mc.seed},
                     {"mlm_epochs", mc.epochs},
                     {"mlm_batch_size", mc.batch_size},
                     {"mlm_lr", mc.lr},
                     {"mask_prob", mc.mask_prob},
                     {"template_style", style}});
    action = [&] { return cmd_synth(opts, out, config, os); };
  });

  // shared data flags
  std::string model_path, triples_path, templates_path, format = "synth", relations, checkpoints;
  bool standard_splits = false;
  auto data_flags = [&](CLI::App* sub, bool need_triples) {
    sub->add_option("--model", model_path, "Model checkpoint")->required();
    auto* t = sub->add_option("--triples", triples_path, "JSON-lines triple file");
    if (need_triples) t->required();
    sub->add_option("--templates", templates_path, "JSON relation -> template file")->required();
    sub->add_option("--format", format, "lama_trex, wiki_uni or synth");
    sub->add_flag("--standard_splits", standard_splits, "Assign 800 train / 200 dev / rest test per relation");
    sub->add_option("--relations", relations, "Comma-separated relation ids (default: all)");
    sub->add_option("--out", out, "Output directory")->required();
    sub->add_option("--config", config, "JSON file whose keys override the flags");
  };
  auto data_json = [&] {
    return json{{"model", model_path},   {"triples", triples_path},         {"templates", templates_path},
                {"format", format},      {"standard_splits", standard_splits}, {"relations", relations}};
  };

  // train
  MecodConfig mecod;
  TrainConfig tc;
  std::string mode = "mecod";
  bool under = false;
  int jobs = 1;
  auto* train = app.add_subcommand("train", "Tune one continuous prompt per relation");
  data_flags(train, true);
  train->add_option("--mode", mode, "baseline, mecod, ablate_no_OE or ablate_no_BOO");
  train->add_option("--lambda1", mecod.lambda1);
  train->add_option("--lambda2", mecod.lambda2);
  train->add_option("--tau", mecod.tau);
  train->add_option("--pool_size", mecod.pool_size);
  train->add_option("--gumbel_tau", mecod.gumbel_tau);
  train->add_option("--lr", tc.lr);
  train->add_option("--epochs", tc.epochs);
  train->add_option("--batch_size", tc.batch_size);
  train->add_option("--seed", tc.seed);
  train->add_flag("--undersample", under, "Undersample the two largest object groups of the training split");
  train->add_option("--jobs", jobs, "Relations trained in parallel processes");
  train->callback([&] {
    opts = data_json();
    opts.update(to_json(mecod));
    json t = to_json(tc);
    t["mode"] = mode;
    opts.update(t);
    opts["undersample"] = under;
    opts["jobs"] = jobs;
    action = [&] { return cmd_train(opts, out, config, os, err); };
  });

  // eval
  int top_m = kDumpTopM, mask_count = 1, k = 10;
  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "Write logit dumps and a bias report for trained prompts");
  data_flags(eval, true);
  eval->add_option("--checkpoints", checkpoints, "Directory written by train");
  eval->add_option("--top_m", top_m, "Candidates stored per query");
  eval->add_option("--subject_mask_count", mask_count, "Mask tokens in the relation-level query");
  eval->add_option("--k", k, "Candidates used for entropy and slope");
  eval->add_option("--split", split, "Split to evaluate");
  eval->callback([&] {
    opts = data_json();
    opts.update(json{{"checkpoints", checkpoints},
                     {"top_m", top_m},
                     {"subject_mask_count", mask_count},
                     {"k", k},
                     {"split", split}});
    action = [&] { return cmd_eval(opts, out, config, os, err); };
  });

  // diagnose
  std::string relation, subject, object;
  int diag_top_m = 10, top_k = 10;
  auto* diagnose = app.add_subcommand("diagnose", "Neighbour, candidate-word and case-study tables for one triple");
  diagnose->add_option("--model", model_path)->required();
  diagnose->add_option("--templates", templates_path)->required();
  diagnose->add_option("--checkpoints", checkpoints);
  diagnose->add_option("--relation", relation)->required();
  diagnose->add_option("--subject", subject)->required();
  diagnose->add_option("--object", object)->required();
  diagnose->add_option("--top_m", diag_top_m, "Words listed per prompt slot");
  diagnose->add_option("--top_k", top_k, "Rows in the case-study tables");
  diagnose->add_option("--out", out)->required();
  diagnose->add_option("--config", config);
  diagnose->callback([&] {
    opts = json{{"model", model_path},   {"templates", templates_path}, {"checkpoints", checkpoints},
                {"relation", relation},  {"subject", subject},          {"object", object},
                {"top_m", diag_top_m},   {"top_k", top_k}};
    action = [&] { return cmd_diagnose(opts, out, config, os); };
  });

  // report
  std::vector<std::string> evals;
  int report_k = 10;
  auto* report = app.add_subcommand("report", "Compare eval outputs of several methods");
  report->add_option("--eval", evals, "NAME=DIR of an eval output; repeatable, first is the reference")->required();
  report->add_option("--k", report_k);
  report->add_option("--out", out)->required();
  report->add_option("--config", config);
  report->callback([&] {
    opts = json{{"eval", evals}, {"k", report_k}};
    action = [&] { return cmd_report(opts, out, config, os); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, os, err);
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    return action();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mecod
