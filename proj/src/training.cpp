#include "mecod/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "mecod/error.hpp"
#include "mecod/io.hpp"
#include "mecod/optim.hpp"

namespace mecod {

using ag::Matrix;
using ag::Var;

namespace {

constexpr int kEvalChunk = 64;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

TokenId gold_id_of(const FactTriple& t, const MaskedLm& model) {
  const auto ids = model.tokenize(t.object);
  if (ids.size() != 1) {
    throw Error(ErrorKind::invalid_argument, "object '" + t.object + "' is not a single token");
  }
  return ids.front();
}

// Input rows for a batch of rendered sequences packed back to back.
class Packer {
 public:
  Packer(const Var& prompt_vectors, const MaskedLm& model) : prompt_vectors_(prompt_vectors), model_(model) {}

  void add(const RenderedInput& r, int local_position) {
    const bool tunable =
        std::any_of(r.tunable_index.begin(), r.tunable_index.end(), [](int t) { return t >= 0; });
    if (tunable && !prompt_vectors_.defined()) {
      throw Error(ErrorKind::invalid_argument, "template has tunable slots but no prompt was given");
    }
    embeds_.push_back(tunable ? assemble_embeddings(prompt_vectors_, r, model_) : model_.embed(r.ids));
    segments_.push_back({rows_, static_cast<int>(r.size())});
    positions_.push_back(rows_ + local_position);
    rows_ += static_cast<int>(r.size());
  }

  Var hidden() const {
    return model_.forward_from_embeddings(ag::concat_rows(embeds_), segments_, positions_);
  }

  bool empty() const { return embeds_.empty(); }

 private:
  Var prompt_vectors_;
  const MaskedLm& model_;
  std::vector<Var> embeds_;
  std::vector<ag::Segment> segments_;
  std::vector<int> positions_;
  int rows_ = 0;
};

Var frozen_prompt_vectors(const ContinuousPrompt* prompt) {
  return prompt ? ag::detach(prompt_embeddings(*prompt)) : Var{};
}

TokenId argmax_lowest_id(const Matrix& logits, Eigen::Index row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < logits.cols(); ++j) {
    if (logits(row, j) > logits(row, best)) best = j;
  }
  return static_cast<TokenId>(best);
}

std::span<const double> row_span(const Matrix& m, Eigen::Index row) {
  return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

void write_nan_dump(const TrainConfig& train, const std::string& relation, const nlohmann::json& diag) {
  if (train.diagnostics_dir.empty()) return;
  io::write_text(train.diagnostics_dir / ("nonfinite_" + relation + ".json"), diag.dump(2) + "\n");
}

}  // namespace

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::mecod: return "mecod";
    case TrainMode::ablate_no_OE: return "ablate_no_OE";
    case TrainMode::ablate_no_BOO: return "ablate_no_BOO";
  }
  return "mecod";
}

TrainMode parse_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::baseline, TrainMode::mecod, TrainMode::ablate_no_OE, TrainMode::ablate_no_BOO}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::invalid_argument, "unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error(ErrorKind::invalid_argument, "lr must be > 0");
  if (epochs < 1) throw Error(ErrorKind::invalid_argument, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::invalid_argument, "batch_size must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr}, {"epochs", c.epochs}, {"batch_size", c.batch_size}, {"seed", c.seed}, {"mode", to_string(c.mode)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  return c;
}

MecodConfig effective_objectives(const MecodConfig& config, TrainMode mode) {
  MecodConfig c = config;
  if (mode == TrainMode::baseline || mode == TrainMode::ablate_no_OE) c.lambda1 = 0.0;
  if (mode == TrainMode::baseline || mode == TrainMode::ablate_no_BOO) c.lambda2 = 0.0;
  return c;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"l_mlm", r.l_mlm}, {"l_me", r.l_me},
          {"l_cl", r.l_cl},   {"l_total", r.l_total}, {"dev_p1", r.dev_p1}};
}

std::string training_log_jsonl(const std::vector<EpochRecord>& log) {
  std::string out;
  for (const auto& r : log) out += to_json(r).dump() + "\n";
  return out;
}

TrainResult train_relation(std::span<const FactTriple> triples, const PromptTemplate& tmpl, const MaskedLm& model,
                           const MecodConfig& mecod, const TrainConfig& train) {
  train.validate();
  const ModelHandle handle = model.handle();
  if (!handle.frozen) throw Error(ErrorKind::invalid_argument, "train_relation requires a frozen model");
  const MecodConfig objectives = effective_objectives(mecod, train.mode);
  objectives.validate(handle.vocab_size);

  std::vector<FactTriple> train_set, dev_set;
  for (const auto& t : triples) {
    if (t.relation_id != triples.front().relation_id) {
      throw Error(ErrorKind::invalid_argument, "train_relation: triples span several relations");
    }
    if (t.split == Split::train) train_set.push_back(t);
    if (t.split == Split::dev) dev_set.push_back(t);
  }
  if (train_set.empty()) throw Error(ErrorKind::invalid_argument, "train_relation: empty training set");
  const std::string relation = train_set.front().relation_id;
  const int num_tunable = tmpl.tunable_count();
  if (num_tunable < 1) throw Error(ErrorKind::invalid_argument, "train_relation: template has no tunable slots");

  struct Sample {
    RenderedInput original;
    RenderedInput masked;
    TokenId gold;
  };
  std::vector<Sample> samples;
  for (const auto& t : train_set) {
    RenderedInput r = render(tmpl, t.subject, model);
    RenderedInput m = subject_mask(r, handle);
    samples.push_back({std::move(r), std::move(m), gold_id_of(t, model)});
  }

  const std::uint64_t checksum_before = model.checksum();
  TrainResult result;
  result.prompt = init_prompt(num_tunable, handle, mix(train.seed, 1));
  result.selector = init_selector(handle, mix(train.seed, 2));
  if (dev_set.empty()) result.warnings.push_back("no dev triples; the final epoch is kept");

  std::vector<Var> params = result.prompt.parameters();
  for (const auto& p : result.selector.parameters()) params.push_back(p);
  Adam opt(params, AdamConfig{train.lr});
  ContinuousPrompt best_prompt = result.prompt.clone();
  SelectorParams best_selector = result.selector.clone();
  double best_dev = -1.0;

  std::mt19937_64 rng(mix(train.seed, 3));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const Var& table = model.embedding_table();

  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_mlm = 0, sum_me = 0, sum_cl = 0, sum_total = 0;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(train.batch_size));
      const auto batch = static_cast<int>(b1 - b0);
      Var prompt_vectors = prompt_embeddings(result.prompt);

      Packer originals(prompt_vectors, model);
      std::vector<TokenId> golds;
      std::map<std::vector<TokenId>, int> distinct;
      Packer masked(prompt_vectors, model);
      std::vector<int> masked_row;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const Sample& s = samples[order[bi]];
        originals.add(s.original, s.original.object_position);
        golds.push_back(s.gold);
        auto [it, fresh] = distinct.emplace(s.masked.ids, static_cast<int>(distinct.size()));
        if (fresh) masked.add(s.masked, s.masked.object_position);
        masked_row.push_back(it->second);
      }
      Var h_o = originals.hidden();
      Var l_mlm = mlm_loss(model.mlm_head(h_o), golds);
      Var masked_logits = model.mlm_head(masked.hidden());

      std::vector<CandidatePool> pools;
      for (int j = 0; j < static_cast<int>(distinct.size()); ++j) {
        pools.push_back(build_candidate_pool(ag::gather_rows(masked_logits, std::span<const int>(&j, 1)), objectives));
      }

      Var me_sum = ag::scalar(0.0);
      Var cl_sum = ag::scalar(0.0);
      for (int i = 0; i < batch; ++i) {
        const CandidatePool& pool = pools[static_cast<std::size_t>(masked_row[static_cast<std::size_t>(i)])];
        const std::uint64_t noise = mix(mix(train.seed, static_cast<std::uint64_t>(epoch)),
                                        static_cast<std::uint64_t>(steps) * 4096u + static_cast<std::uint64_t>(i));
        SelectorOutput sel = object_selector(pool, result.selector, model, noise, objectives.gumbel_tau);
        me_sum = ag::add(me_sum, max_entropy_loss(pool, sel.v));

        const TokenId gold = golds[static_cast<std::size_t>(i)];
        std::vector<int> neg_cols, neg_ids;
        for (int c = 0; c < static_cast<int>(pool.object_ids.size()); ++c) {
          if (pool.object_ids[static_cast<std::size_t>(c)] != gold) {
            neg_cols.push_back(c);
            neg_ids.push_back(pool.object_ids[static_cast<std::size_t>(c)]);
          }
        }
        Var weights = ag::gather_cols(sel.v, neg_cols);
        Var cl = contrastive_loss(ag::gather_rows(h_o, std::span<const int>(&i, 1)),
                                  ag::gather_rows(table, std::span<const int>(&gold, 1)),
                                  ag::gather_rows(table, neg_ids), objectives.tau, &weights);
        cl_sum = ag::add(cl_sum, cl);
      }
      Var l_me = ag::scale(me_sum, 1.0 / batch);
      Var l_cl = ag::scale(cl_sum, 1.0 / batch);
      Var total = joint_loss(l_mlm, l_me, l_cl, objectives);

      const double vals[] = {l_mlm.item(), l_me.item(), l_cl.item(), total.item()};
      if (!std::all_of(std::begin(vals), std::end(vals), [](double v) { return std::isfinite(v); })) {
        nlohmann::json diag{{"relation", relation},
                            {"epoch", epoch},
                            {"step", steps},
                            {"l_mlm", vals[0]},
                            {"l_me", vals[1]},
                            {"l_cl", vals[2]},
                            {"l_total", vals[3]},
                            {"prompt_finite", result.prompt.all_finite()},
                            {"selector_finite", result.selector.all_finite()},
                            {"train", to_json(train)},
                            {"objectives", to_json(objectives)}};
        write_nan_dump(train, relation, diag);
        throw Error(ErrorKind::numeric, "non-finite loss for relation " + relation + " at epoch " +
                                            std::to_string(epoch) + ": " + diag.dump());
      }

      opt.zero_grad();
      ag::backward(total);
      opt.step();
      sum_mlm += vals[0];
      sum_me += vals[1];
      sum_cl += vals[2];
      sum_total += vals[3];
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_mlm = sum_mlm / steps;
    rec.l_me = sum_me / steps;
    rec.l_cl = sum_cl / steps;
    rec.l_total = sum_total / steps;
    rec.dev_p1 = dev_set.empty() ? 0.0 : precision_at_1(&result.prompt, dev_set, tmpl, model);
    result.log.push_back(rec);
    if (dev_set.empty() || rec.dev_p1 > best_dev) {
      best_dev = rec.dev_p1;
      result.best_epoch = epoch;
      best_prompt = result.prompt.clone();
      best_selector = result.selector.clone();
    }
  }

  if (model.checksum() != checksum_before) {
    throw Error(ErrorKind::invalid_argument, "model parameters changed during prompt training");
  }
  result.prompt = std::move(best_prompt);
  result.selector = std::move(best_selector);
  result.best_dev_p1 = best_dev;
  return result;
}

std::vector<FactTriple> undersample(std::span<const FactTriple> triples, std::uint64_t seed, std::string* warning) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < triples.size(); ++i) groups[triples[i].object].push_back(i);
  if (groups.size() < 3) {
    if (warning) {
      *warning = "undersample: only " + std::to_string(groups.size()) + " distinct objects; data left unchanged";
    }
    return {triples.begin(), triples.end()};
  }
  std::vector<std::pair<std::string, std::size_t>> by_size;
  for (const auto& [obj, idx] : groups) by_size.emplace_back(obj, idx.size());
  // ties between equal-sized groups go to the lexicographically smaller object
  std::stable_sort(by_size.begin(), by_size.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t target = by_size[2].second;

  std::mt19937_64 rng(seed);
  std::vector<bool> keep(triples.size(), true);
  for (int g = 0; g < 2; ++g) {
    std::vector<std::size_t> idx = groups[by_size[static_cast<std::size_t>(g)].first];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = target; j < idx.size(); ++j) keep[idx[j]] = false;
  }
  std::vector<FactTriple> out;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (keep[i]) out.push_back(triples[i]);
  }
  return out;
}

std::vector<RetrievalResult> evaluate_prompt(const ContinuousPrompt* prompt, std::span<const FactTriple> triples,
                                             const PromptTemplate& tmpl, const MaskedLm& model,
                                             const EvalConfig& config) {
  const ModelHandle handle = model.handle();
  const Var pv = frozen_prompt_vectors(prompt);
  std::map<std::vector<TokenId>, std::vector<Candidate>> masked_cache;
  std::vector<RetrievalResult> out;
  out.reserve(triples.size());

  for (std::size_t c0 = 0; c0 < triples.size(); c0 += kEvalChunk) {
    const std::size_t c1 = std::min(triples.size(), c0 + kEvalChunk);
    Packer originals(pv, model);
    Packer masked(pv, model);
    std::vector<std::vector<TokenId>> fresh_keys;
    std::vector<std::vector<TokenId>> masked_keys;
    for (std::size_t i = c0; i < c1; ++i) {
      const FactTriple& t = triples[i];
      RenderedInput r = render(tmpl, t.subject, model);
      RenderedInput m = subject_mask(r, handle);
      originals.add(r, r.object_position);
      if (!masked_cache.count(m.ids) &&
          std::find(fresh_keys.begin(), fresh_keys.end(), m.ids) == fresh_keys.end()) {
        masked.add(m, m.object_position);
        fresh_keys.push_back(m.ids);
      }
      masked_keys.push_back(std::move(m.ids));
    }
    const Matrix logits_o = model.mlm_head(originals.hidden()).value();
    if (!masked.empty()) {
      const Matrix logits_m = model.mlm_head(masked.hidden()).value();
      for (std::size_t j = 0; j < fresh_keys.size(); ++j) {
        masked_cache[fresh_keys[j]] = top_candidates(row_span(logits_m, static_cast<Eigen::Index>(j)), config.top_m);
      }
    }
    for (std::size_t i = c0; i < c1; ++i) {
      RetrievalResult r;
      r.triple_id = triples[i].relation_id + "/" + std::to_string(i);
      r.gold_id = gold_id_of(triples[i], model);
      r.original = top_candidates(row_span(logits_o, static_cast<Eigen::Index>(i - c0)), config.top_m);
      r.masked = masked_cache.at(masked_keys[i - c0]);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Candidate> relation_query(const ContinuousPrompt* prompt, const PromptTemplate& tmpl,
                                      const MaskedLm& model, const EvalConfig& config) {
  const RenderedInput q = render_masked_query(tmpl, config.subject_mask_count, model);
  Packer packer(frozen_prompt_vectors(prompt), model);
  packer.add(q, q.object_position);
  const Matrix logits = model.mlm_head(packer.hidden()).value();
  return top_candidates(row_span(logits, 0), config.top_m);
}

LogitDump evaluate_relation(const ContinuousPrompt* prompt, std::span<const FactTriple> triples,
                            const PromptTemplate& tmpl, const MaskedLm& model, const EvalConfig& config) {
  LogitDump d;
  d.relation_id = tmpl.relation_id.empty() && !triples.empty() ? triples.front().relation_id : tmpl.relation_id;
  d.relation_query = relation_query(prompt, tmpl, model, config);
  d.results = evaluate_prompt(prompt, triples, tmpl, model, config);
  return d;
}

double precision_at_1(const ContinuousPrompt* prompt, std::span<const FactTriple> triples, const PromptTemplate& tmpl,
                      const MaskedLm& model) {
  if (triples.empty()) throw Error(ErrorKind::invalid_argument, "precision_at_1: no triples");
  const Var pv = frozen_prompt_vectors(prompt);
  int hits = 0;
  for (std::size_t c0 = 0; c0 < triples.size(); c0 += kEvalChunk) {
    const std::size_t c1 = std::min(triples.size(), c0 + kEvalChunk);
    Packer packer(pv, model);
    for (std::size_t i = c0; i < c1; ++i) {
      const RenderedInput r = render(tmpl, triples[i].subject, model);
      packer.add(r, r.object_position);
    }
    const Matrix logits = model.mlm_head(packer.hidden()).value();
    for (std::size_t i = c0; i < c1; ++i) {
      if (argmax_lowest_id(logits, static_cast<Eigen::Index>(i - c0)) == gold_id_of(triples[i], model)) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(triples.size());
}

}  // namespace mecod
