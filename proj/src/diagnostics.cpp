#include "mecod/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mecod/error.hpp"
#include "mecod/io.hpp"
#include "mecod/training.hpp"

namespace mecod {

using ag::Matrix;
using ag::Var;

namespace {

std::vector<ScoredWord> rank_scores(const Eigen::RowVectorXd& scores, const Vocabulary& vocab, int top_m) {
  const std::vector<double> s(scores.data(), scores.data() + scores.size());
  std::vector<ScoredWord> out;
  for (const auto& c : top_candidates(s, top_m)) out.push_back({c.id, vocab.token(c.id), c.logit});
  return out;
}

std::vector<CaseRow> rows_from(const std::vector<Candidate>& list, const Vocabulary& vocab, int top_k) {
  std::vector<CaseRow> rows;
  const int n = std::min<int>(top_k, static_cast<int>(list.size()));
  for (int i = 0; i < n; ++i) {
    const auto& c = list[static_cast<std::size_t>(i)];
    rows.push_back({i + 1, c.id, vocab.token(c.id), c.logit});
  }
  return rows;
}

CaseRow gold_row(const RetrievalResult& r, Path path, const Vocabulary& vocab) {
  const auto& list = path == Path::original ? r.original : r.masked;
  CaseRow row{gold_rank(r, path), r.gold_id, vocab.token(r.gold_id), std::nan("")};
  for (const auto& c : list) {
    if (c.id == r.gold_id) row.logit = c.logit;
  }
  return row;
}

std::string logit_text(double v) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(3);
  s << v;
  return s.str();
}

}  // namespace

bool CaseRow::operator==(const CaseRow& o) const {
  const bool same_logit = (std::isnan(logit) && std::isnan(o.logit)) || logit == o.logit;
  return rank == o.rank && id == o.id && word == o.word && same_logit;
}

std::vector<ScoredWord> nearest_neighbors(std::span<const double> query, const MaskedLm& model, int top_m) {
  const Matrix& table = model.embedding_table().value();
  if (static_cast<Eigen::Index>(query.size()) != table.cols()) {
    throw Error(ErrorKind::invalid_argument, "nearest_neighbors: query width does not match the embedding table");
  }
  const Eigen::Map<const Eigen::RowVectorXd> q(query.data(), static_cast<Eigen::Index>(query.size()));
  const double qn = q.norm();
  if (qn == 0.0) throw Error(ErrorKind::numeric, "nearest_neighbors: zero query vector");
  Eigen::RowVectorXd scores(table.rows());
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    const double rn = table.row(i).norm();
    scores(i) = rn == 0.0 ? -1.0 : table.row(i).dot(q) / (rn * qn);
  }
  return rank_scores(scores, model.vocabulary(), top_m);
}

std::vector<std::vector<ScoredWord>> nearest_neighbors(const ContinuousPrompt& prompt, const MaskedLm& model,
                                                       int top_m) {
  const Matrix vectors = prompt_embeddings(prompt).value();
  std::vector<std::vector<ScoredWord>> out;
  for (Eigen::Index t = 0; t < vectors.rows(); ++t) {
    const Eigen::RowVectorXd row = vectors.row(t);
    out.push_back(nearest_neighbors(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), model,
                                    top_m));
  }
  return out;
}

std::vector<std::vector<ScoredWord>> mlm_candidates_at_prompt_positions(const ContinuousPrompt& prompt,
                                                                        const RenderedInput& rendered,
                                                                        const MaskedLm& model, int top_m) {
  std::vector<int> positions(static_cast<std::size_t>(prompt.num_tokens), -1);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const int t = rendered.tunable_index[i];
    if (t >= 0 && t < prompt.num_tokens && positions[static_cast<std::size_t>(t)] < 0) {
      positions[static_cast<std::size_t>(t)] = static_cast<int>(i);
    }
  }
  if (std::find(positions.begin(), positions.end(), -1) != positions.end()) {
    throw Error(ErrorKind::invalid_argument, "rendered input does not contain every tunable slot");
  }
  const Var embeds = ag::detach(encode(prompt, rendered, model));
  const Matrix logits = model.mlm_head(model.forward_from_embeddings(embeds, positions)).value();
  std::vector<std::vector<ScoredWord>> out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out.push_back(rank_scores(logits.row(r), model.vocabulary(), top_m));
  }
  return out;
}

std::vector<std::string> slot_labels(const PromptTemplate& tmpl) {
  std::vector<int> runs;
  bool in_run = false;
  for (const Slot& s : tmpl.slots) {
    const bool tunable = std::holds_alternative<slot::Tunable>(s);
    if (tunable && !in_run) runs.push_back(0);
    if (tunable) ++runs.back();
    in_run = tunable;
  }
  std::vector<std::string> labels;
  if (runs.size() == 3 && runs[0] == runs[1] && runs[1] == runs[2]) {
    for (const char* part : {"Front", "Middle", "Back"}) {
      for (int i = 1; i <= runs[0]; ++i) labels.push_back(std::string(part) + "-" + std::to_string(i));
    }
  } else {
    for (int i = 1; i <= tmpl.tunable_count(); ++i) labels.push_back("P" + std::to_string(i));
  }
  return labels;
}

CaseStudy case_study(const FactTriple& triple, const RetrievalResult& result, const Vocabulary& vocab, int top_k) {
  CaseStudy cs;
  cs.subject = triple.subject;
  cs.relation_id = triple.relation_id;
  cs.gold = triple.object;
  cs.original = rows_from(result.original, vocab, top_k);
  cs.masked = rows_from(result.masked, vocab, top_k);
  cs.gold_original = gold_row(result, Path::original, vocab);
  cs.gold_masked = gold_row(result, Path::masked, vocab);
  return cs;
}

CaseStudy case_study(const FactTriple& triple, const ContinuousPrompt* prompt, const PromptTemplate& tmpl,
                     const MaskedLm& model, int top_k) {
  const auto results = evaluate_prompt(prompt, std::span<const FactTriple>(&triple, 1), tmpl, model);
  return case_study(triple, results.front(), model.vocabulary(), top_k);
}

std::string case_study_markdown(const CaseStudy& cs) {
  std::ostringstream out;
  out << "**" << cs.subject << "** (" << cs.relation_id << "), gold: **" << cs.gold << "**\n\n";
  out << "| rank | original prompt | logit | subject-masked prompt | logit |\n|---|---|---|---|---|\n";
  const std::size_t n = std::max(cs.original.size(), cs.masked.size());
  for (std::size_t i = 0; i < n; ++i) {
    out << "| " << (i + 1) << " | ";
    if (i < cs.original.size()) out << cs.original[i].word << " | " << logit_text(cs.original[i].logit);
    else out << " | ";
    out << " | ";
    if (i < cs.masked.size()) out << cs.masked[i].word << " | " << logit_text(cs.masked[i].logit);
    else out << " | ";
    out << " |\n";
  }
  out << "| gold | " << cs.gold_original.word << " (rank " << cs.gold_original.rank << ") | "
      << logit_text(cs.gold_original.logit) << " | " << cs.gold_masked.word << " (rank " << cs.gold_masked.rank
      << ") | " << logit_text(cs.gold_masked.logit) << " |\n";
  return out.str();
}

std::string case_study_csv(const CaseStudy& cs) {
  std::ostringstream out;
  out << "subject,relation,gold\n"
      << io::csv_field(cs.subject) << ',' << io::csv_field(cs.relation_id) << ',' << io::csv_field(cs.gold) << "\n";
  out << "path,rank,id,word,logit\n";
  auto emit = [&](const char* path, const CaseRow& r) {
    out << path << ',' << r.rank << ',' << r.id << ',' << io::csv_field(r.word) << ',' << io::exact_double(r.logit)
        << '\n';
  };
  for (const auto& r : cs.original) emit("original", r);
  for (const auto& r : cs.masked) emit("masked", r);
  emit("gold_original", cs.gold_original);
  emit("gold_masked", cs.gold_masked);
  return out.str();
}

CaseStudy parse_case_study_csv(const std::string& text) {
  const auto ls = io::lines(text);
  if (ls.size() < 3 || ls[0] != "subject,relation,gold" || ls[2] != "path,rank,id,word,logit") {
    throw Error(ErrorKind::parse, "case study CSV: unexpected header");
  }
  CaseStudy cs;
  const auto head = io::split_csv_line(ls[1]);
  if (head.size() != 3) throw Error(ErrorKind::parse, "case study CSV: bad subject line");
  cs.subject = head[0];
  cs.relation_id = head[1];
  cs.gold = head[2];
  for (std::size_t i = 3; i < ls.size(); ++i) {
    const auto f = io::split_csv_line(ls[i]);
    if (f.size() != 5) throw Error(ErrorKind::parse, "case study CSV: line " + std::to_string(i + 1));
    CaseRow r{std::stoi(f[1]), std::stoi(f[2]), f[3], io::parse_double(f[4])};
    if (f[0] == "original") cs.original.push_back(r);
    else if (f[0] == "masked") cs.masked.push_back(r);
    else if (f[0] == "gold_original") cs.gold_original = r;
    else if (f[0] == "gold_masked") cs.gold_masked = r;
    else throw Error(ErrorKind::parse, "case study CSV: unknown path '" + f[0] + "'");
  }
  return cs;
}

std::string slot_words_markdown(const std::string& title, const std::vector<std::string>& labels,
                                const std::vector<std::vector<ScoredWord>>& words) {
  std::ostringstream out;
  out << "| " << title << " | words |\n|---|---|\n";
  for (std::size_t i = 0; i < words.size(); ++i) {
    out << "| " << (i < labels.size() ? labels[i] : "P" + std::to_string(i + 1)) << " | ";
    for (std::size_t j = 0; j < words[i].size(); ++j) out << (j ? ", " : "") << words[i][j].word;
    out << " |\n";
  }
  return out.str();
}

std::string slot_words_csv(const std::vector<std::string>& labels, const std::vector<std::vector<ScoredWord>>& words) {
  std::ostringstream out;
  out << "slot,rank,id,word,score\n";
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string label = i < labels.size() ? labels[i] : "P" + std::to_string(i + 1);
    for (std::size_t j = 0; j < words[i].size(); ++j) {
      const auto& w = words[i][j];
      out << io::csv_field(label) << ',' << (j + 1) << ',' << w.id << ',' << io::csv_field(w.word) << ','
          << io::exact_double(w.score) << '\n';
    }
  }
  return out.str();
}

std::pair<std::vector<std::string>, std::vector<std::vector<ScoredWord>>> parse_slot_words_csv(
    const std::string& text) {
  const auto ls = io::lines(text);
  if (ls.empty() || ls[0] != "slot,rank,id,word,score") throw Error(ErrorKind::parse, "slot CSV: unexpected header");
  std::vector<std::string> labels;
  std::vector<std::vector<ScoredWord>> words;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto f = io::split_csv_line(ls[i]);
    if (f.size() != 5) throw Error(ErrorKind::parse, "slot CSV: line " + std::to_string(i + 1));
    if (labels.empty() || labels.back() != f[0] || std::stoi(f[1]) == 1) {
      labels.push_back(f[0]);
      words.emplace_back();
    }
    words.back().push_back({std::stoi(f[2]), f[3], io::parse_double(f[4])});
  }
  return {labels, words};
}

}  // namespace mecod
