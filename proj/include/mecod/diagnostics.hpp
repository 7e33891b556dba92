#pragma once

#include <span>
#include <string>
#include <vector>

#include "mecod/analytics.hpp"
#include "mecod/data.hpp"
#include "mecod/model.hpp"
#include "mecod/prompt_encoder.hpp"
#include "mecod/templates.hpp"

namespace mecod {

struct ScoredWord {
  TokenId id = 0;
  std::string word;
  double score = 0.0;  // cosine for neighbours, logit for MLM candidates
  bool operator==(const ScoredWord&) const = default;
};

/// Vocabulary rows ranked by cosine similarity to `query` (ties by id).
std::vector<ScoredWord> nearest_neighbors(std::span<const double> query, const MaskedLm& model, int top_m);
/// One list per tunable slot, for the reparameterized prompt embeddings.
std::vector<std::vector<ScoredWord>> nearest_neighbors(const ContinuousPrompt& prompt, const MaskedLm& model,
                                                       int top_m);

/// Runs the assembled input and, for every tunable slot (by slot index, first
/// occurrence), returns the top_m words of the MLM head at that position.
std::vector<std::vector<ScoredWord>> mlm_candidates_at_prompt_positions(const ContinuousPrompt& prompt,
                                                                        const RenderedInput& rendered,
                                                                        const MaskedLm& model, int top_m);

/// Row labels for tunable slots: Front/Middle/Back when the template has
/// three equal runs of tunable slots, P1..PT otherwise.
std::vector<std::string> slot_labels(const PromptTemplate& tmpl);

struct CaseRow {
  int rank = 0;
  TokenId id = 0;
  std::string word;
  double logit = 0.0;  // NaN when the gold is outside the stored list
  bool operator==(const CaseRow&) const;
};

struct CaseStudy {
  std::string subject;
  std::string relation_id;
  std::string gold;
  std::vector<CaseRow> original;
  std::vector<CaseRow> masked;
  CaseRow gold_original;
  CaseRow gold_masked;
  bool operator==(const CaseStudy&) const = default;
};

/// Builds the tables from an existing retrieval result.
CaseStudy case_study(const FactTriple& triple, const RetrievalResult& result, const Vocabulary& vocab, int top_k);
/// Evaluates the single triple first. `prompt` may be null for discrete templates.
CaseStudy case_study(const FactTriple& triple, const ContinuousPrompt* prompt, const PromptTemplate& tmpl,
                     const MaskedLm& model, int top_k);

std::string case_study_markdown(const CaseStudy& cs);
std::string case_study_csv(const CaseStudy& cs);
CaseStudy parse_case_study_csv(const std::string& text);

std::string slot_words_markdown(const std::string& title, const std::vector<std::string>& labels,
                                const std::vector<std::vector<ScoredWord>>& words);
std::string slot_words_csv(const std::vector<std::string>& labels, const std::vector<std::vector<ScoredWord>>& words);
/// Inverse of slot_words_csv: labels and per-slot lists in file order.
std::pair<std::vector<std::string>, std::vector<std::vector<ScoredWord>>> parse_slot_words_csv(
    const std::string& text);

}  // namespace mecod
