#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecod/analytics.hpp"
#include "mecod/data.hpp"
#include "mecod/model.hpp"
#include "mecod/objectives.hpp"
#include "mecod/prompt_encoder.hpp"
#include "mecod/templates.hpp"

namespace mecod {

enum class TrainMode { baseline, mecod, ablate_no_OE, ablate_no_BOO };

std::string to_string(TrainMode m);
TrainMode parse_mode(const std::string& s);

struct TrainConfig {
  double lr = 1e-5;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::mecod;
  /// Where train_relation writes a JSON dump when it aborts on a non-finite loss.
  std::filesystem::path diagnostics_dir;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

/// The objective weights actually used by `mode`: baseline zeroes both
/// lambdas, the ablations zero one each, mecod keeps `config` as given.
MecodConfig effective_objectives(const MecodConfig& config, TrainMode mode);

struct EpochRecord {
  int epoch = 0;
  double l_mlm = 0.0;
  double l_me = 0.0;
  double l_cl = 0.0;
  double l_total = 0.0;
  double dev_p1 = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

nlohmann::json to_json(const EpochRecord& r);
/// One JSON object per line.
std::string training_log_jsonl(const std::vector<EpochRecord>& log);

struct TrainResult {
  ContinuousPrompt prompt;  // best checkpoint by dev P@1
  SelectorParams selector;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_dev_p1 = 0.0;
  std::vector<std::string> warnings;
};

/// Tunes a continuous prompt for one relation against a frozen model. Uses
/// the train-split triples for updates and the dev split for checkpoint
/// selection. Every loss component is computed and logged in every mode;
/// only the terms with a non-zero weight enter the gradient.
TrainResult train_relation(std::span<const FactTriple> triples, const PromptTemplate& tmpl, const MaskedLm& model,
                           const MecodConfig& mecod, const TrainConfig& train);

/// Shrinks the two largest object groups to the size of the third largest by
/// sampling without replacement; relative order is preserved. With fewer than
/// three distinct objects the input is returned and `warning` is set.
std::vector<FactTriple> undersample(std::span<const FactTriple> triples, std::uint64_t seed,
                                    std::string* warning = nullptr);

struct EvalConfig {
  int top_m = kDumpTopM;
  /// Number of mask tokens standing in for the subject in the relation-level query.
  int subject_mask_count = 1;
};

/// `prompt` may be null for templates without tunable slots.
std::vector<RetrievalResult> evaluate_prompt(const ContinuousPrompt* prompt, std::span<const FactTriple> triples,
                                             const PromptTemplate& tmpl, const MaskedLm& model,
                                             const EvalConfig& config = {});

/// Top-m candidates of the relation-level subject-masked query.
std::vector<Candidate> relation_query(const ContinuousPrompt* prompt, const PromptTemplate& tmpl,
                                      const MaskedLm& model, const EvalConfig& config = {});

/// relation_query + evaluate_prompt bundled for one relation.
LogitDump evaluate_relation(const ContinuousPrompt* prompt, std::span<const FactTriple> triples,
                            const PromptTemplate& tmpl, const MaskedLm& model, const EvalConfig& config = {});

/// Fraction of triples whose top original-path prediction is the gold object.
double precision_at_1(const ContinuousPrompt* prompt, std::span<const FactTriple> triples, const PromptTemplate& tmpl,
                      const MaskedLm& model);

}  // namespace mecod
