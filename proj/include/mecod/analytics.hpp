#pragma once

// Bias and accuracy metrics over retrieval results. Entropies use the natural
// logarithm, so the maximum for k candidates is ln k.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mecod/model.hpp"

namespace mecod {

struct Candidate {
  TokenId id = 0;
  double logit = 0.0;
  bool operator==(const Candidate&) const = default;
};

/// The `m` highest logits in descending order, ties by ascending id.
std::vector<Candidate> top_candidates(std::span<const double> logits, int m);

/// Default stored list length for dumps.
inline constexpr int kDumpTopM = 512;

struct RetrievalResult {
  std::string triple_id;
  TokenId gold_id = 0;
  std::vector<Candidate> original;  // top-m of the original prompt
  std::vector<Candidate> masked;    // top-m of the subject-masked prompt
  bool operator==(const RetrievalResult&) const = default;
};

/// Everything evaluation emits for one relation: the relation-level masked
/// query (used for entropy and slope) plus per-sample results.
struct LogitDump {
  std::string relation_id;
  std::vector<Candidate> relation_query;
  std::vector<RetrievalResult> results;
  bool operator==(const LogitDump&) const = default;
};

void write_logit_dump(const std::filesystem::path& path, const LogitDump& dump);
LogitDump read_logit_dump(const std::filesystem::path& path);

double object_bias_entropy(std::span<const double> masked_logits, int k = 10);
double object_bias_entropy(const std::vector<Candidate>& masked, int k = 10);

/// |w| of the least-squares line through (rank, logit) for ranks 1..k of the
/// top-k logits.
double regression_slope(std::span<const double> masked_logits, int k);
double regression_slope(const std::vector<Candidate>& masked, int k);

enum class Path { original, masked };

/// 1-based; m + 1 when the gold id is not in the stored list.
int gold_rank(const RetrievalResult& result, Path path);

enum class Subset { all, incorrect };

/// Pearson r; nullopt when either sequence has zero variance or n < 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
/// Correlation between original-path and masked-path gold ranks. `incorrect`
/// keeps samples whose original-path top-1 is wrong.
std::optional<double> pearson_rank_correlation(const std::vector<RetrievalResult>& results, Subset subset);

double p_at_1(const std::vector<RetrievalResult>& results);
double mrr(const std::vector<RetrievalResult>& results);

struct RelationMetrics {
  double entropy = 0.0;
  double slope = 0.0;
  std::optional<double> pearson_all;
  std::optional<double> pearson_incorrect;
  double p_at_1 = 0.0;
  double mrr = 0.0;
  int n = 0;
};

/// per_relation plus the unweighted mean over relations. In the aggregate, n
/// is the total sample count and a Pearson value averages the relations that
/// have one.
struct BiasReport {
  int k = 10;
  std::map<std::string, RelationMetrics> per_relation;
  RelationMetrics aggregate;
};

RelationMetrics relation_metrics(const LogitDump& dump, int k = 10);
BiasReport build_report(std::span<const LogitDump> dumps, int k = 10);

/// Integer percent of `entropy` relative to ln k, truncated toward zero.
int entropy_percent_vs_max(double entropy, int k = 10);

std::string report_csv(const BiasReport& report);
nlohmann::json to_json(const BiasReport& report);

/// Side-by-side comparison of several methods' reports (Markdown), with
/// entropy/slope deltas relative to the first method and percent columns.
std::string comparison_markdown(const std::vector<std::pair<std::string, BiasReport>>& methods);
std::string comparison_csv(const std::vector<std::pair<std::string, BiasReport>>& methods);

/// Rows "method,relation,rank,logit" for the top-k relation-query logits.
std::string plot_data_csv(const std::vector<std::pair<std::string, std::vector<LogitDump>>>& methods, int k = 10);

}  // namespace mecod
