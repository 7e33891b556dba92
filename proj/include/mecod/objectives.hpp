#pragma once

// MeCoD training objectives. All entropies and cross-entropies use the natural
// logarithm: the reported maximum object-bias entropy for k = 10 candidates
// (~2.30) is ln 10, not log2 10.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "mecod/autograd.hpp"
#include "mecod/model.hpp"

namespace mecod {

struct MecodConfig {
  double lambda1 = 0.2;  // object equalization weight
  double lambda2 = 0.1;  // biased object obstruction weight
  double tau = 0.1;      // contrastive temperature
  int pool_size = 300;
  double gumbel_tau = 1.0;

  void validate(int vocab_size) const;
};

nlohmann::json to_json(const MecodConfig& c);
MecodConfig mecod_config_from_json(const nlohmann::json& j, MecodConfig defaults = {});

/// Linear 2-way classifier over object embeddings; column 0 is "select".
struct SelectorParams {
  ag::Var weight;  // hidden_dim x 2
  ag::Var bias;    // 1 x 2

  std::vector<ag::Var> parameters() const { return {weight, bias}; }
  SelectorParams clone() const;
  bool all_finite() const;

  void save(const std::filesystem::path& path) const;
  static SelectorParams load(const std::filesystem::path& path);
};

SelectorParams init_selector(const ModelHandle& model, std::uint64_t seed);

struct CandidatePool {
  std::vector<TokenId> object_ids;
  /// Pool logits in descending order, still attached to the masked-path graph.
  ag::Var sorted_logits;
  /// softmax of sorted_logits, i.e. the masked distribution renormalised over the pool.
  std::vector<double> sorted_probs;
  bool descending = true;
};

struct SelectorOutput {
  /// 1 x pool_size; forward values exactly 0 or 1, gradient via the relaxation.
  ag::Var v;
  /// Relaxed probability of "select" per entry.
  std::vector<double> soft;
};

/// -ln softmax(logits)[gold], averaged over rows.
ag::Var mlm_loss(const ag::Var& object_logits, std::span<const TokenId> gold);
double mlm_loss(std::span<const double> object_logits, TokenId gold);

/// Keeps the pool_size highest logits (ties by ascending id).
CandidatePool build_candidate_pool(const ag::Var& subject_masked_logits, const MecodConfig& config);
CandidatePool build_candidate_pool(std::span<const double> subject_masked_logits, const MecodConfig& config);

/// Straight-through hard gumbel-softmax over per-candidate 2-way decisions.
SelectorOutput object_selector(const CandidatePool& pool, const SelectorParams& params, const MaskedLm& model,
                               std::uint64_t noise_seed, double gumbel_tau = 1.0);

/// sum_i -p_d(i) ln p_d(i) v(i).
ag::Var max_entropy_loss(const CandidatePool& pool, const ag::Var& v);
double max_entropy_loss(std::span<const double> probs, std::span<const double> v);

/// InfoNCE with cosine similarity. `biased_embeddings` holds one row per
/// negative; optional `weights` (1 x rows) scale each negative's term, which
/// is how the selector's hard v enters. No negatives gives 0.
ag::Var contrastive_loss(const ag::Var& h_o, const ag::Var& gold_embedding, const ag::Var& biased_embeddings, double tau,
                         const ag::Var* weights = nullptr);
double contrastive_loss(std::span<const double> h_o, std::span<const double> gold_embedding,
                        const std::vector<std::vector<double>>& biased_embeddings, double tau);

/// l_mlm - lambda1 * l_me + lambda2 * l_cl.
double joint_loss(double l_mlm, double l_me, double l_cl, const MecodConfig& config);
/// Graph version; terms whose coefficient is exactly zero are left out of the graph.
ag::Var joint_loss(const ag::Var& l_mlm, const ag::Var& l_me, const ag::Var& l_cl, const MecodConfig& config);

}  // namespace mecod
