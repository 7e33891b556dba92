#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mecod/autograd.hpp"
#include "mecod/model.hpp"
#include "mecod/templates.hpp"

namespace mecod {

/// Trainable continuous prompt with a P-tuning style reparameterization:
/// raw vectors -> bidirectional LSTM -> two-layer perceptron, added back onto
/// the raw vectors. The output layer starts at zero, so a fresh prompt emits
/// exactly its raw vectors.
struct ContinuousPrompt {
  struct LstmDirection {
    ag::Var input_weight;   // prompt_dim x 4h
    ag::Var hidden_weight;  // h x 4h
    ag::Var bias;           // 1 x 4h
  };

  int num_tokens = 0;
  int prompt_dim = 0;
  int hidden_dim = 0;
  int lstm_dim = 0;
  ag::Var raw;  // num_tokens x prompt_dim
  LstmDirection forward_lstm;
  LstmDirection backward_lstm;
  ag::Var mlp_in_weight, mlp_in_bias, mlp_out_weight, mlp_out_bias;

  std::vector<ag::Var> parameters() const;
  /// Deep copy (the default copy shares parameter storage).
  ContinuousPrompt clone() const;
  bool all_finite() const;

  void save(const std::filesystem::path& path) const;
  static ContinuousPrompt load(const std::filesystem::path& path);
};

/// Raw vectors ~ N(0, 0.02); prompt_dim = hidden_dim. Seed-deterministic.
ContinuousPrompt init_prompt(int num_tokens, const ModelHandle& model, std::uint64_t seed);

/// Reparameterized prompt embeddings, num_tokens x hidden_dim.
ag::Var prompt_embeddings(const ContinuousPrompt& prompt);

/// Input embedding sequence for `rendered`: embed(ids) with every tunable
/// position replaced by the matching row of `prompt_vectors`.
ag::Var assemble_embeddings(const ag::Var& prompt_vectors, const RenderedInput& rendered, const MaskedLm& model);

/// prompt_embeddings + assemble_embeddings in one call.
ag::Var encode(const ContinuousPrompt& prompt, const RenderedInput& rendered, const MaskedLm& model);

}  // namespace mecod
