#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mecod/autograd.hpp"

namespace mecod {

using TokenId = int;

struct SpecialIds {
  TokenId mask_id = 1;
  TokenId pad_id = 0;
};

struct ModelHandle {
  int vocab_size = 0;
  int hidden_dim = 0;
  SpecialIds special_ids;
  bool frozen = true;
};

/// Whole-word vocabulary. Ids are line numbers of the vocabulary file.
class Vocabulary {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kUnk = "[UNK]";

  Vocabulary() = default;
  /// `tokens` must contain [PAD] and [MASK] exactly once; duplicates are rejected.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::optional<TokenId> find(std::string_view token) const;
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  SpecialIds special_ids() const { return {id(kMask), id(kPad)}; }
  bool is_special(TokenId id) const;

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Splits on whitespace and maps each word through the vocabulary.
class WholeWordTokenizer {
 public:
  explicit WholeWordTokenizer(const Vocabulary* vocab, std::optional<TokenId> fallback = std::nullopt)
      : vocab_(vocab), fallback_(fallback) {}
  std::vector<TokenId> tokenize(std::string_view text) const;

 private:
  const Vocabulary* vocab_;
  std::optional<TokenId> fallback_;
};

/// Uniform surface over a masked language model. Every consumer (templates,
/// prompt encoder, objectives, training, diagnostics) goes through this.
class MaskedLm {
 public:
  virtual ~MaskedLm() = default;

  virtual ModelHandle handle() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
  /// Pure table lookup: row i is the embedding of ids[i].
  virtual ag::Var embed(std::span<const TokenId> ids) const = 0;
  /// Runs the encoder over one or more packed sequences (`segments` index rows
  /// of `embeds`) and returns the final hidden states of the rows listed in
  /// `positions`, in that order.
  virtual ag::Var forward_from_embeddings(const ag::Var& embeds, std::span<const ag::Segment> segments,
                                          std::span<const int> positions) const = 0;
  /// Raw logits over the vocabulary, one row per hidden row.
  virtual ag::Var mlm_head(const ag::Var& hidden) const = 0;
  /// Input embedding table (vocab_size x hidden_dim); the E(.) of the objectives.
  virtual const ag::Var& embedding_table() const = 0;
  /// Hash over every parameter's bytes; unchanged while the model is frozen.
  virtual std::uint64_t checksum() const = 0;

  /// Convenience: a single sequence occupying every row of `embeds`.
  ag::Var forward_from_embeddings(const ag::Var& embeds, std::span<const int> positions) const;
};

struct TinyMlmConfig {
  int vocab_size = 0;
  int hidden_dim = 32;
  int num_layers = 2;
  int num_heads = 2;
  int ffn_dim = 128;
  int max_seq_len = 24;
  std::uint64_t seed = 1;
  // training schedule
  int epochs = 60;
  int batch_size = 32;
  double lr = 3e-3;
  double mask_prob = 0.15;
  double init_std = 0.02;

  void validate() const;
};

/// Small pre-LN transformer encoder with a tied MLM head (logits = h E^T + b).
class TinyMlm final : public MaskedLm {
 public:
  TinyMlm(TinyMlmConfig config, Vocabulary vocab);

  ModelHandle handle() const override;
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::vector<TokenId> tokenize(std::string_view text) const override;
  ag::Var embed(std::span<const TokenId> ids) const override;
  ag::Var forward_from_embeddings(const ag::Var& embeds, std::span<const ag::Segment> segments,
                                  std::span<const int> positions) const override;
  using MaskedLm::forward_from_embeddings;
  ag::Var mlm_head(const ag::Var& hidden) const override;
  const ag::Var& embedding_table() const override { return token_embedding_; }

  const TinyMlmConfig& config() const { return config_; }
  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }
  std::vector<std::pair<std::string, ag::Var>> named_parameters() const;
  std::vector<ag::Var> parameters() const;
  std::uint64_t checksum() const override;

  /// Per-epoch mean masked-token loss recorded by train_tiny_mlm.
  std::vector<double> training_losses;

  void save(const std::filesystem::path& path) const;
  static TinyMlm load(const std::filesystem::path& path);

 private:
  struct Layer {
    ag::Var ln1_gain, ln1_bias, qkv_weight, qkv_bias, out_weight, out_bias;
    ag::Var ln2_gain, ln2_bias, ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias;
  };

  TinyMlmConfig config_;
  Vocabulary vocab_;
  bool frozen_ = true;
  ag::Var token_embedding_;
  ag::Var position_embedding_;
  std::vector<Layer> layers_;
  ag::Var final_gain_, final_bias_;
  ag::Var head_bias_;
};

/// Trains a TinyMlm from scratch with standard BERT masking (15% of tokens,
/// 80/10/10 mask/random/keep). Deterministic for a fixed config.seed.
/// The returned model is frozen.
TinyMlm train_tiny_mlm(std::span<const std::string> corpus, TinyMlmConfig config, const Vocabulary& vocab);

/// Fraction of correctly predicted tokens when each sentence has one
/// uniformly chosen non-special token replaced by [MASK].
double masked_token_accuracy(const MaskedLm& model, std::span<const std::string> sentences, std::uint64_t seed);

/// Logits for a fully-assembled id sequence at the given positions (no prompt substitution).
ag::Matrix logits_at(const MaskedLm& model, std::span<const TokenId> ids, std::span<const int> positions);

}  // namespace mecod
