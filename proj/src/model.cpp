#include "mecod/model.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "mecod/error.hpp"
#include "mecod/io.hpp"
#include "mecod/optim.hpp"

namespace mecod {

using ag::Matrix;
using ag::Var;
using json = nlohmann::json;

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw Error(ErrorKind::invalid_argument, "empty vocabulary entry");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorKind::invalid_argument, "duplicate vocabulary entry: " + tokens_[i]);
    }
  }
  if (!find(kPad) || !find(kMask)) {
    throw Error(ErrorKind::invalid_argument, "vocabulary must contain [PAD] and [MASK]");
  }
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw Error(ErrorKind::unknown_symbol, "unknown token: " + std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw Error(ErrorKind::out_of_range, "token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(TokenId id) const {
  const auto& t = token(id);
  return t.size() > 2 && t.front() == '[' && t.back() == ']';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& t : tokens_) text += t + "\n";
  io::write_text(path, text);
}

std::vector<TokenId> WholeWordTokenizer::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  std::istringstream ss{std::string(text)};
  std::string word;
  while (ss >> word) {
    if (auto id = vocab_->find(word)) {
      ids.push_back(*id);
    } else if (fallback_) {
      ids.push_back(*fallback_);
    } else {
      throw Error(ErrorKind::unknown_symbol, "no vocabulary entry for '" + word + "'");
    }
  }
  if (ids.empty()) throw Error(ErrorKind::invalid_argument, "cannot tokenize empty text");
  return ids;
}

Var MaskedLm::forward_from_embeddings(const Var& embeds, std::span<const int> positions) const {
  const ag::Segment seg{0, static_cast<int>(embeds.rows())};
  return forward_from_embeddings(embeds, std::span<const ag::Segment>(&seg, 1), positions);
}

// ------------------------------------------------------------------ tiny MLM

void TinyMlmConfig::validate() const {
  if (vocab_size <= 0 || hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 || ffn_dim <= 0 ||
      max_seq_len <= 0) {
    throw Error(ErrorKind::invalid_argument, "TinyMlmConfig: sizes must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw Error(ErrorKind::invalid_argument, "TinyMlmConfig: hidden_dim must be divisible by num_heads");
  }
  if (!(mask_prob > 0.0 && mask_prob < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "TinyMlmConfig: mask_prob must lie in (0, 1)");
  }
}

namespace {

json config_to_json(const TinyMlmConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"hidden_dim", c.hidden_dim}, {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},   {"ffn_dim", c.ffn_dim},       {"max_seq_len", c.max_seq_len},
              {"seed", c.seed},             {"epochs", c.epochs},         {"batch_size", c.batch_size},
              {"lr", c.lr},                 {"mask_prob", c.mask_prob},   {"init_std", c.init_std}};
}

TinyMlmConfig config_from_json(const json& j) {
  TinyMlmConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.num_layers = j.at("num_layers").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.mask_prob = j.at("mask_prob").get<double>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Var param(Matrix m) { return ag::parameter(std::move(m)); }

}  // namespace

TinyMlm::TinyMlm(TinyMlmConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw Error(ErrorKind::invalid_argument, "TinyMlmConfig.vocab_size does not match the vocabulary");
  }
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const int d = config_.hidden_dim;
  const double s = config_.init_std;
  token_embedding_ = param(normal_matrix(config_.vocab_size, d, s, rng));
  position_embedding_ = param(normal_matrix(config_.max_seq_len, d, s, rng));
  for (int l = 0; l < config_.num_layers; ++l) {
    Layer layer;
    layer.ln1_gain = param(Matrix::Ones(1, d));
    layer.ln1_bias = param(Matrix::Zero(1, d));
    layer.qkv_weight = param(normal_matrix(d, 3 * d, s, rng));
    layer.qkv_bias = param(Matrix::Zero(1, 3 * d));
    layer.out_weight = param(normal_matrix(d, d, s, rng));
    layer.out_bias = param(Matrix::Zero(1, d));
    layer.ln2_gain = param(Matrix::Ones(1, d));
    layer.ln2_bias = param(Matrix::Zero(1, d));
    layer.ffn_in_weight = param(normal_matrix(d, config_.ffn_dim, s, rng));
    layer.ffn_in_bias = param(Matrix::Zero(1, config_.ffn_dim));
    layer.ffn_out_weight = param(normal_matrix(config_.ffn_dim, d, s, rng));
    layer.ffn_out_bias = param(Matrix::Zero(1, d));
    layers_.push_back(std::move(layer));
  }
  final_gain_ = param(Matrix::Ones(1, d));
  final_bias_ = param(Matrix::Zero(1, d));
  head_bias_ = param(Matrix::Zero(1, config_.vocab_size));
  set_frozen(true);
}

ModelHandle TinyMlm::handle() const {
  return ModelHandle{config_.vocab_size, config_.hidden_dim, vocab_.special_ids(), frozen_};
}

std::vector<TokenId> TinyMlm::tokenize(std::string_view text) const { return WholeWordTokenizer(&vocab_).tokenize(text); }

Var TinyMlm::embed(std::span<const TokenId> ids) const {
  if (ids.empty()) return ag::constant(Matrix(0, config_.hidden_dim));
  return ag::gather_rows(token_embedding_, ids);
}

Var TinyMlm::forward_from_embeddings(const Var& embeds, std::span<const ag::Segment> segments,
                                     std::span<const int> positions) const {
  if (embeds.cols() != config_.hidden_dim) {
    throw Error(ErrorKind::invalid_argument, "forward_from_embeddings: embedding width != hidden_dim");
  }
  std::vector<int> pos_ids(static_cast<std::size_t>(embeds.rows()), -1);
  for (const auto& seg : segments) {
    if (seg.length > config_.max_seq_len) {
      throw Error(ErrorKind::out_of_range, "sequence of length " + std::to_string(seg.length) +
                                               " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    if (seg.start < 0 || seg.length <= 0 || seg.start + seg.length > embeds.rows()) {
      throw Error(ErrorKind::out_of_range, "forward_from_embeddings: segment out of range");
    }
    for (int i = 0; i < seg.length; ++i) pos_ids[static_cast<std::size_t>(seg.start + i)] = i;
  }
  if (std::find(pos_ids.begin(), pos_ids.end(), -1) != pos_ids.end()) {
    throw Error(ErrorKind::invalid_argument, "forward_from_embeddings: segments must cover every row");
  }
  for (int p : positions) {
    if (p < 0 || p >= embeds.rows()) {
      throw Error(ErrorKind::out_of_range, "forward_from_embeddings: position " + std::to_string(p) + " out of range");
    }
  }

  Var x = ag::add(embeds, ag::gather_rows(position_embedding_, pos_ids));
  for (const Layer& L : layers_) {
    Var a = ag::layer_norm(x, L.ln1_gain, L.ln1_bias);
    Var qkv = ag::add_row(ag::matmul(a, L.qkv_weight), L.qkv_bias);
    Var att = ag::self_attention(qkv, segments, config_.num_heads);
    x = ag::add(x, ag::add_row(ag::matmul(att, L.out_weight), L.out_bias));
    Var b = ag::layer_norm(x, L.ln2_gain, L.ln2_bias);
    Var f = ag::gelu(ag::add_row(ag::matmul(b, L.ffn_in_weight), L.ffn_in_bias));
    x = ag::add(x, ag::add_row(ag::matmul(f, L.ffn_out_weight), L.ffn_out_bias));
  }
  // layer norm is row-local, so selecting first is equivalent and cheaper
  return ag::layer_norm(ag::gather_rows(x, positions), final_gain_, final_bias_);
}

Var TinyMlm::mlm_head(const Var& hidden) const {
  if (hidden.cols() != config_.hidden_dim) {
    throw Error(ErrorKind::invalid_argument, "mlm_head: hidden vector has " + std::to_string(hidden.cols()) +
                                                 " components, expected " + std::to_string(config_.hidden_dim));
  }
  return ag::add_row(ag::matmul_nt(hidden, token_embedding_), head_bias_);
}

std::vector<std::pair<std::string, Var>> TinyMlm::named_parameters() const {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("token_embedding", token_embedding_);
  out.emplace_back("position_embedding", position_embedding_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "ln1_gain", L.ln1_gain);
    out.emplace_back(p + "ln1_bias", L.ln1_bias);
    out.emplace_back(p + "qkv_weight", L.qkv_weight);
    out.emplace_back(p + "qkv_bias", L.qkv_bias);
    out.emplace_back(p + "out_weight", L.out_weight);
    out.emplace_back(p + "out_bias", L.out_bias);
    out.emplace_back(p + "ln2_gain", L.ln2_gain);
    out.emplace_back(p + "ln2_bias", L.ln2_bias);
    out.emplace_back(p + "ffn_in_weight", L.ffn_in_weight);
    out.emplace_back(p + "ffn_in_bias", L.ffn_in_bias);
    out.emplace_back(p + "ffn_out_weight", L.ffn_out_weight);
    out.emplace_back(p + "ffn_out_bias", L.ffn_out_bias);
  }
  out.emplace_back("final_gain", final_gain_);
  out.emplace_back("final_bias", final_bias_);
  out.emplace_back("head_bias", head_bias_);
  return out;
}

std::vector<Var> TinyMlm::parameters() const {
  std::vector<Var> out;
  for (auto& [name, v] : named_parameters()) out.push_back(v);
  return out;
}

void TinyMlm::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : parameters()) {
    p.set_requires_grad(!frozen);
    p.zero_grad();
  }
}

std::uint64_t TinyMlm::checksum() const {
  io::Fnv1a h;
  for (const auto& [name, v] : named_parameters()) {
    h.update(name);
    h.update(v.value().data(), static_cast<std::size_t>(v.value().size()) * sizeof(double));
  }
  return h.digest();
}

namespace {
constexpr std::string_view kMlmMagic = "MECODMLM";
constexpr std::uint32_t kMlmVersion = 1;
}  // namespace

void TinyMlm::save(const std::filesystem::path& path) const {
  json header;
  header["format"] = "tiny-mlm";
  header["config"] = config_to_json(config_);
  header["vocabulary"] = vocab_.tokens();
  json shapes = json::array();
  for (const auto& [name, v] : named_parameters()) shapes.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
  header["parameters"] = shapes;
  header["training_losses"] = training_losses;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  io::write_magic(out, kMlmMagic);
  io::write_pod(out, kMlmVersion);
  io::write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, v] : named_parameters()) {
    out.write(reinterpret_cast<const char*>(v.value().data()),
              static_cast<std::streamsize>(v.value().size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

TinyMlm TinyMlm::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  io::expect_magic(in, kMlmMagic);
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kMlmVersion) throw Error(ErrorKind::parse, "unsupported model checkpoint version");
  const auto len = io::read_pod<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorKind::parse, "truncated checkpoint header");
  const json header = json::parse(text);
  TinyMlm model(config_from_json(header.at("config")),
                Vocabulary(header.at("vocabulary").get<std::vector<std::string>>()));
  const auto params = model.named_parameters();
  const auto& shapes = header.at("parameters");
  if (shapes.size() != params.size()) throw Error(ErrorKind::parse, "checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = params[i].second;
    if (shapes[i].at("name").get<std::string>() != params[i].first || shapes[i].at("rows").get<Eigen::Index>() != v.rows() ||
        shapes[i].at("cols").get<Eigen::Index>() != v.cols()) {
      throw Error(ErrorKind::parse, "checkpoint parameter layout mismatch at " + params[i].first);
    }
    in.read(reinterpret_cast<char*>(v.mutable_value().data()),
            static_cast<std::streamsize>(v.value().size() * static_cast<Eigen::Index>(sizeof(double))));
    if (!in) throw Error(ErrorKind::parse, "truncated checkpoint payload");
  }
  model.training_losses = header.value("training_losses", std::vector<double>{});
  return model;
}

// ------------------------------------------------------------------ training

TinyMlm train_tiny_mlm(std::span<const std::string> corpus, TinyMlmConfig config, const Vocabulary& vocab) {
  if (corpus.empty()) throw Error(ErrorKind::invalid_argument, "train_tiny_mlm: empty corpus");
  config.vocab_size = vocab.size();
  TinyMlm model(config, vocab);
  const auto special = vocab.special_ids();

  std::vector<std::vector<TokenId>> sentences;
  sentences.reserve(corpus.size());
  for (const auto& s : corpus) {
    auto ids = model.tokenize(s);
    if (static_cast<int>(ids.size()) > config.max_seq_len) {
      throw Error(ErrorKind::out_of_range, "corpus sentence exceeds max_seq_len: " + s);
    }
    sentences.push_back(std::move(ids));
  }
  std::vector<TokenId> ordinary;
  for (TokenId id = 0; id < vocab.size(); ++id) {
    if (!vocab.is_special(id)) ordinary.push_back(id);
  }

  model.set_frozen(false);
  Adam opt(model.parameters(), AdamConfig{config.lr});
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_word(0, ordinary.size() - 1);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config.batch_size));
      std::vector<TokenId> ids;
      std::vector<ag::Segment> segs;
      std::vector<int> positions;
      std::vector<int> targets;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const auto& sent = sentences[order[bi]];
        const int start = static_cast<int>(ids.size());
        segs.push_back({start, static_cast<int>(sent.size())});
        std::vector<int> chosen;
        for (std::size_t i = 0; i < sent.size(); ++i) {
          if (unif(rng) < config.mask_prob) chosen.push_back(static_cast<int>(i));
        }
        if (chosen.empty()) {
          std::uniform_int_distribution<std::size_t> any(0, sent.size() - 1);
          chosen.push_back(static_cast<int>(any(rng)));
        }
        std::vector<TokenId> input = sent;
        for (int c : chosen) {
          const double r = unif(rng);
          if (r < 0.8) {
            input[static_cast<std::size_t>(c)] = special.mask_id;
          } else if (r < 0.9) {
            input[static_cast<std::size_t>(c)] = ordinary[pick_word(rng)];
          }
          positions.push_back(start + c);
          targets.push_back(sent[static_cast<std::size_t>(c)]);
        }
        ids.insert(ids.end(), input.begin(), input.end());
      }
      Var hidden = model.forward_from_embeddings(model.embed(ids), segs, positions);
      Var loss = ag::cross_entropy(model.mlm_head(hidden), targets);
      opt.zero_grad();
      ag::backward(loss);
      opt.step();
      loss_sum += loss.item();
      ++batches;
    }
    model.training_losses.push_back(loss_sum / batches);
  }
  model.set_frozen(true);
  return model;
}

Matrix logits_at(const MaskedLm& model, std::span<const TokenId> ids, std::span<const int> positions) {
  Var hidden = model.forward_from_embeddings(model.embed(ids), positions);
  return model.mlm_head(hidden).value();
}

double masked_token_accuracy(const MaskedLm& model, std::span<const std::string> sentences, std::uint64_t seed) {
  if (sentences.empty()) return 0.0;
  std::mt19937_64 rng(seed);
  const TokenId mask = model.handle().special_ids.mask_id;
  int correct = 0;
  for (const auto& s : sentences) {
    auto ids = model.tokenize(s);
    std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
    const std::size_t at = pick(rng);
    const TokenId gold = ids[at];
    ids[at] = mask;
    const int pos = static_cast<int>(at);
    Matrix logits = logits_at(model, ids, std::span<const int>(&pos, 1));
    Eigen::Index best = 0;
    logits.row(0).maxCoeff(&best);
    if (best == gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(sentences.size());
}

}  // namespace mecod
