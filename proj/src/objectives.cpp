#include "mecod/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "mecod/error.hpp"
#include "mecod/io.hpp"

namespace mecod {

using ag::Matrix;
using ag::Var;

namespace {

constexpr std::string_view kSelectorMagic = "MECODSEL";
constexpr std::uint32_t kSelectorVersion = 1;

std::vector<int> top_indices(std::span<const double> logits, int k) {
  std::vector<int> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), before);
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<double> softmax(std::span<const double> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += out[i] = std::exp(x[i] - mx);
  for (double& v : out) v /= z;
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::invalid_argument, "cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::numeric, "cosine similarity undefined for a zero-norm vector");
  return dot / std::sqrt(na * nb);
}

std::span<const double> row_span(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace

void MecodConfig::validate(int vocab_size) const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw Error(ErrorKind::invalid_argument, "lambda1/lambda2 must be >= 0");
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_argument, "tau must be > 0");
  if (!(gumbel_tau > 0.0)) throw Error(ErrorKind::invalid_argument, "gumbel_tau must be > 0");
  if (pool_size < 1) throw Error(ErrorKind::invalid_argument, "pool_size must be >= 1");
  if (vocab_size > 0 && pool_size > vocab_size) {
    throw Error(ErrorKind::invalid_argument, "pool_size " + std::to_string(pool_size) + " exceeds vocabulary size " +
                                                 std::to_string(vocab_size));
  }
}

nlohmann::json to_json(const MecodConfig& c) {
  return {{"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"tau", c.tau},
          {"pool_size", c.pool_size},
          {"gumbel_tau", c.gumbel_tau}};
}

MecodConfig mecod_config_from_json(const nlohmann::json& j, MecodConfig c) {
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.tau = j.value("tau", c.tau);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.gumbel_tau = j.value("gumbel_tau", c.gumbel_tau);
  return c;
}

SelectorParams SelectorParams::clone() const { return {ag::parameter(weight.value()), ag::parameter(bias.value())}; }

bool SelectorParams::all_finite() const { return weight.value().allFinite() && bias.value().allFinite(); }

void SelectorParams::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  io::write_magic(out, kSelectorMagic);
  io::write_pod(out, kSelectorVersion);
  io::write_pod(out, static_cast<std::int32_t>(weight.rows()));
  for (const auto& p : parameters()) {
    out.write(reinterpret_cast<const char*>(p.value().data()),
              static_cast<std::streamsize>(p.value().size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

SelectorParams SelectorParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  io::expect_magic(in, kSelectorMagic);
  if (io::read_pod<std::uint32_t>(in) != kSelectorVersion) throw Error(ErrorKind::parse, "unsupported selector version");
  const int d = io::read_pod<std::int32_t>(in);
  if (d < 1) throw Error(ErrorKind::parse, "bad selector width");
  SelectorParams s{ag::parameter(Matrix::Zero(d, 2)), ag::parameter(Matrix::Zero(1, 2))};
  for (auto& p : s.parameters()) {
    in.read(reinterpret_cast<char*>(p.mutable_value().data()),
            static_cast<std::streamsize>(p.value().size() * static_cast<Eigen::Index>(sizeof(double))));
    if (!in) throw Error(ErrorKind::parse, "truncated selector checkpoint");
  }
  return s;
}

SelectorParams init_selector(const ModelHandle& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(model.hidden_dim));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(model.hidden_dim, 2);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return {ag::parameter(std::move(w)), ag::parameter(Matrix::Zero(1, 2))};
}

Var mlm_loss(const Var& object_logits, std::span<const TokenId> gold) {
  for (TokenId g : gold) {
    if (g < 0 || g >= object_logits.cols()) throw Error(ErrorKind::out_of_range, "gold id outside the vocabulary");
  }
  return ag::cross_entropy(object_logits, gold);
}

double mlm_loss(std::span<const double> object_logits, TokenId gold) {
  if (gold < 0 || static_cast<std::size_t>(gold) >= object_logits.size()) {
    throw Error(ErrorKind::out_of_range, "gold id outside the vocabulary");
  }
  const double mx = *std::max_element(object_logits.begin(), object_logits.end());
  double z = 0.0;
  for (double x : object_logits) z += std::exp(x - mx);
  return -(object_logits[static_cast<std::size_t>(gold)] - mx - std::log(z));
}

CandidatePool build_candidate_pool(std::span<const double> logits, const MecodConfig& config) {
  if (config.pool_size > static_cast<int>(logits.size())) {
    throw Error(ErrorKind::invalid_argument, "pool_size exceeds the number of logits");
  }
  CandidatePool pool;
  pool.object_ids = top_indices(logits, config.pool_size);
  Matrix sorted(1, config.pool_size);
  for (int i = 0; i < config.pool_size; ++i) sorted(0, i) = logits[static_cast<std::size_t>(pool.object_ids[i])];
  pool.sorted_probs = softmax(row_span(sorted));
  pool.sorted_logits = ag::constant(std::move(sorted));
  return pool;
}

CandidatePool build_candidate_pool(const Var& logits, const MecodConfig& config) {
  if (logits.rows() != 1) throw Error(ErrorKind::invalid_argument, "build_candidate_pool: expects a single row");
  CandidatePool pool = build_candidate_pool(row_span(logits.value()), config);
  pool.sorted_logits = ag::gather_cols(logits, pool.object_ids);
  return pool;
}

SelectorOutput object_selector(const CandidatePool& pool, const SelectorParams& params, const MaskedLm& model,
                               std::uint64_t noise_seed, double gumbel_tau) {
  if (!(gumbel_tau > 0.0)) throw Error(ErrorKind::invalid_argument, "gumbel_tau must be > 0");
  const Eigen::Index k = static_cast<Eigen::Index>(pool.object_ids.size());
  Var emb = ag::gather_rows(model.embedding_table(), pool.object_ids);
  Var scores = ag::add_row(ag::matmul(emb, params.weight), params.bias);  // k x 2

  // A 2-way softmax over (select, drop) equals a sigmoid of the score difference.
  Matrix diff_map(2, 1);
  diff_map << 1.0, -1.0;
  std::mt19937_64 rng(noise_seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto gumbel = [&] {
    const double u = std::clamp(unif(rng), 1e-300, 1.0 - 1e-16);
    return -std::log(-std::log(u));
  };
  Matrix noise(k, 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double g0 = gumbel();
    const double g1 = gumbel();
    noise(i, 0) = g0 - g1;
  }
  Var perturbed = ag::add(ag::matmul(scores, ag::constant(diff_map)), ag::constant(noise));
  Var soft = ag::transpose(ag::sigmoid(ag::scale(perturbed, 1.0 / gumbel_tau)));

  Matrix hard(1, k);
  for (Eigen::Index i = 0; i < k; ++i) hard(0, i) = perturbed.value()(i, 0) >= 0.0 ? 1.0 : 0.0;
  SelectorOutput out;
  out.soft.assign(soft.value().data(), soft.value().data() + k);
  out.v = ag::straight_through(std::move(hard), soft);
  return out;
}

Var max_entropy_loss(const CandidatePool& pool, const Var& v) {
  if (v.cols() != pool.sorted_logits.cols()) throw Error(ErrorKind::invalid_argument, "selector/pool length mismatch");
  return ag::weighted_entropy(pool.sorted_logits, v);
}

double max_entropy_loss(std::span<const double> probs, std::span<const double> v) {
  if (probs.size() != v.size()) throw Error(ErrorKind::invalid_argument, "selector/pool length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) total -= probs[i] * std::log(probs[i]) * v[i];
  }
  return total;
}

Var contrastive_loss(const Var& h_o, const Var& gold_embedding, const Var& biased_embeddings, double tau,
                     const Var* weights) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_argument, "tau must be > 0");
  if (biased_embeddings.rows() == 0) return ag::scalar(0.0);
  if (weights && (weights->rows() != 1 || weights->cols() != biased_embeddings.rows())) {
    throw Error(ErrorKind::invalid_argument, "contrastive_loss: one weight per negative expected");
  }
  const Var rows[] = {gold_embedding, biased_embeddings};
  // cos/tau <= 1/tau, so shifting by 1/tau keeps every exponent <= 0.
  const double shift = 1.0 / tau;
  Var scaled = ag::add_scalar(ag::scale(ag::cosine_rows(h_o, ag::concat_rows(rows)), 1.0 / tau), -shift);
  Var terms = ag::exp(scaled);
  if (weights) {
    Var w = ag::concat_cols(ag::constant(Matrix::Ones(1, 1)), *weights);
    terms = ag::mul(terms, w);
  }
  return ag::sub(ag::log(ag::sum(terms)), ag::slice_cols(scaled, 0, 1));
}

double contrastive_loss(std::span<const double> h_o, std::span<const double> gold_embedding,
                        const std::vector<std::vector<double>>& biased_embeddings, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::invalid_argument, "tau must be > 0");
  if (biased_embeddings.empty()) return 0.0;
  const double sg = cosine(h_o, gold_embedding) / tau;
  double denom = std::exp(sg - 1.0 / tau);
  for (const auto& e : biased_embeddings) denom += std::exp(cosine(h_o, e) / tau - 1.0 / tau);
  return std::log(denom) - (sg - 1.0 / tau);
}

double joint_loss(double l_mlm, double l_me, double l_cl, const MecodConfig& config) {
  return l_mlm - config.lambda1 * l_me + config.lambda2 * l_cl;
}

Var joint_loss(const Var& l_mlm, const Var& l_me, const Var& l_cl, const MecodConfig& config) {
  Var total = l_mlm;
  if (config.lambda1 != 0.0) total = ag::sub(total, ag::scale(l_me, config.lambda1));
  if (config.lambda2 != 0.0) total = ag::add(total, ag::scale(l_cl, config.lambda2));
  return total;
}

}  // namespace mecod
