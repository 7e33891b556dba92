#include "mecod/prompt_encoder.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <algorithm>

#include "mecod/error.hpp"
#include "mecod/io.hpp"

namespace mecod {

using ag::Matrix;
using ag::Var;

namespace {

constexpr double kPromptInitStd = 0.02;
constexpr std::string_view kPromptMagic = "MECODPRM";
constexpr std::uint32_t kPromptVersion = 1;

Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Var run_direction(const ContinuousPrompt::LstmDirection& dir, const Var& inputs, int h, bool reverse) {
  const int steps = static_cast<int>(inputs.rows());
  Var projected = ag::add_row(ag::matmul(inputs, dir.input_weight), dir.bias);
  Var hidden = ag::constant(Matrix::Zero(1, h));
  Var cell = ag::constant(Matrix::Zero(1, h));
  std::vector<Var> outputs(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const int t = reverse ? steps - 1 - k : k;
    Var z = ag::add(ag::gather_rows(projected, std::span<const int>(&t, 1)), ag::matmul(hidden, dir.hidden_weight));
    Var i = ag::sigmoid(ag::slice_cols(z, 0, h));
    Var f = ag::sigmoid(ag::slice_cols(z, h, h));
    Var g = ag::tanh(ag::slice_cols(z, 2 * h, h));
    Var o = ag::sigmoid(ag::slice_cols(z, 3 * h, h));
    cell = ag::add(ag::mul(f, cell), ag::mul(i, g));
    hidden = ag::mul(o, ag::tanh(cell));
    outputs[static_cast<std::size_t>(t)] = hidden;
  }
  return ag::concat_rows(outputs);
}

}  // namespace

std::vector<Var> ContinuousPrompt::parameters() const {
  return {raw,
          forward_lstm.input_weight,
          forward_lstm.hidden_weight,
          forward_lstm.bias,
          backward_lstm.input_weight,
          backward_lstm.hidden_weight,
          backward_lstm.bias,
          mlp_in_weight,
          mlp_in_bias,
          mlp_out_weight,
          mlp_out_bias};
}

ContinuousPrompt ContinuousPrompt::clone() const {
  ContinuousPrompt c = *this;
  auto copy = [](Var& v) { v = ag::parameter(v.value()); };
  copy(c.raw);
  for (auto* dir : {&c.forward_lstm, &c.backward_lstm}) {
    copy(dir->input_weight);
    copy(dir->hidden_weight);
    copy(dir->bias);
  }
  copy(c.mlp_in_weight);
  copy(c.mlp_in_bias);
  copy(c.mlp_out_weight);
  copy(c.mlp_out_bias);
  return c;
}

bool ContinuousPrompt::all_finite() const {
  for (const auto& p : parameters()) {
    if (!p.value().allFinite()) return false;
  }
  return true;
}

ContinuousPrompt init_prompt(int num_tokens, const ModelHandle& model, std::uint64_t seed) {
  if (num_tokens < 1) throw Error(ErrorKind::invalid_argument, "init_prompt: need at least one tunable slot");
  ContinuousPrompt p;
  p.num_tokens = num_tokens;
  p.hidden_dim = model.hidden_dim;
  p.prompt_dim = model.hidden_dim;
  p.lstm_dim = std::max(1, model.hidden_dim / 2);
  const int h = p.lstm_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kPromptInitStd);
  Matrix raw(num_tokens, p.prompt_dim);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = normal(rng);
  p.raw = ag::parameter(std::move(raw));
  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (auto* dir : {&p.forward_lstm, &p.backward_lstm}) {
    dir->input_weight = ag::parameter(uniform_matrix(p.prompt_dim, 4 * h, lstm_bound, rng));
    dir->hidden_weight = ag::parameter(uniform_matrix(h, 4 * h, lstm_bound, rng));
    dir->bias = ag::parameter(uniform_matrix(1, 4 * h, lstm_bound, rng));
  }
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(2 * h));
  p.mlp_in_weight = ag::parameter(uniform_matrix(2 * h, p.hidden_dim, in_bound, rng));
  p.mlp_in_bias = ag::parameter(uniform_matrix(1, p.hidden_dim, in_bound, rng));
  p.mlp_out_weight = ag::parameter(Matrix::Zero(p.hidden_dim, p.hidden_dim));
  p.mlp_out_bias = ag::parameter(Matrix::Zero(1, p.hidden_dim));
  return p;
}

Var prompt_embeddings(const ContinuousPrompt& prompt) {
  const int h = prompt.lstm_dim;
  Var fwd = run_direction(prompt.forward_lstm, prompt.raw, h, false);
  Var bwd = run_direction(prompt.backward_lstm, prompt.raw, h, true);
  Var states = ag::concat_cols(fwd, bwd);
  Var mid = ag::gelu(ag::add_row(ag::matmul(states, prompt.mlp_in_weight), prompt.mlp_in_bias));
  Var delta = ag::add_row(ag::matmul(mid, prompt.mlp_out_weight), prompt.mlp_out_bias);
  return ag::add(prompt.raw, delta);
}

Var assemble_embeddings(const Var& prompt_vectors, const RenderedInput& rendered, const MaskedLm& model) {
  Var base = model.embed(rendered.ids);
  std::vector<int> positions;
  std::vector<int> rows;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (rendered.tunable_index[i] >= 0) {
      positions.push_back(static_cast<int>(i));
      rows.push_back(rendered.tunable_index[i]);
    }
  }
  if (positions.empty()) return base;
  const int max_row = *std::max_element(rows.begin(), rows.end());
  if (max_row >= prompt_vectors.rows() ||
      static_cast<Eigen::Index>(std::set<int>(rows.begin(), rows.end()).size()) != prompt_vectors.rows()) {
    throw Error(ErrorKind::invalid_argument, "prompt has " + std::to_string(prompt_vectors.rows()) +
                                                 " tunable vectors but the input uses " + std::to_string(max_row + 1));
  }
  return ag::substitute_rows(base, positions, ag::gather_rows(prompt_vectors, rows));
}

Var encode(const ContinuousPrompt& prompt, const RenderedInput& rendered, const MaskedLm& model) {
  const bool any_tunable =
      std::any_of(rendered.tunable_index.begin(), rendered.tunable_index.end(), [](int t) { return t >= 0; });
  if (!any_tunable) return model.embed(rendered.ids);
  if (prompt.hidden_dim != model.handle().hidden_dim) {
    throw Error(ErrorKind::invalid_argument, "prompt width does not match the model hidden size");
  }
  return assemble_embeddings(prompt_embeddings(prompt), rendered, model);
}

void ContinuousPrompt::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  io::write_magic(out, kPromptMagic);
  io::write_pod(out, kPromptVersion);
  io::write_pod(out, static_cast<std::int32_t>(num_tokens));
  io::write_pod(out, static_cast<std::int32_t>(prompt_dim));
  io::write_pod(out, static_cast<std::int32_t>(hidden_dim));
  io::write_pod(out, static_cast<std::int32_t>(lstm_dim));
  for (const auto& p : parameters()) {
    io::write_pod(out, static_cast<std::int64_t>(p.rows()));
    io::write_pod(out, static_cast<std::int64_t>(p.cols()));
    out.write(reinterpret_cast<const char*>(p.value().data()),
              static_cast<std::streamsize>(p.value().size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

ContinuousPrompt ContinuousPrompt::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  io::expect_magic(in, kPromptMagic);
  if (io::read_pod<std::uint32_t>(in) != kPromptVersion) throw Error(ErrorKind::parse, "unsupported prompt version");
  const int t = io::read_pod<std::int32_t>(in);
  const int pd = io::read_pod<std::int32_t>(in);
  const int hd = io::read_pod<std::int32_t>(in);
  const int ld = io::read_pod<std::int32_t>(in);
  ModelHandle h;
  h.hidden_dim = hd;
  ContinuousPrompt p = init_prompt(t, h, 0);
  if (p.prompt_dim != pd || p.lstm_dim != ld) throw Error(ErrorKind::parse, "prompt checkpoint dimensions mismatch");
  for (auto& v : p.parameters()) {
    const auto r = io::read_pod<std::int64_t>(in);
    const auto c = io::read_pod<std::int64_t>(in);
    if (r != v.rows() || c != v.cols()) throw Error(ErrorKind::parse, "prompt checkpoint block shape mismatch");
    in.read(reinterpret_cast<char*>(v.mutable_value().data()),
            static_cast<std::streamsize>(v.value().size() * static_cast<Eigen::Index>(sizeof(double))));
    if (!in) throw Error(ErrorKind::parse, "truncated prompt checkpoint");
  }
  return p;
}

}  // namespace mecod
