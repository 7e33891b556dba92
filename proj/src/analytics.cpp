#include "mecod/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mecod/error.hpp"
#include "mecod/io.hpp"

namespace mecod {

namespace {

constexpr std::string_view kDumpMagic = "MECODLGD";
constexpr std::uint32_t kDumpVersion = 1;

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

void write_string(std::ostream& out, const std::string& s) {
  io::write_pod(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = io::read_pod<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error(ErrorKind::parse, "logit dump: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw Error(ErrorKind::parse, "logit dump: truncated string");
  return s;
}

void write_candidates(std::ostream& out, const std::vector<Candidate>& c) {
  io::write_pod(out, static_cast<std::uint32_t>(c.size()));
  for (const auto& x : c) {
    io::write_pod(out, static_cast<std::int32_t>(x.id));
    io::write_pod(out, x.logit);
  }
}

std::vector<Candidate> read_candidates(std::istream& in) {
  const auto n = io::read_pod<std::uint32_t>(in);
  if (n > (1u << 24)) throw Error(ErrorKind::parse, "logit dump: implausible list length");
  std::vector<Candidate> c(n);
  for (auto& x : c) {
    x.id = io::read_pod<std::int32_t>(in);
    x.logit = io::read_pod<double>(in);
  }
  return c;
}

std::vector<double> top_logits(const std::vector<Candidate>& c, int k, const char* what) {
  if (static_cast<int>(c.size()) < k) {
    throw Error(ErrorKind::invalid_argument, std::string(what) + ": need at least " + std::to_string(k) +
                                                 " candidates, got " + std::to_string(c.size()));
  }
  std::vector<double> v;
  // Lists from top_candidates are already sorted; sort anyway for foreign dumps.
  std::vector<Candidate> sorted = c;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    return a.logit > b.logit || (a.logit == b.logit && a.id < b.id);
  });
  for (int i = 0; i < k; ++i) v.push_back(sorted[static_cast<std::size_t>(i)].logit);
  return v;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<Candidate> top_candidates(std::span<const double> logits, int m) {
  m = std::clamp(m, 0, static_cast<int>(logits.size()));
  std::vector<int> idx(logits.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + m, idx.end(),
                    [&](int a, int b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) out.push_back({idx[static_cast<std::size_t>(i)], logits[idx[static_cast<std::size_t>(i)]]});
  return out;
}

void write_logit_dump(const std::filesystem::path& path, const LogitDump& dump) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  io::write_magic(out, kDumpMagic);
  io::write_pod(out, kDumpVersion);
  write_string(out, dump.relation_id);
  write_candidates(out, dump.relation_query);
  io::write_pod(out, static_cast<std::uint64_t>(dump.results.size()));
  for (const auto& r : dump.results) {
    write_string(out, r.triple_id);
    io::write_pod(out, static_cast<std::int32_t>(r.gold_id));
    write_candidates(out, r.original);
    write_candidates(out, r.masked);
  }
  if (!out) throw Error(ErrorKind::io, "failed writing " + path.string());
}

LogitDump read_logit_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  io::expect_magic(in, kDumpMagic);
  if (io::read_pod<std::uint32_t>(in) != kDumpVersion) throw Error(ErrorKind::parse, "unsupported logit dump version");
  LogitDump d;
  d.relation_id = read_string(in);
  d.relation_query = read_candidates(in);
  const auto n = io::read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    RetrievalResult r;
    r.triple_id = read_string(in);
    r.gold_id = io::read_pod<std::int32_t>(in);
    r.original = read_candidates(in);
    r.masked = read_candidates(in);
    d.results.push_back(std::move(r));
  }
  return d;
}

double object_bias_entropy(std::span<const double> masked_logits, int k) {
  if (k < 1) throw Error(ErrorKind::invalid_argument, "object_bias_entropy: k must be >= 1");
  if (static_cast<int>(masked_logits.size()) < k) {
    throw Error(ErrorKind::invalid_argument, "object_bias_entropy: fewer than k candidates");
  }
  return object_bias_entropy(top_candidates(masked_logits, k), k);
}

double object_bias_entropy(const std::vector<Candidate>& masked, int k) {
  if (k < 1) throw Error(ErrorKind::invalid_argument, "object_bias_entropy: k must be >= 1");
  const auto top = top_logits(masked, k, "object_bias_entropy");
  const double mx = top.front();
  double z = 0.0;
  for (double x : top) z += std::exp(x - mx);
  const double log_z = std::log(z);
  double h = 0.0;
  for (double x : top) {
    const double logp = x - mx - log_z;
    const double p = std::exp(logp);
    if (p > 0.0) h -= p * logp;
  }
  return h;
}

double regression_slope(std::span<const double> masked_logits, int k) {
  if (k < 2) throw Error(ErrorKind::invalid_argument, "regression_slope: k must be >= 2");
  if (static_cast<int>(masked_logits.size()) < k) {
    throw Error(ErrorKind::invalid_argument, "regression_slope: fewer than k candidates");
  }
  return regression_slope(top_candidates(masked_logits, k), k);
}

double regression_slope(const std::vector<Candidate>& masked, int k) {
  if (k < 2) throw Error(ErrorKind::invalid_argument, "regression_slope: k must be >= 2");
  const auto y = top_logits(masked, k, "regression_slope");
  const double x_mean = (k + 1) / 2.0;
  const double y_mean = mean_of(y);
  double sxy = 0.0, sxx = 0.0;
  for (int i = 0; i < k; ++i) {
    const double dx = (i + 1) - x_mean;
    sxy += dx * (y[static_cast<std::size_t>(i)] - y_mean);
    sxx += dx * dx;
  }
  return std::abs(sxy / sxx);
}

int gold_rank(const RetrievalResult& result, Path path) {
  const auto& list = path == Path::original ? result.original : result.masked;
  const auto it = std::find_if(list.begin(), list.end(), [&](const Candidate& c) { return c.id == result.gold_id; });
  if (it == list.end()) return static_cast<int>(list.size()) + 1;
  int rank = 1;
  for (const auto& c : list) {
    if (c.logit > it->logit || (c.logit == it->logit && c.id < it->id)) ++rank;
  }
  return rank;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::invalid_argument, "pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::optional<double> pearson_rank_correlation(const std::vector<RetrievalResult>& results, Subset subset) {
  std::vector<double> a, b;
  for (const auto& r : results) {
    const int ro = gold_rank(r, Path::original);
    if (subset == Subset::incorrect && ro == 1) continue;
    a.push_back(ro);
    b.push_back(gold_rank(r, Path::masked));
  }
  return pearson(a, b);
}

double p_at_1(const std::vector<RetrievalResult>& results) {
  if (results.empty()) throw Error(ErrorKind::invalid_argument, "p_at_1: no results");
  const auto hits = std::count_if(results.begin(), results.end(),
                                  [](const RetrievalResult& r) { return gold_rank(r, Path::original) == 1; });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr(const std::vector<RetrievalResult>& results) {
  if (results.empty()) throw Error(ErrorKind::invalid_argument, "mrr: no results");
  double s = 0.0;
  for (const auto& r : results) s += 1.0 / gold_rank(r, Path::original);
  return s / static_cast<double>(results.size());
}

RelationMetrics relation_metrics(const LogitDump& dump, int k) {
  RelationMetrics m;
  m.entropy = object_bias_entropy(dump.relation_query, k);
  m.slope = regression_slope(dump.relation_query, std::max(k, 2));
  m.n = static_cast<int>(dump.results.size());
  if (!dump.results.empty()) {
    m.pearson_all = pearson_rank_correlation(dump.results, Subset::all);
    m.pearson_incorrect = pearson_rank_correlation(dump.results, Subset::incorrect);
    m.p_at_1 = p_at_1(dump.results);
    m.mrr = mrr(dump.results);
  }
  return m;
}

BiasReport build_report(std::span<const LogitDump> dumps, int k) {
  if (dumps.empty()) throw Error(ErrorKind::invalid_argument, "build_report: no relations");
  BiasReport report;
  report.k = k;
  for (const auto& d : dumps) {
    if (!report.per_relation.emplace(d.relation_id, relation_metrics(d, k)).second) {
      throw Error(ErrorKind::invalid_argument, "build_report: duplicate relation " + d.relation_id);
    }
  }
  std::vector<double> entropy, slope, pa, pi, p1, rr;
  int n = 0;
  for (const auto& [rel, m] : report.per_relation) {
    entropy.push_back(m.entropy);
    slope.push_back(m.slope);
    if (m.pearson_all) pa.push_back(*m.pearson_all);
    if (m.pearson_incorrect) pi.push_back(*m.pearson_incorrect);
    p1.push_back(m.p_at_1);
    rr.push_back(m.mrr);
    n += m.n;
  }
  auto& a = report.aggregate;
  a.entropy = mean_of(entropy);
  a.slope = mean_of(slope);
  if (!pa.empty()) a.pearson_all = mean_of(pa);
  if (!pi.empty()) a.pearson_incorrect = mean_of(pi);
  a.p_at_1 = mean_of(p1);
  a.mrr = mean_of(rr);
  a.n = n;
  return report;
}

int entropy_percent_vs_max(double entropy, int k) {
  const double ref = std::log(static_cast<double>(k));
  return static_cast<int>(std::trunc(100.0 * (entropy - ref) / ref));
}

std::string report_csv(const BiasReport& report) {
  std::ostringstream out;
  out << "relation,n,p_at_1,mrr,entropy,entropy_pct_vs_max,slope,pearson_all,pearson_incorrect\n";
  auto row = [&](const std::string& name, const RelationMetrics& m) {
    out << name << ',' << m.n << ',' << fmt(m.p_at_1) << ',' << fmt(m.mrr) << ',' << fmt(m.entropy) << ','
        << entropy_percent_vs_max(m.entropy, report.k) << ',' << fmt(m.slope) << ',' << fmt_opt(m.pearson_all) << ','
        << fmt_opt(m.pearson_incorrect) << '\n';
  };
  for (const auto& [rel, m] : report.per_relation) row(rel, m);
  row("aggregate", report.aggregate);
  return out.str();
}

nlohmann::json to_json(const BiasReport& report) {
  auto one = [&](const RelationMetrics& m) {
    nlohmann::json j{{"n", m.n},
                     {"p_at_1", m.p_at_1},
                     {"mrr", m.mrr},
                     {"entropy", m.entropy},
                     {"entropy_pct_vs_max", entropy_percent_vs_max(m.entropy, report.k)},
                     {"slope", m.slope}};
    j["pearson_all"] = m.pearson_all ? nlohmann::json(*m.pearson_all) : nlohmann::json(nullptr);
    j["pearson_incorrect"] = m.pearson_incorrect ? nlohmann::json(*m.pearson_incorrect) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json j;
  j["k"] = report.k;
  for (const auto& [rel, m] : report.per_relation) j["per_relation"][rel] = one(m);
  j["aggregate"] = one(report.aggregate);
  return j;
}

std::string comparison_markdown(const std::vector<std::pair<std::string, BiasReport>>& methods) {
  std::ostringstream out;
  if (methods.empty()) return {};
  const auto& base = methods.front().second.aggregate;
  out << "| method | P@1 | MRR | entropy | vs ln k | d entropy | slope | d slope | pearson all | pearson incorrect |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& [name, rep] : methods) {
    const auto& a = rep.aggregate;
    const double de = base.entropy != 0.0 ? 100.0 * (a.entropy - base.entropy) / base.entropy : 0.0;
    const double ds = base.slope != 0.0 ? 100.0 * (a.slope - base.slope) / base.slope : 0.0;
    out << "| " << name << " | " << fmt(100.0 * a.p_at_1, 2) << " | " << fmt(100.0 * a.mrr, 2) << " | "
        << fmt(a.entropy, 3) << " | " << entropy_percent_vs_max(a.entropy, rep.k) << "% | " << (de >= 0 ? "+" : "")
        << fmt(de, 1) << "% | " << fmt(a.slope, 3) << " | " << (ds >= 0 ? "+" : "") << fmt(ds, 1) << "% | "
        << fmt_opt(a.pearson_all) << " | " << fmt_opt(a.pearson_incorrect) << " |\n";
  }
  return out.str();
}

std::string comparison_csv(const std::vector<std::pair<std::string, BiasReport>>& methods) {
  std::ostringstream out;
  out << "method,p_at_1,mrr,entropy,entropy_pct_vs_max,entropy_delta_pct,slope,slope_delta_pct\n";
  if (methods.empty()) return out.str();
  const auto& base = methods.front().second.aggregate;
  for (const auto& [name, rep] : methods) {
    const auto& a = rep.aggregate;
    const double de = base.entropy != 0.0 ? 100.0 * (a.entropy - base.entropy) / base.entropy : 0.0;
    const double ds = base.slope != 0.0 ? 100.0 * (a.slope - base.slope) / base.slope : 0.0;
    out << name << ',' << fmt(a.p_at_1) << ',' << fmt(a.mrr) << ',' << fmt(a.entropy) << ','
        << entropy_percent_vs_max(a.entropy, rep.k) << ',' << fmt(de, 2) << ',' << fmt(a.slope) << ',' << fmt(ds, 2)
        << '\n';
  }
  return out.str();
}

std::string plot_data_csv(const std::vector<std::pair<std::string, std::vector<LogitDump>>>& methods, int k) {
  std::ostringstream out;
  out << "method,relation,rank,logit\n";
  for (const auto& [name, dumps] : methods) {
    for (const auto& d : dumps) {
      const auto top = top_logits(d.relation_query, k, "plot_data_csv");
      for (int i = 0; i < k; ++i) {
        out << name << ',' << d.relation_id << ',' << (i + 1) << ',' << fmt(top[static_cast<std::size_t>(i)], 9)
            << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace mecod
