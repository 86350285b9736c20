#pragma once

// Longitudinal data with a right-censored subject-level covariate.
//
// Each subject i contributes outcomes Y_i observed at times s_i, fixed-effect
// covariates Z^a_i, random-effect covariates Z^b_i, the observed event time
// W_i = min(X_i, C_i), the indicator Delta_i = I(X_i <= C_i), and
// time-invariant imputation covariates V_i.
//
// Parameter order is (beta, alpha, sigma2) everywhere in this library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ace/error.hpp"

namespace ace {

struct SubjectRecord {
  std::string id;
  Eigen::VectorXd y;   // m_i outcomes
  Eigen::VectorXd s;   // m_i observation times
  Eigen::MatrixXd za;  // m_i x p_a
  Eigen::MatrixXd zb;  // m_i x p_b
  double w = 0.0;      // min(X, C)
  int delta = 0;       // 1 = X observed
  Eigen::VectorXd v;   // p_v

  Eigen::Index visits() const noexcept { return y.size(); }
  bool uncensored() const noexcept { return delta == 1; }
};

struct LongitudinalDataset {
  std::vector<SubjectRecord> subjects;
  Eigen::Index p_a = 0;
  Eigen::Index p_b = 0;
  Eigen::Index p_v = 0;
  std::vector<std::string> za_names;
  std::vector<std::string> zb_names;
  std::vector<std::string> v_names;

  std::size_t size() const noexcept { return subjects.size(); }

  std::size_t events() const noexcept {
    return static_cast<std::size_t>(std::count_if(
        subjects.begin(), subjects.end(), [](const SubjectRecord& r) { return r.delta == 1; }));
  }

  Eigen::VectorXd w() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(subjects.size()));
    for (std::size_t i = 0; i < subjects.size(); ++i) out(static_cast<Eigen::Index>(i)) = subjects[i].w;
    return out;
  }

  std::vector<int> delta() const {
    std::vector<int> out(subjects.size());
    for (std::size_t i = 0; i < subjects.size(); ++i) out[i] = subjects[i].delta;
    return out;
  }

  /// n x p_v matrix of imputation covariates.
  Eigen::MatrixXd v() const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(subjects.size()), p_v);
    for (std::size_t i = 0; i < subjects.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = subjects[i].v.transpose();
    return out;
  }

  /// Checks the structural invariants; throws ace::Error on violation.
  void validate() const;
};

/// Estimated (beta, alpha, sigma2) with covariance in the same order.
struct ThetaEstimate {
  Eigen::VectorXd beta;
  double alpha = 0.0;
  double sigma2 = 0.0;
  Eigen::MatrixXd cov;
  std::size_t n_used = 0;
  bool converged = false;
  int iterations = 0;
  double residual_norm = std::numeric_limits<double>::quiet_NaN();

  Eigen::Index dim() const noexcept { return beta.size() + 2; }

  Eigen::VectorXd params() const {
    Eigen::VectorXd t(dim());
    t.head(beta.size()) = beta;
    t(beta.size()) = alpha;
    t(beta.size() + 1) = sigma2;
    return t;
  }

  static ThetaEstimate from_params(const Eigen::VectorXd& t) {
    ThetaEstimate e;
    const Eigen::Index pa = t.size() - 2;
    e.beta = t.head(pa);
    e.alpha = t(pa);
    e.sigma2 = t(pa + 1);
    return e;
  }

  Eigen::VectorXd se() const {
    Eigen::VectorXd out(dim());
    for (Eigen::Index k = 0; k < dim(); ++k)
      out(k) = (cov.rows() == dim()) ? std::sqrt(std::max(0.0, cov(k, k)))
                                     : std::numeric_limits<double>::quiet_NaN();
    return out;
  }
};

namespace detail {

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

inline std::string trim(std::string_view sv) {
  auto b = sv.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = sv.find_last_not_of(" \t\r\n");
  return std::string(sv.substr(b, e - b + 1));
}

// Splits one CSV record; double quotes group fields, "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (...) {
    return std::nullopt;
  }
  if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace detail

inline void LongitudinalDataset::validate() const {
  if (subjects.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no subjects");
  std::set<std::string> ids;
  for (const auto& r : subjects) {
    const Eigen::Index m = r.y.size();
    if (m < 1) throw Error(ErrorKind::InvalidDataset, "subject '" + r.id + "' has no visits");
    if (r.s.size() != m || r.za.rows() != m || r.zb.rows() != m)
      throw Error(ErrorKind::InvalidDataset, "subject '" + r.id + "' has inconsistent visit counts");
    if (r.za.cols() != p_a || r.zb.cols() != p_b || r.v.size() != p_v)
      throw Error(ErrorKind::InvalidDataset, "subject '" + r.id + "' has inconsistent column counts");
    if (r.delta != 0 && r.delta != 1)
      throw Error(ErrorKind::InvalidDataset, "subject '" + r.id + "' has delta outside {0,1}");
    if (!std::isfinite(r.w) || !r.y.allFinite() || !r.s.allFinite() || !r.za.allFinite() ||
        !r.zb.allFinite() || !r.v.allFinite())
      throw Error(ErrorKind::InvalidDataset, "subject '" + r.id + "' has non-finite values");
    if (!ids.insert(r.id).second) throw Error(ErrorKind::InvalidDataset, "duplicate subject id '" + r.id + "'");
  }
  if (events() == 0) throw Error(ErrorKind::NoEvents, "dataset has no uncensored subjects");
}

// ---------------------------------------------------------------------------
// CSV ingestion

/// Column mapping for long-format CSV input. An entry "1" in za or zb
/// denotes a constant column of ones (intercept).
struct CsvSchema {
  std::string id = "id";
  std::string time = "time";
  std::string outcome = "y";
  std::string w = "w";
  std::string delta = "delta";
  std::vector<std::string> za;
  std::vector<std::string> zb;
  std::vector<std::string> v;
  char delimiter = ',';

  static CsvSchema from_json(const nlohmann::json& j) {
    CsvSchema s;
    s.id = j.value("id", s.id);
    s.time = j.value("time", s.time);
    s.outcome = j.value("outcome", s.outcome);
    s.w = j.value("w", s.w);
    s.delta = j.value("delta", s.delta);
    s.za = j.value("za", std::vector<std::string>{});
    s.zb = j.value("zb", std::vector<std::string>{});
    s.v = j.value("v", std::vector<std::string>{});
    if (j.contains("delimiter")) {
      auto d = j.at("delimiter").get<std::string>();
      if (d.size() != 1) throw Error(ErrorKind::InvalidArgument, "delimiter must be a single character");
      s.delimiter = d[0];
    }
    return s;
  }

  nlohmann::json to_json() const {
    return {{"id", id},   {"time", time}, {"outcome", outcome}, {"w", w},
            {"delta", delta}, {"za", za}, {"zb", zb},           {"v", v},
            {"delimiter", std::string(1, delimiter)}};
  }

  static CsvSchema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open schema file '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::IoError, "malformed schema JSON '" + path + "': " + e.what());
    }
    return from_json(j);
  }
};

/// Raw header + string cells; kept so tools can echo input rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv_table(std::istream& in, char delim = ',') {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      // strip UTF-8 BOM
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
          static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF)
        line.erase(0, 3);
      t.header = detail::split_csv_line(line, delim);
      have_header = true;
      continue;
    }
    if (detail::trim(line).empty()) continue;
    t.rows.push_back(detail::split_csv_line(line, delim));
  }
  if (!have_header) throw Error(ErrorKind::EmptyDataset, "CSV input has no header row");
  return t;
}

inline CsvTable read_csv_table(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  return read_csv_table(in, delim);
}

/// Builds a dataset from a parsed table. One record per distinct id in order
/// of first appearance; visits sorted by time (stable for ties).
inline LongitudinalDataset dataset_from_table(const CsvTable& t, const CsvSchema& schema) {
  auto require = [&](const std::string& name) -> std::optional<std::size_t> {
    if (name == "1") return std::nullopt;
    auto c = t.column(name);
    if (!c) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not found in CSV header");
    return c;
  };
  const std::size_t c_id = *require(schema.id);
  const std::size_t c_time = *require(schema.time);
  const std::size_t c_y = *require(schema.outcome);
  const std::size_t c_w = *require(schema.w);
  const std::size_t c_d = *require(schema.delta);
  std::vector<std::optional<std::size_t>> c_za, c_zb, c_v;
  for (const auto& n : schema.za) c_za.push_back(require(n));
  for (const auto& n : schema.zb) c_zb.push_back(require(n));
  for (const auto& n : schema.v) {
    if (n == "1") throw Error(ErrorKind::InvalidArgument, "imputation covariates cannot be constant");
    c_v.push_back(require(n));
  }

  if (t.rows.empty()) throw Error(ErrorKind::EmptyDataset, "CSV input has no data rows");

  auto cell = [&](std::size_t row, std::optional<std::size_t> col) -> double {
    if (!col) return 1.0;
    const auto& r = t.rows[row];
    if (*col >= r.size())
      throw Error(ErrorKind::NonNumericCell,
                  "row " + std::to_string(row + 2) + ", column '" + t.header[*col] + "': missing cell");
    auto v = detail::parse_double(r[*col]);
    if (!v)
      throw Error(ErrorKind::NonNumericCell, "row " + std::to_string(row + 2) + ", column '" +
                                                 t.header[*col] + "': '" + r[*col] + "' is not a number");
    return *v;
  };

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> rows_by_id;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (c_id >= t.rows[r].size())
      throw Error(ErrorKind::NonNumericCell, "row " + std::to_string(r + 2) + ": missing id");
    const std::string& id = t.rows[r][c_id];
    auto [it, inserted] = rows_by_id.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(r);
  }

  LongitudinalDataset ds;
  ds.p_a = static_cast<Eigen::Index>(schema.za.size());
  ds.p_b = static_cast<Eigen::Index>(schema.zb.size());
  ds.p_v = static_cast<Eigen::Index>(schema.v.size());
  ds.za_names = schema.za;
  ds.zb_names = schema.zb;
  ds.v_names = schema.v;

  for (const auto& id : order) {
    auto rows = rows_by_id[id];
    std::vector<double> times;
    times.reserve(rows.size());
    for (auto r : rows) times.push_back(cell(r, c_time));
    std::vector<std::size_t> idx(rows.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return times[a] < times[b]; });

    SubjectRecord rec;
    rec.id = id;
    const auto m = static_cast<Eigen::Index>(rows.size());
    rec.y.resize(m);
    rec.s.resize(m);
    rec.za.resize(m, ds.p_a);
    rec.zb.resize(m, ds.p_b);
    rec.v.resize(ds.p_v);
    for (Eigen::Index j = 0; j < m; ++j) {
      const std::size_t r = rows[idx[static_cast<std::size_t>(j)]];
      rec.s(j) = times[idx[static_cast<std::size_t>(j)]];
      rec.y(j) = cell(r, c_y);
      for (Eigen::Index k = 0; k < ds.p_a; ++k) rec.za(j, k) = cell(r, c_za[static_cast<std::size_t>(k)]);
      for (Eigen::Index k = 0; k < ds.p_b; ++k) rec.zb(j, k) = cell(r, c_zb[static_cast<std::size_t>(k)]);
      const double wv = cell(r, c_w);
      const double dv = cell(r, c_d);
      if (dv != 0.0 && dv != 1.0)
        throw Error(ErrorKind::InvalidDataset,
                    "row " + std::to_string(r + 2) + ": delta must be 0 or 1 for subject '" + id + "'");
      if (j == 0) {
        rec.w = wv;
        rec.delta = static_cast<int>(dv);
        for (Eigen::Index k = 0; k < ds.p_v; ++k) rec.v(k) = cell(r, c_v[static_cast<std::size_t>(k)]);
      } else if (wv != rec.w || static_cast<int>(dv) != rec.delta) {
        throw Error(ErrorKind::InconsistentWDelta, "W/delta vary across visits of subject '" + id + "'");
      }
    }
    ds.subjects.push_back(std::move(rec));
  }
  ds.validate();
  return ds;
}

inline LongitudinalDataset load_csv(const std::string& path, const CsvSchema& schema) {
  return dataset_from_table(read_csv_table(path, schema.delimiter), schema);
}

/// Long-format writer; the schema names the output columns. Values are written
/// with round-trip precision.
inline void write_csv(std::ostream& out, const LongitudinalDataset& ds, const CsvSchema& schema) {
  const char d = schema.delimiter;
  std::vector<std::string> header{schema.id, schema.time, schema.outcome, schema.w, schema.delta};
  for (const auto& n : schema.za)
    if (n != "1") header.push_back(n);
  for (const auto& n : schema.zb)
    if (n != "1" && std::find(header.begin(), header.end(), n) == header.end()) header.push_back(n);
  for (const auto& n : schema.v)
    if (std::find(header.begin(), header.end(), n) == header.end()) header.push_back(n);
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? std::string(1, d) : "") << header[k];
  out << '\n';

  auto find_value = [&](const SubjectRecord& r, Eigen::Index j, const std::string& name) -> double {
    for (std::size_t k = 0; k < schema.za.size(); ++k)
      if (schema.za[k] == name) return r.za(j, static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < schema.zb.size(); ++k)
      if (schema.zb[k] == name) return r.zb(j, static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < schema.v.size(); ++k)
      if (schema.v[k] == name) return r.v(static_cast<Eigen::Index>(k));
    return std::numeric_limits<double>::quiet_NaN();
  };

  for (const auto& r : ds.subjects) {
    for (Eigen::Index j = 0; j < r.visits(); ++j) {
      out << r.id << d << detail::format_double(r.s(j)) << d << detail::format_double(r.y(j)) << d
          << detail::format_double(r.w) << d << r.delta;
      for (std::size_t k = 5; k < header.size(); ++k) out << d << detail::format_double(find_value(r, j, header[k]));
      out << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const LongitudinalDataset& ds, const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  write_csv(out, ds, schema);
}

/// Schema whose column names are those stored in the dataset.
inline CsvSchema default_schema(const LongitudinalDataset& ds) {
  CsvSchema s;
  s.za = ds.za_names;
  s.zb = ds.zb_names;
  s.v = ds.v_names;
  return s;
}

// ---------------------------------------------------------------------------
// Centering and scaling

struct ColumnSelector {
  std::vector<std::string> za;
  std::vector<std::string> zb;
  std::vector<std::string> v;
};

struct ScalingEntry {
  std::string group;  // "za", "zb" or "v"
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
};

struct ScalingRecord {
  std::vector<ScalingEntry> entries;

  double unscale(const std::string& group, const std::string& name, double z) const {
    for (const auto& e : entries)
      if (e.group == group && e.name == name) return e.mean + e.sd * z;
    throw Error(ErrorKind::InvalidArgument, "no scaling entry for " + group + ":" + name);
  }
};

/// Standardizes the selected columns to mean 0 and sample (n-1) SD 1.
/// za/zb columns use every visit row; v columns use one value per subject.
inline std::pair<LongitudinalDataset, ScalingRecord> center_scale(const LongitudinalDataset& ds,
                                                                  const ColumnSelector& which) {
  LongitudinalDataset out = ds;
  ScalingRecord rec;

  auto index_of = [](const std::vector<std::string>& names, const std::string& n, const char* group) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw Error(ErrorKind::MissingColumn, std::string(group) + " column '" + n + "' not found");
    return static_cast<Eigen::Index>(it - names.begin());
  };

  auto mean_sd = [](const std::vector<double>& x, const std::string& name) {
    const double n = static_cast<double>(x.size());
    if (x.size() < 2) throw Error(ErrorKind::ZeroVariance, "column '" + name + "' has fewer than two values");
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw Error(ErrorKind::ZeroVariance, "column '" + name + "' has zero variance");
    return std::pair{mean, sd};
  };

  auto visit_column = [&](const char* group, Eigen::MatrixXd SubjectRecord::*field,
                          const std::vector<std::string>& names, const std::string& n) {
    const Eigen::Index k = index_of(names, n, group);
    std::vector<double> vals;
    for (const auto& r : ds.subjects)
      for (Eigen::Index j = 0; j < r.visits(); ++j) vals.push_back((r.*field)(j, k));
    auto [mean, sd] = mean_sd(vals, n);
    for (auto& r : out.subjects)
      for (Eigen::Index j = 0; j < r.visits(); ++j) (r.*field)(j, k) = ((r.*field)(j, k) - mean) / sd;
    rec.entries.push_back({group, n, mean, sd});
  };

  for (const auto& n : which.za) visit_column("za", &SubjectRecord::za, ds.za_names, n);
  for (const auto& n : which.zb) visit_column("zb", &SubjectRecord::zb, ds.zb_names, n);
  for (const auto& n : which.v) {
    const Eigen::Index k = index_of(ds.v_names, n, "v");
    std::vector<double> vals;
    for (const auto& r : ds.subjects) vals.push_back(r.v(k));
    auto [mean, sd] = mean_sd(vals, n);
    for (auto& r : out.subjects) r.v(k) = (r.v(k) - mean) / sd;
    rec.entries.push_back({"v", n, mean, sd});
  }
  return {std::move(out), std::move(rec)};
}

}  // namespace ace
