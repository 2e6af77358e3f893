#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "heavyrush/error.hpp"
#include "heavyrush/fit.hpp"
#include "heavyrush/graph.hpp"
#include "heavyrush/model.hpp"
#include "heavyrush/simulate.hpp"

namespace heavyrush {

/// Shortest decimal text that reads back to the same double.
inline std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/**
 * @brief Header plus rows of a comma-separated file.
 *
 * No quoting; fields are trimmed and blank lines skipped. `lines` keeps the
 * 1-based file line of each row for error messages.
 */
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;

  std::size_t column(std::string_view name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    fail(ErrorCode::MissingColumn, source + ": missing column '" + std::string(name) + "'");
  }
  bool has_column(std::string_view name) const {
    return std::find(header.begin(), header.end(), name) != header.end();
  }
  std::string where(std::size_t row) const { return source + " line " + std::to_string(lines.at(row)); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in, std::string source) {
  CsvTable t;
  t.source = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    require(fields.size() == t.header.size(), ErrorCode::ParseError,
            t.source + " line " + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(lineno);
  }
  require(!t.header.empty(), ErrorCode::ParseError, t.source + ": empty file");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::IoError, "cannot open " + path.string());
  return parse_csv(in, path.string());
}

inline long long parse_integer(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::ParseError,
          t.where(row) + ": '" + s + "' in column '" + t.header[col] + "' is not an integer");
  return v;
}

inline double parse_real(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(v), ErrorCode::ParseError,
          t.where(row) + ": '" + s + "' in column '" + t.header[col] + "' is not a finite number");
  return v;
}

/// Parses a 0-based index column; indices must be non-negative.
inline std::size_t parse_index(const CsvTable& t, std::size_t row, std::size_t col) {
  const long long v = parse_integer(t, row, col);
  require(v >= 0, ErrorCode::NonContiguousIndex,
          t.where(row) + ": negative index in column '" + t.header[col] + "'");
  return static_cast<std::size_t>(v);
}

namespace detail {

/// Checks that the indices seen are exactly {0, ..., k-1}; returns k.
inline std::size_t contiguous_extent(const CsvTable& t, const std::vector<std::size_t>& values,
                                     std::string_view what) {
  std::set<std::size_t> seen(values.begin(), values.end());
  require(!seen.empty(), ErrorCode::ParseError, t.source + ": no rows");
  const std::size_t k = *seen.rbegin() + 1;
  if (seen.size() != k) {
    std::size_t gap = 0;
    while (seen.count(gap)) ++gap;
    fail(ErrorCode::NonContiguousIndex,
         t.source + ": " + std::string(what) + " indices are not contiguous from 0 (missing " + std::to_string(gap) + ")");
  }
  return k;
}

}  // namespace detail

/// Counts panel read from `area,time,count[,offset]`.
struct CountsTable {
  Eigen::MatrixXi counts;                 ///< n x T
  std::optional<Eigen::VectorXd> offsets;  ///< present iff the file has an offset column
};

/**
 * @brief Reads a complete counts panel.
 *
 * Every (area, time) cell must appear exactly once. An `offset` column, if
 * present, must be constant over time within each area.
 */
inline CountsTable read_counts(const CsvTable& t) {
  const std::size_t ca = t.column("area"), ct = t.column("time"), cc = t.column("count");
  const bool has_offset = t.has_column("offset");
  const std::size_t co = has_offset ? t.column("offset") : 0;
  std::vector<std::size_t> areas, times;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    areas.push_back(parse_index(t, r, ca));
    times.push_back(parse_index(t, r, ct));
  }
  const std::size_t n = detail::contiguous_extent(t, areas, "area");
  const std::size_t T = detail::contiguous_extent(t, times, "time");
  CountsTable out;
  out.counts = Eigen::MatrixXi::Constant(as_index(n), as_index(T), -1);
  Eigen::VectorXd offsets = Eigen::VectorXd::Constant(as_index(n), std::nan(""));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const long long y = parse_integer(t, r, cc);
    require(y >= 0, ErrorCode::NegativeCount, t.where(r) + ": negative count");
    require(y <= std::numeric_limits<int>::max(), ErrorCode::ParseError, t.where(r) + ": count too large");
    int& cell = out.counts(as_index(areas[r]), as_index(times[r]));
    require(cell < 0, ErrorCode::ParseError,
            t.where(r) + ": duplicate cell (area " + std::to_string(areas[r]) + ", time " +
                std::to_string(times[r]) + ")");
    cell = static_cast<int>(y);
    if (has_offset) {
      const double e = parse_real(t, r, co);
      double& slot = offsets[as_index(areas[r])];
      if (std::isnan(slot)) {
        slot = e;
      } else {
        require(slot == e, ErrorCode::TimeVaryingOffset,
                t.where(r) + ": offset of area " + std::to_string(areas[r]) + " changes over time");
      }
    }
  }
  for (Index i = 0; i < out.counts.rows(); ++i) {
    for (Index s = 0; s < out.counts.cols(); ++s) {
      require(out.counts(i, s) >= 0, ErrorCode::MissingCell,
              t.source + ": no row for area " + std::to_string(i) + ", time " + std::to_string(s));
    }
  }
  if (has_offset) out.offsets = offsets;
  return out;
}

/// Edge list from `i,j`; `one_based` shifts both columns down by one.
inline SpatialGraph read_adjacency(const CsvTable& t, std::size_t n, bool one_based = false) {
  const std::size_t ci = t.column("i"), cj = t.column("j");
  std::vector<Edge> edges;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    long long a = parse_integer(t, r, ci), b = parse_integer(t, r, cj);
    if (one_based) {
      --a;
      --b;
    }
    require(a >= 0 && b >= 0 && static_cast<std::size_t>(a) < n && static_cast<std::size_t>(b) < n,
            ErrorCode::IndexOutOfRange, t.where(r) + ": area index outside [0, " + std::to_string(n) + ")");
    require(a != b, ErrorCode::SelfLoop, t.where(r) + ": self-loop on area " + std::to_string(a));
    edges.emplace_back(static_cast<std::size_t>(a), static_cast<std::size_t>(b));
  }
  return build_graph(n, edges);
}

/// Covariates as used by the model plus the constants that standardized them.
struct CovariateTable {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  ///< n x p, standardized when requested
  Eigen::VectorXd center;  ///< column means subtracted (zeros if not standardized)
  Eigen::VectorXd scale;   ///< column sds divided by (ones if not standardized)
  bool standardized = false;
};

/// Reads `area,<name>,...`; standardization uses the mean and sample sd of the file itself.
inline CovariateTable read_covariates(const CsvTable& t, std::size_t n, bool standardize = true) {
  const std::size_t ca = t.column("area");
  CovariateTable out;
  std::vector<std::size_t> cols;
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (k == ca) continue;
    cols.push_back(k);
    out.names.push_back(t.header[k]);
  }
  const Index p = static_cast<Index>(cols.size());
  out.values = Eigen::MatrixXd::Constant(as_index(n), p, std::nan(""));
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t a = parse_index(t, r, ca);
    require(a < n, ErrorCode::IndexOutOfRange, t.where(r) + ": area index outside the counts panel");
    require(!seen[a], ErrorCode::ParseError, t.where(r) + ": duplicate area " + std::to_string(a));
    seen[a] = true;
    for (Index k = 0; k < p; ++k) out.values(as_index(a), k) = parse_real(t, r, cols[static_cast<std::size_t>(k)]);
  }
  for (std::size_t a = 0; a < n; ++a) {
    require(seen[a], ErrorCode::MissingCell, t.source + ": no covariate row for area " + std::to_string(a));
  }
  out.center = Eigen::VectorXd::Zero(p);
  out.scale = Eigen::VectorXd::Ones(p);
  out.standardized = standardize;
  if (standardize) {
    for (Index k = 0; k < p; ++k) {
      const double m = out.values.col(k).mean();
      const double sd = n > 1 ? std::sqrt((out.values.col(k).array() - m).square().sum() / static_cast<double>(n - 1)) : 0.0;
      require(sd > 0.0, ErrorCode::ConstantCovariate,
              t.source + ": covariate '" + out.names[static_cast<std::size_t>(k)] + "' is constant");
      out.center[k] = m;
      out.scale[k] = sd;
      out.values.col(k) = (out.values.col(k).array() - m) / sd;
    }
  }
  return out;
}

/// Population per area from `area,population`.
inline Eigen::VectorXd read_population(const CsvTable& t, std::size_t n) {
  const std::size_t ca = t.column("area"), cp = t.column("population");
  Eigen::VectorXd pop = Eigen::VectorXd::Constant(as_index(n), std::nan(""));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t a = parse_index(t, r, ca);
    require(a < n, ErrorCode::IndexOutOfRange, t.where(r) + ": area index outside the counts panel");
    const double v = parse_real(t, r, cp);
    require(v >= 0.0, ErrorCode::ZeroPopulation, t.where(r) + ": negative population");
    pop[as_index(a)] = v;
  }
  for (Index a = 0; a < pop.size(); ++a) {
    require(!std::isnan(pop[a]), ErrorCode::MissingCell, t.source + ": no population for area " + std::to_string(a));
  }
  return pop;
}

struct InputPaths {
  std::filesystem::path counts;
  std::filesystem::path adjacency;
  std::optional<std::filesystem::path> covariates;
  std::optional<std::filesystem::path> population;
  bool one_based = false;
  bool standardize = true;
};

struct ParsedInput {
  Dataset data;
  SpatialGraph graph;
  std::optional<CovariateTable> covariates;
  bool offsets_from_population = false;
};

/**
 * @brief Reads counts, adjacency and optional covariates / population into a Dataset.
 *
 * Offsets come from the population file when given, otherwise from the
 * counts file's `offset` column.
 */
inline ParsedInput parse_dataset(const InputPaths& in) {
  const CountsTable counts = read_counts(read_csv(in.counts));
  const std::size_t n = static_cast<std::size_t>(counts.counts.rows());
  ParsedInput out;
  out.graph = read_adjacency(read_csv(in.adjacency), n, in.one_based);
  Eigen::VectorXd offsets;
  if (in.population) {
    const Eigen::VectorXd pop = read_population(read_csv(*in.population), n);
    offsets = compute_offsets(counts.counts, pop, static_cast<std::size_t>(counts.counts.cols()));
    out.offsets_from_population = true;
  } else {
    require(counts.offsets.has_value(), ErrorCode::MissingColumn,
            in.counts.string() + ": missing column 'offset' and no population file given");
    offsets = *counts.offsets;
  }
  Eigen::MatrixXd x(as_index(n), 0);
  if (in.covariates) {
    out.covariates = read_covariates(read_csv(*in.covariates), n, in.standardize);
    x = out.covariates->values;
  }
  out.data = make_dataset(counts.counts, offsets, x);
  return out;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

/// `area,time,count,offset`, area fastest within each time.
inline void write_counts_csv(std::ostream& out, const Dataset& d) {
  out << "area,time,count,offset\n";
  for (Index t = 0; t < d.counts.cols(); ++t)
    for (Index i = 0; i < d.counts.rows(); ++i)
      out << i << ',' << t << ',' << d.counts(i, t) << ',' << format_number(d.offsets[i]) << '\n';
}

inline void write_adjacency_csv(std::ostream& out, const SpatialGraph& g) {
  out << "i,j\n";
  for (const auto& [a, b] : g.edges()) out << a << ',' << b << '\n';
}

inline void write_summary_csv(std::ostream& out, const PosteriorSummary& s) {
  out << "parameter,mean,sd,q025,q975,rhat,ess\n";
  for (const auto& p : s) {
    out << p.name << ',' << format_number(p.mean) << ',' << format_number(p.sd) << ',' << format_number(p.q025)
        << ',' << format_number(p.q975) << ',' << format_number(p.rhat) << ',' << format_number(p.ess) << '\n';
  }
}

/// Retained constrained draws: `chain,draw,<parameter>...`.
inline void write_draws_csv(std::ostream& out, const FitResult& fit) {
  out << "chain,draw";
  for (const auto& n : fit.parameter_names) out << ',' << n;
  out << '\n';
  for (std::size_t c = 0; c < fit.constrained.size(); ++c) {
    const auto& m = fit.constrained[c];
    for (Index k = 0; k < m.rows(); ++k) {
      out << c << ',' << k;
      for (Index j = 0; j < m.cols(); ++j) out << ',' << format_number(m(k, j));
      out << '\n';
    }
  }
}

/// Per-cell log-likelihood draws: `chain,draw,ll[i][t]...` in the pooled order of fit.loglik.
inline void write_loglik_csv(std::ostream& out, const FitResult& fit, Index n) {
  out << "chain,draw";
  for (Index k = 0; k < fit.loglik.cols(); ++k) out << ",ll[" << k % n << "][" << k / n << ']';
  out << '\n';
  Index row = 0;
  for (std::size_t c = 0; c < fit.constrained.size(); ++c) {
    for (Index k = 0; k < fit.constrained[c].rows(); ++k, ++row) {
      out << c << ',' << k;
      for (Index j = 0; j < fit.loglik.cols(); ++j) out << ',' << format_number(fit.loglik(row, j));
      out << '\n';
    }
  }
}

inline void write_fitted_csv(std::ostream& out, const FitResult& fit, const Dataset& d) {
  out << "area,time,count,offset,fitted\n";
  for (Index t = 0; t < d.counts.cols(); ++t)
    for (Index i = 0; i < d.counts.rows(); ++i)
      out << i << ',' << t << ',' << d.counts(i, t) << ',' << format_number(d.offsets[i]) << ','
          << format_number(fit.fitted_mean(i, t)) << '\n';
}

inline void write_outliers_csv(std::ostream& out, const OutlierReport& o) {
  out << "area,kappa_mean,kappa_upper,flag\n";
  for (std::size_t i = 0; i < o.flag.size(); ++i) {
    out << i << ',' << format_number(o.mean[i]) << ',' << format_number(o.upper[i]) << ',' << (o.flag[i] ? 1 : 0)
        << '\n';
  }
}

/**
 * @brief Draw matrices read back from a `chain,draw,...` file.
 *
 * Chains must be numbered 0..C-1 and appear in order.
 */
struct StoredDraws {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;
};

inline StoredDraws read_stored_draws(const CsvTable& t) {
  const std::size_t cc = t.column("chain");
  t.column("draw");
  StoredDraws out;
  std::vector<std::size_t> cols;
  for (std::size_t k = 0; k < t.header.size(); ++k) {
    if (t.header[k] == "chain" || t.header[k] == "draw") continue;
    cols.push_back(k);
    out.names.push_back(t.header[k]);
  }
  std::vector<std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::size_t c = parse_index(t, r, cc);
    require(c <= rows_of.size(), ErrorCode::NonContiguousIndex, t.where(r) + ": chains must be numbered in order");
    if (c == rows_of.size()) rows_of.emplace_back();
    rows_of[c].push_back(r);
  }
  for (const auto& rows : rows_of) {
    Eigen::MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (std::size_t j = 0; j < cols.size(); ++j)
        m(static_cast<Index>(k), static_cast<Index>(j)) = parse_real(t, rows[k], cols[j]);
    out.chains.push_back(std::move(m));
  }
  return out;
}

}  // namespace heavyrush
