#pragma once

// CSV ingestion/emission and JSON run configuration.

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sts/error.hpp"
#include "sts/latent.hpp"
#include "sts/model.hpp"
#include "sts/quasi_fit.hpp"

namespace sts {

inline constexpr const char* kVersion = "sts 0.1.0";

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// RFC 4180 style: comma separated, double-quoted fields may contain commas,
/// newlines and doubled quotes. CRLF and LF line endings both accepted.
/// A blank line inside the data is a record with one empty field; blank
/// lines at the end of the file are dropped.
inline CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<bool> blank;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    switch (ch) {
      case '"':
        quoted = true;
        field_started = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r': break;
      case '\n':
        blank.push_back(!field_started && field.empty() && record.empty());
        record.push_back(std::move(field));
        records.push_back(std::move(record));
        field.clear();
        record.clear();
        field_started = false;
        break;
      default:
        field += ch;
        field_started = true;
    }
  }
  if (quoted) throw LoadError("unterminated quoted CSV field");
  if (field_started || !field.empty() || !record.empty()) {
    blank.push_back(false);
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  while (!blank.empty() && blank.back()) {
    blank.pop_back();
    records.pop_back();
  }
  if (records.empty()) throw LoadError("CSV file has no header row");
  CsvTable table;
  table.header = std::move(records.front());
  table.rows.assign(std::make_move_iterator(records.begin() + 1),
                    std::make_move_iterator(records.end()));
  return table;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", "cannot write file", path);
  out << content;
}

struct DataSet {
  Eigen::VectorXd y;
  Eigen::MatrixXd covariates;  // n x (number of raw columns), may have 0 columns
  std::vector<std::string> covariate_names;

  std::size_t n() const noexcept { return static_cast<std::size_t>(y.size()); }
};

inline DataSet load_csv_text(const std::string& text, const std::string& y_column,
                             const std::vector<std::string>& covariate_columns,
                             const std::string& source = "<memory>") {
  const CsvTable table = parse_csv(text);
  const auto column_index = [&](const std::string& name) {
    for (std::size_t j = 0; j < table.header.size(); ++j) {
      if (table.header[j] == name) return j;
    }
    throw LoadError("missing column '" + name + "'", source);
  };
  std::vector<std::size_t> cols{column_index(y_column)};
  for (const auto& c : covariate_columns) cols.push_back(column_index(c));
  if (table.rows.empty()) throw LoadError("empty series", source);

  const auto n = static_cast<Eigen::Index>(table.rows.size());
  DataSet data;
  data.y.resize(n);
  data.covariates.resize(n, static_cast<Eigen::Index>(covariate_columns.size()));
  data.covariate_names = covariate_columns;

  std::vector<std::size_t> missing;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    bool row_missing = false;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::size_t j = cols[k];
      if (j >= row.size() || row[j].find_first_not_of(" \t") == std::string::npos) {
        row_missing = true;
        continue;
      }
      const std::string& cell = row[j];
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      double value = 0.0;
      const char* begin = cell.data() + first;
      const char* end = cell.data() + last + 1;
      const auto res = std::from_chars(begin, end, value);
      if (res.ec != std::errc() || res.ptr != end || !std::isfinite(value)) {
        throw LoadError("non-numeric cell",
                        source + ": row " + std::to_string(r + 1) + ", column '" +
                            table.header[j] + "', value '" + cell + "'");
      }
      if (k == 0) data.y(r) = value;
      else data.covariates(r, static_cast<Eigen::Index>(k - 1)) = value;
    }
    if (row_missing) missing.push_back(static_cast<std::size_t>(r + 1));
  }
  if (!missing.empty()) {
    std::string rows;
    for (std::size_t i = 0; i < missing.size(); ++i) {
      rows += (i ? "," : "") + std::to_string(missing[i]);
    }
    throw LoadError("missing values", source + ": rows " + rows);
  }
  return data;
}

/// Reads `y_column` plus optional covariate columns. Row numbers in errors
/// count data rows from 1 (the header is not counted).
inline DataSet load_csv(const std::string& path, const std::string& y_column,
                        const std::vector<std::string>& covariate_columns = {}) {
  return load_csv_text(read_file(path), y_column, covariate_columns, path);
}

/// Checks every response against the family's support.
inline void bind_to_family(const DataSet& data, const ModelFamily& family) {
  for (Eigen::Index t = 0; t < data.y.size(); ++t) {
    try {
      check_support(family, data.y(t));
    } catch (const DomainError& e) {
      throw DomainError(std::string("response outside the family support: ") + e.what(),
                        "row " + std::to_string(t + 1));
    }
  }
}

// ---------------------------------------------------------------------------
// JSON configuration

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "'", where);
  }
}

template <typename T>
T get_required(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ConfigError("missing key '" + key + "'", where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + key + "'", where + ": " + e.what());
  }
}

inline ModelFamily parse_family(const json& j) {
  reject_unknown_keys(j, {"kind", "p", "m"}, "family");
  const auto kind = get_required<std::string>(j, "kind", "family");
  const auto forbid = [&](const char* key) {
    if (j.contains(key)) throw ConfigError(std::string("'") + key + "' not used by family " + kind);
  };
  if (kind == "nonnegative") {
    forbid("m");
    return ModelFamily::non_negative(get_required<double>(j, "p", "family"));
  }
  forbid("p");
  if (kind == "real") {
    forbid("m");
    return ModelFamily::real_valued();
  }
  if (kind == "bounded") {
    forbid("m");
    return ModelFamily::bounded();
  }
  if (kind == "binary") {
    forbid("m");
    return ModelFamily::binary();
  }
  if (kind == "binomial") return ModelFamily::binomial(get_required<int>(j, "m", "family"));
  throw ConfigError("unknown family kind '" + kind + "'",
                    "expected nonnegative, real, bounded, binary or binomial");
}

inline json family_to_json(const ModelFamily& family) {
  json j;
  if (family.kind() == FamilyKind::Bounded) {
    j["kind"] = family.trials() ? "binomial" : (family.phi_known() ? "binary" : "bounded");
    if (family.trials()) j["m"] = *family.trials();
  } else {
    j["kind"] = to_string(family.kind());
    if (family.kind() == FamilyKind::NonNegative) j["p"] = family.p();
  }
  return j;
}

inline CovariateTerm parse_term(const json& j) {
  const auto kind = get_required<std::string>(j, "term", "design term");
  if (kind == "intercept") {
    reject_unknown_keys(j, {"term"}, "design term");
    return Intercept{};
  }
  if (kind == "linear") {
    reject_unknown_keys(j, {"term"}, "design term");
    return LinearTrend{};
  }
  if (kind == "quadratic") {
    reject_unknown_keys(j, {"term"}, "design term");
    return QuadraticTrend{};
  }
  if (kind == "cos" || kind == "sin") {
    reject_unknown_keys(j, {"term", "period"}, "design term");
    const double period = get_required<double>(j, "period", "design term");
    if (kind == "cos") return Cosine{period};
    return Sine{period};
  }
  if (kind == "abs_break") {
    reject_unknown_keys(j, {"term", "t0", "scale"}, "design term");
    return AbsBreak{get_required<double>(j, "t0", "design term"),
                    get_required<double>(j, "scale", "design term")};
  }
  throw ConfigError("unknown design term '" + kind + "'",
                    "expected intercept, linear, quadratic, cos, sin or abs_break");
}

inline std::vector<CovariateTerm> parse_design(const json& j) {
  if (!j.is_array()) throw ConfigError("design must be an array of terms");
  std::vector<CovariateTerm> terms;
  for (const auto& item : j) terms.push_back(parse_term(item));
  return terms;
}

inline json term_to_json(const CovariateTerm& term) {
  struct Visitor {
    json operator()(Intercept) const { return {{"term", "intercept"}}; }
    json operator()(LinearTrend) const { return {{"term", "linear"}}; }
    json operator()(QuadraticTrend) const { return {{"term", "quadratic"}}; }
    json operator()(const Cosine& c) const { return {{"term", "cos"}, {"period", c.period}}; }
    json operator()(const Sine& s) const { return {{"term", "sin"}, {"period", s.period}}; }
    json operator()(const AbsBreak& b) const {
      return {{"term", "abs_break"}, {"t0", b.t0}, {"scale", b.scale}};
    }
  };
  return std::visit(Visitor{}, term);
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

inline ParameterSet parse_params(const json& j) {
  reject_unknown_keys(j, {"beta", "phi", "sigma2", "rho"}, "params");
  ParameterSet p;
  p.beta = to_vector(get_required<std::vector<double>>(j, "beta", "params"));
  p.phi = get_required<double>(j, "phi", "params");
  p.sigma2 = get_required<double>(j, "sigma2", "params");
  p.rho = get_required<double>(j, "rho", "params");
  return p;
}

inline ConditionalDistribution parse_conditional(const std::string& name) {
  using D = ConditionalDistribution;
  for (D d : {D::Gamma, D::Poisson, D::Normal, D::Beta, D::Bernoulli, D::Binomial}) {
    if (name == to_string(d)) return d;
  }
  throw ConfigError("unknown conditional distribution '" + name + "'");
}

inline FitOptions parse_fit_options(const json& j) {
  reject_unknown_keys(j, {"max_iter", "tol"}, "fit_options");
  FitOptions options;
  if (j.contains("max_iter")) options.max_iter = get_required<int>(j, "max_iter", "fit_options");
  if (j.contains("tol")) options.tol = get_required<double>(j, "tol", "fit_options");
  if (options.max_iter < 1 || !(options.tol > 0.0)) {
    throw ConfigError("fit_options need max_iter >= 1 and tol > 0");
  }
  return options;
}

struct DataSpec {
  std::string path;
  std::string y_column = "y";
  std::vector<std::string> covariate_columns;
};

inline DataSpec parse_data_spec(const json& j) {
  reject_unknown_keys(j, {"path", "y_column", "covariate_columns"}, "data");
  DataSpec spec;
  spec.path = get_required<std::string>(j, "path", "data");
  if (j.contains("y_column")) spec.y_column = get_required<std::string>(j, "y_column", "data");
  if (j.contains("covariate_columns")) {
    spec.covariate_columns = get_required<std::vector<std::string>>(j, "covariate_columns", "data");
  }
  return spec;
}

}  // namespace sts
