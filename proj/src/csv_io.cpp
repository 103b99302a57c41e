#include "kdscore/csv_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "kdscore/errors.hpp"

namespace kdscore {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += "\"\"";
    else q += c;
  }
  q += "\"";
  return q;
}

[[noreturn]] void fail(const std::string& source, std::size_t line,
                       const std::string& what) {
  throw ParseError(source + ": line " + std::to_string(line) + ": " + what);
}

// Reads every line, dropping a trailing \r so CRLF files parse the same.
std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

struct MetaTable {
  std::map<std::string, std::string> kv;
  std::size_t header_line = 0;  // 1-based index of the column header
  std::vector<std::string> header;
  std::size_t first_row = 0;
};

// Schema line, then `#key=value` metadata, then the column header.
MetaTable parse_result_preamble(const std::vector<std::string>& lines,
                                const std::string& source) {
  if (lines.empty() || lines[0] != kSchemaLine) {
    fail(source, 1, std::string("expected '") + kSchemaLine + "'");
  }
  MetaTable meta;
  std::size_t i = 1;
  for (; i < lines.size(); ++i) {
    const std::string& l = lines[i];
    if (l.empty()) continue;
    if (l[0] != '#') break;
    std::size_t eq = l.find('=');
    if (eq == std::string::npos) fail(source, i + 1, "malformed meta line");
    meta.kv[l.substr(1, eq - 1)] = l.substr(eq + 1);
  }
  if (i >= lines.size()) fail(source, i, "missing column header");
  meta.header_line = i + 1;
  meta.header = split_fields(lines[i]);
  meta.first_row = i + 1;  // 0-based index into lines
  return meta;
}

const std::string& require_meta(const MetaTable& meta, const std::string& key,
                                const std::string& source) {
  auto it = meta.kv.find(key);
  if (it == meta.kv.end()) {
    fail(source, 2, "missing meta key '" + key + "'");
  }
  return it->second;
}

std::vector<Eigen::Index> parse_index_list(const std::string& s,
                                           const std::string& source,
                                           const std::string& key) {
  std::vector<Eigen::Index> out;
  if (s.empty()) return out;
  for (const std::string& f : split_fields(s)) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw ParseError(source + ": meta key '" + key +
                       "': invalid integer '" + f + "'");
    }
    out.push_back(static_cast<Eigen::Index>(v));
  }
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double(const std::string& field, const std::string& source,
                    std::size_t line, const std::string& column) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(),
                                   v, std::chars_format::general);
  if (ec != std::errc() || ptr != field.data() + field.size() ||
      field.empty()) {
    fail(source, line,
         "column '" + column + "': invalid number '" + field + "'");
  }
  return v;
}

NamedDataset read_dataset_csv(std::istream& in, const std::string& source) {
  std::vector<std::string> lines = read_lines(in);
  std::size_t h = 0;
  while (h < lines.size() && trim(lines[h]).empty()) ++h;
  if (h == lines.size()) {
    throw ParseError(source + ": empty file, expected a header row");
  }
  std::vector<std::string> header = split_fields(lines[h]);
  Eigen::Index col_a = -1, col_y = -1, col_r = -1;
  std::vector<Eigen::Index> covariate_cols;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const std::string& name = header[j];
    if (name.empty()) fail(source, h + 1, "empty column name");
    for (std::size_t k = 0; k < j; ++k) {
      if (header[k] == name) {
        fail(source, h + 1, "duplicate column '" + name + "'");
      }
    }
    auto idx = static_cast<Eigen::Index>(j);
    if (name == "A") col_a = idx;
    else if (name == "Y") col_y = idx;
    else if (name == "R") col_r = idx;
    else {
      covariate_cols.push_back(idx);
      names.push_back(name);
    }
  }
  if (col_a < 0) {
    throw ParseError(source + ": missing required column 'A'");
  }
  if (covariate_cols.empty()) {
    throw ParseError(source + ": no covariate columns besides A/Y/R");
  }

  std::vector<std::vector<double>> rows;
  for (std::size_t i = h + 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> fields = split_fields(lines[i]);
    if (fields.size() != header.size()) {
      fail(source, i + 1,
           "expected " + std::to_string(header.size()) + " fields, got " +
               std::to_string(fields.size()));
    }
    std::vector<double> row(fields.size());
    for (std::size_t j = 0; j < fields.size(); ++j) {
      row[j] = parse_double(fields[j], source, i + 1, header[j]);
      if (!std::isfinite(row[j])) {
        fail(source, i + 1, "column '" + header[j] + "': non-finite value");
      }
    }
    double a = row[static_cast<std::size_t>(col_a)];
    if (a != 1.0 && a != -1.0) {
      fail(source, i + 1, "column 'A': value must be -1 or 1");
    }
    if (col_r >= 0) {
      double r = row[static_cast<std::size_t>(col_r)];
      if (r != 0.0 && r != 1.0) {
        fail(source, i + 1, "column 'R': value must be 0 or 1");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() < 2) {
    throw ParseError(source + ": need at least two data rows");
  }

  NamedDataset out;
  out.names = std::move(names);
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(covariate_cols.size());
  out.data.X.resize(n, p);
  out.data.A.resize(n);
  if (col_y >= 0) out.data.Y = Eigen::VectorXd(n);
  if (col_r >= 0) out.data.R = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < p; ++j) {
      out.data.X(i, j) =
          row[static_cast<std::size_t>(covariate_cols[static_cast<std::size_t>(j)])];
    }
    out.data.A(i) = row[static_cast<std::size_t>(col_a)];
    if (col_y >= 0) (*out.data.Y)(i) = row[static_cast<std::size_t>(col_y)];
    if (col_r >= 0) (*out.data.R)(i) = row[static_cast<std::size_t>(col_r)];
  }
  out.data.validate();
  return out;
}

NamedDataset read_dataset_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  return read_dataset_csv(in, path);
}

void write_fit_csv(std::ostream& out, const FitOutput& fit) {
  if (fit.names.size() != static_cast<std::size_t>(fit.fit.beta.size())) {
    throw DimensionMismatch("fit output: names/beta length mismatch");
  }
  Eigen::Index nonzero = 0;
  for (Eigen::Index j = 0; j < fit.fit.beta.size(); ++j) {
    if (fit.fit.beta(j) != 0.0) ++nonzero;
  }
  out << kSchemaLine << "\n";
  out << "#lambda=" << format_double(fit.fit.lambda) << "\n";
  out << "#objective=" << format_double(fit.fit.objective) << "\n";
  out << "#kkt_residual=" << format_double(fit.fit.kkt_residual) << "\n";
  out << "#iterations=" << fit.fit.iterations << "\n";
  out << "#converged=" << (fit.fit.converged ? 1 : 0) << "\n";
  out << "#sparsity=" << nonzero << "\n";
  out << "name,beta\n";
  for (std::size_t j = 0; j < fit.names.size(); ++j) {
    out << quote_csv(fit.names[j]) << ","
        << format_double(fit.fit.beta(static_cast<Eigen::Index>(j))) << "\n";
  }
}

FitOutput read_fit_csv(std::istream& in, const std::string& source) {
  std::vector<std::string> lines = read_lines(in);
  MetaTable meta = parse_result_preamble(lines, source);
  if (meta.header != std::vector<std::string>{"name", "beta"}) {
    fail(source, meta.header_line, "expected header 'name,beta'");
  }
  FitOutput out;
  out.fit.lambda = parse_double(require_meta(meta, "lambda", source), source,
                                2, "lambda");
  out.fit.objective = parse_double(require_meta(meta, "objective", source),
                                   source, 2, "objective");
  out.fit.kkt_residual = parse_double(
      require_meta(meta, "kkt_residual", source), source, 2, "kkt_residual");
  out.fit.iterations = static_cast<int>(parse_double(
      require_meta(meta, "iterations", source), source, 2, "iterations"));
  out.fit.converged =
      require_meta(meta, "converged", source) == "1";
  std::vector<double> beta;
  for (std::size_t i = meta.first_row; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> f = split_fields(lines[i]);
    if (f.size() != 2) fail(source, i + 1, "expected 2 fields");
    out.names.push_back(f[0]);
    beta.push_back(parse_double(f[1], source, i + 1, "beta"));
  }
  out.fit.beta = Eigen::Map<Eigen::VectorXd>(beta.data(),
                                             static_cast<Eigen::Index>(beta.size()));
  return out;
}

void write_test_csv(std::ostream& out, const TestOutput& results) {
  if (results.names.size() != results.records.size()) {
    throw DimensionMismatch("test output: names/records length mismatch");
  }
  const bool bh = results.bh_q > 0.0;
  if (bh && results.reject_bh.size() != results.records.size()) {
    throw DimensionMismatch("test output: rejection flags length mismatch");
  }
  out << kSchemaLine << "\n";
  double alpha = results.records.empty() ? 0.05 : results.records[0].alpha;
  out << "#alpha=" << format_double(alpha) << "\n";
  if (bh) out << "#bh_q=" << format_double(results.bh_q) << "\n";
  out << "#coordinates=";
  for (std::size_t i = 0; i < results.records.size(); ++i) {
    if (i) out << ",";
    out << results.records[i].coordinate + 1;  // 1-based in files
  }
  out << "\n";
  out << "name,beta_bar,beta_tilde,score,sigma_hat,info_hat,z,p_value,ci_low,"
         "ci_high";
  if (bh) out << ",reject_bh";
  out << "\n";
  for (std::size_t i = 0; i < results.records.size(); ++i) {
    const CoordinateInference& r = results.records[i];
    out << quote_csv(results.names[i]) << "," << format_double(r.beta_bar)
        << "," << format_double(r.beta_tilde) << "," << format_double(r.score)
        << "," << format_double(r.sigma_hat) << ","
        << format_double(r.info_hat) << "," << format_double(r.z) << ","
        << format_double(r.p_value) << "," << format_double(r.ci_low) << ","
        << format_double(r.ci_high);
    if (bh) out << "," << results.reject_bh[i];
    out << "\n";
  }
}

TestOutput read_test_csv(std::istream& in, const std::string& source) {
  std::vector<std::string> lines = read_lines(in);
  MetaTable meta = parse_result_preamble(lines, source);
  TestOutput out;
  double alpha =
      parse_double(require_meta(meta, "alpha", source), source, 2, "alpha");
  if (meta.kv.count("bh_q")) {
    out.bh_q = parse_double(meta.kv.at("bh_q"), source, 2, "bh_q");
  }
  std::vector<Eigen::Index> coords = parse_index_list(
      require_meta(meta, "coordinates", source), source, "coordinates");
  const bool bh = out.bh_q > 0.0;
  const std::size_t want = bh ? 11 : 10;
  for (std::size_t i = meta.first_row; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> f = split_fields(lines[i]);
    if (f.size() != want) {
      fail(source, i + 1, "expected " + std::to_string(want) + " fields");
    }
    CoordinateInference r;
    r.alpha = alpha;
    std::size_t k = 0;
    out.names.push_back(f[k++]);
    r.beta_bar = parse_double(f[k++], source, i + 1, "beta_bar");
    r.beta_tilde = parse_double(f[k++], source, i + 1, "beta_tilde");
    r.score = parse_double(f[k++], source, i + 1, "score");
    r.sigma_hat = parse_double(f[k++], source, i + 1, "sigma_hat");
    r.info_hat = parse_double(f[k++], source, i + 1, "info_hat");
    r.z = parse_double(f[k++], source, i + 1, "z");
    r.p_value = parse_double(f[k++], source, i + 1, "p_value");
    r.ci_low = parse_double(f[k++], source, i + 1, "ci_low");
    r.ci_high = parse_double(f[k++], source, i + 1, "ci_high");
    if (bh) {
      out.reject_bh.push_back(static_cast<int>(
          parse_double(f[k++], source, i + 1, "reject_bh")));
    }
    out.records.push_back(r);
  }
  if (coords.size() != out.records.size()) {
    throw ParseError(source + ": coordinate list does not match row count");
  }
  for (std::size_t i = 0; i < coords.size(); ++i) {
    out.records[i].coordinate = coords[i] - 1;
  }
  return out;
}

void write_baseline_csv(std::ostream& out, const BaselineOutput& results) {
  if (results.names.size() != results.records.size()) {
    throw DimensionMismatch("baseline output: names/records length mismatch");
  }
  out << kSchemaLine << "\n";
  out << "#method=baseline-adhoc\n";
  out << "#alpha=" << format_double(results.alpha) << "\n";
  out << "#coordinates=";
  for (std::size_t i = 0; i < results.records.size(); ++i) {
    if (i) out << ",";
    out << results.records[i].coordinate + 1;
  }
  out << "\n";
  out << "name,estimate,se,z,p_value,ci_low,ci_high\n";
  for (std::size_t i = 0; i < results.records.size(); ++i) {
    const BaselineRecord& r = results.records[i];
    out << quote_csv(results.names[i]) << "," << format_double(r.estimate)
        << "," << format_double(r.se) << "," << format_double(r.z) << ","
        << format_double(r.p_value) << "," << format_double(r.ci_low) << ","
        << format_double(r.ci_high) << "\n";
  }
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report) {
  out << kSchemaLine << "\n";
  out << "#scenario=" << report.scenario.scenario << "\n";
  out << "#n=" << report.scenario.n << "\n";
  out << "#p=" << report.scenario.p << "\n";
  out << "#xi=" << format_double(report.scenario.xi) << "\n";
  out << "#replicates=" << report.scenario.replicates << "\n";
  out << "#seed=" << report.scenario.seed << "\n";
  out << "#alpha=" << format_double(report.alpha) << "\n";
  out << "#completed=" << report.completed << "\n";
  out << "#skipped=" << report.skipped << "\n";
  out << "target,truth,rejection_rate,coverage,avg_ci_length\n";
  for (std::size_t t = 0; t < report.targets.size(); ++t) {
    Eigen::Index l = report.targets[t];
    double truth = report.truth ? (*report.truth)(l)
                                : std::numeric_limits<double>::quiet_NaN();
    out << l + 1 << "," << format_double(truth) << ","
        << format_double(report.rejection_rate[t]) << ","
        << format_double(report.coverage[t]) << ","
        << format_double(report.avg_ci_length[t]) << "\n";
  }
}

void write_decisions_csv(std::ostream& out, const MetricsReport& report) {
  out << kSchemaLine << "\n";
  out << "replicate,ok,error,target,p_value,reject,ci_low,ci_high,covers\n";
  for (std::size_t r = 0; r < report.outcomes.size(); ++r) {
    const ReplicateOutcome& o = report.outcomes[r];
    if (!o.ok) {
      out << r << ",0," << quote_csv(o.error) << ",,,,,,\n";
      continue;
    }
    for (std::size_t t = 0; t < report.targets.size(); ++t) {
      const CoordinateInference& rec = o.records[t];
      out << r << ",1,," << rec.coordinate + 1 << ","
          << format_double(rec.p_value) << ","
          << (rec.p_value <= report.alpha ? 1 : 0) << ","
          << format_double(rec.ci_low) << "," << format_double(rec.ci_high)
          << ",";
      if (report.truth) {
        double b = (*report.truth)(rec.coordinate);
        out << ((rec.ci_low <= b && b <= rec.ci_high) ? 1 : 0);
      }
      out << "\n";
    }
  }
}

}  // namespace kdscore
