#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "kdscore/dataset.hpp"
#include "kdscore/inference.hpp"
#include "kdscore/simulation.hpp"
#include "kdscore/solver.hpp"

namespace kdscore {

// Comma-separated files with a `#schema=kdscore/1` first line.  Scalars
// print with enough digits to round-trip doubles exactly, so re-parsing a
// results file reproduces the in-memory records bit for bit.  Parse
// failures raise ParseError with the source name and 1-based line number.

inline constexpr const char* kSchemaLine = "#schema=kdscore/1";

std::string format_double(double v);
double parse_double(const std::string& field, const std::string& source,
                    std::size_t line, const std::string& column);

// Input data: header row names the columns; `A` (required, values in
// {-1, 1}) is the decision label, `Y` (optional) the outcome, `R`
// (optional) the observation indicator; every other column is a covariate
// and coordinates follow file order.
struct NamedDataset {
  Dataset data;
  std::vector<std::string> names;  // covariate names, file order
};

NamedDataset read_dataset_csv(std::istream& in, const std::string& source);
NamedDataset read_dataset_csv_file(const std::string& path);

struct FitOutput {
  std::vector<std::string> names;  // one per coordinate
  ErmFit fit;
};

void write_fit_csv(std::ostream& out, const FitOutput& fit);
FitOutput read_fit_csv(std::istream& in, const std::string& source);

struct TestOutput {
  std::vector<std::string> names;  // one per record
  std::vector<CoordinateInference> records;
  double bh_q = 0.0;           // > 0 when the rejection column is present
  std::vector<int> reject_bh;  // 0/1 per record when bh_q > 0
};

void write_test_csv(std::ostream& out, const TestOutput& results);
TestOutput read_test_csv(std::istream& in, const std::string& source);

struct BaselineOutput {
  std::vector<std::string> names;
  std::vector<BaselineRecord> records;
  double alpha = 0.05;
};

void write_baseline_csv(std::ostream& out, const BaselineOutput& results);

// Aggregate metrics and the flat per-replicate decision table they are
// recomputable from.  Runtime is intentionally absent: report files are
// byte-identical across reruns with the same seed.
void write_metrics_csv(std::ostream& out, const MetricsReport& report);
void write_decisions_csv(std::ostream& out, const MetricsReport& report);

}  // namespace kdscore
