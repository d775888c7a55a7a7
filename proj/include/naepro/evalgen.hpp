// SPDX-License-Identifier: Apache-2.0
//
// Evaluation of generated proteins, the equivariance certification harness
// and the kNN versus complete-graph timing benchmark.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "naepro/model.hpp"

namespace naepro::evalgen {

// ---- metrics -------------------------------------------------------------------

/// Percentage of residues outside `visible` whose letter matches; 100 when
/// every residue is visible.
double recovery(std::string_view predicted, const ProteinRecord& record, const std::vector<std::size_t>& visible);
double recovery(std::string_view predicted, const ProteinRecord& record);

/// Percentage of all positions that match.
double sequence_identity(std::string_view predicted, std::string_view reference);

/// exp(mean −log P(s_i)) over residues outside `visible`, probabilities
/// floored at 1e-12; 1 when every residue is visible.
double perplexity(const Tensor& probabilities, const ProteinRecord& record, const std::vector<std::size_t>& visible);

struct RecordEval {
  std::string id;
  double recovery = 0.0;
  double identity = 0.0;
  double rmsd = 0.0;
  double perplexity = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double median = 0.0;
};

Aggregate aggregate(std::vector<double> values);

struct EvalReport {
  std::vector<RecordEval> records;
  Aggregate recovery, identity, rmsd, perplexity;

  std::string to_json() const;
  std::string to_text() const;
  std::string to_csv() const;
};

EvalReport evaluate(model::Model& model, std::span<const ProteinRecord> records);
EvalReport summarize(std::vector<RecordEval> records);

// ---- equivariance certification ----------------------------------------------------

struct Deviation {
  double coordinate = 0.0;  // ||f(Rx+t) − (R f(x) + t)||∞ / (1 + ||f(x)||∞)
  double probability = 0.0;  // max |P(Rx+t) − P(x)|
};

/// Runs the model on `record` from layout x0 and on the moved record from
/// transform(x0), then compares.
Deviation equivariance_deviation(model::Model& model, const ProteinRecord& record,
                                 const geometry::RigidTransform& transform, const geometry::Coordinates& x0);

struct CertifyOptions {
  std::size_t trials = 20;
  double tolerance = 1e-7;              // coordinate deviation (relative)
  double probability_tolerance = 1e-8;  // probability deviation (absolute)
  std::vector<std::size_t> lengths{8, 32};
  std::uint64_t seed = 0;
};

struct CertifyReport {
  bool pass = false;
  std::size_t trials = 0;  // each trial checks one proper and one improper transform
  double max_coordinate = 0.0;
  double max_probability = 0.0;

  std::string to_json() const;
};

/// Random synthetic records, random rigid motions (proper and improper),
/// replayed starting layout in both frames.
CertifyReport certify_equivariance(model::Model& model, const CertifyOptions& options);

// ---- benchmark --------------------------------------------------------------------

struct BenchRow {
  std::size_t n = 0;
  std::size_t k = 0;
  std::string graph;  // "knn" or "full"
  std::size_t edges = 0;
  double median_seconds = 0.0;
  std::size_t repetitions = 0;
};

struct BenchOptions {
  std::vector<std::size_t> sizes{50, 100, 200, 500, 1000};
  std::vector<std::size_t> ks{30};
  std::size_t d = 32;
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  std::string to_json() const;
  std::string to_text() const;
  std::string to_csv() const;
};

/// Times the neighbourhood sub-layer forward (graph construction included)
/// on the kNN graph and on the complete graph: one discarded warm-up run,
/// then the median of `repetitions` runs on a monotonic clock.
BenchReport bench_graphs(const BenchOptions& options);

}  // namespace naepro::evalgen
