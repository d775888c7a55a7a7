// SPDX-License-Identifier: Apache-2.0
#include "naepro/evalgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "naepro/error.hpp"
#include "naepro/layers.hpp"
#include "naepro/synthetic.hpp"

namespace naepro::evalgen {

using nlohmann::ordered_json;

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": predicted length " + std::to_string(a) + " vs reference " +
                         std::to_string(b));
  }
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

double linf(const geometry::Coordinates& x) { return x.cwiseAbs().maxCoeff(); }

}  // namespace

// ---- metrics ----------------------------------------------------------------------

double recovery(std::string_view predicted, const ProteinRecord& record, const std::vector<std::size_t>& visible) {
  require_same_length(predicted.size(), record.size(), "recovery");
  const std::vector<std::size_t> hidden = complement(visible, record.size());
  if (hidden.empty()) return 100.0;
  std::size_t hits = 0;
  for (std::size_t i : hidden) hits += predicted[i] == record.sequence[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(hidden.size());
}

double recovery(std::string_view predicted, const ProteinRecord& record) {
  return recovery(predicted, record, record.fragments);
}

double sequence_identity(std::string_view predicted, std::string_view reference) {
  require_same_length(predicted.size(), reference.size(), "identity");
  if (reference.empty()) return 100.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) hits += predicted[i] == reference[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(reference.size());
}

double perplexity(const Tensor& probabilities, const ProteinRecord& record, const std::vector<std::size_t>& visible) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != record.size() || probabilities.dim(1) != kNumAminoAcids) {
    throw DimensionError("perplexity: probabilities " + shape_string(probabilities.shape()) + " for " +
                         std::to_string(record.size()) + " residues");
  }
  const std::vector<std::size_t> hidden = complement(visible, record.size());
  if (hidden.empty()) return 1.0;
  double nll = 0.0;
  for (std::size_t i : hidden) {
    const auto a = static_cast<std::size_t>(amino_acid_index(record.sequence[i]));
    nll -= std::log(std::max(probabilities(i, a), model::kProbabilityFloor));
  }
  return std::exp(nll / static_cast<double>(hidden.size()));
}

Aggregate aggregate(std::vector<double> values) {
  Aggregate a;
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  a.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  return a;
}

EvalReport summarize(std::vector<RecordEval> records) {
  EvalReport r;
  std::vector<double> rec, ident, rmsd, ppl;
  for (const RecordEval& e : records) {
    rec.push_back(e.recovery);
    ident.push_back(e.identity);
    rmsd.push_back(e.rmsd);
    ppl.push_back(e.perplexity);
  }
  r.records = std::move(records);
  r.recovery = aggregate(rec);
  r.identity = aggregate(ident);
  r.rmsd = aggregate(rmsd);
  r.perplexity = aggregate(ppl);
  return r;
}

EvalReport evaluate(model::Model& model, std::span<const ProteinRecord> records) {
  std::vector<RecordEval> out;
  for (const ProteinRecord& r : records) {
    const model::Prediction p = model::predict(model, r);
    RecordEval e;
    e.id = r.id;
    e.recovery = recovery(p.sequence, r);
    e.identity = sequence_identity(p.sequence, r.sequence);
    e.rmsd = geometry::kabsch_rmsd(p.coords, r.coords);
    e.perplexity = perplexity(p.probabilities, r, r.fragments);
    out.push_back(std::move(e));
  }
  return summarize(std::move(out));
}

std::string EvalReport::to_json() const {
  ordered_json doc;
  ordered_json rows = ordered_json::array();
  for (const RecordEval& e : records) {
    rows.push_back({{"id", e.id},
                    {"recovery", e.recovery},
                    {"identity", e.identity},
                    {"rmsd", e.rmsd},
                    {"perplexity", e.perplexity}});
  }
  doc["records"] = std::move(rows);
  auto agg = [](const Aggregate& a) { return ordered_json{{"mean", a.mean}, {"median", a.median}}; };
  doc["summary"] = {{"recovery", agg(recovery)},
                    {"identity", agg(identity)},
                    {"rmsd", agg(rmsd)},
                    {"perplexity", agg(perplexity)}};
  return doc.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
  std::size_t id_width = 6;
  for (const RecordEval& e : records) id_width = std::max(id_width, e.id.size());
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %10s %10s %10s %11s\n", static_cast<int>(id_width), "id", "recovery",
                "identity", "rmsd", "perplexity");
  out << buf;
  auto row = [&](const std::string& id, double a, double b, double c, double d) {
    std::snprintf(buf, sizeof buf, "%-*s %10.2f %10.2f %10.3f %11.3f\n", static_cast<int>(id_width), id.c_str(), a, b,
                  c, d);
    out << buf;
  };
  for (const RecordEval& e : records) row(e.id, e.recovery, e.identity, e.rmsd, e.perplexity);
  row("mean", recovery.mean, identity.mean, rmsd.mean, perplexity.mean);
  row("median", recovery.median, identity.median, rmsd.median, perplexity.median);
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "id,recovery,identity,rmsd,perplexity\n";
  for (const RecordEval& e : records) {
    out << e.id << ',' << e.recovery << ',' << e.identity << ',' << e.rmsd << ',' << e.perplexity << '\n';
  }
  return out.str();
}

// ---- equivariance ---------------------------------------------------------------------

Deviation equivariance_deviation(model::Model& model, const ProteinRecord& record,
                                 const geometry::RigidTransform& transform, const geometry::Coordinates& x0) {
  ProteinRecord moved = record;
  moved.coords = transform.apply(record.coords);
  const model::Prediction a = model::predict(model, record, x0);
  const model::Prediction b = model::predict(model, moved, transform.apply(x0));
  Deviation d;
  d.coordinate = (transform.apply(a.coords) - b.coords).cwiseAbs().maxCoeff() / (1.0 + linf(a.coords));
  d.probability = max_abs_diff(a.probabilities, b.probabilities);
  return d;
}

CertifyReport certify_equivariance(model::Model& model, const CertifyOptions& options) {
  if (options.trials < 1) throw ConfigError("certification needs at least one trial");
  if (options.lengths.empty()) throw ConfigError("certification needs at least one protein length");
  Rng rng(options.seed);
  CertifyReport report;
  for (std::size_t t = 0; t < options.trials; ++t) {
    const std::size_t n = options.lengths[t % options.lengths.size()];
    const ProteinRecord r = synthetic_record("trial_" + std::to_string(t + 1), n, n / 4, rng);
    const geometry::Coordinates x0 = model::initial_coordinates(r, r.fragments, rng);
    for (bool proper : {true, false}) {
      const Deviation d = equivariance_deviation(model, r, geometry::random_rigid(rng, proper), x0);
      report.max_coordinate = std::max(report.max_coordinate, d.coordinate);
      report.max_probability = std::max(report.max_probability, d.probability);
    }
    ++report.trials;
  }
  report.pass = report.max_coordinate <= options.tolerance && report.max_probability <= options.probability_tolerance;
  return report;
}

std::string CertifyReport::to_json() const {
  ordered_json j;
  j["pass"] = pass;
  j["trials"] = trials;
  j["max_coordinate_deviation"] = max_coordinate;
  j["max_probability_deviation"] = max_probability;
  return j.dump();
}

// ---- benchmark -------------------------------------------------------------------------

BenchReport bench_graphs(const BenchOptions& options) {
  if (options.repetitions < 3) throw ConfigError("bench needs at least 3 repetitions");
  if (options.sizes.empty() || options.ks.empty()) throw ConfigError("bench grid is empty");
  for (std::size_t n : options.sizes)
    if (n < 2) throw ConfigError("bench sizes must be >= 2");
  for (std::size_t k : options.ks)
    if (k < 1) throw ConfigError("bench k values must be >= 1");

  ad::NoGradGuard no_grad;
  Rng rng(options.seed);
  auto params = layers::init_equivariant_params(options.d, layers::Variant::kDefault, rng);
  const auto bound = layers::bind_params(params);

  BenchReport report;
  for (std::size_t n : options.sizes) {
    const geometry::Coordinates xc = self_avoiding_chain(n, rng);
    Tensor h({n, options.d});
    for (double& v : h.values()) v = uniform(rng, -1.0, 1.0);
    const layers::LayerState state{ad::constant(h), ad::constant(geometry::to_tensor(xc))};
    for (std::size_t k : options.ks) {
      for (layers::Variant v : {layers::Variant::kDefault, layers::Variant::kNoKnn}) {
        const layers::NaelOptions opt{1, k, v};
        std::size_t edges = 0;
        auto run = [&] {
          layers::NaelTrace trace;
          const layers::LayerState out = layers::neighborhood_sublayer(state, bound, opt, &trace);
          edges = trace.graph.num_edges();
          if (!out.x.value().all_finite()) throw NumericError("benchmark produced non-finite coordinates");
        };
        run();  // warm-up
        std::vector<double> times;
        for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
          const auto start = std::chrono::steady_clock::now();
          run();
          times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        }
        BenchRow row;
        row.n = n;
        row.k = k;
        row.graph = v == layers::Variant::kNoKnn ? "full" : "knn";
        row.edges = edges;
        row.median_seconds = aggregate(times).median;
        row.repetitions = options.repetitions;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

std::string BenchReport::to_json() const {
  ordered_json rows_json = ordered_json::array();
  for (const BenchRow& r : rows) {
    rows_json.push_back({{"n", r.n},
                         {"k", r.k},
                         {"graph", r.graph},
                         {"edges", r.edges},
                         {"median_seconds", r.median_seconds},
                         {"repetitions", r.repetitions}});
  }
  return ordered_json{{"rows", std::move(rows_json)}}.dump(2) + "\n";
}

std::string BenchReport::to_text() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%6s %4s %5s %10s %14s\n", "N", "k", "graph", "edges", "median_ms");
  out << buf;
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%6zu %4zu %5s %10zu %14s\n", r.n, r.k, r.graph.c_str(), r.edges,
                  fixed(r.median_seconds * 1e3, 3).c_str());
    out << buf;
  }
  return out.str();
}

std::string BenchReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "n,k,graph,edges,median_seconds,repetitions\n";
  for (const BenchRow& r : rows) {
    out << r.n << ',' << r.k << ',' << r.graph << ',' << r.edges << ',' << r.median_seconds << ',' << r.repetitions
        << '\n';
  }
  return out.str();
}

}  // namespace naepro::evalgen
