// SPDX-License-Identifier: Apache-2.0
#include "naepro/model.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>

#include "json.hpp"
#include "naepro/error.hpp"
#include "naepro/fileio.hpp"

namespace naepro::model {

using ad::Var;
using nlohmann::json;

namespace {

std::atomic<std::size_t> g_clamp_warnings{0};

constexpr std::string_view kCheckpointFormat = "naepro-checkpoint";
constexpr int kCheckpointVersion = 1;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

std::string hex_float(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_float(const std::string& s, const std::string& where) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (s.empty() || end != begin + s.size() || !std::isfinite(v)) {
    throw ParseError(where, 0, "bad number '" + s + "'");
  }
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{{"L", c.layers},
              {"d", c.d},
              {"H", c.heads},
              {"k", c.k},
              {"lambda_half", hex_float(c.lambda_half)},
              {"variant", std::string(layers::to_string(c.variant))},
              {"freeze_fragments", c.freeze_fragments},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j, const std::string& source) {
  ModelConfig c;
  try {
    c.layers = j.at("L").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
    c.heads = j.at("H").get<std::size_t>();
    c.k = j.at("k").get<std::size_t>();
    c.lambda_half = parse_hex_float(j.at("lambda_half").get<std::string>(), source);
    c.variant = layers::parse_variant(j.at("variant").get<std::string>());
    c.freeze_fragments = j.at("freeze_fragments").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(source, 0, std::string("bad config block: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  if (layers < 1) throw ConfigError("L must be >= 1");
  if (heads < 1) throw ConfigError("H must be >= 1");
  if (d < heads) throw ConfigError("d must be >= H");
  if (d % heads != 0) throw ConfigError("d (" + std::to_string(d) + ") must be divisible by H (" +
                                        std::to_string(heads) + ")");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (!(lambda_half >= 0.0) || !std::isfinite(lambda_half)) throw ConfigError("lambda_half must be finite and >= 0");
}

Model Model::create(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Model m;
  m.config = config;
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  m.weights.residue_embedding = uniform_tensor({kNumAminoAcids, config.d}, bound, rng);
  m.weights.mask_embedding = uniform_tensor({1, config.d}, bound, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    layers::NaelParams<Tensor> p;
    p.attention = layers::init_attention_params(config.d, rng);
    p.neighborhood = layers::init_equivariant_params(config.d, config.variant, rng);
    m.weights.layers.push_back(std::move(p));
  }
  return m;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  auto f = [&](const std::string&, Tensor& t) { n += t.size(); };
  visit("", f, weights);
  return n;
}

ModelWeights<Var> bind(ModelWeights<Tensor>& weights) {
  ModelWeights<Var> bound;
  bound.layers.resize(weights.layers.size());
  auto f = [](const std::string&, Tensor& t, Var& v) {
    if (t.size() > 0) v = ad::parameter(t);
  };
  visit("", f, weights, bound);
  return bound;
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  Tensor pe({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(i) * freq;
      pe(i, c) = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

std::uint64_t layout_seed(std::uint64_t seed, std::string_view record_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : record_id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

geometry::Coordinates initial_coordinates(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                                          Rng& rng) {
  return geometry::init_coordinates(visible, record.fragment_coords(visible), record.size(), rng);
}

geometry::Coordinates initial_coordinates(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                                          std::uint64_t seed) {
  Rng rng(layout_seed(seed, record.id));
  return initial_coordinates(record, visible, rng);
}

Var embed_inputs(const ProteinRecord& record, const std::vector<std::size_t>& visible, const ModelWeights<Var>& w) {
  const std::size_t n = record.size();
  const std::size_t d = w.residue_embedding.value().dim(1);
  std::vector<std::size_t> letters(n, 0);
  Tensor shown({n, 1}, 0.0);
  Tensor hidden({n, 1}, 1.0);
  for (std::size_t i : visible) {
    if (i >= n) throw ValidationError("fragment index " + std::to_string(i + 1) + " outside 1.." + std::to_string(n));
    const int a = amino_acid_index(record.sequence[i]);
    if (a < 0) {
      throw ValidationError("unknown residue letter '" + std::string(1, record.sequence[i]) + "' at position " +
                            std::to_string(i + 1));
    }
    letters[i] = static_cast<std::size_t>(a);
    shown[i] = 1.0;
    hidden[i] = 0.0;
  }
  const std::vector<std::size_t> zeros(n, 0);
  const Var residues = ad::gather_rows(w.residue_embedding, letters) * ad::constant(std::move(shown));
  const Var masks = ad::gather_rows(w.mask_embedding, zeros) * ad::constant(std::move(hidden));
  return residues + masks + ad::constant(positional_encoding(n, d));
}

ForwardGraph forward_graph(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                           const ModelWeights<Var>& w, const ModelConfig& config, const geometry::Coordinates& x0) {
  const std::size_t n = record.size();
  if (static_cast<std::size_t>(x0.rows()) != n) {
    throw DimensionError("starting layout has " + std::to_string(x0.rows()) + " rows for " + std::to_string(n) +
                         " residues");
  }
  layers::LayerState state{embed_inputs(record, visible, w), ad::constant(geometry::to_tensor(x0))};

  Var keep, anchor;
  if (config.freeze_fragments && !visible.empty()) {
    Tensor k({n, 1}, 1.0);
    Tensor a({n, 3}, 0.0);
    for (std::size_t i : visible) {
      k[i] = 0.0;
      for (std::size_t c = 0; c < 3; ++c) a(i, c) = x0(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
    keep = ad::constant(std::move(k));
    anchor = ad::constant(std::move(a));
  }

  const layers::NaelOptions options{config.heads, config.k, config.variant};
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    state = layers::nael_forward(state, w.layers[l], options);
    if (keep.defined()) state.x = state.x * keep + anchor;
    if (!state.h.value().all_finite() || !state.x.value().all_finite()) {
      throw NumericError("non-finite hidden state or coordinates after layer " + std::to_string(l + 1));
    }
  }
  ForwardGraph g;
  g.logits = ad::matmul(state.h, ad::transpose(w.residue_embedding));
  g.log_probs = ad::log_softmax(g.logits);
  g.coords = state.x;
  return g;
}

std::string decode(const Tensor& probabilities, const ProteinRecord& record, const std::vector<std::size_t>& visible) {
  const std::size_t n = record.size();
  if (probabilities.rank() != 2 || probabilities.dim(0) != n || probabilities.dim(1) != kNumAminoAcids) {
    throw DimensionError("decode: probabilities " + shape_string(probabilities.shape()) + " for " +
                         std::to_string(n) + " residues");
  }
  std::string out(n, '?');
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < kNumAminoAcids; ++a) {
      if (probabilities(i, a) > probabilities(i, best)) best = a;
    }
    out[i] = kAminoAcids[best];
  }
  for (std::size_t i : visible) out[i] = record.sequence[i];
  return out;
}

namespace {
Prediction finish(const ForwardGraph& g, const ProteinRecord& record, const std::vector<std::size_t>& visible) {
  Prediction p;
  p.logits = g.logits.value();
  p.probabilities = ad::softmax(ad::constant(p.logits), 1).value();
  p.coords = geometry::from_tensor(g.coords.value());
  p.sequence = decode(p.probabilities, record, visible);
  return p;
}
}  // namespace

Prediction predict(Model& model, const ProteinRecord& record) {
  return predict(model, record, initial_coordinates(record, record.fragments, model.config.seed));
}

Prediction predict(Model& model, const ProteinRecord& record, const geometry::Coordinates& x0) {
  ad::NoGradGuard no_grad;
  const ModelWeights<Var> w = bind(model.weights);
  return finish(forward_graph(record, record.fragments, w, model.config, x0), record, record.fragments);
}

LossTerms loss_graph(const ForwardGraph& graph, const ProteinRecord& record, const std::vector<std::size_t>& visible,
                     double lambda_half) {
  LossTerms out;
  const std::vector<std::size_t> rows = complement(visible, record.size());
  if (rows.empty()) {
    out.total = ad::constant(Tensor::scalar(0.0));
    return out;
  }
  std::vector<std::size_t> cols(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) cols[r] = static_cast<std::size_t>(amino_acid_index(record.sequence[rows[r]]));

  const double floor = std::log(kProbabilityFloor);
  const Var picked = ad::take(graph.log_probs, rows, cols);
  for (double v : picked.value().values()) {
    if (v < floor) ++out.clamped;
  }
  if (out.clamped > 0) g_clamp_warnings += out.clamped;
  const Var nll = ad::scale(ad::sum(ad::clamp_min(picked, floor)), -1.0);

  Tensor target({rows.size(), 3});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < 3; ++c)
      target(r, c) = record.coords(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(c));
  const Var coord = ad::sum(ad::square(ad::gather_rows(graph.coords, rows) - ad::constant(std::move(target))));

  out.sequence_nll = nll.value().item();
  out.coordinate = coord.value().item();
  out.total = nll + ad::scale(coord, lambda_half);
  return out;
}

double loss(const Prediction& pred, const ProteinRecord& record, const std::vector<std::size_t>& visible,
            double lambda_half) {
  double nll = 0.0, coord = 0.0;
  for (std::size_t i : complement(visible, record.size())) {
    const auto a = static_cast<std::size_t>(amino_acid_index(record.sequence[i]));
    nll -= std::log(std::max(pred.probabilities(i, a), kProbabilityFloor));
    coord += (pred.coords.row(static_cast<Eigen::Index>(i)) - record.coords.row(static_cast<Eigen::Index>(i))).squaredNorm();
  }
  return nll + lambda_half * coord;
}

std::size_t clamp_warnings() noexcept { return g_clamp_warnings.load(); }

// ---- checkpoints ------------------------------------------------------------------

std::string serialize_checkpoint(Model& model) {
  json params = json::object();
  auto f = [&](const std::string& name, Tensor& t) {
    if (t.size() == 0) return;
    json data = json::array();
    for (double v : t.values()) data.push_back(hex_float(v));
    params[name] = json{{"shape", t.shape()}, {"data", std::move(data)}};
  };
  visit("", f, model.weights);
  const json doc{{"format", kCheckpointFormat},
                 {"version", kCheckpointVersion},
                 {"config", config_to_json(model.config)},
                 {"parameters", std::move(params)}};
  return doc.dump() + "\n";
}

Model parse_checkpoint(std::string_view text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source, 0, std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw ParseError(source, 0, "not a naepro checkpoint");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw ParseError(source, 0, "unsupported checkpoint version " + doc.value("version", json()).dump());
  }
  if (!doc.contains("config") || !doc.contains("parameters") || !doc["parameters"].is_object()) {
    throw ParseError(source, 0, "checkpoint lacks config or parameters");
  }
  Model model = Model::create(config_from_json(doc["config"], source));
  const json& params = doc["parameters"];
  std::set<std::string> seen;
  auto f = [&](const std::string& name, Tensor& t) {
    if (t.size() == 0) return;
    if (!params.contains(name)) throw ParseError(source, 0, "missing parameter '" + name + "'");
    const json& entry = params[name];
    Shape shape;
    try {
      shape = entry.at("shape").get<Shape>();
    } catch (const json::exception&) {
      throw ParseError(source, 0, "parameter '" + name + "' has no valid shape");
    }
    if (shape != t.shape()) {
      throw ParseError(source, 0, "parameter '" + name + "' has shape " + shape_string(shape) + ", expected " +
                                      shape_string(t.shape()));
    }
    const json& data = entry.contains("data") ? entry["data"] : json();
    if (!data.is_array() || data.size() != t.size()) {
      throw ParseError(source, 0, "parameter '" + name + "' has the wrong number of values");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!data[i].is_string()) throw ParseError(source, 0, "parameter '" + name + "' values must be hex-float strings");
      t[i] = parse_hex_float(data[i].get<std::string>(), source);
    }
    seen.insert(name);
  };
  visit("", f, model.weights);
  for (const auto& [name, _] : params.items()) {
    if (!seen.count(name)) throw ParseError(source, 0, "unexpected parameter '" + name + "'");
  }
  return model;
}

void save_checkpoint(Model& model, const std::string& path) { write_file_atomic(path, serialize_checkpoint(model)); }

Model load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path), path); }

}  // namespace naepro::model
