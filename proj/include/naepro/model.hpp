// SPDX-License-Identifier: Apache-2.0
//
// The full network: residue / mask embeddings plus positional encoding, L
// stacked NAELs, and an output head tied to the residue embedding matrix.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "naepro/autodiff.hpp"
#include "naepro/layers.hpp"
#include "naepro/record.hpp"

namespace naepro::model {

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t k = 30;
  double lambda_half = 1.0;
  layers::Variant variant = layers::Variant::kDefault;
  bool freeze_fragments = false;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct ModelWeights {
  T residue_embedding;  // [20 x d], also the output projection
  T mask_embedding;     // [1 x d]
  std::vector<layers::NaelParams<T>> layers;
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, ModelWeights<T>&... w) {
  f(join_name(prefix, "residue_embedding"), w.residue_embedding...);
  f(join_name(prefix, "mask_embedding"), w.mask_embedding...);
  const std::size_t count = std::get<0>(std::tie(w...)).layers.size();
  for (std::size_t l = 0; l < count; ++l) {
    layers::visit(join_name(prefix, "layers." + std::to_string(l)), f, w.layers[l]...);
  }
}

struct Model {
  ModelConfig config;
  ModelWeights<Tensor> weights;

  /// Fresh random weights drawn from config.seed.
  static Model create(const ModelConfig& config);
  std::size_t parameter_count();
};

ModelWeights<ad::Var> bind(ModelWeights<Tensor>& weights);

/// Sinusoidal encoding, [n x d]; even columns sin, odd columns cos.
Tensor positional_encoding(std::size_t n, std::size_t d);

/// Seed for a record's starting layout: the model seed mixed with a hash of
/// the record id, so every protein keeps the same x⁰ across epochs.
std::uint64_t layout_seed(std::uint64_t seed, std::string_view record_id);

/// Starting coordinates with `visible` residues pinned to the record.
geometry::Coordinates initial_coordinates(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                                          Rng& rng);
geometry::Coordinates initial_coordinates(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                                          std::uint64_t seed);

/// h⁰ rows: residue embedding for visible residues, the mask embedding
/// elsewhere, plus positional encoding.
ad::Var embed_inputs(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                     const ModelWeights<ad::Var>& w);

struct ForwardGraph {
  ad::Var logits;     // N x 20
  ad::Var log_probs;  // N x 20
  ad::Var coords;     // N x 3
};

/// `visible` replaces the record's fragment set (pseudo fragments during
/// training); `x0` is the starting layout.
ForwardGraph forward_graph(const ProteinRecord& record, const std::vector<std::size_t>& visible,
                           const ModelWeights<ad::Var>& w, const ModelConfig& config,
                           const geometry::Coordinates& x0);

struct Prediction {
  Tensor logits;         // N x 20
  Tensor probabilities;  // N x 20
  geometry::Coordinates coords;
  std::string sequence;
};

Prediction predict(Model& model, const ProteinRecord& record);
Prediction predict(Model& model, const ProteinRecord& record, const geometry::Coordinates& x0);

/// Greedy per-position argmax (lowest index on ties); visible residues are
/// copied from the record.
std::string decode(const Tensor& probabilities, const ProteinRecord& record, const std::vector<std::size_t>& visible);

inline constexpr double kProbabilityFloor = 1e-12;

struct LossTerms {
  ad::Var total;
  double sequence_nll = 0.0;
  double coordinate = 0.0;
  std::size_t clamped = 0;  // log-probabilities floored at log(1e-12)
};

/// −Σ log P(s_i) + λ/2 Σ ||x_i − x_i^L||² over residues outside `visible`.
LossTerms loss_graph(const ForwardGraph& graph, const ProteinRecord& record, const std::vector<std::size_t>& visible,
                     double lambda_half);

double loss(const Prediction& pred, const ProteinRecord& record, const std::vector<std::size_t>& visible,
            double lambda_half);

/// Process-wide count of floored log-probabilities.
std::size_t clamp_warnings() noexcept;

// ---- checkpoints ----------------------------------------------------------------------
// JSON document; every float is a C99 hex-float string, so a save/load cycle
// reproduces each double bit for bit.

std::string serialize_checkpoint(Model& model);
Model parse_checkpoint(std::string_view text, const std::string& source = "checkpoint");
void save_checkpoint(Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace naepro::model
