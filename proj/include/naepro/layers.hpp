// SPDX-License-Identifier: Apache-2.0
//
// Building blocks of one neighborhood attentive equivariant layer (NAEL):
// a global multi-head attention sub-layer over the whole sequence followed
// by a kNN-restricted equivariant sub-layer that exchanges messages,
// moves Cα coordinates along relative differences and gates the aggregated
// messages back into the residue features. Also hosts the complete-graph
// EGCL layer used as a reference point.
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

#include "naepro/autodiff.hpp"
#include "naepro/geometry.hpp"
#include "naepro/params.hpp"

namespace naepro::layers {

enum class Variant {
  kDefault,
  kNoGate,   // plain FFN instead of the sigmoid gate in the residue update
  kNoKnn,    // complete residue graph instead of k nearest neighbours
  kNoMffn,   // neighbour self-attention instead of the concat-FFN message
  kNoMcffn,  // as kNoMffn, and the attention weight is the coordinate scalar
};

inline constexpr Variant kAllVariants[] = {Variant::kDefault, Variant::kNoGate, Variant::kNoKnn, Variant::kNoMffn,
                                           Variant::kNoMcffn};

std::string_view to_string(Variant v);
/// Accepts the names produced by to_string ("default", "wo-gate", ...).
Variant parse_variant(std::string_view name);

inline bool uses_attention_messages(Variant v) { return v == Variant::kNoMffn || v == Variant::kNoMcffn; }

template <class T>
struct AttentionSubLayerParams {
  Linear<T> query, key, value, output;  // d -> d
  Linear<T> ffn_in;                     // d -> 4d
  Linear<T> ffn_out;                    // 4d -> d
  NormParams<T> norm_attention, norm_ffn;
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, AttentionSubLayerParams<T>&... p) {
  visit(join_name(prefix, "query"), f, p.query...);
  visit(join_name(prefix, "key"), f, p.key...);
  visit(join_name(prefix, "value"), f, p.value...);
  visit(join_name(prefix, "output"), f, p.output...);
  visit(join_name(prefix, "ffn_in"), f, p.ffn_in...);
  visit(join_name(prefix, "ffn_out"), f, p.ffn_out...);
  visit(join_name(prefix, "norm_attention"), f, p.norm_attention...);
  visit(join_name(prefix, "norm_ffn"), f, p.norm_ffn...);
}

template <class T>
struct EquivariantSubLayerParams {
  // concat-FFN messages: (2d+1) -> d -> d, plus the neighbour score row W_a, b_a
  Linear<T> message_in, message_out;
  Linear<T> score;  // [d x 1], [1]
  // neighbour self-attention messages (kNoMffn / kNoMcffn)
  Linear<T> neighbor_query;          // d -> d
  Linear<T> neighbor_key, neighbor_value;  // (d+1) -> d
  // per-edge coordinate scalar: d -> d -> 1 (absent for kNoMcffn)
  Linear<T> coord_in, coord_out;
  // residue update FFN d -> d -> d (gate, or the plain update for kNoGate)
  Linear<T> update_in, update_out;
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, EquivariantSubLayerParams<T>&... p) {
  visit(join_name(prefix, "message_in"), f, p.message_in...);
  visit(join_name(prefix, "message_out"), f, p.message_out...);
  visit(join_name(prefix, "score"), f, p.score...);
  visit(join_name(prefix, "neighbor_query"), f, p.neighbor_query...);
  visit(join_name(prefix, "neighbor_key"), f, p.neighbor_key...);
  visit(join_name(prefix, "neighbor_value"), f, p.neighbor_value...);
  visit(join_name(prefix, "coord_in"), f, p.coord_in...);
  visit(join_name(prefix, "coord_out"), f, p.coord_out...);
  visit(join_name(prefix, "update_in"), f, p.update_in...);
  visit(join_name(prefix, "update_out"), f, p.update_out...);
}

template <class T>
struct NaelParams {
  AttentionSubLayerParams<T> attention;
  EquivariantSubLayerParams<T> neighborhood;
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, NaelParams<T>&... p) {
  visit(join_name(prefix, "attention"), f, p.attention...);
  visit(join_name(prefix, "neighborhood"), f, p.neighborhood...);
}

template <class T>
struct EgclParams {
  Linear<T> edge_in, edge_out;    // phi_e: (2d+1) -> d -> d
  Linear<T> infer;                // phi_inf: d -> 1
  Linear<T> coord_in, coord_out;  // phi_x: (2d+1) -> d -> 1
  Linear<T> node_in, node_out;    // phi_h: 2d -> d -> d
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, EgclParams<T>&... p) {
  visit(join_name(prefix, "edge_in"), f, p.edge_in...);
  visit(join_name(prefix, "edge_out"), f, p.edge_out...);
  visit(join_name(prefix, "infer"), f, p.infer...);
  visit(join_name(prefix, "coord_in"), f, p.coord_in...);
  visit(join_name(prefix, "coord_out"), f, p.coord_out...);
  visit(join_name(prefix, "node_in"), f, p.node_in...);
  visit(join_name(prefix, "node_out"), f, p.node_out...);
}

// ---- initialisation ----------------------------------------------------------

/// Weight and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
Linear<Tensor> init_linear(std::size_t in, std::size_t out, Rng& rng);
Linear<Tensor> zero_linear(std::size_t in, std::size_t out);

AttentionSubLayerParams<Tensor> init_attention_params(std::size_t d, Rng& rng);
/// The coordinate head's last layer starts at zero so fresh models leave
/// coordinates where the initial layout put them.
EquivariantSubLayerParams<Tensor> init_equivariant_params(std::size_t d, Variant variant, Rng& rng);
EgclParams<Tensor> init_egcl_params(std::size_t d, Rng& rng);

/// Binds stored weights as differentiable leaves (empty blocks stay unbound).
template <template <class> class P>
P<ad::Var> bind_params(P<Tensor>& stored) {
  P<ad::Var> bound;
  auto f = [](const std::string&, Tensor& t, ad::Var& v) {
    if (t.size() > 0) v = ad::parameter(t);
  };
  visit("", f, stored, bound);
  return bound;
}

// ---- forward -----------------------------------------------------------------

struct LayerState {
  ad::Var h;  // N x d
  ad::Var x;  // N x 3
};

/// Neighbour messages of one layer, one row per edge in graph order.
struct Messages {
  ad::Var raw;       // m_ij before weighting, E x d
  ad::Var weights;   // w_ij, E x 1; sums to 1 over each residue's neighbours
  ad::Var weighted;  // m_ij = w_ij * raw, E x d
};

struct NaelOptions {
  std::size_t heads = 4;
  std::size_t k = 30;
  Variant variant = Variant::kDefault;
};

/// Everything one NAEL produced, for inspection and tests.
struct NaelTrace {
  ad::Var h_half;  // after the attention sub-layer
  geometry::NeighborGraph graph;
  Messages messages;
};

ad::Var linear(const ad::Var& x, const Linear<ad::Var>& p);

/// h~ = LN(MHA(h) + h);  out = LN(FFN(h~) + h~). No masking: all residues
/// attend to all residues.
ad::Var attention_sublayer(const ad::Var& h, const AttentionSubLayerParams<ad::Var>& p, std::size_t heads);

/// Builds the neighbour graph a layer uses for coordinates x.
geometry::NeighborGraph layer_graph(const ad::Var& x, std::size_t k, Variant variant);

/// Softmax of per-edge scores (E x 1) over each residue's neighbour list.
ad::Var neighbor_softmax(const ad::Var& scores, const geometry::NeighborGraph& graph);

Messages message_update(const ad::Var& h, const ad::Var& x, const geometry::NeighborGraph& graph,
                        const EquivariantSubLayerParams<ad::Var>& p, Variant variant);

/// x_i + sum_j (x_i - x_j) * s_ij with s_ij = FFN(m_ij) (or w_ij for kNoMcffn).
ad::Var coordinate_update(const ad::Var& x, const Messages& m, const geometry::NeighborGraph& graph,
                          const EquivariantSubLayerParams<ad::Var>& p, Variant variant);

/// c_i = sum_j m_ij;  h_i + sigmoid(FFN(c_i)) ⊙ c_i  (or h_i + FFN(c_i) for kNoGate).
ad::Var residue_update(const ad::Var& h, const Messages& m, const geometry::NeighborGraph& graph,
                       const EquivariantSubLayerParams<ad::Var>& p, Variant variant);

/// The neighborhood equivariant sub-layer alone: graph, messages, coordinate
/// and residue updates.
LayerState neighborhood_sublayer(const LayerState& in, const EquivariantSubLayerParams<ad::Var>& p,
                                 const NaelOptions& options, NaelTrace* trace = nullptr);

LayerState nael_forward(const LayerState& in, const NaelParams<ad::Var>& p, const NaelOptions& options,
                        NaelTrace* trace = nullptr);

/// One EGCL layer on the complete graph; edge attributes are omitted.
LayerState egcl_forward(const LayerState& in, const EgclParams<ad::Var>& p);

}  // namespace naepro::layers
