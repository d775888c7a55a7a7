// SPDX-License-Identifier: Apache-2.0
#include "naepro/layers.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "naepro/error.hpp"

namespace naepro::layers {

using ad::Var;

namespace {

constexpr std::string_view kVariantNames[] = {"default", "wo-gate", "wo-knn", "wo-mffn", "wo-mcffn"};

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

Var ffn2(const Var& x, const Linear<Var>& first, const Linear<Var>& second, bool relu_hidden) {
  const Var hidden = linear(x, first);
  return linear(relu_hidden ? ad::relu(hidden) : ad::silu(hidden), second);
}

struct EdgeGeometry {
  std::vector<std::size_t> src;
  ad::Var diff;  // x_i - x_j, E x 3
  ad::Var dist;  // ||x_i - x_j||, E x 1
};

EdgeGeometry edge_geometry(const ad::Var& x, const geometry::NeighborGraph& graph) {
  EdgeGeometry g;
  g.src = graph.sources();
  g.diff = ad::gather_rows(x, g.src) - ad::gather_rows(x, graph.neighbors);
  g.dist = ad::row_norm(g.diff);
  return g;
}

void check_graph(const ad::Var& h, const geometry::NeighborGraph& graph) {
  if (graph.degree == 0) throw ValidationError("neighbour graph has empty neighbour lists");
  if (graph.num_nodes != h.value().dim(0)) {
    throw DimensionError("graph over " + std::to_string(graph.num_nodes) + " residues used with " +
                         std::to_string(h.value().dim(0)) + " hidden rows");
  }
}

}  // namespace

std::string_view to_string(Variant v) { return kVariantNames[static_cast<int>(v)]; }

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected default, wo-gate, wo-knn, wo-mffn or wo-mcffn)");
}

Linear<Tensor> init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear<Tensor> p;
  p.weight = uniform_tensor({in, out}, bound, rng);
  p.bias = uniform_tensor({out}, bound, rng);
  return p;
}

Linear<Tensor> zero_linear(std::size_t in, std::size_t out) { return {Tensor({in, out}, 0.0), Tensor({out}, 0.0)}; }

namespace {
NormParams<Tensor> unit_norm(std::size_t d) { return {Tensor({d}, 1.0), Tensor({d}, 0.0)}; }
}  // namespace

AttentionSubLayerParams<Tensor> init_attention_params(std::size_t d, Rng& rng) {
  AttentionSubLayerParams<Tensor> p;
  p.query = init_linear(d, d, rng);
  p.key = init_linear(d, d, rng);
  p.value = init_linear(d, d, rng);
  p.output = init_linear(d, d, rng);
  p.ffn_in = init_linear(d, 4 * d, rng);
  p.ffn_out = init_linear(4 * d, d, rng);
  p.norm_attention = unit_norm(d);
  p.norm_ffn = unit_norm(d);
  return p;
}

EquivariantSubLayerParams<Tensor> init_equivariant_params(std::size_t d, Variant variant, Rng& rng) {
  EquivariantSubLayerParams<Tensor> p;
  if (uses_attention_messages(variant)) {
    p.neighbor_query = init_linear(d, d, rng);
    p.neighbor_key = init_linear(d + 1, d, rng);
    p.neighbor_value = init_linear(d + 1, d, rng);
  } else {
    p.message_in = init_linear(2 * d + 1, d, rng);
    p.message_out = init_linear(d, d, rng);
    p.score = init_linear(d, 1, rng);
  }
  if (variant != Variant::kNoMcffn) {
    p.coord_in = init_linear(d, d, rng);
    p.coord_out = zero_linear(d, 1);
  }
  p.update_in = init_linear(d, d, rng);
  p.update_out = init_linear(d, d, rng);
  return p;
}

EgclParams<Tensor> init_egcl_params(std::size_t d, Rng& rng) {
  EgclParams<Tensor> p;
  p.edge_in = init_linear(2 * d + 1, d, rng);
  p.edge_out = init_linear(d, d, rng);
  p.infer = init_linear(d, 1, rng);
  p.coord_in = init_linear(2 * d + 1, d, rng);
  p.coord_out = zero_linear(d, 1);
  p.node_in = init_linear(2 * d, d, rng);
  p.node_out = init_linear(d, d, rng);
  return p;
}

Var linear(const Var& x, const Linear<Var>& p) {
  const Var y = ad::matmul(x, p.weight);
  return p.bias.defined() ? y + p.bias : y;
}

Var attention_sublayer(const Var& h, const AttentionSubLayerParams<Var>& p, std::size_t heads) {
  const std::size_t d = h.value().dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = linear(h, p.query);
  const Var k = linear(h, p.key);
  const Var v = linear(h, p.value);

  std::vector<Var> per_head;
  per_head.reserve(heads);
  for (std::size_t a = 0; a < heads; ++a) {
    const Var qa = ad::slice_cols(q, a * dh, (a + 1) * dh);
    const Var ka = ad::slice_cols(k, a * dh, (a + 1) * dh);
    const Var va = ad::slice_cols(v, a * dh, (a + 1) * dh);
    const Var scores = ad::scale(ad::matmul(qa, ad::transpose(ka)), inv_sqrt);
    per_head.push_back(ad::matmul(ad::softmax(scores, 1), va));
  }
  const Var mha = linear(heads == 1 ? per_head.front() : ad::concat_cols(per_head), p.output);
  const Var mid = ad::layernorm(mha + h, p.norm_attention.gain, p.norm_attention.bias);
  const Var ffn = ffn2(mid, p.ffn_in, p.ffn_out, /*relu_hidden=*/true);
  return ad::layernorm(ffn + mid, p.norm_ffn.gain, p.norm_ffn.bias);
}

geometry::NeighborGraph layer_graph(const Var& x, std::size_t k, Variant variant) {
  const geometry::Coordinates xc = geometry::from_tensor(x.value());
  return variant == Variant::kNoKnn ? geometry::complete_graph(xc) : geometry::knn(xc, k);
}

Var neighbor_softmax(const Var& scores, const geometry::NeighborGraph& graph) {
  const Var grouped = ad::reshape(scores, {graph.num_nodes, graph.degree});
  return ad::reshape(ad::softmax(grouped, 1), {graph.num_edges(), 1});
}

Messages message_update(const Var& h, const Var& x, const geometry::NeighborGraph& graph,
                        const EquivariantSubLayerParams<Var>& p, Variant variant) {
  check_graph(h, graph);
  const EdgeGeometry eg = edge_geometry(x, graph);
  Messages m;
  if (uses_attention_messages(variant)) {
    const std::size_t d = h.value().dim(1);
    const Var query = ad::gather_rows(linear(h, p.neighbor_query), eg.src);
    const Var key = ad::pair_linear(h, eg.dist, {}, graph.neighbors, p.neighbor_key.weight, p.neighbor_key.bias);
    m.raw = ad::pair_linear(h, eg.dist, {}, graph.neighbors, p.neighbor_value.weight, p.neighbor_value.bias);
    const Var scores = ad::scale(ad::sum_last(query * key), 1.0 / std::sqrt(static_cast<double>(d)));
    m.weights = neighbor_softmax(scores, graph);
  } else {
    const Var hidden =
        ad::silu(ad::pair_linear(h, eg.dist, eg.src, graph.neighbors, p.message_in.weight, p.message_in.bias));
    m.raw = ad::silu(linear(hidden, p.message_out));
    m.weights = neighbor_softmax(linear(m.raw, p.score), graph);
  }
  m.weighted = m.weights * m.raw;
  return m;
}

Var coordinate_update(const Var& x, const Messages& m, const geometry::NeighborGraph& graph,
                      const EquivariantSubLayerParams<Var>& p, Variant variant) {
  const EdgeGeometry eg = edge_geometry(x, graph);
  const Var scalar = variant == Variant::kNoMcffn ? m.weights : ffn2(m.weighted, p.coord_in, p.coord_out, false);
  return x + ad::group_sum(eg.diff * scalar, graph.degree);
}

Var residue_update(const Var& h, const Messages& m, const geometry::NeighborGraph& graph,
                   const EquivariantSubLayerParams<Var>& p, Variant variant) {
  const Var c = ad::group_sum(m.weighted, graph.degree);
  const Var f = ffn2(c, p.update_in, p.update_out, /*relu_hidden=*/true);
  if (variant == Variant::kNoGate) return h + f;
  return h + ad::sigmoid(f) * c;
}

LayerState neighborhood_sublayer(const LayerState& in, const EquivariantSubLayerParams<Var>& p,
                                 const NaelOptions& options, NaelTrace* trace) {
  geometry::NeighborGraph graph = layer_graph(in.x, options.k, options.variant);
  Messages m = message_update(in.h, in.x, graph, p, options.variant);
  LayerState out;
  out.x = coordinate_update(in.x, m, graph, p, options.variant);
  out.h = residue_update(in.h, m, graph, p, options.variant);
  if (trace) {
    trace->graph = std::move(graph);
    trace->messages = std::move(m);
  }
  return out;
}

LayerState nael_forward(const LayerState& in, const NaelParams<Var>& p, const NaelOptions& options,
                        NaelTrace* trace) {
  const Var h_half = attention_sublayer(in.h, p.attention, options.heads);
  if (trace) trace->h_half = h_half;
  return neighborhood_sublayer({h_half, in.x}, p.neighborhood, options, trace);
}

LayerState egcl_forward(const LayerState& in, const EgclParams<Var>& p) {
  const geometry::NeighborGraph graph = geometry::complete_graph(geometry::from_tensor(in.x.value()));
  check_graph(in.h, graph);
  const EdgeGeometry eg = edge_geometry(in.x, graph);
  const Var dist2 = ad::square(eg.dist);

  const Var e_hidden =
      ad::silu(ad::pair_linear(in.h, dist2, eg.src, graph.neighbors, p.edge_in.weight, p.edge_in.bias));
  const Var m = ad::silu(linear(e_hidden, p.edge_out));
  const Var gate = ad::sigmoid(linear(m, p.infer));
  const Var agg = ad::group_sum(gate * m, graph.degree);
  const Var node_input[] = {in.h, agg};
  LayerState out;
  out.h = linear(ad::silu(linear(ad::concat_cols(node_input), p.node_in)), p.node_out);

  const Var x_hidden =
      ad::silu(ad::pair_linear(in.h, dist2, eg.src, graph.neighbors, p.coord_in.weight, p.coord_in.bias));
  const Var phi_x = linear(x_hidden, p.coord_out);
  out.x = in.x + ad::group_sum(eg.diff / ad::add_scalar(eg.dist, 1.0) * phi_x, graph.degree);
  return out;
}

}  // namespace naepro::layers
