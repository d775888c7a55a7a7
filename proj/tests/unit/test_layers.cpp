// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "naepro/error.hpp"
#include "naepro/layers.hpp"
#include "test_support.hpp"

namespace naepro::layers {
namespace {

using ad::Var;
using Mat = std::vector<std::vector<double>>;

// ---- scalar-loop oracles ---------------------------------------------------------

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t(r, c);
  return m;
}

std::vector<double> lin(const std::vector<double>& x, const Linear<Tensor>& p) {
  const std::size_t out = p.weight.dim(1);
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = p.bias[o];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * p.weight(i, o);
    y[o] = s;
  }
  return y;
}

double silu_s(double v) { return v / (1.0 + std::exp(-v)); }
double sigmoid_s(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> apply(std::vector<double> v, double (*f)(double)) {
  for (double& e : v) e = f(e);
  return v;
}
double relu_s(double v) { return v > 0 ? v : 0; }

std::vector<double> layernorm_s(const std::vector<double>& x, const NormParams<Tensor>& p) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * p.gain[i] + p.bias[i];
  return y;
}

std::vector<double> concat(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Mat attention_oracle(const Mat& h, const AttentionSubLayerParams<Tensor>& p, std::size_t heads) {
  const std::size_t n = h.size();
  const std::size_t d = h[0].size();
  const std::size_t dh = d / heads;
  Mat q(n), k(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = lin(h[i], p.query);
    k[i] = lin(h[i], p.key);
    v[i] = lin(h[i], p.value);
  }
  Mat out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> heads_out(d, 0.0);
    for (std::size_t a = 0; a < heads; ++a) {
      std::vector<double> score(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t c = a * dh; c < (a + 1) * dh; ++c) s += q[i][c] * k[j][c];
        score[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0;
      for (double& s : score) z += (s = std::exp(s - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = a * dh; c < (a + 1) * dh; ++c) heads_out[c] += score[j] / z * v[j][c];
    }
    std::vector<double> mha = lin(heads_out, p.output);
    for (std::size_t c = 0; c < d; ++c) mha[c] += h[i][c];
    const std::vector<double> mid = layernorm_s(mha, p.norm_attention);
    std::vector<double> f = lin(apply(lin(mid, p.ffn_in), relu_s), p.ffn_out);
    for (std::size_t c = 0; c < d; ++c) f[c] += mid[c];
    out[i] = layernorm_s(f, p.norm_ffn);
  }
  return out;
}

double dist_s(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return std::sqrt(s);
}

struct OracleLayer {
  Mat h, x;
  std::vector<std::vector<double>> weights;  // per residue, per neighbour
};

// Default-variant neighbourhood sub-layer written edge by edge.
OracleLayer neighborhood_oracle(const Mat& h, const Mat& x, const geometry::NeighborGraph& g,
                                const EquivariantSubLayerParams<Tensor>& p) {
  const std::size_t n = h.size();
  const std::size_t d = h[0].size();
  OracleLayer out{h, x, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = g.neighbors_of(i);
    std::vector<std::vector<double>> raw;
    std::vector<double> score;
    for (std::size_t j : nb) {
      std::vector<double> in = concat(concat(h[i], h[j]), {dist_s(x[i], x[j])});
      raw.push_back(apply(lin(apply(lin(in, p.message_in), silu_s), p.message_out), silu_s));
      score.push_back(lin(raw.back(), p.score)[0]);
    }
    double mx = -1e300;
    for (double s : score) mx = std::max(mx, s);
    double z = 0;
    for (double& s : score) z += (s = std::exp(s - mx));
    std::vector<double> w(nb.size());
    std::vector<double> c(d, 0.0);
    for (std::size_t r = 0; r < nb.size(); ++r) {
      w[r] = score[r] / z;
      std::vector<double> m(d);
      for (std::size_t a = 0; a < d; ++a) {
        m[a] = w[r] * raw[r][a];
        c[a] += m[a];
      }
      const double s = lin(apply(lin(m, p.coord_in), silu_s), p.coord_out)[0];
      for (int a = 0; a < 3; ++a) out.x[i][a] += (x[i][a] - x[nb[r]][a]) * s;
    }
    const std::vector<double> gate = apply(lin(apply(lin(c, p.update_in), relu_s), p.update_out), sigmoid_s);
    for (std::size_t a = 0; a < d; ++a) out.h[i][a] = h[i][a] + gate[a] * c[a];
    out.weights.push_back(w);
  }
  return out;
}

double max_diff(const Mat& a, const Tensor& b) {
  double m = 0;
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) m = std::max(m, std::abs(a[r][c] - b(r, c)));
  return m;
}

// ---- fixtures --------------------------------------------------------------------

Tensor random_coords(Rng& rng, std::size_t n, double spread = 6.0) {
  Tensor t({n, 3});
  for (double& v : t.values()) v = uniform(rng, -spread, spread);
  return t;
}

Tensor random_hidden(Rng& rng, std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (double& v : t.values()) v = uniform(rng, -1.0, 1.0);
  return t;
}

// Adds noise to every present tensor so zero-initialised heads become active.
template <template <class> class P>
void perturb(P<Tensor>& p, Rng& rng, double amount) {
  auto f = [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v += uniform(rng, -amount, amount);
  };
  visit("", f, p);
}

NaelParams<Tensor> random_nael(std::size_t d, Variant variant, Rng& rng, double coord_noise = 0.05) {
  NaelParams<Tensor> p{init_attention_params(d, rng), init_equivariant_params(d, variant, rng)};
  auto f = [&](const std::string&, Tensor& t) {
    for (double& v : t.values()) v += uniform(rng, -coord_noise, coord_noise);
  };
  visit("", f, p.neighborhood.coord_out);
  return p;
}

geometry::Coordinates coords_of(const Tensor& t) { return geometry::from_tensor(t); }

Tensor transform(const geometry::RigidTransform& tr, const Tensor& x) {
  return geometry::to_tensor(tr.apply(coords_of(x)));
}

// ---- variant names -----------------------------------------------------------------

TEST(Variant, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(to_string(Variant::kNoMcffn), "wo-mcffn");
  EXPECT_THROW(parse_variant("w/o-gate"), ConfigError);
}

// ---- attention sub-layer -----------------------------------------------------------

TEST(AttentionSubLayer, MatchesScalarLoopOracle) {
  Rng rng(11);
  for (std::size_t heads : {1u, 2u, 4u}) {
    AttentionSubLayerParams<Tensor> p = init_attention_params(8, rng);
    perturb(p, rng, 0.1);
    const Tensor h = random_hidden(rng, 4, 8);
    const Var out = attention_sublayer(ad::constant(h), bind_params(p), heads);
    EXPECT_LE(max_diff(attention_oracle(to_mat(h), p, heads), out.value()), 1e-10) << heads << " heads";
  }
}

TEST(AttentionSubLayer, SingleResidueDependsOnItselfOnly) {
  Rng rng(12);
  AttentionSubLayerParams<Tensor> p = init_attention_params(8, rng);
  const Tensor h = random_hidden(rng, 1, 8);
  const Var a = attention_sublayer(ad::constant(h), bind_params(p), 4);
  const Var b = attention_sublayer(ad::constant(h), bind_params(p), 4);
  EXPECT_EQ(a.value(), b.value());
  EXPECT_LE(max_diff(attention_oracle(to_mat(h), p, 4), a.value()), 1e-10);
}

TEST(AttentionSubLayer, ResidualPathOnlyIsDoubleLayerNorm) {
  Rng rng(13);
  AttentionSubLayerParams<Tensor> p = init_attention_params(8, rng);
  p.value = zero_linear(8, 8);
  p.output = zero_linear(8, 8);
  p.ffn_out = zero_linear(32, 8);
  const Tensor h = random_hidden(rng, 5, 8);
  const Var out = attention_sublayer(ad::constant(h), bind_params(p), 2);
  Mat expected = to_mat(h);
  for (auto& row : expected) row = layernorm_s(layernorm_s(row, p.norm_attention), p.norm_ffn);
  EXPECT_LE(max_diff(expected, out.value()), 1e-12);
}

TEST(AttentionSubLayer, RejectsIndivisibleHeads) {
  Rng rng(14);
  AttentionSubLayerParams<Tensor> p = init_attention_params(6, rng);
  EXPECT_THROW(attention_sublayer(ad::constant(random_hidden(rng, 3, 6)), bind_params(p), 4), ConfigError);
}

// ---- message update ------------------------------------------------------------------

TEST(MessageUpdate, SingleNeighbourHasUnitWeight) {
  Rng rng(21);
  for (Variant v : kAllVariants) {
    EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, v, rng);
    const Var x = ad::constant(random_coords(rng, 2));
    const Var h = ad::constant(random_hidden(rng, 2, 8));
    const auto g = layer_graph(x, 1, v);
    const Messages m = message_update(h, x, g, bind_params(p), v);
    ASSERT_EQ(m.weights.value().size(), 2u);
    EXPECT_EQ(m.weights.value()[0], 1.0) << to_string(v);
    EXPECT_EQ(m.weights.value()[1], 1.0) << to_string(v);
  }
}

TEST(MessageUpdate, ScriptedScoresGiveExpectedWeights) {
  geometry::Coordinates x(4, 3);
  x << 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 3;
  const auto g = geometry::knn(x, 3);
  Tensor scores({12, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    scores[3 * i + 0] = std::log(1.0);
    scores[3 * i + 1] = std::log(2.0);
    scores[3 * i + 2] = std::log(1.0);
  }
  const Var w = neighbor_softmax(ad::constant(scores), g);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(w.value()[3 * i + 0], 0.25, 1e-15);
    EXPECT_NEAR(w.value()[3 * i + 1], 0.5, 1e-15);
    EXPECT_NEAR(w.value()[3 * i + 2], 0.25, 1e-15);
  }
}

TEST(MessageUpdate, WeightsSumToOneForEveryVariant) {
  Rng rng(22);
  for (Variant v : kAllVariants) {
    for (int trial = 0; trial < 5; ++trial) {
      EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, v, rng);
      perturb(p, rng, 0.5);
      const Var x = ad::constant(random_coords(rng, 12));
      const Var h = ad::constant(random_hidden(rng, 12, 8));
      const auto g = layer_graph(x, 4, v);
      const Messages m = message_update(h, x, g, bind_params(p), v);
      for (std::size_t i = 0; i < g.num_nodes; ++i) {
        double s = 0;
        for (std::size_t r = 0; r < g.degree; ++r) s += m.weights.value()[i * g.degree + r];
        EXPECT_NEAR(s, 1.0, 1e-10);
      }
    }
  }
}

TEST(MessageUpdate, AttentionMessagesMatchScalarLoop) {
  Rng rng(23);
  const std::size_t n = 6, d = 4;
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(d, Variant::kNoMffn, rng);
  const Tensor xt = random_coords(rng, n);
  const Tensor ht = random_hidden(rng, n, d);
  const auto g = geometry::knn(coords_of(xt), 3);
  const Messages m = message_update(ad::constant(ht), ad::constant(xt), g, bind_params(p), Variant::kNoMffn);
  const Mat h = to_mat(ht), x = to_mat(xt);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> q = lin(h[i], p.neighbor_query);
    std::vector<double> s;
    std::vector<std::vector<double>> vals;
    for (std::size_t j : g.neighbors_of(i)) {
      const std::vector<double> in = concat(h[j], {dist_s(x[i], x[j])});
      const std::vector<double> k = lin(in, p.neighbor_key);
      vals.push_back(lin(in, p.neighbor_value));
      double dot = 0;
      for (std::size_t a = 0; a < d; ++a) dot += q[a] * k[a];
      s.push_back(std::exp(dot / std::sqrt(static_cast<double>(d))));
    }
    double z = 0;
    for (double e : s) z += e;
    for (std::size_t r = 0; r < g.degree; ++r) {
      const std::size_t e = i * g.degree + r;
      EXPECT_NEAR(m.weights.value()[e], s[r] / z, 1e-12);
      for (std::size_t a = 0; a < d; ++a) EXPECT_NEAR(m.weighted.value()(e, a), s[r] / z * vals[r][a], 1e-12);
    }
  }
}

// ---- coordinate update -----------------------------------------------------------

TEST(CoordinateUpdate, ZeroHeadLeavesCoordinatesUnchanged) {
  Rng rng(31);
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, Variant::kDefault, rng);
  const Tensor xt = random_coords(rng, 10);
  const Var x = ad::constant(xt);
  const auto g = geometry::knn(coords_of(xt), 4);
  const auto bound = bind_params(p);
  const Messages m = message_update(ad::constant(random_hidden(rng, 10, 8)), x, g, bound, Variant::kDefault);
  EXPECT_EQ(coordinate_update(x, m, g, bound, Variant::kDefault).value(), xt);
}

TEST(CoordinateUpdate, UnitScalarReflectsThroughNeighbour) {
  Rng rng(32);
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, Variant::kDefault, rng);
  p.coord_in = zero_linear(8, 8);
  p.coord_out = zero_linear(8, 1);
  p.coord_out.bias[0] = 1.0;
  const Tensor xt = random_coords(rng, 2);
  const Var x = ad::constant(xt);
  const auto g = geometry::knn(coords_of(xt), 1);
  const auto bound = bind_params(p);
  const Messages m = message_update(ad::constant(random_hidden(rng, 2, 8)), x, g, bound, Variant::kDefault);
  const Tensor out = coordinate_update(x, m, g, bound, Variant::kDefault).value();
  for (std::size_t a = 0; a < 3; ++a) {
    EXPECT_DOUBLE_EQ(out(0, a), 2 * xt(0, a) - xt(1, a));
    EXPECT_DOUBLE_EQ(out(1, a), 2 * xt(1, a) - xt(0, a));
  }
}

TEST(CoordinateUpdate, EquivariantUnderRigidMotion) {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, Variant::kDefault, rng);
    perturb(p, rng, 0.1);
    const auto bound = bind_params(p);
    const Tensor xt = random_coords(rng, 9);
    const Var h = ad::constant(random_hidden(rng, 9, 8));
    const auto tr = geometry::random_rigid(rng, trial % 2 == 0);
    const Tensor yt = transform(tr, xt);
    const auto g = geometry::knn(coords_of(xt), 4);
    const auto gy = geometry::knn(coords_of(yt), 4);
    ASSERT_EQ(g.neighbors, gy.neighbors);
    const Var x = ad::constant(xt), y = ad::constant(yt);
    const Tensor fx = coordinate_update(x, message_update(h, x, g, bound, Variant::kDefault), g, bound,
                                        Variant::kDefault).value();
    const Tensor fy = coordinate_update(y, message_update(h, y, gy, bound, Variant::kDefault), gy, bound,
                                        Variant::kDefault).value();
    EXPECT_LE(max_abs_diff(transform(tr, fx), fy), 1e-8);
  }
}

// ---- residue update ----------------------------------------------------------------

TEST(ResidueUpdate, ZeroAggregateLeavesFeaturesUnchanged) {
  Rng rng(41);
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, Variant::kDefault, rng);
  const Tensor xt = random_coords(rng, 5);
  const auto g = geometry::knn(coords_of(xt), 2);
  Messages m;
  m.weighted = ad::constant(Tensor({g.num_edges(), 8}, 0.0));
  const Tensor h = random_hidden(rng, 5, 8);
  EXPECT_EQ(residue_update(ad::constant(h), m, g, bind_params(p), Variant::kDefault).value(), h);
}

TEST(ResidueUpdate, ClosedGateLeavesFeaturesNearlyUnchanged) {
  Rng rng(42);
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(8, Variant::kDefault, rng);
  p.update_out = zero_linear(8, 8);
  for (double& b : p.update_out.bias.values()) b = -20.0;
  const Tensor xt = random_coords(rng, 7);
  const Var x = ad::constant(xt);
  const Tensor h = random_hidden(rng, 7, 8);
  const auto g = geometry::knn(coords_of(xt), 3);
  const auto bound = bind_params(p);
  const Messages m = message_update(ad::constant(h), x, g, bound, Variant::kDefault);
  EXPECT_LE(max_abs_diff(residue_update(ad::constant(h), m, g, bound, Variant::kDefault).value(), h), 1e-8);
}

TEST(ResidueUpdate, NoGateIsPlainFeedForward) {
  Rng rng(43);
  EquivariantSubLayerParams<Tensor> p = init_equivariant_params(4, Variant::kNoGate, rng);
  const Tensor xt = random_coords(rng, 5);
  const Tensor ht = random_hidden(rng, 5, 4);
  const auto g = geometry::knn(coords_of(xt), 2);
  const auto bound = bind_params(p);
  const Messages m = message_update(ad::constant(ht), ad::constant(xt), g, bound, Variant::kNoGate);
  const Tensor out = residue_update(ad::constant(ht), m, g, bound, Variant::kNoGate).value();
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> c(4, 0.0);
    for (std::size_t r = 0; r < g.degree; ++r)
      for (std::size_t a = 0; a < 4; ++a) c[a] += m.weighted.value()(i * g.degree + r, a);
    const std::vector<double> f = lin(apply(lin(c, p.update_in), relu_s), p.update_out);
    for (std::size_t a = 0; a < 4; ++a) EXPECT_NEAR(out(i, a), ht(i, a) + f[a], 1e-12);
  }
}

// ---- whole sub-layer against the edge-by-edge oracle ----------------------------------

TEST(NeighborhoodSubLayer, MatchesScalarLoopOracle) {
  Rng rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    EquivariantSubLayerParams<Tensor> p = init_equivariant_params(6, Variant::kDefault, rng);
    perturb(p, rng, 0.2);
    const Tensor xt = random_coords(rng, 8);
    const Tensor ht = random_hidden(rng, 8, 6);
    NaelTrace trace;
    const LayerState out =
        neighborhood_sublayer({ad::constant(ht), ad::constant(xt)}, bind_params(p), {1, 3, Variant::kDefault}, &trace);
    const OracleLayer o = neighborhood_oracle(to_mat(ht), to_mat(xt), trace.graph, p);
    EXPECT_LE(max_diff(o.h, out.h.value()), 1e-10);
    EXPECT_LE(max_diff(o.x, out.x.value()), 1e-10);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(o.weights[i][r], trace.messages.weights.value()[i * 3 + r], 1e-12);
  }
}

TEST(NaelForward, TwoResiduesComposeSubOperations) {
  Rng rng(52);
  NaelParams<Tensor> p = random_nael(8, Variant::kDefault, rng, 0.2);
  const Tensor xt = random_coords(rng, 2);
  const Tensor ht = random_hidden(rng, 2, 8);
  const LayerState out = nael_forward({ad::constant(ht), ad::constant(xt)}, bind_params(p), {2, 1, Variant::kDefault});
  const Mat half = attention_oracle(to_mat(ht), p.attention, 2);
  const OracleLayer o = neighborhood_oracle(half, to_mat(xt), geometry::knn(coords_of(xt), 1), p.neighborhood);
  EXPECT_LE(max_diff(o.h, out.h.value()), 1e-10);
  EXPECT_LE(max_diff(o.x, out.x.value()), 1e-10);
}

TEST(NaelForward, CompleteGraphVariantMatchesKnnWhenKCoversAll) {
  Rng rng(53);
  for (std::size_t n : {2u, 5u, 12u}) {
    NaelParams<Tensor> p = random_nael(8, Variant::kDefault, rng, 0.2);
    const Tensor xt = random_coords(rng, n);
    const Tensor ht = random_hidden(rng, n, 8);
    for (std::size_t k : {n - 1, n, n + 7}) {
      const auto bound = bind_params(p);
      const LayerState a = nael_forward({ad::constant(ht), ad::constant(xt)}, bound, {2, k, Variant::kDefault});
      const LayerState b = nael_forward({ad::constant(ht), ad::constant(xt)}, bound, {2, k, Variant::kNoKnn});
      EXPECT_EQ(a.h.value(), b.h.value());
      EXPECT_EQ(a.x.value(), b.x.value());
    }
  }
}

TEST(NaelForward, KnnDiffersFromCompleteGraphWhenKIsSmall) {
  Rng rng(54);
  NaelParams<Tensor> p = random_nael(8, Variant::kDefault, rng, 0.2);
  const Tensor xt = random_coords(rng, 10);
  const Tensor ht = random_hidden(rng, 10, 8);
  const auto bound = bind_params(p);
  const LayerState a = nael_forward({ad::constant(ht), ad::constant(xt)}, bound, {2, 3, Variant::kDefault});
  const LayerState b = nael_forward({ad::constant(ht), ad::constant(xt)}, bound, {2, 3, Variant::kNoKnn});
  EXPECT_GT(max_abs_diff(a.h.value(), b.h.value()), 1e-6);
}

class NaelEquivariance : public ::testing::TestWithParam<Variant> {};

TEST_P(NaelEquivariance, StackIsEquivariantUnderRotationsAndReflections) {
  const Variant variant = GetParam();
  Rng rng(60 + static_cast<int>(variant));
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = trial % 2 == 0 ? 8 : 20;
    std::vector<NaelParams<Tensor>> stack;
    for (int l = 0; l < 3; ++l) stack.push_back(random_nael(16, variant, rng));
    const Tensor xt = random_coords(rng, n);
    const Tensor ht = random_hidden(rng, n, 16);
    const auto tr = geometry::random_rigid(rng, trial % 4 < 2);
    const NaelOptions opt{4, 5, variant};

    LayerState a{ad::constant(ht), ad::constant(xt)};
    LayerState b{ad::constant(ht), ad::constant(transform(tr, xt))};
    for (auto& layer : stack) {
      const auto bound = bind_params(layer);
      a = nael_forward(a, bound, opt);
      b = nael_forward(b, bound, opt);
    }
    const Tensor expected = transform(tr, a.x.value());
    double scale = 0;
    for (double v : a.x.value().values()) scale = std::max(scale, std::abs(v));
    EXPECT_LE(max_abs_diff(expected, b.x.value()), 1e-8 * (1 + scale)) << to_string(variant);
    double hscale = 0;
    for (double v : a.h.value().values()) hscale = std::max(hscale, std::abs(v));
    EXPECT_LE(max_abs_diff(a.h.value(), b.h.value()), 1e-8 * (1 + hscale)) << to_string(variant);
    EXPECT_GT(max_abs_diff(a.x.value(), xt), 1e-6) << "coordinates should move";
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, NaelEquivariance, ::testing::ValuesIn(kAllVariants),
                         [](const auto& info) {
                           std::string s(to_string(info.param));
                           for (char& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(NaelForward, GradientsMatchFiniteDifferencesThroughTwoLayers) {
  Rng rng(70);
  for (Variant variant : kAllVariants) {
    std::vector<NaelParams<Tensor>> stack{random_nael(4, variant, rng, 0.2), random_nael(4, variant, rng, 0.2)};
    const Tensor xt = random_coords(rng, 5, 3.0);
    const Tensor ht = random_hidden(rng, 5, 4);
    const Tensor target = random_coords(rng, 5, 3.0);

    std::vector<Tensor> flat;
    auto collect = [&](const std::string&, Tensor& t) {
      if (t.size() > 0) flat.push_back(t);
    };
    for (auto& layer : stack) visit("", collect, layer);

    auto f = [&](const std::vector<Var>& leaves) {
      std::size_t next = 0;
      LayerState s{ad::constant(ht), ad::constant(xt)};
      for (auto& layer : stack) {
        NaelParams<Var> bound;
        auto assign = [&](const std::string&, Tensor& t, Var& v) {
          if (t.size() > 0) v = leaves[next++];
        };
        visit("", assign, layer, bound);
        s = nael_forward(s, bound, {2, 3, variant});
      }
      return ad::sum(ad::square(s.h)) + ad::sum(ad::square(s.x - ad::constant(target)));
    };
    const auto r = testing::check_gradients(f, flat, 1e-5, 1e-7);
    EXPECT_LE(r.max_rel, 1e-4) << to_string(variant);
  }
}

// ---- EGCL -------------------------------------------------------------------------

Mat egcl_oracle_x(const Mat& h, const Mat& x, const EgclParams<Tensor>& p, Mat* h_out) {
  const std::size_t n = h.size();
  const std::size_t d = h[0].size();
  Mat xo = x;
  Mat ho(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> agg(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = dist_s(x[i], x[j]);
      const std::vector<double> in = concat(concat(h[i], h[j]), {dij * dij});
      const std::vector<double> m = apply(lin(apply(lin(in, p.edge_in), silu_s), p.edge_out), silu_s);
      const double e = sigmoid_s(lin(m, p.infer)[0]);
      for (std::size_t a = 0; a < d; ++a) agg[a] += e * m[a];
      const double phi = lin(apply(lin(in, p.coord_in), silu_s), p.coord_out)[0];
      for (int a = 0; a < 3; ++a) xo[i][a] += (x[i][a] - x[j][a]) / (dij + 1.0) * phi;
    }
    ho[i] = lin(apply(lin(concat(h[i], agg), p.node_in), silu_s), p.node_out);
  }
  *h_out = ho;
  return xo;
}

TEST(Egcl, ZeroCoordinateHeadLeavesCoordinatesUnchanged) {
  Rng rng(80);
  EgclParams<Tensor> p = init_egcl_params(8, rng);
  const Tensor xt = random_coords(rng, 6);
  const LayerState out = egcl_forward({ad::constant(random_hidden(rng, 6, 8)), ad::constant(xt)}, bind_params(p));
  EXPECT_EQ(out.x.value(), xt);
}

TEST(Egcl, MatchesScalarLoopOracle) {
  Rng rng(81);
  EgclParams<Tensor> p = init_egcl_params(5, rng);
  perturb(p, rng, 0.2);
  const Tensor xt = random_coords(rng, 3);
  const Tensor ht = random_hidden(rng, 3, 5);
  const LayerState out = egcl_forward({ad::constant(ht), ad::constant(xt)}, bind_params(p));
  Mat h_expected;
  const Mat x_expected = egcl_oracle_x(to_mat(ht), to_mat(xt), p, &h_expected);
  EXPECT_LE(max_diff(x_expected, out.x.value()), 1e-10);
  EXPECT_LE(max_diff(h_expected, out.h.value()), 1e-10);
}

TEST(Egcl, EquivariantUnderRigidMotion) {
  Rng rng(82);
  for (int trial = 0; trial < 10; ++trial) {
    EgclParams<Tensor> p = init_egcl_params(8, rng);
    perturb(p, rng, 0.2);
    const auto bound = bind_params(p);
    const Tensor xt = random_coords(rng, 10);
    const Tensor ht = random_hidden(rng, 10, 8);
    const auto tr = geometry::random_rigid(rng, trial % 2 == 0);
    const LayerState a = egcl_forward({ad::constant(ht), ad::constant(xt)}, bound);
    const LayerState b = egcl_forward({ad::constant(ht), ad::constant(transform(tr, xt))}, bound);
    EXPECT_LE(max_abs_diff(transform(tr, a.x.value()), b.x.value()), 1e-8);
    EXPECT_LE(max_abs_diff(a.h.value(), b.h.value()), 1e-8);
  }
}

}  // namespace
}  // namespace naepro::layers
