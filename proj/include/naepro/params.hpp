// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers are templates over the leaf type: T = Tensor for
// stored weights, T = ad::Var for weights bound into a forward graph. An
// empty Tensor (or undefined Var) marks a block the active variant does not
// use. visit() walks any number of same-shaped containers in lockstep and
// hands the callback a dotted name plus the matching leaf of each.
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace naepro {

inline std::string join_name(std::string_view prefix, std::string_view leaf) {
  if (prefix.empty()) return std::string(leaf);
  std::string out(prefix);
  out += '.';
  out += leaf;
  return out;
}

template <class T>
struct Linear {
  T weight;  // [in x out]
  T bias;    // [out]
};

template <class T>
struct NormParams {
  T gain;
  T bias;
};

template <class F, class... T>
void visit(std::string_view prefix, F& f, Linear<T>&... p) {
  f(join_name(prefix, "weight"), p.weight...);
  f(join_name(prefix, "bias"), p.bias...);
}

template <class F, class... T>
void visit(std::string_view prefix, F& f, NormParams<T>&... p) {
  f(join_name(prefix, "gain"), p.gain...);
  f(join_name(prefix, "bias"), p.bias...);
}

}  // namespace naepro
