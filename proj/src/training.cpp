// SPDX-License-Identifier: Apache-2.0
#include "naepro/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "naepro/error.hpp"

namespace naepro::training {

using ad::Var;
using model::Model;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (!(anneal_max_fraction >= 0.0 && anneal_max_fraction <= 1.0)) {
    throw ConfigError("anneal_max_fraction must lie in [0, 1]");
  }
  if (!(grad_clip_norm >= 0.0) || !std::isfinite(grad_clip_norm)) throw ConfigError("grad_clip_norm must be >= 0");
}

double anneal_fraction(std::size_t epoch, const TrainConfig& config) {
  if (epoch == 0) throw ConfigError("epochs are numbered from 1");
  if (epoch >= config.anneal_epochs) return 0.0;
  return config.anneal_max_fraction * static_cast<double>(config.anneal_epochs - epoch) /
         static_cast<double>(config.anneal_epochs);
}

double anneal_fraction_literal(std::size_t epoch, const TrainConfig& config) {
  if (epoch == 0) throw ConfigError("epochs are numbered from 1");
  return config.anneal_max_fraction * (static_cast<double>(config.anneal_epochs) - static_cast<double>(epoch)) /
         static_cast<double>(epoch);
}

double effective_anneal_fraction(std::size_t epoch, const TrainConfig& config) {
  if (!config.anneal_literal) return anneal_fraction(epoch, config);
  if (epoch > config.anneal_epochs) return 0.0;
  return std::clamp(anneal_fraction_literal(epoch, config), 0.0, 1.0);
}

std::vector<std::size_t> sample_pseudo_fragments(const ProteinRecord& record, double fraction, Rng& rng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("pseudo-fragment fraction must lie in [0, 1]");
  const std::size_t n = record.size();
  std::vector<std::size_t> pool = complement(record.fragments, n);
  const auto want = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  const std::size_t take = std::min(want, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  std::vector<std::size_t> out(record.fragments);
  out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  std::sort(out.begin(), out.end());
  return out;
}

OptimizerState OptimizerState::for_model(Model& model) {
  OptimizerState s;
  auto f = [&](const std::string&, Tensor& t) {
    if (t.size() == 0) return;
    s.first_moment.emplace_back(t.shape(), 0.0);
    s.second_moment.emplace_back(t.shape(), 0.0);
  };
  model::visit("", f, model.weights);
  return s;
}

BatchItem plain_item(const Model& model, const ProteinRecord& record) {
  return {&record, record.fragments, model::initial_coordinates(record, record.fragments, model.config.seed)};
}

StepResult train_step(Model& model, OptimizerState& opt, const std::vector<BatchItem>& batch,
                      const TrainConfig& config) {
  if (batch.empty()) throw ValidationError("train_step needs a non-empty batch");
  model::ModelWeights<Var> w = model::bind(model.weights);

  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const BatchItem& item : batch) {
    const auto graph = model::forward_graph(*item.record, item.visible, w, model.config, item.x0);
    Var l = model::loss_graph(graph, *item.record, item.visible, model.config.lambda_half).total;
    if (!std::isfinite(l.value().item())) {
      throw NumericError("non-finite loss for record '" + item.record->id + "'; step aborted");
    }
    losses.push_back(std::move(l));
  }
  Var total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = total + losses[i];
  total = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  ad::backward(total);

  std::vector<const Tensor*> grads;
  std::vector<Tensor*> params;
  auto collect = [&](const std::string&, Tensor& t, Var& v) {
    if (t.size() == 0) return;
    params.push_back(&t);
    grads.push_back(&v.grad());
  };
  model::visit("", collect, model.weights, w);
  if (opt.first_moment.size() != params.size()) throw ValidationError("optimizer state does not match the model");

  double sq = 0.0;
  for (const Tensor* g : grads)
    for (double v : g->values()) sq += v * v;
  StepResult result;
  result.mean_loss = total.value().item();
  result.grad_norm = std::sqrt(sq);
  double factor = 1.0;
  if (config.grad_clip_norm > 0.0 && result.grad_norm > config.grad_clip_norm) {
    factor = config.grad_clip_norm / result.grad_norm;
    result.clipped = true;
  }

  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double bias1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bias2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& m = opt.first_moment[p];
    Tensor& v = opt.second_moment[p];
    Tensor& theta = *params[p];
    const Tensor& g = *grads[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] * factor;
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      theta[i] -= config.learning_rate * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + kAdamEpsilon);
    }
  }
  return result;
}

StepResult train_step(Model& model, OptimizerState& opt, std::span<const ProteinRecord> batch,
                      const TrainConfig& config) {
  std::vector<BatchItem> items;
  for (const ProteinRecord& r : batch) items.push_back(plain_item(model, r));
  return train_step(model, opt, items, config);
}

double evaluate_loss(Model& model, std::span<const ProteinRecord> records) {
  if (records.empty()) throw ValidationError("evaluate_loss needs at least one record");
  ad::NoGradGuard no_grad;
  const model::ModelWeights<Var> w = model::bind(model.weights);
  double total = 0.0;
  for (const ProteinRecord& r : records) {
    const BatchItem item = plain_item(model, r);
    const auto graph = model::forward_graph(r, item.visible, w, model.config, item.x0);
    total += model::loss_graph(graph, r, item.visible, model.config.lambda_half).total.value().item();
  }
  return total / static_cast<double>(records.size());
}

FitResult fit(Model model, std::span<const ProteinRecord> train, std::span<const ProteinRecord> validation,
              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ValidationError("training split is empty");
  Rng rng(config.seed);
  OptimizerState opt = OptimizerState::for_model(model);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochLog entry;
    entry.epoch = epoch;
    entry.anneal_fraction = effective_anneal_fraction(epoch, config);

    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<BatchItem> batch;
      for (std::size_t b = begin; b < end; ++b) {
        const ProteinRecord& r = train[order[b]];
        BatchItem item;
        item.record = &r;
        item.visible = sample_pseudo_fragments(r, entry.anneal_fraction, rng);
        item.x0 = config.resample_init ? model::initial_coordinates(r, item.visible, rng)
                                       : model::initial_coordinates(r, item.visible, model.config.seed);
        batch.push_back(std::move(item));
      }
      loss_sum += train_step(model, opt, batch, config).mean_loss;
      ++entry.steps;
    }
    entry.train_loss = loss_sum / static_cast<double>(entry.steps);
    if (!validation.empty()) entry.val_loss = evaluate_loss(model, validation);
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const double score = entry.val_loss.value_or(entry.train_loss);
    if (!have_best || score < result.best_loss) {
      have_best = true;
      result.best_loss = score;
      result.best_epoch = epoch;
      result.best_model = model;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.final_model = std::move(model);
  return result;
}

std::string log_line(const EpochLog& entry) {
  nlohmann::ordered_json j;
  j["epoch"] = entry.epoch;
  j["train_loss"] = entry.train_loss;
  j["val_loss"] = entry.val_loss ? nlohmann::ordered_json(*entry.val_loss) : nlohmann::ordered_json();
  j["anneal_fraction"] = entry.anneal_fraction;
  j["steps"] = entry.steps;
  return j.dump();
}

std::string timing_line(const EpochLog& entry) {
  nlohmann::ordered_json j;
  j["epoch"] = entry.epoch;
  j["wall_seconds"] = entry.wall_seconds;
  return j.dump();
}

}  // namespace naepro::training
