// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "naepro/model.hpp"

namespace naepro::training {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double learning_rate = 5e-4;
  std::size_t anneal_epochs = 10;
  double anneal_max_fraction = 0.85;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  bool anneal_literal = false;  // use the expression with "/ epoch" as divisor
  bool resample_init = false;   // fresh starting layout every step instead of a fixed one per record
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// max · (E − e) / E for e ≤ E, else 0 (E = anneal_epochs, e 1-based).
double anneal_fraction(std::size_t epoch, const TrainConfig& config);
/// max · (E − e) / e, unclamped, for side-by-side inspection.
double anneal_fraction_literal(std::size_t epoch, const TrainConfig& config);
/// The fraction the trainer actually applies at `epoch`, in [0, 1].
double effective_anneal_fraction(std::size_t epoch, const TrainConfig& config);

/// M ∪ (floor(fraction·N) residues drawn without replacement from outside M),
/// capped at N; returned sorted.
std::vector<std::size_t> sample_pseudo_fragments(const ProteinRecord& record, double fraction, Rng& rng);

struct OptimizerState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_model(model::Model& model);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// One protein's view for a step: the visible set and starting layout.
struct BatchItem {
  const ProteinRecord* record = nullptr;
  std::vector<std::size_t> visible;
  geometry::Coordinates x0;
};

/// Real fragments and the model's fixed layout.
BatchItem plain_item(const model::Model& model, const ProteinRecord& record);

struct StepResult {
  double mean_loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

/// Mean loss over the batch, backward, global-norm clipping, Adam update.
StepResult train_step(model::Model& model, OptimizerState& opt, const std::vector<BatchItem>& batch,
                      const TrainConfig& config);
StepResult train_step(model::Model& model, OptimizerState& opt, std::span<const ProteinRecord> batch,
                      const TrainConfig& config);

/// Mean loss with real fragments and fixed layouts, no gradients.
double evaluate_loss(model::Model& model, std::span<const ProteinRecord> records);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double anneal_fraction = 0.0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
};

struct FitResult {
  std::vector<EpochLog> log;
  model::Model final_model;
  model::Model best_model;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;  // validation loss, or train loss without a validation split
};

using EpochCallback = std::function<void(const EpochLog&)>;

FitResult fit(model::Model model, std::span<const ProteinRecord> train, std::span<const ProteinRecord> validation,
              const TrainConfig& config, const EpochCallback& on_epoch = {});

/// One JSON object per line; wall time is left out so logs of identical
/// runs compare equal byte for byte.
std::string log_line(const EpochLog& entry);
std::string timing_line(const EpochLog& entry);

}  // namespace naepro::training
