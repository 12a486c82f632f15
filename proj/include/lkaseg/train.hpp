#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lkaseg/losses.hpp"
#include "lkaseg/metrics.hpp"
#include "lkaseg/model.hpp"
#include "lkaseg/optim.hpp"
#include "lkaseg/synth.hpp"

namespace lkaseg {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double base_lr = 0.2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  double ohem_threshold = 0.7;
  /// 0 selects one sixteenth of the pixels in each batch.
  std::int64_t ohem_min_kept = 0;
  double aux_weight = 0.4;
  double boundary_weight = 1.0;
  int boundary_radius = 2;
  bool flip = true;
  /// Random crop size; 0 keeps the full image. Must stay a multiple of 64.
  int crop_height = 0;
  int crop_width = 0;
  /// Random rescale in [0.5, 2] before cropping.
  bool scale_aug = false;
  std::uint64_t seed = 0;
  /// Worker threads for validation only.
  int threads = 1;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  double miou = 0.0;  // validation
  double lr = 0.0;    // rate used by the epoch's last step
};

using EpochCallback = std::function<void(const EpochMetrics&, bool is_best)>;

/// Loss terms of one forward pass, combined as
///   seg + aux_weight * aux + boundary_weight * boundary.
struct LossTerms {
  Var total;
  Var seg;
  std::optional<Var> aux;
  std::optional<Var> boundary;
};

LossTerms compute_loss(const ModelOutputs& out, const SegBatch& batch, const TrainConfig& cfg);

/// One SGD step on `batch`; returns the loss before the update.
/// Throws NumericalError naming the first non-finite gradient or parameter.
double train_step(Model& model, OptimState& state, const SegBatch& batch, const TrainConfig& cfg,
                  double lr);

/// Eval-mode confusion over `data`, split across `threads` workers by sample.
ConfusionMatrix evaluate(const Model& model, const std::vector<SegBatch>& data, int batch_size,
                         int threads);

std::vector<EpochMetrics> train_loop(Model& model, const TrainConfig& cfg,
                                     const std::vector<SegBatch>& train,
                                     const std::vector<SegBatch>& val,
                                     const EpochCallback& on_epoch = {});

/// Flip / crop / rescale one sample as the training loop does.
SegBatch augment(const SegBatch& item, const TrainConfig& cfg, std::mt19937_64& rng);

}  // namespace lkaseg
