#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lkaseg/tensor.hpp"

namespace lkaseg {

struct MiouResult {
  /// IoU per class; empty for classes absent from both truth and prediction.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

/// K x K counts, rows = truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  void update(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth,
              int ignore_index);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  int classes() const { return classes_; }
  std::int64_t at(int truth, int pred) const {
    return counts_[static_cast<std::size_t>(truth) * classes_ + pred];
  }
  std::int64_t total() const;
  MiouResult miou() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

/// Per-pixel argmax over the channel axis; ties go to the lower class.
std::vector<std::int32_t> argmax_labels(const Tensor& logits);

}  // namespace lkaseg
