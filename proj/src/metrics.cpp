#include "lkaseg/metrics.hpp"

#include <stdexcept>
#include <string>

#include "lkaseg/errors.hpp"

namespace lkaseg {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

void ConfusionMatrix::update(std::span<const std::int32_t> pred,
                             std::span<const std::int32_t> truth, int ignore_index) {
  if (pred.size() != truth.size()) {
    throw ShapeError("confusion update: prediction and truth lengths differ");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::int32_t t = truth[i];
    if (t == ignore_index) continue;
    const std::int32_t p = pred[i];
    if (t < 0 || t >= classes_ || p < 0 || p >= classes_) {
      throw std::invalid_argument("confusion update: label out of range at pixel " +
                                  std::to_string(i));
    }
    ++counts_[static_cast<std::size_t>(t) * classes_ + p];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ShapeError("confusion merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t c : counts_) s += c;
  return s;
}

MiouResult ConfusionMatrix::miou() const {
  MiouResult r;
  r.per_class.resize(static_cast<std::size_t>(classes_));
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < classes_; ++k) {
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < classes_; ++j) {
      row += at(k, j);
      col += at(j, k);
    }
    const std::int64_t tp = at(k, k);
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++present;
  }
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

std::vector<std::int32_t> argmax_labels(const Tensor& logits) {
  const Shape s = logits.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  std::vector<std::int32_t> out(static_cast<std::size_t>(s.n) * plane, 0);
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const double* base = logits.ptr() + static_cast<std::size_t>(n) * s.c * plane + p;
      int best = 0;
      for (int k = 1; k < s.c; ++k) {
        if (base[k * plane] > base[static_cast<std::size_t>(best) * plane]) best = k;
      }
      out[static_cast<std::size_t>(n) * plane + p] = best;
    }
  }
  return out;
}

}  // namespace lkaseg
