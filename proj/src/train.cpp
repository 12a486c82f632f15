#include "lkaseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "lkaseg/errors.hpp"
#include "lkaseg/ops.hpp"
#include "lkaseg/optim.hpp"

namespace lkaseg {

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (epochs < 1) fail("epochs", "must be at least 1");
  if (batch_size < 1) fail("batch_size", "must be at least 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) fail("base_lr", "must be finite and non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be non-negative");
  if (!(poly_power > 0.0)) fail("poly_power", "must be positive");
  if (!(ohem_threshold > 0.0 && ohem_threshold <= 1.0)) fail("ohem_threshold", "must lie in (0, 1]");
  if (ohem_min_kept < 0) fail("ohem_min_kept", "must be non-negative");
  if (!(aux_weight >= 0.0)) fail("aux_weight", "must be non-negative");
  if (!(boundary_weight >= 0.0)) fail("boundary_weight", "must be non-negative");
  if (boundary_radius < 1) fail("boundary_radius", "must be at least 1");
  if (crop_height < 0 || crop_height % 64 != 0) fail("crop_height", "must be 0 or a multiple of 64");
  if (crop_width < 0 || crop_width % 64 != 0) fail("crop_width", "must be 0 or a multiple of 64");
  if (threads < 1) fail("threads", "must be at least 1");
}

SegBatch augment(const SegBatch& item, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor img = item.images;
  std::vector<std::int32_t> lab = item.labels;
  int h = item.height(), w = item.width();
  const int out_h = cfg.crop_height > 0 ? cfg.crop_height : h;
  const int out_w = cfg.crop_width > 0 ? cfg.crop_width : w;

  if (cfg.scale_aug) {
    const double s = 0.5 + 1.5 * unit(rng);
    const int nh = std::max(1, static_cast<int>(std::lround(h * s)));
    const int nw = std::max(1, static_cast<int>(std::lround(w * s)));
    img = bilinear_resize(img, nh, nw);
    std::vector<std::int32_t> scaled(static_cast<std::size_t>(nh) * nw);
    for (int y = 0; y < nh; ++y) {
      const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / nh));
      for (int x = 0; x < nw; ++x) {
        const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / nw));
        scaled[static_cast<std::size_t>(y) * nw + x] = lab[static_cast<std::size_t>(sy) * w + sx];
      }
    }
    lab = std::move(scaled);
    h = nh;
    w = nw;
  }

  if (cfg.flip && unit(rng) < 0.5) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w / 2; ++x) {
        for (int c = 0; c < 3; ++c) std::swap(img.at(0, c, y, x), img.at(0, c, y, w - 1 - x));
        std::swap(lab[static_cast<std::size_t>(y) * w + x], lab[static_cast<std::size_t>(y) * w + (w - 1 - x)]);
      }
    }
  }

  // Crop (or pad with ignore) to the output size at a random offset.
  if (out_h != h || out_w != w) {
    const int oy = h > out_h ? std::uniform_int_distribution<int>(0, h - out_h)(rng) : 0;
    const int ox = w > out_w ? std::uniform_int_distribution<int>(0, w - out_w)(rng) : 0;
    Tensor cimg({1, 3, out_h, out_w});
    std::vector<std::int32_t> clab(static_cast<std::size_t>(out_h) * out_w, kIgnoreIndex);
    for (int y = 0; y < out_h && y + oy < h; ++y) {
      for (int x = 0; x < out_w && x + ox < w; ++x) {
        for (int c = 0; c < 3; ++c) cimg.at(0, c, y, x) = img.at(0, c, y + oy, x + ox);
        clab[static_cast<std::size_t>(y) * out_w + x] = lab[static_cast<std::size_t>(y + oy) * w + (x + ox)];
      }
    }
    img = std::move(cimg);
    lab = std::move(clab);
    h = out_h;
    w = out_w;
  }

  SegBatch out;
  out.images = std::move(img);
  out.boundary = boundary_from_labels(lab, h, w, cfg.boundary_radius);
  out.labels = std::move(lab);
  return out;
}

LossTerms compute_loss(const ModelOutputs& out, const SegBatch& batch, const TrainConfig& cfg) {
  OhemConfig ohem{cfg.ohem_threshold, cfg.ohem_min_kept};
  if (ohem.min_kept == 0) ohem.min_kept = std::max<std::int64_t>(1, static_cast<std::int64_t>(batch.labels.size()) / 16);
  LossTerms t;
  t.seg = ohem_cross_entropy(out.seg, batch.labels, ohem);
  t.total = t.seg;
  if (out.aux && cfg.aux_weight > 0.0) {
    t.aux = ohem_cross_entropy(*out.aux, batch.labels, ohem);
    t.total = add(t.total, affine(*t.aux, cfg.aux_weight, 0.0));
  }
  if (out.boundary && cfg.boundary_weight > 0.0) {
    const Var up = bilinear_resize(*out.boundary, batch.height(), batch.width());
    t.boundary = boundary_bce(up, batch.boundary);
    t.total = add(t.total, affine(*t.boundary, cfg.boundary_weight, 0.0));
  }
  return t;
}

double train_step(Model& model, OptimState& state, const SegBatch& batch, const TrainConfig& cfg,
                  double lr) {
  Graph g(NormMode::kTrain);
  ModelOutputs out;
  try {
    out = model.forward(g.input(batch.images));
  } catch (const NumericalError& e) {
    // Parameters are finite here (checked after the previous update), so
    // point at the one most likely to have blown up.
    const Parameter* worst = nullptr;
    double peak = -1.0;
    for (const auto& p : model.params().params()) {
      for (double v : p->value.data()) {
        if (std::abs(v) > peak) {
          peak = std::abs(v);
          worst = p.get();
        }
      }
    }
    std::ostringstream msg;
    msg << e.what();
    if (worst) msg << " (largest parameter " << worst->name << ", |w| = " << peak << ")";
    throw NumericalError(msg.str());
  }
  const LossTerms loss = compute_loss(out, batch, cfg);
  const double value = loss.total.value().item();
  if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
  model.params().zero_grad();
  g.backward(loss.total);
  for (const auto& p : model.params().params()) {
    if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in " + p->name);
  }
  sgd_step(model.params(), state, lr);
  for (const auto& p : model.params().params()) {
    if (!p->value.all_finite()) throw NumericalError("non-finite parameter " + p->name + " after update");
  }
  return value;
}

ConfusionMatrix evaluate(const Model& model, const std::vector<SegBatch>& data, int batch_size,
                         int threads) {
  const int k = model.config().class_count;
  const int n = static_cast<int>(data.size());
  const int workers = std::clamp(threads, 1, std::max(1, n));
  batch_size = std::max(1, batch_size);
  std::vector<ConfusionMatrix> partial(static_cast<std::size_t>(workers), ConfusionMatrix(k));
  auto run = [&](int wi) {
    const int begin = n * wi / workers, end = n * (wi + 1) / workers;
    for (int i = begin; i < end; i += batch_size) {
      std::vector<const SegBatch*> items;
      for (int j = i; j < std::min(end, i + batch_size); ++j) items.push_back(&data[static_cast<std::size_t>(j)]);
      const SegBatch b = stack(items);
      Graph g(NormMode::kEval, false);
      const ModelOutputs out = model.forward(g.input(b.images));
      partial[static_cast<std::size_t>(wi)].update(argmax_labels(out.seg.value()), b.labels, kIgnoreIndex);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int wi = 0; wi < workers; ++wi) {
      pool.emplace_back([&, wi] {
        try {
          run(wi);
        } catch (...) {
          errors[static_cast<std::size_t>(wi)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  ConfusionMatrix total(k);
  for (const auto& p : partial) total += p;
  return total;
}

std::vector<EpochMetrics> train_loop(Model& model, const TrainConfig& cfg,
                                     const std::vector<SegBatch>& train,
                                     const std::vector<SegBatch>& val,
                                     const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  const int n = static_cast<int>(train.size());
  const int steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t max_iter = static_cast<std::int64_t>(steps) * cfg.epochs;
  std::mt19937_64 rng(cfg.seed);
  OptimState state = OptimState::for_params(model.params(), cfg.momentum, cfg.weight_decay);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::vector<EpochMetrics> history;
  double best = -1.0;
  std::int64_t iter = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    double lr = cfg.base_lr;
    for (int s = 0; s < steps; ++s) {
      std::vector<SegBatch> aug;
      for (int j = s * cfg.batch_size; j < std::min(n, (s + 1) * cfg.batch_size); ++j) {
        aug.push_back(augment(train[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])], cfg, rng));
      }
      std::vector<const SegBatch*> ptrs;
      for (const auto& a : aug) ptrs.push_back(&a);
      lr = poly_lr(cfg.base_lr, iter, max_iter, cfg.poly_power);
      loss_sum += train_step(model, state, stack(ptrs), cfg, lr);
      ++iter;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / steps;
    m.lr = lr;
    m.miou = val.empty() ? 0.0 : evaluate(model, val, cfg.batch_size, cfg.threads).miou().mean;
    const bool is_best = m.miou > best;
    if (is_best) best = m.miou;
    history.push_back(m);
    if (on_epoch) on_epoch(m, is_best);
  }
  return history;
}

}  // namespace lkaseg
