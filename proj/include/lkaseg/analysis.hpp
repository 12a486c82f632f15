#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "lkaseg/cost.hpp"
#include "lkaseg/model.hpp"

namespace lkaseg {

/// Static cost walk plus the receptive-field table of the model's named paths.
CostReport count_flops(const Model& model, Shape input);
/// Trainable scalars from the static walk (running statistics excluded).
std::int64_t count_params(const Model& model);
/// Runs one eval-mode forward and returns the runtime FLOP counter.
std::int64_t measure_flops(const Model& model, Shape input);

struct LatencyReport {
  Shape input;
  int warmup = 0;
  int iters = 0;
  int threads = 1;
  std::string build_profile;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double fps = 0.0;
};

/// Wall-clock of eval-mode forwards. `threads` > 1 splits the batch across
/// workers (the only parallelism the library has).
LatencyReport bench_latency(const Model& model, Shape input, int warmup, int iters, int threads = 1);

enum class ReportFormat { kTable, kCsv };

void print_flops(std::ostream& os, const CostReport& report, ReportFormat fmt);
void print_params(std::ostream& os, const CostReport& report, ReportFormat fmt);
void print_rf(std::ostream& os, const CostReport& report, ReportFormat fmt);
void print_latency(std::ostream& os, const LatencyReport& report, ReportFormat fmt);

}  // namespace lkaseg
