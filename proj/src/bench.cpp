#include "lkaseg/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <stdexcept>
#include <thread>

#include "lkaseg/instrument.hpp"

#ifndef LKASEG_BUILD_PROFILE
#define LKASEG_BUILD_PROFILE "unknown"
#endif

namespace lkaseg {
namespace {

std::string shape_cell(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

// Value of sorted samples at quantile q, nearest-rank.
double quantile(const std::vector<double>& sorted, double q) {
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

void forward_split(const Model& model, const Tensor& x, int threads) {
  const int n = x.shape().n;
  const int workers = std::clamp(threads, 1, n);
  if (workers == 1) {
    Graph g(NormMode::kEval, false);
    (void)model.forward(g.input(x));
    return;
  }
  std::vector<std::thread> pool;
  const Shape s = x.shape();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
  for (int wi = 0; wi < workers; ++wi) {
    const int begin = n * wi / workers, end = n * (wi + 1) / workers;
    pool.emplace_back([&, begin, end] {
      Tensor part({end - begin, s.c, s.h, s.w});
      std::copy_n(x.ptr() + per * static_cast<std::size_t>(begin), part.size(), part.ptr());
      Graph g(NormMode::kEval, false);
      (void)model.forward(g.input(std::move(part)));
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

CostReport count_flops(const Model& model, Shape input) {
  CostTrace t;
  model.trace(t, input);
  CostReport r = t.report(input);
  for (const RfPath& p : model.rf_paths()) r.rf_table.push_back(receptive_field(p));
  return r;
}

std::int64_t count_params(const Model& model) {
  return count_flops(model, {1, 3, 64, 64}).total_params;
}

std::int64_t measure_flops(const Model& model, Shape input) {
  Model::check_input(input);
  Graph g(NormMode::kEval, false);
  Var x = g.input(Tensor(input));
  instrument::FlopScope scope;
  (void)model.forward(x);
  return scope.total();
}

LatencyReport bench_latency(const Model& model, Shape input, int warmup, int iters, int threads) {
  if (iters < 1) throw std::invalid_argument("bench: iters must be at least 1");
  Model::check_input(input);
  std::mt19937_64 rng(0);
  const Tensor x = random_uniform(input, rng);
  LatencyReport r;
  r.input = input;
  r.warmup = std::max(0, warmup);
  r.iters = iters;
  r.threads = std::max(1, threads);
  r.build_profile = LKASEG_BUILD_PROFILE;
  for (int i = 0; i < r.warmup; ++i) forward_split(model, x, r.threads);
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    forward_split(model, x, r.threads);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / iters;
  std::sort(ms.begin(), ms.end());
  r.p50_ms = iters == 1 ? r.mean_ms : quantile(ms, 0.5);
  r.p95_ms = iters == 1 ? r.mean_ms : quantile(ms, 0.95);
  r.fps = 1000.0 / r.mean_ms;
  return r;
}

void print_flops(std::ostream& os, const CostReport& report, ReportFormat fmt) {
  if (fmt == ReportFormat::kCsv) {
    os << "name,kind,flops,params,output\n";
    for (const auto& l : report.layers) {
      os << l.name << ',' << l.kind << ',' << l.flops << ',' << l.params << ',' << shape_cell(l.out) << '\n';
    }
    os << "total,," << report.total_flops << ',' << report.total_params << ",\n";
    return;
  }
  std::size_t width = 5;
  for (const auto& l : report.layers) width = std::max(width, l.name.size());
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << "  " << std::setw(10) << "kind"
     << std::right << std::setw(14) << "flops" << std::setw(10) << "params" << "  output\n";
  for (const auto& l : report.layers) {
    os << std::left << std::setw(static_cast<int>(width)) << l.name << "  " << std::setw(10) << l.kind
       << std::right << std::setw(14) << l.flops << std::setw(10) << l.params << "  " << shape_cell(l.out)
       << '\n';
  }
  os << "\nper stage:\n";
  for (const auto& [stage, flops] : report.stage_flops()) {
    os << "  " << std::left << std::setw(12) << stage << std::right << std::setw(14) << flops << '\n';
  }
  os << "input " << shape_cell(report.input) << "\n";
  os << "total flops " << report.total_flops << " (" << std::fixed << std::setprecision(4)
     << report.total_flops / 1e9 << " GFLOPs, multiply-add = 2)\n";
  os.unsetf(std::ios::floatfield);
}

void print_params(std::ostream& os, const CostReport& report, ReportFormat fmt) {
  std::map<std::string, std::int64_t> stages;
  for (const auto& l : report.layers) stages[l.name.substr(0, l.name.find('.'))] += l.params;
  if (fmt == ReportFormat::kCsv) {
    os << "stage,params\n";
    for (const auto& [stage, n] : stages) os << stage << ',' << n << '\n';
    os << "total," << report.total_params << '\n';
    return;
  }
  for (const auto& [stage, n] : stages) {
    os << std::left << std::setw(12) << stage << std::right << std::setw(10) << n << '\n';
  }
  os << "total params " << report.total_params << '\n';
}

void print_rf(std::ostream& os, const CostReport& report, ReportFormat fmt) {
  if (fmt == ReportFormat::kCsv) {
    os << "path,rf_h,rf_w\n";
    for (const auto& e : report.rf_table) os << e.name << ',' << e.rf_h << ',' << e.rf_w << '\n';
    return;
  }
  for (const auto& e : report.rf_table) {
    os << std::left << std::setw(18) << e.name << std::right << std::setw(6) << e.rf_h << " x "
       << e.rf_w << '\n';
  }
}

void print_latency(std::ostream& os, const LatencyReport& r, ReportFormat fmt) {
  if (fmt == ReportFormat::kCsv) {
    os << "input,threads,build,warmup,iters,mean_ms,p50_ms,p95_ms,fps\n"
       << shape_cell(r.input) << ',' << r.threads << ',' << r.build_profile << ',' << r.warmup << ','
       << r.iters << ',' << r.mean_ms << ',' << r.p50_ms << ',' << r.p95_ms << ',' << r.fps << '\n';
    return;
  }
  os << "input    " << shape_cell(r.input) << "\n"
     << "threads  " << r.threads << "\n"
     << "build    " << r.build_profile << "\n"
     << "iters    " << r.iters << " (warmup " << r.warmup << ")\n"
     << "mean_ms  " << r.mean_ms << "\n"
     << "p50_ms   " << r.p50_ms << "\n"
     << "p95_ms   " << r.p95_ms << "\n"
     << "fps      " << r.fps << "  (host CPU)\n";
}

}  // namespace lkaseg
