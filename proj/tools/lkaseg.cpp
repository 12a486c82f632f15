// lkaseg: synthetic data, training, evaluation, inference and cost reports.
//
// Exit codes: 0 ok, 2 configuration/validation, 3 numerical abort, 4 IO.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "lkaseg/analysis.hpp"
#include "lkaseg/checkpoint.hpp"
#include "lkaseg/config.hpp"
#include "lkaseg/errors.hpp"
#include "lkaseg/metrics.hpp"
#include "lkaseg/netpbm.hpp"
#include "lkaseg/render.hpp"
#include "lkaseg/synth.hpp"
#include "lkaseg/train.hpp"

namespace fs = std::filesystem;
using namespace lkaseg;

namespace {

int default_threads() {
  if (const char* env = std::getenv("LKA_SEG_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError("LKA_SEG_THREADS: expected a positive integer, got \"" + std::string(env) + "\"");
  }
  return 1;
}

ReportFormat parse_format(const std::string& s) {
  if (s == "table") return ReportFormat::kTable;
  if (s == "csv") return ReportFormat::kCsv;
  throw ConfigError("format: expected table or csv");
}

std::string fmt(double v, int digits = 10) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

// Config from --config or --preset (preset alone means all defaults).
RunConfig resolve_config(const std::string& path, const std::string& preset) {
  if (!path.empty()) return load_run_config(path);
  RunConfig c;
  c.preset = preset;
  c.model = ModelConfig::preset(preset);
  c.validate();
  return c;
}

std::unique_ptr<Model> model_from_checkpoint(const RunConfig& cfg, const fs::path& ckpt) {
  auto model = std::make_unique<Model>(cfg.model, cfg.train.seed);
  restore(model->params(), load_checkpoint(ckpt));
  return model;
}

Dataset open_dataset(const std::string& dir, int radius, const char* what) {
  if (dir.empty()) throw ConfigError(std::string(what) + ": no dataset directory given");
  if (!fs::is_directory(dir)) throw ConfigError(std::string(what) + ": dataset directory not found: " + dir);
  return read_dataset(dir, radius);
}

struct SynthArgs {
  std::string spec_file, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> count, height, width, class_count, density, min_shape_size;
};

int run_synth(const SynthArgs& a) {
  SynthSpec spec = a.spec_file.empty() ? SynthSpec{} : load_synth_spec(a.spec_file);
  if (a.seed) spec.seed = *a.seed;
  if (a.count) spec.count = *a.count;
  if (a.height) spec.height = *a.height;
  if (a.width) spec.width = *a.width;
  if (a.class_count) spec.class_count = *a.class_count;
  if (a.density) spec.density = *a.density;
  if (a.min_shape_size) spec.min_shape_size = *a.min_shape_size;
  spec.validate();
  write_dataset(a.out, spec, synth_dataset(spec));
  std::cout << "wrote " << spec.count << " images to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, out, train_dir, val_dir, fusion, ppm;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, epochs;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.train.threads = a.threads ? *a.threads : default_threads();
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (!a.train_dir.empty()) cfg.train_dir = a.train_dir;
  if (!a.val_dir.empty()) cfg.val_dir = a.val_dir;
  if (a.fusion == "bgaf") {
    cfg.model.fusion = FusionKind::kBgaf;
  } else if (a.fusion == "fixed_half") {
    cfg.model.fusion = FusionKind::kFixedHalf;
  } else if (!a.fusion.empty()) {
    throw ConfigError("fusion: expected bgaf or fixed_half, got \"" + a.fusion + "\"");
  }
  if (a.ppm == "dlkppm") {
    cfg.model.ppm = PpmKind::kDlkppm;
  } else if (a.ppm == "dappm") {
    cfg.model.ppm = PpmKind::kDappm;
  } else if (!a.ppm.empty()) {
    throw ConfigError("ppm: expected dlkppm or dappm, got \"" + a.ppm + "\"");
  }
  cfg.validate();

  const Dataset train = open_dataset(cfg.train_dir, cfg.train.boundary_radius, "train_dir");
  Dataset val;
  if (!cfg.val_dir.empty()) val = open_dataset(cfg.val_dir, cfg.train.boundary_radius, "val_dir");
  for (const Dataset* d : {&train, static_cast<const Dataset*>(&val)}) {
    if (!d->items.empty() && d->class_count != cfg.model.class_count) {
      throw ConfigError("class_count: model has " + std::to_string(cfg.model.class_count) +
                        " classes, dataset " + std::to_string(d->class_count));
    }
  }

  const fs::path out(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  write_file_atomic(out / "config.json", to_json(cfg));

  Model model(cfg.model, cfg.train.seed);
  std::string csv = "epoch,loss,miou,lr\n";
  const auto history = train_loop(model, cfg.train, train.items, val.items,
                                  [&](const EpochMetrics& m, bool is_best) {
                                    std::cout << "epoch=" << m.epoch << " loss=" << fmt(m.loss, 6)
                                              << " miou=" << fmt(m.miou, 6) << " lr=" << fmt(m.lr, 6)
                                              << std::endl;
                                    csv += std::to_string(m.epoch) + "," + fmt(m.loss) + "," +
                                           fmt(m.miou) + "," + fmt(m.lr) + "\n";
                                    write_file_atomic(out / "metrics.csv", csv);
                                    if (is_best) save_checkpoint(model.params(), out / "best.ckpt");
                                    save_checkpoint(model.params(), out / "last.ckpt");
                                  });
  std::cout << "final miou=" << fmt(history.back().miou, 6) << " threads=" << cfg.train.threads << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, std::string config,
             std::optional<int> threads) {
  if (config.empty()) config = (fs::path(ckpt).parent_path() / "config.json").string();
  RunConfig cfg = load_run_config(config);
  auto model = model_from_checkpoint(cfg, ckpt);
  const Dataset ds = open_dataset(data, cfg.train.boundary_radius, "data");
  if (ds.class_count != cfg.model.class_count) {
    throw ConfigError("class_count: checkpoint model has " + std::to_string(cfg.model.class_count) +
                      " classes, dataset " + std::to_string(ds.class_count));
  }
  const int t = threads ? *threads : default_threads();
  const MiouResult r = evaluate(*model, ds.items, cfg.train.batch_size, t).miou();
  std::cout << "class  iou\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    std::cout << std::setw(5) << k << "  " << (r.per_class[k] ? fmt(*r.per_class[k], 6) : "absent") << "\n";
  }
  std::cout << "miou=" << fmt(r.mean, 6) << " images=" << ds.items.size() << " threads=" << t << "\n";
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& image, const std::string& out,
              std::string config, std::optional<double> overlay) {
  if (config.empty()) config = (fs::path(ckpt).parent_path() / "config.json").string();
  RunConfig cfg = load_run_config(config);
  auto model = model_from_checkpoint(cfg, ckpt);
  const Tensor img = read_ppm(image);
  Model::check_input(img.shape());
  Graph g(NormMode::kEval, false);
  const ModelOutputs o = model->forward(g.input(img));
  const LabelMap labels{img.shape().h, img.shape().w, argmax_labels(o.seg.value())};
  write_ppm(out, overlay ? render_overlay(img, labels, *overlay) : colorize(labels));
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lkaseg: bilateral large-kernel-attention segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "generate a synthetic dataset");
  c_synth->add_option("--spec", synth.spec_file, "JSON spec file");
  c_synth->add_option("--out", synth.out, "output directory")->required();
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--count", synth.count);
  c_synth->add_option("--height", synth.height);
  c_synth->add_option("--width", synth.width);
  c_synth->add_option("--class-count", synth.class_count);
  c_synth->add_option("--density", synth.density);
  c_synth->add_option("--min-shape-size", synth.min_shape_size);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "train a model");
  c_train->add_option("--config", train.config, "JSON run config")->required();
  c_train->add_option("--out", train.out, "output directory")->required();
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--threads", train.threads, "validation workers (default $LKA_SEG_THREADS or 1)");
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--train-dir", train.train_dir);
  c_train->add_option("--val-dir", train.val_dir);
  c_train->add_option("--fusion", train.fusion, "bgaf or fixed_half");
  c_train->add_option("--ppm", train.ppm, "dlkppm or dappm");

  std::string ckpt, data, config, image, out, preset = "toy", format = "table", rf_path;
  std::optional<int> threads;
  std::optional<double> overlay;
  int iters = 10, warmup = 2;
  bool check = false;

  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  c_eval->add_option("--ckpt", ckpt)->required();
  c_eval->add_option("--data", data)->required();
  c_eval->add_option("--config", config, "default: config.json next to the checkpoint");
  c_eval->add_option("--threads", threads);

  auto* c_infer = app.add_subcommand("infer", "segment one PPM image");
  c_infer->add_option("--ckpt", ckpt)->required();
  c_infer->add_option("--image", image)->required();
  c_infer->add_option("--out", out)->required();
  c_infer->add_option("--config", config);
  c_infer->add_option("--overlay", overlay, "blend factor in [0, 1]");

  auto add_report_opts = [&](CLI::App* c) {
    c->add_option("--config", config);
    c->add_option("--preset", preset, "toy, small or base when no config is given");
    c->add_option("--format", format, "table or csv");
  };
  auto* c_flops = app.add_subcommand("flops", "static FLOP count");
  add_report_opts(c_flops);
  c_flops->add_flag("--check", check, "also run an instrumented forward and compare");
  auto* c_params = app.add_subcommand("params", "trainable parameter count");
  add_report_opts(c_params);
  auto* c_rf = app.add_subcommand("rf", "receptive fields of named paths");
  add_report_opts(c_rf);
  c_rf->add_option("--path", rf_path, "print only this path");
  auto* c_bench = app.add_subcommand("bench", "eval-mode latency");
  add_report_opts(c_bench);
  c_bench->add_option("--iters", iters);
  c_bench->add_option("--warmup", warmup);
  c_bench->add_option("--threads", threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_train) return run_train(train);
    if (*c_eval) return run_eval(ckpt, data, config, threads);
    if (*c_infer) return run_infer(ckpt, image, out, config, overlay);

    const ReportFormat f = parse_format(format);
    const RunConfig cfg = resolve_config(config, preset);
    const Model model(cfg.model, cfg.train.seed);
    const Shape input = cfg.input_shape();
    if (*c_flops) {
      const CostReport r = count_flops(model, input);
      print_flops(std::cout, r, f);
      if (check) {
        const std::int64_t measured = measure_flops(model, input);
        std::cout << "instrumented " << measured << (measured == r.total_flops ? " match" : " MISMATCH") << "\n";
        if (measured != r.total_flops) return 1;
      }
    } else if (*c_params) {
      print_params(std::cout, count_flops(model, input), f);
    } else if (*c_rf) {
      CostReport r = count_flops(model, input);
      if (!rf_path.empty()) {
        std::erase_if(r.rf_table, [&](const RfEntry& e) { return e.name != rf_path; });
        if (r.rf_table.empty()) throw ConfigError("path: unknown receptive-field path \"" + rf_path + "\"");
      }
      print_rf(std::cout, r, f);
    } else if (*c_bench) {
      const int t = threads ? *threads : default_threads();
      print_latency(std::cout, bench_latency(model, input, warmup, iters, t), f);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
