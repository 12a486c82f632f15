#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "lkaseg/netpbm.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

class Sandbox {
 public:
  Sandbox() {
    dir_ = fs::temp_directory_path() / ("lkaseg_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Sandbox() { fs::remove_all(dir_); }

  const fs::path& dir() const { return dir_; }

  Run run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" LKASEG_CLI "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = lkaseg::read_file(out);
    r.err = lkaseg::read_file(err);
    return r;
  }

  void write(const std::string& name, const std::string& text) const { std::ofstream(dir_ / name) << text; }

 private:
  fs::path dir_;
};

}  // namespace

TEST_CASE("synth-data writes the declared default and is repeatable") {
  Sandbox sb;
  REQUIRE(sb.run("synth-data --out a").code == 0);
  REQUIRE(sb.run("synth-data --out b").code == 0);
  int images = 0;
  for (const auto& e : fs::directory_iterator(sb.dir() / "a")) {
    images += e.path().extension() == ".ppm";
    CHECK(lkaseg::read_file(e.path()) == lkaseg::read_file(sb.dir() / "b" / e.path().filename()));
  }
  CHECK(images == 64);
}

TEST_CASE("configuration errors exit with 2") {
  Sandbox sb;
  const Run k1 = sb.run("synth-data --out x --class-count 1");
  CHECK(k1.code == 2);
  CHECK(k1.err.find("class_count") != std::string::npos);

  sb.write("spec.json", R"({"class_count": 1})");
  CHECK(sb.run("synth-data --spec spec.json --out y").code == 2);

  sb.write("unknown.json", R"({"version": 1, "no_such_key": 3})");
  const Run unknown = sb.run("flops --config unknown.json");
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("no_such_key") != std::string::npos);

  CHECK(sb.run("train --out o").code == 2);
  CHECK(sb.run("no-such-command").code == 2);

  sb.write("missing.json", R"({"version": 1, "train_dir": "nowhere", "val_dir": "nowhere", "epochs": 1})");
  CHECK(sb.run("train --config missing.json --out o").code == 2);
}

TEST_CASE("analysis commands") {
  Sandbox sb;
  const Run rf = sb.run("rf --preset toy");
  CHECK(rf.code == 0);
  CHECK(rf.out.find("35 x 35") != std::string::npos);
  const Run rfcsv = sb.run("rf --preset toy --path sdlska.large --format csv");
  CHECK(rfcsv.out.find("sdlska.large,35,35") != std::string::npos);

  const Run flops = sb.run("flops --preset toy --check");
  CHECK(flops.code == 0);
  CHECK(flops.out.find("11912504") != std::string::npos);

  const Run params = sb.run("params --preset toy");
  CHECK(params.code == 0);
  CHECK(params.out.find("273266") != std::string::npos);

  const Run bench = sb.run("bench --preset toy --iters 1 --warmup 0 --format csv");
  CHECK(bench.code == 0);
  CHECK(bench.out.find("threads") != std::string::npos);
}

TEST_CASE("train, eval and infer") {
  Sandbox sb;
  REQUIRE(sb.run("synth-data --out tr --count 4 --seed 1").code == 0);
  REQUIRE(sb.run("synth-data --out va --count 2 --seed 2").code == 0);
  sb.write("cfg.json",
           R"({"version": 1, "preset": "toy", "train_dir": "tr", "val_dir": "va", "epochs": 2, "batch_size": 2})");
  const Run t1 = sb.run("train --config cfg.json --out r1 --seed 4");
  REQUIRE(t1.code == 0);
  CHECK(t1.out.find("epoch=2 loss=") != std::string::npos);
  CHECK(t1.out.find("final miou=") != std::string::npos);
  REQUIRE(sb.run("train --config cfg.json --out r2 --seed 4").code == 0);
  CHECK(lkaseg::read_file(sb.dir() / "r1/metrics.csv") == lkaseg::read_file(sb.dir() / "r2/metrics.csv"));
  CHECK(lkaseg::read_file(sb.dir() / "r1/last.ckpt") == lkaseg::read_file(sb.dir() / "r2/last.ckpt"));
  CHECK(fs::exists(sb.dir() / "r1/best.ckpt"));
  CHECK(lkaseg::read_file(sb.dir() / "r1/metrics.csv").rfind("epoch,loss,miou,lr\n", 0) == 0);

  const Run ev = sb.run("eval --ckpt r1/last.ckpt --data va");
  CHECK(ev.code == 0);
  CHECK(ev.out.find("miou=") != std::string::npos);

  const Run inf = sb.run("infer --ckpt r1/last.ckpt --image va/img_00000.ppm --out pred.ppm --overlay 0.5");
  CHECK(inf.code == 0);
  CHECK(fs::exists(sb.dir() / "pred.ppm"));

  sb.write("bad.ckpt", "LKAS garbage");
  CHECK(sb.run("eval --ckpt bad.ckpt --data va --config r1/config.json").code == 4);
  CHECK(sb.run("infer --ckpt r1/last.ckpt --image nope.ppm --out p.ppm").code == 4);

  sb.write("nan.json", R"({"version": 1, "preset": "toy", "train_dir": "tr", "val_dir": "va", "epochs": 1,
                          "batch_size": 2, "base_lr": 1e200})");
  const Run nan = sb.run("train --config nan.json --out r3");
  CHECK(nan.code == 3);
  CHECK(nan.err.find("parameter") != std::string::npos);
}
