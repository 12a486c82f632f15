#include <doctest.h>

#include <cmath>
#include <random>

#include "lkaseg/analysis.hpp"
#include "lkaseg/errors.hpp"
#include "lkaseg/model.hpp"
#include "support.hpp"

using namespace lkaseg;
using testing::randomize_store;
using testing::ref_conv;
using testing::ref_nrc;

namespace {

double peak(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

void halve(Tensor& t) {
  for (double& v : t.data()) v *= 0.5;
}

std::string config_error(const ModelConfig& c) {
  try {
    c.validate();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

Var probe_loss(Graph& g, const ModelOutputs& o, std::mt19937_64& rng) {
  Var l = sum(mul(o.seg, g.input(random_normal(o.seg.shape(), rng))));
  if (o.aux) l = add(l, sum(mul(*o.aux, g.input(random_normal(o.aux->shape(), rng)))));
  if (o.boundary) l = add(l, sum(mul(*o.boundary, g.input(random_normal(o.boundary->shape(), rng)))));
  return l;
}

struct BgafFixture {
  ParamStore store;
  Bgaf bgaf;
  Tensor detail, semantic, boundary;

  explicit BgafFixture(FusionKind kind, std::uint64_t seed = 5) {
    bgaf = Bgaf(store, "bgaf", 3, 4, 2, 3, kind);
    std::mt19937_64 rng(seed);
    randomize_store(store, rng);
    detail = random_normal({2, 3, 6, 5}, rng);
    semantic = random_normal({2, 4, 6, 5}, rng);
    boundary = random_normal({2, 2, 6, 5}, rng);
  }

  Bgaf::Outputs run(Graph& g) const { return bgaf.forward(g.input(detail), g.input(semantic), g.input(boundary)); }
};

}  // namespace

TEST_CASE("presets and validation") {
  CHECK(ModelConfig::preset("toy").high_widths == std::array<int, 2>{32, 64});
  CHECK(ModelConfig::preset("small").low_width == 32);
  CHECK(ModelConfig::preset("base").eva_blocks_per_stage == 3);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);

  ModelConfig c;
  c.class_count = 1;
  CHECK(config_error(c).find("class_count") != std::string::npos);
  c = ModelConfig{};
  c.exchange_points = {3};
  CHECK(config_error(c).find("exchange_points") != std::string::npos);
  c = ModelConfig{};
  c.low_width = 0;
  CHECK(config_error(c).find("low_width") != std::string::npos);
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
}

TEST_CASE("input geometry is checked") {
  CHECK_NOTHROW(Model::check_input({1, 3, 64, 128}));
  CHECK_THROWS_AS(Model::check_input({1, 4, 64, 64}), ShapeError);
  CHECK_THROWS_AS(Model::check_input({1, 3, 96, 64}), ShapeError);
  CHECK_THROWS_AS(Model::check_input({1, 3, 64, 32}), ShapeError);
}

TEST_CASE("output shapes and finite logits") {
  Model m(ModelConfig::preset("toy"), 3);
  std::mt19937_64 rng(1);
  Graph g(NormMode::kEval, false);
  const ModelOutputs o = m.forward(g.input(random_uniform({1, 3, 64, 64}, rng)));
  CHECK(o.seg.shape() == Shape{1, 5, 64, 64});
  REQUIRE(o.aux);
  CHECK(o.aux->shape() == Shape{1, 5, 64, 64});
  REQUIRE(o.boundary);
  CHECK(o.boundary->shape() == Shape{1, 1, 8, 8});
  CHECK(o.seg.value().all_finite());

  ModelConfig c = ModelConfig::preset("toy");
  c.aux_head = false;
  c.boundary_head = false;
  c.class_count = 7;
  Model bare(c, 3);
  Graph g2(NormMode::kEval, false);
  const ModelOutputs ob = bare.forward(g2.input(random_uniform({2, 3, 64, 128}, rng)));
  CHECK(ob.seg.shape() == Shape{2, 7, 64, 128});
  CHECK_FALSE(ob.aux);
  CHECK_FALSE(ob.boundary);
}

TEST_CASE("initialisation is deterministic and follows the convention") {
  Model a(ModelConfig::preset("toy"), 9), b(ModelConfig::preset("toy"), 9), c(ModelConfig::preset("toy"), 10);
  REQUIRE(a.params().params().size() == b.params().params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().params().size(); ++i) {
    const Parameter& pa = *a.params().params()[i];
    CHECK(pa.name == b.params().params()[i]->name);
    CHECK(max_abs_diff(pa.value, b.params().params()[i]->value) == 0.0);
    if (max_abs_diff(pa.value, c.params().params()[i]->value) != 0.0) any_diff = true;
    const bool is_bias = pa.name.ends_with(".bias") || pa.name.ends_with(".beta");
    if (is_bias) CHECK(peak(pa.value) == 0.0);
    if (pa.name.ends_with(".gamma")) {
      for (double v : pa.value.data()) CHECK(v == 1.0);
    }
  }
  CHECK(any_diff);
}

TEST_CASE("eval forward is repeatable") {
  Model m(ModelConfig::preset("toy"), 4);
  std::mt19937_64 rng(2);
  const Tensor x = random_uniform({1, 3, 64, 64}, rng);
  Graph g1(NormMode::kEval, false), g2(NormMode::kEval, false);
  CHECK(max_abs_diff(m.forward(g1.input(x)).seg.value(), m.forward(g2.input(x)).seg.value()) == 0.0);
}

TEST_CASE("every parameter receives gradient") {
  // Batch of two: with one sample the globally pooled pyramid levels are
  // per-channel constants that a train-mode norm removes exactly.
  for (FusionKind fusion : {FusionKind::kBgaf, FusionKind::kFixedHalf}) {
    ModelConfig c = ModelConfig::preset("toy");
    c.fusion = fusion;
    Model m(c, 5);
    std::mt19937_64 rng(3);
    Graph g(NormMode::kTrain);
    const ModelOutputs o = m.forward(g.input(random_uniform({2, 3, 64, 64}, rng)));
    m.params().zero_grad();
    g.backward(probe_loss(g, o, rng));
    for (const auto& p : m.params().params()) {
      CHECK_MESSAGE(peak(p->grad) > 0.0, p->name);
    }
  }
}

TEST_CASE("full model gradient spot check") {
  Model m(ModelConfig::preset("toy"), 6);
  std::mt19937_64 rng(4);
  const Tensor x = random_uniform({2, 3, 64, 64}, rng);
  const std::uint64_t probe_seed = rng();
  auto loss = [&](Graph& g) {
    std::mt19937_64 r(probe_seed);
    return probe_loss(g, m.forward(g.input(x)), r);
  };
  const auto rep = testing::spot_check(loss, m.params(), 10, 7);
  MESSAGE(rep.where << " err=" << rep.worst << " skipped=" << rep.skipped);
  CHECK_MESSAGE(rep.worst < 1e-5, rep.where << " " << rep.worst);
}

TEST_CASE("fusion matches the loop oracle") {
  BgafFixture f(FusionKind::kBgaf);
  Graph g(NormMode::kEval, false);
  const Bgaf::Outputs o = f.run(g);
  const Tensor rd = ref_nrc(f.bgaf.detail_refine, f.detail);
  const Tensor rs = ref_nrc(f.bgaf.semantic_refine, f.semantic);
  const Tensor logit = ref_conv(f.bgaf.boundary_gate, f.boundary);
  Tensor balanced(rd.shape());
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 6; ++h)
        for (int w = 0; w < 5; ++w) {
          const double s = 1.0 / (1.0 + std::exp(-logit.at(n, 0, h, w)));
          balanced.at(n, c, h, w) = s * rd.at(n, c, h, w) + (1.0 - s) * rs.at(n, c, h, w);
        }
  CHECK(testing::max_rel_diff(o.balanced.value(), balanced, 1e-12) < 1e-12);
  Tensor merged = balanced;
  merged += ref_conv(f.bgaf.shortcut_proj, f.detail);
  CHECK(testing::max_rel_diff(o.out.value(), ref_nrc(f.bgaf.out_conv, merged), 1e-12) < 1e-12);
  REQUIRE(o.sigma);
  CHECK(o.sigma->shape() == Shape{2, 1, 6, 5});
  for (double s : o.sigma->value().data()) {
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("zero gate gives the mean and the fixed variant matches it") {
  BgafFixture f(FusionKind::kBgaf);
  f.bgaf.boundary_gate.weight().value.fill(0.0);
  f.bgaf.boundary_gate.bias()->value.fill(0.0);
  Graph g(NormMode::kEval, false);
  const Bgaf::Outputs o = f.run(g);
  Tensor mean = ref_nrc(f.bgaf.detail_refine, f.detail);
  mean += ref_nrc(f.bgaf.semantic_refine, f.semantic);
  halve(mean);
  CHECK(testing::max_rel_diff(o.balanced.value(), mean, 1e-12) < 1e-12);

  BgafFixture h(FusionKind::kFixedHalf);
  CHECK(h.store.find("bgaf.boundary_gate.weight") == nullptr);
  Graph gh(NormMode::kEval, false);
  const Bgaf::Outputs oh = h.run(gh);
  CHECK_FALSE(oh.sigma);
  Tensor hmean = ref_nrc(h.bgaf.detail_refine, h.detail);
  hmean += ref_nrc(h.bgaf.semantic_refine, h.semantic);
  halve(hmean);
  CHECK(testing::max_rel_diff(oh.balanced.value(), hmean, 1e-12) < 1e-12);
}

TEST_CASE("saturated gate selects the detail branch") {
  BgafFixture f(FusionKind::kBgaf);
  f.bgaf.boundary_gate.weight().value.fill(0.0);
  f.bgaf.boundary_gate.bias()->value.fill(60.0);
  Graph g(NormMode::kEval, false);
  CHECK(max_abs_diff(f.run(g).balanced.value(), ref_nrc(f.bgaf.detail_refine, f.detail)) < 1e-12);
}

TEST_CASE("raising the gate moves the blend toward detail") {
  BgafFixture f(FusionKind::kBgaf);
  const Tensor rd = ref_nrc(f.bgaf.detail_refine, f.detail);
  double& bias = f.bgaf.boundary_gate.bias()->value[0];
  Tensor previous;
  for (double shift : {-4.0, -1.0, 0.0, 0.5, 3.0}) {
    bias = shift;
    Graph g(NormMode::kEval, false);
    const Tensor b = f.run(g).balanced.value();
    if (!previous.empty()) {
      for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(std::abs(b[i] - rd[i]) <= std::abs(previous[i] - rd[i]) + 1e-15);
      }
    }
    previous = b;
  }
}

TEST_CASE("fusion gradients match finite differences") {
  for (FusionKind kind : {FusionKind::kBgaf, FusionKind::kFixedHalf}) {
    for (NormMode mode : {NormMode::kTrain, NormMode::kEval}) {
      BgafFixture f(kind, 11);
      auto r = testing::grad_check(
          [&](Graph&, const std::vector<Var>& v) { return f.bgaf(v[0], v[1], v[2]); },
          {f.detail, f.semantic, f.boundary}, &f.store, 2, 1e-5, 48, mode);
      CHECK_MESSAGE(r.worst < 1e-6, r.where << " " << r.worst);
    }
  }
}

TEST_CASE("static parameter walk matches the store") {
  for (const char* preset : {"toy", "small"}) {
    for (FusionKind fusion : {FusionKind::kBgaf, FusionKind::kFixedHalf}) {
      for (bool heads : {true, false}) {
        ModelConfig c = ModelConfig::preset(preset);
        c.fusion = fusion;
        c.aux_head = heads;
        c.boundary_head = heads;
        if (!heads) c.exchange_points = {2};
        Model m(c, 0);
        CHECK(count_params(m) == m.params().scalar_count());
      }
    }
  }
  CHECK(count_params(Model(ModelConfig::preset("toy"), 0)) == 273266);
}
