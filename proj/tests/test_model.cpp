#include "doctest.h"

#include <fstream>
#include <map>

#include "hds/model.hpp"
#include "test_util.hpp"

using namespace hds;
using hds::test::TempDir;

namespace {

Tensor<float> random_input(Shape shape, std::uint64_t seed) {
  RngState rng{seed, 0};
  Tensor<float> x(std::move(shape));
  for (Index i = 0; i < x.size(); ++i) x.values()[i] = static_cast<float>(rng.normal());
  return x;
}

bool same_outputs(const HDSOutputs<float>& a, const HDSOutputs<float>& b) {
  if (a.seg_logits.size() != b.seg_logits.size() || a.cls_maps.size() != b.cls_maps.size()) return false;
  for (std::size_t i = 0; i < a.seg_logits.size(); ++i) {
    if (!(a.seg_logits[i].values() == b.seg_logits[i].values()).all()) return false;
  }
  for (std::size_t i = 0; i < a.cls_maps.size(); ++i) {
    if (!(a.cls_maps[i].values() == b.cls_maps[i].values()).all()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("paper preset has 45 main-stream 3x3 convolutions") {
  auto model = build_model<float>(paper_arch(), RngState{0, 0});
  CHECK(count_conv3x3(model) == 45);
  CHECK(model.config.total_blocks() == 22);
  CHECK(model.paths.size() == 6);
}

TEST_CASE("inferred shapes for full-size inputs") {
  for (const auto& s : infer_output_shapes(paper_arch(), 512, 384)) {
    CHECK(s.seg_h == 512);
    CHECK(s.seg_w == 384);
    CHECK(s.cls_h == 4);
    CHECK(s.cls_w == 3);
  }
  for (const auto& s : infer_output_shapes(paper_arch(), 1024, 512)) {
    CHECK(s.cls_h == 8);
    CHECK(s.cls_w == 4);
  }
  CHECK(required_divisor(paper_arch()) == 128);
}

TEST_CASE("minimal two-scale network builds and runs") {
  ArchConfig c = tiny_arch(4);
  c.encoder_blocks = {1, 1};
  c.decoder_blocks = {1};
  auto model = build_model<float>(c, RngState{1, 0});
  auto out = forward(model, random_input({1, 1, 128, 128}, 2), false, RngState{3, 0});
  REQUIRE(out.seg_logits.size() == 2);
  REQUIRE(out.cls_maps.size() == 2);
  for (const auto& s : out.seg_logits) CHECK(s.shape() == Shape{1, 2, 128, 128});
  for (const auto& m : out.cls_maps) {
    CHECK(m.shape() == Shape{1, 1, 1, 1});
    CHECK(m.item() > 0.0f);
    CHECK(m.item() < 1.0f);
  }
}

TEST_CASE("desk forward matches inferred shapes and is deterministic without dropout") {
  auto model = build_model<float>(desk_arch(), RngState{4, 0});
  auto x = random_input({2, 1, 256, 128}, 5);
  auto a = forward(model, x, false, RngState{6, 0});
  auto b = forward(model, x, false, RngState{7, 0});
  CHECK(same_outputs(a, b));
  auto shapes = infer_output_shapes(desk_arch(), 256, 128);
  REQUIRE(shapes.size() == a.cls_maps.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    CHECK(a.seg_logits[i].shape() == Shape{2, 2, shapes[i].seg_h, shapes[i].seg_w});
    CHECK(a.cls_maps[i].shape() == Shape{2, 1, shapes[i].cls_h, shapes[i].cls_w});
  }
  auto t1 = forward(model, x, true, RngState{6, 0});
  auto t2 = forward(model, x, true, RngState{6, 0});
  auto t3 = forward(model, x, true, RngState{8, 0});
  CHECK(same_outputs(t1, t2));
  CHECK_FALSE(same_outputs(t1, t3));
}

TEST_CASE("forward rejects indivisible extents") {
  auto model = build_model<float>(desk_arch(), RngState{0, 0});
  CHECK_THROWS_AS(forward(model, random_input({1, 1, 200, 128}, 0), false, RngState{}), ShapeError);
  CHECK_THROWS_AS(forward(model, random_input({1, 2, 128, 128}, 0), false, RngState{}), ShapeError);
}

TEST_CASE("mode controls which heads exist") {
  ArchConfig c = desk_arch();
  apply_mode(c, Mode::seg_only);
  auto seg = forward(build_model<float>(c, RngState{}), random_input({1, 1, 128, 128}, 1), false, RngState{});
  CHECK(seg.seg_logits.size() == 3);
  CHECK(seg.cls_maps.empty());

  c = desk_arch();
  apply_mode(c, Mode::cls_only);
  auto cls = forward(build_model<float>(c, RngState{}), random_input({1, 1, 128, 128}, 1), false, RngState{});
  CHECK(cls.seg_logits.empty());
  CHECK(cls.cls_maps.size() == 3);

  c = desk_arch();
  apply_mode(c, Mode::multitask_no_ds);
  CHECK(c.supervision_levels == std::vector<int>{0});
  auto nods = forward(build_model<float>(c, RngState{}), random_input({1, 1, 128, 128}, 1), false, RngState{});
  CHECK(nods.seg_logits.size() == 1);
  CHECK(nods.cls_maps.size() == 1);
}

TEST_CASE("image_probability is the map maximum") {
  Tensor<float> m(Shape{2, 1, 2, 3}, 0.1f);
  m.at(1, 0, 1, 2) = 0.9f;
  auto p = image_probability(m);
  CHECK(p.shape() == Shape{2, 1});
  CHECK(p.values()[0] == 0.1f);
  CHECK(p.values()[1] == 0.9f);
}

TEST_CASE("Kaiming initialization") {
  auto model = build_model<double>(paper_arch(), RngState{13, 0});
  int checked = 0;
  for (const auto& p : model.parameters()) {
    const auto& t = p.tensor;
    if (t.ndim() == 1) {
      CHECK((t.values() == 0.0).all());
      continue;
    }
    if (t.size() < 10000) continue;
    const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
    const double var = t.values().square().mean();
    CHECK_MESSAGE(std::abs(var * fan_in / 2.0 - 1.0) < 0.2, p.name);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("parameter names are unique and stable") {
  auto a = build_model<float>(desk_arch(), RngState{0, 0});
  auto b = build_model<float>(desk_arch(), RngState{1, 0});
  std::map<std::string, int> seen;
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(++seen[pa[i].name] == 1);
  }
}

TEST_CASE("weights round-trip bit-exactly") {
  TempDir dir("hds_model");
  auto a = build_model<float>(desk_arch(), RngState{21, 0});
  auto b = build_model<float>(desk_arch(), RngState{22, 0});
  save_weights(a, dir / "w.hdsw");
  CHECK(read_weight_fingerprint(dir / "w.hdsw") == fingerprint(desk_arch()));
  load_weights(b, dir / "w.hdsw");
  auto pa = a.parameters();
  auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i].tensor.values() == pb[i].tensor.values()).all());
  auto x = random_input({1, 1, 128, 128}, 23);
  CHECK(same_outputs(forward(a, x, false, RngState{}), forward(b, x, false, RngState{})));
}

TEST_CASE("loading a mismatched architecture is rejected and leaves the model untouched") {
  TempDir dir("hds_model");
  auto small = build_model<float>(tiny_arch(4), RngState{1, 0});
  save_weights(small, dir / "tiny.hdsw");
  auto model = build_model<float>(desk_arch(), RngState{2, 0});
  std::vector<Vec<float>> before;
  for (const auto& p : model.parameters()) before.push_back(p.tensor.values());
  CHECK_THROWS_AS(load_weights(model, dir / "tiny.hdsw"), FormatError);
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK((params[i].tensor.values() == before[i]).all());

  std::ofstream(dir / "junk.hdsw") << "not weights";
  CHECK_THROWS_AS(load_weights(model, dir / "junk.hdsw"), FormatError);
}

TEST_CASE("architecture validation") {
  ArchConfig c = desk_arch();
  c.encoder_blocks = {1, 1};
  CHECK_THROWS_AS(validate(c), ValueError);
  c = desk_arch();
  c.supervision_levels = {0, 3};
  CHECK_THROWS_AS(validate(c), ValueError);
  CHECK(fingerprint(desk_arch()) == fingerprint(desk_arch()));
  CHECK(fingerprint(desk_arch()) != fingerprint(paper_arch()));
  CHECK(parse_mode(to_string(Mode::multitask_no_ds)) == Mode::multitask_no_ds);
  CHECK_THROWS_AS(parse_mode("both"), ValueError);
}
