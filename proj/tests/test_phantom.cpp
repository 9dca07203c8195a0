#include <doctest.h>

#include <filesystem>

#include "hnseg/config.hpp"
#include "hnseg/inference.hpp"
#include "hnseg/phantom.hpp"
#include "hnseg/preprocess.hpp"
#include "helpers.hpp"

using namespace hnseg;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("phantom");

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec p = desk_preset().phantom;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("the same (seed, index) reproduces the case bit-identically") {
  const PhantomSpec spec = small_spec(42);
  const PhantomCase a = generate_case(spec, 3);
  const PhantomCase b = generate_case(spec, 3);
  CHECK(a.ct.values == b.ct.values);
  CHECK(a.pet.values == b.pet.values);
  CHECK(a.label.labels == b.label.labels);
  const PhantomCase c = generate_case(spec, 4);
  CHECK(a.ct.values != c.ct.values);
}

TEST_CASE("CT and PET live on different grids sharing one world frame") {
  const PhantomCase c = generate_case(small_spec(1), 0);
  CHECK(c.ct.geom.spacing == Vec3d{1, 1, 2});
  CHECK(c.pet.geom.spacing == Vec3d{3, 3, 3});
  CHECK(c.label.geom == c.ct.geom);
}

TEST_CASE("zero tumor weight means no class-1 voxels") {
  PhantomSpec spec = small_spec(2);
  spec.tumor_count_weights = {1.0, 0.0, 0.0};
  for (int idx = 0; idx < 3; ++idx) {
    const PhantomCase c = generate_case(spec, idx);
    CHECK(c.truth.tumor_count == 0);
    for (auto l : c.label.labels) CHECK(l != 1);
    CHECK(c.truth.node_count >= 1);  // nodes always present
  }
}

TEST_CASE("foreground volume fraction stays under 5 percent") {
  const PhantomCase c = generate_case(small_spec(3), 0);
  std::int64_t fg = 0;
  for (auto l : c.label.labels) fg += l != 0;
  CHECK(double(fg) / double(c.label.labels.size()) < 0.05);
}

TEST_CASE("manifest lesion centers land inside their own label component") {
  const PhantomCase c = generate_case(small_spec(4), 1);
  for (const auto& l : c.truth.lesions) {
    const Vec3d u = c.label.geom.continuous_index(l.center);
    const std::int64_t x = std::llround(u.x), y = std::llround(u.y),
                       z = std::llround(u.z);
    REQUIRE(x >= 0);
    REQUIRE(x < c.label.geom.size.x);
    CHECK(c.label.at(x, y, z) == std::uint8_t(l.cls));
  }
}

TEST_CASE("label component counts equal the drawn lesion counts") {
  for (std::uint64_t seed = 10; seed < 16; ++seed) {
    const PhantomCase c = generate_case(small_spec(seed), int(seed));
    const auto tumors = connected_components_26(c.label, 1);
    const auto nodes = connected_components_26(c.label, 2);
    CHECK(std::int64_t(tumors.size()) == c.truth.tumor_count);
    CHECK(std::int64_t(nodes.size()) == c.truth.node_count);
  }
}

TEST_CASE("lesion PET exceeds the detection threshold; distant body stays below") {
  const PhantomSpec spec = small_spec(5);
  const PhantomCase c = generate_case(spec, 0);
  const ImageGeometry& pg = c.pet.geom;
  for (const auto& l : c.truth.lesions) {
    const Vec3d u = pg.continuous_index(l.center);
    const float v = c.pet.at(std::llround(u.x), std::llround(u.y), std::llround(u.z));
    CHECK(v > 1.0f);
  }
  // a voxel far below the head and away from lesions sits at body uptake
  const Vec3d probe{c.truth.head_center.x, c.truth.head_center.y, 8.0};
  const Vec3d u = pg.continuous_index(probe);
  const float v = c.pet.at(std::llround(u.x), std::llround(u.y), std::llround(u.z));
  CHECK(v < 1.0f);
}

TEST_CASE("head-top ground truth matches the PET-visible top of the head") {
  const PhantomCase c = generate_case(small_spec(6), 2);
  const double top = detect_head_top(c.pet, CropHeuristicConfig{});
  CHECK(std::abs(top - c.truth.head_top_z) <= c.pet.geom.spacing.z + 1e-9);
}

TEST_CASE("corpus generation writes cases, a manifest, and reproduces itself") {
  const std::string dir = testutil::temp_dir("corpus");
  const PhantomSpec spec = small_spec(7);
  const CorpusManifest m = generate_corpus(spec, 3, dir);
  CHECK(m.cases.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const std::string cdir = dir + "/case_00" + std::to_string(i);
    CHECK(fs::exists(cdir + "/ct.nii.gz"));
    CHECK(fs::exists(cdir + "/pet.nii.gz"));
    CHECK(fs::exists(cdir + "/label.nii.gz"));
  }
  const CorpusManifest back = load_manifest(dir + "/manifest.json");
  REQUIRE(back.cases.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.cases[i].case_id == m.cases[i].case_id);
    CHECK(back.cases[i].head_top_z == doctest::Approx(m.cases[i].head_top_z));
    CHECK(back.cases[i].lesions.size() == m.cases[i].lesions.size());
  }

  const std::string dir2 = testutil::temp_dir("corpus2");
  const CorpusManifest again = generate_corpus(spec, 3, dir2);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again.cases[i].head_radius == m.cases[i].head_radius);
    CHECK(again.cases[i].lesions.size() == m.cases[i].lesions.size());
    for (std::size_t j = 0; j < m.cases[i].lesions.size(); ++j)
      CHECK(again.cases[i].lesions[j].center == m.cases[i].lesions[j].center);
  }
}

TEST_SUITE_END();
