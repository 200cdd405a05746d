#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "iars/dataset.hpp"
#include "iars/image.hpp"
#include "iars/synth.hpp"

namespace fs = std::filesystem;
using iars::BinaryMask;
using iars::RgbImage;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("iars_test_" + std::to_string(::getpid()) + "_" +
                                                std::to_string(counter++))) {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

}  // namespace

TEST_CASE("ppm round trip is byte-identical") {
  TempDir td;
  auto samples = iars::synth_generate({.count = 1, .height = 24, .width = 32, .seed = 5});
  const std::string p1 = td.file("a.ppm"), p2 = td.file("b.ppm");
  iars::write_ppm(p1, samples[0].image);
  iars::write_ppm(p2, iars::read_ppm(p1));
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("pgm round trip is byte-identical and 255 means true") {
  TempDir td;
  const std::string p = td.file("m.pgm");
  spit(p, std::string("P5\n2 2\n255\n") + '\xff' + '\xff' + '\xff' + '\xff');
  auto m = iars::read_pgm(p);
  CHECK(m.count() == 4);  // all-white file -> all-true mask
  const std::string p2 = td.file("m2.pgm");
  iars::write_pgm(p2, m);
  CHECK(slurp(p) == slurp(p2));
}

TEST_CASE("codecs reject malformed files with distinct errors") {
  TempDir td;
  const std::string p = td.file("bad");
  spit(p, "P4\n2 2\n255\n....");
  CHECK_THROWS_AS(iars::read_pgm(p), iars::BadMagicError);
  spit(p, std::string("P5\n2 2\n254\n") + std::string(4, '\0'));
  CHECK_THROWS_AS(iars::read_pgm(p), iars::BadMaxvalError);
  spit(p, "P5\n2 2\n255\n\xff");
  CHECK_THROWS_AS(iars::read_pgm(p), iars::PayloadSizeError);
  spit(p, std::string("P5\n2 2\n255\n") + '\xff' + '\x80' + '\xff' + '\xff');
  CHECK_THROWS_AS(iars::read_pgm(p), iars::NonBinaryMaskError);
  spit(p, "P5\n-2 2\n255\nxxxx");
  CHECK_THROWS_AS(iars::read_pgm(p), iars::BadHeaderError);
  spit(p, std::string("P6\n1 1\n255\n") + std::string(7, 'x'));
  CHECK_THROWS_AS(iars::read_ppm(p), iars::PayloadSizeError);
  CHECK_THROWS_AS(iars::read_ppm(td.file("nope.ppm")), iars::ImageIoError);
}

TEST_CASE("pnm header comments and whitespace are tolerated") {
  TempDir td;
  const std::string p = td.file("c.pgm");
  spit(p, std::string("P5 # a comment\n# another\n 2\t1 \n255 ") + '\x00' + '\xff');
  auto m = iars::read_pgm(p);
  CHECK(m.width == 2);
  CHECK(m.height == 1);
  CHECK(m.at(0, 0) == 0);
  CHECK(m.at(0, 1) == 1);
}

TEST_CASE("bilinear resize follows half-pixel centers") {
  RgbImage im = RgbImage::filled(2, 2, 0, 0, 0);
  im.at(0, 1, 0) = im.at(0, 1, 1) = im.at(0, 1, 2) = 1.0f;
  im.at(1, 0, 0) = im.at(1, 0, 1) = im.at(1, 0, 2) = 1.0f;
  auto one = iars::resize_bilinear(im, 1, 1);
  CHECK(one.at(0, 0, 0) == Catch::Approx(0.5));  // center sees all four equally

  auto same = iars::resize_bilinear(im, 2, 2);
  CHECK(same.pix == im.pix);

  auto flat = iars::resize_bilinear(RgbImage::filled(3, 5, 0.3f, 0.6f, 0.9f), 7, 11);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 11; ++x) {
      CHECK(flat.at(y, x, 0) == Catch::Approx(0.3));
      CHECK(flat.at(y, x, 2) == Catch::Approx(0.9));
    }
  CHECK_THROWS_AS(iars::resize_bilinear(im, 0, 3), std::invalid_argument);
}

TEST_CASE("nearest mask resize preserves binarity") {
  auto data = iars::synth_generate({.count = 1, .height = 32, .width = 32, .seed = 9});
  auto up = iars::resize_nearest(data[0].mask, 49, 71);
  for (auto v : up.data) CHECK((v == 0 || v == 1));
  auto back = iars::resize_nearest(up, 32, 32);
  // round trip through a larger grid is lossless for nearest neighbor
  CHECK(back == data[0].mask);
}

TEST_CASE("component labelling and hole counting") {
  BinaryMask m = BinaryMask::filled(5, 5, false);
  // ring with a one-pixel hole in the middle
  for (int y = 1; y <= 3; ++y)
    for (int x = 1; x <= 3; ++x) m.at(y, x) = 1;
  m.at(2, 2) = 0;
  std::vector<int> labels;
  CHECK(iars::label_components(m, labels) == 1);
  CHECK(iars::count_holes(m) == 1);

  m.at(2, 2) = 1;
  m.at(0, 0) = 1;  // diagonal touch at (0,0)-(1,1) merges under 8-connectivity
  CHECK(iars::label_components(m, labels) == 1);
  CHECK(iars::count_holes(m) == 0);

  BinaryMask two = BinaryMask::filled(3, 5, false);
  two.at(1, 0) = 1;
  two.at(1, 4) = 1;
  CHECK(iars::label_components(two, labels) == 2);
  auto big = iars::largest_component(two);
  CHECK(big.count() == 1);  // tie broken toward the first component
  CHECK(big.at(1, 0) == 1);
}

TEST_CASE("synthetic generator is deterministic") {
  iars::SyntheticGenConfig cfg{.count = 3, .height = 48, .width = 64, .seed = 77,
                               .distractor_hair = true, .boundary_roughness = 0.25};
  auto a = iars::synth_generate(cfg);
  auto b = iars::synth_generate(cfg);
  REQUIRE(a.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].image.pix == b[i].image.pix);
    CHECK(a[i].mask == b[i].mask);
  }
  cfg.seed = 78;
  auto c = iars::synth_generate(cfg);
  CHECK(a[0].mask.count() != c[0].mask.count());
}

TEST_CASE("synthetic lesions stay in the area band and are simply connected") {
  auto data = iars::synth_generate({.count = 24, .height = 48, .width = 64, .seed = 3,
                                    .distractor_hair = true, .boundary_roughness = 0.3});
  std::vector<int> labels;
  for (const auto& s : data) {
    const double frac = static_cast<double>(s.mask.count()) / (48.0 * 64.0);
    CHECK(frac >= 0.05);
    CHECK(frac <= 0.60);
    CHECK(iars::label_components(s.mask, labels) == 1);
    CHECK(iars::count_holes(s.mask) == 0);
  }
}

TEST_CASE("hair distractors touch the image but never the mask") {
  iars::SyntheticGenConfig plain{.count = 4, .height = 32, .width = 48, .seed = 12,
                                 .distractor_hair = false};
  iars::SyntheticGenConfig hairy = plain;
  hairy.distractor_hair = true;
  auto a = iars::synth_generate(plain);
  auto b = iars::synth_generate(hairy);
  bool any_pixel_changed = false;
  for (int i = 0; i < 4; ++i) {
    CHECK(a[i].mask == b[i].mask);
    if (a[i].image.pix != b[i].image.pix) any_pixel_changed = true;
  }
  CHECK(any_pixel_changed);
}

TEST_CASE("generator validates its config") {
  CHECK_THROWS_AS(iars::synth_generate({.count = 0}), std::invalid_argument);
  CHECK_THROWS_AS(iars::synth_generate({.count = 1, .height = 4, .width = 64}),
                  std::invalid_argument);
  CHECK_THROWS_AS(iars::synth_generate({.count = 1, .boundary_roughness = -0.1}),
                  std::invalid_argument);
}

TEST_CASE("manifest round trip with relative paths") {
  TempDir td;
  auto samples = iars::synth_generate({.count = 5, .height = 16, .width = 16, .seed = 1});
  auto man = iars::save_dataset(td.path.string(), samples, 0.6, 0.2);
  REQUIRE(man.records.size() == 5);
  CHECK(man.split("train").size() == 3);
  CHECK(man.split("val").size() == 1);
  CHECK(man.split("test").size() == 1);

  auto loaded = iars::load_manifest(td.file("manifest.jsonl"));
  REQUIRE(loaded.records.size() == 5);
  auto back = iars::load_samples(loaded.split("train"));
  CHECK(back.size() == 3);
  CHECK(back[0].mask == samples[0].mask);
}

TEST_CASE("manifest loader rejects malformed input") {
  TempDir td;
  const std::string p = td.file("m.jsonl");
  spit(p, "not json\n");
  CHECK_THROWS_AS(iars::load_manifest(p), iars::ManifestError);
  spit(p, R"({"image":"a.ppm","mask":"a.pgm"})" "\n");
  CHECK_THROWS_AS(iars::load_manifest(p), iars::ManifestError);  // missing split
  spit(p, R"({"image":"a.ppm","mask":"a.pgm","split":"dev"})" "\n");
  CHECK_THROWS_AS(iars::load_manifest(p), iars::ManifestError);  // unknown split
  spit(p, R"({"image":"a.ppm","mask":"a.pgm","split":"train"})" "\n");
  CHECK_THROWS_AS(iars::load_manifest(p), iars::ManifestError);  // files missing
  spit(p,
       R"({"image":"a.ppm","mask":"a.pgm","split":"train"})" "\n"
       R"({"image":"a.ppm","mask":"a.pgm","split":"test"})" "\n");
  CHECK_THROWS_AS(iars::load_manifest(p, false), iars::ManifestError);  // split overlap
  spit(p, "\n  \n");
  CHECK(iars::load_manifest(p).records.empty());  // blank lines are fine
}

TEST_CASE("batch fill helpers place pixels in planar order") {
  RgbImage im = RgbImage::filled(2, 2, 0.f, 0.f, 0.f);
  im.at(0, 0, 0) = 1.0f;   // red channel, top-left
  im.at(1, 1, 2) = 0.5f;   // blue channel, bottom-right
  auto x = iars::Tensor<float>::zeros({2, 3, 2, 2});
  iars::fill_image(x, 1, im);
  CHECK(x.at4(1, 0, 0, 0) == 1.0f);
  CHECK(x.at4(1, 2, 1, 1) == 0.5f);
  CHECK(x.at4(0, 0, 0, 0) == 0.0f);

  BinaryMask m = BinaryMask::filled(2, 2, false);
  m.at(0, 1) = 1;
  auto y = iars::Tensor<float>::zeros({2, 1, 2, 2});
  iars::fill_mask(y, 1, m);
  CHECK(y.at4(1, 0, 0, 1) == 1.0f);

  auto probs = iars::Tensor<float>::from({1, 1, 1, 4}, {0.1f, 0.5f, 0.9f, 0.49f});
  auto thr = iars::mask_from_tensor(probs, 0);
  CHECK(thr.data == std::vector<std::uint8_t>{0, 1, 1, 0});

  CHECK_THROWS_AS(iars::fill_image(y, 0, im), std::invalid_argument);
}
