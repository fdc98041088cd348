#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "test_util.hpp"

using namespace rsca;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rsca_test_data" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image gray(std::size_t h, std::size_t w, std::uint8_t fill) { return Image{h, w, 1, std::vector<std::uint8_t>(h * w, fill)}; }

Mask square_mask(std::size_t size, std::size_t side) {
  Mask m(size, size);
  const std::size_t lo = (size - side) / 2;
  for (std::size_t y = lo; y < lo + side; ++y)
    for (std::size_t x = lo; x < lo + side; ++x) m.at(y, x) = 1;
  return m;
}

Sample sample_from_mask(const Mask& m, std::string id = "s") {
  Tensor<float> mt = mask_to_tensor(m);
  std::vector<float> img;
  for (int c = 0; c < 3; ++c) img.insert(img.end(), mt.data().begin(), mt.data().end());
  return {std::move(id), Tensor<float>(Shape{1, 3, m.height, m.width}, std::move(img)), mt};
}

bool strictly_binary(const Tensor<float>& t) {
  for (float v : t.vec())
    if (v != 0.0f && v != 1.0f) return false;
  return true;
}

}  // namespace

TEST(Corpus, LoadsPairsAndMergesMasks) {
  const fs::path root = fresh_dir("merge");
  fs::create_directories(root / "images" / "benign");
  fs::create_directories(root / "masks");
  Image img = gray(8, 8, 100);
  img.pixels[0] = 255;
  write_png((root / "images" / "benign" / "x.png").string(), img);
  write_png((root / "images" / "y.png").string(), gray(8, 8, 30));
  write_png((root / "images" / "z.png").string(), gray(8, 8, 30));
  Mask a(8, 8), b(8, 8), c(8, 8);
  a.at(1, 1) = 1;
  b.at(2, 2) = 1;
  c.at(3, 3) = 1;
  c.at(1, 1) = 1;
  write_png((root / "masks" / "x_mask.png").string(), mask_to_image(a));
  write_png((root / "masks" / "x_mask_1.png").string(), mask_to_image(b));
  write_png((root / "images" / "benign" / "x_mask_2.png").string(), mask_to_image(c));  // BUSI keeps masks beside images
  write_png((root / "masks" / "y_mask.png").string(), mask_to_image(Mask(8, 8)));
  write_png((root / "masks" / "z_mask.png").string(), mask_to_image(square_mask(8, 4)));

  const Corpus corpus = load_corpus(root, 8);
  EXPECT_TRUE(corpus.report.errors.empty());
  ASSERT_EQ(corpus.samples.size(), 3u);
  EXPECT_EQ(corpus.samples[0].id, "x");
  const Sample& x = corpus.samples[0];
  EXPECT_EQ(x.image.shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(x.mask.shape(), (Shape{1, 1, 8, 8}));
  EXPECT_FLOAT_EQ(x.image[0], 1.0f);
  EXPECT_FLOAT_EQ(x.image[64], 1.0f);  // gray replicated over RGB
  EXPECT_FLOAT_EQ(x.image[1], 100.0f / 255.0f);
  // Pixelwise OR of the three masks.
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t xx = 0; xx < 8; ++xx) {
      const bool expect = a.at(y, xx) || b.at(y, xx) || c.at(y, xx);
      EXPECT_EQ(x.mask.at(0, 0, y, xx), expect ? 1.0f : 0.0f);
    }
  for (const auto& s : corpus.samples) EXPECT_TRUE(strictly_binary(s.mask));
}

TEST(Corpus, ResizesToConfiguredSize) {
  const fs::path root = fresh_dir("resize");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  write_png((root / "images" / "a.png").string(), gray(20, 30, 200));
  write_png((root / "masks" / "a_mask.png").string(), mask_to_image(Mask(20, 30, 1)));
  const Corpus corpus = load_corpus(root, 16);
  ASSERT_EQ(corpus.samples.size(), 1u);
  EXPECT_EQ(corpus.samples[0].image.shape(), (Shape{1, 3, 16, 16}));
  for (float v : corpus.samples[0].image.vec()) EXPECT_NEAR(v, 200.0f / 255.0f, 1e-6f);
  for (float v : corpus.samples[0].mask.vec()) EXPECT_EQ(v, 1.0f);
}

TEST(Corpus, ProblemsAreCollectedNotThrown) {
  const fs::path root = fresh_dir("errors");
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  write_png((root / "images" / "good.png").string(), gray(8, 8, 10));
  write_png((root / "masks" / "good_mask.png").string(), mask_to_image(Mask(8, 8)));
  write_png((root / "images" / "lonely.png").string(), gray(8, 8, 10));
  std::ofstream((root / "images" / "broken.png").string()) << "not a png";
  write_png((root / "masks" / "broken_mask.png").string(), mask_to_image(Mask(8, 8)));
  write_png((root / "images" / "odd.png").string(), gray(8, 8, 10));
  write_png((root / "masks" / "odd_mask.png").string(), mask_to_image(Mask(4, 4)));

  const Corpus corpus = load_corpus(root, 8);
  ASSERT_EQ(corpus.samples.size(), 1u);
  EXPECT_EQ(corpus.samples[0].id, "good");
  ASSERT_EQ(corpus.report.errors.size(), 3u);
  auto mentions = [&](const std::string& what) {
    for (const auto& e : corpus.report.errors)
      if (e.find(what) != std::string::npos) return true;
    return false;
  };
  EXPECT_TRUE(mentions("broken.png"));
  EXPECT_TRUE(mentions("lonely"));
  EXPECT_TRUE(mentions("odd_mask.png"));
}

TEST(Corpus, EmptyDirectoryWarns) {
  const fs::path root = fresh_dir("empty");
  Corpus c = load_corpus(root, 8);
  EXPECT_TRUE(c.samples.empty());
  EXPECT_FALSE(c.report.warnings.empty());
  fs::create_directories(root / "images");
  c = load_corpus(root, 8);
  EXPECT_TRUE(c.samples.empty());
  EXPECT_FALSE(c.report.warnings.empty());
  EXPECT_TRUE(c.report.errors.empty());
}

TEST(Split, ArithmeticForTenAndEight) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("id" + std::to_string(i));
  Split s = split(ids, {3});
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 2u);
  ids.resize(8);
  s = split(ids, {3});
  EXPECT_EQ(s.train.size() + s.val.size(), 6u);
  EXPECT_EQ(s.test.size(), 2u);
  EXPECT_EQ(split({"a"}).train.size(), 1u);
  EXPECT_TRUE(split({"a"}).test.empty());
  EXPECT_EQ(split({"a", "b"}).test.size(), 1u);
  EXPECT_TRUE(split({}).train.empty());
}

TEST(Split, PartitionAndDeterminism) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("case" + std::to_string(rng() % 100000) + "_" + std::to_string(i));
    const SplitSpec spec{rng()};
    const Split a = split(ids, spec), b = split(ids, spec);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    std::multiset<std::size_t> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), n);
    EXPECT_FALSE(a.test.empty());

    // Membership depends on ids, not on the order they were listed in.
    std::vector<std::string> rev(ids.rbegin(), ids.rend());
    const Split r = split(rev, spec);
    std::set<std::string> ta, tr;
    for (auto i : a.test) ta.insert(ids[i]);
    for (auto i : r.test) tr.insert(rev[i]);
    EXPECT_EQ(ta, tr);
  }
}

TEST(Augment, IdentityAndFlipInvolution) {
  Sample s = sample_from_mask(square_mask(16, 5));
  s.image = test::random_tensor<float>(Shape{1, 3, 16, 16}, 3, 0.0, 1.0);
  const Sample same = apply_augment(s, AugmentParams{});
  EXPECT_EQ(same.image.vec(), s.image.vec());
  EXPECT_EQ(same.mask.vec(), s.mask.vec());

  AugmentParams h;
  h.hflip = true;
  const Sample once = apply_augment(s, h);
  EXPECT_NE(once.image.vec(), s.image.vec());
  EXPECT_EQ(once.image.at(0, 1, 2, 0), s.image.at(0, 1, 2, 15));
  const Sample twice = apply_augment(once, h);
  EXPECT_EQ(twice.image.vec(), s.image.vec());
  EXPECT_EQ(twice.mask.vec(), s.mask.vec());

  AugmentParams v;
  v.vflip = true;
  EXPECT_EQ(apply_augment(apply_augment(s, v), v).image.vec(), s.image.vec());
}

TEST(Augment, DrawsAreSeededAndCoverTheRange) {
  auto r1 = sample_rng(5, 3, "a"), r2 = sample_rng(5, 3, "a"), r3 = sample_rng(5, 4, "a");
  const AugmentParams a = draw_augment(r1), b = draw_augment(r2), c = draw_augment(r3);
  EXPECT_EQ(a.angle_deg, b.angle_deg);
  EXPECT_EQ(a.hflip, b.hflip);
  EXPECT_NE(a.angle_deg, c.angle_deg);
  std::mt19937_64 rng(9);
  int flips = 0, crops = 0;
  for (int i = 0; i < 2000; ++i) {
    const AugmentParams p = draw_augment(rng);
    EXPECT_LE(std::abs(p.angle_deg), kMaxRotationDeg);
    flips += p.hflip;
    crops += p.crop;
  }
  EXPECT_NEAR(flips / 2000.0, 0.5, 0.05);
  EXPECT_NEAR(crops / 2000.0, 0.5, 0.05);
}

TEST(Augment, CentredSquareStaysBinaryAndKeepsItsArea) {
  const Sample s = sample_from_mask(square_mask(64, 8));
  std::mt19937_64 rng(17);
  double worst = 0;
  for (int i = 0; i < 400; ++i) {
    const Sample out = augment(s, rng);
    ASSERT_TRUE(strictly_binary(out.mask));
    double count = 0;
    for (float v : out.mask.vec()) count += v;
    worst = std::max(worst, std::abs(count - 64.0) / 64.0);
  }
  EXPECT_LT(worst, 0.25);
  // Worst cases made explicit: full crop plus the largest rotation.
  for (double angle : {-10.0, 10.0}) {
    const Sample out = apply_augment(s, AugmentParams{true, true, true, angle});
    double count = 0;
    for (float v : out.mask.vec()) count += v;
    EXPECT_LT(std::abs(count - 64.0) / 64.0, 0.25);
  }
}

TEST(Augment, ImageAndMaskFollowTheSameMap) {
  // An image equal to its mask stays equal to it after augmentation, up to resampling at the edge:
  // bilinear-then-threshold and nearest can only disagree next to the lesion boundary.
  std::mt19937_64 rng(23);
  std::size_t total_disagree = 0;
  for (int i = 0; i < 100; ++i) {
    const Sample s = sample_from_mask(synth_sample(48, 5, i).mask);
    const AugmentParams p = draw_augment(rng);
    const Sample out = apply_augment(s, p);
    const Mask m = mask_from_tensor(out.mask);
    for (std::size_t c = 0; c < 3; ++c) {
      Mask fromimg(48, 48);
      for (std::size_t k = 0; k < 48 * 48; ++k) fromimg.pixels[k] = out.image[c * 48 * 48 + k] >= 0.5f ? 1 : 0;
      const bool flip_only = p.angle_deg == 0.0 && !p.crop;
      for (std::size_t y = 0; y < 48; ++y)
        for (std::size_t x = 0; x < 48; ++x) {
          if (fromimg.at(y, x) == m.at(y, x)) continue;
          ++total_disagree;
          ASSERT_FALSE(flip_only);
          bool near_edge = false;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
              if (yy >= 0 && xx >= 0 && yy < 48 && xx < 48 && m.at(yy, xx) != m.at(y, x)) near_edge = true;
            }
          EXPECT_TRUE(near_edge) << "pixel " << y << "," << x << " in draw " << i;
        }
    }
  }
  // Disagreements are rare compared to the number of pixels examined.
  EXPECT_LT(total_disagree, 100u * 3u * 48u * 48u / 100u);
}

TEST(Synthetic, FractionDeterminismAndFiles) {
  for (std::size_t i = 0; i < 30; ++i) {
    const SynthSample s = synth_sample(64, 4, i);
    const double frac = static_cast<double>(s.mask.count()) / (64.0 * 64.0);
    EXPECT_GE(frac, 0.02);
    EXPECT_LE(frac, 0.40);
    const SynthSample again = synth_sample(64, 4, i);
    EXPECT_EQ(again.image.pixels, s.image.pixels);
    EXPECT_EQ(again.mask, s.mask);
  }
  EXPECT_EQ(synth_sample(64, 4, 0).id, "synth_000");
  EXPECT_NE(synth_sample(64, 4, 0).image.pixels, synth_sample(64, 5, 0).image.pixels);

  const fs::path root = fresh_dir("synth");
  write_synthetic_corpus(root, 3, 32, 1);
  const Corpus c = load_corpus(root, 32);
  ASSERT_EQ(c.samples.size(), 3u);
  EXPECT_TRUE(c.report.errors.empty());
  EXPECT_EQ(mask_from_tensor(c.samples[1].mask), synth_sample(32, 1, 1).mask);
}

TEST(Image, PngRoundTripAndResampling) {
  const fs::path root = fresh_dir("png");
  Image rgb{3, 2, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18}};
  write_png((root / "rgb.png").string(), rgb);
  const Image back = read_png((root / "rgb.png").string(), false);
  EXPECT_EQ(back.pixels, rgb.pixels);
  EXPECT_EQ(back.channels, 3u);
  EXPECT_THROW(read_png((root / "missing.png").string(), true), ImageError);

  Tensor<float> t(Shape{1, 1, 2, 2}, std::vector<float>{0, 1, 2, 3});
  const Tensor<float> up = resize_bilinear(t, 4, 4);
  EXPECT_FLOAT_EQ(up.at(0, 0, 0, 0), 0.0f);
  EXPECT_FLOAT_EQ(up.at(0, 0, 3, 3), 3.0f);
  EXPECT_FLOAT_EQ(up.at(0, 0, 1, 1), 0.75f);  // half-pixel centres: (0.25, 0.25) in source space
  Mask m(2, 2);
  m.at(0, 1) = 1;
  const Mask big = resize_nearest(m, 4, 4);
  EXPECT_EQ(big.count(), 4u);
  EXPECT_EQ(big.at(0, 3), 1);
  EXPECT_EQ(resize_nearest(big, 2, 2), m);

  const Image ov = overlay(gray(2, 2, 100), m);
  EXPECT_EQ(ov.channels, 3u);
  EXPECT_EQ(ov.at(0, 0, 0), 100);
  EXPECT_GT(ov.at(0, 1, 0), ov.at(0, 1, 1));
}
