#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "patchdrop/pipeline.hpp"

using namespace patchdrop;
namespace fs = std::filesystem;

namespace {

SyntheticSpec tiny(std::uint64_t seed = 7) {
  SyntheticSpec s;
  s.train_size = 64;
  s.val_size = 16;
  s.test_size = 32;
  s.seed = seed;
  return s;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("patchdrop_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<CifarRecord> fake_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CifarRecord> r(n);
  for (auto& rec : r) {
    rec.label = static_cast<std::uint8_t>(rng.uniform_int(0, 9));
    for (auto& p : rec.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  }
  return r;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()),
                                           static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = generate_synthetic(tiny());
  const auto b = generate_synthetic(tiny());
  EXPECT_EQ(a.train.hr.vec(), b.train.hr.vec());
  EXPECT_EQ(a.test.labels, b.test.labels);
  const auto c = generate_synthetic(tiny(8));
  EXPECT_NE(a.train.hr.vec(), c.train.hr.vec());
}

TEST(Synthetic, SplitsUseDisjointIds) {
  const auto d = generate_synthetic(tiny());
  std::set<std::uint64_t> seen;
  for (const auto* s : {&d.train, &d.val, &d.test})
    for (auto id : s->ids) EXPECT_TRUE(seen.insert(id).second) << id;
  EXPECT_EQ(seen.size(), 64u + 16u + 32u);
}

TEST(Synthetic, ShapesAndLabels) {
  const auto d = generate_synthetic(tiny());
  EXPECT_EQ(d.train.hr.shape(), (Shape{64, 1, 32, 32}));
  EXPECT_EQ(d.train.lr.shape(), (Shape{64, 1, 8, 8}));
  for (auto y : d.train.labels) EXPECT_LT(y, 4u);
}

TEST(Synthetic, LrIsDownsampledHr) {
  const auto d = generate_synthetic(tiny());
  const auto lr = downsample(d.test.hr, d.test.ds);
  ASSERT_EQ(lr.shape(), d.test.lr.shape());
  for (std::size_t i = 0; i < lr.size(); ++i) EXPECT_FLOAT_EQ(lr[i], d.test.lr[i]);
}

TEST(Synthetic, TextureInvisibleAtLowResolution) {
  auto spec = tiny();
  spec.noise = 0.0;
  spec.normalize = false;
  const auto d = generate_synthetic(spec);
  for (float v : d.train.lr.vec()) EXPECT_NEAR(v, 0.0f, 1e-6f);
  // but present in HR, exactly in the class's patch
  const PatchGrid g = d.train.grid();
  for (std::size_t i = 0; i < 8; ++i) {
    const auto img = d.train.hr.sample(i);
    const std::size_t pid = informative_patch(spec, d.train.labels[i]);
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const float v = img[y * 32 + x];
        if (g.patch_of(y, x) == pid) EXPECT_EQ(std::abs(v), 1.0f);
        else EXPECT_EQ(v, 0.0f);
      }
  }
}

TEST(Synthetic, NoiselessClassesAreSeparable) {
  auto spec = tiny();
  spec.noise = 0.0;
  spec.normalize = false;
  const auto d = generate_synthetic(spec);
  // identical label implies identical image
  for (std::size_t i = 0; i < d.train.size(); ++i)
    for (std::size_t j = i + 1; j < d.train.size(); ++j)
      EXPECT_EQ(d.train.labels[i] == d.train.labels[j],
                d.train.hr.sample(i).vec() == d.train.hr.sample(j).vec());
}

TEST(Synthetic, LabelNoiseOnlyOnTrain) {
  auto clean = tiny();
  auto noisy = tiny();
  noisy.label_noise = 0.5;
  const auto a = generate_synthetic(clean), b = generate_synthetic(noisy);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < a.train.size(); ++i) flipped += a.train.labels[i] != b.train.labels[i];
  EXPECT_GT(flipped, 16u);
  EXPECT_LT(flipped, 48u);
  EXPECT_EQ(a.test.labels, b.test.labels);
  EXPECT_EQ(a.train.hr.vec(), b.train.hr.vec());
}

TEST(Synthetic, InvalidSpecsRejected) {
  auto s = tiny();
  s.ds = 3;
  EXPECT_THROW(generate_synthetic(s), Error);
  s = tiny();
  s.informative_patches = {16};
  EXPECT_THROW(generate_synthetic(s), Error);
  s = tiny();
  s.height = 30;
  EXPECT_THROW(generate_synthetic(s), Error);
}

TEST(Normalization, UsesTrainStatistics) {
  const auto d = generate_synthetic(tiny());
  const auto st = compute_norm_stats(d.train.hr);
  EXPECT_NEAR(st.mean[0], 0.0, 1e-5);
  EXPECT_NEAR(st.stddev[0], 1.0, 1e-4);
  EXPECT_EQ(d.test.norm.mean, d.train.norm.mean);
  EXPECT_EQ(d.test.norm.stddev, d.train.norm.stddev);
  // re-derive the test images by hand from the unnormalized ones
  auto raw_spec = tiny();
  raw_spec.normalize = false;
  const auto raw = generate_synthetic(raw_spec);
  const auto& n = d.train.norm;
  for (std::size_t i = 0; i < 200; ++i)
    EXPECT_NEAR(d.test.hr[i], (raw.test.hr[i] - n.mean[0]) / n.stddev[0], 1e-5);
}

TEST(DatasetIo, RoundTrip) {
  const auto dir = temp_dir("ds");
  const auto spec = tiny();
  const auto d = generate_synthetic(spec);
  save_dataset(dir, d.test, spec);
  const auto back = load_dataset(dir, "test");
  EXPECT_EQ(back.hr.vec(), d.test.hr.vec());
  EXPECT_EQ(back.lr.vec(), d.test.lr.vec());
  EXPECT_EQ(back.labels, d.test.labels);
  EXPECT_EQ(back.ids, d.test.ids);
  EXPECT_EQ(back.norm.mean, d.test.norm.mean);
  EXPECT_THROW(load_dataset(dir, "val"), Error);
  fs::resize_file(dir / "test.f32", 100);
  EXPECT_THROW(load_dataset(dir, "test"), Error);
  fs::remove_all(dir);
}

TEST(DatasetOps, SubsetAndRebuild) {
  auto d = generate_synthetic(tiny()).train;
  const auto s = d.subset({3, 1});
  EXPECT_EQ(s.labels, (std::vector<std::size_t>{d.labels[3], d.labels[1]}));
  EXPECT_EQ(s.hr.sample(0).vec(), d.hr.sample(3).vec());
  d.rebuild_lr(2);
  EXPECT_EQ(d.lr.shape(), (Shape{64, 1, 16, 16}));
  EXPECT_THROW(d.rebuild_lr(3), Error);
}

TEST(Cifar, RecordsRoundTrip) {
  const auto recs = fake_records(5, 1);
  const auto bytes = serialize_cifar_records(recs);
  ASSERT_EQ(bytes.size(), 5 * 3073u);
  const auto back = parse_cifar_records(bytes);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].label, recs[i].label);
    EXPECT_EQ(back[i].pixels, recs[i].pixels);
  }
}

TEST(Cifar, FullBatchSize) {
  std::vector<std::uint8_t> bytes(30730000, 0);
  EXPECT_EQ(parse_cifar_records(bytes).size(), 10000u);
}

TEST(Cifar, RejectsMalformedInput) {
  auto bytes = serialize_cifar_records(fake_records(2, 2));
  bytes.pop_back();
  EXPECT_THROW(parse_cifar_records(bytes), Error);
  bytes = serialize_cifar_records(fake_records(2, 2));
  bytes[3073] = 10;
  try {
    parse_cifar_records(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
  }
}

TEST(Cifar, PixelLayoutAndScaling) {
  auto recs = fake_records(1, 3);
  recs[0].pixels[0] = 255;         // R(0,0)
  recs[0].pixels[1024 + 33] = 51;  // G(1,1)
  const auto d = cifar_to_dataset(recs, "x", 4);
  EXPECT_EQ(d.hr.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_FLOAT_EQ(d.hr[0], 1.0f);
  EXPECT_FLOAT_EQ(d.hr[1024 + 33], 0.2f);
  EXPECT_EQ(d.lr.shape(), (Shape{1, 3, 8, 8}));
}

TEST(Cifar, LoadsDirectory) {
  const auto dir = temp_dir("cifar");
  for (int b = 1; b <= 5; ++b)
    write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                serialize_cifar_records(fake_records(4, static_cast<std::uint64_t>(b))));
  const auto test_recs = fake_records(3, 9);
  write_bytes(dir / "test_batch.bin", serialize_cifar_records(test_recs));
  const auto c = load_cifar10(dir, 4, false);
  EXPECT_EQ(c.train.size(), 20u);
  EXPECT_EQ(c.test.size(), 3u);
  EXPECT_EQ(c.test.labels[2], test_recs[2].label);
  EXPECT_FLOAT_EQ(c.test.hr[5], static_cast<float>(test_recs[0].pixels[5]) / 255.0f);
  const auto n = load_cifar10(dir, 4, true);
  EXPECT_EQ(n.test.norm.mean.size(), 3u);
  fs::remove(dir / "data_batch_3.bin");
  EXPECT_THROW(load_cifar10(dir), Error);
  fs::remove_all(dir);
}

TEST(Augment, Identities) {
  Rng rng(1);
  Tensor<float> img({2, 4, 6});
  for (auto& v : img.vec()) v = static_cast<float>(rng.normal());
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)).vec(), img.vec());
  EXPECT_EQ(crop_padded(img, 2, 2, 2).vec(), img.vec());
  EXPECT_EQ(augment(img, rng, {false, 4, 0.5}).vec(), img.vec());
  EXPECT_THROW(crop_padded(img, 2, 5, 0), Error);
}

TEST(Augment, FlipAndShift) {
  Tensor<float> img({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(flip_horizontal(img).vec(), (std::vector<float>{3, 2, 1, 6, 5, 4}));
  // offset 0 with pad 1 shifts content down-right by one
  EXPECT_EQ(crop_padded(img, 1, 0, 0).vec(), (std::vector<float>{0, 0, 0, 0, 1, 2}));
}

TEST(Augment, PreservesShapeAndIsSeeded) {
  Tensor<float> img({3, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i);
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) {
    const auto x = augment(img, a), y = augment(img, b);
    EXPECT_EQ(x.shape(), img.shape());
    EXPECT_EQ(x.vec(), y.vec());
  }
}
