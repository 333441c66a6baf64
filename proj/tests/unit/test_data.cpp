#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace ea;
using namespace ea::testing;

namespace {

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

std::string idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                       const std::vector<std::uint8_t>& px) {
  std::string s;
  bin::put_u32_be(s, magic);
  bin::put_u32_be(s, n);
  bin::put_u32_be(s, rows);
  bin::put_u32_be(s, cols);
  s.append(px.begin(), px.end());
  return s;
}

std::string idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels) {
  std::string s;
  bin::put_u32_be(s, magic);
  bin::put_u32_be(s, static_cast<std::uint32_t>(labels.size()));
  s.append(labels.begin(), labels.end());
  return s;
}

}  // namespace

TEST(LoadIdx, HandBuiltFixture) {
  std::vector<std::uint8_t> px(18);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 15);
  write_file(tmp("ea_fix_img.idx"), idx_images(0x803, 2, 3, 3, px));
  write_file(tmp("ea_fix_lbl.idx"), idx_labels(0x801, {7, 2}));
  const Dataset ds = load_idx(tmp("ea_fix_img.idx"), tmp("ea_fix_lbl.idx"));
  ASSERT_EQ(ds.images.size(), 2u);
  EXPECT_EQ(ds.images[0].label, 7u);
  EXPECT_EQ(ds.images[1].label, 2u);
  EXPECT_EQ(ds.shape(), (Shape{1, 3, 3}));
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(ds.images[0].pixels.values[i], px[i] / 255.0);
    EXPECT_EQ(ds.images[1].pixels.values[i], px[9 + i] / 255.0);
  }
}

TEST(LoadIdx, WrongLabelMagicNamesFile) {
  write_file(tmp("ea_m_img.idx"), idx_images(0x803, 1, 2, 2, {1, 2, 3, 4}));
  write_file(tmp("ea_m_lbl.idx"), idx_labels(0x803, {1}));
  try {
    load_idx(tmp("ea_m_img.idx"), tmp("ea_m_lbl.idx"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("ea_m_lbl.idx"), std::string::npos);
  }
}

TEST(LoadIdx, CountMismatch) {
  write_file(tmp("ea_c_img.idx"), idx_images(0x803, 10, 1, 1, std::vector<std::uint8_t>(10, 3)));
  write_file(tmp("ea_c_lbl.idx"), idx_labels(0x801, std::vector<std::uint8_t>(9, 1)));
  EXPECT_THROW(load_idx(tmp("ea_c_img.idx"), tmp("ea_c_lbl.idx")), FormatError);
}

TEST(LoadIdx, Truncation) {
  write_file(tmp("ea_t_img.idx"), idx_images(0x803, 2, 2, 2, {1, 2, 3, 4, 5}));
  write_file(tmp("ea_t_lbl.idx"), idx_labels(0x801, {1, 1}));
  EXPECT_THROW(load_idx(tmp("ea_t_img.idx"), tmp("ea_t_lbl.idx")), FormatError);
  write_file(tmp("ea_t2_img.idx"), std::string("\0\0\x08", 3));
  EXPECT_THROW(load_idx(tmp("ea_t2_img.idx"), tmp("ea_t_lbl.idx")), FormatError);
}

TEST(LoadIdx, MissingFileIsIoError) {
  EXPECT_THROW(load_idx(tmp("ea_does_not_exist.idx"), tmp("ea_nope.idx")), IoError);
}

TEST(LoadIdx, WriteThenLoadPreservesBytesIncludingGzip) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) {
    Image x{Tensor(Shape{1, 4, 6}), static_cast<std::size_t>(i)};
    for (auto& v : x.pixels.values) v = byte(rng) / 255.0;
    imgs.push_back(x);
  }
  for (const std::string suffix : {".idx", ".idx.gz"}) {
    write_idx(imgs, tmp("ea_rt_img" + suffix), tmp("ea_rt_lbl" + suffix));
    const Dataset ds = load_idx(tmp("ea_rt_img" + suffix), tmp("ea_rt_lbl" + suffix));
    ASSERT_EQ(ds.images.size(), imgs.size());
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      EXPECT_EQ(ds.images[i].pixels, imgs[i].pixels);
      EXPECT_EQ(ds.images[i].label, imgs[i].label);
    }
    write_idx(ds.images, tmp("ea_rt2_img" + suffix), tmp("ea_rt2_lbl" + suffix));
    EXPECT_EQ(read_file(tmp("ea_rt_img" + suffix)), read_file(tmp("ea_rt2_img" + suffix)));
  }
}

TEST(LoadIdx, BundledMnistFixture) {
  const Dataset ds = load_mnist();
  EXPECT_GE(ds.images.size(), 2000u);
  EXPECT_EQ(ds.shape(), (Shape{1, 28, 28}));
  EXPECT_EQ(ds.num_classes, 10u);
  for (const auto& x : ds.images)
    for (double v : x.pixels.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(SynthDataset, DeterministicAndBalanced) {
  const Dataset a = synth_dataset(5, 11, 8);
  const Dataset b = synth_dataset(5, 11, 8);
  const Dataset c = synth_dataset(6, 11, 8);
  ASSERT_EQ(a.images.size(), 11u);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
    zeros += a.images[i].label == 0;
    for (double v : a.images[i].pixels.values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  EXPECT_EQ(zeros, 5u);  // floor(11/2)
  EXPECT_NE(a.images[0].pixels, c.images[0].pixels);
}

TEST(SynthDataset, Preconditions) {
  EXPECT_THROW(synth_dataset(0, 1, 8), InvalidInput);
  EXPECT_THROW(synth_dataset(0, 4, 7), InvalidInput);
}

TEST(SynthDataset, LinearlySeparable) {
  const Dataset ds = synth_dataset(8, 200, 16);
  Rng init(1);
  std::vector<Layer> layers;
  layers.emplace_back(Flatten{});
  layers.emplace_back(make_dense(256, 2, init));
  const Model linear(ds.shape(), 2, std::move(layers));
  const Model t = train(linear, ds.images, {10, 0.1, 10, 8});
  EXPECT_GE(t.train_accuracy(), 0.99);
}
