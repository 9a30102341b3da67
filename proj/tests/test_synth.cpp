#include "adarelu/image_io.hpp"
#include "adarelu/synth.hpp"

#include <gtest/gtest.h>
#include <png.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

using namespace adarelu;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("adarelu_test_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_rgba_png(const std::string& path, int w, int h) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  ASSERT_NE(f, nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 4, 200);
  for (int y = 0; y < h; ++y) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST(Synth, SameSeedSameSamples) {
  const auto a = generate_dataset(7, 32);
  const auto b = generate_dataset(7, 32);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE((a[i].image.array() == b[i].image.array()).all());
    EXPECT_EQ(a[i].subcategory, b[i].subcategory);
    EXPECT_EQ(a[i].train, b[i].train);
  }
  const auto c = generate_dataset(8, 32);
  EXPECT_FALSE((a[0].image.array() == c[0].image.array()).all());
  EXPECT_TRUE((synth_sample(7, 1, 5).image.array() == a[32 + 5].image.array()).all());
}

TEST(Synth, BalancedSubcategoriesAndRange) {
  const auto s = generate_dataset(1, 128);
  ASSERT_EQ(s.size(), 256u);
  std::map<std::pair<int, int>, int> counts;
  Index train = 0;
  for (const auto& x : s) {
    ++counts[{x.domain, x.subcategory}];
    train += x.train;
    EXPECT_EQ(x.image.shape(), (Shape{1, 3, 32, 32}));
    EXPECT_GE(x.image.array().minCoeff(), -1.0f);
    EXPECT_LE(x.image.array().maxCoeff(), 1.0f);
  }
  EXPECT_EQ(counts.size(), 8u);
  for (const auto& [key, n] : counts) EXPECT_EQ(n, 32);
  const double frac = static_cast<double>(train) / 256.0;
  EXPECT_GT(frac, 0.8);
  EXPECT_LT(frac, 0.97);
}

TEST(Synth, CountTooSmallThrows) {
  EXPECT_THROW(generate_dataset(1, 31), std::invalid_argument);
  EXPECT_THROW(generate_dataset(1, 32, 12), std::invalid_argument);
}

TEST(Synth, SubcategoryIsRecoverableFromPixels) {
  for (const auto& x : generate_dataset(3, 64)) EXPECT_EQ(recover_subcategory(x.image, x.domain), x.subcategory);
}

TEST(Synth, DomainsSeparableByAnisotropy) {
  const auto s = generate_dataset(4, 64);
  double max_dots = 0.0, min_stripes = 1.0;
  for (const auto& x : s) {
    const double a = anisotropy(x.image);
    if (x.domain == kStripesDomain) min_stripes = std::min(min_stripes, a);
    else max_dots = std::max(max_dots, a);
  }
  EXPECT_LT(max_dots, min_stripes);
}

TEST(Synth, WriteAndLoadRoundTrip) {
  const fs::path dir = scratch_dir("roundtrip");
  const auto s = generate_dataset(5, 32);
  const auto entries = write_dataset(s, dir.string());
  EXPECT_EQ(entries.size(), s.size());
  EXPECT_TRUE(fs::exists(dir / "manifest.txt"));
  const auto manifest = read_manifest(dir.string());
  ASSERT_EQ(manifest.size(), entries.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    EXPECT_EQ(manifest[i].path, entries[i].path);
    EXPECT_EQ(manifest[i].domain, s[i].domain);
    EXPECT_EQ(manifest[i].subcategory, s[i].subcategory);
  }
  const auto back = load_dataset(dir.string());
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i].train, s[i].train);
    EXPECT_LE((back[i].image.array() - s[i].image.array()).abs().maxCoeff(), 1.0f / 255.0f + 1e-6f);
  }
  fs::remove_all(dir);
  EXPECT_THROW(read_manifest(dir.string()), std::runtime_error);
}

TEST(Png, ZeroIsMidGray) {
  EXPECT_EQ(to_byte(0.0f), 128);
  EXPECT_EQ(to_byte(-1.0f), 0);
  EXPECT_EQ(to_byte(1.0f), 255);
  EXPECT_EQ(to_byte(3.0f), 255);
  EXPECT_EQ(from_byte(0), -1.0f);
  EXPECT_EQ(from_byte(255), 1.0f);
  const fs::path dir = scratch_dir("gray");
  save_png(Tensor<float>({1, 3, 4, 5}), (dir / "g.png").string());
  const auto back = load_png((dir / "g.png").string());
  EXPECT_EQ(back.shape(), (Shape{1, 3, 4, 5}));
  EXPECT_TRUE((back.array() == from_byte(128)).all());
  fs::remove_all(dir);
}

TEST(Png, RoundTripWithinQuantization) {
  const fs::path dir = scratch_dir("rt");
  std::mt19937_64 rng(1);
  const auto img = rand_uniform<float>({1, 3, 9, 7}, rng, -1.0f, 1.0f);
  save_png(img, (dir / "r.png").string());
  const auto back = load_png((dir / "r.png").string());
  EXPECT_LE((back.array() - img.array()).abs().maxCoeff(), 1.0f / 255.0f);
  fs::remove_all(dir);
}

TEST(Png, BadFilesThrow) {
  const fs::path dir = scratch_dir("bad");
  write_rgba_png((dir / "rgba.png").string(), 4, 4);
  EXPECT_THROW(load_png((dir / "rgba.png").string()), std::runtime_error);
  std::ofstream((dir / "junk.png").string()) << "definitely not a png";
  EXPECT_THROW(load_png((dir / "junk.png").string()), std::runtime_error);
  EXPECT_THROW(load_png((dir / "missing.png").string()), std::runtime_error);
  EXPECT_THROW(save_png(Tensor<float>({1, 4, 2, 2}), (dir / "x.png").string()), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Png, TileGridLayout) {
  std::vector<Tensor<float>> cells;
  for (int k = 0; k < 5; ++k) cells.push_back(Tensor<float>::constant({1, 3, 2, 2}, 0.1f * k));
  const auto grid = tile_grid(stack(cells), 3);
  EXPECT_EQ(grid.shape(), (Shape{1, 3, 4, 6}));
  EXPECT_EQ(grid(0, 0, 0, 4), 0.2f);
  EXPECT_EQ(grid(0, 2, 3, 3), 0.4f);
}
