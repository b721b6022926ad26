#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cep/synthvideo.hpp"
#include "oracles.hpp"

using namespace cep;

TEST_CASE("clip shape, range, determinism") {
  const VideoClip clip = generate_clip(7, kTranslateRight, 40);
  CHECK(clip.frames.shape() == Shape{40, 32, 32, 3});
  for (int64_t i = 0; i < clip.frames.numel(); ++i) {
    CHECK(clip.frames.at(i) >= 0.0);
    CHECK(clip.frames.at(i) <= 1.0);
  }
  const VideoClip again = generate_clip(7, kTranslateRight, 40);
  for (int64_t i = 0; i < clip.frames.numel(); ++i) {
    CHECK(clip.frames.at(i) == again.frames.at(i));
  }
}

TEST_CASE("translate-right centroid strictly increases") {
  for (uint64_t seed : {7ull, 19ull, 133ull}) {
    const VideoClip clip = generate_clip(seed, kTranslateRight, 40);
    double prev = -1.0;
    for (int64_t t = 0; t < clip.length(); ++t) {
      const auto [cx, cy] = oracle::frame_centroid(clip.frames, t);
      CHECK(cx > prev);
      prev = cx;
    }
  }
}

TEST_CASE("translate-left centroid strictly decreases") {
  const VideoClip clip = generate_clip(5, kTranslateLeft, 40);
  double prev = 1e9;
  for (int64_t t = 0; t < clip.length(); ++t) {
    const auto [cx, cy] = oracle::frame_centroid(clip.frames, t);
    CHECK(cx < prev);
    prev = cx;
  }
}

TEST_CASE("generate_clip rejections") {
  CHECK_THROWS_AS(generate_clip(1, 8, 40), std::invalid_argument);
  CHECK_THROWS_AS(generate_clip(1, -1, 40), std::invalid_argument);
  CHECK_THROWS_AS(generate_clip(1, 0, 2), std::invalid_argument);
}

TEST_CASE("triple windows are adjacent and strided") {
  const VideoClip clip = generate_clip(3, kBounce, 40);
  // start 4, stride 1: source frames [4..12), [12..20), [20..28)
  const Tensor past = clip_window(clip, 4, 8, 1);
  const int64_t fe = kFrameH * kFrameW * kFrameC;
  for (int64_t i = 0; i < 8; ++i) {
    for (int64_t j = 0; j < fe; j += 97) {
      CHECK(past.at(i * fe + j) == clip.frames.at((4 + i) * fe + j));
    }
  }
  Rng rng(99);
  const SnippetTriple tr = sample_triple(clip, 8, 1, rng);
  const Tensor expect_t =
      clip_window(clip, tr.start_frame + 8, 8, 1);
  const Tensor expect_f =
      clip_window(clip, tr.start_frame + 16, 8, 1);
  for (int64_t j = 0; j < expect_t.numel(); j += 101) {
    CHECK(tr.current.at(j) == expect_t.at(j));
    CHECK(tr.future.at(j) == expect_f.at(j));
  }
  CHECK(tr.stride == 1);
  CHECK(tr.video_id == clip.video_id);
}

TEST_CASE("sample_triple rejects short clips naming the requirement") {
  const VideoClip clip = generate_clip(3, kBounce, 20);
  Rng rng(1);
  CHECK_THROWS_WITH_AS(sample_triple(clip, 8, 1, rng),
                       doctest::Contains("24"), std::invalid_argument);
}

TEST_CASE("strided triple spans stride * t frames per snippet") {
  const VideoClip clip = generate_clip(4, kRotateCw, 80);
  Rng rng(5);
  const SnippetTriple tr = sample_triple(clip, 8, 2, rng);
  const Tensor expect = clip_window(clip, tr.start_frame, 8, 2);
  for (int64_t j = 0; j < expect.numel(); j += 53) {
    CHECK(tr.past.at(j) == expect.at(j));
  }
}

TEST_CASE("augmentation draws once per snippet") {
  const VideoClip clip = generate_clip(11, kScaleOscillate, 40);
  const Tensor snip = clip_window(clip, 0, 8, 1);
  AugmentationParams p;
  p.flip = true;
  p.brightness_delta = 0.03;
  p.contrast_scale = 1.1;
  p.crop_dy = 1;
  p.crop_dx = 3;
  const Tensor out = obfuscate(snip, p);
  // every frame transformed with the same params as a one-frame snippet
  const int64_t fe = kFrameH * kFrameW * kFrameC;
  for (int64_t t = 0; t < 8; t += 3) {
    Tensor one({1, kFrameH, kFrameW, kFrameC}, snip.precision());
    for (int64_t j = 0; j < fe; ++j) one.set(j, snip.at(t * fe + j));
    const Tensor oneout = obfuscate(one, p);
    for (int64_t j = 0; j < fe; j += 89) {
      CHECK(out.at(t * fe + j) == oneout.at(j));
    }
  }
}

TEST_CASE("flipping twice through the pipeline restores the image") {
  // obf_flip at crop dx equals the mirror of obf_noflip at the mirrored
  // crop offset, so the flip step is an exact involution
  const VideoClip clip = generate_clip(13, kTranslateUp, 40);
  const Tensor snip = clip_window(clip, 2, 4, 1);
  AugmentationParams flip_p;
  flip_p.flip = true;
  flip_p.crop_dy = 2;
  flip_p.crop_dx = 1;
  AugmentationParams noflip_p = flip_p;
  noflip_p.flip = false;
  noflip_p.crop_dx = (kFrameW - 28) - flip_p.crop_dx;

  const Tensor a = obfuscate(snip, flip_p);
  const Tensor b = obfuscate(snip, noflip_p);
  for (int64_t t = 0; t < 4; ++t) {
    for (int64_t y = 0; y < kFrameH; y += 5) {
      for (int64_t x = 0; x < kFrameW; x += 3) {
        for (int64_t c = 0; c < kFrameC; ++c) {
          const double va =
              a.at(((t * kFrameH + y) * kFrameW + x) * kFrameC + c);
          const double vb =
              b.at(((t * kFrameH + y) * kFrameW + (kFrameW - 1 - x)) *
                       kFrameC + c);
          CHECK(va == doctest::Approx(vb).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("brightness clamps at 1") {
  Tensor snip({2, kFrameH, kFrameW, kFrameC}, Precision::f64);
  for (int64_t i = 0; i < snip.numel(); ++i) snip.set(i, 0.95);
  AugmentationParams p;
  p.brightness_delta = 0.1;
  p.crop_dy = 2;
  p.crop_dx = 2;
  const Tensor out = obfuscate(snip, p);
  for (int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.at(i) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("flip relabeling pairs") {
  CHECK(flip_adjusted_class(kTranslateLeft) == kTranslateRight);
  CHECK(flip_adjusted_class(kTranslateRight) == kTranslateLeft);
  CHECK(flip_adjusted_class(kRotateCw) == kRotateCcw);
  CHECK(flip_adjusted_class(kRotateCcw) == kRotateCw);
  CHECK(flip_adjusted_class(kTranslateUp) == kTranslateUp);
  CHECK(flip_adjusted_class(kTranslateDown) == kTranslateDown);
  CHECK(flip_adjusted_class(kScaleOscillate) == kScaleOscillate);
  CHECK(flip_adjusted_class(kBounce) == kBounce);

  const VideoClip clip = generate_clip(17, kRotateCw, 40);
  const Tensor snip = clip_window(clip, 0, 8, 1);
  Rng rng(4);
  for (int tries = 0; tries < 16; ++tries) {
    const AugmentedSnippet aug = obfuscate(snip, kRotateCw, rng);
    CHECK(aug.label == (aug.flipped ? kRotateCcw : kRotateCw));
  }
}

TEST_CASE("hard windows avoid the triple") {
  Rng rng(8);
  const auto starts = sample_hard_windows(48, 8, 1, 8, 4, rng);
  CHECK(starts.size() == 4);
  for (int64_t s : starts) {
    const bool before = s + 8 <= 8;
    const bool after = s >= 8 + 24;
    CHECK((before || after));
    CHECK(s >= 0);
    CHECK(s + 8 <= 48);
  }
}

TEST_CASE("class separability above 60 percent") {
  const double acc = oracle::frame_difference_separability(50, 32, 4242);
  INFO("nearest-centroid accuracy ", acc);
  CHECK(acc > 0.60);
}

TEST_CASE("ppm dump") {
  const VideoClip clip = generate_clip(2, kTranslateDown, 8);
  Tensor frame({kFrameH, kFrameW, kFrameC}, clip.frames.precision());
  for (int64_t j = 0; j < frame.numel(); ++j) frame.set(j, clip.frames.at(j));
  const std::string path =
      (std::filesystem::temp_directory_path() / "cep_test_frame.ppm").string();
  write_ppm(frame, path);
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::string header;
  std::getline(f, header);
  CHECK(header == "P6");
  std::string dims, maxval;
  std::getline(f, dims);
  std::getline(f, maxval);
  CHECK(dims == "32 32");
  CHECK(maxval == "255");
  f.seekg(0, std::ios::end);
  const auto size = f.tellg();
  CHECK(static_cast<long long>(size) >= 32 * 32 * 3);
  std::filesystem::remove(path);
}
