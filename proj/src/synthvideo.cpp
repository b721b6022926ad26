#include "cep/synthvideo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cep {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBackgroundAmplitude = 0.05;
constexpr int64_t kCropSize = 28;

enum class SpriteShape { kSquare, kCircle, kTriangle };

struct Sprite {
  SpriteShape shape;
  double color[3];
  double size;   // half extent in pixels
  double angle;  // own orientation
  double spin;   // orientation change per frame
};

struct Pose {
  double cx, cy, size, angle;
};

double sprite_sdf(const Sprite& s, const Pose& p, double px, double py) {
  const double dx = px - p.cx, dy = py - p.cy;
  switch (s.shape) {
    case SpriteShape::kCircle:
      return std::sqrt(dx * dx + dy * dy) - p.size;
    case SpriteShape::kSquare: {
      const double c = std::cos(-p.angle), sn = std::sin(-p.angle);
      const double rx = c * dx - sn * dy, ry = sn * dx + c * dy;
      return std::max(std::abs(rx), std::abs(ry)) - p.size;
    }
    case SpriteShape::kTriangle: {
      // signed distance to the edge lines of an equilateral triangle
      double d = -1e9;
      for (int k = 0; k < 3; ++k) {
        const double a0 = p.angle + 2.0 * kPi * k / 3.0;
        const double a1 = p.angle + 2.0 * kPi * (k + 1) / 3.0;
        const double v0x = p.cx + p.size * std::cos(a0);
        const double v0y = p.cy + p.size * std::sin(a0);
        const double v1x = p.cx + p.size * std::cos(a1);
        const double v1y = p.cy + p.size * std::sin(a1);
        const double ex = v1x - v0x, ey = v1y - v0y;
        const double len = std::sqrt(ex * ex + ey * ey);
        // outward normal of edge (v0, v1) for counter-clockwise vertices
        const double nx = ey / len, ny = -ex / len;
        d = std::max(d, nx * (px - v0x) + ny * (py - v0y));
      }
      return d;
    }
  }
  return 1e9;
}

Pose pose_at(const Sprite& sprite, int32_t class_id, int64_t t, int64_t len,
             Rng& motion_rng, std::vector<double>& cache) {
  // cache holds per-clip motion constants, drawn once on first use
  if (cache.empty()) {
    const double margin = 2.0 + sprite.size;
    const double span = kFrameW - 2.0 * margin;
    const double u = motion_rng.uniform(0.55, 1.0);
    cache.push_back(margin);                                   // 0
    cache.push_back(len > 1 ? u * span / (len - 1) : 0.0);     // 1: speed
    cache.push_back(motion_rng.uniform(margin, kFrameW - margin));  // 2: other axis
    cache.push_back(motion_rng.uniform(6.0, 10.0));            // 3: orbit radius
    cache.push_back(motion_rng.uniform(0.0, 2.0 * kPi));       // 4: phase
    cache.push_back(motion_rng.uniform(0.5, 1.0) * 1.5 * kPi /
                    std::max<int64_t>(len - 1, 1));            // 5: angular speed
    cache.push_back(motion_rng.uniform(1.0, 2.0));             // 6: osc cycles
    cache.push_back(motion_rng.uniform(-3.0, 3.0));            // 7: centre jitter x
    cache.push_back(motion_rng.uniform(-3.0, 3.0));            // 8: centre jitter y
  }
  const double margin = cache[0];
  const double speed = cache[1];
  const double other = cache[2];
  const double radius = cache[3];
  const double phase = cache[4];
  const double omega = cache[5];
  const double cycles = cache[6];

  Pose p;
  p.size = sprite.size;
  p.angle = sprite.angle + sprite.spin * static_cast<double>(t);
  const double ft = static_cast<double>(t);
  const double cx0 = kFrameW / 2.0 + cache[7], cy0 = kFrameH / 2.0 + cache[8];
  switch (class_id) {
    case kTranslateLeft:
      p.cx = (kFrameW - margin) - speed * ft;
      p.cy = other;
      break;
    case kTranslateRight:
      p.cx = margin + speed * ft;
      p.cy = other;
      break;
    case kTranslateUp:
      p.cx = other;
      p.cy = (kFrameH - margin) - speed * ft;
      break;
    case kTranslateDown:
      p.cx = other;
      p.cy = margin + speed * ft;
      break;
    case kRotateCw:
      p.cx = cx0 + radius * std::cos(phase + omega * ft);
      p.cy = cy0 + radius * std::sin(phase + omega * ft);
      break;
    case kRotateCcw:
      p.cx = cx0 + radius * std::cos(phase - omega * ft);
      p.cy = cy0 + radius * std::sin(phase - omega * ft);
      break;
    case kScaleOscillate:
      p.cx = cx0;
      p.cy = cy0;
      p.size = sprite.size *
               (1.0 + 0.45 * std::sin(2.0 * kPi * cycles * ft /
                                          std::max<int64_t>(len - 1, 1) +
                                      phase));
      break;
    case kBounce: {
      p.cx = other;
      const double top = margin, floor_y = kFrameH - margin;
      const double travel = floor_y - top;
      const double pos = std::fmod(speed * ft + phase / (2.0 * kPi) * travel,
                                   2.0 * travel);
      p.cy = top + (pos <= travel ? pos : 2.0 * travel - pos);
      break;
    }
    default:
      throw std::invalid_argument("generate_clip: invalid class_id " +
                                  std::to_string(class_id));
  }
  return p;
}

double bilinear(const Tensor& src, int64_t t, double y, double x, int64_t c,
                int64_t h, int64_t w) {
  const int64_t y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x0 = static_cast<int64_t>(std::floor(x));
  const int64_t y1 = std::min(y0 + 1, h - 1);
  const int64_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  auto at = [&](int64_t yy, int64_t xx) {
    return src.at(((t * h + yy) * w + xx) * kFrameC + c);
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

}  // namespace

const char* class_name(int32_t class_id) {
  switch (class_id) {
    case kTranslateLeft: return "translate-left";
    case kTranslateRight: return "translate-right";
    case kTranslateUp: return "translate-up";
    case kTranslateDown: return "translate-down";
    case kRotateCw: return "rotate-cw";
    case kRotateCcw: return "rotate-ccw";
    case kScaleOscillate: return "scale-oscillate";
    case kBounce: return "bounce";
  }
  return "unknown";
}

int32_t flip_adjusted_class(int32_t class_id) {
  switch (class_id) {
    case kTranslateLeft: return kTranslateRight;
    case kTranslateRight: return kTranslateLeft;
    case kRotateCw: return kRotateCcw;
    case kRotateCcw: return kRotateCw;
    default: return class_id;
  }
}

VideoClip generate_clip(uint64_t clip_seed, int32_t class_id, int64_t length,
                        int64_t video_id, Precision prec) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw std::invalid_argument("generate_clip: invalid class_id " +
                                std::to_string(class_id));
  }
  if (length < 4) {
    throw std::invalid_argument("generate_clip: length " +
                                std::to_string(length) +
                                " too small, need at least 4 frames");
  }
  Rng sprite_rng = Rng::keyed(clip_seed, rng::kClip, 1);
  Sprite sprite;
  const uint64_t shape_pick = sprite_rng.below(3);
  sprite.shape = shape_pick == 0   ? SpriteShape::kSquare
                 : shape_pick == 1 ? SpriteShape::kCircle
                                   : SpriteShape::kTriangle;
  for (double& c : sprite.color) c = sprite_rng.uniform(0.3, 1.0);
  sprite.size = sprite_rng.uniform(4.0, 7.0);
  sprite.angle = sprite_rng.uniform(0.0, 2.0 * kPi);
  sprite.spin = sprite_rng.uniform(-0.08, 0.08);

  Rng motion_rng = Rng::keyed(clip_seed, rng::kClip, 2);
  std::vector<double> motion_cache;

  VideoClip clip;
  clip.class_id = class_id;
  clip.clip_seed = clip_seed;
  clip.video_id = video_id;
  clip.frames = Tensor({length, kFrameH, kFrameW, kFrameC}, prec);

  int64_t idx = 0;
  for (int64_t t = 0; t < length; ++t) {
    const Pose pose =
        pose_at(sprite, class_id, t, length, motion_rng, motion_cache);
    Rng bg = Rng::keyed(clip_seed, rng::kBackground, t);
    for (int64_t y = 0; y < kFrameH; ++y) {
      for (int64_t x = 0; x < kFrameW; ++x) {
        const double d = sprite_sdf(sprite, pose, static_cast<double>(x),
                                    static_cast<double>(y));
        const double cov = std::clamp(0.5 - d, 0.0, 1.0);
        for (int64_t c = 0; c < kFrameC; ++c) {
          const double noise = bg.uniform() * kBackgroundAmplitude;
          clip.frames.set(idx++, (1.0 - cov) * noise + cov * sprite.color[c]);
        }
      }
    }
  }
  return clip;
}

Tensor clip_window(const VideoClip& clip, int64_t start, int64_t t_snip,
                   int64_t stride) {
  const int64_t len = clip.length();
  if (start < 0 || start + (t_snip - 1) * stride + 1 > len) {
    throw std::invalid_argument("clip_window: window [" +
                                std::to_string(start) + ", ...) out of range");
  }
  Tensor out({t_snip, kFrameH, kFrameW, kFrameC}, clip.frames.precision());
  const int64_t frame_elems = kFrameH * kFrameW * kFrameC;
  for (int64_t i = 0; i < t_snip; ++i) {
    const int64_t src = (start + i * stride) * frame_elems;
    for (int64_t j = 0; j < frame_elems; ++j) {
      out.set(i * frame_elems + j, clip.frames.at(src + j));
    }
  }
  return out;
}

SnippetTriple sample_triple(const VideoClip& clip, int64_t t_snip,
                            int64_t stride, Rng& rng) {
  if (t_snip < 1 || stride < 1) {
    throw std::invalid_argument("sample_triple: t_snip and stride must be positive");
  }
  const int64_t need = 3 * t_snip * stride;
  if (clip.length() < need) {
    throw std::invalid_argument(
        "sample_triple: clip has " + std::to_string(clip.length()) +
        " frames, requires at least " + std::to_string(need));
  }
  const int64_t start =
      static_cast<int64_t>(rng.below(static_cast<uint64_t>(
          clip.length() - need + 1)));
  SnippetTriple tr;
  tr.past = clip_window(clip, start, t_snip, stride);
  tr.current = clip_window(clip, start + t_snip * stride, t_snip, stride);
  tr.future = clip_window(clip, start + 2 * t_snip * stride, t_snip, stride);
  tr.video_id = clip.video_id;
  tr.start_frame = start;
  tr.stride = stride;
  return tr;
}

std::vector<int64_t> sample_hard_windows(int64_t clip_len, int64_t t_snip,
                                         int64_t stride, int64_t triple_start,
                                         int64_t count, Rng& rng) {
  const int64_t span = (t_snip - 1) * stride + 1;
  const int64_t triple_end = triple_start + 3 * t_snip * stride;
  std::vector<int64_t> valid;
  for (int64_t s = 0; s + span <= clip_len; ++s) {
    if (s + span <= triple_start || s >= triple_end) valid.push_back(s);
  }
  if (valid.empty()) {
    throw std::invalid_argument(
        "sample_hard_windows: clip of " + std::to_string(clip_len) +
        " frames leaves no window disjoint from the triple");
  }
  // partial Fisher-Yates; wraps around when fewer valid starts than requested
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(count));
  std::vector<int64_t> pool = valid;
  for (int64_t i = 0; i < count; ++i) {
    if (pool.empty()) pool = valid;
    const size_t j = static_cast<size_t>(rng.below(pool.size()));
    out.push_back(pool[j]);
    pool.erase(pool.begin() + static_cast<int64_t>(j));
  }
  return out;
}

AugmentationParams draw_augmentation(Rng& rng) {
  AugmentationParams p;
  p.flip = rng.coin();
  p.brightness_delta = rng.uniform(-0.2, 0.2);
  p.contrast_scale = rng.uniform(0.8, 1.2);
  p.crop_dy = static_cast<int64_t>(rng.below(kFrameH - kCropSize + 1));
  p.crop_dx = static_cast<int64_t>(rng.below(kFrameW - kCropSize + 1));
  return p;
}

Tensor obfuscate(const Tensor& snippet, const AugmentationParams& params) {
  if (snippet.rank() != 4 || snippet.extent(1) != kFrameH ||
      snippet.extent(2) != kFrameW || snippet.extent(3) != kFrameC) {
    throw std::invalid_argument("obfuscate: snippet must be (T," +
                                std::to_string(kFrameH) + "," +
                                std::to_string(kFrameW) + "," +
                                std::to_string(kFrameC) + "), got " +
                                shape_str(snippet.shape()));
  }
  const int64_t t_snip = snippet.extent(0);
  Tensor work(snippet.shape(), snippet.precision());
  // flip + jitter, one pass
  for (int64_t t = 0; t < t_snip; ++t) {
    for (int64_t y = 0; y < kFrameH; ++y) {
      for (int64_t x = 0; x < kFrameW; ++x) {
        const int64_t sx = params.flip ? kFrameW - 1 - x : x;
        for (int64_t c = 0; c < kFrameC; ++c) {
          const double v =
              snippet.at(((t * kFrameH + y) * kFrameW + sx) * kFrameC + c);
          const double jittered = (v - 0.5) * params.contrast_scale + 0.5 +
                                  params.brightness_delta;
          work.set(((t * kFrameH + y) * kFrameW + x) * kFrameC + c,
                   std::clamp(jittered, 0.0, 1.0));
        }
      }
    }
  }
  // crop then bilinear resize back
  Tensor out(snippet.shape(), snippet.precision());
  const double sy = static_cast<double>(kCropSize - 1) / (kFrameH - 1);
  const double sx = static_cast<double>(kCropSize - 1) / (kFrameW - 1);
  for (int64_t t = 0; t < t_snip; ++t) {
    for (int64_t y = 0; y < kFrameH; ++y) {
      for (int64_t x = 0; x < kFrameW; ++x) {
        const double src_y = params.crop_dy + y * sy;
        const double src_x = params.crop_dx + x * sx;
        for (int64_t c = 0; c < kFrameC; ++c) {
          out.set(((t * kFrameH + y) * kFrameW + x) * kFrameC + c,
                  bilinear(work, t, src_y, src_x, c, kFrameH, kFrameW));
        }
      }
    }
  }
  return out;
}

AugmentedSnippet obfuscate(const Tensor& snippet, int32_t class_id, Rng& rng) {
  const AugmentationParams p = draw_augmentation(rng);
  AugmentedSnippet out;
  out.frames = obfuscate(snippet, p);
  out.flipped = p.flip;
  out.label = p.flip ? flip_adjusted_class(class_id) : class_id;
  return out;
}

Tensor center_crop_resize(const Tensor& snippet) {
  AugmentationParams p;
  p.flip = false;
  p.brightness_delta = 0.0;
  p.contrast_scale = 1.0;
  p.crop_dy = (kFrameH - kCropSize) / 2;
  p.crop_dx = (kFrameW - kCropSize) / 2;
  return obfuscate(snippet, p);
}

void write_ppm(const Tensor& frame, const std::string& path) {
  if (frame.rank() != 3 || frame.extent(2) != 3) {
    throw std::invalid_argument("write_ppm: frame must be (H,W,3), got " +
                                shape_str(frame.shape()));
  }
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) {
    throw std::runtime_error("write_ppm: cannot open " + path);
  }
  const int64_t h = frame.extent(0), w = frame.extent(1);
  std::fprintf(f, "P6\n%lld %lld\n255\n", static_cast<long long>(w),
               static_cast<long long>(h));
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        const double v = std::clamp(frame.at((y * w + x) * 3 + c), 0.0, 1.0);
        row[static_cast<size_t>(x * 3 + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    std::fwrite(row.data(), 1, row.size(), f);
  }
  std::fclose(f);
}

}  // namespace cep
