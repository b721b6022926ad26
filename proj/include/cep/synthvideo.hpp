#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cep/rng.hpp"
#include "cep/tensor.hpp"

namespace cep {

// Frame geometry is fixed at desk scale.
inline constexpr int64_t kFrameH = 32;
inline constexpr int64_t kFrameW = 32;
inline constexpr int64_t kFrameC = 3;
inline constexpr int kNumClasses = 8;

// Motion classes rendered by the generator. Horizontal flip swaps the
// chiral pairs (left/right, cw/ccw) and leaves the rest alone.
enum MotionClass : int32_t {
  kTranslateLeft = 0,
  kTranslateRight = 1,
  kTranslateUp = 2,
  kTranslateDown = 3,
  kRotateCw = 4,
  kRotateCcw = 5,
  kScaleOscillate = 6,
  kBounce = 7,
};

const char* class_name(int32_t class_id);
int32_t flip_adjusted_class(int32_t class_id);

struct VideoClip {
  Tensor frames;  // (L, H, W, C), values in [0, 1]
  int32_t class_id = 0;
  uint64_t clip_seed = 0;
  int64_t video_id = 0;

  int64_t length() const { return frames.numel() ? frames.extent(0) : 0; }
};

// One anti-aliased sprite (shape, colour, pose drawn from the seed) moving
// per class over low-amplitude seeded background noise. Deterministic in
// (clip_seed, class_id, length).
VideoClip generate_clip(uint64_t clip_seed, int32_t class_id, int64_t length,
                        int64_t video_id = 0,
                        Precision prec = Precision::f32);

struct SnippetTriple {
  Tensor past, current, future;  // each (T, H, W, C)
  int64_t video_id = 0;
  int64_t start_frame = 0;
  int64_t stride = 1;
};

// Extracts T strided frames starting at `start`.
Tensor clip_window(const VideoClip& clip, int64_t start, int64_t t_snip,
                   int64_t stride);

// Three adjacent non-overlapping snippets with a uniformly drawn start.
SnippetTriple sample_triple(const VideoClip& clip, int64_t t_snip,
                            int64_t stride, Rng& rng);

// Window starts for same-clip hard negatives: windows disjoint from the
// triple occupying [triple_start, triple_start + 3*T*stride).
std::vector<int64_t> sample_hard_windows(int64_t clip_len, int64_t t_snip,
                                         int64_t stride, int64_t triple_start,
                                         int64_t count, Rng& rng);

// One draw per snippet, applied identically to all its frames.
struct AugmentationParams {
  bool flip = false;
  double brightness_delta = 0.0;
  double contrast_scale = 1.0;
  int64_t crop_dy = 0, crop_dx = 0;
};

AugmentationParams draw_augmentation(Rng& rng);

// Flow obfuscation: flip -> brightness/contrast jitter (clamped to [0,1])
// -> crop to 28x28 -> bilinear resize back. Independent draws per snippet
// destroy inter-snippet pixel motion while keeping each snippet coherent.
Tensor obfuscate(const Tensor& snippet, const AugmentationParams& params);

struct AugmentedSnippet {
  Tensor frames;
  int32_t label = 0;  // flip-adjusted class
  bool flipped = false;
};

AugmentedSnippet obfuscate(const Tensor& snippet, int32_t class_id, Rng& rng);

// Center-crop 28x28 and resize back; the augmentation-free eval path.
Tensor center_crop_resize(const Tensor& snippet);

// Binary PPM (P6, maxval 255) dump of one (H, W, C) frame.
void write_ppm(const Tensor& frame, const std::string& path);

// Default clip length leaving room for a triple plus hard negatives.
inline int64_t default_clip_length(int64_t t_snip, int64_t stride) {
  return t_snip * (4 * stride + 2);
}

}  // namespace cep
