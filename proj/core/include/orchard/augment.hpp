#pragma once

#include <cstdint>

#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"

namespace orchard {

// Label-preserving geometric augmentation ranges. All magnitudes are
// sampled symmetrically around identity; out-of-frame pixels are filled
// with 0, the per-channel mean after normalization.
struct AugmentConfig {
    double rotation_max_deg = 30.0;
    double translate_max_frac = 0.10;
    double reflect_prob = 0.5;
    double scale_min = 0.8;
    double scale_max = 1.2;
    uint64_t seed = 0;

    void validate() const;
    bool is_identity() const;
};

// Mirror about the vertical axis; exact index permutation, involutive.
Tensor<float> flip_horizontal(const Tensor<float>& chw);

// Scale about the image center, rotate by `degrees`, translate by pixel
// offsets, then optionally mirror; one bilinear resample overall, zero fill.
// Angles that are exact multiples of 90 use exact trigonometric values so
// axis-aligned rotations reduce to index permutations.
Tensor<float> warp_affine(const Tensor<float>& chw, double scale, double degrees,
                          double translate_x, double translate_y, bool flip);

Tensor<float> rotate_bilinear(const Tensor<float>& chw, double degrees);

// Samples scale, rotation, translation and reflection (in that order) from
// `rng` and applies them. Shape is preserved; labels never pass through.
Tensor<float> augment(const Tensor<float>& chw, const AugmentConfig& config, Rng& rng);

}  // namespace orchard
