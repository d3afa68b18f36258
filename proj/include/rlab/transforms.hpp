#pragma once

#include <string>
#include <vector>

#include "rlab/tensor.hpp"

namespace rlab {

/// Rigid pose: rotation in degrees (positive = counter-clockwise) about the
/// image center, then translation in pixels (tx right, ty down).
struct Pose {
    double theta_deg = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    bool is_identity() const { return theta_deg == 0.0 && tx == 0.0 && ty == 0.0; }
};

/// Pose mesh: evenly spaced symmetric values per axis, endpoints included.
struct GridSpec {
    std::string name;
    int translation_values_per_axis = 1;  // odd so 0 is representable
    int rotation_value_count = 1;
    double max_translation_px = 0.0;
    double max_rotation_deg = 0.0;

    int64_t pose_count() const {
        return static_cast<int64_t>(translation_values_per_axis) *
               translation_values_per_axis * rotation_value_count;
    }
};

struct AugmentPolicy {
    double max_translation_px = 0.0;
    double flip_probability = 0.0;
    double jitter_fraction = 0.0;  // brightness/contrast/saturation, [1-f, 1+f]
    double max_rotation_deg = 0.0;
};

/// Inverse-mapped bilinear warp of a (C,H,W) image in [0,1]: rotation about
/// ((W-1)/2,(H-1)/2) composed with translation into one affine map, zero fill
/// outside the frame, output clamped to [0,1]. The identity pose returns the
/// image bit-for-bit; rotations at exact multiples of 90 degrees use exact
/// trigonometric values and reduce to index permutations on square images.
Tensor warp(const Tensor& image, const Pose& pose);

/// Full Cartesian pose list, theta-major then tx then ty, deterministic.
/// Rejects even value counts (0 must be representable on every axis).
std::vector<Pose> make_grid(const GridSpec& spec);

/// Built-in paper grids: grid775, grid135, grid775-10, rot30, rot10.
GridSpec grid_preset(const std::string& name);

/// Named augmentation policies: "std" (4px, flip 0.5, 25% jitter, 2 deg),
/// "std*" (3px, flip 0.5, 25% jitter, 30 deg), "none".
AugmentPolicy augment_policy(const std::string& name);

/// Multiplicative brightness, then contrast (interpolation toward the mean
/// gray), then saturation (per-pixel interpolation toward gray), each factor
/// applied with clamping to [0,1]. Exposed for direct testing.
Tensor color_jitter(const Tensor& image, double brightness, double contrast,
                    double saturation);

/// Random translation+rotation (single resampling), horizontal flip, color
/// jitter. Draws a fixed-length sequence from `rng` regardless of bounds, so
/// identical rng state implies identical output.
Tensor augment(const Tensor& image, const AugmentPolicy& policy, Rng& rng);

}  // namespace rlab
