#include "rlab/transforms.hpp"

#include <cmath>

#include "rlab/layers.hpp"

namespace rlab {

namespace {

constexpr double kPi = 3.14159265358979323846;

void rotation_cos_sin(double theta_deg, double* c, double* s) {
    // Exact values at quarter turns so those warps are pure permutations.
    const double q = theta_deg / 90.0;
    if (q == std::floor(q)) {
        static const double ct[4] = {1.0, 0.0, -1.0, 0.0};
        static const double st[4] = {0.0, 1.0, 0.0, -1.0};
        const int i = static_cast<int>(std::fmod(std::fmod(q, 4.0) + 4.0, 4.0));
        *c = ct[i];
        *s = st[i];
        return;
    }
    const double rad = theta_deg * kPi / 180.0;
    *c = std::cos(rad);
    *s = std::sin(rad);
}

inline double sample_bilinear(const double* plane, int64_t h, int64_t w, double sy, double sx) {
    const double fx = std::floor(sx);
    const double fy = std::floor(sy);
    const int64_t x0 = static_cast<int64_t>(fx);
    const int64_t y0 = static_cast<int64_t>(fy);
    const double ax = sx - fx;
    const double ay = sy - fy;
    auto at = [&](int64_t y, int64_t x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;  // zero fill
        return plane[y * w + x];
    };
    const double top = (1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1);
    const double bot = (1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1);
    return (1.0 - ay) * top + ay * bot;
}

}  // namespace

Tensor warp(const Tensor& image, const Pose& pose) {
    if (image.rank() != 3) throw ShapeError("warp: image must be (C,H,W)");
    if (pose.is_identity()) return image;

    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;

    // Forward map: p_out = R(theta) (p_in - c) + c + t.  Inverse sampling:
    // p_in = R(-theta) (p_out - t - c) + c, with CCW rotation in y-down
    // coordinates: R(a) (x,y) = (x cos a + y sin a, -x sin a + y cos a).
    double ca, sa;
    rotation_cos_sin(-pose.theta_deg, &ca, &sa);

    Tensor out(image.shape);
    for (int64_t ch = 0; ch < c; ++ch) {
        const double* plane = image.data() + ch * h * w;
        double* dst = out.data() + ch * h * w;
        for (int64_t oy = 0; oy < h; ++oy) {
            const double ry = static_cast<double>(oy) - pose.ty - cy;
            for (int64_t ox = 0; ox < w; ++ox) {
                const double rx = static_cast<double>(ox) - pose.tx - cx;
                const double sx = rx * ca + ry * sa + cx;
                const double sy = -rx * sa + ry * ca + cy;
                double v = sample_bilinear(plane, h, w, sy, sx);
                if (v < 0.0) v = 0.0;
                if (v > 1.0) v = 1.0;
                dst[oy * w + ox] = v;
            }
        }
    }
    return out;
}

namespace {

std::vector<double> symmetric_values(int count, double extent, const char* axis) {
    if (count < 1) throw ConfigError(std::string("grid: ") + axis + " count must be positive");
    if (count % 2 == 0)
        throw ConfigError(std::string("grid: even ") + axis +
                          " value count cannot represent 0");
    std::vector<double> v(static_cast<size_t>(count));
    if (count == 1) {
        v[0] = 0.0;
        return v;
    }
    const double step = 2.0 * extent / static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) v[static_cast<size_t>(i)] = -extent + step * i;
    v[static_cast<size_t>(count / 2)] = 0.0;  // keep the midpoint exact
    return v;
}

}  // namespace

std::vector<Pose> make_grid(const GridSpec& spec) {
    const auto rots = symmetric_values(spec.rotation_value_count, spec.max_rotation_deg,
                                       "rotation");
    const auto trans = symmetric_values(spec.translation_values_per_axis,
                                        spec.max_translation_px, "translation");
    std::vector<Pose> poses;
    poses.reserve(static_cast<size_t>(spec.pose_count()));
    for (double th : rots)
        for (double tx : trans)
            for (double ty : trans) poses.push_back(Pose{th, tx, ty});
    return poses;
}

GridSpec grid_preset(const std::string& name) {
    if (name == "grid775") return {name, 5, 31, 3.0, 30.0};
    if (name == "grid135") return {name, 3, 15, 3.0, 30.0};
    if (name == "grid775-10") return {name, 5, 31, 3.0, 10.0};
    if (name == "rot30") return {name, 1, 31, 0.0, 30.0};
    if (name == "rot10") return {name, 1, 31, 0.0, 10.0};
    throw ConfigError("unknown grid preset: " + name);
}

AugmentPolicy augment_policy(const std::string& name) {
    if (name == "std") return {4.0, 0.5, 0.25, 2.0};
    if (name == "std*") return {3.0, 0.5, 0.25, 30.0};
    if (name == "none") return {0.0, 0.0, 0.0, 0.0};
    throw ConfigError("unknown augmentation policy: " + name);
}

namespace {

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Gray value per pixel: BT.601 luma for 3-channel images, channel mean else.
void gray_plane(const Tensor& img, std::vector<double>& gray) {
    const int64_t c = img.dim(0), hw = img.dim(1) * img.dim(2);
    gray.assign(static_cast<size_t>(hw), 0.0);
    if (c == 3) {
        const double* r = img.data();
        const double* g = img.data() + hw;
        const double* b = img.data() + 2 * hw;
        for (int64_t i = 0; i < hw; ++i)
            gray[static_cast<size_t>(i)] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = img.data() + ch * hw;
            for (int64_t i = 0; i < hw; ++i) gray[static_cast<size_t>(i)] += p[i];
        }
        for (auto& v : gray) v /= static_cast<double>(c);
    }
}

}  // namespace

Tensor color_jitter(const Tensor& image, double brightness, double contrast,
                    double saturation) {
    const int64_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
    Tensor out = image;

    if (brightness != 1.0)
        for (auto& v : out.values) v = clamp01(v * brightness);

    if (contrast != 1.0) {
        std::vector<double> gray;
        gray_plane(out, gray);
        double mean = 0.0;
        for (double v : gray) mean += v;
        mean /= static_cast<double>(hw);
        for (auto& v : out.values) v = clamp01(mean + contrast * (v - mean));
    }

    if (saturation != 1.0) {
        std::vector<double> gray;
        gray_plane(out, gray);
        for (int64_t ch = 0; ch < c; ++ch) {
            double* p = out.data() + ch * hw;
            for (int64_t i = 0; i < hw; ++i)
                p[i] = clamp01(gray[static_cast<size_t>(i)] +
                               saturation * (p[i] - gray[static_cast<size_t>(i)]));
        }
    }
    return out;
}

Tensor augment(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
    // Fixed draw sequence: tx, ty, theta, flip, brightness, contrast,
    // saturation. Zero bounds still consume draws so streams stay aligned.
    const double tx = rng.uniform(-policy.max_translation_px, policy.max_translation_px);
    const double ty = rng.uniform(-policy.max_translation_px, policy.max_translation_px);
    const double th = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
    const bool flip = rng.uniform() < policy.flip_probability;
    const double fb = rng.uniform(1.0 - policy.jitter_fraction, 1.0 + policy.jitter_fraction);
    const double fc = rng.uniform(1.0 - policy.jitter_fraction, 1.0 + policy.jitter_fraction);
    const double fs = rng.uniform(1.0 - policy.jitter_fraction, 1.0 + policy.jitter_fraction);

    Tensor out = warp(image, Pose{th, tx, ty});
    if (flip) out = mirror_w(out);
    if (fb != 1.0 || fc != 1.0 || fs != 1.0) out = color_jitter(out, fb, fc, fs);
    return out;
}

}  // namespace rlab
