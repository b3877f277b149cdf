#include "orchard/augment.hpp"

#include <cmath>
#include <numbers>

#include "orchard/errors.hpp"

namespace orchard {

void AugmentConfig::validate() const {
    if (rotation_max_deg < 0.0 || rotation_max_deg > 180.0) {
        throw ValidationError("augment: rotation_max_deg must lie in [0,180]");
    }
    if (translate_max_frac < 0.0 || translate_max_frac > 0.5) {
        throw ValidationError("augment: translate_max_frac must lie in [0,0.5]");
    }
    if (reflect_prob < 0.0 || reflect_prob > 1.0) {
        throw ValidationError("augment: reflect probability must lie in [0,1]");
    }
    if (scale_min <= 0.0 || scale_max <= 0.0 || scale_min > scale_max) {
        throw ValidationError("augment: scale range must be positive with min <= max");
    }
}

bool AugmentConfig::is_identity() const {
    return rotation_max_deg == 0.0 && translate_max_frac == 0.0 && reflect_prob == 0.0 &&
           scale_min == 1.0 && scale_max == 1.0;
}

namespace {

void require_chw(const Tensor<float>& t, const char* op) {
    if (t.rank() != 3) {
        throw DimensionError(std::string(op) + ": expected [C,H,W], got " +
                             shape_to_string(t.shape()));
    }
}

// Exact values at quarter turns so axis-aligned rotations sample exactly on
// the integer grid.
void sincos_degrees(double degrees, double& s, double& c) {
    double r = std::fmod(degrees, 360.0);
    if (r < 0.0) r += 360.0;
    if (r == 0.0) {
        s = 0.0; c = 1.0;
    } else if (r == 90.0) {
        s = 1.0; c = 0.0;
    } else if (r == 180.0) {
        s = 0.0; c = -1.0;
    } else if (r == 270.0) {
        s = -1.0; c = 0.0;
    } else {
        const double rad = degrees * std::numbers::pi / 180.0;
        s = std::sin(rad);
        c = std::cos(rad);
    }
}

float sample_bilinear_zero(const float* plane, size_t h, size_t w, double y, double x) {
    const double fy0 = std::floor(y);
    const double fx0 = std::floor(x);
    const double wy = y - fy0;
    const double wx = x - fx0;
    const ptrdiff_t y0 = static_cast<ptrdiff_t>(fy0);
    const ptrdiff_t x0 = static_cast<ptrdiff_t>(fx0);

    auto tap = [&](ptrdiff_t yy, ptrdiff_t xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<ptrdiff_t>(h) ||
            xx >= static_cast<ptrdiff_t>(w)) {
            return 0.0;  // fill with the post-normalization channel mean
        }
        return plane[static_cast<size_t>(yy) * w + static_cast<size_t>(xx)];
    };

    const double top = tap(y0, x0) * (1.0 - wx) + tap(y0, x0 + 1) * wx;
    const double bottom = tap(y0 + 1, x0) * (1.0 - wx) + tap(y0 + 1, x0 + 1) * wx;
    return static_cast<float>(top * (1.0 - wy) + bottom * wy);
}

}  // namespace

Tensor<float> flip_horizontal(const Tensor<float>& chw) {
    require_chw(chw, "flip_horizontal");
    const size_t c = chw.extent(0), h = chw.extent(1), w = chw.extent(2);
    Tensor<float> out(chw.shape());
    const float* src = chw.values().data();
    float* dst = out.mutable_values().data();
    for (size_t ci = 0; ci < c; ++ci) {
        for (size_t y = 0; y < h; ++y) {
            const float* srow = src + (ci * h + y) * w;
            float* drow = dst + (ci * h + y) * w;
            for (size_t x = 0; x < w; ++x) drow[x] = srow[w - 1 - x];
        }
    }
    return out;
}

Tensor<float> warp_affine(const Tensor<float>& chw, double scale, double degrees,
                          double translate_x, double translate_y, bool flip) {
    require_chw(chw, "warp_affine");
    if (scale <= 0.0) throw ValidationError("warp_affine: scale must be positive");
    const size_t c = chw.extent(0), h = chw.extent(1), w = chw.extent(2);

    if (scale == 1.0 && degrees == 0.0 && translate_x == 0.0 && translate_y == 0.0) {
        return flip ? flip_horizontal(chw) : chw.clone_detached();
    }

    double s, co;
    sincos_degrees(degrees, s, co);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double inv_scale = 1.0 / scale;

    Tensor<float> out(chw.shape());
    const float* src = chw.values().data();
    float* dst = out.mutable_values().data();

    for (size_t ci = 0; ci < c; ++ci) {
        const float* plane = src + ci * h * w;
        float* dplane = dst + ci * h * w;
        for (size_t y = 0; y < h; ++y) {
            for (size_t x = 0; x < w; ++x) {
                // invert flip, translation, rotation, scale (reverse order
                // of the forward chain scale -> rotate -> translate -> flip)
                const double qx = flip ? static_cast<double>(w - 1 - x) : static_cast<double>(x);
                const double ux = qx - cx - translate_x;
                const double uy = static_cast<double>(y) - cy - translate_y;
                const double rx = co * ux + s * uy;     // R(-theta)
                const double ry = -s * ux + co * uy;
                const double src_x = rx * inv_scale + cx;
                const double src_y = ry * inv_scale + cy;
                dplane[y * w + x] = sample_bilinear_zero(plane, h, w, src_y, src_x);
            }
        }
    }
    return out;
}

Tensor<float> rotate_bilinear(const Tensor<float>& chw, double degrees) {
    return warp_affine(chw, 1.0, degrees, 0.0, 0.0, false);
}

Tensor<float> augment(const Tensor<float>& chw, const AugmentConfig& config, Rng& rng) {
    config.validate();
    require_chw(chw, "augment");
    const double scale = config.scale_min == config.scale_max
                             ? config.scale_min
                             : rng.uniform(config.scale_min, config.scale_max);
    const double degrees =
        config.rotation_max_deg == 0.0
            ? 0.0
            : rng.uniform(-config.rotation_max_deg, config.rotation_max_deg);
    const double w = static_cast<double>(chw.extent(2));
    const double h = static_cast<double>(chw.extent(1));
    const double tx =
        config.translate_max_frac == 0.0
            ? 0.0
            : rng.uniform(-config.translate_max_frac, config.translate_max_frac) * w;
    const double ty =
        config.translate_max_frac == 0.0
            ? 0.0
            : rng.uniform(-config.translate_max_frac, config.translate_max_frac) * h;
    const bool flip = config.reflect_prob > 0.0 && rng.bernoulli(config.reflect_prob);
    return warp_affine(chw, scale, degrees, tx, ty, flip);
}

}  // namespace orchard
