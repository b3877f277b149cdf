#pragma once

// Shared test utilities: independent reference implementations (oracles),
// finite-difference gradient checking and synthetic fixture generation.
// Everything here is deliberately written from the mathematical definition,
// not by calling back into the library kernels it checks.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "orchard/image.hpp"
#include "orchard/ops.hpp"
#include "orchard/rng.hpp"
#include "orchard/tensor.hpp"

namespace testutil {

using orchard::Shape;
using orchard::Tensor;

// ---------------------------------------------------------------------------
// scratch directories

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<uint64_t> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("orchard_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// reference kernels (oracles)

// Brute-force cross-correlation straight from the definition: every output
// cell loops over every kernel tap; out-of-bounds taps contribute zero.
inline std::vector<double> reference_conv2d(const std::vector<double>& x, size_t n, size_t c,
                                            size_t h, size_t w, const std::vector<double>& k,
                                            size_t oc, size_t kh, size_t kw,
                                            const std::vector<double>* bias, size_t stride,
                                            size_t pad, size_t& out_h, size_t& out_w) {
    out_h = (h + 2 * pad - kh) / stride + 1;
    out_w = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> y(n * oc * out_h * out_w, 0.0);
    for (size_t bi = 0; bi < n; ++bi) {
        for (size_t o = 0; o < oc; ++o) {
            for (size_t oy = 0; oy < out_h; ++oy) {
                for (size_t ox = 0; ox < out_w; ++ox) {
                    double acc = bias ? (*bias)[o] : 0.0;
                    for (size_t ci = 0; ci < c; ++ci) {
                        for (size_t ky = 0; ky < kh; ++ky) {
                            for (size_t kx = 0; kx < kw; ++kx) {
                                const ptrdiff_t iy = static_cast<ptrdiff_t>(oy * stride + ky) -
                                                     static_cast<ptrdiff_t>(pad);
                                const ptrdiff_t ix = static_cast<ptrdiff_t>(ox * stride + kx) -
                                                     static_cast<ptrdiff_t>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<ptrdiff_t>(h) ||
                                    ix >= static_cast<ptrdiff_t>(w)) {
                                    continue;
                                }
                                acc += x[((bi * c + ci) * h + static_cast<size_t>(iy)) * w +
                                         static_cast<size_t>(ix)] *
                                       k[((o * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    y[((bi * oc + o) * out_h + oy) * out_w + ox] = acc;
                }
            }
        }
    }
    return y;
}

// Three-nested-loop matmul with bias: y[i][j] = b[j] + sum_t x[i][t] w[j][t].
inline std::vector<double> reference_linear(const std::vector<double>& x, size_t n, size_t f,
                                            const std::vector<double>& w, size_t k,
                                            const std::vector<double>& b) {
    std::vector<double> y(n * k, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < k; ++j) {
            double acc = b[j];
            for (size_t t = 0; t < f; ++t) acc += x[i * f + t] * w[j * f + t];
            y[i * k + j] = acc;
        }
    }
    return y;
}

// Scalar per-channel normalization script over [N,C,H,W].
inline std::vector<double> reference_batchnorm_train(const std::vector<double>& x, size_t n,
                                                     size_t c, size_t h, size_t w,
                                                     const std::vector<double>& gamma,
                                                     const std::vector<double>& beta,
                                                     double eps) {
    std::vector<double> y(x.size(), 0.0);
    const size_t plane = h * w;
    for (size_t ci = 0; ci < c; ++ci) {
        double sum = 0.0;
        size_t m = 0;
        for (size_t bi = 0; bi < n; ++bi) {
            for (size_t i = 0; i < plane; ++i) {
                sum += x[(bi * c + ci) * plane + i];
                ++m;
            }
        }
        const double mean = sum / static_cast<double>(m);
        double sq = 0.0;
        for (size_t bi = 0; bi < n; ++bi) {
            for (size_t i = 0; i < plane; ++i) {
                const double d = x[(bi * c + ci) * plane + i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(m);
        for (size_t bi = 0; bi < n; ++bi) {
            for (size_t i = 0; i < plane; ++i) {
                const size_t idx = (bi * c + ci) * plane + i;
                y[idx] = gamma[ci] * (x[idx] - mean) / std::sqrt(var + eps) + beta[ci];
            }
        }
    }
    return y;
}

// Scalar softmax + negative log likelihood, mean over rows.
inline double reference_softmax_cross_entropy(const std::vector<double>& logits, size_t n,
                                              size_t k, const std::vector<int>& labels) {
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double mx = logits[i * k];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, logits[i * k + j]);
        double denom = 0.0;
        for (size_t j = 0; j < k; ++j) denom += std::exp(logits[i * k + j] - mx);
        const double log_p = logits[i * k + static_cast<size_t>(labels[i])] - mx - std::log(denom);
        loss -= log_p;
    }
    return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// random tensors without kinks

inline Tensor<double> random_tensor(Shape shape, orchard::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    std::vector<double> v(orchard::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor<double>(std::move(shape), std::move(v));
}

// Values pairwise separated by at least ~0.1 in magnitude and at least 0.05
// from zero, so max-pool argmaxes and relu signs are stable under the
// finite-difference step.
inline Tensor<double> random_tensor_kink_free(Shape shape, orchard::Rng& rng,
                                              bool mixed_signs = true) {
    const size_t n = orchard::shape_numel(shape);
    std::vector<size_t> rank(n);
    for (size_t i = 0; i < n; ++i) rank[i] = i;
    rng.shuffle(rank);
    std::vector<double> v(n);
    for (size_t i = 0; i < n; ++i) {
        double base = 0.11 * static_cast<double>(rank[i] + 1) + rng.uniform(-0.01, 0.01);
        if (mixed_signs && rng.bernoulli(0.5)) base = -base;
        v[i] = base;
    }
    return Tensor<double>(std::move(shape), std::move(v));
}

// ---------------------------------------------------------------------------
// finite-difference gradient checking

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor 2, element 17"
};

// Central differences with step h against the grads populated by backward().
// `forward` must rebuild the loss from the current tensor contents.
inline GradCheck gradient_check(std::vector<Tensor<double>> inputs,
                                const std::function<Tensor<double>()>& forward,
                                double h = 1e-4) {
    for (auto& t : inputs) t.zero_grad();
    auto loss = forward();
    orchard::backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& t : inputs) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    GradCheck result;
    orchard::NoGradGuard no_grad;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto data = inputs[ti].mutable_values();
        for (size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = forward().item();
            data[i] = saved - h;
            const double down = forward().item();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[ti][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-2});
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst = "tensor " + std::to_string(ti) + ", element " + std::to_string(i);
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// synthetic images and datasets

inline orchard::Image solid_image(size_t w, size_t h, float r, float g, float b) {
    orchard::Image img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(3 * w * h);
    for (size_t i = 0; i < w * h; ++i) {
        img.pixels[0 * w * h + i] = r;
        img.pixels[1 * w * h + i] = g;
        img.pixels[2 * w * h + i] = b;
    }
    return img;
}

// Two solid-color classes, eight slightly jittered images each; linearly
// separable by construction.
inline std::filesystem::path write_two_class_corpus(const std::filesystem::path& root,
                                                    size_t image_size) {
    namespace fs = std::filesystem;
    const struct {
        const char* name;
        float r, g, b;
    } classes[2] = {{"ruby", 0.85f, 0.15f, 0.10f}, {"jade", 0.10f, 0.80f, 0.20f}};
    orchard::Rng rng(7);
    for (const auto& cls : classes) {
        fs::create_directories(root / cls.name);
        for (int i = 0; i < 8; ++i) {
            const float jitter = static_cast<float>(rng.uniform(-0.05, 0.05));
            auto img = solid_image(image_size, image_size, cls.r + jitter, cls.g + jitter,
                                   cls.b + jitter);
            orchard::write_ppm(root / cls.name / ("img_" + std::to_string(i) + ".ppm"), img);
        }
    }
    return root;
}

}  // namespace testutil
