// SPDX-License-Identifier: Apache-2.0
#include "mcevae/stn.hpp"

#include <cmath>
#include <memory>

#include "mcevae/ops.hpp"

namespace mcevae::stn {

double pixel_center(std::size_t index, std::size_t n) {
    return -1.0 + static_cast<double>(2 * index + 1) / static_cast<double>(n);
}

SamplingGrid generate_grid(const lie::GroupElement& m, std::size_t height, std::size_t width) {
    const auto th = lie::to_theta(lie::invert(m));
    SamplingGrid g{height, width, std::vector<double>(2 * height * width)};
    for (std::size_t i = 0; i < height; ++i) {
        const double yt = pixel_center(i, height);
        for (std::size_t j = 0; j < width; ++j) {
            const double xt = pixel_center(j, width);
            g.coords[2 * (i * width + j)] = th[0] * xt + th[1] * yt + th[2];
            g.coords[2 * (i * width + j) + 1] = th[3] * xt + th[4] * yt + th[5];
        }
    }
    return g;
}

namespace {

// Within this distance of a lattice point a coordinate is treated as exactly
// on it, so lattice-preserving warps reproduce pixels bit-for-bit despite
// rounding in cos/sin and the coordinate mapping.
constexpr double kSnap = 1e-10;

struct Cell {
    std::ptrdiff_t x0, y0;
    double fx, fy;
};

// Splits a pixel-unit coordinate into its lower lattice index and fraction.
void locate(double p, std::ptrdiff_t& base, double& frac) {
    double f = std::floor(p);
    double r = p - f;
    if (r < kSnap) {
        r = 0.0;
    } else if (r > 1.0 - kSnap) {
        f += 1.0;
        r = 0.0;
    }
    base = static_cast<std::ptrdiff_t>(f);
    frac = r;
}

Cell cell_for(double x, double y, std::size_t height, std::size_t width) {
    Cell c;
    locate(((x + 1.0) * static_cast<double>(width) - 1.0) / 2.0, c.x0, c.fx);
    locate(((y + 1.0) * static_cast<double>(height) - 1.0) / 2.0, c.y0, c.fy);
    return c;
}

inline bool inside(std::ptrdiff_t v, std::size_t n) { return v >= 0 && v < static_cast<std::ptrdiff_t>(n); }

}  // namespace

void sample_forward(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                    std::span<const double> grid, std::size_t out_h, std::size_t out_w, std::span<double> out) {
    const std::size_t plane = height * width, out_plane = out_h * out_w;
    for (std::size_t q = 0; q < out_plane; ++q) {
        const Cell c = cell_for(grid[2 * q], grid[2 * q + 1], height, width);
        const std::ptrdiff_t xs[2] = {c.x0, c.x0 + 1}, ys[2] = {c.y0, c.y0 + 1};
        const double wx[2] = {1.0 - c.fx, c.fx}, wy[2] = {1.0 - c.fy, c.fy};
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const double* img = image.data() + ch * plane;
            double acc = 0.0;
            for (int a = 0; a < 2; ++a) {
                if (wy[a] == 0.0 || !inside(ys[a], height)) continue;
                for (int b = 0; b < 2; ++b) {
                    if (wx[b] == 0.0 || !inside(xs[b], width)) continue;
                    acc += wy[a] * wx[b] * img[static_cast<std::size_t>(ys[a]) * width + static_cast<std::size_t>(xs[b])];
                }
            }
            out[ch * out_plane + q] = acc;
        }
    }
}

void sample_backward(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                     std::span<const double> grid, std::size_t out_h, std::size_t out_w, std::span<const double> d_out,
                     std::span<double> d_image, std::span<double> d_grid) {
    const std::size_t plane = height * width, out_plane = out_h * out_w;
    const double sx = static_cast<double>(width) / 2.0, sy = static_cast<double>(height) / 2.0;
    for (std::size_t q = 0; q < out_plane; ++q) {
        const Cell c = cell_for(grid[2 * q], grid[2 * q + 1], height, width);
        const std::ptrdiff_t xs[2] = {c.x0, c.x0 + 1}, ys[2] = {c.y0, c.y0 + 1};
        const double wx[2] = {1.0 - c.fx, c.fx}, wy[2] = {1.0 - c.fy, c.fy};
        double gx = 0.0, gy = 0.0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
            const double g = d_out[ch * out_plane + q];
            if (g == 0.0) continue;
            const double* img = image.data() + ch * plane;
            double v[2][2];
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const bool in = inside(ys[a], height) && inside(xs[b], width);
                    const std::size_t k =
                        in ? static_cast<std::size_t>(ys[a]) * width + static_cast<std::size_t>(xs[b]) : 0;
                    v[a][b] = in ? img[k] : 0.0;
                    if (in && !d_image.empty()) d_image[ch * plane + k] += g * wy[a] * wx[b];
                }
            gx += g * (wy[0] * (v[0][1] - v[0][0]) + wy[1] * (v[1][1] - v[1][0]));
            gy += g * (wx[0] * (v[1][0] - v[0][0]) + wx[1] * (v[1][1] - v[0][1]));
        }
        if (!d_grid.empty()) {
            d_grid[2 * q] += gx * sx;
            d_grid[2 * q + 1] += gy * sy;
        }
    }
}

Tensor bilinear_sample(const Tensor& images, const SamplingGrid& grid) {
    if (images.rank() != 4) throw ShapeError("bilinear_sample: expected (B,C,H,W), got " + shape_str(images.shape()));
    if (grid.coords.size() != 2 * grid.height * grid.width) throw ShapeError("bilinear_sample: malformed grid");
    const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
    Tensor out({B, C, grid.height, grid.width});
    for (std::size_t b = 0; b < B; ++b) {
        sample_forward(images.data().subspan(b * C * H * W, C * H * W), C, H, W, grid.coords, grid.height,
                       grid.width, out.data().subspan(b * C * grid.height * grid.width, C * grid.height * grid.width));
    }
    return out;
}

Tensor transform_image(const Tensor& x, std::span<const lie::AlgebraCoefficients> taus, lie::GroupKind kind) {
    if (x.rank() != 4) throw ShapeError("transform_image: expected (B,C,H,W), got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (taus.size() != B) throw ShapeError("transform_image: one coefficient set per batch item required");
    Tensor out(x.shape());
    const std::size_t n = C * H * W;
    for (std::size_t b = 0; b < B; ++b) {
        const SamplingGrid g = generate_grid(lie::exp_map(taus[b], kind), H, W);
        sample_forward(x.data().subspan(b * n, n), C, H, W, g.coords, H, W, out.data().subspan(b * n, n));
    }
    return out;
}

graph::Var exp_theta(const graph::Var& tau, lie::GroupKind kind) {
    const std::size_t d = lie::coefficient_dim(kind);
    if (tau.value().rank() != 2 || tau.shape()[1] != d) {
        throw ShapeError("exp_theta: expected (B," + std::to_string(d) + ") coefficients, got " +
                         shape_str(tau.shape()));
    }
    const std::size_t B = tau.shape()[0];
    const auto& tv = tau.value();
    Tensor out({B, 6});
    auto jac = std::make_shared<std::vector<lie::ExpJacobian>>(B);
    for (std::size_t b = 0; b < B; ++b) {
        lie::AlgebraCoefficients c{tv[b * d], d == 3 ? tv[b * d + 1] : 0.0, d == 3 ? tv[b * d + 2] : 0.0};
        (*jac)[b] = lie::exp_map_jacobian(c);
        for (std::size_t k = 0; k < 6; ++k) out[b * 6 + k] = (*jac)[b].value[k];
    }
    int it = tau.id();
    return tau.tape().record("exp_theta", std::move(out), {it}, [it, jac, d, B](graph::Tape& t, int self) {
        auto sink = t.grad_sink(it);
        auto g = t.out_grad(self);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 6; ++k) acc += g[b * 6 + k] * (*jac)[b].d[c][k];
                sink[b * d + c] += acc;
            }
    });
}

graph::Var affine_grid(const graph::Var& theta, std::size_t height, std::size_t width) {
    if (theta.value().rank() != 2 || theta.shape()[1] != 6) {
        throw ShapeError("affine_grid: expected (B,6) theta, got " + shape_str(theta.shape()));
    }
    const std::size_t B = theta.shape()[0];
    const auto& th = theta.value();
    Tensor out({B, height, width, 2});
    for (std::size_t b = 0; b < B; ++b) {
        const double* p = th.data().data() + b * 6;
        for (std::size_t i = 0; i < height; ++i) {
            const double yt = pixel_center(i, height);
            for (std::size_t j = 0; j < width; ++j) {
                const double xt = pixel_center(j, width);
                const std::size_t q = ((b * height + i) * width + j) * 2;
                out[q] = p[0] * xt + p[1] * yt + p[2];
                out[q + 1] = p[3] * xt + p[4] * yt + p[5];
            }
        }
    }
    int ith = theta.id();
    return theta.tape().record("affine_grid", std::move(out), {ith}, [=](graph::Tape& t, int self) {
        auto sink = t.grad_sink(ith);
        auto g = t.out_grad(self);
        for (std::size_t b = 0; b < B; ++b) {
            double* s = sink.data() + b * 6;
            for (std::size_t i = 0; i < height; ++i) {
                const double yt = pixel_center(i, height);
                for (std::size_t j = 0; j < width; ++j) {
                    const double xt = pixel_center(j, width);
                    const std::size_t q = ((b * height + i) * width + j) * 2;
                    s[0] += g[q] * xt;
                    s[1] += g[q] * yt;
                    s[2] += g[q];
                    s[3] += g[q + 1] * xt;
                    s[4] += g[q + 1] * yt;
                    s[5] += g[q + 1];
                }
            }
        }
    });
}

graph::Var grid_sample(const graph::Var& image, const graph::Var& grid) {
    const auto& X = image.value();
    const auto& G = grid.value();
    if (X.rank() != 4 || G.rank() != 4 || G.dim(3) != 2 || G.dim(0) != X.dim(0)) {
        throw ShapeError("grid_sample: incompatible shapes " + shape_str(X.shape()) + " and " + shape_str(G.shape()) +
                         " (expected image (B,C,H,W) and grid (B,Ho,Wo,2))");
    }
    if (&image.tape() != &grid.tape()) throw Error("grid_sample: operands recorded on different tapes");
    const std::size_t B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3), Ho = G.dim(1), Wo = G.dim(2);
    const std::size_t n_in = C * H * W, n_out = C * Ho * Wo, n_grid = 2 * Ho * Wo;
    Tensor out({B, C, Ho, Wo});
    for (std::size_t b = 0; b < B; ++b) {
        sample_forward(X.data().subspan(b * n_in, n_in), C, H, W, G.data().subspan(b * n_grid, n_grid), Ho, Wo,
                       out.data().subspan(b * n_out, n_out));
    }
    int ii = image.id(), ig = grid.id();
    return image.tape().record("grid_sample", std::move(out), {ii, ig}, [=](graph::Tape& t, int self) {
        auto di = t.grad_sink(ii);
        auto dg = t.grad_sink(ig);
        auto g = t.out_grad(self);
        const auto& X = t.value(ii);
        const auto& G = t.value(ig);
        for (std::size_t b = 0; b < B; ++b) {
            sample_backward(X.data().subspan(b * n_in, n_in), C, H, W, G.data().subspan(b * n_grid, n_grid), Ho, Wo,
                            g.subspan(b * n_out, n_out), di.empty() ? di : di.subspan(b * n_in, n_in),
                            dg.empty() ? dg : dg.subspan(b * n_grid, n_grid));
        }
    });
}

graph::Var transform_image(const graph::Var& x, const graph::Var& tau, lie::GroupKind kind) {
    if (x.value().rank() != 4) throw ShapeError("transform_image: expected (B,C,H,W), got " + shape_str(x.shape()));
    // exp(-tau) = exp(tau)^-1 gives the inverse-warp grid directly.
    auto theta = exp_theta(ops::scale(tau, -1.0), kind);
    auto grid = affine_grid(theta, x.shape()[2], x.shape()[3]);
    return grid_sample(x, grid);
}

}  // namespace mcevae::stn
