// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "mcevae/graph.hpp"
#include "mcevae/lie.hpp"

// Differentiable spatial transformer: grid generation from a group element
// and bilinear sampling.
//
// Conventions:
//  * Pixel j of an axis with n pixels sits at normalized coordinate
//    -1 + (2j + 1) / n; x runs along columns, y along rows.
//  * Inverse warp: output pixel p_t reads the input at M^-1 p_t, so sampling
//    with M moves image content by M.
//  * Bilinear kernel k(d) = max(0, 1 - |d|) in pixel units; samples outside
//    the image read zero.
namespace mcevae::stn {

double pixel_center(std::size_t index, std::size_t n);

/// Source coordinates (x, y) for every output pixel, row-major.
struct SamplingGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> coords;  // 2 * height * width, interleaved (x, y)

    double x(std::size_t i, std::size_t j) const { return coords[2 * (i * width + j)]; }
    double y(std::size_t i, std::size_t j) const { return coords[2 * (i * width + j) + 1]; }
};

/// Grid whose output pixel (i, j) samples M^-1 applied to its own center.
SamplingGrid generate_grid(const lie::GroupElement& m, std::size_t height, std::size_t width);

/// Raw kernels over one image of C channels. `grid` holds 2*Ho*Wo
/// interleaved source coordinates; `out` receives C*Ho*Wo values.
void sample_forward(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                    std::span<const double> grid, std::size_t out_h, std::size_t out_w, std::span<double> out);
/// Accumulates into d_image / d_grid; either may be empty to skip it.
void sample_backward(std::span<const double> image, std::size_t channels, std::size_t height, std::size_t width,
                     std::span<const double> grid, std::size_t out_h, std::size_t out_w, std::span<const double> d_out,
                     std::span<double> d_image, std::span<double> d_grid);

/// images (B,C,H,W), one grid shared by every batch item -> (B,C,Ho,Wo).
Tensor bilinear_sample(const Tensor& images, const SamplingGrid& grid);

/// Applies exp(tau_b) to image b of x (B,C,H,W). No tape involved.
Tensor transform_image(const Tensor& x, std::span<const lie::AlgebraCoefficients> taus, lie::GroupKind kind);

// Tape operations.

/// tau (B, d) with d = coefficient_dim(kind) -> theta (B,6) of exp(tau).
graph::Var exp_theta(const graph::Var& tau, lie::GroupKind kind);
/// theta (B,6) -> grid (B,H,W,2) of theta applied to the pixel-center lattice.
graph::Var affine_grid(const graph::Var& theta, std::size_t height, std::size_t width);
/// image (B,C,H,W), grid (B,Ho,Wo,2) -> (B,C,Ho,Wo); differentiable in both.
graph::Var grid_sample(const graph::Var& image, const graph::Var& grid);
/// grid_sample(x, affine_grid(exp_theta(-tau))): warps each image by exp(tau).
graph::Var transform_image(const graph::Var& x, const graph::Var& tau, lie::GroupKind kind);

}  // namespace mcevae::stn
