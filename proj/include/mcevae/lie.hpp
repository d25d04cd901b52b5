// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <numbers>
#include <random>
#include <string>

#include "mcevae/tensor.hpp"

// The se(2)/so(2) Lie algebras and their groups, represented as 3x3
// homogeneous matrices acting on normalized image coordinates in [-1, 1].
namespace mcevae::lie {

enum class GroupKind { SO2, SE2 };

/// Number of algebra coefficients: 1 for SO(2), 3 for SE(2).
std::size_t coefficient_dim(GroupKind kind);
std::string to_string(GroupKind kind);
/// Parses "so2" / "se2" (case-insensitive).
GroupKind parse_group_kind(const std::string& s);

/// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 identity_mat();

/// Coefficients on the generator basis: rotation angle (radians) and
/// translation in half-image-width units.
struct AlgebraCoefficients {
    double omega = 0.0;
    double u = 0.0;
    double v = 0.0;

    bool operator==(const AlgebraCoefficients&) const = default;
};

/// G1 (rotation), G2 (x-translation), G3 (y-translation).
const std::array<Mat3, 3>& generators();

/// m = omega G1 + u G2 + v G3 (u, v ignored for SO(2)).
Mat3 algebra_element(const AlgebraCoefficients& tau, GroupKind kind);

/// A member of SE(2): bottom row (0,0,1) and a proper rotation block.
class GroupElement {
public:
    GroupElement() : m_(identity_mat()) {}
    /// Throws Error when the invariants fail by more than `tol`.
    explicit GroupElement(const Mat3& m, double tol = 1e-9);

    static GroupElement identity() { return GroupElement(); }

    const Mat3& matrix() const noexcept { return m_; }
    double operator()(std::size_t r, std::size_t c) const { return m_[r * 3 + c]; }

    /// Rotation block orthonormal with unit determinant, bottom row exact.
    static bool is_valid(const Mat3& m, double tol = 1e-9);

private:
    Mat3 m_;
};

/// Bounds of the uniform transformation distribution.
struct TransformSupport {
    double omega_max = std::numbers::pi / 2.0;
    double t_max = 0.5;

    void validate() const;
};

/// Taylor branch of V(omega) is used for |omega| <= this threshold.
inline constexpr double kSmallAngle = 1e-6;

/// Closed-form matrix exponential of algebra_element(tau, kind).
GroupElement exp_map(const AlgebraCoefficients& tau, GroupKind kind);

/// exp_map together with d exp / d(omega, u, v), each a 3x3 matrix.
struct ExpJacobian {
    Mat3 value;
    std::array<Mat3, 3> d;
};
ExpJacobian exp_map_jacobian(const AlgebraCoefficients& tau);

/// Inverse of exp_map on the branch omega in (-pi, pi).
AlgebraCoefficients log_map(const GroupElement& m, GroupKind kind);

/// Top two rows, flattened: (M11, M12, M13, M21, M22, M23).
std::array<double, 6> to_theta(const GroupElement& m);

GroupElement compose(const GroupElement& a, const GroupElement& b);
GroupElement invert(const GroupElement& m);

/// omega ~ U(-omega_max, omega_max); u, v ~ U(-t_max, t_max), zero for SO(2).
AlgebraCoefficients sample_transform(const TransformSupport& support, GroupKind kind, std::mt19937_64& rng);

}  // namespace mcevae::lie
