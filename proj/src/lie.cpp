// SPDX-License-Identifier: Apache-2.0
#include "mcevae/lie.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace mcevae::lie {

std::size_t coefficient_dim(GroupKind kind) { return kind == GroupKind::SO2 ? 1 : 3; }

std::string to_string(GroupKind kind) { return kind == GroupKind::SO2 ? "so2" : "se2"; }

GroupKind parse_group_kind(const std::string& s) {
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "so2") return GroupKind::SO2;
    if (lower == "se2") return GroupKind::SE2;
    throw Error("unknown group kind '" + s + "' (expected so2 or se2)");
}

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            r[i * 3 + j] = s;
        }
    return r;
}

Mat3 identity_mat() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

const std::array<Mat3, 3>& generators() {
    static const std::array<Mat3, 3> g{{
        {0, -1, 0, 1, 0, 0, 0, 0, 0},
        {0, 0, 1, 0, 0, 0, 0, 0, 0},
        {0, 0, 0, 0, 0, 1, 0, 0, 0},
    }};
    return g;
}

Mat3 algebra_element(const AlgebraCoefficients& tau, GroupKind kind) {
    const auto& g = generators();
    const double c[3] = {tau.omega, kind == GroupKind::SE2 ? tau.u : 0.0, kind == GroupKind::SE2 ? tau.v : 0.0};
    Mat3 m{};
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < 9; ++i) m[i] += c[k] * g[k][i];
    return m;
}

GroupElement::GroupElement(const Mat3& m, double tol) : m_(m) {
    if (!is_valid(m, tol)) throw Error("group element: matrix is not a member of SE(2)");
}

bool GroupElement::is_valid(const Mat3& m, double tol) {
    if (!std::all_of(m.begin(), m.end(), [](double v) { return std::isfinite(v); })) return false;
    if (m[6] != 0.0 || m[7] != 0.0 || m[8] != 1.0) return false;
    const double a = m[0], b = m[1], c = m[3], d = m[4];
    // R^T R = I and det R = 1
    return std::abs(a * a + c * c - 1.0) <= tol && std::abs(b * b + d * d - 1.0) <= tol &&
           std::abs(a * b + c * d) <= tol && std::abs(a * d - b * c - 1.0) <= tol;
}

void TransformSupport::validate() const {
    if (!(omega_max > 0.0 && omega_max <= std::numbers::pi)) throw Error("transform support: omega_max must be in (0, pi]");
    if (!(t_max >= 0.0 && t_max < 1.0)) throw Error("transform support: t_max must be in [0, 1)");
}

namespace {

// V(omega) = [[a, -b], [b, a]] with a = sin(w)/w, b = (1 - cos(w))/w, and
// their derivatives.
struct VCoeffs {
    double a, b, da, db;
};

VCoeffs v_coeffs(double w) {
    if (std::abs(w) <= kSmallAngle) {
        const double w2 = w * w;
        return {1.0 - w2 / 6.0 + w2 * w2 / 120.0, w / 2.0 - w * w2 / 24.0, -w / 3.0 + w * w2 / 30.0,
                0.5 - w2 / 8.0};
    }
    const double s = std::sin(w), c = std::cos(w);
    const double half = std::sin(w / 2.0);
    const double one_minus_c = 2.0 * half * half;  // 1 - cos(w) without cancellation
    return {s / w, one_minus_c / w, (w * c - s) / (w * w), (w * s - one_minus_c) / (w * w)};
}

void require_finite(const AlgebraCoefficients& tau) {
    if (!std::isfinite(tau.omega) || !std::isfinite(tau.u) || !std::isfinite(tau.v)) {
        throw Error("exp_map: non-finite algebra coefficients");
    }
}

}  // namespace

ExpJacobian exp_map_jacobian(const AlgebraCoefficients& tau) {
    require_finite(tau);
    const double w = tau.omega, u = tau.u, v = tau.v;
    const double s = std::sin(w), c = std::cos(w);
    const VCoeffs k = v_coeffs(w);
    ExpJacobian j;
    j.value = {c, -s, k.a * u - k.b * v, s, c, k.b * u + k.a * v, 0, 0, 1};
    j.d[0] = {-s, -c, k.da * u - k.db * v, c, -s, k.db * u + k.da * v, 0, 0, 0};
    j.d[1] = {0, 0, k.a, 0, 0, k.b, 0, 0, 0};
    j.d[2] = {0, 0, -k.b, 0, 0, k.a, 0, 0, 0};
    return j;
}

GroupElement exp_map(const AlgebraCoefficients& tau, GroupKind kind) {
    AlgebraCoefficients t = tau;
    if (kind == GroupKind::SO2) t.u = t.v = 0.0;
    return GroupElement(exp_map_jacobian(t).value);
}

AlgebraCoefficients log_map(const GroupElement& m, GroupKind kind) {
    const double w = std::atan2(m(1, 0), m(0, 0));
    if (std::abs(std::abs(w) - std::numbers::pi) <= 1e-9) {
        throw Error("log_map: rotation angle at +-pi is on the branch cut");
    }
    const double tx = m(0, 2), ty = m(1, 2);
    if (kind == GroupKind::SO2) {
        if (std::abs(tx) > 1e-9 || std::abs(ty) > 1e-9) throw Error("log_map: element has a translation, not in SO(2)");
        return {w, 0.0, 0.0};
    }
    const VCoeffs k = v_coeffs(w);
    const double det = k.a * k.a + k.b * k.b;
    return {w, (k.a * tx + k.b * ty) / det, (-k.b * tx + k.a * ty) / det};
}

std::array<double, 6> to_theta(const GroupElement& m) {
    const auto& a = m.matrix();
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
}

GroupElement compose(const GroupElement& a, const GroupElement& b) {
    Mat3 r = mat_mul(a.matrix(), b.matrix());
    r[6] = r[7] = 0.0;
    r[8] = 1.0;
    return GroupElement(r);
}

GroupElement invert(const GroupElement& m) {
    // [R t]^-1 = [R^T, -R^T t]
    const auto& a = m.matrix();
    const double tx = a[2], ty = a[5];
    return GroupElement(Mat3{a[0], a[3], -(a[0] * tx + a[3] * ty), a[1], a[4], -(a[1] * tx + a[4] * ty), 0, 0, 1});
}

AlgebraCoefficients sample_transform(const TransformSupport& support, GroupKind kind, std::mt19937_64& rng) {
    support.validate();
    std::uniform_real_distribution<double> rot(-support.omega_max, support.omega_max);
    AlgebraCoefficients tau;
    tau.omega = rot(rng);
    if (kind == GroupKind::SE2 && support.t_max > 0.0) {
        std::uniform_real_distribution<double> shift(-support.t_max, support.t_max);
        tau.u = shift(rng);
        tau.v = shift(rng);
    }
    return tau;
}

}  // namespace mcevae::lie
