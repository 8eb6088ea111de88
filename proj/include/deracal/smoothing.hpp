#pragma once

// Smooth saturation (SSF) and deadband (SDBF) operators plus the hard
// piecewise originals. The smooth forms replace every two-sided limiter in
// the model; the hard forms remain as test oracles and for one-sided limits
// (an unbounded side has nothing to smooth).
//
// The derivative floor ("clamp") is applied only on the Grad carrier, i.e.
// only where Jacobians are evaluated. Forward trajectories are untouched.

#include <cmath>
#include <type_traits>

#include "deracal/ad.hpp"
#include "deracal/errors.hpp"

namespace deracal {

inline constexpr double kDerivClampEps = 1e-6;

struct SmoothLimits {
    double lower = -1.0;
    double upper = 1.0;
    int sharpness = 12; // must be even and >= 2

    double mid() const { return 0.5 * (upper + lower); }
    double half_width() const { return 0.5 * (upper - lower); }

    void validate() const {
        if (!(lower < upper))
            throw InvalidArgument("SmoothLimits: lower must be strictly below upper");
        if (sharpness < 2 || sharpness % 2 != 0)
            throw InvalidArgument("SmoothLimits: sharpness must be an even integer >= 2");
        if (!std::isfinite(lower) || !std::isfinite(upper))
            throw InvalidArgument("SmoothLimits: non-finite bound");
    }
};

namespace smooth {

// s(z) = z (1 + z^k)^(-1/k), the unit saturation shape; |s| < 1 for finite z.
// Rewritten through z^-k for |z| > 1 so huge inputs neither overflow nor
// collapse the strict bound.
inline double unit_sat(double z, int k) {
    const double az = std::abs(z);
    if (az <= 1.0) {
        const double zk = std::pow(az, k);
        return z * std::exp(-std::log1p(zk) / k);
    }
    const double w = std::pow(1.0 / az, k);
    const double m = std::exp(-std::log1p(w) / k);
    return z > 0.0 ? m : -m;
}

// s'(z) = (1 + z^k)^(-1-1/k), in (0, 1].
inline double unit_sat_deriv(double z, int k) {
    const double az = std::abs(z);
    const double e = 1.0 + 1.0 / k;
    if (az <= 1.0) return std::exp(-e * std::log1p(std::pow(az, k)));
    const double w = std::pow(1.0 / az, k);
    return std::pow(1.0 / az, k + 1) * std::exp(-e * std::log1p(w));
}

template <class S>
S pow_int(const S& x, int k) {
    S acc = constant_like(x, 1.0);
    S base = x;
    for (int e = k; e > 0; e >>= 1) {
        if (e & 1) acc = acc * base;
        if (e > 1) base = base * base;
    }
    return acc;
}

// Generic unit saturation for AD carriers (exact composition, no clamp).
template <class S>
S unit_sat_ad(const S& z, int k) {
    using ad::scalar_value;
    using std::pow;
    const double zv = scalar_value(z);
    if (std::abs(zv) <= 1.0) {
        S zk = pow_int(z, k);
        return z * pow(zk + 1.0, -1.0 / k);
    }
    S w = pow_int(1.0 / z, k);
    S m = pow(w + 1.0, -1.0 / k);
    return zv > 0.0 ? m : -m;
}

// SSF over any carrier. dfloor is the Jacobian derivative clamp; it only
// participates in the Grad instantiation.
template <class S>
S sat(const S& x, const S& lo, const S& hi, int k, double dfloor = 0.0) {
    if constexpr (std::is_same_v<S, double>) {
        (void)dfloor;
        const double lam = 0.5 * (hi + lo);
        const double mu = 0.5 * (hi - lo);
        return lam + mu * unit_sat((x - lam) / mu, k);
    } else if constexpr (std::is_same_v<S, ad::Grad>) {
        const double lam = 0.5 * (hi.v + lo.v);
        const double mu = 0.5 * (hi.v - lo.v);
        const double z = (x.v - lam) / mu;
        const double s = unit_sat(z, k);
        const double sp = unit_sat_deriv(z, k);
        ad::Grad r(lam + mu * s);
        const double dx = std::max(dfloor, sp);
        const double dh = 0.5 * (1.0 + s - sp * (1.0 + z));
        const double dl = 0.5 * (1.0 - s - sp * (1.0 - z));
        r.g = ad::detail::combine(dx, x.g, dh, hi.g);
        r.g = ad::detail::combine(1.0, r.g, dl, lo.g);
        return r;
    } else {
        (void)dfloor;
        S lam = (hi + lo) * 0.5;
        S mu = (hi - lo) * 0.5;
        return lam + mu * unit_sat_ad((x - lam) / mu, k);
    }
}

// SDBF over any carrier; clamped against its own vanishing derivative
// 1 - s'(z), which dies inside the band.
template <class S>
S deadband(const S& x, const S& lo, const S& hi, int k, double dfloor = 0.0) {
    if constexpr (std::is_same_v<S, ad::Grad>) {
        const double lam = 0.5 * (hi.v + lo.v);
        const double mu = 0.5 * (hi.v - lo.v);
        const double z = (x.v - lam) / mu;
        const double s = unit_sat(z, k);
        const double sp = unit_sat_deriv(z, k);
        ad::Grad r(x.v - (lam + mu * s));
        const double dx = std::max(dfloor, 1.0 - sp);
        const double dh = -0.5 * (1.0 + s - sp * (1.0 + z));
        const double dl = -0.5 * (1.0 - s - sp * (1.0 - z));
        r.g = ad::detail::combine(dx, x.g, dh, hi.g);
        r.g = ad::detail::combine(1.0, r.g, dl, lo.g);
        return r;
    } else {
        return x - sat(x, lo, hi, k, dfloor);
    }
}

} // namespace smooth

// --- public scalar interface ------------------------------------------------

inline double ssf(double x, const SmoothLimits& lim) {
    lim.validate();
    if (!std::isfinite(x)) throw InvalidArgument("ssf: non-finite input");
    return smooth::sat(x, lim.lower, lim.upper, lim.sharpness);
}

inline double sdbf(double x, const SmoothLimits& lim) {
    lim.validate();
    if (!std::isfinite(x)) throw InvalidArgument("sdbf: non-finite input");
    return x - smooth::sat(x, lim.lower, lim.upper, lim.sharpness);
}

inline double ssf_derivative(double x, const SmoothLimits& lim) {
    lim.validate();
    if (!std::isfinite(x)) throw InvalidArgument("ssf_derivative: non-finite input");
    const double z = (x - lim.mid()) / lim.half_width();
    return smooth::unit_sat_deriv(z, lim.sharpness);
}

inline double ssf_derivative_clamped(double x, const SmoothLimits& lim,
                                     double eps = kDerivClampEps) {
    if (!(eps > 0.0)) throw InvalidArgument("ssf_derivative_clamped: eps must be positive");
    return std::max(eps, ssf_derivative(x, lim));
}

inline double sdbf_derivative_clamped(double x, const SmoothLimits& lim,
                                      double eps = kDerivClampEps) {
    if (!(eps > 0.0)) throw InvalidArgument("sdbf_derivative_clamped: eps must be positive");
    return std::max(eps, 1.0 - ssf_derivative(x, lim));
}

// Hard operators: exact piecewise forms, used as oracles and for one-sided
// limits such as the 0.01 voltage floor.
inline double hard_sat(double x, double lo, double hi) {
    if (x >= hi) return hi;
    if (x <= lo) return lo;
    return x;
}

inline double hard_db(double x, double d1, double d2) {
    if (x > d2) return x - d2;
    if (x < d1) return x - d1;
    return 0.0;
}

} // namespace deracal
