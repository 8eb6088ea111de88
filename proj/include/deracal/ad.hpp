#pragma once

// Forward-mode automatic differentiation on two carriers:
//   Grad      value + gradient vector (one sweep yields a full Jacobian row
//             set when seeded with the identity)
//   Series<T> truncated Taylor series with coefficients in T; with T = Grad
//             this transports gradients through the Taylor recursion of an
//             ODE flow, which is how the Lie-derivative stack and its
//             Jacobian are obtained.
// An empty gradient vector stands for "constant" so plain parameters do not
// allocate.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <vector>

#include "deracal/errors.hpp"

namespace deracal::ad {

class Grad {
public:
    double v = 0.0;
    Eigen::VectorXd g; // size 0 == zero gradient

    Grad() = default;
    Grad(double value) : v(value) {} // NOLINT: implicit by design
    Grad(double value, Eigen::VectorXd grad) : v(value), g(std::move(grad)) {}

    static Grad seeded(double value, int dim, int index) {
        Grad s(value, Eigen::VectorXd::Zero(dim));
        s.g(index) = 1.0;
        return s;
    }

    bool constant() const { return g.size() == 0; }
};

namespace detail {
inline Eigen::VectorXd combine(double a, const Eigen::VectorXd& x,
                               double b, const Eigen::VectorXd& y) {
    if (x.size() == 0 && y.size() == 0) return {};
    if (x.size() == 0) return b * y;
    if (y.size() == 0) return a * x;
    return a * x + b * y;
}
inline Eigen::VectorXd scale(double a, const Eigen::VectorXd& x) {
    if (x.size() == 0) return {};
    return a * x;
}
} // namespace detail

inline Grad operator+(const Grad& a, const Grad& b) {
    return {a.v + b.v, detail::combine(1.0, a.g, 1.0, b.g)};
}
inline Grad operator-(const Grad& a, const Grad& b) {
    return {a.v - b.v, detail::combine(1.0, a.g, -1.0, b.g)};
}
inline Grad operator-(const Grad& a) { return {-a.v, detail::scale(-1.0, a.g)}; }
inline Grad operator*(const Grad& a, const Grad& b) {
    return {a.v * b.v, detail::combine(b.v, a.g, a.v, b.g)};
}
inline Grad operator/(const Grad& a, const Grad& b) {
    const double q = a.v / b.v;
    return {q, detail::combine(1.0 / b.v, a.g, -q / b.v, b.g)};
}

inline Grad operator+(const Grad& a, double b) { return {a.v + b, a.g}; }
inline Grad operator+(double a, const Grad& b) { return {a + b.v, b.g}; }
inline Grad operator-(const Grad& a, double b) { return {a.v - b, a.g}; }
inline Grad operator-(double a, const Grad& b) { return {a - b.v, detail::scale(-1.0, b.g)}; }
inline Grad operator*(const Grad& a, double b) { return {a.v * b, detail::scale(b, a.g)}; }
inline Grad operator*(double a, const Grad& b) { return {a * b.v, detail::scale(a, b.g)}; }
inline Grad operator/(const Grad& a, double b) { return {a.v / b, detail::scale(1.0 / b, a.g)}; }
inline Grad operator/(double a, const Grad& b) {
    const double q = a / b.v;
    return {q, detail::scale(-q / b.v, b.g)};
}

inline Grad& operator+=(Grad& a, const Grad& b) { a = a + b; return a; }
inline Grad& operator-=(Grad& a, const Grad& b) { a = a - b; return a; }
inline Grad& operator*=(Grad& a, const Grad& b) { a = a * b; return a; }

inline Grad sqrt(const Grad& a) {
    const double r = std::sqrt(a.v);
    return {r, detail::scale(0.5 / r, a.g)};
}
inline Grad exp(const Grad& a) {
    const double e = std::exp(a.v);
    return {e, detail::scale(e, a.g)};
}
inline Grad log(const Grad& a) { return {std::log(a.v), detail::scale(1.0 / a.v, a.g)}; }
inline Grad log1p(const Grad& a) {
    return {std::log1p(a.v), detail::scale(1.0 / (1.0 + a.v), a.g)};
}
inline Grad pow(const Grad& a, double e) {
    return {std::pow(a.v, e), detail::scale(e * std::pow(a.v, e - 1.0), a.g)};
}
inline Grad tan(const Grad& a) {
    const double t = std::tan(a.v);
    return {t, detail::scale(1.0 + t * t, a.g)};
}
inline Grad atan(const Grad& a) {
    return {std::atan(a.v), detail::scale(1.0 / (1.0 + a.v * a.v), a.g)};
}
inline Grad abs(const Grad& a) {
    return a.v < 0.0 ? -a : a;
}

// --- scalar_value: strip AD payload down to the underlying double ---------

inline double scalar_value(double x) { return x; }
inline double scalar_value(const Grad& x) { return x.v; }

template <class T>
class Series;
template <class T>
double scalar_value(const Series<T>& x);

// --- Series<T>: truncated Taylor arithmetic --------------------------------

template <class T>
class Series {
public:
    std::vector<T> c; // c[i] multiplies t^i

    Series() = default;
    explicit Series(std::size_t n) : c(n, T(0.0)) {}
    Series(std::size_t n, const T& c0) : c(n, T(0.0)) { c[0] = c0; }

    std::size_t order() const { return c.size() - 1; }
    std::size_t size() const { return c.size(); }
};

template <class T>
double scalar_value(const Series<T>& x) {
    return scalar_value(x.c[0]);
}

template <class T>
Series<T> operator+(const Series<T>& a, const Series<T>& b) {
    Series<T> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r.c[i] = a.c[i] + b.c[i];
    return r;
}
template <class T>
Series<T> operator-(const Series<T>& a, const Series<T>& b) {
    Series<T> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r.c[i] = a.c[i] - b.c[i];
    return r;
}
template <class T>
Series<T> operator-(const Series<T>& a) {
    Series<T> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r.c[i] = -a.c[i];
    return r;
}
template <class T>
Series<T> operator*(const Series<T>& a, const Series<T>& b) {
    Series<T> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; i + j < a.size(); ++j) r.c[i + j] += a.c[i] * b.c[j];
    return r;
}
template <class T>
Series<T> operator/(const Series<T>& a, const Series<T>& b) {
    Series<T> r(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        T acc = a.c[k];
        for (std::size_t j = 0; j < k; ++j) acc -= r.c[j] * b.c[k - j];
        r.c[k] = acc / b.c[0];
    }
    return r;
}

template <class T>
Series<T> operator+(const Series<T>& a, double b) {
    Series<T> r = a;
    r.c[0] = r.c[0] + b;
    return r;
}
template <class T>
Series<T> operator+(double a, const Series<T>& b) { return b + a; }
template <class T>
Series<T> operator-(const Series<T>& a, double b) { return a + (-b); }
template <class T>
Series<T> operator-(double a, const Series<T>& b) { return (-b) + a; }
template <class T>
Series<T> operator*(const Series<T>& a, double b) {
    Series<T> r(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) r.c[i] = a.c[i] * b;
    return r;
}
template <class T>
Series<T> operator*(double a, const Series<T>& b) { return b * a; }
template <class T>
Series<T> operator/(const Series<T>& a, double b) { return a * (1.0 / b); }
template <class T>
Series<T> operator/(double a, const Series<T>& b) {
    Series<T> num(b.size(), T(a));
    return num / b;
}
template <class T>
Series<T>& operator+=(Series<T>& a, const Series<T>& b) { a = a + b; return a; }
template <class T>
Series<T>& operator-=(Series<T>& a, const Series<T>& b) { a = a - b; return a; }

// w = u^e via the classical recurrence k*u0*w_k = sum_{j<k} (e(k-j)-j) u_{k-j} w_j.
template <class T>
Series<T> pow(const Series<T>& u, double e) {
    using std::pow;
    Series<T> w(u.size());
    w.c[0] = pow(u.c[0], e);
    for (std::size_t k = 1; k < u.size(); ++k) {
        T acc(0.0);
        for (std::size_t j = 0; j < k; ++j)
            acc += (e * double(k - j) - double(j)) * (u.c[k - j] * w.c[j]);
        w.c[k] = acc / (double(k) * u.c[0]);
    }
    return w;
}

template <class T>
Series<T> sqrt(const Series<T>& u) { return pow(u, 0.5); }

template <class T>
Series<T> exp(const Series<T>& u) {
    using std::exp;
    Series<T> w(u.size());
    w.c[0] = exp(u.c[0]);
    for (std::size_t k = 1; k < u.size(); ++k) {
        T acc(0.0);
        for (std::size_t j = 1; j <= k; ++j) acc += double(j) * (u.c[j] * w.c[k - j]);
        w.c[k] = acc / double(k);
    }
    return w;
}

template <class T>
Series<T> log(const Series<T>& u) {
    using std::log;
    Series<T> w(u.size());
    w.c[0] = log(u.c[0]);
    for (std::size_t k = 1; k < u.size(); ++k) {
        T acc = double(k) * u.c[k];
        for (std::size_t j = 1; j < k; ++j) acc -= double(j) * (w.c[j] * u.c[k - j]);
        w.c[k] = acc / (double(k) * u.c[0]);
    }
    return w;
}

template <class T>
Series<T> log1p(const Series<T>& u) { return log(u + 1.0); }

// tan via t' = u' (1 + t^2); needed so model code stays generic.
template <class T>
Series<T> tan(const Series<T>& u) {
    using std::tan;
    Series<T> t(u.size());
    t.c[0] = tan(u.c[0]);
    for (std::size_t k = 1; k < u.size(); ++k) {
        // w = 1 + t^2 is valid through order k-1 at this point.
        T acc(0.0);
        for (std::size_t j = 1; j <= k; ++j) {
            T wkj(0.0); // coefficient (k-j) of 1 + t^2
            if (k - j == 0) wkj = T(1.0);
            for (std::size_t m = 0; m <= k - j; ++m) wkj += t.c[m] * t.c[k - j - m];
            acc += double(j) * (u.c[j] * wkj);
        }
        t.c[k] = acc / double(k);
    }
    return t;
}

// Constant of the same shape as a prototype value.
inline double constant_like(double, double m) { return m; }
inline Grad constant_like(const Grad&, double m) { return {m}; }
template <class T>
Series<T> constant_like(const Series<T>& proto, double m) {
    return Series<T>(proto.size(), constant_like(proto.c[0], m));
}

// Branch-on-value max/min; strict comparison so the kink point itself takes
// the constant branch (zero derivative), matching the analytic Jacobians.
template <class S>
S vmax(const S& a, double m) {
    return scalar_value(a) > m ? a : constant_like(a, m);
}
template <class S>
S vmin(const S& a, double m) {
    return scalar_value(a) < m ? a : constant_like(a, m);
}

} // namespace deracal::ad
