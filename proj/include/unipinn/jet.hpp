#pragma once
// Truncated multivariate Taylor values ("jets") over the directions (x, y, t),
// total order <= 3.  A jet stores the Taylor *coefficients* c_{abc} =
// d^{a+b+c} f / (dx^a dy^b dt^c) / (a! b! c!) at the expansion point, graded by
// total degree.  Arithmetic follows the truncated-series rules; see Griewank &
// Walther, "Evaluating Derivatives", ch. 13 for the univariate composition
// scheme used by tanh/exp/sin/cos/reciprocal.
//
// Steady-mode computations run with two active directions (x, y); unsteady
// adds t.  Degrees below 3 are supported so cheap evaluations (boundary and
// observation points) can carry only the orders they need.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unipinn/errors.hpp"

namespace unipinn {

enum class Var : int { x = 0, y = 1, t = 2, none = -1 };

struct JetShape {
    std::int8_t vars;   // 2 (x, y) or 3 (x, y, t)
    std::int8_t degree; // 0..3

    int size() const {
        static constexpr int sizes[2][4] = {{1, 3, 6, 10}, {1, 4, 10, 20}};
        return sizes[vars - 2][degree];
    }
    bool operator==(const JetShape& o) const { return vars == o.vars && degree == o.degree; }
    bool operator!=(const JetShape& o) const { return !(*this == o); }
};

inline constexpr JetShape kSteadyShape{2, 3};
inline constexpr JetShape kUnsteadyShape{3, 3};

namespace detail {

struct MulPair {
    std::uint8_t out, a, b;
};

struct JetTables {
    int vars = 0;
    int degree = 0;
    int size = 0;
    std::array<std::array<int, 3>, 20> exps{};  // exponent triple per index
    std::array<double, 20> fact{};              // a! b! c! per index
    std::vector<MulPair> pairs;                 // truncated product support

    int index_of(int a, int b, int c) const {
        for (int i = 0; i < size; ++i)
            if (exps[i][0] == a && exps[i][1] == b && exps[i][2] == c) return i;
        return -1;
    }
};

inline JetTables make_tables(int vars, int degree) {
    JetTables t;
    t.vars = vars;
    t.degree = degree;
    int n = 0;
    for (int d = 0; d <= degree; ++d) {
        // within a degree: lexicographic, highest x power first
        for (int a = d; a >= 0; --a) {
            for (int b = d - a; b >= 0; --b) {
                int c = d - a - b;
                if (vars == 2 && c > 0) continue;
                t.exps[n] = {a, b, c};
                double f = 1.0;
                for (int e : {a, b, c})
                    for (int k = 2; k <= e; ++k) f *= k;
                t.fact[n] = f;
                ++n;
            }
        }
    }
    t.size = n;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            int a = t.exps[i][0] + t.exps[j][0];
            int b = t.exps[i][1] + t.exps[j][1];
            int c = t.exps[i][2] + t.exps[j][2];
            if (a + b + c > degree) continue;
            int out = t.index_of(a, b, c);
            t.pairs.push_back({static_cast<std::uint8_t>(out), static_cast<std::uint8_t>(i),
                               static_cast<std::uint8_t>(j)});
        }
    }
    return t;
}

inline const JetTables& tables(JetShape s) {
    static const std::array<JetTables, 8> all = [] {
        std::array<JetTables, 8> a;
        for (int v = 2; v <= 3; ++v)
            for (int d = 0; d <= 3; ++d) a[(v - 2) * 4 + d] = make_tables(v, d);
        return a;
    }();
    return all[(s.vars - 2) * 4 + s.degree];
}

// ---- compile-time shape constants (hot kernels fully unroll) ----

constexpr int shape_size_c(int vars, int degree) {
    constexpr int sizes[2][4] = {{1, 3, 6, 10}, {1, 4, 10, 20}};
    return sizes[vars - 2][degree];
}

template <int VARS, int DEG>
struct ShapeConst {
    static constexpr int vars_v = VARS;
    static constexpr int deg_v = DEG;
    static constexpr int K = shape_size_c(VARS, DEG);

    static consteval std::array<std::array<int, 3>, K> make_exps() {
        std::array<std::array<int, 3>, K> e{};
        int n = 0;
        for (int d = 0; d <= DEG; ++d)
            for (int a = d; a >= 0; --a)
                for (int b = d - a; b >= 0; --b) {
                    int c = d - a - b;
                    if (VARS == 2 && c > 0) continue;
                    e[n++] = {a, b, c};
                }
        return e;
    }

    static constexpr std::array<std::array<int, 3>, K> exps = make_exps();

    static consteval int index_of_c(int a, int b, int c) {
        for (int i = 0; i < K; ++i)
            if (exps[i][0] == a && exps[i][1] == b && exps[i][2] == c) return i;
        return -1;
    }

    static consteval int count_pairs() {
        int n = 0;
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                int s = exps[i][0] + exps[j][0] + exps[i][1] + exps[j][1] + exps[i][2] + exps[j][2];
                if (s <= DEG) ++n;
            }
        return n;
    }

    static constexpr int NP = count_pairs();

    static consteval std::array<MulPair, NP> make_pairs() {
        std::array<MulPair, NP> p{};
        int n = 0;
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                int a = exps[i][0] + exps[j][0];
                int b = exps[i][1] + exps[j][1];
                int c = exps[i][2] + exps[j][2];
                if (a + b + c > DEG) continue;
                p[n++] = {static_cast<std::uint8_t>(index_of_c(a, b, c)),
                          static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(j)};
            }
        return p;
    }

    static constexpr std::array<MulPair, NP> pairs = make_pairs();
};

// Pairs regrouped so each destination coefficient accumulates one expression
// tree (no store-to-load chains on the destination).  `group` selects which
// field of MulPair is the destination: 0 -> out (multiply), 1 -> a (adjoint of
// the left operand), 2 -> b (adjoint of the right operand).
template <int VARS, int DEG, int GROUP>
struct GroupedPairs {
    static constexpr int K = ShapeConst<VARS, DEG>::K;
    static constexpr int NP = ShapeConst<VARS, DEG>::NP;

    struct Entry {
        std::uint8_t x, y;
    };

    static consteval int dest_of(const MulPair& p) {
        return GROUP == 0 ? p.out : (GROUP == 1 ? p.a : p.b);
    }

    static consteval std::array<int, K + 1> make_offsets() {
        std::array<int, K + 1> off{};
        for (const MulPair& p : ShapeConst<VARS, DEG>::pairs) off[dest_of(p) + 1]++;
        for (int i = 0; i < K; ++i) off[i + 1] += off[i];
        return off;
    }

    static constexpr std::array<int, K + 1> offsets = make_offsets();

    static consteval std::array<Entry, NP> make_entries() {
        std::array<Entry, NP> e{};
        std::array<int, K> cursor{};
        for (int i = 0; i < K; ++i) cursor[i] = offsets[i];
        for (const MulPair& p : ShapeConst<VARS, DEG>::pairs) {
            int d = dest_of(p);
            Entry en{};
            if constexpr (GROUP == 0) en = {p.a, p.b};
            if constexpr (GROUP == 1) en = {p.b, p.out};
            if constexpr (GROUP == 2) en = {p.a, p.out};
            e[cursor[d]++] = en;
        }
        return e;
    }

    static constexpr std::array<Entry, NP> entries = make_entries();

    template <int DEST>
    static double term(const double* __restrict u, const double* __restrict v) {
        return [&]<std::size_t... P>(std::index_sequence<P...>) {
            return ((u[entries[offsets[DEST] + P].x] * v[entries[offsets[DEST] + P].y]) + ... +
                    0.0);
        }(std::make_index_sequence<offsets[DEST + 1] - offsets[DEST]>{});
    }

    static void accumulate(double* __restrict dst, const double* __restrict u,
                           const double* __restrict v) {
        [&]<std::size_t... D>(std::index_sequence<D...>) {
            ((dst[D] += term<D>(u, v)), ...);
        }(std::make_index_sequence<K>{});
    }
};

template <int VARS, int DEG>
inline void t_mul_acc(double* __restrict o, const double* __restrict a,
                      const double* __restrict b) {
    GroupedPairs<VARS, DEG, 0>::accumulate(o, a, b);
}

template <int VARS, int DEG>
inline void t_corr_left(double* __restrict ahat, const double* __restrict b,
                        const double* __restrict chat) {
    GroupedPairs<VARS, DEG, 1>::accumulate(ahat, b, chat);
}

template <int VARS, int DEG>
inline void t_corr_right(double* __restrict bhat, const double* __restrict a,
                         const double* __restrict chat) {
    GroupedPairs<VARS, DEG, 2>::accumulate(bhat, a, chat);
}

template <int VARS, int DEG>
inline void t_compose(double* __restrict out, const double* __restrict a, const double g[4]) {
    constexpr int K = ShapeConst<VARS, DEG>::K;
    double w[K], w2[K], w3[K];
    for (int i = 0; i < K; ++i) w[i] = a[i];
    w[0] = 0.0;
    for (int i = 0; i < K; ++i) out[i] = 0.0;
    out[0] = g[0];
    if constexpr (DEG >= 1)
        for (int i = 0; i < K; ++i) out[i] += g[1] * w[i];
    if constexpr (DEG >= 2) {
        for (int i = 0; i < K; ++i) w2[i] = 0.0;
        t_mul_acc<VARS, DEG>(w2, w, w);
        for (int i = 0; i < K; ++i) out[i] += (g[2] / 2.0) * w2[i];
    }
    if constexpr (DEG >= 3) {
        for (int i = 0; i < K; ++i) w3[i] = 0.0;
        t_mul_acc<VARS, DEG>(w3, w2, w);
        for (int i = 0; i < K; ++i) out[i] += (g[3] / 6.0) * w3[i];
    }
    (void)w3;
}

// Monomorphizing dispatch over the eight supported shapes.
template <typename F>
inline decltype(auto) dispatch_shape(JetShape s, F&& f) {
    switch ((s.vars - 2) * 4 + s.degree) {
        case 0: return f(ShapeConst<2, 0>{});
        case 1: return f(ShapeConst<2, 1>{});
        case 2: return f(ShapeConst<2, 2>{});
        case 3: return f(ShapeConst<2, 3>{});
        case 4: return f(ShapeConst<3, 0>{});
        case 5: return f(ShapeConst<3, 1>{});
        case 6: return f(ShapeConst<3, 2>{});
        default: return f(ShapeConst<3, 3>{});
    }
}

// ---- raw-buffer kernels (shared with the gradient tape) ----

inline void k_zero(int k, double* o) {
    for (int i = 0; i < k; ++i) o[i] = 0.0;
}

inline void k_add(int k, double* o, const double* a, const double* b) {
    for (int i = 0; i < k; ++i) o[i] = a[i] + b[i];
}

inline void k_sub(int k, double* o, const double* a, const double* b) {
    for (int i = 0; i < k; ++i) o[i] = a[i] - b[i];
}

inline void k_axpy(int k, double* o, double s, const double* a) {
    for (int i = 0; i < k; ++i) o[i] += s * a[i];
}

inline void k_scale(int k, double* o, double s, const double* a) {
    for (int i = 0; i < k; ++i) o[i] = s * a[i];
}

// o += a * b (truncated product); o must not alias a or b.
inline void k_mul_acc(const JetTables& t, double* o, const double* a, const double* b) {
    for (const MulPair& p : t.pairs) o[p.out] += a[p.a] * b[p.b];
}

// Adjoint of the truncated product w.r.t. its left operand:
// ahat += (d/da)(a*b)^T chat.
inline void k_corr_left(const JetTables& t, double* ahat, const double* b, const double* chat) {
    for (const MulPair& p : t.pairs) ahat[p.a] += b[p.b] * chat[p.out];
}

inline void k_corr_right(const JetTables& t, double* bhat, const double* a, const double* chat) {
    for (const MulPair& p : t.pairs) bhat[p.b] += a[p.a] * chat[p.out];
}

// out = sum_m g[m]/m! * (a - a0)^m, truncated at the table degree.
inline void k_compose(const JetTables& t, double* out, const double* a, const double g[4]) {
    const int K = t.size;
    double w[20], w2[20], w3[20];
    for (int i = 0; i < K; ++i) w[i] = a[i];
    w[0] = 0.0;
    k_zero(K, out);
    out[0] = g[0];
    if (t.degree >= 1) k_axpy(K, out, g[1], w);
    if (t.degree >= 2) {
        k_zero(K, w2);
        k_mul_acc(t, w2, w, w);
        k_axpy(K, out, g[2] / 2.0, w2);
        if (t.degree >= 3) {
            k_zero(K, w3);
            k_mul_acc(t, w3, w2, w);
            k_axpy(K, out, g[3] / 6.0, w3);
        }
    }
}

// Derivative tables for the supported univariate functions.  g must have room
// for `n` entries; n = 4 suffices for forward evaluation, n = 5 for the
// reverse sweep (which composes the first derivative at the same truncation).
inline void tanh_derivs(double x, double* g, int n) {
    double f = std::tanh(x), s = 1.0 - f * f;
    g[0] = f;
    g[1] = s;
    if (n > 2) g[2] = -2.0 * f * s;
    if (n > 3) g[3] = s * (6.0 * f * f - 2.0);
    if (n > 4) g[4] = s * (16.0 * f - 24.0 * f * f * f);
}

inline void exp_derivs(double x, double* g, int n) {
    double e = std::exp(x);
    for (int i = 0; i < n; ++i) g[i] = e;
}

inline void recip_derivs(double x, double* g, int n) {
    double r = 1.0 / x;
    double v = r;
    g[0] = v;
    double sign = -1.0;
    double factorial = 1.0;
    for (int i = 1; i < n; ++i) {
        v *= r;
        factorial *= i;
        g[i] = sign * factorial * v;
        sign = -sign;
    }
}

inline void sin_derivs(double x, double* g, int n) {
    double s = std::sin(x), c = std::cos(x);
    const double cyc[4] = {s, c, -s, -c};
    for (int i = 0; i < n; ++i) g[i] = cyc[i % 4];
}

inline void cos_derivs(double x, double* g, int n) {
    double s = std::sin(x), c = std::cos(x);
    const double cyc[4] = {c, -s, -c, s};
    for (int i = 0; i < n; ++i) g[i] = cyc[i % 4];
}

} // namespace detail

class Jet {
public:
    Jet() : shape_(kSteadyShape) { c_.fill(0.0); }
    explicit Jet(JetShape s) : shape_(s) { c_.fill(0.0); }

    static Jet constant(double v, JetShape s = kSteadyShape) {
        Jet j(s);
        j.c_[0] = v;
        return j;
    }

    // Seed a coordinate: value at order 0, unit first-order coefficient in the
    // given direction.  Seeding t in a two-variable (steady) shape is a
    // configuration error.
    static Jet seeded(double v, Var d, JetShape s = kSteadyShape) {
        Jet j(s);
        j.c_[0] = v;
        if (d == Var::none) return j;
        if (d == Var::t && s.vars < 3)
            throw config_error("cannot seed the t direction in steady mode");
        if (s.degree < 1)
            throw config_error("cannot seed a direction in a degree-0 jet");
        int e[3] = {0, 0, 0};
        e[static_cast<int>(d)] = 1;
        j.c_[detail::tables(s).index_of(e[0], e[1], e[2])] = 1.0;
        return j;
    }

    JetShape shape() const { return shape_; }
    int size() const { return shape_.size(); }
    double value() const { return c_[0]; }
    double coeff(int i) const { return c_[i]; }
    double& coeff(int i) { return c_[i]; }
    const double* data() const { return c_.data(); }
    double* data() { return c_.data(); }

    // True partial derivative (coefficient times the factorial product).
    double derivative(int dx, int dy, int dt = 0) const {
        const auto& t = detail::tables(shape_);
        if (dx < 0 || dy < 0 || dt < 0 || dx + dy + dt > shape_.degree ||
            (shape_.vars == 2 && dt > 0))
            throw std::invalid_argument("derivative multi-index out of range for this jet");
        int i = t.index_of(dx, dy, dt);
        return c_[i] * t.fact[i];
    }

private:
    friend Jet operator+(const Jet&, const Jet&);
    friend Jet operator-(const Jet&, const Jet&);
    friend Jet operator*(const Jet&, const Jet&);
    friend Jet operator-(const Jet&);
    JetShape shape_;
    std::array<double, 20> c_;
};

namespace detail {
inline void check_same_shape(const Jet& a, const Jet& b) {
    if (a.shape() != b.shape()) throw shape_error("jet shape mismatch in binary operation");
}
} // namespace detail

inline Jet operator+(const Jet& a, const Jet& b) {
    detail::check_same_shape(a, b);
    Jet r(a.shape());
    detail::k_add(a.size(), r.data(), a.data(), b.data());
    return r;
}

inline Jet operator-(const Jet& a, const Jet& b) {
    detail::check_same_shape(a, b);
    Jet r(a.shape());
    detail::k_sub(a.size(), r.data(), a.data(), b.data());
    return r;
}

inline Jet operator*(const Jet& a, const Jet& b) {
    detail::check_same_shape(a, b);
    Jet r(a.shape());
    detail::k_mul_acc(detail::tables(a.shape()), r.data(), a.data(), b.data());
    return r;
}

inline Jet operator-(const Jet& a) {
    Jet r(a.shape());
    detail::k_scale(a.size(), r.data(), -1.0, a.data());
    return r;
}

inline Jet operator*(double s, const Jet& a) {
    Jet r(a.shape());
    detail::k_scale(a.size(), r.data(), s, a.data());
    return r;
}

inline Jet operator*(const Jet& a, double s) { return s * a; }

inline Jet operator+(const Jet& a, double s) {
    Jet r = a;
    r.coeff(0) += s;
    return r;
}

inline Jet operator+(double s, const Jet& a) { return a + s; }

inline Jet operator-(const Jet& a, double s) { return a + (-s); }

inline Jet operator-(double s, const Jet& a) { return -a + s; }

inline Jet square(const Jet& a) { return a * a; }

namespace detail {
template <void Derivs(double, double*, int)>
Jet unary_compose(const Jet& a) {
    double g[4];
    Derivs(a.value(), g, 4);
    Jet r(a.shape());
    k_compose(tables(a.shape()), r.data(), a.data(), g);
    return r;
}
} // namespace detail

inline Jet tanh(const Jet& a) { return detail::unary_compose<detail::tanh_derivs>(a); }
inline Jet exp(const Jet& a) { return detail::unary_compose<detail::exp_derivs>(a); }
inline Jet sin(const Jet& a) { return detail::unary_compose<detail::sin_derivs>(a); }
inline Jet cos(const Jet& a) { return detail::unary_compose<detail::cos_derivs>(a); }

inline Jet reciprocal(const Jet& a) {
    if (a.value() == 0.0)
        throw std::domain_error("reciprocal of a jet with order-0 value 0");
    return detail::unary_compose<detail::recip_derivs>(a);
}

inline Jet operator/(const Jet& a, const Jet& b) { return a * reciprocal(b); }

} // namespace unipinn
