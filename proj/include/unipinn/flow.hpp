#pragma once
// Flow definitions: physical parameters, rectangular domains, boundary
// segments, collocation sampling and the enhanced input-feature pipeline
// (coordinate/time normalization, parameter encoding, periodic features).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "unipinn/errors.hpp"
#include "unipinn/jet.hpp"
#include "unipinn/rng.hpp"
#include "unipinn/tape.hpp"

namespace unipinn {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class Edge : int { left = 0, right = 1, bottom = 2, top = 3 };

enum class BcKind : int {
    velocity,             // both components prescribed (value or profile)
    pressure,             // pressure prescribed
    zero_normal_gradient, // du/dn = 0 for the streamwise component
    outflow,              // pressure prescribed + du/dn = 0 (open outlet)
};

struct BoundarySegment {
    Edge edge;
    BcKind kind;
    // parameter range along the edge (x for bottom/top, y for left/right)
    double lo = 0.0, hi = 0.0;
    // prescribed velocity as a function of position/time (velocity kind)
    std::function<std::array<double, 2>(double, double, double)> velocity;
    double pressure_value = 0.0;
};

struct Rect {
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool contains(double x, double y, double tol = 0.0) const {
        return x >= x_min - tol && x <= x_max + tol && y >= y_min - tol && y <= y_max + tol;
    }
};

struct FlowSpec {
    int id = 0;
    std::string name;
    double viscosity = 0.01;
    double density = 1.0;
    double reynolds = 100.0;
    double char_length = 1.0;
    double char_velocity = 1.0;
    Rect domain;
    std::vector<BoundarySegment> boundary;
    std::function<std::array<double, 2>(double, double, double)> body_force;
    std::optional<std::array<double, 3>> pressure_pin; // (x, y, value)

    double char_time() const { return char_length / char_velocity; }

    void validate() const {
        if (std::abs(reynolds - char_velocity * char_length / viscosity) > 1e-12 * reynolds)
            throw config_error(name + ": reynolds != U*L/viscosity");
        if (domain.width() <= 0.0 || domain.height() <= 0.0)
            throw config_error(name + ": domain must have positive area");
        // segments must tile each of the four edges exactly once
        for (int e = 0; e < 4; ++e) {
            const bool horizontal = (e == 2 || e == 3);
            const double lo = horizontal ? domain.x_min : domain.y_min;
            const double hi = horizontal ? domain.x_max : domain.y_max;
            std::vector<std::pair<double, double>> spans;
            for (const auto& s : boundary)
                if (static_cast<int>(s.edge) == e) spans.push_back({s.lo, s.hi});
            std::sort(spans.begin(), spans.end());
            double cursor = lo;
            for (const auto& [a, b] : spans) {
                if (std::abs(a - cursor) > 1e-12 || b <= a)
                    throw config_error(name + ": boundary segments do not tile edge " +
                                       std::to_string(e));
                cursor = b;
            }
            if (spans.empty() || std::abs(cursor - hi) > 1e-12)
                throw config_error(name + ": boundary segments do not cover edge " +
                                   std::to_string(e));
        }
    }
};

namespace detail {

inline std::array<double, 2> segment_point(const FlowSpec& flow, const BoundarySegment& s,
                                           double u) {
    const double c = s.lo + u * (s.hi - s.lo);
    switch (s.edge) {
        case Edge::left: return {flow.domain.x_min, c};
        case Edge::right: return {flow.domain.x_max, c};
        case Edge::bottom: return {c, flow.domain.y_min};
        default: return {c, flow.domain.y_max};
    }
}

inline std::array<double, 2> outward_normal(Edge e) {
    switch (e) {
        case Edge::left: return {-1.0, 0.0};
        case Edge::right: return {1.0, 0.0};
        case Edge::bottom: return {0.0, -1.0};
        default: return {0.0, 1.0};
    }
}

} // namespace detail

// ---- built-in flows ----

inline BoundarySegment no_slip_wall(Edge e, double lo, double hi) {
    BoundarySegment s;
    s.edge = e;
    s.kind = BcKind::velocity;
    s.lo = lo;
    s.hi = hi;
    s.velocity = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    return s;
}

// Lid-driven cavity on the unit square: top wall slides at u = 1, other walls
// no-slip, pressure pinned at the center (no physical pressure condition
// exists, so the gauge must be fixed somewhere).
inline FlowSpec lid_cavity_flow() {
    FlowSpec f;
    f.id = 0;
    f.name = "lid_cavity";
    f.viscosity = 0.01;
    f.density = 1.0;
    f.char_length = 1.0;
    f.char_velocity = 1.0;
    f.reynolds = 100.0;
    f.domain = {0.0, 1.0, 0.0, 1.0};
    BoundarySegment lid;
    lid.edge = Edge::top;
    lid.kind = BcKind::velocity;
    lid.lo = 0.0;
    lid.hi = 1.0;
    lid.velocity = [](double, double, double) { return std::array<double, 2>{1.0, 0.0}; };
    f.boundary = {no_slip_wall(Edge::left, 0.0, 1.0), no_slip_wall(Edge::right, 0.0, 1.0),
                  no_slip_wall(Edge::bottom, 0.0, 1.0), lid};
    f.body_force = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    f.pressure_pin = {{0.5, 0.5, 0.0}};
    return f;
}

// Plane Poiseuille channel [0,2]x[0,1]: parabolic inlet, no-slip walls and an
// open outlet (p = 0 plus zero normal gradient of the streamwise velocity).
inline FlowSpec poiseuille_flow() {
    FlowSpec f;
    f.id = 1;
    f.name = "poiseuille";
    f.viscosity = 0.02;
    f.density = 1.0;
    f.char_length = 1.0;  // channel height
    f.char_velocity = 1.0; // centerline velocity
    f.reynolds = 50.0;
    f.domain = {0.0, 2.0, 0.0, 1.0};
    BoundarySegment inlet;
    inlet.edge = Edge::left;
    inlet.kind = BcKind::velocity;
    inlet.lo = 0.0;
    inlet.hi = 1.0;
    inlet.velocity = [](double, double y, double) {
        return std::array<double, 2>{4.0 * y * (1.0 - y), 0.0};
    };
    BoundarySegment outlet;
    outlet.edge = Edge::right;
    outlet.kind = BcKind::outflow;
    outlet.lo = 0.0;
    outlet.hi = 1.0;
    outlet.pressure_value = 0.0;
    f.boundary = {inlet, outlet, no_slip_wall(Edge::bottom, 0.0, 2.0),
                  no_slip_wall(Edge::top, 0.0, 2.0)};
    f.body_force = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    return f;
}

// Couette flow on the unit square: top plate moves at u = 1, bottom at rest,
// side boundaries carry the steady linear profile (stand-in for infinite
// plates, keeping the boundary loss uniform across flows).
inline FlowSpec couette_flow() {
    FlowSpec f;
    f.id = 2;
    f.name = "couette";
    f.viscosity = 0.1;
    f.density = 1.0;
    f.char_length = 1.0;
    f.char_velocity = 1.0;
    f.reynolds = 10.0;
    f.domain = {0.0, 1.0, 0.0, 1.0};
    BoundarySegment top;
    top.edge = Edge::top;
    top.kind = BcKind::velocity;
    top.lo = 0.0;
    top.hi = 1.0;
    top.velocity = [](double, double, double) { return std::array<double, 2>{1.0, 0.0}; };
    auto shear = [](double, double y, double) { return std::array<double, 2>{y, 0.0}; };
    BoundarySegment left{Edge::left, BcKind::velocity, 0.0, 1.0, shear, 0.0};
    BoundarySegment right{Edge::right, BcKind::velocity, 0.0, 1.0, shear, 0.0};
    f.boundary = {left, right, no_slip_wall(Edge::bottom, 0.0, 1.0), top};
    f.body_force = [](double, double, double) { return std::array<double, 2>{0.0, 0.0}; };
    return f;
}

// Lookup by canonical name or CLI alias.
inline FlowSpec builtin_flow(const std::string& name) {
    if (name == "lid_cavity" || name == "cavity" || name == "lid") return lid_cavity_flow();
    if (name == "poiseuille" || name == "pipe") return poiseuille_flow();
    if (name == "couette") return couette_flow();
    throw std::invalid_argument("unknown flow name: " + name);
}

// ---- collocation sampling ----

struct BoundaryPoint {
    double x, y, t;
    int segment; // index into FlowSpec::boundary
};

struct CollocationBatch {
    std::vector<std::array<double, 3>> interior;
    std::vector<BoundaryPoint> boundary;
    std::uint64_t seed = 0;
};

struct ObservationSet {
    std::vector<std::array<double, 3>> points;
    std::vector<std::array<double, 3>> values; // (u, v, p)
    bool has_pressure = true;
    std::string source;
};

// Uniform interior points plus boundary points allocated to segments in
// proportion to their length; deterministic in the seed.
inline CollocationBatch sample_points(const FlowSpec& flow, int n_interior, int n_boundary,
                                      std::uint64_t seed, double t_max = 0.0) {
    CollocationBatch batch;
    batch.seed = seed;
    Rng rng(derive_seed(seed, 0xc011, flow.id));
    batch.interior.reserve(n_interior);
    for (int i = 0; i < n_interior; ++i) {
        double x = rng.uniform_open(flow.domain.x_min, flow.domain.x_max);
        double y = rng.uniform_open(flow.domain.y_min, flow.domain.y_max);
        double t = t_max > 0.0 ? rng.uniform_in(0.0, t_max) : 0.0;
        batch.interior.push_back({x, y, t});
    }
    // largest-remainder allocation over segment lengths
    double total_len = 0.0;
    std::vector<double> lens;
    for (const auto& s : flow.boundary) {
        lens.push_back(s.hi - s.lo);
        total_len += s.hi - s.lo;
    }
    std::vector<int> counts(lens.size(), 0);
    std::vector<std::pair<double, int>> rema;
    int assigned = 0;
    for (std::size_t i = 0; i < lens.size(); ++i) {
        double share = n_boundary * lens[i] / total_len;
        counts[i] = static_cast<int>(share);
        assigned += counts[i];
        rema.push_back({share - counts[i], static_cast<int>(i)});
    }
    std::sort(rema.begin(), rema.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; assigned < n_boundary; ++i, ++assigned) counts[rema[i % rema.size()].second]++;
    for (std::size_t si = 0; si < flow.boundary.size(); ++si) {
        for (int i = 0; i < counts[si]; ++i) {
            double u = rng.uniform();
            auto [x, y] = detail::segment_point(flow, flow.boundary[si], u);
            double t = t_max > 0.0 ? rng.uniform_in(0.0, t_max) : 0.0;
            batch.boundary.push_back({x, y, t, static_cast<int>(si)});
        }
    }
    return batch;
}

// ---- input features ----

// Order of the enhanced feature vector; raw (normalization off) drops the
// trig features and keeps raw coordinates.
inline int feature_count(bool input_norm_on) { return input_norm_on ? 10 : 6; }

struct FeatureScales {
    double sx, sy, st; // d(normalized)/d(raw) per axis
};

inline FeatureScales feature_scales(const FlowSpec& flow, bool input_norm_on) {
    if (!input_norm_on) return {1.0, 1.0, 1.0};
    return {1.0 / flow.domain.width(), 1.0 / flow.domain.height(), 1.0 / flow.char_time()};
}

// Jet-valued enhanced features for one point.  Coordinates are seeded so
// derivatives flow; physical parameters are constant jets.
inline std::vector<Jet> build_input_features(double x, double y, double t, const FlowSpec& flow,
                                             bool input_norm_on = true,
                                             JetShape shape = kSteadyShape) {
    if (flow.domain.width() <= 0.0 || flow.domain.height() <= 0.0)
        throw config_error(flow.name + ": zero-extent domain axis");
    std::vector<Jet> f;
    const bool unsteady = shape.vars == 3;
    if (input_norm_on) {
        const FeatureScales s = feature_scales(flow, true);
        Jet xn = Jet::seeded((x - flow.domain.x_min) * s.sx, Var::x, shape);
        Jet yn = Jet::seeded((y - flow.domain.y_min) * s.sy, Var::y, shape);
        Jet tn = unsteady ? Jet::seeded(t * s.st, Var::t, shape) : Jet::constant(0.0, shape);
        f = {xn,
             yn,
             tn,
             sin(kTwoPi * xn),
             cos(kTwoPi * xn),
             sin(kTwoPi * yn),
             cos(kTwoPi * yn),
             Jet::constant(flow.viscosity, shape),
             Jet::constant(flow.density, shape),
             Jet::constant(flow.reynolds, shape)};
    } else {
        Jet xr = Jet::seeded(x, Var::x, shape);
        Jet yr = Jet::seeded(y, Var::y, shape);
        Jet tr = unsteady ? Jet::seeded(t, Var::t, shape) : Jet::constant(0.0, shape);
        f = {xr,
             yr,
             tr,
             Jet::constant(flow.viscosity, shape),
             Jet::constant(flow.density, shape),
             Jet::constant(flow.reynolds, shape)};
    }
    return f;
}

// Tape version of the same pipeline (the trig features are recorded so their
// derivatives participate in the reverse sweep).
inline NodeId build_feature_nodes(Tape& tape, double x, double y, double t, const FlowSpec& flow,
                                  bool input_norm_on) {
    const JetShape shape = tape.shape();
    const bool unsteady = shape.vars == 3;
    if (flow.domain.width() <= 0.0 || flow.domain.height() <= 0.0)
        throw config_error(flow.name + ": zero-extent domain axis");
    if (input_norm_on) {
        const FeatureScales s = feature_scales(flow, true);
        Jet coords[3] = {Jet::seeded((x - flow.domain.x_min) * s.sx, Var::x, shape),
                         Jet::seeded((y - flow.domain.y_min) * s.sy, Var::y, shape),
                         unsteady ? Jet::seeded(t * s.st, Var::t, shape)
                                  : Jet::constant(0.0, shape)};
        NodeId c = tape.leaf(coords);
        NodeId lx = tape.leaf1(coords[0]);
        NodeId ly = tape.leaf1(coords[1]);
        NodeId x2pi = tape.scale_shift(lx, kTwoPi);
        NodeId y2pi = tape.scale_shift(ly, kTwoPi);
        Jet consts[3] = {Jet::constant(flow.viscosity, shape), Jet::constant(flow.density, shape),
                         Jet::constant(flow.reynolds, shape)};
        NodeId z = tape.leaf(consts);
        return tape.concat({c, tape.sin_fn(x2pi), tape.cos_fn(x2pi), tape.sin_fn(y2pi),
                            tape.cos_fn(y2pi), z});
    }
    Jet raw[3] = {Jet::seeded(x, Var::x, shape), Jet::seeded(y, Var::y, shape),
                  unsteady ? Jet::seeded(t, Var::t, shape) : Jet::constant(0.0, shape)};
    NodeId c = tape.leaf(raw);
    Jet consts[3] = {Jet::constant(flow.viscosity, shape), Jet::constant(flow.density, shape),
                     Jet::constant(flow.reynolds, shape)};
    NodeId z = tape.leaf(consts);
    return tape.concat({c, z});
}

} // namespace unipinn
