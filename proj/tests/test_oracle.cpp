#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "unipinn/oracle.hpp"
#include "unipinn/physics.hpp"

using namespace unipinn;

namespace {

double centerline_l2_diff(const ReferenceField& coarse, const ReferenceField& fine) {
    // u along the vertical centerline, fine field sampled at coarse nodes
    // (fine grid is 2*n-1, so every coarse node exists on the fine grid)
    double num = 0.0, den = 0.0;
    int ic = coarse.nx / 2, jf_stride = (fine.ny - 1) / (coarse.ny - 1);
    int if_ = fine.nx / 2;
    for (int j = 0; j < coarse.ny; ++j) {
        double uc = coarse.u[coarse.idx(ic, j)];
        double uf = fine.u[fine.idx(if_, j * jf_stride)];
        num += (uc - uf) * (uc - uf);
        den += uf * uf;
    }
    return std::sqrt(num / den);
}

double full_field_l2_diff(const ReferenceField& coarse, const ReferenceField& fine) {
    double num = 0.0, den = 0.0;
    int stride = (fine.nx - 1) / (coarse.nx - 1);
    for (int j = 0; j < coarse.ny; ++j)
        for (int i = 0; i < coarse.nx; ++i) {
            double du = coarse.u[coarse.idx(i, j)] - fine.u[fine.idx(i * stride, j * stride)];
            double dv = coarse.v[coarse.idx(i, j)] - fine.v[fine.idx(i * stride, j * stride)];
            num += du * du + dv * dv;
            double fu = fine.u[fine.idx(i * stride, j * stride)];
            double fv = fine.v[fine.idx(i * stride, j * stride)];
            den += fu * fu + fv * fv;
        }
    return std::sqrt(num / den);
}

const ReferenceField& cavity65() {
    static const ReferenceField f = [] {
        CavitySolverConfig cfg;
        cfg.grid_n = 65;
        return solve_cavity_fd(cfg);
    }();
    return f;
}

const ReferenceField& cavity129() {
    static const ReferenceField f = [] {
        CavitySolverConfig cfg;
        cfg.grid_n = 129;
        return solve_cavity_fd(cfg);
    }();
    return f;
}

} // namespace

TEST_SUITE_BEGIN("oracle");

TEST_CASE("analytic Couette: linear profile, zero v, zero pressure") {
    FlowSpec flow = couette_flow();
    auto s = analytic_solution(flow, 0.4, 0.25);
    CHECK(s[0] == doctest::Approx(0.25));
    CHECK(s[1] == 0.0);
    CHECK(s[2] == 0.0);
}

TEST_CASE("analytic Poiseuille: parabola vertex at the centerline") {
    FlowSpec flow = poiseuille_flow();
    auto s = analytic_solution(flow, 1.0, 0.5);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] == 0.0);
    auto outlet = analytic_solution(flow, 2.0, 0.5);
    CHECK(outlet[2] == doctest::Approx(0.0));
    // dp/dx = -8 nu  (rho = 1, H = 1, U = 1)
    auto inlet = analytic_solution(flow, 0.0, 0.5);
    CHECK(inlet[2] == doctest::Approx(16.0 * flow.viscosity));
}

TEST_CASE("cavity has no closed form") {
    CHECK_THROWS_AS(analytic_solution(lid_cavity_flow(), 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("analytic fields satisfy the momentum equations through the residual op") {
    for (const char* name : {"couette", "poiseuille"}) {
        FlowSpec flow = builtin_flow(name);
        Rng rng(500);
        double worst = 0.0;
        for (int k = 0; k < 1000; ++k) {
            double x = rng.uniform_in(flow.domain.x_min, flow.domain.x_max);
            double y = rng.uniform_in(flow.domain.y_min, flow.domain.y_max);
            JetShape s = kSteadyShape;
            Jet xj = Jet::seeded(x, Var::x, s), yj = Jet::seeded(y, Var::y, s);
            Jet psi(s), p(s);
            if (flow.name == "couette") {
                psi = 0.5 * (yj * yj);
                p = Jet::constant(0.0, s);
            } else {
                psi = 4.0 * (0.5 * (yj * yj) - (1.0 / 3.0) * (yj * yj * yj));
                p = 8.0 * flow.viscosity * (2.0 - xj);
            }
            auto r = momentum_residual(prediction_from_jets(psi, p, 1, 1, 0), flow, x, y, 0.0);
            worst = std::max({worst, std::abs(r[0]), std::abs(r[1])});
        }
        CHECK(worst < 1e-8);
    }
}

TEST_CASE("cavity solver: converged, walls exact, lid moving") {
    const ReferenceField& f = cavity65();
    CHECK(f.nx == 65);
    for (int i = 0; i < f.nx; ++i) {
        CHECK(f.u[f.idx(i, 0)] == 0.0);
        CHECK(f.u[f.idx(i, f.ny - 1)] == 1.0);
    }
    for (int j = 1; j < f.ny - 1; ++j) {
        CHECK(f.u[f.idx(0, j)] == 0.0);
        CHECK(f.u[f.idx(f.nx - 1, j)] == 0.0);
        CHECK(f.v[f.idx(0, j)] == 0.0);
    }
    // Ghia et al. style sanity: the centerline minimum for Re=100 sits near
    // -0.21 around y ~ 0.45
    double umin = 1e9;
    int ic = f.nx / 2;
    for (int j = 0; j < f.ny; ++j) umin = std::min(umin, f.u[f.idx(ic, j)]);
    CHECK(umin > -0.26);
    CHECK(umin < -0.16);
}

TEST_CASE("cavity solver: discrete divergence of the reconstructed field vanishes") {
    const ReferenceField& f = cavity65();
    const double h = 1.0 / (f.nx - 1);
    double worst = 0.0;
    for (int j = 2; j < f.ny - 2; ++j)
        for (int i = 2; i < f.nx - 2; ++i) {
            double div = (f.u[f.idx(i + 1, j)] - f.u[f.idx(i - 1, j)]) / (2 * h) +
                         (f.v[f.idx(i, j + 1)] - f.v[f.idx(i, j - 1)]) / (2 * h);
            worst = std::max(worst, std::abs(div));
        }
    CHECK(worst < 1e-6);
}

TEST_CASE("cavity solver: 65 vs 129 centerline agreement within 2 percent") {
    double diff = centerline_l2_diff(cavity65(), cavity129());
    CHECK(diff < 0.02);
}

TEST_CASE("cavity solver: refinement differences shrink monotonically") {
    CavitySolverConfig c33;
    c33.grid_n = 33;
    ReferenceField f33 = solve_cavity_fd(c33);
    double d33_65 = full_field_l2_diff(f33, cavity65());
    double d65_129 = full_field_l2_diff(cavity65(), cavity129());
    CHECK(d33_65 > d65_129);
}

TEST_CASE("cavity solver: non-convergence carries the final residual") {
    CavitySolverConfig cfg;
    cfg.grid_n = 33;
    cfg.max_iterations = 40;
    try {
        solve_cavity_fd(cfg);
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("residual") != std::string::npos);
    }
    CavitySolverConfig bad;
    bad.grid_n = 32;
    CHECK_THROWS_AS(solve_cavity_fd(bad), config_error);
}

TEST_CASE("reference CSV round-trips bit-exactly") {
    FlowSpec flow = poiseuille_flow();
    ReferenceField f = analytic_reference(flow, 9, 5);
    std::string path = (std::filesystem::temp_directory_path() / "unipinn_ref_test.csv").string();
    write_reference_csv(f, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "flow,x,y,t,u,v,p");
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 9 * 5);

    ReferenceField g = read_reference_csv(path);
    CHECK(g.nx == f.nx);
    CHECK(g.ny == f.ny);
    CHECK(g.flow_name == f.flow_name);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
        CHECK(g.u[i] == f.u[i]);
        CHECK(g.v[i] == f.v[i]);
        CHECK(g.p[i] == f.p[i]);
    }
    std::filesystem::remove(path);
}

TEST_CASE("malformed reference rows report the line number") {
    std::string path = (std::filesystem::temp_directory_path() / "unipinn_bad_ref.csv").string();
    {
        std::ofstream out(path);
        out << "flow,x,y,t,u,v,p\n";
        out << "couette,0,0,0,0,0,0\n";
        out << "couette,1,0,0,not_a_number,0,0\n";
    }
    try {
        read_reference_csv(path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    {
        std::ofstream out(path);
        out << "x,y,u,v\n";
    }
    CHECK_THROWS_AS(read_reference_csv(path), parse_error);
    std::filesystem::remove(path);
}

TEST_CASE("observation sets are distinct, value-faithful and deterministic") {
    FlowSpec flow = couette_flow();
    ReferenceField f = analytic_reference(flow, 65, 65);
    ObservationSet a = make_observation_set(f, 200, 99);
    ObservationSet b = make_observation_set(f, 200, 99);
    CHECK(a.points.size() == 200);
    std::set<std::pair<double, double>> seen;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        seen.insert({a.points[i][0], a.points[i][1]});
        // Couette values satisfy u = y exactly at the sampled nodes
        CHECK(a.values[i][0] == a.points[i][1]);
        CHECK(a.points[i] == b.points[i]);
    }
    CHECK(seen.size() == 200);
    CHECK_THROWS_AS(make_observation_set(f, 65 * 65 + 1, 1), std::invalid_argument);
}

TEST_SUITE_END();
