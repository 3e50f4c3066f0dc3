#pragma once
// Ground-truth generation: closed-form Couette/Poiseuille fields and a
// steady lid-driven-cavity solver in vorticity-streamfunction form (SOR with
// hybrid central/upwind convection, Thom wall vorticity).  Fields are written
// to / read from CSV bit-exactly and subsampled into observation sets.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unipinn/errors.hpp"
#include "unipinn/flow.hpp"
#include "unipinn/rng.hpp"

namespace unipinn {

struct ReferenceField {
    std::string flow_name;
    std::string provenance; // "analytic" or "fd_solver(...)"
    Rect domain;
    int nx = 0, ny = 0;
    std::vector<double> u, v, p; // row-major, x fastest: idx = j*nx + i
    bool has_pressure = true;

    double x_of(int i) const { return domain.x_min + domain.width() * i / (nx - 1); }
    double y_of(int j) const { return domain.y_min + domain.height() * j / (ny - 1); }
    int idx(int i, int j) const { return j * nx + i; }

    void check_finite() const {
        for (const auto* arr : {&u, &v, &p})
            for (double val : *arr)
                if (!std::isfinite(val)) throw numeric_error("reference field contains NaN/Inf");
    }
};

// Closed-form solutions.  The cavity has none; asking for it is an error.
inline std::array<double, 3> analytic_solution(const FlowSpec& flow, double x, double y) {
    if (flow.name == "couette") {
        const double H = flow.domain.height();
        return {flow.char_velocity * (y - flow.domain.y_min) / H, 0.0, 0.0};
    }
    if (flow.name == "poiseuille") {
        const double H = flow.domain.height();
        const double umax = flow.char_velocity;
        const double yy = y - flow.domain.y_min;
        double u = 4.0 * umax * yy * (H - yy) / (H * H);
        // dp/dx balances the viscous term; p = 0 at the outlet
        double grad = 8.0 * flow.viscosity * flow.density * umax / (H * H);
        double p = grad * (flow.domain.x_max - x);
        return {u, 0.0, p};
    }
    throw std::invalid_argument("no closed-form solution for flow: " + flow.name);
}

inline ReferenceField analytic_reference(const FlowSpec& flow, int nx, int ny) {
    ReferenceField f;
    f.flow_name = flow.name;
    f.provenance = "analytic";
    f.domain = flow.domain;
    f.nx = nx;
    f.ny = ny;
    f.u.resize(static_cast<std::size_t>(nx) * ny);
    f.v.resize(f.u.size());
    f.p.resize(f.u.size());
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            auto s = analytic_solution(flow, f.x_of(i), f.y_of(j));
            f.u[f.idx(i, j)] = s[0];
            f.v[f.idx(i, j)] = s[1];
            f.p[f.idx(i, j)] = s[2];
        }
    return f;
}

// ---- lid-driven cavity, vorticity-streamfunction form ----

struct CavitySolverConfig {
    double reynolds = 100.0;
    int grid_n = 65;           // nodes per axis, odd and >= 33
    double sor_relaxation = 1.8;
    double tolerance = 1e-6;   // max discrete residual of both equations
    int max_iterations = 200000;
    bool with_pressure = true;

    void validate() const {
        if (grid_n < 33 || grid_n % 2 == 0)
            throw config_error("cavity grid_n must be odd and >= 33");
        if (sor_relaxation <= 1.0 || sor_relaxation >= 2.0)
            throw config_error("SOR relaxation must lie in (1, 2)");
        if (tolerance <= 0.0) throw config_error("tolerance must be positive");
    }
};

namespace oracledetail {

// Hybrid convection coefficient per axis: central difference while the cell
// Peclet number allows it, first-order upwind past |u| h / nu = 2.
struct AxisCoeff {
    double plus, minus, diag;
};

inline AxisCoeff hybrid_coeff(double vel, double h, double nu) {
    const double d = nu / (h * h);
    if (std::abs(vel) * h <= 2.0 * nu) {
        return {d - vel / (2.0 * h), d + vel / (2.0 * h), 2.0 * d};
    }
    if (vel > 0.0) return {d, d + vel / h, 2.0 * d + vel / h};
    return {d - vel / h, d, 2.0 * d - vel / h};
}

} // namespace oracledetail

inline ReferenceField solve_cavity_fd(const CavitySolverConfig& cfg) {
    cfg.validate();
    const int n = cfg.grid_n;
    const double h = 1.0 / (n - 1);
    const double nu = 1.0 / cfg.reynolds;
    const double lid_u = 1.0;
    const double wr = cfg.sor_relaxation;
    const double wv = 0.7; // vorticity under-relaxation

    std::vector<double> psi(static_cast<std::size_t>(n) * n, 0.0), omega = psi, u = psi, v = psi;
    auto at = [n](int i, int j) { return j * n + i; };
    for (int i = 0; i < n; ++i) u[at(i, n - 1)] = lid_u;

    auto wall_vorticity = [&]() {
        const double ih2 = 1.0 / (h * h);
        for (int i = 1; i < n - 1; ++i) {
            omega[at(i, 0)] = 2.0 * (psi[at(i, 0)] - psi[at(i, 1)]) * ih2;
            omega[at(i, n - 1)] =
                2.0 * (psi[at(i, n - 1)] - psi[at(i, n - 2)]) * ih2 - 2.0 * lid_u / h;
        }
        for (int j = 1; j < n - 1; ++j) {
            omega[at(0, j)] = 2.0 * (psi[at(0, j)] - psi[at(1, j)]) * ih2;
            omega[at(n - 1, j)] = 2.0 * (psi[at(n - 1, j)] - psi[at(n - 2, j)]) * ih2;
        }
    };

    double residual = std::numeric_limits<double>::infinity();
    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
        // stream function SOR sweep (psi = 0 on all walls)
        for (int j = 1; j < n - 1; ++j)
            for (int i = 1; i < n - 1; ++i) {
                double gs = 0.25 * (psi[at(i + 1, j)] + psi[at(i - 1, j)] + psi[at(i, j + 1)] +
                                    psi[at(i, j - 1)] + h * h * omega[at(i, j)]);
                psi[at(i, j)] += wr * (gs - psi[at(i, j)]);
            }
        for (int j = 1; j < n - 1; ++j)
            for (int i = 1; i < n - 1; ++i) {
                u[at(i, j)] = (psi[at(i, j + 1)] - psi[at(i, j - 1)]) / (2.0 * h);
                v[at(i, j)] = -(psi[at(i + 1, j)] - psi[at(i - 1, j)]) / (2.0 * h);
            }
        wall_vorticity();
        for (int j = 1; j < n - 1; ++j)
            for (int i = 1; i < n - 1; ++i) {
                auto cx = oracledetail::hybrid_coeff(u[at(i, j)], h, nu);
                auto cy = oracledetail::hybrid_coeff(v[at(i, j)], h, nu);
                double num = cx.plus * omega[at(i + 1, j)] + cx.minus * omega[at(i - 1, j)] +
                             cy.plus * omega[at(i, j + 1)] + cy.minus * omega[at(i, j - 1)];
                double gs = num / (cx.diag + cy.diag);
                omega[at(i, j)] += wv * (gs - omega[at(i, j)]);
            }

        if (iter % 20 == 19) {
            double r_transport = 0.0, r_poisson = 0.0;
            for (int j = 1; j < n - 1; ++j)
                for (int i = 1; i < n - 1; ++i) {
                    auto cx = oracledetail::hybrid_coeff(u[at(i, j)], h, nu);
                    auto cy = oracledetail::hybrid_coeff(v[at(i, j)], h, nu);
                    double r = (cx.diag + cy.diag) * omega[at(i, j)] -
                               (cx.plus * omega[at(i + 1, j)] + cx.minus * omega[at(i - 1, j)] +
                                cy.plus * omega[at(i, j + 1)] + cy.minus * omega[at(i, j - 1)]);
                    r_transport = std::max(r_transport, std::abs(r));
                    double rp = (psi[at(i + 1, j)] + psi[at(i - 1, j)] + psi[at(i, j + 1)] +
                                 psi[at(i, j - 1)] - 4.0 * psi[at(i, j)]) /
                                    (h * h) +
                                omega[at(i, j)];
                    r_poisson = std::max(r_poisson, std::abs(rp));
                }
            residual = std::max(r_transport, r_poisson);
            if (residual < cfg.tolerance) break;
        }
    }
    if (residual >= cfg.tolerance) {
        std::ostringstream msg;
        msg << "cavity solver did not converge: residual " << residual << " after "
            << cfg.max_iterations << " iterations (tolerance " << cfg.tolerance << ")";
        throw numeric_error(msg.str());
    }

    ReferenceField f;
    f.flow_name = "lid_cavity";
    {
        std::ostringstream prov;
        prov << "fd_solver(re=" << cfg.reynolds << ",n=" << n << ",tol=" << cfg.tolerance << ")";
        f.provenance = prov.str();
    }
    f.domain = {0.0, 1.0, 0.0, 1.0};
    f.nx = n;
    f.ny = n;
    f.u = u;
    f.v = v;
    f.p.assign(u.size(), 0.0);
    f.has_pressure = cfg.with_pressure;

    if (cfg.with_pressure) {
        // pressure Poisson: lap p = 2 (psi_xx psi_yy - psi_xy^2), homogeneous
        // Neumann walls, pinned at the center node
        std::vector<double>& p = f.p;
        std::vector<double> rhs(p.size(), 0.0);
        for (int j = 1; j < n - 1; ++j)
            for (int i = 1; i < n - 1; ++i) {
                double pxx =
                    (psi[at(i + 1, j)] - 2 * psi[at(i, j)] + psi[at(i - 1, j)]) / (h * h);
                double pyy =
                    (psi[at(i, j + 1)] - 2 * psi[at(i, j)] + psi[at(i, j - 1)]) / (h * h);
                double pxy = (psi[at(i + 1, j + 1)] - psi[at(i + 1, j - 1)] -
                              psi[at(i - 1, j + 1)] + psi[at(i - 1, j - 1)]) /
                             (4.0 * h * h);
                rhs[at(i, j)] = 2.0 * (pxx * pyy - pxy * pxy);
            }
        const int center = at(n / 2, n / 2);
        for (int it = 0; it < cfg.max_iterations; ++it) {
            double change = 0.0;
            for (int j = 1; j < n - 1; ++j)
                for (int i = 1; i < n - 1; ++i) {
                    double gs = 0.25 * (p[at(i + 1, j)] + p[at(i - 1, j)] + p[at(i, j + 1)] +
                                        p[at(i, j - 1)] - h * h * rhs[at(i, j)]);
                    double d = wr * (gs - p[at(i, j)]);
                    p[at(i, j)] += d;
                    change = std::max(change, std::abs(d));
                }
            for (int i = 0; i < n; ++i) {
                p[at(i, 0)] = p[at(i, 1)];
                p[at(i, n - 1)] = p[at(i, n - 2)];
            }
            for (int j = 0; j < n; ++j) {
                p[at(0, j)] = p[at(1, j)];
                p[at(n - 1, j)] = p[at(n - 2, j)];
            }
            double pin = p[center];
            for (double& val : p) val -= pin;
            if (change < cfg.tolerance) break;
        }
    }
    f.check_finite();
    return f;
}

// ---- reference CSV ----

inline constexpr const char* kReferenceHeader = "flow,x,y,t,u,v,p";

namespace oracledetail {

inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace oracledetail

inline void write_reference_csv(const ReferenceField& field, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kReferenceHeader << "\n";
    for (int j = 0; j < field.ny; ++j)
        for (int i = 0; i < field.nx; ++i) {
            int k = field.idx(i, j);
            out << field.flow_name << ',' << oracledetail::fmt17(field.x_of(i)) << ','
                << oracledetail::fmt17(field.y_of(j)) << ",0," << oracledetail::fmt17(field.u[k])
                << ',' << oracledetail::fmt17(field.v[k]) << ',';
            if (field.has_pressure) out << oracledetail::fmt17(field.p[k]);
            out << "\n";
        }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline ReferenceField read_reference_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error(path + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kReferenceHeader)
        throw parse_error(path + ":1: bad header, expected '" + std::string(kReferenceHeader) +
                          "'");
    ReferenceField f;
    std::vector<double> xs, ys;
    bool any_missing_p = false;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::array<std::string, 7> cell;
        std::size_t pos = 0;
        for (int c = 0; c < 7; ++c) {
            std::size_t comma = line.find(',', pos);
            if (c < 6 && comma == std::string::npos)
                throw parse_error(path + ":" + std::to_string(lineno) + ": expected 7 fields");
            cell[c] = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                  : comma - pos);
            pos = comma == std::string::npos ? line.size() : comma + 1;
        }
        if (line.find(',', pos) != std::string::npos ||
            std::count(line.begin(), line.end(), ',') != 6)
            throw parse_error(path + ":" + std::to_string(lineno) + ": expected 7 fields");
        auto num = [&](const std::string& s, const char* what) {
            try {
                std::size_t used = 0;
                double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            } catch (const std::exception&) {
                throw parse_error(path + ":" + std::to_string(lineno) + ": bad " +
                                  std::string(what) + " value '" + s + "'");
            }
        };
        if (f.flow_name.empty()) f.flow_name = cell[0];
        xs.push_back(num(cell[1], "x"));
        ys.push_back(num(cell[2], "y"));
        num(cell[3], "t");
        f.u.push_back(num(cell[4], "u"));
        f.v.push_back(num(cell[5], "v"));
        if (cell[6].empty()) {
            any_missing_p = true;
            f.p.push_back(0.0);
        } else {
            f.p.push_back(num(cell[6], "p"));
        }
    }
    if (f.u.empty()) throw parse_error(path + ": no data rows");
    // rows are written y-major with x fastest; recover the grid dims
    int nx = 1;
    while (nx < static_cast<int>(ys.size()) && ys[nx] == ys[0]) ++nx;
    if (f.u.size() % nx != 0)
        throw parse_error(path + ": row count is not a multiple of the x-line length");
    f.nx = nx;
    f.ny = static_cast<int>(f.u.size()) / nx;
    f.domain = {xs.front(), xs[nx - 1], ys.front(), ys.back()};
    f.provenance = "file:" + path;
    f.has_pressure = !any_missing_p;
    return f;
}

// ---- observation sets ----

// n distinct grid nodes, uniform without replacement, deterministic per seed.
inline ObservationSet make_observation_set(const ReferenceField& field, int n, std::uint64_t seed,
                                           bool include_pressure = true) {
    const int total = field.nx * field.ny;
    if (n > total)
        throw std::invalid_argument("observation count " + std::to_string(n) +
                                    " exceeds grid node count " + std::to_string(total));
    std::vector<int> pool(total);
    for (int i = 0; i < total; ++i) pool[i] = i;
    Rng rng(derive_seed(seed, 0x0b5e));
    ObservationSet obs;
    obs.source = field.provenance;
    obs.has_pressure = include_pressure && field.has_pressure;
    for (int k = 0; k < n; ++k) {
        int pick = k + static_cast<int>(rng.below(total - k));
        std::swap(pool[k], pool[pick]);
        int node = pool[k];
        int i = node % field.nx, j = node / field.nx;
        obs.points.push_back({field.x_of(i), field.y_of(j), 0.0});
        obs.values.push_back({field.u[node], field.v[node], obs.has_pressure ? field.p[node] : 0.0});
    }
    return obs;
}

} // namespace unipinn
