#pragma once
// Navier-Stokes residuals and the three loss terms (equation residual,
// boundary mismatch, data supervision), evaluated per collocation point both
// at value level (diagnostics, oracles) and on the gradient tape (training).
// Incompressibility holds by construction through the stream function and is
// monitored as a diagnostic, not trained.

#include <array>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "unipinn/flow.hpp"
#include "unipinn/network.hpp"

namespace unipinn {

// Thread cap for point-parallel evaluation (UNIPINN_THREADS env var).
inline int eval_threads() {
    static const int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("UNIPINN_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0) hw = std::min(hw, cap);
        }
        return hw;
    }();
    return n;
}

// ---- value-level residuals ----

// Momentum residual of the incompressible equations at one point, from the
// raw-coordinate derivative set carried by the prediction.
inline std::array<double, 2> momentum_residual(const PointPrediction& pred, const FlowSpec& flow,
                                               double x, double y, double t) {
    const VelocityDerivs& d = pred.d;
    const std::array<double, 2> f =
        flow.body_force ? flow.body_force(x, y, t) : std::array<double, 2>{0.0, 0.0};
    const double inv_rho = 1.0 / flow.density;
    double ru = d.ut + d.u * d.ux + d.v * d.uy + inv_rho * d.px -
                flow.viscosity * (d.uxx + d.uyy) - f[0];
    double rv = d.vt + d.u * d.vx + d.v * d.vy + inv_rho * d.py -
                flow.viscosity * (d.vxx + d.vyy) - f[1];
    return {ru, rv};
}

// Divergence diagnostic; identically zero for stream-function predictions.
inline double continuity_residual(const PointPrediction& pred) { return pred.d.ux + pred.d.vy; }

// ---- tape-level residual ----

struct ResidualNodes {
    NodeId ru = -1, rv = -1;
};

// Mirrors momentum_residual on the tape: extracts stream-function/pressure
// derivatives, applies the normalized->raw chain rule, and combines.
inline ResidualNodes build_momentum_residual(Tape& tape, const Model& m, const FlowSpec& flow,
                                             NodeId head_out, double x, double y, double t) {
    const FeatureScales s = feature_scales(flow, m.config.input_norm_on);
    const bool unsteady = !m.config.steady;
    const double sx = s.sx, sy = s.sy, st = s.st;
    auto ex = [&](int jet, int dx, int dy, int dt, double scale) {
        return tape.scale_shift(tape.extract(head_out, jet, dx, dy, dt), scale);
    };
    NodeId u = ex(0, 0, 1, 0, sy);
    NodeId v = ex(0, 1, 0, 0, -sx);
    NodeId ux = ex(0, 1, 1, 0, sx * sy);
    NodeId uy = ex(0, 0, 2, 0, sy * sy);
    NodeId uxx = ex(0, 2, 1, 0, sx * sx * sy);
    NodeId uyy = ex(0, 0, 3, 0, sy * sy * sy);
    NodeId vx = ex(0, 2, 0, 0, -sx * sx);
    NodeId vy = ex(0, 1, 1, 0, -sx * sy);
    NodeId vxx = ex(0, 3, 0, 0, -sx * sx * sx);
    NodeId vyy = ex(0, 1, 2, 0, -sx * sy * sy);
    NodeId px = ex(1, 1, 0, 0, sx);
    NodeId py = ex(1, 0, 1, 0, sy);

    const std::array<double, 2> f =
        flow.body_force ? flow.body_force(x, y, t) : std::array<double, 2>{0.0, 0.0};
    const double inv_rho = 1.0 / flow.density;

    NodeId ru = tape.add(tape.mul(u, ux), tape.mul(v, uy));
    ru = tape.add(ru, tape.scale_shift(px, inv_rho));
    ru = tape.sub(ru, tape.scale_shift(tape.add(uxx, uyy), flow.viscosity));
    NodeId rv = tape.add(tape.mul(u, vx), tape.mul(v, vy));
    rv = tape.add(rv, tape.scale_shift(py, inv_rho));
    rv = tape.sub(rv, tape.scale_shift(tape.add(vxx, vyy), flow.viscosity));
    if (unsteady) {
        ru = tape.add(ru, ex(0, 0, 1, 1, sy * st));
        rv = tape.add(rv, ex(0, 1, 0, 1, -sx * st));
    }
    if (f[0] != 0.0) ru = tape.scale_shift(ru, 1.0, -f[0]);
    if (f[1] != 0.0) rv = tape.scale_shift(rv, 1.0, -f[1]);
    return {ru, rv};
}

// ---- loss assembly ----

struct LossBreakdown {
    double eq = 0.0, bc = 0.0, data = 0.0;
    double total() const { return eq + bc + data; }
};

enum class TaskKind { interior, boundary, observation, pressure_pin };

struct PointTask {
    TaskKind kind;
    int flow_idx = 0;                // loss slot / FlowSpec index in the executor
    int branch = 0;                  // model branch (embedding, attention slot, head)
    double x = 0, y = 0, t = 0;
    int segment = -1;                // boundary tasks
    std::array<double, 3> obs{};     // observation values (u, v, p)
    bool obs_has_p = true;
    double inv_denom = 1.0;          // 1/N of the term this task belongs to
    double weight = 1.0;             // gradient seed multiplier (DWA weight)
};

namespace lossdetail {

inline int task_degree(const PointTask& task, const FlowSpec& flow) {
    switch (task.kind) {
        case TaskKind::interior: return 3;
        case TaskKind::boundary: {
            BcKind k = flow.boundary[task.segment].kind;
            return (k == BcKind::zero_normal_gradient || k == BcKind::outflow) ? 2 : 1;
        }
        default: return 1;
    }
}

// Builds the squared-mismatch contribution node for one task.  Returns the
// scalar node; the caller reads its value and seeds its adjoint.
inline NodeId build_task_contribution(Tape& tape, const Model& m, const FlowSpec& flow,
                                      const PointTask& task) {
    ForwardNodes fn = build_point_forward(tape, m, flow, task.branch, task.x, task.y, task.t);
    const FeatureScales s = feature_scales(flow, m.config.input_norm_on);
    auto ex = [&](int jet, int dx, int dy, int dt, double scale) {
        return tape.scale_shift(tape.extract(fn.head_out, jet, dx, dy, dt), scale);
    };
    switch (task.kind) {
        case TaskKind::interior: {
            ResidualNodes r = build_momentum_residual(tape, m, flow, fn.head_out, task.x, task.y,
                                                      task.t);
            return tape.add(tape.square_fn(r.ru), tape.square_fn(r.rv));
        }
        case TaskKind::boundary: {
            const BoundarySegment& seg = flow.boundary[task.segment];
            switch (seg.kind) {
                case BcKind::velocity: {
                    auto bc = seg.velocity(task.x, task.y, task.t);
                    NodeId du = tape.scale_shift(ex(0, 0, 1, 0, s.sy), 1.0, -bc[0]);
                    NodeId dv = tape.scale_shift(ex(0, 1, 0, 0, -s.sx), 1.0, -bc[1]);
                    return tape.add(tape.square_fn(du), tape.square_fn(dv));
                }
                case BcKind::pressure: {
                    NodeId dp = tape.scale_shift(tape.extract(fn.head_out, 1, 0, 0, 0), 1.0,
                                                 -seg.pressure_value);
                    return tape.square_fn(dp);
                }
                case BcKind::zero_normal_gradient:
                case BcKind::outflow: {
                    auto nvec = detail::outward_normal(seg.edge);
                    // normal derivative of the streamwise velocity u
                    NodeId dudn;
                    if (nvec[0] != 0.0)
                        dudn = ex(0, 1, 1, 0, nvec[0] * s.sx * s.sy); // du/dx
                    else
                        dudn = ex(0, 0, 2, 0, nvec[1] * s.sy * s.sy); // du/dy
                    NodeId contrib = tape.square_fn(dudn);
                    if (seg.kind == BcKind::outflow) {
                        NodeId dp = tape.scale_shift(tape.extract(fn.head_out, 1, 0, 0, 0), 1.0,
                                                     -seg.pressure_value);
                        contrib = tape.add(contrib, tape.square_fn(dp));
                    }
                    return contrib;
                }
            }
            throw std::logic_error("unreachable boundary kind");
        }
        case TaskKind::observation: {
            NodeId du = tape.scale_shift(ex(0, 0, 1, 0, s.sy), 1.0, -task.obs[0]);
            NodeId dv = tape.scale_shift(ex(0, 1, 0, 0, -s.sx), 1.0, -task.obs[1]);
            NodeId contrib = tape.add(tape.square_fn(du), tape.square_fn(dv));
            if (task.obs_has_p) {
                NodeId dp = tape.scale_shift(tape.extract(fn.head_out, 1, 0, 0, 0), 1.0,
                                             -task.obs[2]);
                contrib = tape.add(contrib, tape.square_fn(dp));
            }
            return contrib;
        }
        case TaskKind::pressure_pin: {
            NodeId dp = tape.scale_shift(tape.extract(fn.head_out, 1, 0, 0, 0), 1.0,
                                         -task.obs[2]);
            return tape.square_fn(dp);
        }
    }
    throw std::logic_error("unreachable task kind");
}

inline const char* term_name(TaskKind k) {
    switch (k) {
        case TaskKind::interior: return "L_eq";
        case TaskKind::boundary: return "L_bc";
        case TaskKind::observation: return "L_data";
        default: return "L_bc(pin)";
    }
}

} // namespace lossdetail

// Chunked deterministic executor: tasks are split into a fixed number of
// chunks, each chunk accumulates its own loss/gradient partials sequentially,
// and partials merge in chunk order.  Results are identical for any thread
// count.
class LossExecutor {
public:
    LossExecutor(const Model& model, std::span<const FlowSpec> flows)
        : model_(&model), flows_(flows.begin(), flows.end()) {}

    static constexpr int kChunks = 16;

    // Accumulates weighted gradients into `grad` (when non-empty) and returns
    // per-flow loss breakdowns (unweighted).
    std::vector<LossBreakdown> run(std::span<const PointTask> tasks, std::span<double> grad) {
        const int n_flows = static_cast<int>(flows_.size());
        const bool want_grad = !grad.empty();
        const std::size_t n = tasks.size();
        struct ChunkAccum {
            std::vector<LossBreakdown> sums;
            std::vector<double> grad;
            std::string error;
        };
        std::vector<ChunkAccum> chunks(kChunks);
        for (auto& c : chunks) c.sums.assign(n_flows, {});

        int threads = std::min(eval_threads(), kChunks);
        ensure_workspaces(threads);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
#endif
        for (int ci = 0; ci < kChunks; ++ci) {
            ChunkAccum& acc = chunks[ci];
            const std::size_t lo = n * ci / kChunks;
            const std::size_t hi = n * (ci + 1) / kChunks;
            if (lo == hi) continue;
            if (want_grad) acc.grad.assign(model_->values.size(), 0.0);
#ifdef _OPENMP
            Tape& tape = *workspaces_[omp_get_thread_num()];
#else
            Tape& tape = *workspaces_[0];
#endif
            try {
                for (std::size_t i = lo; i < hi; ++i) {
                    const PointTask& task = tasks[i];
                    const FlowSpec& flow = flows_[task.flow_idx];
                    tape.set_shape(model_->config.jet_shape(
                        lossdetail::task_degree(task, flow)));
                    auto mark = tape.mark();
                    NodeId contrib =
                        lossdetail::build_task_contribution(tape, *model_, flow, task);
                    double val = tape.value0(contrib);
                    if (!std::isfinite(val))
                        throw numeric_error(std::string("non-finite ") +
                                            lossdetail::term_name(task.kind) + " for flow " +
                                            flow.name + " at (" + std::to_string(task.x) + ", " +
                                            std::to_string(task.y) + ")");
                    LossBreakdown& s = acc.sums[task.flow_idx];
                    double c = val * task.inv_denom;
                    switch (task.kind) {
                        case TaskKind::interior: s.eq += c; break;
                        case TaskKind::observation: s.data += c; break;
                        default: s.bc += c; break;
                    }
                    if (want_grad)
                        tape.backward(contrib, task.weight * task.inv_denom,
                                      {acc.grad.data(), acc.grad.size()});
                    tape.rewind(mark);
                }
            } catch (const std::exception& e) {
                acc.error = e.what();
            }
        }
        for (const auto& c : chunks)
            if (!c.error.empty()) throw numeric_error(c.error);
        std::vector<LossBreakdown> out(n_flows);
        for (const auto& c : chunks) {
            for (int f = 0; f < n_flows; ++f) {
                out[f].eq += c.sums[f].eq;
                out[f].bc += c.sums[f].bc;
                out[f].data += c.sums[f].data;
            }
            if (want_grad && !c.grad.empty())
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += c.grad[i];
        }
        return out;
    }

private:
    const Model* model_;
    std::vector<FlowSpec> flows_;
    std::vector<std::unique_ptr<Tape>> workspaces_;

    void ensure_workspaces(int threads) {
        while (static_cast<int>(workspaces_.size()) < threads)
            workspaces_.push_back(
                std::make_unique<Tape>(model_->params(), model_->config.jet_shape(), false));
        for (auto& w : workspaces_) w->bind_params(model_->params());
    }
};

// Builds the task list for one flow: interior residual points, boundary
// points, observations and the optional pressure pin.  `flow_idx` selects the
// loss slot within the executor, `branch` the model branch to evaluate.
inline std::vector<PointTask> make_flow_tasks(int flow_idx, int branch, const FlowSpec& flow,
                                              const CollocationBatch& batch,
                                              const ObservationSet* obs, double weight) {
    std::vector<PointTask> tasks;
    tasks.reserve(batch.interior.size() + batch.boundary.size() + (obs ? obs->points.size() : 0) +
                  1);
    const double inv_eq = batch.interior.empty() ? 0.0 : 1.0 / batch.interior.size();
    for (const auto& p : batch.interior) {
        PointTask t;
        t.kind = TaskKind::interior;
        t.flow_idx = flow_idx;
        t.branch = branch;
        t.x = p[0];
        t.y = p[1];
        t.t = p[2];
        t.inv_denom = inv_eq;
        t.weight = weight;
        tasks.push_back(t);
    }
    const double inv_bc = batch.boundary.empty() ? 0.0 : 1.0 / batch.boundary.size();
    for (const auto& bp : batch.boundary) {
        PointTask t;
        t.kind = TaskKind::boundary;
        t.flow_idx = flow_idx;
        t.branch = branch;
        t.x = bp.x;
        t.y = bp.y;
        t.t = bp.t;
        t.segment = bp.segment;
        t.inv_denom = inv_bc;
        t.weight = weight;
        tasks.push_back(t);
    }
    if (obs && !obs->points.empty()) {
        const double inv_d = 1.0 / obs->points.size();
        for (std::size_t i = 0; i < obs->points.size(); ++i) {
            PointTask t;
            t.kind = TaskKind::observation;
            t.flow_idx = flow_idx;
            t.branch = branch;
            t.x = obs->points[i][0];
            t.y = obs->points[i][1];
            t.t = obs->points[i][2];
            t.obs = obs->values[i];
            t.obs_has_p = obs->has_pressure;
            t.inv_denom = inv_d;
            t.weight = weight;
            tasks.push_back(t);
        }
    }
    if (flow.pressure_pin) {
        PointTask t;
        t.kind = TaskKind::pressure_pin;
        t.flow_idx = flow_idx;
        t.branch = branch;
        t.x = (*flow.pressure_pin)[0];
        t.y = (*flow.pressure_pin)[1];
        t.t = 0.0;
        t.obs = {0.0, 0.0, (*flow.pressure_pin)[2]};
        t.inv_denom = 1.0; // pin mismatch is added to L_bc, not averaged in
        t.weight = weight;
        tasks.push_back(t);
    }
    return tasks;
}

// Per-flow losses (and optional parameter gradients) for one batch.  The
// model branch is taken from flow.id.
inline LossBreakdown compute_losses(const Model& model, const FlowSpec& flow,
                                    const CollocationBatch& batch, const ObservationSet* obs,
                                    std::span<double> grad = {}, double weight = 1.0) {
    if (flow.id < 0 || flow.id >= model.config.n_flows)
        throw std::invalid_argument("flow id " + std::to_string(flow.id) +
                                    " has no branch in this model");
    std::vector<FlowSpec> one = {flow};
    std::vector<PointTask> tasks = make_flow_tasks(0, flow.id, flow, batch, obs, weight);
    LossExecutor ex(model, one);
    return ex.run(tasks, grad)[0];
}

} // namespace unipinn
