#pragma once
// Joint multi-flow training loop: per-epoch batch sampling, weighted loss
// accumulation, one Adam step, DWA update, metrics logging, divergence
// guards, and binary checkpointing.

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "unipinn/dwa.hpp"
#include "unipinn/oracle.hpp"
#include "unipinn/physics.hpp"

namespace unipinn {

struct TrainConfig {
    ModelConfig model;
    int max_epochs = 6000;
    double learning_rate = 1e-3;
    double lr_decay_factor = 0.5;
    int lr_decay_interval = 2000;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    int batch_interior = 512;
    int batch_boundary = 128;
    int obs_count = 200;
    bool dwa_on = true;
    double dwa_tau = 2.0, dwa_gamma = 0.9;
    DwaSign dwa_sign = DwaSign::prose;
    DwaScale dwa_scale = DwaScale::sum_to_n;
    std::uint64_t seed = 7;
    bool reproducible = true; // deterministic reductions, zeroed wall-clock column
    double divergence_threshold = 1e6;
    int divergence_patience = 100;
    std::vector<std::string> frozen_prefixes; // parameter blocks excluded from updates
    std::vector<int> active_flows;            // train only these flows' losses (empty = all)

    void validate(std::size_t n_flows) const {
        if (max_epochs < 1) throw config_error("max_epochs must be >= 1");
        if (learning_rate <= 0.0) throw config_error("learning_rate must be positive");
        if (batch_interior < 1 || batch_boundary < 1)
            throw config_error("batch sizes must be positive");
        if (model.n_flows != static_cast<int>(n_flows))
            throw config_error("model.n_flows != number of flows");
    }
};

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
};

// Standard bias-corrected Adam over the flat parameter vector; entries of
// frozen blocks are skipped.
inline void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                        double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                        const std::vector<std::pair<int, int>>* frozen_ranges = nullptr) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.step = 0;
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    std::vector<std::uint8_t> frozen;
    if (frozen_ranges && !frozen_ranges->empty()) {
        frozen.assign(params.size(), 0);
        for (auto [off, count] : *frozen_ranges)
            for (int i = 0; i < count; ++i) frozen[off + i] = 1;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        if (!frozen.empty() && frozen[i]) continue;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

struct MetricsRow {
    int epoch = 0;
    std::vector<LossBreakdown> per_flow;
    std::vector<double> weights;
    double alpha = 0.5;
    double unweighted_total = 0.0;
    double seconds = 0.0;
};

struct Checkpoint {
    Model model;
    AdamState adam;
    DwaState dwa;
    int epoch = 0;
    std::uint64_t config_hash = 0;
};

// Thrown when training hits non-finite losses or the divergence guard; the
// last epoch that completed cleanly rides along.
class training_aborted : public numeric_error {
public:
    training_aborted(const std::string& what, Checkpoint last_good)
        : numeric_error(what), last_good_(std::move(last_good)) {}
    const Checkpoint& last_good() const { return last_good_; }

private:
    Checkpoint last_good_;
};

struct TrainResult {
    Model model;
    AdamState adam;
    DwaState dwa;
    std::vector<MetricsRow> metrics;
    int epochs_run = 0;
};

// Per-epoch hook; return false to stop early (budget control in harnesses).
using EpochCallback = std::function<bool(const MetricsRow&, const Model&)>;

inline std::vector<std::pair<int, int>> frozen_ranges_for(const ParamLayout& layout,
                                                          const std::vector<std::string>& prefixes) {
    std::vector<std::pair<int, int>> ranges;
    for (const ParamBlock& b : layout.blocks())
        for (const std::string& p : prefixes)
            if (b.name.rfind(p, 0) == 0) {
                ranges.push_back({b.offset, b.count()});
                break;
            }
    return ranges;
}

// Algorithm: per epoch, sample fresh batches per flow, accumulate the
// weighted batch loss gradient, take one Adam step, then update the DWA
// weights (epochs 1 and 2 keep every weight at 1).
inline TrainResult train(const TrainConfig& cfg, std::span<const FlowSpec> flows,
                         std::span<const ObservationSet> obs, const Checkpoint* resume = nullptr,
                         const EpochCallback& callback = nullptr) {
    cfg.validate(flows.size());
    const int n_flows = static_cast<int>(flows.size());
    for (int i = 0; i < n_flows; ++i) {
        flows[i].validate();
        if (flows[i].id != i)
            throw config_error("flow " + flows[i].name + " must carry id " + std::to_string(i) +
                               " for this training run");
    }
    if (!obs.empty() && static_cast<int>(obs.size()) != n_flows)
        throw config_error("observation sets must match flows (or be absent)");

    std::vector<int> active = cfg.active_flows;
    if (active.empty())
        for (int i = 0; i < n_flows; ++i) active.push_back(i);
    const int n_active = static_cast<int>(active.size());

    TrainResult out;
    int start_epoch = 1;
    if (resume) {
        out.model = resume->model;
        out.adam = resume->adam;
        out.dwa = resume->dwa;
        start_epoch = resume->epoch + 1;
    } else {
        out.model = init_model(cfg.model, cfg.seed, flows);
        out.dwa = DwaState::make(n_active, cfg.dwa_tau, cfg.dwa_gamma, cfg.dwa_sign,
                                 cfg.dwa_scale);
    }
    if (static_cast<int>(out.dwa.smoothed_weights.size()) != n_active)
        out.dwa = DwaState::make(n_active, cfg.dwa_tau, cfg.dwa_gamma, cfg.dwa_sign,
                                 cfg.dwa_scale);
    Model& model = out.model;
    auto frozen = frozen_ranges_for(model.layout, cfg.frozen_prefixes);

    LossExecutor executor(model, flows);
    std::vector<double> grad(model.values.size(), 0.0);
    // weights indexed by flow; flows outside the active set carry no tasks
    std::vector<double> weights(n_flows, 0.0);
    for (int k = 0; k < n_active; ++k) weights[active[k]] = out.dwa.smoothed_weights[k];

    Checkpoint last_good{model, out.adam, out.dwa, start_epoch - 1, 0};
    int divergence_streak = 0;
    const auto t_start = std::chrono::steady_clock::now();

    for (int e = start_epoch; e <= cfg.max_epochs; ++e) {
        std::vector<PointTask> tasks;
        for (int i : active) {
            CollocationBatch batch = sample_points(flows[i], cfg.batch_interior,
                                                   cfg.batch_boundary,
                                                   derive_seed(cfg.seed, e, i));
            const ObservationSet* o = obs.empty() ? nullptr : &obs[i];
            auto flow_tasks = make_flow_tasks(i, i, flows[i], batch, o, weights[i]);
            tasks.insert(tasks.end(), flow_tasks.begin(), flow_tasks.end());
        }

        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<LossBreakdown> losses;
        try {
            losses = executor.run(tasks, {grad.data(), grad.size()});
        } catch (const numeric_error& err) {
            throw training_aborted(std::string(err.what()) + " at epoch " + std::to_string(e),
                                   last_good);
        }

        std::vector<double> totals(n_flows), active_totals(n_active);
        double unweighted = 0.0;
        for (int i = 0; i < n_flows; ++i) totals[i] = losses[i].total();
        for (int k = 0; k < n_active; ++k) {
            active_totals[k] = totals[active[k]];
            unweighted += active_totals[k];
        }
        double weighted = combine_total_loss(weights, totals);
        if (!std::isfinite(weighted))
            throw training_aborted("non-finite total loss at epoch " + std::to_string(e),
                                   last_good);

        const double lr = cfg.learning_rate *
                          std::pow(cfg.lr_decay_factor, (e - 1) / cfg.lr_decay_interval);
        adam_update({model.values.data(), model.values.size()}, {grad.data(), grad.size()},
                    out.adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                    frozen.empty() ? nullptr : &frozen);

        if (weighted > cfg.divergence_threshold) {
            if (++divergence_streak >= cfg.divergence_patience)
                throw training_aborted("loss above " + std::to_string(cfg.divergence_threshold) +
                                           " for " + std::to_string(divergence_streak) +
                                           " consecutive epochs at epoch " + std::to_string(e),
                                       last_good);
        } else {
            divergence_streak = 0;
        }

        out.dwa.epoch = e;
        if (cfg.dwa_on) {
            update_weights(out.dwa, active_totals);
        } else {
            out.dwa.prev_losses = active_totals;
        }
        for (int k = 0; k < n_active; ++k) weights[active[k]] = out.dwa.smoothed_weights[k];

        MetricsRow row;
        row.epoch = e;
        row.per_flow = losses;
        row.weights = weights;
        row.alpha = model.fusion_alpha();
        row.unweighted_total = unweighted;
        row.seconds = cfg.reproducible
                          ? 0.0
                          : std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                          t_start)
                                .count();
        out.metrics.push_back(row);
        out.epochs_run = e;

        last_good = Checkpoint{model, out.adam, out.dwa, e, 0};
        if (callback && !callback(row, model)) break;
    }
    return out;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              const std::vector<std::string>& flow_names) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "epoch,flow,L_eq,L_bc,L_data,L_total,lambda,alpha,unweighted_total,seconds\n";
    char buf[512];
    for (const MetricsRow& r : rows) {
        for (std::size_t i = 0; i < flow_names.size(); ++i) {
            std::snprintf(buf, sizeof(buf),
                          "%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f\n", r.epoch,
                          flow_names[i].c_str(), r.per_flow[i].eq, r.per_flow[i].bc,
                          r.per_flow[i].data, r.per_flow[i].total(), r.weights[i], r.alpha,
                          r.unweighted_total, r.seconds);
            out << buf;
        }
    }
}

// ---- evaluation ----

struct MseReport {
    double mse_u = 0, mse_v = 0, mse_p = 0;
    double mse_combined = 0;  // mean squared error over both velocity components
    double rel_l2_velocity = 0;
};

inline bool flow_has_pressure_gauge(const FlowSpec& flow) {
    for (const auto& s : flow.boundary)
        if (s.kind == BcKind::pressure || s.kind == BcKind::outflow) return false;
    return true;
}

// Model error against a reference field over every grid node.  Pressure is
// compared after removing each field's mean when the flow's pressure is only
// defined up to a gauge.
inline MseReport evaluate_mse(const Model& model, const FlowSpec& flow,
                              const ReferenceField& ref) {
    if (flow.id < 0 || flow.id >= model.config.n_flows)
        throw std::invalid_argument("flow id has no branch in this model");
    if (std::abs(ref.domain.x_min - flow.domain.x_min) > 1e-9 ||
        std::abs(ref.domain.x_max - flow.domain.x_max) > 1e-9 ||
        std::abs(ref.domain.y_min - flow.domain.y_min) > 1e-9 ||
        std::abs(ref.domain.y_max - flow.domain.y_max) > 1e-9)
        throw std::invalid_argument("reference grid does not cover the flow domain");

    const int total = ref.nx * ref.ny;
    std::vector<double> pu(total), pv(total), pp(total);
#ifdef _OPENMP
#pragma omp parallel num_threads(eval_threads())
#endif
    {
        Tape tape(model.params(), model.config.jet_shape(1), false);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
        for (int k = 0; k < total; ++k) {
            int i = k % ref.nx, j = k / ref.nx;
            PointPrediction pred =
                predict_point(tape, model, flow, flow.id, ref.x_of(i), ref.y_of(j), 0.0);
            pu[k] = pred.d.u;
            pv[k] = pred.d.v;
            pp[k] = pred.d.p;
        }
    }
    double pm = 0, rm = 0;
    if (flow_has_pressure_gauge(flow)) {
        for (int k = 0; k < total; ++k) {
            pm += pp[k];
            rm += ref.p[k];
        }
        pm /= total;
        rm /= total;
    }
    MseReport rep;
    double vel_num = 0, vel_den = 0;
    for (int k = 0; k < total; ++k) {
        double du = pu[k] - ref.u[k], dv = pv[k] - ref.v[k];
        double dp = (pp[k] - pm) - (ref.p[k] - rm);
        rep.mse_u += du * du;
        rep.mse_v += dv * dv;
        rep.mse_p += dp * dp;
        vel_num += du * du + dv * dv;
        vel_den += ref.u[k] * ref.u[k] + ref.v[k] * ref.v[k];
    }
    rep.mse_u /= total;
    rep.mse_v /= total;
    rep.mse_p /= total;
    rep.mse_combined = 0.5 * (rep.mse_u + rep.mse_v);
    rep.rel_l2_velocity = vel_den > 0 ? std::sqrt(vel_num / vel_den) : std::sqrt(vel_num);
    return rep;
}

// ---- checkpoint serialization ----

namespace ckptdetail {

inline void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<char*>(&v), 4); }
inline void put_i64(std::ostream& o, std::int64_t v) { o.write(reinterpret_cast<char*>(&v), 8); }
inline void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<char*>(&v), 8); }
inline void put_f64(std::ostream& o, double v) { o.write(reinterpret_cast<char*>(&v), 8); }

inline void put_name(std::ostream& o, const std::string& s) {
    std::uint16_t len = static_cast<std::uint16_t>(s.size());
    o.write(reinterpret_cast<char*>(&len), 2);
    o.write(s.data(), len);
}

inline void put_doubles(std::ostream& o, std::span<const double> d) {
    o.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(8 * d.size()));
}

struct Reader {
    std::ifstream in;
    std::string path;

    void need(std::size_t n, char* dst, const char* what) {
        in.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw parse_error(path + ": truncated checkpoint while reading " + std::string(what));
    }
    std::uint32_t u32(const char* w) {
        std::uint32_t v;
        need(4, reinterpret_cast<char*>(&v), w);
        return v;
    }
    std::int64_t i64(const char* w) {
        std::int64_t v;
        need(8, reinterpret_cast<char*>(&v), w);
        return v;
    }
    std::uint64_t u64(const char* w) {
        std::uint64_t v;
        need(8, reinterpret_cast<char*>(&v), w);
        return v;
    }
    double f64(const char* w) {
        double v;
        need(8, reinterpret_cast<char*>(&v), w);
        return v;
    }
    std::string name() {
        std::uint16_t len;
        need(2, reinterpret_cast<char*>(&len), "name length");
        std::string s(len, '\0');
        need(len, s.data(), "name");
        return s;
    }
    void doubles(std::span<double> d, const char* w) {
        need(8 * d.size(), reinterpret_cast<char*>(d.data()), w);
    }
};

} // namespace ckptdetail

inline constexpr char kCheckpointMagic[4] = {'U', 'P', 'N', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    using namespace ckptdetail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, ckpt.config_hash);
    put_i64(out, ckpt.epoch);
    const ModelConfig& mc = ckpt.model.config;
    for (int v : {mc.net.shared_layers, mc.net.hidden_dim, mc.net.tokens, mc.net.heads,
                  mc.net.key_dim, mc.net.embed_dim, mc.net.head_width, mc.n_flows,
                  mc.attention_on ? 1 : 0, mc.input_norm_on ? 1 : 0, mc.steady ? 1 : 0})
        put_u32(out, static_cast<std::uint32_t>(v));
    const auto& blocks = ckpt.model.layout.blocks();
    put_u32(out, static_cast<std::uint32_t>(blocks.size()));
    for (const ParamBlock& b : blocks) {
        put_name(out, b.name);
        put_u32(out, static_cast<std::uint32_t>(b.rows));
        put_u32(out, static_cast<std::uint32_t>(b.cols));
        put_doubles(out, {ckpt.model.values.data() + b.offset,
                          static_cast<std::size_t>(b.count())});
    }
    put_u32(out, ckpt.adam.m.empty() ? 0u : 1u);
    if (!ckpt.adam.m.empty()) {
        put_i64(out, ckpt.adam.step);
        put_doubles(out, ckpt.adam.m);
        put_doubles(out, ckpt.adam.v);
    }
    put_u32(out, static_cast<std::uint32_t>(ckpt.dwa.raw_weights.size()));
    put_i64(out, ckpt.dwa.epoch);
    put_f64(out, ckpt.dwa.temperature);
    put_f64(out, ckpt.dwa.smoothing);
    put_u32(out, ckpt.dwa.sign_mode == DwaSign::prose ? 1u : 0u);
    put_u32(out, ckpt.dwa.scale_mode == DwaScale::sum_to_n ? 1u : 0u);
    put_u32(out, static_cast<std::uint32_t>(ckpt.dwa.prev_losses.size()));
    put_doubles(out, ckpt.dwa.prev_losses);
    put_doubles(out, ckpt.dwa.raw_weights);
    put_doubles(out, ckpt.dwa.smoothed_weights);
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  std::uint64_t expected_config_hash = 0) {
    using namespace ckptdetail;
    Reader r{std::ifstream(path, std::ios::binary), path};
    if (!r.in) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    r.need(4, magic, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw parse_error(path + ": not a checkpoint file (bad magic)");
    std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw parse_error(path + ": unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_hash = r.u64("config hash");
    ckpt.epoch = static_cast<int>(r.i64("epoch"));
    if (expected_config_hash != 0 && ckpt.config_hash != expected_config_hash)
        log::warn(path + ": checkpoint was produced under a different configuration; "
                         "loading anyway (transfer use)");
    ModelConfig mc;
    mc.net.shared_layers = static_cast<int>(r.u32("shared_layers"));
    mc.net.hidden_dim = static_cast<int>(r.u32("hidden_dim"));
    mc.net.tokens = static_cast<int>(r.u32("tokens"));
    mc.net.heads = static_cast<int>(r.u32("heads"));
    mc.net.key_dim = static_cast<int>(r.u32("key_dim"));
    mc.net.embed_dim = static_cast<int>(r.u32("embed_dim"));
    mc.net.head_width = static_cast<int>(r.u32("head_width"));
    mc.n_flows = static_cast<int>(r.u32("n_flows"));
    mc.attention_on = r.u32("attention_on") != 0;
    mc.input_norm_on = r.u32("input_norm_on") != 0;
    mc.steady = r.u32("steady") != 0;
    ckpt.model.config = mc;
    ckpt.model.layout = build_layout(mc);
    ckpt.model.values.assign(ckpt.model.layout.total(), 0.0);
    std::uint32_t n_blocks = r.u32("block count");
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        std::string name = r.name();
        int rows = static_cast<int>(r.u32("rows"));
        int cols = static_cast<int>(r.u32("cols"));
        if (!ckpt.model.layout.has(name))
            throw parse_error(path + ": checkpoint tensor '" + name +
                              "' does not exist in this layout");
        const ParamBlock& blk = ckpt.model.layout.block(name);
        if (blk.rows != rows || blk.cols != cols)
            throw parse_error(path + ": tensor '" + name + "' has shape " + std::to_string(rows) +
                              "x" + std::to_string(cols) + ", expected " +
                              std::to_string(blk.rows) + "x" + std::to_string(blk.cols));
        r.doubles({ckpt.model.values.data() + blk.offset, static_cast<std::size_t>(blk.count())},
                  name.c_str());
    }
    ckpt.model.rebuild_offsets();
    if (r.u32("adam flag") != 0) {
        ckpt.adam.step = r.i64("adam step");
        ckpt.adam.m.resize(ckpt.model.values.size());
        ckpt.adam.v.resize(ckpt.model.values.size());
        r.doubles(ckpt.adam.m, "adam m");
        r.doubles(ckpt.adam.v, "adam v");
    }
    std::uint32_t n_dwa = r.u32("dwa size");
    ckpt.dwa.epoch = static_cast<int>(r.i64("dwa epoch"));
    ckpt.dwa.temperature = r.f64("dwa tau");
    ckpt.dwa.smoothing = r.f64("dwa gamma");
    ckpt.dwa.sign_mode = r.u32("dwa sign") != 0 ? DwaSign::prose : DwaSign::literal;
    ckpt.dwa.scale_mode = r.u32("dwa scale") != 0 ? DwaScale::sum_to_n : DwaScale::sum_to_1;
    std::uint32_t n_prev = r.u32("dwa prev count");
    ckpt.dwa.prev_losses.resize(n_prev);
    r.doubles(ckpt.dwa.prev_losses, "dwa prev losses");
    ckpt.dwa.raw_weights.resize(n_dwa);
    ckpt.dwa.smoothed_weights.resize(n_dwa);
    r.doubles(ckpt.dwa.raw_weights, "dwa raw weights");
    r.doubles(ckpt.dwa.smoothed_weights, "dwa smoothed weights");
    return ckpt;
}

// Copy every same-named, same-shaped block from src into dst (transfer
// warm starts); returns the copied block names.
inline std::vector<std::string> copy_matching_blocks(Model& dst, const Model& src,
                                                     const std::vector<std::string>& prefixes) {
    std::vector<std::string> copied;
    for (const ParamBlock& b : src.layout.blocks()) {
        bool wanted = prefixes.empty();
        for (const std::string& p : prefixes)
            if (b.name.rfind(p, 0) == 0) wanted = true;
        if (!wanted || !dst.layout.has(b.name)) continue;
        const ParamBlock& d = dst.layout.block(b.name);
        if (d.rows != b.rows || d.cols != b.cols) continue;
        std::copy(src.values.begin() + b.offset, src.values.begin() + b.offset + b.count(),
                  dst.values.begin() + d.offset);
        copied.push_back(b.name);
    }
    return copied;
}

} // namespace unipinn
