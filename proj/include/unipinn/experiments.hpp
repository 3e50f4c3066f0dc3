#pragma once
// Experiment harnesses: component ablation grid, cross-task transfer with a
// pretrained backbone, and the attention-slot swap (negative transfer) study.
// Each harness emits rows shaped like the corresponding result tables.

#include <sstream>
#include <string>
#include <vector>

#include "unipinn/trainer.hpp"

namespace unipinn {

// Flows (reindexed 0..n-1) with their reference fields and observation sets.
struct FlowData {
    std::vector<FlowSpec> flows;
    std::vector<ReferenceField> refs;
    std::vector<ObservationSet> obs;

    int index_of(const std::string& canonical) const {
        for (std::size_t i = 0; i < flows.size(); ++i)
            if (flows[i].name == canonical) return static_cast<int>(i);
        throw std::invalid_argument("flow not present: " + canonical);
    }
};

// Oracle data for the named flows: analytic fields for Couette/Poiseuille,
// the finite-difference solver for the cavity (velocity-only observations,
// since cavity pressure carries an arbitrary gauge).
inline FlowData prepare_flow_data(const std::vector<std::string>& names, int grid, int obs_count,
                                  std::uint64_t seed, double cavity_re = 100.0,
                                  double cavity_tol = 1e-6) {
    FlowData data;
    for (const std::string& name : names) {
        FlowSpec f = builtin_flow(name);
        f.id = static_cast<int>(data.flows.size());
        if (f.name == "lid_cavity" && cavity_re != 100.0) {
            f.reynolds = cavity_re;
            f.viscosity = f.char_velocity * f.char_length / cavity_re;
        }
        data.flows.push_back(f);
        if (f.name == "lid_cavity") {
            CavitySolverConfig cfg;
            cfg.reynolds = f.reynolds;
            cfg.grid_n = grid;
            cfg.tolerance = cavity_tol;
            data.refs.push_back(solve_cavity_fd(cfg));
            data.obs.push_back(make_observation_set(data.refs.back(), obs_count,
                                                    derive_seed(seed, 0xab5, f.id), false));
        } else {
            data.refs.push_back(analytic_reference(f, grid, grid));
            data.obs.push_back(make_observation_set(data.refs.back(), obs_count,
                                                    derive_seed(seed, 0xab5, f.id), true));
        }
    }
    return data;
}

// ---- ablation (component analysis grid) ----

struct AblationRow {
    bool attention, input_norm, dwa;
    std::vector<double> mse; // velocity MSE per flow
};

// The six toggle combinations: full model, then -DWA, -norm, -attention,
// -attention-norm, and everything off.
inline std::vector<AblationRow> run_ablation(TrainConfig base, const FlowData& data) {
    static constexpr bool kToggles[6][3] = {
        {true, true, true},  {true, true, false},  {true, false, true},
        {false, true, true}, {false, false, true}, {false, false, false},
    };
    std::vector<AblationRow> rows;
    for (const auto& tg : kToggles) {
        TrainConfig cfg = base;
        cfg.model.attention_on = tg[0];
        cfg.model.input_norm_on = tg[1];
        cfg.dwa_on = tg[2];
        TrainResult res = train(cfg, data.flows, data.obs);
        AblationRow row{tg[0], tg[1], tg[2], {}};
        for (std::size_t i = 0; i < data.flows.size(); ++i)
            row.mse.push_back(evaluate_mse(res.model, data.flows[i], data.refs[i]).mse_combined);
        rows.push_back(row);
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                               const std::vector<std::string>& flow_names) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "attention,input_norm,dwa";
    for (const auto& n : flow_names) out << ',' << n << "_mse";
    out << "\n";
    char buf[64];
    for (const AblationRow& r : rows) {
        out << (r.attention ? 1 : 0) << ',' << (r.input_norm ? 1 : 0) << ',' << (r.dwa ? 1 : 0);
        for (double m : r.mse) {
            std::snprintf(buf, sizeof(buf), ",%.6e", m);
            out << buf;
        }
        out << "\n";
    }
}

// ---- cross-task transfer ----

enum class TransferMode { scratch, frozen_backbone, fine_tuned };

struct TransferRow {
    std::string scenario;
    std::string setting;
    double final_mse = 0;
    double loss_reduction_pct = 0; // vs. the scratch arm's final MSE
    double initial_loss = 0;       // first-epoch total loss of the target
};

inline std::string transfer_scenario_label(const std::string& target) {
    if (target == "couette") return "Source: Pipe & Lid / Target: Couette";
    if (target == "lid_cavity") return "Source: Pipe & Couette / Target: Lid-Driven";
    return "Source: Couette & Lid / Target: Pipe";
}

inline std::string transfer_setting_label(TransferMode m) {
    switch (m) {
        case TransferMode::scratch: return "From scratch";
        case TransferMode::frozen_backbone: return "Frozen Backbone";
        default: return "Fine-tuned";
    }
}

// Pretrain the full multi-flow model on the two source tasks only.  The
// target branch's embedding and head receive no gradient (its loss is absent)
// and stay at their fresh initial values.
inline Checkpoint pretrain_sources(TrainConfig base, const FlowData& data, int src_a, int src_b,
                                   int pretrain_epochs) {
    TrainConfig cfg = base;
    cfg.max_epochs = pretrain_epochs;
    cfg.active_flows = {src_a, src_b};
    TrainResult res = train(cfg, data.flows, data.obs);
    return Checkpoint{res.model, res.adam, res.dwa, res.epochs_run, 0};
}

// One transfer arm.  The model keeps the full multi-flow structure; only the
// target task's losses train.  Warm modes start from the pretrained model
// (backbone, self attention, fusion and the source branches), with the target
// branch fresh from the same seed as the scratch arm.
inline TransferRow run_transfer(TrainConfig base, const FlowData& data, int src_a, int src_b,
                                int target, TransferMode mode, int target_epochs,
                                const Checkpoint* pretrained) {
    if (target == src_a || target == src_b)
        throw std::invalid_argument("transfer target must not be among the sources");
    if (mode != TransferMode::scratch && pretrained == nullptr)
        throw std::invalid_argument("warm-start transfer modes need a pretrained checkpoint");

    TrainConfig cfg = base;
    cfg.max_epochs = target_epochs;
    cfg.dwa_on = false; // single task
    cfg.active_flows = {target};

    const std::string target_tag = std::to_string(target);
    Checkpoint init;
    const Checkpoint* resume = nullptr;
    if (mode != TransferMode::scratch) {
        // pretrained weights everywhere, then reset the target branch to the
        // same fresh values the scratch arm starts from
        init.model = pretrained->model;
        Model fresh = init_model(cfg.model, cfg.seed, data.flows);
        copy_matching_blocks(init.model, fresh,
                             {"embed.f" + target_tag, "head.f" + target_tag,
                              "cross.f" + target_tag + "."});
        init.dwa = DwaState::make(1, cfg.dwa_tau, cfg.dwa_gamma, cfg.dwa_sign, cfg.dwa_scale);
        init.epoch = 0;
        resume = &init;
        if (mode == TransferMode::frozen_backbone) {
            cfg.frozen_prefixes = {"shared.", "selfattn.", "fusion.raw"};
            for (int i = 0; i < static_cast<int>(data.flows.size()); ++i) {
                if (i == target) continue;
                cfg.frozen_prefixes.push_back("embed.f" + std::to_string(i));
                cfg.frozen_prefixes.push_back("head.f" + std::to_string(i));
                cfg.frozen_prefixes.push_back("cross.f" + std::to_string(i) + ".");
            }
        }
    }
    TrainResult res = train(cfg, data.flows, data.obs, resume);

    TransferRow row;
    row.scenario = transfer_scenario_label(data.flows[target].name);
    row.setting = transfer_setting_label(mode);
    row.initial_loss = res.metrics.front().per_flow[target].total();
    row.final_mse =
        evaluate_mse(res.model, data.flows[target], data.refs[target]).mse_combined;
    if (mode == TransferMode::frozen_backbone && pretrained) {
        // freeze contract: the loaded backbone must be bit-identical
        for (const ParamBlock& b : res.model.layout.blocks())
            if (b.name.rfind("shared.", 0) == 0 || b.name.rfind("selfattn.", 0) == 0 ||
                b.name == "fusion.raw") {
                const ParamBlock& src = pretrained->model.layout.block(b.name);
                for (int i = 0; i < b.count(); ++i)
                    if (res.model.values[b.offset + i] !=
                        pretrained->model.values[src.offset + i])
                        throw numeric_error("frozen backbone changed during transfer: " + b.name);
            }
    }
    return row;
}

// All three scenarios x three settings, with one pretraining per scenario.
inline std::vector<TransferRow> run_transfer_suite(TrainConfig base, const FlowData& data,
                                                   int pretrain_epochs, int target_epochs) {
    struct Scenario {
        const char* target;
    };
    const std::vector<std::string> targets = {"couette", "lid_cavity", "poiseuille"};
    std::vector<TransferRow> rows;
    for (const std::string& target_name : targets) {
        int target = data.index_of(target_name);
        std::vector<int> sources;
        for (int i = 0; i < static_cast<int>(data.flows.size()); ++i)
            if (i != target) sources.push_back(i);
        Checkpoint pre = pretrain_sources(base, data, sources[0], sources[1], pretrain_epochs);
        double scratch_mse = 0.0;
        for (TransferMode mode :
             {TransferMode::scratch, TransferMode::frozen_backbone, TransferMode::fine_tuned}) {
            TransferRow row = run_transfer(base, data, sources[0], sources[1], target, mode,
                                           target_epochs, &pre);
            if (mode == TransferMode::scratch) {
                scratch_mse = row.final_mse;
                row.loss_reduction_pct = 0.0;
            } else {
                row.loss_reduction_pct = 100.0 * (1.0 - row.final_mse / scratch_mse);
            }
            rows.push_back(row);
        }
    }
    return rows;
}

inline void write_transfer_csv(const std::string& path, const std::vector<TransferRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "scenario,setting,final_mse,loss_reduction_pct,initial_loss\n";
    char buf[128];
    for (const TransferRow& r : rows) {
        std::snprintf(buf, sizeof(buf), ",%.6e,%.2f,%.6e\n", r.final_mse, r.loss_reduction_pct,
                      r.initial_loss);
        out << '"' << r.scenario << "\"," << r.setting << buf;
    }
}

// ---- attention-slot swap (negative transfer) ----

struct SwapRow {
    std::string target, source;
    double baseline_mse = 0;
    double swap_mse = 0;
    double relative_increase_pct = 0;
};

// Installs the source task's trained cross-attention slot into the target's
// branch, freezes it, and trains the remainder on the target task only (full
// multi-flow model; other flows' losses disabled).
inline SwapRow run_attention_swap(TrainConfig base, const FlowData& data, int source, int target,
                                  int train_epochs, const Checkpoint* joint,
                                  double baseline_mse) {
    if (source == target)
        throw std::invalid_argument("attention swap requires source != target");
    if (joint == nullptr)
        throw std::invalid_argument("attention swap needs trained per-task attention "
                                    "parameters (joint checkpoint)");

    TrainConfig cfg = base;
    cfg.max_epochs = train_epochs;
    cfg.dwa_on = false;
    cfg.active_flows = {target};
    const std::string target_slot = "cross.f" + std::to_string(target) + ".";
    const std::string source_slot = "cross.f" + std::to_string(source) + ".";
    cfg.frozen_prefixes = {target_slot};

    Checkpoint init;
    init.model = init_model(cfg.model, cfg.seed, data.flows);
    // install source slot -> target slot
    for (const ParamBlock& b : joint->model.layout.blocks()) {
        if (b.name.rfind(source_slot, 0) != 0) continue;
        std::string dst_name = target_slot + b.name.substr(source_slot.size());
        const ParamBlock& dst = init.model.layout.block(dst_name);
        std::copy(joint->model.values.begin() + b.offset,
                  joint->model.values.begin() + b.offset + b.count(),
                  init.model.values.begin() + dst.offset);
    }
    init.dwa = DwaState::make(cfg.model.n_flows, cfg.dwa_tau, cfg.dwa_gamma, cfg.dwa_sign,
                              cfg.dwa_scale);
    std::vector<double> installed;
    {
        const ParamBlock& probe = init.model.layout.block(target_slot + "h0.wq");
        installed.assign(init.model.values.begin() + probe.offset,
                         init.model.values.begin() + probe.offset + probe.count());
    }
    TrainResult res = train(cfg, data.flows, data.obs, &init);

    // freeze contract: the installed block is bitwise unchanged
    const ParamBlock& probe = res.model.layout.block(target_slot + "h0.wq");
    for (int i = 0; i < probe.count(); ++i)
        if (res.model.values[probe.offset + i] != installed[i])
            throw numeric_error("frozen attention slot changed during swap training");

    SwapRow row;
    row.target = data.flows[target].name;
    row.source = data.flows[source].name;
    row.baseline_mse = baseline_mse;
    row.swap_mse = evaluate_mse(res.model, data.flows[target], data.refs[target]).mse_combined;
    row.relative_increase_pct = 100.0 * (row.swap_mse - baseline_mse) / baseline_mse;
    return row;
}

// Joint training once, then per target: its own baseline plus a swap from
// each other flow (3 x 3 grid minus the diagonal).
inline std::vector<SwapRow> run_attention_swap_suite(TrainConfig base, const FlowData& data,
                                                     int joint_epochs, int train_epochs) {
    TrainConfig joint_cfg = base;
    joint_cfg.max_epochs = joint_epochs;
    TrainResult joint_res = train(joint_cfg, data.flows, data.obs);
    Checkpoint joint{joint_res.model, joint_res.adam, joint_res.dwa, joint_res.epochs_run, 0};

    const int n = static_cast<int>(data.flows.size());
    std::vector<double> baseline(n, 0.0);
    for (int target = 0; target < n; ++target) {
        TrainConfig cfg = base;
        cfg.max_epochs = train_epochs;
        cfg.dwa_on = false;
        cfg.active_flows = {target};
        TrainResult res = train(cfg, data.flows, data.obs);
        baseline[target] =
            evaluate_mse(res.model, data.flows[target], data.refs[target]).mse_combined;
    }
    std::vector<SwapRow> rows;
    for (int target = 0; target < n; ++target)
        for (int source = 0; source < n; ++source) {
            if (source == target) continue;
            rows.push_back(run_attention_swap(base, data, source, target, train_epochs, &joint,
                                              baseline[target]));
        }
    return rows;
}

inline void write_swap_csv(const std::string& path, const std::vector<SwapRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "target,source,baseline_mse,swap_mse,relative_increase_pct\n";
    char buf[128];
    for (const SwapRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.6e,%.6e,%.2f\n", r.baseline_mse, r.swap_mse,
                      r.relative_increase_pct);
        out << r.target << ',' << r.source << ',' << buf;
    }
}

} // namespace unipinn
