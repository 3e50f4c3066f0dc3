#pragma once
// Command-line front end: wires configuration (flags > config file >
// defaults), oracle generation, training, evaluation, and the experiment
// harnesses into reproducible run directories.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unipinn/experiments.hpp"

namespace unipinn::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct RunSettings {
    std::vector<std::string> flows = {"cavity", "pipe", "couette"};
    std::uint64_t seed = 7;
    int epochs = 6000;
    int pretrain_epochs = 1200;
    int joint_epochs = 1200;
    double learning_rate = 1e-3;
    double lr_decay_factor = 0.5;
    int lr_decay_interval = 2000;
    int batch_interior = 512;
    int batch_boundary = 128;
    int obs_count = 200;
    double tau = 2.0;
    double gamma = 0.9;
    std::string dwa_sign = "prose";
    std::string dwa_scale = "sum_to_n";
    bool attention = true;
    bool input_norm = true;
    bool dwa = true;
    bool steady = true;
    bool reproducible = true;
    int grid = 65;
    double cavity_re = 100.0;
    double cavity_tol = 1e-6;
    NetConfig net;
    std::map<std::string, std::map<std::string, double>> flow_overrides;

    json to_json() const {
        json j;
        j["flows"] = flows;
        j["seed"] = seed;
        j["epochs"] = epochs;
        j["pretrain_epochs"] = pretrain_epochs;
        j["joint_epochs"] = joint_epochs;
        j["learning_rate"] = learning_rate;
        j["lr_decay_factor"] = lr_decay_factor;
        j["lr_decay_interval"] = lr_decay_interval;
        j["batch_interior"] = batch_interior;
        j["batch_boundary"] = batch_boundary;
        j["obs_count"] = obs_count;
        j["tau"] = tau;
        j["gamma"] = gamma;
        j["dwa_sign"] = dwa_sign;
        j["dwa_scale"] = dwa_scale;
        j["attention"] = attention;
        j["input_norm"] = input_norm;
        j["dwa"] = dwa;
        j["steady"] = steady;
        j["reproducible"] = reproducible;
        j["grid"] = grid;
        j["cavity_re"] = cavity_re;
        j["cavity_tol"] = cavity_tol;
        j["net"] = {{"shared_layers", net.shared_layers}, {"hidden_dim", net.hidden_dim},
                    {"tokens", net.tokens},               {"heads", net.heads},
                    {"key_dim", net.key_dim},             {"embed_dim", net.embed_dim},
                    {"head_width", net.head_width}};
        if (!flow_overrides.empty()) {
            json fo;
            for (const auto& [flow, kv] : flow_overrides) {
                json e;
                for (const auto& [k, v] : kv) e[k] = v;
                fo[flow] = e;
            }
            j["flow_overrides"] = fo;
        }
        return j;
    }

    void apply_config_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw parse_error(path + ": invalid JSON: " + e.what());
        }
        static const std::set<std::string> known = {
            "flows",         "seed",           "epochs",         "pretrain_epochs",
            "joint_epochs",  "learning_rate",  "lr_decay_factor", "lr_decay_interval",
            "batch_interior", "batch_boundary", "obs_count",      "tau",
            "gamma",         "dwa_sign",       "dwa_scale",      "attention",
            "input_norm",    "dwa",            "steady",         "reproducible",
            "grid",          "cavity_re",      "cavity_tol",     "net",
            "flow_overrides"};
        static const std::set<std::string> known_net = {"shared_layers", "hidden_dim", "tokens",
                                                        "heads",         "key_dim",    "embed_dim",
                                                        "head_width"};
        static const std::set<std::string> known_override = {"viscosity", "density",
                                                             "char_length", "char_velocity"};
        for (const auto& [key, val] : j.items()) {
            if (!known.count(key)) throw parse_error(path + ": unknown config key '" + key + "'");
            if (key == "flows") flows = val.get<std::vector<std::string>>();
            else if (key == "seed") seed = val.get<std::uint64_t>();
            else if (key == "epochs") epochs = val.get<int>();
            else if (key == "pretrain_epochs") pretrain_epochs = val.get<int>();
            else if (key == "joint_epochs") joint_epochs = val.get<int>();
            else if (key == "learning_rate") learning_rate = val.get<double>();
            else if (key == "lr_decay_factor") lr_decay_factor = val.get<double>();
            else if (key == "lr_decay_interval") lr_decay_interval = val.get<int>();
            else if (key == "batch_interior") batch_interior = val.get<int>();
            else if (key == "batch_boundary") batch_boundary = val.get<int>();
            else if (key == "obs_count") obs_count = val.get<int>();
            else if (key == "tau") tau = val.get<double>();
            else if (key == "gamma") gamma = val.get<double>();
            else if (key == "dwa_sign") dwa_sign = val.get<std::string>();
            else if (key == "dwa_scale") dwa_scale = val.get<std::string>();
            else if (key == "attention") attention = val.get<bool>();
            else if (key == "input_norm") input_norm = val.get<bool>();
            else if (key == "dwa") dwa = val.get<bool>();
            else if (key == "steady") steady = val.get<bool>();
            else if (key == "reproducible") reproducible = val.get<bool>();
            else if (key == "grid") grid = val.get<int>();
            else if (key == "cavity_re") cavity_re = val.get<double>();
            else if (key == "cavity_tol") cavity_tol = val.get<double>();
            else if (key == "net") {
                for (const auto& [nk, nv] : val.items()) {
                    if (!known_net.count(nk))
                        throw parse_error(path + ": unknown net key '" + nk + "'");
                    if (nk == "shared_layers") net.shared_layers = nv.get<int>();
                    else if (nk == "hidden_dim") net.hidden_dim = nv.get<int>();
                    else if (nk == "tokens") net.tokens = nv.get<int>();
                    else if (nk == "heads") net.heads = nv.get<int>();
                    else if (nk == "key_dim") net.key_dim = nv.get<int>();
                    else if (nk == "embed_dim") net.embed_dim = nv.get<int>();
                    else if (nk == "head_width") net.head_width = nv.get<int>();
                }
            } else if (key == "flow_overrides") {
                for (const auto& [fk, fv] : val.items()) {
                    builtin_flow(fk); // validates the name
                    for (const auto& [pk, pv] : fv.items()) {
                        if (!known_override.count(pk))
                            throw parse_error(path + ": unknown flow override '" + pk + "'");
                        flow_overrides[fk][pk] = pv.get<double>();
                    }
                }
            }
        }
    }

    TrainConfig train_config(int n_flows) const {
        TrainConfig cfg;
        cfg.model.net = net;
        cfg.model.n_flows = n_flows;
        cfg.model.attention_on = attention;
        cfg.model.input_norm_on = input_norm;
        cfg.model.steady = steady;
        cfg.max_epochs = epochs;
        cfg.learning_rate = learning_rate;
        cfg.lr_decay_factor = lr_decay_factor;
        cfg.lr_decay_interval = lr_decay_interval;
        cfg.batch_interior = batch_interior;
        cfg.batch_boundary = batch_boundary;
        cfg.obs_count = obs_count;
        cfg.dwa_on = dwa;
        cfg.dwa_tau = tau;
        cfg.dwa_gamma = gamma;
        cfg.dwa_sign = dwa_sign == "literal" ? DwaSign::literal : DwaSign::prose;
        cfg.dwa_scale = dwa_scale == "sum_to_1" ? DwaScale::sum_to_1 : DwaScale::sum_to_n;
        cfg.seed = seed;
        cfg.reproducible = reproducible;
        return cfg;
    }

    FlowData flow_data() const {
        FlowData data = prepare_flow_data(flows, grid, obs_count, seed, cavity_re, cavity_tol);
        for (auto& f : data.flows) {
            auto it = flow_overrides.find(f.name);
            if (it == flow_overrides.end()) {
                // also accept alias keys
                for (const auto& [alias, kv] : flow_overrides)
                    if (builtin_flow(alias).name == f.name) it = flow_overrides.find(alias);
            }
            if (it == flow_overrides.end()) continue;
            for (const auto& [k, v] : it->second) {
                if (k == "viscosity") f.viscosity = v;
                else if (k == "density") f.density = v;
                else if (k == "char_length") f.char_length = v;
                else if (k == "char_velocity") f.char_velocity = v;
            }
            f.reynolds = f.char_velocity * f.char_length / f.viscosity;
        }
        return data;
    }
};

inline void write_resolved_config(const RunSettings& s, const std::string& out_dir,
                                  const std::string& command) {
    fs::create_directories(out_dir);
    json j = s.to_json();
    j["command"] = command;
    std::ofstream out(fs::path(out_dir) / "resolved_config");
    out << j.dump(2) << "\n";
}

inline std::uint64_t settings_hash(const RunSettings& s) {
    std::string dump = s.to_json().dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (char c : dump) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// ---- per-command implementations ----

inline int cmd_generate_reference(const RunSettings& s, const std::string& flow_name,
                                  const std::string& out_dir) {
    fs::create_directories(out_dir);
    FlowSpec flow = builtin_flow(flow_name);
    ReferenceField field;
    if (flow.name == "lid_cavity") {
        CavitySolverConfig cfg;
        cfg.reynolds = s.cavity_re;
        cfg.grid_n = s.grid;
        cfg.tolerance = s.cavity_tol;
        field = solve_cavity_fd(cfg);
    } else {
        field = analytic_reference(flow, s.grid, s.grid);
    }
    write_reference_csv(field, (fs::path(out_dir) / (flow.name + ".csv")).string());
    ObservationSet obs = make_observation_set(field, std::min(s.obs_count, field.nx * field.ny),
                                              derive_seed(s.seed, 0xab5, flow.id),
                                              flow.name != "lid_cavity");
    ReferenceField obs_field;
    obs_field.flow_name = flow.name;
    obs_field.domain = field.domain;
    obs_field.nx = static_cast<int>(obs.points.size());
    obs_field.ny = 1;
    // write observations through the same CSV contract, one row per point
    {
        std::ofstream out(fs::path(out_dir) / (flow.name + "_obs.csv"));
        out << kReferenceHeader << "\n";
        for (std::size_t i = 0; i < obs.points.size(); ++i) {
            out << flow.name << ',' << oracledetail::fmt17(obs.points[i][0]) << ','
                << oracledetail::fmt17(obs.points[i][1]) << ",0,"
                << oracledetail::fmt17(obs.values[i][0]) << ','
                << oracledetail::fmt17(obs.values[i][1]) << ',';
            if (obs.has_pressure) out << oracledetail::fmt17(obs.values[i][2]);
            out << "\n";
        }
    }
    std::printf("wrote %s/%s.csv (%dx%d) and %s_obs.csv (%zu points)\n", out_dir.c_str(),
                flow.name.c_str(), field.nx, field.ny, flow.name.c_str(), obs.points.size());
    return 0;
}

inline int cmd_train(const RunSettings& s, const std::string& out_dir) {
    write_resolved_config(s, out_dir, "train");
    FlowData data = s.flow_data();
    TrainConfig cfg = s.train_config(static_cast<int>(data.flows.size()));
    std::vector<std::string> names;
    for (const auto& f : data.flows) names.push_back(f.name);
    try {
        TrainResult res = train(cfg, data.flows, data.obs);
        write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), res.metrics, names);
        Checkpoint ckpt{res.model, res.adam, res.dwa, res.epochs_run, settings_hash(s)};
        save_checkpoint(ckpt, (fs::path(out_dir) / "checkpoint.bin").string());
    } catch (const training_aborted& e) {
        save_checkpoint(e.last_good(), (fs::path(out_dir) / "last_good.ckpt").string());
        std::fprintf(stderr, "training aborted: %s (last good state saved)\n", e.what());
        return 2;
    }
    std::printf("training complete; run directory: %s\n", out_dir.c_str());
    return 0;
}

inline int cmd_eval(const RunSettings& s, const std::string& ckpt_path,
                    const std::string& refs_dir, const std::string& out_dir) {
    write_resolved_config(s, out_dir, "eval");
    Checkpoint ckpt = load_checkpoint(ckpt_path, settings_hash(s));
    FlowData data = s.flow_data();
    std::ofstream mse_out(fs::path(out_dir) / "mse.csv");
    mse_out << "flow,mse_u,mse_v,mse_p,mse_combined,rel_l2_velocity\n";
    for (std::size_t i = 0; i < data.flows.size(); ++i) {
        const FlowSpec& flow = data.flows[i];
        ReferenceField ref = data.refs[i];
        if (!refs_dir.empty()) {
            fs::path p = fs::path(refs_dir) / (flow.name + ".csv");
            if (fs::exists(p)) ref = read_reference_csv(p.string());
        }
        MseReport rep = evaluate_mse(ckpt.model, flow, ref);
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%.6e,%.6e,%.6e,%.6e,%.6e\n", flow.name.c_str(),
                      rep.mse_u, rep.mse_v, rep.mse_p, rep.mse_combined, rep.rel_l2_velocity);
        mse_out << buf;
        // streamline grid: one row per evaluation node
        std::ofstream sl(fs::path(out_dir) / ("streamlines_" + flow.name + ".csv"));
        sl << "x,y,u,v\n";
        Tape tape(ckpt.model.params(), ckpt.model.config.jet_shape(1), false);
        for (int j = 0; j < ref.ny; ++j)
            for (int ii = 0; ii < ref.nx; ++ii) {
                PointPrediction pred = predict_point(tape, ckpt.model, flow, flow.id,
                                                     ref.x_of(ii), ref.y_of(j), 0.0);
                std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g\n", ref.x_of(ii),
                              ref.y_of(j), pred.d.u, pred.d.v);
                sl << buf;
            }
    }
    std::printf("evaluation written to %s\n", out_dir.c_str());
    return 0;
}

inline int cmd_ablate(const RunSettings& s, const std::string& out_dir) {
    write_resolved_config(s, out_dir, "ablate");
    FlowData data = s.flow_data();
    TrainConfig cfg = s.train_config(static_cast<int>(data.flows.size()));
    auto rows = run_ablation(cfg, data);
    std::vector<std::string> names;
    for (const auto& f : data.flows) names.push_back(f.name);
    write_ablation_csv((fs::path(out_dir) / "table2.csv").string(), rows, names);
    std::printf("ablation table written to %s/table2.csv\n", out_dir.c_str());
    return 0;
}

inline int cmd_transfer(const RunSettings& s, const std::string& mode_str,
                        const std::string& out_dir) {
    write_resolved_config(s, out_dir, "transfer");
    FlowData data = s.flow_data();
    TrainConfig cfg = s.train_config(3);
    std::vector<TransferRow> rows;
    if (mode_str.empty()) {
        rows = run_transfer_suite(cfg, data, s.pretrain_epochs, s.epochs);
    } else {
        TransferMode mode = mode_str == "scratch" ? TransferMode::scratch
                            : mode_str == "frozen" ? TransferMode::frozen_backbone
                                                   : TransferMode::fine_tuned;
        for (const std::string& target_name : {std::string("couette"), std::string("lid_cavity"),
                                               std::string("poiseuille")}) {
            int target = data.index_of(target_name);
            std::vector<int> sources;
            for (int i = 0; i < 3; ++i)
                if (i != target) sources.push_back(i);
            Checkpoint pre = pretrain_sources(cfg, data, sources[0], sources[1],
                                              s.pretrain_epochs);
            TransferRow scratch = run_transfer(cfg, data, sources[0], sources[1], target,
                                               TransferMode::scratch, s.epochs, &pre);
            scratch.loss_reduction_pct = 0.0;
            if (mode == TransferMode::scratch) {
                rows.push_back(scratch);
            } else {
                TransferRow row = run_transfer(cfg, data, sources[0], sources[1], target, mode,
                                               s.epochs, &pre);
                row.loss_reduction_pct = 100.0 * (1.0 - row.final_mse / scratch.final_mse);
                rows.push_back(scratch);
                rows.push_back(row);
            }
        }
    }
    write_transfer_csv((fs::path(out_dir) / "transfer.csv").string(), rows);
    std::printf("transfer table written to %s/transfer.csv\n", out_dir.c_str());
    return 0;
}

inline int cmd_swap_attention(const RunSettings& s, const std::string& out_dir) {
    write_resolved_config(s, out_dir, "swap-attention");
    FlowData data = s.flow_data();
    TrainConfig cfg = s.train_config(3);
    auto rows = run_attention_swap_suite(cfg, data, s.joint_epochs, s.epochs);
    write_swap_csv((fs::path(out_dir) / "swap.csv").string(), rows);
    std::printf("negative-transfer table written to %s/swap.csv\n", out_dir.c_str());
    return 0;
}

inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream summary(fs::path(out_dir) / "summary.csv");
    summary << "run,flow,final_L_eq,final_L_bc,final_L_data,final_L_total\n";
    for (const std::string& run : run_dirs) {
        std::string name = fs::path(run).filename().string();
        if (name.empty()) name = fs::path(run).parent_path().filename().string();
        fs::path metrics = fs::path(run) / "metrics.csv";
        if (fs::exists(metrics)) {
            std::ifstream in(metrics);
            std::string header;
            std::getline(in, header);
            std::ofstream curves(fs::path(out_dir) / (name + "_loss_curves.csv"));
            std::ofstream weights(fs::path(out_dir) / (name + "_weights.csv"));
            curves << "epoch,flow,L_eq,L_bc,L_data,L_total,unweighted_total\n";
            weights << "epoch,flow,lambda\n";
            std::string line;
            std::map<std::string, std::vector<std::string>> last_per_flow;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::vector<std::string> cells;
                std::size_t pos = 0;
                while (pos <= line.size()) {
                    std::size_t comma = line.find(',', pos);
                    cells.push_back(line.substr(pos, comma == std::string::npos
                                                         ? std::string::npos
                                                         : comma - pos));
                    if (comma == std::string::npos) break;
                    pos = comma + 1;
                }
                if (cells.size() < 10) continue;
                curves << cells[0] << ',' << cells[1] << ',' << cells[2] << ',' << cells[3] << ','
                       << cells[4] << ',' << cells[5] << ',' << cells[8] << "\n";
                weights << cells[0] << ',' << cells[1] << ',' << cells[6] << "\n";
                last_per_flow[cells[1]] = cells;
            }
            for (const auto& [flow, cells] : last_per_flow)
                summary << name << ',' << flow << ',' << cells[2] << ',' << cells[3] << ','
                        << cells[4] << ',' << cells[5] << "\n";
        }
        for (const char* table : {"table2.csv", "transfer.csv", "swap.csv", "mse.csv"}) {
            fs::path src = fs::path(run) / table;
            if (fs::exists(src))
                fs::copy_file(src, fs::path(out_dir) / (name + "_" + table),
                              fs::copy_options::overwrite_existing);
        }
    }
    std::printf("report written to %s\n", out_dir.c_str());
    return 0;
}

// ---- dispatch ----

inline int dispatch(std::vector<std::string> args) {
    CLI::App app{"UniPINN: unified multi-flow physics-informed training"};
    app.require_subcommand(1);

    RunSettings s;
    std::string config_file, out_dir, flows_csv, flow_name, mode_str, ckpt_path, refs_dir,
        runs_csv;
    bool no_attention = false, no_norm = false, no_dwa = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON configuration file");
        sub->add_option("--seed", s.seed, "RNG seed");
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--grid", s.grid, "reference grid nodes per axis");
        sub->add_option("--re", s.cavity_re, "cavity Reynolds number");
    };
    auto add_train_like = [&](CLI::App* sub) {
        sub->add_option("--flows", flows_csv, "comma-separated flow list");
        sub->add_option("--epochs", s.epochs, "training epochs");
        sub->add_option("--tau", s.tau, "DWA temperature");
        sub->add_option("--gamma", s.gamma, "DWA smoothing");
        sub->add_option("--dwa-sign", s.dwa_sign, "DWA softmax sign mode")
            ->check(CLI::IsMember({"literal", "prose"}));
        sub->add_flag("--no-attention", no_attention, "disable the attention stage");
        sub->add_flag("--no-norm", no_norm, "disable input normalization");
        sub->add_flag("--no-dwa", no_dwa, "disable dynamic weight allocation");
    };

    CLI::App* gen = app.add_subcommand("generate-reference", "write oracle fields + observations");
    gen->add_option("--flow", flow_name, "flow name")->required();
    add_common(gen);

    CLI::App* tr = app.add_subcommand("train", "joint or single-flow training");
    add_common(tr);
    add_train_like(tr);

    CLI::App* ev = app.add_subcommand("eval", "MSE table and streamline grids vs references");
    add_common(ev);
    ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    ev->add_option("--flows", flows_csv, "comma-separated flow list");
    ev->add_option("--refs", refs_dir, "directory of reference CSVs");

    CLI::App* ab = app.add_subcommand("ablate", "component ablation grid");
    add_common(ab);
    add_train_like(ab);

    CLI::App* tf = app.add_subcommand("transfer", "cross-task transfer harness");
    add_common(tf);
    add_train_like(tf);
    tf->add_option("--mode", mode_str, "transfer mode")
        ->check(CLI::IsMember({"scratch", "frozen", "finetune"}));
    tf->add_option("--pretrain-epochs", s.pretrain_epochs, "source pretraining epochs");

    CLI::App* sw = app.add_subcommand("swap-attention", "negative-transfer harness");
    add_common(sw);
    add_train_like(sw);
    sw->add_option("--joint-epochs", s.joint_epochs, "joint training epochs");

    CLI::App* rp = app.add_subcommand("report", "collate metrics into table-shaped CSVs");
    rp->add_option("--runs", runs_csv, "comma-separated run directories")->required();
    rp->add_option("--out", out_dir, "output directory")->required();

    std::vector<const char*> argv;
    argv.push_back("unipinn");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        // flags override config file values: re-parse the file first, then
        // apply the flag values CLI11 recorded
        if (!config_file.empty()) {
            RunSettings from_file = s;
            from_file = RunSettings{};
            from_file.apply_config_file(config_file);
            // overlay explicitly-passed flags
            CLI::App* sub = app.get_subcommands().front();
            auto passed = [&](const std::string& name) {
                auto* opt = sub->get_option_no_throw(name);
                return opt && opt->count() > 0;
            };
            if (!passed("--seed")) s.seed = from_file.seed;
            if (!passed("--epochs")) s.epochs = from_file.epochs;
            if (!passed("--grid")) s.grid = from_file.grid;
            if (!passed("--re")) s.cavity_re = from_file.cavity_re;
            if (!passed("--tau")) s.tau = from_file.tau;
            if (!passed("--gamma")) s.gamma = from_file.gamma;
            if (!passed("--dwa-sign")) s.dwa_sign = from_file.dwa_sign;
            if (!passed("--pretrain-epochs")) s.pretrain_epochs = from_file.pretrain_epochs;
            if (flows_csv.empty()) s.flows = from_file.flows;
            s.joint_epochs = from_file.joint_epochs;
            s.learning_rate = from_file.learning_rate;
            s.lr_decay_factor = from_file.lr_decay_factor;
            s.lr_decay_interval = from_file.lr_decay_interval;
            s.batch_interior = from_file.batch_interior;
            s.batch_boundary = from_file.batch_boundary;
            s.obs_count = from_file.obs_count;
            s.dwa_scale = from_file.dwa_scale;
            s.attention = from_file.attention;
            s.input_norm = from_file.input_norm;
            s.dwa = from_file.dwa;
            s.steady = from_file.steady;
            s.reproducible = from_file.reproducible;
            s.cavity_tol = from_file.cavity_tol;
            s.net = from_file.net;
            s.flow_overrides = from_file.flow_overrides;
        }
        if (!flows_csv.empty()) {
            s.flows.clear();
            std::size_t pos = 0;
            while (pos <= flows_csv.size()) {
                std::size_t comma = flows_csv.find(',', pos);
                std::string tok = flows_csv.substr(
                    pos, comma == std::string::npos ? std::string::npos : comma - pos);
                if (!tok.empty()) s.flows.push_back(tok);
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
        if (no_attention) s.attention = false;
        if (no_norm) s.input_norm = false;
        if (no_dwa) s.dwa = false;

        if (gen->parsed()) return cmd_generate_reference(s, flow_name, out_dir);
        if (tr->parsed()) return cmd_train(s, out_dir);
        if (ev->parsed()) return cmd_eval(s, ckpt_path, refs_dir, out_dir);
        if (ab->parsed()) return cmd_ablate(s, out_dir);
        if (tf->parsed()) return cmd_transfer(s, mode_str, out_dir);
        if (sw->parsed()) return cmd_swap_attention(s, out_dir);
        if (rp->parsed()) {
            std::vector<std::string> runs;
            std::size_t pos = 0;
            while (pos <= runs_csv.size()) {
                std::size_t comma = runs_csv.find(',', pos);
                runs.push_back(runs_csv.substr(
                    pos, comma == std::string::npos ? std::string::npos : comma - pos));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
            return cmd_report(runs, out_dir);
        }
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

} // namespace unipinn::cli
