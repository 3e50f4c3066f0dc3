#pragma once
// Shared backbone + task embeddings + task-aware self/cross attention with
// weighted fusion + per-flow heads emitting (stream function, pressure).
// Velocity always derives from the stream function, so the predicted field is
// divergence-free by construction.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "unipinn/errors.hpp"
#include "unipinn/flow.hpp"
#include "unipinn/jet.hpp"
#include "unipinn/rng.hpp"
#include "unipinn/tape.hpp"

namespace unipinn {

struct NetConfig {
    int shared_layers = 4; // hidden layers in the backbone
    int hidden_dim = 64;   // backbone output width (= tokens * token_dim)
    int tokens = 4;        // attention tokens the hidden vector is reshaped to
    int heads = 2;         // attention heads (self and cross)
    int key_dim = 8;       // query/key width per head
    int embed_dim = 16;    // task embedding width
    int head_width = 48;   // hidden width of the per-flow output heads

    int token_dim() const { return hidden_dim / tokens; }
};

struct ModelConfig {
    NetConfig net;
    int n_flows = 3;
    bool attention_on = true;
    bool input_norm_on = true;
    bool steady = true;

    JetShape jet_shape(int degree = 3) const {
        return JetShape{static_cast<std::int8_t>(steady ? 2 : 3),
                        static_cast<std::int8_t>(degree)};
    }
    int input_dim() const { return feature_count(input_norm_on) + net.embed_dim; }

    void validate() const {
        if (net.hidden_dim % net.tokens != 0)
            throw shape_error("hidden_dim must be divisible by tokens");
        if (net.shared_layers < 1 || n_flows < 1 || net.heads < 1)
            throw shape_error("shared_layers, heads and n_flows must be positive");
    }
};

struct ParamBlock {
    std::string name;
    int offset = 0;
    int rows = 0;
    int cols = 0; // cols == 0 for vectors
    int count() const { return rows * std::max(cols, 1); }
};

class ParamLayout {
public:
    int add(const std::string& name, int rows, int cols = 0) {
        ParamBlock b{name, total_, rows, cols};
        index_[name] = static_cast<int>(blocks_.size());
        blocks_.push_back(b);
        total_ += b.count();
        return b.offset;
    }
    const ParamBlock& block(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::invalid_argument("unknown parameter block: " + name);
        return blocks_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    int offset(const std::string& name) const { return block(name).offset; }
    int total() const { return total_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }

private:
    std::vector<ParamBlock> blocks_;
    std::map<std::string, int> index_;
    int total_ = 0;
};

// Integer offsets of every block the forward builder touches, precomputed so
// the per-point graph construction never does string lookups.
struct ModelOffsets {
    struct Layer {
        int w, b, rows, cols;
    };
    struct AttnSlot {
        int wq, wk, wv;
    };
    struct HeadMlp {
        int w0, b0, w1, b1, w2, b2;
    };
    std::vector<Layer> shared;
    std::vector<int> embed;
    std::vector<AttnSlot> self_heads;
    std::vector<std::vector<AttnSlot>> cross; // [flow][head]
    int fusion = 0;
    std::vector<HeadMlp> heads;
};

// All trainable state plus the structural configuration it was built for.
struct Model {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> values;
    ModelOffsets offsets;

    std::span<const double> params() const { return {values.data(), values.size()}; }
    double fusion_alpha() const { return 0.5 + 0.5 * std::tanh(0.5 * values[offsets.fusion]); }

    void rebuild_offsets() {
        offsets = ModelOffsets{};
        const NetConfig& n = config.net;
        for (int l = 0; l < n.shared_layers; ++l) {
            const ParamBlock& w = layout.block("shared.l" + std::to_string(l) + ".w");
            offsets.shared.push_back({w.offset,
                                      layout.offset("shared.l" + std::to_string(l) + ".b"),
                                      w.rows, w.cols});
        }
        for (int f = 0; f < config.n_flows; ++f)
            offsets.embed.push_back(layout.offset("embed.f" + std::to_string(f)));
        for (int h = 0; h < n.heads; ++h) {
            const std::string p = "selfattn.h" + std::to_string(h);
            offsets.self_heads.push_back({layout.offset(p + ".wq"), layout.offset(p + ".wk"),
                                          layout.offset(p + ".wv")});
        }
        for (int f = 0; f < config.n_flows; ++f) {
            offsets.cross.emplace_back();
            for (int h = 0; h < n.heads; ++h) {
                const std::string p =
                    "cross.f" + std::to_string(f) + ".h" + std::to_string(h);
                offsets.cross.back().push_back({layout.offset(p + ".wq"),
                                                layout.offset(p + ".wk"),
                                                layout.offset(p + ".wv")});
            }
        }
        offsets.fusion = layout.offset("fusion.raw");
        for (int f = 0; f < config.n_flows; ++f) {
            const std::string p = "head.f" + std::to_string(f);
            offsets.heads.push_back({layout.offset(p + ".l0.w"), layout.offset(p + ".l0.b"),
                                     layout.offset(p + ".l1.w"), layout.offset(p + ".l1.b"),
                                     layout.offset(p + ".l2.w"), layout.offset(p + ".l2.b")});
        }
    }
};

inline ParamLayout build_layout(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout lay;
    const NetConfig& n = cfg.net;
    int d_in = cfg.input_dim();
    for (int l = 0; l < n.shared_layers; ++l) {
        int out = n.hidden_dim;
        lay.add("shared.l" + std::to_string(l) + ".w", out, d_in);
        lay.add("shared.l" + std::to_string(l) + ".b", out);
        d_in = out;
    }
    for (int f = 0; f < cfg.n_flows; ++f) lay.add("embed.f" + std::to_string(f), n.embed_dim);
    for (int h = 0; h < n.heads; ++h) {
        const std::string p = "selfattn.h" + std::to_string(h);
        lay.add(p + ".wq", n.key_dim, n.token_dim());
        lay.add(p + ".wk", n.key_dim, n.token_dim());
        lay.add(p + ".wv", n.token_dim(), n.token_dim());
    }
    for (int f = 0; f < cfg.n_flows; ++f) {
        for (int h = 0; h < n.heads; ++h) {
            const std::string p = "cross.f" + std::to_string(f) + ".h" + std::to_string(h);
            lay.add(p + ".wq", n.key_dim, n.token_dim());
            lay.add(p + ".wk", n.key_dim, n.token_dim());
            lay.add(p + ".wv", n.token_dim(), n.token_dim());
        }
    }
    lay.add("fusion.raw", 1);
    for (int f = 0; f < cfg.n_flows; ++f) {
        const std::string p = "head.f" + std::to_string(f);
        lay.add(p + ".l0.w", n.head_width, n.hidden_dim);
        lay.add(p + ".l0.b", n.head_width);
        lay.add(p + ".l1.w", n.head_width, n.head_width);
        lay.add(p + ".l1.b", n.head_width);
        lay.add(p + ".l2.w", 2, n.head_width);
        lay.add(p + ".l2.b", 2);
    }
    return lay;
}

// Xavier-uniform weights, zero biases, small normal embeddings, fusion at
// alpha = 1/2.  The first shared layer's columns that multiply the physical
// parameter features are rescaled by 1/max(1, |feature|) over the flows fed
// to the model; otherwise the raw Reynolds-number feature saturates every
// tanh unit at init and spatial gradients vanish.
inline Model init_model(const ModelConfig& cfg, std::uint64_t seed,
                        std::span<const FlowSpec> flows = {}) {
    Model m;
    m.config = cfg;
    m.layout = build_layout(cfg);
    m.values.assign(m.layout.total(), 0.0);
    Rng rng(derive_seed(seed, 0x1417));
    for (const ParamBlock& b : m.layout.blocks()) {
        if (b.cols > 0) {
            double limit = std::sqrt(6.0 / (b.rows + b.cols));
            for (int i = 0; i < b.count(); ++i)
                m.values[b.offset + i] = rng.uniform_in(-limit, limit);
        } else if (b.name.rfind("embed.", 0) == 0) {
            for (int i = 0; i < b.count(); ++i) m.values[b.offset + i] = 0.1 * rng.normal();
        }
        // biases and fusion.raw stay zero
    }
    if (!flows.empty()) {
        const int nf = feature_count(cfg.input_norm_on);
        std::vector<double> mag(nf, 1.0);
        for (const FlowSpec& f : flows) {
            int base = cfg.input_norm_on ? 7 : 3;
            mag[base + 0] = std::max(mag[base + 0], std::abs(f.viscosity));
            mag[base + 1] = std::max(mag[base + 1], std::abs(f.density));
            mag[base + 2] = std::max(mag[base + 2], std::abs(f.reynolds));
        }
        const ParamBlock& w0 = m.layout.block("shared.l0.w");
        for (int r = 0; r < w0.rows; ++r)
            for (int c = 0; c < nf; ++c)
                if (mag[c] > 1.0) m.values[w0.offset + r * w0.cols + c] /= mag[c];
    }
    m.rebuild_offsets();
    return m;
}

// ---- forward graph ----

struct AttentionProbe {
    // order-0 attention weights, one row-major (tokens x tokens) matrix per
    // head; cross holds one set per other flow
    std::vector<std::vector<double>> self_rows;
    std::vector<std::vector<double>> cross_rows;
};

struct ForwardNodes {
    NodeId features = -1;
    NodeId shared = -1;   // backbone output h
    NodeId enhanced = -1; // after attention + fusion (== shared when attention off)
    NodeId head_out = -1; // 2 jets: stream function, pressure
    NodeId psi = -1;      // alias of head_out jet 0 via extract at order 0? kept as head_out
};

namespace netdetail {

inline NodeId mean_heads(Tape& tape, const std::vector<NodeId>& heads) {
    NodeId acc = heads[0];
    for (std::size_t i = 1; i < heads.size(); ++i) acc = tape.add(acc, heads[i]);
    return heads.size() > 1 ? tape.scale_shift(acc, 1.0 / heads.size()) : acc;
}

// One multi-head attention pass over T tokens.  Queries are projected from
// q_src with the q_slots, keys/values from kv_src with the kv_slots (the
// flattened hidden vector viewed as tokens x token_dim).
inline NodeId attention_pass(Tape& tape, const Model& m,
                             const std::vector<ModelOffsets::AttnSlot>& q_slots,
                             const std::vector<ModelOffsets::AttnSlot>& kv_slots, NodeId q_src,
                             NodeId kv_src, std::vector<double>* probe_rows_out) {
    const NetConfig& n = m.config.net;
    const int T = n.tokens, dt = n.token_dim(), dk = n.key_dim;
    std::vector<NodeId> head_outs;
    for (int h = 0; h < n.heads; ++h) {
        NodeId q = tape.linear(q_src, T, dt, dk, q_slots[h].wq);
        NodeId k = tape.linear(kv_src, T, dt, dk, kv_slots[h].wk);
        NodeId v = tape.linear(kv_src, T, dt, dt, kv_slots[h].wv);
        NodeId scores = tape.scale_shift(tape.matmul_nt(q, k, T, dk, T), 1.0 / std::sqrt(dk));
        NodeId attn = tape.softmax_rows(scores, T, T);
        if (probe_rows_out)
            for (int i = 0; i < T * T; ++i) probe_rows_out->push_back(tape.value0(attn, i));
        head_outs.push_back(tape.matmul_nn(attn, v, T, T, dt));
    }
    return mean_heads(tape, head_outs);
}

} // namespace netdetail

// Backbone: enhanced features concatenated with the flow embedding, then L
// affine+tanh layers.
inline NodeId build_shared_forward(Tape& tape, const Model& m, NodeId features, int flow_idx) {
    const NetConfig& n = m.config.net;
    if (tape.n_jets(features) != feature_count(m.config.input_norm_on))
        throw shape_error("shared layer 0: feature vector length " +
                          std::to_string(tape.n_jets(features)) + ", expected " +
                          std::to_string(feature_count(m.config.input_norm_on)));
    NodeId emb = tape.param_vec(m.offsets.embed[flow_idx], n.embed_dim);
    NodeId h = tape.concat({features, emb});
    int d_in = m.config.input_dim();
    for (int l = 0; l < n.shared_layers; ++l) {
        const ModelOffsets::Layer& lay = m.offsets.shared[l];
        if (lay.cols != d_in)
            throw shape_error("shared layer " + std::to_string(l) + ": expected input " +
                              std::to_string(lay.cols) + ", got " + std::to_string(d_in));
        h = tape.tanh_fn(tape.linear(h, 1, d_in, lay.rows, lay.w, lay.b));
        d_in = lay.rows;
    }
    return h;
}

// Self attention over tokens, cross attention against every other flow's
// key/value projections (applied to this flow's own refined feature, as the
// formulation prescribes), then learnable fusion.
inline NodeId build_attention_forward(Tape& tape, const Model& m, NodeId h, int flow_idx,
                                      AttentionProbe* probe = nullptr) {
    const NetConfig& n = m.config.net;
    const int T = n.tokens, dt = n.token_dim();
    if (tape.n_jets(h) != n.hidden_dim) throw shape_error("attention: hidden vector size");
    if (flow_idx < 0 || flow_idx >= m.config.n_flows)
        throw std::invalid_argument("attention: flow index out of range");

    std::vector<double>* self_probe = nullptr;
    if (probe) {
        probe->self_rows.emplace_back();
        self_probe = &probe->self_rows.back();
    }
    NodeId h_self = netdetail::attention_pass(tape, m, m.offsets.self_heads,
                                              m.offsets.self_heads, h, h, self_probe);

    NodeId alpha = tape.logistic(tape.param_vec(m.offsets.fusion, 1));
    if (m.config.n_flows == 1) {
        static bool warned = false;
        if (!warned) {
            warned = true;
            log::warn("single-flow model: cross attention is an empty sum, "
                      "fusion returns the alpha-scaled self feature");
        }
        return tape.col_scale(h_self, alpha, 1, n.hidden_dim);
    }

    NodeId cross_sum = -1;
    for (int j = 0; j < m.config.n_flows; ++j) {
        if (j == flow_idx) continue;
        std::vector<double>* cross_probe = nullptr;
        if (probe) {
            probe->cross_rows.emplace_back();
            cross_probe = &probe->cross_rows.back();
        }
        NodeId out_j = netdetail::attention_pass(tape, m, m.offsets.cross[flow_idx],
                                                 m.offsets.cross[j], h_self, h_self, cross_probe);
        cross_sum = cross_sum < 0 ? out_j : tape.add(cross_sum, out_j);
    }
    NodeId one_minus = tape.scale_shift(alpha, -1.0, 1.0);
    NodeId self_part = tape.col_scale(h_self, alpha, 1, T * dt);
    NodeId cross_part = tape.col_scale(cross_sum, one_minus, 1, T * dt);
    return tape.add(self_part, cross_part);
}

inline NodeId build_head_forward(Tape& tape, const Model& m, NodeId enhanced, int flow_idx) {
    const NetConfig& n = m.config.net;
    const ModelOffsets::HeadMlp& p = m.offsets.heads[flow_idx];
    NodeId h = tape.tanh_fn(tape.linear(enhanced, 1, n.hidden_dim, n.head_width, p.w0, p.b0));
    h = tape.tanh_fn(tape.linear(h, 1, n.head_width, n.head_width, p.w1, p.b1));
    return tape.linear(h, 1, n.head_width, 2, p.w2, p.b2);
}

// Full pipeline for one point: features -> backbone -> attention -> head.
inline ForwardNodes build_point_forward(Tape& tape, const Model& m, const FlowSpec& flow,
                                        int flow_idx, double x, double y, double t,
                                        AttentionProbe* probe = nullptr) {
    ForwardNodes out;
    out.features = build_feature_nodes(tape, x, y, t, flow, m.config.input_norm_on);
    out.shared = build_shared_forward(tape, m, out.features, flow_idx);
    out.enhanced = m.config.attention_on
                       ? build_attention_forward(tape, m, out.shared, flow_idx, probe)
                       : out.shared;
    out.head_out = build_head_forward(tape, m, out.enhanced, flow_idx);
    return out;
}

// ---- point prediction (values + raw-coordinate derivatives) ----

struct VelocityDerivs {
    double u = 0, v = 0, p = 0;
    double ut = 0, ux = 0, uy = 0, uxx = 0, uyy = 0;
    double vt = 0, vx = 0, vy = 0, vxx = 0, vyy = 0;
    double px = 0, py = 0;
};

struct PointPrediction {
    Jet psi;
    Jet p;
    VelocityDerivs d;
};

// Stream-function identities plus chain-rule rescaling from normalized to raw
// coordinates: u = d(psi)/dy, v = -d(psi)/dx.
inline PointPrediction prediction_from_jets(const Jet& psi, const Jet& p, double sx, double sy,
                                            double st) {
    PointPrediction out;
    out.psi = psi;
    out.p = p;
    VelocityDerivs& d = out.d;
    const int deg = psi.shape().degree;
    const bool unsteady = psi.shape().vars == 3;
    d.u = psi.derivative(0, 1) * sy;
    d.v = -psi.derivative(1, 0) * sx;
    d.p = p.value();
    if (deg >= 2) {
        d.ux = psi.derivative(1, 1) * sx * sy;
        d.uy = psi.derivative(0, 2) * sy * sy;
        d.vx = -psi.derivative(2, 0) * sx * sx;
        d.vy = -psi.derivative(1, 1) * sx * sy;
        if (unsteady) {
            d.ut = psi.derivative(0, 1, 1) * sy * st;
            d.vt = -psi.derivative(1, 0, 1) * sx * st;
        }
    }
    if (deg >= 3) {
        d.uxx = psi.derivative(2, 1) * sx * sx * sy;
        d.uyy = psi.derivative(0, 3) * sy * sy * sy;
        d.vxx = -psi.derivative(3, 0) * sx * sx * sx;
        d.vyy = -psi.derivative(1, 2) * sx * sy * sy;
    }
    if (p.shape().degree >= 1) {
        d.px = p.derivative(1, 0) * sx;
        d.py = p.derivative(0, 1) * sy;
    }
    return out;
}

inline PointPrediction predict_point(Tape& tape, const Model& m, const FlowSpec& flow,
                                     int flow_idx, double x, double y, double t,
                                     AttentionProbe* probe = nullptr) {
    auto mark = tape.mark();
    ForwardNodes nodes = build_point_forward(tape, m, flow, flow_idx, x, y, t, probe);
    Jet psi = tape.jet_at(nodes.head_out, 0);
    Jet p = tape.jet_at(nodes.head_out, 1);
    tape.rewind(mark);
    const FeatureScales s = feature_scales(flow, m.config.input_norm_on);
    PointPrediction pred = prediction_from_jets(psi, p, s.sx, s.sy, m.config.steady ? 0.0 : s.st);
    for (double val : {pred.d.u, pred.d.v, pred.d.p, pred.d.uxx, pred.d.vyy})
        if (!std::isfinite(val))
            throw numeric_error("non-finite prediction at (" + std::to_string(x) + ", " +
                                std::to_string(y) + ", " + std::to_string(t) + ")");
    return pred;
}

// Convenience overload with its own scratch tape.
inline PointPrediction predict_point(const Model& m, const FlowSpec& flow, int flow_idx, double x,
                                     double y, double t = 0.0, AttentionProbe* probe = nullptr) {
    Tape tape(m.params(), m.config.jet_shape());
    return predict_point(tape, m, flow, flow_idx, x, y, t, probe);
}

} // namespace unipinn
