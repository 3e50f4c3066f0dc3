#pragma once
// Reverse-mode gradient tape over jet-valued operations.
//
// Nodes hold vectors of jets (a dense layer output is one node, not one node
// per scalar), which keeps the record short enough to rebuild per collocation
// point.  Parameters are plain doubles referenced by offset into a flat
// parameter vector; their gradients are accumulated into a caller-supplied
// buffer during the reverse sweep.
//
// The reverse rule for every smooth elementwise function g is multiplication
// by trunc(g'(a)) in the truncated jet algebra, implemented as the transpose
// of the truncated product (k_corr_left).  That identity is exact: truncation
// at total degree d commutes with differentiation of the coefficients.

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "unipinn/errors.hpp"
#include "unipinn/jet.hpp"

namespace unipinn {

using NodeId = std::int32_t;

class Tape {
public:
    enum class Op : std::uint8_t {
        leaf,
        param_vec,
        add,
        sub,
        mul,
        scale_shift,
        tanh_fn,
        exp_fn,
        sin_fn,
        cos_fn,
        square_fn,
        recip_fn,
        linear,
        matmul_nt,
        matmul_nn,
        row_max_shift,
        row_sum,
        col_scale,
        concat,
        extract,
    };

    explicit Tape(std::span<const double> params = {}, JetShape shape = kSteadyShape,
                  bool capture_hash = true)
        : params_(params), shape_(shape), capture_hash_(capture_hash) {
        if (capture_hash_) params_hash_ = hash_params();
    }

    void bind_params(std::span<const double> params) {
        params_ = params;
        if (capture_hash_) params_hash_ = hash_params();
    }

    void set_shape(JetShape s) { shape_ = s; }
    JetShape shape() const { return shape_; }

    struct Mark {
        std::size_t nodes, vals, extra;
    };

    Mark mark() const { return {nodes_.size(), vals_size_, extra_.size()}; }

    void rewind(Mark m) {
        nodes_.resize(m.nodes);
        vals_size_ = m.vals;
        extra_.resize(m.extra);
    }

    // ---- recording ----

    NodeId leaf(std::span<const Jet> jets) {
        NodeId id = alloc(Op::leaf, -1, -1, static_cast<int>(jets.size()));
        double* v = vp(id);
        const int K = k_of(id);
        for (std::size_t i = 0; i < jets.size(); ++i) {
            if (jets[i].shape() != nodes_[id].shape)
                throw shape_error("leaf jet shape differs from tape shape");
            std::memcpy(v + i * K, jets[i].data(), sizeof(double) * K);
        }
        return id;
    }

    NodeId leaf1(const Jet& j) { return leaf(std::span<const Jet>(&j, 1)); }

    NodeId constant(double v) { return leaf1(Jet::constant(v, shape_)); }

    // n constant jets taken from params[offset .. offset+n).
    NodeId param_vec(int offset, int n) {
        NodeId id = alloc(Op::param_vec, -1, -1, n);
        nodes_[id].i0 = offset;
        forward_node(id);
        return id;
    }

    NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }
    NodeId mul(NodeId a, NodeId b) { return binary(Op::mul, a, b); }

    // out = s * a, then t added to the order-0 coefficient of every jet.
    NodeId scale_shift(NodeId a, double s, double t = 0.0) {
        NodeId id = alloc(Op::scale_shift, a, -1, n_jets(a));
        nodes_[id].d0 = s;
        nodes_[id].d1 = t;
        forward_node(id);
        return id;
    }

    NodeId tanh_fn(NodeId a) { return unary(Op::tanh_fn, a); }
    NodeId exp_fn(NodeId a) { return unary(Op::exp_fn, a); }
    NodeId sin_fn(NodeId a) { return unary(Op::sin_fn, a); }
    NodeId cos_fn(NodeId a) { return unary(Op::cos_fn, a); }
    NodeId square_fn(NodeId a) { return unary(Op::square_fn, a); }

    NodeId recip_fn(NodeId a) {
        const int n = n_jets(a);
        const int K = k_of(a);
        for (int i = 0; i < n; ++i)
            if (vp(a)[i * K] == 0.0)
                throw std::domain_error("reciprocal of a jet with order-0 value 0");
        return unary(Op::recip_fn, a);
    }

    // rows x d_in jets -> rows x d_out jets through the weight block at w_off
    // (row-major d_out x d_in) and optional bias block at b_off.
    NodeId linear(NodeId a, int rows, int d_in, int d_out, int w_off, int b_off = -1) {
        if (n_jets(a) != rows * d_in) throw shape_error("linear: input size != rows*d_in");
        NodeId id = alloc(Op::linear, a, -1, rows * d_out);
        Node& nd = nodes_[id];
        nd.i0 = rows;
        nd.i1 = d_in;
        nd.i2 = d_out;
        nd.i3 = w_off;
        nd.i4 = b_off;
        forward_node(id);
        return id;
    }

    // A: r x k jets, B: c x k jets -> A B^T : r x c jets.
    NodeId matmul_nt(NodeId a, NodeId b, int r, int k, int c) {
        if (n_jets(a) != r * k || n_jets(b) != c * k) throw shape_error("matmul_nt size mismatch");
        NodeId id = alloc(Op::matmul_nt, a, b, r * c);
        set_dims(id, r, k, c);
        forward_node(id);
        return id;
    }

    // A: r x k jets, B: k x c jets -> A B : r x c jets.
    NodeId matmul_nn(NodeId a, NodeId b, int r, int k, int c) {
        if (n_jets(a) != r * k || n_jets(b) != k * c) throw shape_error("matmul_nn size mismatch");
        NodeId id = alloc(Op::matmul_nn, a, b, r * c);
        set_dims(id, r, k, c);
        forward_node(id);
        return id;
    }

    // Subtract the per-row max order-0 value (softmax shift; exact no-op for
    // the softmax function itself, so the reverse rule is the identity).
    NodeId row_max_shift(NodeId a, int rows, int cols) {
        NodeId id = alloc(Op::row_max_shift, a, -1, rows * cols);
        set_dims(id, rows, 0, cols);
        forward_node(id);
        return id;
    }

    NodeId row_sum(NodeId a, int rows, int cols) {
        if (n_jets(a) != rows * cols) throw shape_error("row_sum size mismatch");
        NodeId id = alloc(Op::row_sum, a, -1, rows);
        set_dims(id, rows, 0, cols);
        forward_node(id);
        return id;
    }

    // out_ij = a_ij * s_i with s holding `rows` jets.
    NodeId col_scale(NodeId a, NodeId s, int rows, int cols) {
        if (n_jets(a) != rows * cols || n_jets(s) != rows)
            throw shape_error("col_scale size mismatch");
        NodeId id = alloc(Op::col_scale, a, s, rows * cols);
        set_dims(id, rows, 0, cols);
        forward_node(id);
        return id;
    }

    NodeId concat(std::initializer_list<NodeId> parts) {
        return concat(std::span<const NodeId>(parts.begin(), parts.size()));
    }

    NodeId concat(std::span<const NodeId> parts) {
        int total = 0;
        for (NodeId p : parts) total += n_jets(p);
        NodeId id = alloc(Op::concat, -1, -1, total);
        nodes_[id].i0 = static_cast<int>(extra_.size());
        nodes_[id].i1 = static_cast<int>(parts.size());
        for (NodeId p : parts) extra_.push_back(p);
        forward_node(id);
        return id;
    }

    // True partial derivative of one jet of a node, as a fresh scalar node.
    NodeId extract(NodeId a, int jet_idx, int dx, int dy, int dt = 0) {
        const auto& t = detail::tables(nodes_[a].shape);
        const JetShape s = nodes_[a].shape;
        if (dx < 0 || dy < 0 || dt < 0 || dx + dy + dt > s.degree || (s.vars == 2 && dt > 0))
            throw std::invalid_argument("extract: multi-index out of range");
        if (jet_idx < 0 || jet_idx >= n_jets(a)) throw std::invalid_argument("extract: jet index");
        int mi = t.index_of(dx, dy, dt);
        NodeId id = alloc(Op::extract, a, -1, 1);
        nodes_[id].i0 = jet_idx;
        nodes_[id].i1 = mi;
        nodes_[id].d0 = t.fact[mi];
        forward_node(id);
        return id;
    }

    // softmax over each row, with max-shifted exponentials for stability.
    NodeId softmax_rows(NodeId a, int rows, int cols) {
        NodeId shifted = row_max_shift(a, rows, cols);
        NodeId e = exp_fn(shifted);
        NodeId sums = row_sum(e, rows, cols);
        NodeId inv = recip_fn(sums);
        return col_scale(e, inv, rows, cols);
    }

    // logistic(x) = 0.5 + 0.5 tanh(x/2), elementwise.
    NodeId logistic(NodeId a) { return scale_shift(tanh_fn(scale_shift(a, 0.5)), 0.5, 0.5); }

    // ---- reading ----

    int n_jets(NodeId id) const { return nodes_[id].n; }
    int k_of(NodeId id) const { return nodes_[id].shape.size(); }
    JetShape node_shape(NodeId id) const { return nodes_[id].shape; }

    double value0(NodeId id, int jet_idx = 0) const {
        return vals_[nodes_[id].off + static_cast<std::size_t>(jet_idx) * k_of(id)];
    }

    Jet jet_at(NodeId id, int jet_idx = 0) const {
        Jet j(nodes_[id].shape);
        std::memcpy(j.data(), &vals_[nodes_[id].off + static_cast<std::size_t>(jet_idx) * k_of(id)],
                    sizeof(double) * k_of(id));
        return j;
    }

    std::span<const double> raw_values(NodeId id) const {
        return {&vals_[nodes_[id].off], static_cast<std::size_t>(n_jets(id)) * k_of(id)};
    }

    // ---- reverse sweep ----

    // Accumulates d(seed * target.c0)/d(params) into grad.  target must hold a
    // single jet; the scalar being differentiated is its order-0 coefficient.
    void backward(NodeId target, double seed, std::span<double> grad) {
        if (n_jets(target) != 1)
            throw std::invalid_argument("backward target must hold a single jet");
        if (adj_.size() < vals_size_) adj_.resize(vals_size_);
        std::memset(adj_.data(), 0, sizeof(double) * vals_size_);
        dirty_.assign(nodes_.size(), 0);
        adj_[nodes_[target].off] = seed;
        dirty_[target] = 1;
        for (NodeId id = target; id >= 0; --id) {
            if (!dirty_[id]) continue;
            backward_node(id, grad);
        }
    }

    // Recompute every non-leaf node from its parents, in place.
    void replay() {
        for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id)
            if (nodes_[id].op != Op::leaf) forward_node(id);
    }

    std::span<const double> params() const { return params_; }
    std::uint64_t params_hash() const { return params_hash_; }

    std::uint64_t hash_params() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (double d : params_) {
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 1099511628211ULL;
            }
        }
        return h;
    }

private:
    struct Node {
        Op op;
        JetShape shape;
        NodeId a = -1, b = -1;
        std::int32_t n = 0;
        std::size_t off = 0;
        std::int32_t i0 = 0, i1 = 0, i2 = 0, i3 = 0, i4 = -1;
        double d0 = 0.0, d1 = 0.0;
    };

    std::vector<Node> nodes_;
    std::vector<double> vals_;   // arena; live prefix is vals_size_
    std::size_t vals_size_ = 0;
    std::vector<double> adj_;
    std::vector<std::uint8_t> dirty_;
    std::vector<NodeId> extra_;
    std::span<const double> params_;
    JetShape shape_;
    bool capture_hash_ = true;
    std::uint64_t params_hash_ = 0;

    double* vp(NodeId id) { return &vals_[nodes_[id].off]; }
    const double* vp(NodeId id) const { return &vals_[nodes_[id].off]; }
    double* ap(NodeId id) { return &adj_[nodes_[id].off]; }

    void touch(NodeId id) { dirty_[id] = 1; }

    NodeId alloc(Op op, NodeId a, NodeId b, int n) {
        Node nd;
        nd.op = op;
        nd.shape = (a >= 0) ? nodes_[a].shape : shape_;
        nd.a = a;
        nd.b = b;
        nd.n = n;
        nd.off = vals_size_;
        vals_size_ += static_cast<std::size_t>(n) * nd.shape.size();
        if (vals_.size() < vals_size_) vals_.resize(std::max(vals_size_, vals_.size() * 2));
        nodes_.push_back(nd);
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void set_dims(NodeId id, int r, int k, int c) {
        nodes_[id].i0 = r;
        nodes_[id].i1 = k;
        nodes_[id].i2 = c;
    }

    NodeId binary(Op op, NodeId a, NodeId b) {
        if (nodes_[a].shape != nodes_[b].shape) throw shape_error("binary op jet shape mismatch");
        if (n_jets(a) != n_jets(b)) throw shape_error("binary op jet count mismatch");
        NodeId id = alloc(op, a, b, n_jets(a));
        forward_node(id);
        return id;
    }

    NodeId unary(Op op, NodeId a) {
        NodeId id = alloc(op, a, -1, n_jets(a));
        forward_node(id);
        return id;
    }

    static void derivs_for(Op op, double x, double* g, int n) {
        switch (op) {
            case Op::tanh_fn: detail::tanh_derivs(x, g, n); break;
            case Op::exp_fn: detail::exp_derivs(x, g, n); break;
            case Op::sin_fn: detail::sin_derivs(x, g, n); break;
            case Op::cos_fn: detail::cos_derivs(x, g, n); break;
            case Op::recip_fn: detail::recip_derivs(x, g, n); break;
            default: break;
        }
    }

    template <int K>
    static void lin_fwd_k(const double* in, const double* w, const double* b, double* out,
                          int rows, int d_in, int d_out) {
        for (int r = 0; r < rows; ++r) {
            const double* inr = in + static_cast<std::size_t>(r) * d_in * K;
            double* outr = out + static_cast<std::size_t>(r) * d_out * K;
            for (int o = 0; o < d_out; ++o) {
                double acc[K > 0 ? K : 1] = {};
                const double* wrow = w + static_cast<std::size_t>(o) * d_in;
                for (int i = 0; i < d_in; ++i) {
                    const double s = wrow[i];
                    const double* iv = inr + static_cast<std::size_t>(i) * K;
                    for (int k = 0; k < K; ++k) acc[k] += s * iv[k];
                }
                double* ov = outr + static_cast<std::size_t>(o) * K;
                for (int k = 0; k < K; ++k) ov[k] = acc[k];
                if (b) ov[0] += b[o];
            }
        }
    }

    template <int K>
    static void lin_bwd_k(const double* in, const double* w, const double* chat, double* ahat,
                          double* gw, double* gb, int rows, int d_in, int d_out) {
        for (int r = 0; r < rows; ++r) {
            const double* inr = in + static_cast<std::size_t>(r) * d_in * K;
            const double* chr = chat + static_cast<std::size_t>(r) * d_out * K;
            double* ahr = ahat ? ahat + static_cast<std::size_t>(r) * d_in * K : nullptr;
            for (int o = 0; o < d_out; ++o) {
                const double* ch = chr + static_cast<std::size_t>(o) * K;
                if (gb) gb[o] += ch[0];
                const double* wrow = w + static_cast<std::size_t>(o) * d_in;
                double* gwrow = gw + static_cast<std::size_t>(o) * d_in;
                for (int i = 0; i < d_in; ++i) {
                    const double* iv = inr + static_cast<std::size_t>(i) * K;
                    double dot = 0.0;
                    if (ahr) {
                        double* av = ahr + static_cast<std::size_t>(i) * K;
                        const double s = wrow[i];
                        for (int k = 0; k < K; ++k) {
                            av[k] += s * ch[k];
                            dot += ch[k] * iv[k];
                        }
                    } else {
                        for (int k = 0; k < K; ++k) dot += ch[k] * iv[k];
                    }
                    gwrow[i] += dot;
                }
            }
        }
    }

    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapRM = Eigen::Map<RowMat>;
    using CMapRM = Eigen::Map<const RowMat>;

    // Dense layers map onto row-major GEMMs over the coefficient planes;
    // Eigen wins above a small size, the unrolled loop below it.
    static constexpr int kGemmThreshold = 1024;

    void lin_fwd(int K, const double* in, const double* w, const double* b, double* out, int rows,
                 int d_in, int d_out) const {
        if (d_in * d_out >= kGemmThreshold) {
            CMapRM wm(w, d_out, d_in);
            for (int r = 0; r < rows; ++r) {
                CMapRM im(in + static_cast<std::size_t>(r) * d_in * K, d_in, K);
                MapRM om(out + static_cast<std::size_t>(r) * d_out * K, d_out, K);
                om.noalias() = wm * im;
                if (b) om.col(0) += CMapRM(b, d_out, 1);
            }
            return;
        }
        switch (K) {
            case 1: lin_fwd_k<1>(in, w, b, out, rows, d_in, d_out); break;
            case 3: lin_fwd_k<3>(in, w, b, out, rows, d_in, d_out); break;
            case 4: lin_fwd_k<4>(in, w, b, out, rows, d_in, d_out); break;
            case 6: lin_fwd_k<6>(in, w, b, out, rows, d_in, d_out); break;
            case 10: lin_fwd_k<10>(in, w, b, out, rows, d_in, d_out); break;
            default: lin_fwd_k<20>(in, w, b, out, rows, d_in, d_out); break;
        }
    }

    void lin_bwd(int K, const double* in, const double* w, const double* chat, double* ahat,
                 double* gw, double* gb, int rows, int d_in, int d_out) const {
        if (d_in * d_out >= kGemmThreshold) {
            CMapRM wm(w, d_out, d_in);
            MapRM gwm(gw, d_out, d_in);
            for (int r = 0; r < rows; ++r) {
                CMapRM im(in + static_cast<std::size_t>(r) * d_in * K, d_in, K);
                CMapRM cm(chat + static_cast<std::size_t>(r) * d_out * K, d_out, K);
                if (ahat) {
                    MapRM am(ahat + static_cast<std::size_t>(r) * d_in * K, d_in, K);
                    am.noalias() += wm.transpose() * cm;
                }
                gwm.noalias() += cm * im.transpose();
                if (gb) MapRM(gb, d_out, 1).col(0) += cm.col(0);
            }
            return;
        }
        switch (K) {
            case 1: lin_bwd_k<1>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
            case 3: lin_bwd_k<3>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
            case 4: lin_bwd_k<4>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
            case 6: lin_bwd_k<6>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
            case 10: lin_bwd_k<10>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
            default: lin_bwd_k<20>(in, w, chat, ahat, gw, gb, rows, d_in, d_out); break;
        }
    }

    void forward_node(NodeId id) {
        Node& nd = nodes_[id];
        const int K = nd.shape.size();
        double* out = vp(id);
        const double* a = nd.a >= 0 ? vp(nd.a) : nullptr;
        const double* b = nd.b >= 0 ? vp(nd.b) : nullptr;
        const std::size_t total = static_cast<std::size_t>(nd.n) * K;
        switch (nd.op) {
            case Op::leaf: break;
            case Op::param_vec: {
                detail::k_zero(static_cast<int>(total), out);
                for (int i = 0; i < nd.n; ++i) out[i * K] = params_[nd.i0 + i];
                break;
            }
            case Op::add: detail::k_add(static_cast<int>(total), out, a, b); break;
            case Op::sub: detail::k_sub(static_cast<int>(total), out, a, b); break;
            case Op::mul: {
                detail::k_zero(static_cast<int>(total), out);
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < nd.n; ++i)
                        detail::t_mul_acc<SC::vars_v, SC::deg_v>(out + i * K, a + i * K, b + i * K);
                });
                break;
            }
            case Op::scale_shift: {
                detail::k_scale(static_cast<int>(total), out, nd.d0, a);
                for (int i = 0; i < nd.n; ++i) out[i * K] += nd.d1;
                break;
            }
            case Op::tanh_fn:
            case Op::exp_fn:
            case Op::sin_fn:
            case Op::cos_fn:
            case Op::recip_fn: {
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    double g[4];
                    for (int i = 0; i < nd.n; ++i) {
                        derivs_for(nd.op, a[i * K], g, 4);
                        detail::t_compose<SC::vars_v, SC::deg_v>(out + i * K, a + i * K, g);
                    }
                });
                break;
            }
            case Op::square_fn: {
                detail::k_zero(static_cast<int>(total), out);
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < nd.n; ++i)
                        detail::t_mul_acc<SC::vars_v, SC::deg_v>(out + i * K, a + i * K, a + i * K);
                });
                break;
            }
            case Op::linear: {
                const double* w = &params_[nd.i3];
                const double* bias = nd.i4 >= 0 ? &params_[nd.i4] : nullptr;
                lin_fwd(K, a, w, bias, out, nd.i0, nd.i1, nd.i2);
                break;
            }
            case Op::matmul_nt: {
                detail::k_zero(static_cast<int>(total), out);
                const int r = nd.i0, k = nd.i1, c = nd.i2;
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) {
                            double* cv = out + (static_cast<std::size_t>(i) * c + j) * K;
                            const double* av = a + static_cast<std::size_t>(i) * k * K;
                            const double* bv = b + static_cast<std::size_t>(j) * k * K;
                            for (int d = 0; d < k; ++d)
                                detail::t_mul_acc<SC::vars_v, SC::deg_v>(
                                    cv, av + static_cast<std::size_t>(d) * K,
                                    bv + static_cast<std::size_t>(d) * K);
                        }
                });
                break;
            }
            case Op::matmul_nn: {
                detail::k_zero(static_cast<int>(total), out);
                const int r = nd.i0, k = nd.i1, c = nd.i2;
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < r; ++i)
                        for (int l = 0; l < k; ++l) {
                            const double* av = a + (static_cast<std::size_t>(i) * k + l) * K;
                            const double* brow = b + static_cast<std::size_t>(l) * c * K;
                            for (int j = 0; j < c; ++j)
                                detail::t_mul_acc<SC::vars_v, SC::deg_v>(
                                    out + (static_cast<std::size_t>(i) * c + j) * K, av,
                                    brow + static_cast<std::size_t>(j) * K);
                        }
                });
                break;
            }
            case Op::row_max_shift: {
                const int rows = nd.i0, cols = nd.i2;
                std::memcpy(out, a, sizeof(double) * total);
                for (int r = 0; r < rows; ++r) {
                    double m = out[static_cast<std::size_t>(r) * cols * K];
                    for (int j = 1; j < cols; ++j)
                        m = std::max(m, out[(static_cast<std::size_t>(r) * cols + j) * K]);
                    for (int j = 0; j < cols; ++j)
                        out[(static_cast<std::size_t>(r) * cols + j) * K] -= m;
                }
                break;
            }
            case Op::row_sum: {
                const int rows = nd.i0, cols = nd.i2;
                detail::k_zero(static_cast<int>(total), out);
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < cols; ++j)
                        detail::k_axpy(K, out + static_cast<std::size_t>(r) * K, 1.0,
                                       a + (static_cast<std::size_t>(r) * cols + j) * K);
                break;
            }
            case Op::col_scale: {
                const int rows = nd.i0, cols = nd.i2;
                detail::k_zero(static_cast<int>(total), out);
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j)
                            detail::t_mul_acc<SC::vars_v, SC::deg_v>(
                                out + (static_cast<std::size_t>(r) * cols + j) * K,
                                a + (static_cast<std::size_t>(r) * cols + j) * K,
                                b + static_cast<std::size_t>(r) * K);
                });
                break;
            }
            case Op::concat: {
                std::size_t pos = 0;
                for (int p = 0; p < nd.i1; ++p) {
                    NodeId src = extra_[nd.i0 + p];
                    const std::size_t count = static_cast<std::size_t>(n_jets(src)) * K;
                    std::memcpy(out + pos, vp(src), sizeof(double) * count);
                    pos += count;
                }
                break;
            }
            case Op::extract: {
                detail::k_zero(K, out);
                out[0] = a[static_cast<std::size_t>(nd.i0) * K + nd.i1] * nd.d0;
                break;
            }
        }
    }

    void backward_node(NodeId id, std::span<double> grad) {
        Node& nd = nodes_[id];
        const int K = nd.shape.size();
        const double* chat = &adj_[nd.off];
        const double* a = nd.a >= 0 ? vp(nd.a) : nullptr;
        const double* b = nd.b >= 0 ? vp(nd.b) : nullptr;
        double* ahat = nd.a >= 0 ? ap(nd.a) : nullptr;
        double* bhat = nd.b >= 0 ? ap(nd.b) : nullptr;
        if (nd.a >= 0) touch(nd.a);
        if (nd.b >= 0) touch(nd.b);
        const std::size_t total = static_cast<std::size_t>(nd.n) * K;
        switch (nd.op) {
            case Op::leaf: break;
            case Op::param_vec: {
                for (int i = 0; i < nd.n; ++i) grad[nd.i0 + i] += chat[i * K];
                break;
            }
            case Op::add: {
                detail::k_axpy(static_cast<int>(total), ahat, 1.0, chat);
                detail::k_axpy(static_cast<int>(total), bhat, 1.0, chat);
                break;
            }
            case Op::sub: {
                detail::k_axpy(static_cast<int>(total), ahat, 1.0, chat);
                detail::k_axpy(static_cast<int>(total), bhat, -1.0, chat);
                break;
            }
            case Op::mul: {
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < nd.n; ++i) {
                        detail::t_corr_left<SC::vars_v, SC::deg_v>(ahat + i * K, b + i * K,
                                                                   chat + i * K);
                        detail::t_corr_right<SC::vars_v, SC::deg_v>(bhat + i * K, a + i * K,
                                                                    chat + i * K);
                    }
                });
                break;
            }
            case Op::scale_shift: {
                detail::k_axpy(static_cast<int>(total), ahat, nd.d0, chat);
                break;
            }
            case Op::tanh_fn:
            case Op::exp_fn:
            case Op::sin_fn:
            case Op::cos_fn:
            case Op::recip_fn: {
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    double g[5], d[20];
                    for (int i = 0; i < nd.n; ++i) {
                        derivs_for(nd.op, a[i * K], g, 5);
                        detail::t_compose<SC::vars_v, SC::deg_v>(d, a + i * K, g + 1);
                        detail::t_corr_left<SC::vars_v, SC::deg_v>(ahat + i * K, d, chat + i * K);
                    }
                });
                break;
            }
            case Op::square_fn: {
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    double d[20];
                    for (int i = 0; i < nd.n; ++i) {
                        detail::k_scale(K, d, 2.0, a + i * K);
                        detail::t_corr_left<SC::vars_v, SC::deg_v>(ahat + i * K, d, chat + i * K);
                    }
                });
                break;
            }
            case Op::linear: {
                const double* w = &params_[nd.i3];
                double* gw = &grad[nd.i3];
                double* gb = nd.i4 >= 0 ? &grad[nd.i4] : nullptr;
                double* in_adj = nodes_[nd.a].op == Op::leaf ? nullptr : ahat;
                lin_bwd(K, a, w, chat, in_adj, gw, gb, nd.i0, nd.i1, nd.i2);
                break;
            }
            case Op::matmul_nt: {
                const int r = nd.i0, k = nd.i1, c = nd.i2;
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < c; ++j) {
                            const double* ch = chat + (static_cast<std::size_t>(i) * c + j) * K;
                            for (int d = 0; d < k; ++d) {
                                detail::t_corr_left<SC::vars_v, SC::deg_v>(
                                    ahat + (static_cast<std::size_t>(i) * k + d) * K,
                                    b + (static_cast<std::size_t>(j) * k + d) * K, ch);
                                detail::t_corr_left<SC::vars_v, SC::deg_v>(
                                    bhat + (static_cast<std::size_t>(j) * k + d) * K,
                                    a + (static_cast<std::size_t>(i) * k + d) * K, ch);
                            }
                        }
                });
                break;
            }
            case Op::matmul_nn: {
                const int r = nd.i0, k = nd.i1, c = nd.i2;
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int i = 0; i < r; ++i)
                        for (int l = 0; l < k; ++l) {
                            double* ah = ahat + (static_cast<std::size_t>(i) * k + l) * K;
                            const double* av = a + (static_cast<std::size_t>(i) * k + l) * K;
                            for (int j = 0; j < c; ++j) {
                                const double* ch = chat + (static_cast<std::size_t>(i) * c + j) * K;
                                detail::t_corr_left<SC::vars_v, SC::deg_v>(
                                    ah, b + (static_cast<std::size_t>(l) * c + j) * K, ch);
                                detail::t_corr_left<SC::vars_v, SC::deg_v>(
                                    bhat + (static_cast<std::size_t>(l) * c + j) * K, av, ch);
                            }
                        }
                });
                break;
            }
            case Op::row_max_shift: {
                detail::k_axpy(static_cast<int>(total), ahat, 1.0, chat);
                break;
            }
            case Op::row_sum: {
                const int rows = nd.i0, cols = nd.i2;
                for (int r = 0; r < rows; ++r)
                    for (int j = 0; j < cols; ++j)
                        detail::k_axpy(K, ahat + (static_cast<std::size_t>(r) * cols + j) * K, 1.0,
                                       chat + static_cast<std::size_t>(r) * K);
                break;
            }
            case Op::col_scale: {
                const int rows = nd.i0, cols = nd.i2;
                detail::dispatch_shape(nd.shape, [&](auto sc) {
                    using SC = decltype(sc);
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < cols; ++j) {
                            const std::size_t ij = (static_cast<std::size_t>(r) * cols + j) * K;
                            detail::t_corr_left<SC::vars_v, SC::deg_v>(
                                ahat + ij, b + static_cast<std::size_t>(r) * K, chat + ij);
                            detail::t_corr_right<SC::vars_v, SC::deg_v>(
                                bhat + static_cast<std::size_t>(r) * K, a + ij, chat + ij);
                        }
                });
                break;
            }
            case Op::concat: {
                std::size_t pos = 0;
                for (int p = 0; p < nd.i1; ++p) {
                    NodeId src = extra_[nd.i0 + p];
                    touch(src);
                    const std::size_t count = static_cast<std::size_t>(n_jets(src)) * K;
                    detail::k_axpy(static_cast<int>(count), ap(src), 1.0, chat + pos);
                    pos += count;
                }
                break;
            }
            case Op::extract: {
                ahat[static_cast<std::size_t>(nd.i0) * K + nd.i1] += nd.d0 * chat[0];
                break;
            }
        }
    }
};

// Gradient of a recorded scalar with respect to every parameter.  Verifies
// the parameter vector was not mutated since recording; a stale tape raises a
// consistency error instead of returning silently wrong gradients.
inline std::vector<double> param_gradient(Tape& tape, NodeId loss) {
    if (tape.hash_params() != tape.params_hash())
        throw consistency_error("parameters changed between tape record and reverse pass");
    std::vector<double> grad(tape.params().size(), 0.0);
    tape.backward(loss, 1.0, grad);
    return grad;
}

} // namespace unipinn
