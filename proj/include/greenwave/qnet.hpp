#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "greenwave/autodiff.hpp"
#include "greenwave/env.hpp"
#include "greenwave/matrix.hpp"

namespace greenwave {

enum class EncoderKind { concat, gcn };
enum class HeadKind { usd_matrix, onehot_joint };

/// Architecture of one learning unit: which intersections it controls, how
/// their node features are encoded, and how actions are decoded. The
/// usd_matrix head emits one score row per intersection (linear in the
/// member count); the onehot_joint head scores every phase combination.
struct QNetworkSpec {
    EncoderKind encoder = EncoderKind::gcn;
    HeadKind head = HeadKind::usd_matrix;
    std::vector<int> members;       // intersection ids, ascending
    std::vector<int> phase_counts;  // per member
    int node_width = 0;             // d
    int max_phases = 0;             // m
    int gcn_dim = 32;
    int hidden1 = 128;
    int hidden2 = 64;
    bool value_head = false;        // actor-critic variants
    Matrix a_hat;                   // g x g normalized adjacency (gcn encoder only)

    int group_size() const { return static_cast<int>(members.size()); }
    int input_width() const { return group_size() * node_width; }

    int joint_actions() const {
        int j = 1;
        for (int i = 0; i < group_size(); ++i) j *= max_phases;
        return j;
    }

    int head_inputs() const {
        return encoder == EncoderKind::gcn && head == HeadKind::onehot_joint ? group_size() * hidden2 : hidden2;
    }

    int head_outputs() const {
        if (head == HeadKind::onehot_joint) return joint_actions();
        return encoder == EncoderKind::gcn ? max_phases : group_size() * max_phases;
    }

    /// g x m validity mask over (member, phase).
    Matrix phase_mask() const {
        Matrix m(group_size(), max_phases);
        for (int i = 0; i < group_size(); ++i)
            for (int p = 0; p < phase_counts[i]; ++p) m(i, p) = 1.0;
        return m;
    }

    /// 1 x joint_actions validity mask: a combination is valid when every
    /// component phase is.
    Matrix joint_mask() const {
        const int j = joint_actions();
        Matrix m(1, j);
        for (int idx = 0; idx < j; ++idx) {
            int rem = idx;
            bool ok = true;
            for (int i = group_size() - 1; i >= 0; --i) {
                if (rem % max_phases >= phase_counts[i]) ok = false;
                rem /= max_phases;
            }
            m(0, idx) = ok ? 1.0 : 0.0;
        }
        return m;
    }

    int encode_joint(std::span<const int> phases) const {
        int idx = 0;
        for (int i = 0; i < group_size(); ++i) idx = idx * max_phases + phases[i];
        return idx;
    }

    std::vector<int> decode_joint(int idx) const {
        std::vector<int> phases(group_size());
        for (int i = group_size() - 1; i >= 0; --i) {
            phases[i] = idx % max_phases;
            idx /= max_phases;
        }
        return phases;
    }
};

struct QNetwork {
    QNetworkSpec spec;
    Matrix gcn_w;  // d x gcn_dim (gcn encoder only)
    Matrix w1, b1; // trunk
    Matrix w2, b2;
    Matrix wh, bh; // head
    Matrix vw, vb; // value head (actor-critic only)

    void init(Rng& rng) {
        auto he = [&rng](int fan_in, int rows, int cols) {
            return random_normal(rows, cols, std::sqrt(2.0 / fan_in), rng);
        };
        const int d = spec.node_width;
        int trunk_in;
        if (spec.encoder == EncoderKind::gcn) {
            gcn_w = he(d, d, spec.gcn_dim);
            trunk_in = spec.gcn_dim;
        } else {
            trunk_in = spec.input_width();
        }
        w1 = he(trunk_in, trunk_in, spec.hidden1);
        b1 = Matrix(1, spec.hidden1);
        w2 = he(spec.hidden1, spec.hidden1, spec.hidden2);
        b2 = Matrix(1, spec.hidden2);
        wh = he(spec.head_inputs(), spec.head_inputs(), spec.head_outputs());
        bh = Matrix(1, spec.head_outputs());
        if (spec.value_head) {
            // actor-critic: zero head gives a uniform initial policy, which
            // keeps entropy up while the critic finds its scale
            wh.fill(0.0);
            vw = he(spec.hidden2, spec.hidden2, 1);
            vb = Matrix(1, 1);
        }
    }

    std::vector<NamedParam> named_params() {
        std::vector<NamedParam> out;
        if (spec.encoder == EncoderKind::gcn) out.push_back({"gcn_w", &gcn_w});
        out.push_back({"w1", &w1});
        out.push_back({"b1", &b1});
        out.push_back({"w2", &w2});
        out.push_back({"b2", &b2});
        out.push_back({"wh", &wh});
        out.push_back({"bh", &bh});
        if (spec.value_head) {
            out.push_back({"vw", &vw});
            out.push_back({"vb", &vb});
        }
        return out;
    }

    long parameter_count() const {
        long n = 0;
        if (spec.encoder == EncoderKind::gcn) n += static_cast<long>(gcn_w.size());
        n += static_cast<long>(w1.size() + b1.size() + w2.size() + b2.size() + wh.size() + bh.size());
        if (spec.value_head) n += static_cast<long>(vw.size() + vb.size());
        return n;
    }
};

/// Exact count of learnable scalars for a spec, without materializing it.
inline long count_parameters(const QNetworkSpec& spec) {
    long n = 0;
    int trunk_in = spec.encoder == EncoderKind::gcn ? spec.gcn_dim : spec.input_width();
    if (spec.encoder == EncoderKind::gcn) n += static_cast<long>(spec.node_width) * spec.gcn_dim;
    n += static_cast<long>(trunk_in) * spec.hidden1 + spec.hidden1;
    n += static_cast<long>(spec.hidden1) * spec.hidden2 + spec.hidden2;
    n += static_cast<long>(spec.head_inputs()) * spec.head_outputs() + spec.head_outputs();
    if (spec.value_head) n += static_cast<long>(spec.hidden2) + 1;
    return n;
}

namespace qnetdetail {

/// y(row-block b) = a_hat * x(row-block b): block-diagonal aggregation for a
/// batch of stacked node-feature groups.
inline Matrix block_aggregate(const Matrix& a_hat, const Matrix& x, int group) {
    const int blocks = x.rows() / group;
    Matrix y(x.rows(), x.cols());
    for (int b = 0; b < blocks; ++b) {
        const int base = b * group;
        for (int r = 0; r < group; ++r)
            for (int k = 0; k < group; ++k) {
                const double a = a_hat(r, k);
                if (a == 0.0) continue;
                for (int c = 0; c < x.cols(); ++c) y(base + r, c) += a * x(base + k, c);
            }
    }
    return y;
}

}  // namespace qnetdetail

struct QForward {
    Matrix scores;     // usd: (B*g) x m; onehot: B x joint_actions
    Matrix trunk_out;  // embedding rows feeding the head (pre-head)
    Matrix value;      // B x 1 when the spec has a value head
};

/// Inference forward over a batch. `input` is B x (g*d): each row holds the
/// group's node-feature rows flattened row-major.
inline QForward q_forward(const QNetwork& net, const Matrix& input) {
    const QNetworkSpec& spec = net.spec;
    const int batch = input.rows();
    const int g = spec.group_size();
    if (input.cols() != spec.input_width())
        throw ShapeError("q_forward: input " + input.shape_str() + ", expected cols " +
                         std::to_string(spec.input_width()));
    QForward out;
    Matrix h;
    if (spec.encoder == EncoderKind::gcn) {
        Matrix nodes(batch * g, spec.node_width, input.raw());
        Matrix enc = relu(matmul(qnetdetail::block_aggregate(spec.a_hat, nodes, g), net.gcn_w));
        h = relu(dense_forward(enc, net.w1, net.b1));
    } else {
        h = relu(dense_forward(input, net.w1, net.b1));
    }
    h = relu(dense_forward(h, net.w2, net.b2));
    out.trunk_out = h;

    Matrix head_in = h;
    if (spec.encoder == EncoderKind::gcn && spec.head == HeadKind::onehot_joint)
        head_in = Matrix(batch, g * spec.hidden2, h.raw());
    Matrix scores = dense_forward(head_in, net.wh, net.bh);
    if (spec.head == HeadKind::usd_matrix)
        scores = Matrix(batch * g, spec.max_phases, scores.raw());
    out.scores = std::move(scores);

    if (spec.value_head) {
        Matrix pooled;
        if (spec.encoder == EncoderKind::gcn) {
            pooled = Matrix(batch, spec.hidden2);
            for (int b = 0; b < batch; ++b)
                for (int r = 0; r < g; ++r)
                    for (int c = 0; c < spec.hidden2; ++c) pooled(b, c) += h(b * g + r, c) / g;
        } else {
            pooled = h;
        }
        out.value = dense_forward(pooled, net.vw, net.vb);
    }
    return out;
}

struct TapedQForward {
    Tape::NodeId scores = -1;
    Tape::NodeId trunk_out = -1;
    Tape::NodeId value = -1;
    std::vector<Tape::NodeId> param_leafs;  // aligned with named_params()
};

/// Training forward: same computation recorded on a tape. Parameter leafs
/// come back in named_params() order so gradients can be read off directly.
inline TapedQForward q_forward_tape(QNetwork& net, Tape& tape, const Matrix& input) {
    const QNetworkSpec& spec = net.spec;
    const int batch = input.rows();
    const int g = spec.group_size();
    if (input.cols() != spec.input_width())
        throw ShapeError("q_forward_tape: input " + input.shape_str() + ", expected cols " +
                         std::to_string(spec.input_width()));
    TapedQForward out;
    auto leaf_of = [&](Matrix& m) {
        Tape::NodeId id = tape.leaf(m);
        out.param_leafs.push_back(id);
        return id;
    };
    Tape::NodeId gcn_w = spec.encoder == EncoderKind::gcn ? leaf_of(net.gcn_w) : -1;
    Tape::NodeId w1 = leaf_of(net.w1), b1 = leaf_of(net.b1);
    Tape::NodeId w2 = leaf_of(net.w2), b2 = leaf_of(net.b2);
    Tape::NodeId wh = leaf_of(net.wh), bh = leaf_of(net.bh);
    Tape::NodeId vw = -1, vb = -1;
    if (spec.value_head) {
        vw = leaf_of(net.vw);
        vb = leaf_of(net.vb);
    }

    Tape::NodeId h;
    if (spec.encoder == EncoderKind::gcn) {
        // Input aggregation A_hat * F involves no parameter, so it is
        // precomputed and entered as a constant leaf.
        Matrix nodes(batch * g, spec.node_width, input.raw());
        Tape::NodeId agg = tape.leaf(qnetdetail::block_aggregate(spec.a_hat, nodes, g));
        Tape::NodeId enc = tape.relu(tape.matmul(agg, gcn_w));
        h = tape.relu(dense_forward(tape, enc, w1, b1));
    } else {
        Tape::NodeId x = tape.leaf(input);
        h = tape.relu(dense_forward(tape, x, w1, b1));
    }
    h = tape.relu(dense_forward(tape, h, w2, b2));
    out.trunk_out = h;

    Tape::NodeId head_in = h;
    if (spec.encoder == EncoderKind::gcn && spec.head == HeadKind::onehot_joint)
        head_in = tape.reshape(h, batch, g * spec.hidden2);
    Tape::NodeId scores = dense_forward(tape, head_in, wh, bh);
    if (spec.head == HeadKind::usd_matrix) scores = tape.reshape(scores, batch * g, spec.max_phases);
    out.scores = scores;

    if (spec.value_head) {
        Tape::NodeId pooled = spec.encoder == EncoderKind::gcn ? tape.block_mean_rows(h, g) : h;
        out.value = dense_forward(tape, pooled, vw, vb);
    }
    return out;
}

}  // namespace greenwave
