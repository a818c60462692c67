#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "greenwave/matrix.hpp"

namespace greenwave {

/// Reverse-mode tape over dense matrices. Nodes are created in topological
/// order by construction, so backward() is a single reverse sweep that
/// visits every recorded node exactly once. A tape is built per forward
/// pass and discarded after the gradients are read.
class Tape {
public:
    using NodeId = int;

    NodeId leaf(Matrix value) { return push(std::move(value), {}); }

    const Matrix& value(NodeId id) const { return nodes_[id].value; }
    const Matrix& grad(NodeId id) const { return nodes_[id].grad; }

    NodeId matmul(NodeId a, NodeId b) {
        NodeId id = push(greenwave::matmul(value(a), value(b)), [a, b](Tape& t, NodeId self) {
            matmul_nt_acc(t.nodes_[self].grad, t.value(b), t.nodes_[a].grad);
            matmul_tn_acc(t.value(a), t.nodes_[self].grad, t.nodes_[b].grad);
        });
        return id;
    }

    /// y = C * x with C constant (not differentiated); used for the graph
    /// aggregation step where the normalized adjacency is fixed.
    NodeId const_mul_left(const Matrix& c, NodeId x) {
        return push(greenwave::matmul(c, value(x)), [c, x](Tape& t, NodeId self) {
            matmul_tn_acc(c, t.nodes_[self].grad, t.nodes_[x].grad);
        });
    }

    NodeId add_row_broadcast(NodeId x, NodeId row) {
        return push(greenwave::add_row_broadcast(value(x), value(row)), [x, row](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            t.nodes_[x].grad += g;
            Matrix& gr = t.nodes_[row].grad;
            for (int r = 0; r < g.rows(); ++r)
                for (int c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
        });
    }

    NodeId add(NodeId a, NodeId b) {
        Matrix y = value(a);
        y += value(b);
        return push(std::move(y), [a, b](Tape& t, NodeId self) {
            t.nodes_[a].grad += t.nodes_[self].grad;
            t.nodes_[b].grad += t.nodes_[self].grad;
        });
    }

    NodeId scale(NodeId x, double s) {
        Matrix y = value(x);
        y *= s;
        return push(std::move(y), [x, s](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i) gx.raw()[i] += s * g.raw()[i];
        });
    }

    NodeId relu(NodeId x) {
        return push(greenwave::relu(value(x)), [x](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& v = t.value(x);
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i)
                if (v.raw()[i] > 0.0) gx.raw()[i] += g.raw()[i];
        });
    }

    /// Column vector y[r] = x(r, idx[r]).
    NodeId select_per_row(NodeId x, std::vector<int> idx) {
        const Matrix& v = value(x);
        if (static_cast<int>(idx.size()) != v.rows()) throw ShapeError("select_per_row: index count != rows");
        Matrix y(v.rows(), 1);
        for (int r = 0; r < v.rows(); ++r) y(r, 0) = v(r, idx[r]);
        return push(std::move(y), [x, idx = std::move(idx)](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (int r = 0; r < g.rows(); ++r) gx(r, idx[r]) += g(r, 0);
        });
    }

    NodeId masked_softmax_rows(NodeId x, const Matrix& mask) {
        return push(greenwave::masked_softmax_rows(value(x), mask), [x, &mask](Tape& t, NodeId self) {
            const Matrix& p = t.value(self);
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (int r = 0; r < p.rows(); ++r) {
                double dot = 0.0;
                for (int c = 0; c < p.cols(); ++c)
                    if (mask(r, c) != 0.0) dot += g(r, c) * p(r, c);
                for (int c = 0; c < p.cols(); ++c)
                    if (mask(r, c) != 0.0) gx(r, c) += p(r, c) * (g(r, c) - dot);
            }
        });
    }

    /// Elementwise natural log, clamped below at 1e-12.
    NodeId log(NodeId x) {
        Matrix y = value(x);
        for (double& v : y.raw()) v = std::log(std::max(v, 1e-12));
        return push(std::move(y), [x](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& v = t.value(x);
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i) gx.raw()[i] += g.raw()[i] / std::max(v.raw()[i], 1e-12);
        });
    }

    NodeId mul_elem(NodeId a, NodeId b) {
        const Matrix& va = value(a);
        const Matrix& vb = value(b);
        if (!va.same_shape(vb)) throw ShapeError("mul_elem: " + va.shape_str() + " vs " + vb.shape_str());
        Matrix y = va;
        for (size_t i = 0; i < y.size(); ++i) y.raw()[i] *= vb.raw()[i];
        return push(std::move(y), [a, b](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            const Matrix& va2 = t.value(a);
            const Matrix& vb2 = t.value(b);
            Matrix& ga = t.nodes_[a].grad;
            Matrix& gb = t.nodes_[b].grad;
            for (size_t i = 0; i < g.size(); ++i) {
                ga.raw()[i] += g.raw()[i] * vb2.raw()[i];
                gb.raw()[i] += g.raw()[i] * va2.raw()[i];
            }
        });
    }

    NodeId mul_elem_const(NodeId x, const Matrix& c) {
        const Matrix& v = value(x);
        if (!v.same_shape(c)) throw ShapeError("mul_elem_const: " + v.shape_str() + " vs " + c.shape_str());
        Matrix y = v;
        for (size_t i = 0; i < y.size(); ++i) y.raw()[i] *= c.raw()[i];
        return push(std::move(y), [x, &c](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i) gx.raw()[i] += g.raw()[i] * c.raw()[i];
        });
    }

    /// 1x1 node: mean over all entries.
    NodeId mean_all(NodeId x) {
        const Matrix& v = value(x);
        double s = 0.0;
        for (double e : v.raw()) s += e;
        const double inv = v.size() ? 1.0 / static_cast<double>(v.size()) : 0.0;
        Matrix y(1, 1);
        y(0, 0) = s * inv;
        return push(std::move(y), [x, inv](Tape& t, NodeId self) {
            const double g = t.nodes_[self].grad(0, 0) * inv;
            for (double& e : t.nodes_[x].grad.raw()) e += g;
        });
    }

    NodeId sum_all(NodeId x) {
        const Matrix& v = value(x);
        double s = 0.0;
        for (double e : v.raw()) s += e;
        Matrix y(1, 1);
        y(0, 0) = s;
        return push(std::move(y), [x](Tape& t, NodeId self) {
            const double g = t.nodes_[self].grad(0, 0);
            for (double& e : t.nodes_[x].grad.raw()) e += g;
        });
    }

    /// 1xC node: column means (pooling across rows).
    NodeId mean_rows(NodeId x) {
        const Matrix& v = value(x);
        Matrix y(1, v.cols());
        for (int r = 0; r < v.rows(); ++r)
            for (int c = 0; c < v.cols(); ++c) y(0, c) += v(r, c);
        const double inv = v.rows() ? 1.0 / v.rows() : 0.0;
        y *= inv;
        return push(std::move(y), [x, inv](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (int r = 0; r < gx.rows(); ++r)
                for (int c = 0; c < gx.cols(); ++c) gx(r, c) += g(0, c) * inv;
        });
    }

    /// B x C node: row means over consecutive blocks of `group` rows.
    NodeId block_mean_rows(NodeId x, int group) {
        const Matrix& v = value(x);
        if (group <= 0 || v.rows() % group != 0) throw ShapeError("block_mean_rows: rows not divisible by group");
        const int blocks = v.rows() / group;
        Matrix y(blocks, v.cols());
        for (int b = 0; b < blocks; ++b)
            for (int r = 0; r < group; ++r)
                for (int c = 0; c < v.cols(); ++c) y(b, c) += v(b * group + r, c);
        y *= 1.0 / group;
        return push(std::move(y), [x, group](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            const double inv = 1.0 / group;
            for (int b = 0; b < g.rows(); ++b)
                for (int r = 0; r < group; ++r)
                    for (int c = 0; c < g.cols(); ++c) gx(b * group + r, c) += g(b, c) * inv;
        });
    }

    /// 1x1 node: mean((x - target)^2).
    NodeId mse_against(NodeId x, const Matrix& target) {
        const Matrix& v = value(x);
        if (!v.same_shape(target)) throw ShapeError("mse_against: " + v.shape_str() + " vs " + target.shape_str());
        double s = 0.0;
        for (size_t i = 0; i < v.size(); ++i) {
            const double d = v.raw()[i] - target.raw()[i];
            s += d * d;
        }
        const double inv = v.size() ? 1.0 / static_cast<double>(v.size()) : 0.0;
        Matrix y(1, 1);
        y(0, 0) = s * inv;
        return push(std::move(y), [x, &target, inv](Tape& t, NodeId self) {
            const double g = t.nodes_[self].grad(0, 0);
            const Matrix& v2 = t.value(x);
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < v2.size(); ++i)
                gx.raw()[i] += g * 2.0 * inv * (v2.raw()[i] - target.raw()[i]);
        });
    }

    /// Reshape without copying semantics on the gradient side.
    NodeId reshape(NodeId x, int rows, int cols) {
        const Matrix& v = value(x);
        if (static_cast<size_t>(rows) * cols != v.size())
            throw ShapeError("reshape: " + v.shape_str() + " to " + std::to_string(rows) + "x" + std::to_string(cols));
        Matrix y(rows, cols, v.raw());
        return push(std::move(y), [x](Tape& t, NodeId self) {
            const Matrix& g = t.nodes_[self].grad;
            Matrix& gx = t.nodes_[x].grad;
            for (size_t i = 0; i < g.size(); ++i) gx.raw()[i] += g.raw()[i];
        });
    }

    void backward(NodeId root) {
        if (value(root).rows() != 1 || value(root).cols() != 1)
            throw std::logic_error("Tape::backward: root must be a scalar node");
        nodes_[root].grad(0, 0) = 1.0;
        for (NodeId id = root; id >= 0; --id)
            if (nodes_[id].back) nodes_[id].back(*this, id);
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        std::function<void(Tape&, NodeId)> back;
    };

    NodeId push(Matrix value, std::function<void(Tape&, NodeId)> back) {
        Node n;
        n.grad = Matrix(value.rows(), value.cols());
        n.value = std::move(value);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

/// y = x*W + b broadcast over rows, recorded on the tape.
inline Tape::NodeId dense_forward(Tape& t, Tape::NodeId x, Tape::NodeId w, Tape::NodeId b) {
    return t.add_row_broadcast(t.matmul(x, w), b);
}

enum class Activation { identity, rectifier };

/// sigma(A_hat * F * W); A_hat is a constant with respect to differentiation.
inline Tape::NodeId gcn_layer(Tape& t, Tape::NodeId f, const Matrix& a_hat, Tape::NodeId w, Activation act) {
    Tape::NodeId y = t.matmul(t.const_mul_left(a_hat, f), w);
    return act == Activation::rectifier ? t.relu(y) : y;
}

/// Plain (untaped) counterparts for inference paths.
inline Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
    return add_row_broadcast(matmul(x, w), b);
}

inline Matrix gcn_layer(const Matrix& f, const Matrix& a_hat, const Matrix& w, Activation act) {
    Matrix y = matmul(matmul(a_hat, f), w);
    return act == Activation::rectifier ? relu(y) : y;
}

struct NamedParam {
    std::string name;
    Matrix* matrix;
};

/// Plain SGD; kept around for oracle tests.
struct SgdOptimizer {
    double learning_rate = 1e-3;

    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
        if (params.size() != grads.size()) throw std::invalid_argument("SgdOptimizer: param/grad count mismatch");
        for (const Matrix* g : grads)
            if (!g->all_finite()) throw std::runtime_error("SgdOptimizer: non-finite gradient, parameters untouched");
        for (size_t i = 0; i < params.size(); ++i) {
            Matrix& p = *params[i];
            const Matrix& g = *grads[i];
            for (size_t k = 0; k < p.size(); ++k) p.raw()[k] -= learning_rate * g.raw()[k];
        }
    }
};

struct AdamOptimizer {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;
    std::vector<Matrix> moment1;
    std::vector<Matrix> moment2;

    /// One update. All gradients are validated before any parameter is
    /// touched; a non-finite gradient leaves every parameter unchanged.
    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads) {
        if (params.size() != grads.size()) throw std::invalid_argument("AdamOptimizer: param/grad count mismatch");
        for (const Matrix* g : grads)
            if (!g->all_finite()) throw std::runtime_error("AdamOptimizer: non-finite gradient, parameters untouched");
        if (moment1.empty()) {
            for (Matrix* p : params) {
                moment1.emplace_back(p->rows(), p->cols());
                moment2.emplace_back(p->rows(), p->cols());
            }
        }
        ++step_count;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t i = 0; i < params.size(); ++i) {
            Matrix& p = *params[i];
            const Matrix& g = *grads[i];
            Matrix& m = moment1[i];
            Matrix& v = moment2[i];
            for (size_t k = 0; k < p.size(); ++k) {
                const double gk = g.raw()[k];
                m.raw()[k] = beta1 * m.raw()[k] + (1.0 - beta1) * gk;
                v.raw()[k] = beta2 * v.raw()[k] + (1.0 - beta2) * gk * gk;
                const double mhat = m.raw()[k] / c1;
                const double vhat = v.raw()[k] / c2;
                p.raw()[k] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Parameter checkpoints: schema-versioned text dump of named matrices.
// Doubles are written with 17 significant digits so the round trip is exact.

inline constexpr const char* kCheckpointMagic = "greenwave-params";
inline constexpr int kCheckpointVersion = 1;

inline void save_parameters(const std::string& path, std::span<const NamedParam> params) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_parameters: cannot open " + path);
    out << kCheckpointMagic << " " << kCheckpointVersion << "\n" << params.size() << "\n";
    char buf[32];
    for (const NamedParam& np : params) {
        const Matrix& m = *np.matrix;
        out << np.name << " " << m.rows() << " " << m.cols() << "\n";
        for (size_t i = 0; i < m.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", m.raw()[i]);
            out << buf << (i + 1 == m.size() ? "\n" : " ");
        }
        if (m.size() == 0) out << "\n";
    }
    if (!out) throw std::runtime_error("save_parameters: write failed for " + path);
}

/// Load into an already-shaped parameter set; names and shapes must match.
inline void load_parameters(const std::string& path, std::span<const NamedParam> params) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_parameters: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != kCheckpointMagic) throw std::runtime_error("load_parameters: not a parameter file: " + path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_parameters: unsupported version " + std::to_string(version));
    size_t count = 0;
    in >> count;
    if (count != params.size())
        throw std::runtime_error("load_parameters: file has " + std::to_string(count) + " entries, expected " +
                                 std::to_string(params.size()));
    for (const NamedParam& np : params) {
        std::string name;
        int rows = 0, cols = 0;
        in >> name >> rows >> cols;
        if (name != np.name) throw std::runtime_error("load_parameters: expected entry '" + np.name + "', found '" + name + "'");
        if (rows != np.matrix->rows() || cols != np.matrix->cols())
            throw std::runtime_error("load_parameters: shape mismatch for '" + name + "': file " + std::to_string(rows) +
                                     "x" + std::to_string(cols) + ", expected " + np.matrix->shape_str());
        for (size_t i = 0; i < np.matrix->size(); ++i) in >> np.matrix->raw()[i];
    }
    if (!in) throw std::runtime_error("load_parameters: truncated file " + path);
}

}  // namespace greenwave
