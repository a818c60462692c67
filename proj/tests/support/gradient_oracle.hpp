#pragma once

// Finite-difference gradient oracle shared by the unit tests and the
// acceptance suite. The oracle re-evaluates a scalar loss with central
// differences and never touches the tape's backward pass, so it stays an
// independent check of the analytic gradients.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "greenwave/autodiff.hpp"
#include "greenwave/matrix.hpp"
#include "greenwave/rng.hpp"

namespace gwtest {

using greenwave::Matrix;
using greenwave::Rng;
using greenwave::Tape;

/// Builds a scalar loss node from leaf nodes created for `inputs`, in order.
using LossBuilder = std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

struct GradCheckResult {
    double rel_error = 0.0;  // ||analytic - fd|| / (||analytic|| + ||fd||)
};

inline double loss_value(const LossBuilder& build, const std::vector<Matrix>& inputs) {
    Tape t;
    std::vector<Tape::NodeId> leafs;
    for (const Matrix& m : inputs) leafs.push_back(t.leaf(m));
    return t.value(build(t, leafs))(0, 0);
}

/// Central differences with step h over every entry of every input, against
/// the tape's analytic gradient.
inline GradCheckResult gradient_check(const LossBuilder& build, std::vector<Matrix> inputs, double h = 1e-4) {
    Tape t;
    std::vector<Tape::NodeId> leafs;
    for (const Matrix& m : inputs) leafs.push_back(t.leaf(m));
    Tape::NodeId loss = build(t, leafs);
    t.backward(loss);

    double num = 0.0, den_a = 0.0, den_f = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const Matrix& analytic = t.grad(leafs[i]);
        for (size_t k = 0; k < inputs[i].size(); ++k) {
            const double saved = inputs[i].raw()[k];
            inputs[i].raw()[k] = saved + h;
            const double up = loss_value(build, inputs);
            inputs[i].raw()[k] = saved - h;
            const double down = loss_value(build, inputs);
            inputs[i].raw()[k] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double a = analytic.raw()[k];
            num += (a - fd) * (a - fd);
            den_a += a * a;
            den_f += fd * fd;
        }
    }
    GradCheckResult r;
    const double den = std::sqrt(den_a) + std::sqrt(den_f);
    r.rel_error = den > 0.0 ? std::sqrt(num) / den : 0.0;
    return r;
}

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = rng.uniform(-scale, scale);
    return m;
}

/// Random mask with at least one valid entry per row.
inline Matrix random_mask(int rows, int cols, Rng& rng) {
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = rng.bernoulli(0.6) ? 1.0 : 0.0;
        m(r, rng.uniform_int(0, cols - 1)) = 1.0;
    }
    return m;
}

/// Row-stochastic matrix standing in for a normalized adjacency.
inline Matrix random_row_stochastic(int n, Rng& rng) {
    Matrix m(n, n);
    for (int r = 0; r < n; ++r) {
        double sum = 0.0;
        for (int c = 0; c < n; ++c) {
            m(r, c) = rng.uniform(0.0, 1.0);
            sum += m(r, c);
        }
        for (int c = 0; c < n; ++c) m(r, c) /= sum;
    }
    return m;
}

struct LayerCheckSummary {
    std::string layer;
    double worst_rel_error = 0.0;
    int instances = 0;
};

/// The four layer families the numerics gate cares about: dense, graph
/// convolution, masked softmax, and a pooled value head. Returns the worst
/// relative error over `instances` random shapes per family.
inline std::vector<LayerCheckSummary> run_layer_gradient_checks(int instances = 20, std::uint64_t seed = 20240401) {
    Rng rng(seed);
    std::vector<LayerCheckSummary> out;

    {
        LayerCheckSummary s{"dense", 0.0, instances};
        for (int i = 0; i < instances; ++i) {
            const int r = rng.uniform_int(1, 5), k = rng.uniform_int(1, 6), c = rng.uniform_int(1, 5);
            const Matrix target = random_matrix(r, c, rng);
            auto build = [&target](Tape& t, const std::vector<Tape::NodeId>& L) {
                return t.mse_against(greenwave::dense_forward(t, L[0], L[1], L[2]), target);
            };
            s.worst_rel_error = std::max(
                s.worst_rel_error,
                gradient_check(build, {random_matrix(r, k, rng), random_matrix(k, c, rng), random_matrix(1, c, rng)})
                    .rel_error);
        }
        out.push_back(s);
    }
    {
        LayerCheckSummary s{"gcn", 0.0, instances};
        for (int i = 0; i < instances; ++i) {
            const int n = rng.uniform_int(1, 5), d = rng.uniform_int(1, 5), c = rng.uniform_int(1, 4);
            const Matrix a_hat = random_row_stochastic(n, rng);
            const Matrix target = random_matrix(n, c, rng);
            auto build = [&a_hat, &target](Tape& t, const std::vector<Tape::NodeId>& L) {
                return t.mse_against(greenwave::gcn_layer(t, L[0], a_hat, L[1], greenwave::Activation::rectifier),
                                     target);
            };
            s.worst_rel_error = std::max(
                s.worst_rel_error,
                gradient_check(build, {random_matrix(n, d, rng), random_matrix(d, c, rng)}).rel_error);
        }
        out.push_back(s);
    }
    {
        LayerCheckSummary s{"masked_softmax", 0.0, instances};
        for (int i = 0; i < instances; ++i) {
            const int r = rng.uniform_int(1, 5), c = rng.uniform_int(2, 6);
            const Matrix mask = random_mask(r, c, rng);
            Matrix target = random_matrix(r, c, rng);
            for (size_t k = 0; k < target.size(); ++k)
                if (mask.raw()[k] == 0.0) target.raw()[k] = 0.0;
            auto build = [&mask, &target](Tape& t, const std::vector<Tape::NodeId>& L) {
                return t.mse_against(t.masked_softmax_rows(L[0], mask), target);
            };
            s.worst_rel_error =
                std::max(s.worst_rel_error, gradient_check(build, {random_matrix(r, c, rng, 2.0)}).rel_error);
        }
        out.push_back(s);
    }
    {
        // Value head: graph layer -> dense trunk -> pooled scalar, checked
        // end to end through every weight.
        LayerCheckSummary s{"value_head", 0.0, instances};
        for (int i = 0; i < instances; ++i) {
            const int n = rng.uniform_int(1, 4), d = rng.uniform_int(1, 4), e = rng.uniform_int(1, 4);
            const Matrix a_hat = random_row_stochastic(n, rng);
            const Matrix target(1, 1, {rng.uniform(-1.0, 1.0)});
            auto build = [&a_hat, &target, n](Tape& t, const std::vector<Tape::NodeId>& L) {
                Tape::NodeId h = greenwave::gcn_layer(t, L[0], a_hat, L[1], greenwave::Activation::rectifier);
                Tape::NodeId pooled = t.block_mean_rows(h, n);
                Tape::NodeId v = greenwave::dense_forward(t, pooled, L[2], L[3]);
                return t.mse_against(v, target);
            };
            s.worst_rel_error = std::max(
                s.worst_rel_error,
                gradient_check(build, {random_matrix(n, d, rng), random_matrix(d, e, rng), random_matrix(e, 1, rng),
                                       random_matrix(1, 1, rng)})
                    .rel_error);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace gwtest
