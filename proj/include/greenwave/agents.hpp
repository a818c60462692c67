#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "greenwave/env.hpp"
#include "greenwave/qnet.hpp"
#include "greenwave/scenario_io.hpp"

namespace greenwave {

/// Joint decision for all intersections: an n x m score matrix with a
/// validity mask and the chosen phase per intersection. Baselines leave the
/// scores at zero and only fill `chosen`.
struct ActionMatrix {
    int n = 0;
    int m = 0;
    Matrix values;
    Matrix mask;
    std::vector<int> chosen;

    static ActionMatrix for_network(const RoadNetwork& net) {
        ActionMatrix a;
        a.n = net.intersection_count();
        a.m = net.max_phase_count();
        a.values = Matrix(a.n, a.m);
        a.mask = Matrix(a.n, a.m);
        for (int i = 0; i < a.n; ++i)
            for (int p = 0; p < net.intersections[i].phase_count; ++p) a.mask(i, p) = 1.0;
        a.chosen.assign(a.n, 0);
        return a;
    }
};

struct Transition {
    std::vector<double> state;
    std::vector<int> action;  // per member intersection
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
};

/// Fixed-capacity ring of transitions; eviction is strictly oldest-first.
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity = 2000) : capacity_(capacity) {}

    void push(Transition t) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[head_] = std::move(t);
            head_ = (head_ + 1) % capacity_;
        }
    }

    size_t size() const { return data_.size(); }
    size_t capacity() const { return capacity_; }

    /// Oldest-first access (index 0 = oldest surviving transition).
    const Transition& at(size_t i) const { return data_[(head_ + i) % data_.size()]; }

    /// Uniform sample of `count` distinct transitions.
    std::vector<const Transition*> sample(size_t count, Rng& rng) const {
        if (count > data_.size()) throw std::invalid_argument("ReplayBuffer::sample: batch exceeds buffer size");
        std::vector<size_t> idx(data_.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
        std::vector<const Transition*> out;
        out.reserve(count);
        for (size_t i = 0; i < count; ++i) out.push_back(&data_[idx[i]]);
        return out;
    }

private:
    size_t capacity_;
    size_t head_ = 0;
    std::vector<Transition> data_;
};

enum class AgentVariant { random, fixed, auction, marl_s, marl_g, egu_rl };
enum class LearnerKind { dqn, actor_critic };

inline const char* variant_name(AgentVariant v) {
    switch (v) {
        case AgentVariant::random: return "random";
        case AgentVariant::fixed: return "fixed";
        case AgentVariant::auction: return "auction";
        case AgentVariant::marl_s: return "marl_s";
        case AgentVariant::marl_g: return "marl_g";
        default: return "egu_rl";
    }
}

inline AgentVariant variant_from_name(const std::string& s) {
    for (AgentVariant v : {AgentVariant::random, AgentVariant::fixed, AgentVariant::auction, AgentVariant::marl_s,
                           AgentVariant::marl_g, AgentVariant::egu_rl})
        if (s == variant_name(v)) return v;
    throw std::invalid_argument("unknown agent variant '" + s + "'");
}

struct AgentConfig {
    AgentVariant variant = AgentVariant::egu_rl;
    bool use_usd = true;          // unified structure decoder (egu_rl ablation)
    bool use_ege = true;          // graph-convolutional encoder (egu_rl ablation)
    bool use_edge_weights = true; // length-weighted adjacency (egu_rl ablation)
    LearnerKind learner = LearnerKind::dqn;
    double gamma = 0.9;
    double lr = 1e-3;
    double epsilon_start = 0.5;
    double epsilon_decay = 0.99999;  // per learning step
    double epsilon_min = 0.01;
    int batch = 150;
    int target_sync = 100;  // learning steps between target overrides
    int replay_capacity = 2000;
    int hidden1 = 128;
    int hidden2 = 64;
    int gcn_dim = 32;
    int group_size = 3;  // marl_g and the w/o-USD joint heads
    double alpha = 1.0;  // hybrid reward trade-off
    int fixed_dwell = 15;        // steps per phase for the fixed schedule
    int auction_probes = 32;
    double auction_wt_normalizer = 10.0;
    AdjacencyNorm adjacency_norm = AdjacencyNorm::rownorm_of_a_plus_i;
    int ac_segment = 16;  // actor-critic rollout segment length

    void validate() const {
        if (gamma < 0 || gamma > 1 || lr <= 0 || epsilon_start < 0 || epsilon_start > 1 || epsilon_min < 0 ||
            epsilon_decay <= 0 || epsilon_decay > 1 || batch < 1 || target_sync < 1 || replay_capacity < 1 ||
            group_size < 1)
            throw std::invalid_argument("AgentConfig: parameter out of range");
    }
};

// ---------------------------------------------------------------------------
// Baseline controllers

/// Uniformly random valid phase per intersection.
inline ActionMatrix act_random(const RoadNetwork& net, Rng& rng) {
    ActionMatrix a = ActionMatrix::for_network(net);
    for (int i = 0; i < a.n; ++i) a.chosen[i] = rng.uniform_int(0, net.intersections[i].phase_count - 1);
    return a;
}

/// Cycles phases sequentially, dwelling `dwell` steps on each.
inline ActionMatrix act_fixed(const RoadNetwork& net, int clock, int dwell) {
    if (dwell <= 0) throw std::invalid_argument("act_fixed: dwell must be > 0");
    ActionMatrix a = ActionMatrix::for_network(net);
    for (int i = 0; i < a.n; ++i) a.chosen[i] = (clock / dwell) % net.intersections[i].phase_count;
    return a;
}

namespace auction_detail {

/// Bid for giving a phase green: waiting pressure over its green lanes.
inline double phase_bid(const Intersection& inter, int phase, const DetectorFrame& frame,
                        const std::vector<int>& slot_of, double wt_normalizer) {
    double bid = 0.0;
    for (int lane : inter.phase_table[phase]) {
        const int slot = slot_of[lane];
        if (slot < 0) continue;
        bid += frame.waiting_count[slot] + frame.waiting_time_sum[slot] / wt_normalizer;
    }
    return bid;
}

}  // namespace auction_detail

/// Auction controller with next-ascent stochastic hill-climbing: starting
/// from the current phases, probe random single-intersection flips and
/// accept each first strict improvement of the total bid, up to `probes`
/// probes. Greedy; no learning.
inline ActionMatrix act_auction_nash(const SimState& s, int probes, Rng& rng, double wt_normalizer = 10.0) {
    if (probes < 1) throw std::invalid_argument("act_auction_nash: probes must be >= 1");
    const RoadNetwork& net = s.network();
    ActionMatrix a = ActionMatrix::for_network(net);
    DetectorFrame frame = read_detectors(s);
    std::vector<int> slot_of(net.lanes.size(), -1);
    for (size_t i = 0; i < frame.lanes.size(); ++i) slot_of[frame.lanes[i]] = static_cast<int>(i);

    std::vector<double> bid(a.n);
    for (int i = 0; i < a.n; ++i) {
        a.chosen[i] = s.signals[i].current_phase;
        bid[i] = auction_detail::phase_bid(net.intersections[i], a.chosen[i], frame, slot_of, wt_normalizer);
        for (int p = 0; p < net.intersections[i].phase_count; ++p)
            a.values(i, p) = auction_detail::phase_bid(net.intersections[i], p, frame, slot_of, wt_normalizer);
    }
    for (int probe = 0; probe < probes; ++probe) {
        const int i = rng.uniform_int(0, a.n - 1);
        const int pc = net.intersections[i].phase_count;
        if (pc < 2) continue;
        int p = rng.uniform_int(0, pc - 2);
        if (p >= a.chosen[i]) ++p;  // a flip, never the incumbent
        const double candidate = a.values(i, p);
        if (candidate > bid[i]) {
            a.chosen[i] = p;
            bid[i] = candidate;
        }
    }
    return a;
}

/// Epsilon-greedy choice per intersection over masked scores: with
/// probability epsilon a uniformly valid random phase, otherwise the masked
/// argmax. Fills `chosen` in place.
inline void select_action(ActionMatrix& a, double epsilon, Rng& rng) {
    if (epsilon < 0.0 || epsilon > 1.0) throw std::invalid_argument("select_action: epsilon outside [0, 1]");
    const std::vector<int> greedy = masked_row_argmax(a.values, a.mask);
    for (int i = 0; i < a.n; ++i) {
        if (epsilon > 0.0 && rng.bernoulli(epsilon)) {
            std::vector<int> valid;
            for (int p = 0; p < a.m; ++p)
                if (a.mask(i, p) != 0.0) valid.push_back(p);
            a.chosen[i] = valid[rng.index(valid.size())];
        } else {
            a.chosen[i] = greedy[i];
        }
    }
}

// ---------------------------------------------------------------------------
// DQN learner

/// Hard copy of the online parameters into the target network every
/// `interval` learning steps; returns true when a copy happened.
inline bool sync_target(const QNetwork& online, QNetwork& target, long learn_step, int interval) {
    if (learn_step % interval != 0) return false;
    target.gcn_w = online.gcn_w;
    target.w1 = online.w1;
    target.b1 = online.b1;
    target.w2 = online.w2;
    target.b2 = online.b2;
    target.wh = online.wh;
    target.bh = online.bh;
    target.vw = online.vw;
    target.vb = online.vb;
    return true;
}

/// Per-transition TD targets with double-DQN selection: the online network
/// argmax picks the bootstrap action, the target network prices it.
/// usd heads produce one target per (transition, member); onehot heads one
/// per transition. Terminal transitions drop the bootstrap term.
inline Matrix compute_td_targets(const QNetwork& online, const QNetwork& target,
                                 std::span<const Transition* const> batch, double gamma) {
    const QNetworkSpec& spec = online.spec;
    const int b = static_cast<int>(batch.size());
    const int g = spec.group_size();
    Matrix next_inputs(b, spec.input_width());
    for (int t = 0; t < b; ++t)
        std::copy(batch[t]->next_state.begin(), batch[t]->next_state.end(), next_inputs.data() + static_cast<size_t>(t) * spec.input_width());
    const Matrix q_next_online = q_forward(online, next_inputs).scores;
    const Matrix q_next_target = q_forward(target, next_inputs).scores;

    if (spec.head == HeadKind::usd_matrix) {
        Matrix mask(b * g, spec.max_phases);
        const Matrix unit_mask = spec.phase_mask();
        for (int t = 0; t < b; ++t)
            for (int r = 0; r < g; ++r)
                for (int c = 0; c < spec.max_phases; ++c) mask(t * g + r, c) = unit_mask(r, c);
        const std::vector<int> best = masked_row_argmax(q_next_online, mask);
        Matrix targets(b * g, 1);
        for (int t = 0; t < b; ++t)
            for (int r = 0; r < g; ++r) {
                const int row = t * g + r;
                double y = batch[t]->reward;
                if (!batch[t]->done) y += gamma * q_next_target(row, best[row]);
                targets(row, 0) = y;
            }
        return targets;
    }
    const Matrix jmask_row = spec.joint_mask();
    Matrix jmask(b, spec.joint_actions());
    for (int t = 0; t < b; ++t)
        for (int c = 0; c < spec.joint_actions(); ++c) jmask(t, c) = jmask_row(0, c);
    const std::vector<int> best = masked_row_argmax(q_next_online, jmask);
    Matrix targets(b, 1);
    for (int t = 0; t < b; ++t) {
        double y = batch[t]->reward;
        if (!batch[t]->done) y += gamma * q_next_target(t, best[t]);
        targets(t, 0) = y;
    }
    return targets;
}

/// One factored TD step: mean squared error between the online network's
/// value of each taken action and its double-DQN target, followed by one
/// optimizer step. Returns the loss. A non-finite loss raises and leaves
/// the parameters untouched.
inline double td_update(QNetwork& online, const QNetwork& target, std::span<const Transition* const> batch,
                        double gamma, AdamOptimizer& opt) {
    if (batch.empty()) throw std::invalid_argument("td_update: empty batch");
    const QNetworkSpec& spec = online.spec;
    const int b = static_cast<int>(batch.size());
    const int g = spec.group_size();

    const Matrix targets = compute_td_targets(online, target, batch, gamma);

    Matrix inputs(b, spec.input_width());
    std::vector<int> taken;
    for (int t = 0; t < b; ++t) {
        std::copy(batch[t]->state.begin(), batch[t]->state.end(), inputs.data() + static_cast<size_t>(t) * spec.input_width());
        if (spec.head == HeadKind::usd_matrix)
            for (int r = 0; r < g; ++r) taken.push_back(batch[t]->action[r]);
        else
            taken.push_back(spec.encode_joint(batch[t]->action));
    }

    Tape tape;
    TapedQForward fwd = q_forward_tape(online, tape, inputs);
    Tape::NodeId pred = tape.select_per_row(fwd.scores, taken);
    Tape::NodeId loss = tape.mse_against(pred, targets);
    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value)) throw std::runtime_error("td_update: non-finite loss, parameters untouched");
    tape.backward(loss);

    std::vector<NamedParam> named = online.named_params();
    std::vector<Matrix*> params;
    std::vector<const Matrix*> grads;
    for (size_t i = 0; i < named.size(); ++i) {
        params.push_back(named[i].matrix);
        grads.push_back(&tape.grad(fwd.param_leafs[i]));
    }
    opt.step(params, grads);
    return loss_value;
}

/// Reward scale used by the critic; waiting-time rewards reach the hundreds
/// and would otherwise swamp the policy terms through the shared trunk.
inline constexpr double kCriticRewardScale = 0.01;

/// One actor-critic step over a trajectory batch: masked row-softmax policy
/// with TD(0) advantages, a value MSE term, and an entropy bonus. The value
/// head regresses rewards scaled by kCriticRewardScale; advantages are
/// standardized over the batch, so the policy gradient is scale-free.
inline double actor_critic_update(QNetwork& net, std::span<const Transition* const> batch, double gamma,
                                  AdamOptimizer& opt, double value_coef = 0.5, double entropy_coef = 0.05) {
    if (batch.empty()) throw std::invalid_argument("actor_critic_update: empty batch");
    if (!net.spec.value_head) throw std::logic_error("actor_critic_update: network lacks a value head");
    const QNetworkSpec& spec = net.spec;
    const int b = static_cast<int>(batch.size());
    const int g = spec.group_size();

    Matrix inputs(b, spec.input_width());
    Matrix next_inputs(b, spec.input_width());
    std::vector<int> taken;
    for (int t = 0; t < b; ++t) {
        std::copy(batch[t]->state.begin(), batch[t]->state.end(), inputs.data() + static_cast<size_t>(t) * spec.input_width());
        std::copy(batch[t]->next_state.begin(), batch[t]->next_state.end(), next_inputs.data() + static_cast<size_t>(t) * spec.input_width());
        for (int r = 0; r < g; ++r) taken.push_back(batch[t]->action[r]);
    }

    const Matrix v_next = q_forward(net, next_inputs).value;  // bootstrap, no gradient

    Tape tape;
    TapedQForward fwd = q_forward_tape(net, tape, inputs);

    Matrix value_targets(b, 1);
    for (int t = 0; t < b; ++t)
        value_targets(t, 0) = kCriticRewardScale * batch[t]->reward + (batch[t]->done ? 0.0 : gamma * v_next(t, 0));
    std::vector<double> raw_adv(b);
    double adv_mean = 0.0;
    for (int t = 0; t < b; ++t) {
        raw_adv[t] = value_targets(t, 0) - tape.value(fwd.value)(t, 0);
        adv_mean += raw_adv[t] / b;
    }
    // advantages standardized over the batch; raw TD residuals reach the
    // hundreds here and saturate the softmax within a few updates
    double adv_var = 0.0;
    for (int t = 0; t < b; ++t) adv_var += (raw_adv[t] - adv_mean) * (raw_adv[t] - adv_mean) / b;
    const double adv_scale = b > 1 ? 1.0 / (std::sqrt(adv_var) + 1e-8) : 1.0;
    Matrix advantage(b * g, 1);
    for (int t = 0; t < b; ++t) {
        const double adv = b > 1 ? (raw_adv[t] - adv_mean) * adv_scale : raw_adv[t];
        for (int r = 0; r < g; ++r) advantage(t * g + r, 0) = adv;
    }

    Matrix mask(b * g, spec.max_phases);
    const Matrix unit_mask = spec.phase_mask();
    for (int t = 0; t < b; ++t)
        for (int r = 0; r < g; ++r)
            for (int c = 0; c < spec.max_phases; ++c) mask(t * g + r, c) = unit_mask(r, c);

    Tape::NodeId probs = tape.masked_softmax_rows(fwd.scores, mask);
    Tape::NodeId logp_taken = tape.log(tape.select_per_row(probs, taken));
    Tape::NodeId policy_term = tape.scale(tape.mean_all(tape.mul_elem_const(logp_taken, advantage)), -1.0);
    // mean per-row entropy, -sum_valid p log p; masked entries contribute zero
    Tape::NodeId ent = tape.scale(tape.sum_all(tape.mul_elem(probs, tape.log(probs))), -1.0 / (b * g));
    Tape::NodeId value_term = tape.mse_against(fwd.value, value_targets);
    Tape::NodeId loss = tape.add(policy_term, tape.add(tape.scale(value_term, value_coef), tape.scale(ent, -entropy_coef)));

    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value)) throw std::runtime_error("actor_critic_update: non-finite loss, parameters untouched");
    tape.backward(loss);

    std::vector<NamedParam> named = net.named_params();
    std::vector<Matrix*> params;
    std::vector<const Matrix*> grads;
    for (size_t i = 0; i < named.size(); ++i) {
        params.push_back(named[i].matrix);
        grads.push_back(&tape.grad(fwd.param_leafs[i]));
    }
    opt.step(params, grads);
    return loss_value;
}

// ---------------------------------------------------------------------------
// Learner: one or more units (networks + buffers) over a scenario

namespace learner_detail {

/// Disjoint spatial groups: intersections ordered by (x, y), chunked.
inline std::vector<std::vector<int>> tile_groups(const RoadNetwork& net, int group_size) {
    std::vector<int> order(net.intersection_count());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const Intersection& ia = net.intersections[a];
        const Intersection& ib = net.intersections[b];
        if (ia.x != ib.x) return ia.x < ib.x;
        return ia.y < ib.y;
    });
    std::vector<std::vector<int>> groups;
    for (int i = 0; i < static_cast<int>(order.size()); i += group_size) {
        std::vector<int> g(order.begin() + i, order.begin() + std::min<size_t>(order.size(), i + group_size));
        std::sort(g.begin(), g.end());
        groups.push_back(std::move(g));
    }
    return groups;
}

}  // namespace learner_detail

struct LearningUnit {
    QNetwork online;
    QNetwork target;
    ReplayBuffer buffer{2000};
    AdamOptimizer opt;
    long learn_steps = 0;
};

/// A complete learning agent: the variant decides how intersections are
/// split into units and what each unit's network looks like.
class Learner {
public:
    static Learner make(const Scenario& scenario, const AgentConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Learner L;
        L.cfg_ = cfg;
        L.rng_ = Rng(seed);
        L.layout_ = make_feature_layout(scenario.network, scenario.sim_params);
        L.epsilon_ = cfg.epsilon_start;
        L.action_template_ = ActionMatrix::for_network(scenario.network);

        const RoadNetwork& net = scenario.network;
        std::vector<std::vector<int>> groups;
        const bool gcn = cfg.variant == AgentVariant::egu_rl && cfg.use_ege;
        switch (cfg.variant) {
            case AgentVariant::marl_s:
                for (int i = 0; i < net.intersection_count(); ++i) groups.push_back({i});
                break;
            case AgentVariant::marl_g:
                groups = learner_detail::tile_groups(net, cfg.group_size);
                break;
            case AgentVariant::egu_rl:
                if (cfg.use_usd) {
                    groups.push_back(std::vector<int>(net.intersection_count()));
                    std::iota(groups.back().begin(), groups.back().end(), 0);
                } else {
                    groups = learner_detail::tile_groups(net, cfg.group_size);
                }
                break;
            default:
                throw std::invalid_argument("Learner: variant has no learning networks");
        }

        WeightedAdjacency adj;
        if (gcn) adj = compute_adjacency(net, cfg.adjacency_norm, cfg.use_edge_weights);

        for (const std::vector<int>& members : groups) {
            QNetworkSpec spec;
            spec.members = members;
            for (int i : members) spec.phase_counts.push_back(net.intersections[i].phase_count);
            spec.node_width = L.layout_.node_width();
            spec.max_phases = L.layout_.max_phases;
            spec.gcn_dim = cfg.gcn_dim;
            spec.hidden1 = cfg.hidden1;
            spec.hidden2 = cfg.hidden2;
            spec.encoder = gcn ? EncoderKind::gcn : EncoderKind::concat;
            const bool usd = cfg.variant == AgentVariant::egu_rl ? cfg.use_usd : cfg.variant == AgentVariant::marl_s;
            spec.head = usd ? HeadKind::usd_matrix : HeadKind::onehot_joint;
            spec.value_head = cfg.learner == LearnerKind::actor_critic;
            if (gcn) {
                const int g = spec.group_size();
                Matrix sub(g, g);
                for (int r = 0; r < g; ++r)
                    for (int c = 0; c < g; ++c) sub(r, c) = adj.entries(members[r], members[c]);
                spec.a_hat = normalize_adjacency(sub, cfg.adjacency_norm);
            }
            LearningUnit unit;
            unit.online.spec = spec;
            Rng init_rng = L.rng_.fork(9000 + L.units_.size());
            unit.online.init(init_rng);
            unit.target = unit.online;
            unit.buffer = ReplayBuffer(static_cast<size_t>(cfg.replay_capacity));
            unit.opt.learning_rate = cfg.lr;
            L.units_.push_back(std::move(unit));
        }
        L.segments_.resize(L.units_.size());
        return L;
    }

    const AgentConfig& config() const { return cfg_; }
    std::vector<LearningUnit>& units() { return units_; }
    const std::vector<LearningUnit>& units() const { return units_; }
    double epsilon() const { return epsilon_; }
    const FeatureLayout& layout() const { return layout_; }

    long parameter_count() const {
        long n = 0;
        for (const LearningUnit& u : units_) n += u.online.parameter_count();
        return n;
    }

    /// Slice of the global node-feature matrix covering one unit's members,
    /// flattened row-major.
    std::vector<double> unit_input(const Matrix& features, const LearningUnit& u) const {
        const QNetworkSpec& spec = u.online.spec;
        std::vector<double> x;
        x.reserve(spec.input_width());
        for (int i : spec.members)
            for (int c = 0; c < spec.node_width; ++c) x.push_back(features(i, c));
        return x;
    }

    /// Joint action for the whole network. epsilon < 0 uses the current
    /// exploration schedule; pass 0 for a greedy evaluation rollout.
    ActionMatrix act(const Observation& obs, double epsilon_override = -1.0) {
        const double eps = epsilon_override >= 0.0 ? epsilon_override : epsilon_;
        const Matrix features = node_features(obs, layout_);
        ActionMatrix global = action_template_;
        for (LearningUnit& u : units_) {
            const QNetworkSpec& spec = u.online.spec;
            Matrix input(1, spec.input_width(), unit_input(features, u));
            const Matrix scores = q_forward(u.online, input).scores;
            std::vector<int> phases(spec.group_size());
            if (cfg_.learner == LearnerKind::actor_critic) {
                // stochastic policy: sample each row's masked softmax
                const Matrix pmask = spec.phase_mask();
                if (eps == 0.0) {
                    phases = masked_row_argmax(scores, pmask);
                } else {
                    const Matrix probs = masked_softmax_rows(scores, pmask);
                    for (int r = 0; r < spec.group_size(); ++r) {
                        double x = rng_.uniform();
                        int pick = spec.phase_counts[r] - 1;
                        for (int p = 0; p < spec.max_phases; ++p) {
                            if (pmask(r, p) == 0.0) continue;
                            x -= probs(r, p);
                            if (x < 0.0) {
                                pick = p;
                                break;
                            }
                        }
                        phases[r] = pick;
                    }
                }
            } else if (spec.head == HeadKind::usd_matrix) {
                ActionMatrix local;
                local.n = spec.group_size();
                local.m = spec.max_phases;
                local.values = scores;
                local.mask = spec.phase_mask();
                local.chosen.assign(local.n, 0);
                select_action(local, eps, rng_);
                phases = local.chosen;
            } else {
                const std::vector<int> best = masked_row_argmax(scores, spec.joint_mask());
                phases = spec.decode_joint(best[0]);
                for (int r = 0; r < spec.group_size(); ++r) {
                    if (eps > 0.0 && rng_.bernoulli(eps))
                        phases[r] = rng_.uniform_int(0, spec.phase_counts[r] - 1);
                }
            }
            for (int r = 0; r < spec.group_size(); ++r) {
                const int inter = spec.members[r];
                global.chosen[inter] = phases[r];
                if (spec.head == HeadKind::usd_matrix)
                    for (int c = 0; c < spec.max_phases; ++c) global.values(inter, c) = scores(r, c);
            }
        }
        return global;
    }

    /// Records one environment step into every unit's buffer (or the
    /// actor-critic segment).
    void observe_transition(const Observation& prev, const ActionMatrix& action, double reward,
                            const Observation& next, bool done) {
        const Matrix f_prev = node_features(prev, layout_);
        const Matrix f_next = node_features(next, layout_);
        for (size_t ui = 0; ui < units_.size(); ++ui) {
            LearningUnit& u = units_[ui];
            Transition t;
            t.state = unit_input(f_prev, u);
            t.next_state = unit_input(f_next, u);
            t.reward = reward;
            t.done = done;
            for (int i : u.online.spec.members) t.action.push_back(action.chosen[i]);
            if (cfg_.learner == LearnerKind::actor_critic)
                segments_[ui].push_back(std::move(t));
            else
                u.buffer.push(std::move(t));
        }
    }

    /// One learning round: every ready unit updates once, target networks
    /// sync on their schedule, epsilon decays once if anything learned.
    /// Returns the mean loss or NaN when no unit was ready.
    double learn() {
        double loss_sum = 0.0;
        int updated = 0;
        if (cfg_.learner == LearnerKind::actor_critic) {
            for (size_t ui = 0; ui < units_.size(); ++ui) {
                if (static_cast<int>(segments_[ui].size()) < cfg_.ac_segment) continue;
                std::vector<const Transition*> batch;
                for (const Transition& t : segments_[ui]) batch.push_back(&t);
                loss_sum += actor_critic_update(units_[ui].online, batch, cfg_.gamma, units_[ui].opt);
                segments_[ui].clear();
                ++updated;
                ++units_[ui].learn_steps;
            }
        } else {
            for (LearningUnit& u : units_) {
                if (u.buffer.size() < static_cast<size_t>(cfg_.batch)) continue;
                const auto batch = u.buffer.sample(static_cast<size_t>(cfg_.batch), rng_);
                loss_sum += td_update(u.online, u.target, batch, cfg_.gamma, u.opt);
                ++u.learn_steps;
                sync_target(u.online, u.target, u.learn_steps, cfg_.target_sync);
                ++updated;
            }
        }
        if (updated == 0) return std::numeric_limits<double>::quiet_NaN();
        epsilon_ = std::max(cfg_.epsilon_min, epsilon_ * cfg_.epsilon_decay);
        return loss_sum / updated;
    }

    void save(const std::string& path) {
        std::vector<NamedParam> all;
        std::vector<std::string> names;
        names.reserve(units_.size() * 16);
        for (size_t ui = 0; ui < units_.size(); ++ui)
            for (NamedParam& np : units_[ui].online.named_params())
                names.push_back("u" + std::to_string(ui) + "." + np.name);
        size_t k = 0;
        for (size_t ui = 0; ui < units_.size(); ++ui)
            for (NamedParam& np : units_[ui].online.named_params()) all.push_back({names[k++], np.matrix});
        save_parameters(path, all);
    }

    void load(const std::string& path) {
        std::vector<NamedParam> all;
        std::vector<std::string> names;
        for (size_t ui = 0; ui < units_.size(); ++ui)
            for (NamedParam& np : units_[ui].online.named_params())
                names.push_back("u" + std::to_string(ui) + "." + np.name);
        size_t k = 0;
        for (size_t ui = 0; ui < units_.size(); ++ui)
            for (NamedParam& np : units_[ui].online.named_params()) all.push_back({names[k++], np.matrix});
        load_parameters(path, all);
        for (LearningUnit& u : units_) u.target = u.online;
    }

private:
    AgentConfig cfg_;
    Rng rng_{0};
    FeatureLayout layout_;
    std::vector<LearningUnit> units_;
    std::vector<std::vector<Transition>> segments_;  // actor-critic rollout buffers
    double epsilon_ = 0.5;
    ActionMatrix action_template_;
};

// ---------------------------------------------------------------------------
// Training loop

struct CurvePoint {
    int episode = 0;
    double cost = 0.0;    // sum of per-step Cost_wt over the episode
    double reward = 0.0;  // hybrid reward sum
    double epsilon = 0.0;
    double loss = 0.0;    // mean per-update loss this episode
};

struct TrainResult {
    std::vector<CurvePoint> curve;
    std::vector<EpisodeMetrics> metrics;
};

/// Trains a learner: per step observe -> select -> env step -> replay push
/// -> TD (or actor-critic) update -> target sync and epsilon decay, for
/// `episodes` episodes of `steps` steps. Deterministic per seed.
inline TrainResult train(TrafficEnv& env, Learner& learner, int episodes, int steps,
                         const std::function<void(int, Learner&, const CurvePoint&)>& on_episode = {}) {
    TrainResult result;
    for (int ep = 0; ep < episodes; ++ep) {
        Observation obs = env.reset();
        double loss_sum = 0.0;
        int loss_count = 0;
        for (int t = 0; t < steps; ++t) {
            ActionMatrix action = learner.act(obs);
            TrafficEnv::StepResult res = env.step(action.chosen);
            learner.observe_transition(obs, action, res.reward.r_total, res.obs, res.done);
            const double loss = learner.learn();
            if (!std::isnan(loss)) {
                loss_sum += loss;
                ++loss_count;
            }
            obs = std::move(res.obs);
        }
        CurvePoint point;
        point.episode = ep;
        point.cost = env.metrics().cost_sum();
        point.reward = env.metrics().reward_sum;
        point.epsilon = learner.epsilon();
        point.loss = loss_count ? loss_sum / loss_count : 0.0;
        result.curve.push_back(point);
        result.metrics.push_back(env.metrics());
        if (on_episode) on_episode(ep, learner, point);
    }
    return result;
}

}  // namespace greenwave
