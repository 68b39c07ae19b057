#pragma once

#include <fstream>
#include <iomanip>

#include "echolocate/manifest.hpp"
#include "echolocate/policy.hpp"

#include "json.hpp"

namespace echolocate {

// Everything a trial needs to render observations. The bank must be warmed
// (all signal ids touched once) before parallel use.
struct EvalContext {
    EnvConfig env;
    AcousticParams acoustics;
    FeatureConfig features;
    const SignalBank* bank = nullptr;
};

struct TrialRecord {
    uint64_t seed = 0;          // reset seed for this trial
    int first_action = -1;      // greedy action from the initial observation
    bool oracle_empty = false;  // no strictly distance-reducing action existed
    bool accurate = false;      // first_action in the oracle set
    bool reached = false;       // found within max_steps, zero out-of-bounds
    int steps = 0;              // steps actually taken in the rollout
    double total_reward = 0;    // r_plus/r_oob plus soft reward, summed
};

struct MetricsReport {
    int n_trials = 0;
    double accuracy = 0;
    double reachability = 0;
    double avg_total_reward = 0;
    std::vector<TrialRecord> trials;
};

namespace eval_detail {

inline uint64_t trial_seed(const EvalConfig& ec, size_t trial) {
    return mix_seed(ec.seed, 0xe7a1, uint64_t(trial));
}

inline int greedy_action(const PolicyFn& policy, const EnvState& st, const FeatureMap& cur,
                         const HistoryView& past) {
    return argmax_action(policy(st, cur, past));
}

// One greedy trial covering all three Table-style metrics at once. The reward
// rollout keeps going after an out-of-bounds step (the agent stays in place),
// so reachability failure does not cut reward accounting short.
inline TrialRecord run_trial(const EvalContext& ctx, const PolicyFn& policy, const EvalConfig& ec,
                             size_t trial, bool rollout_needed) {
    EnvConfig cfg = ctx.env;
    cfg.horizon = std::max(1, ec.max_steps);  // trial budget, not the training horizon
    Environment env(cfg, ctx.acoustics, ctx.bank);

    TrialRecord rec;
    rec.seed = trial_seed(ec, trial);
    Observation obs = env.reset(EnvMode::Eval, rec.seed);

    std::vector<FeatureMap> maps;
    maps.reserve(size_t(cfg.horizon) + 2);
    maps.push_back(logmel(obs, ctx.features));
    HistoryView past;

    auto oracle = oracle_action_set(env.state(), cfg);
    rec.oracle_empty = oracle.empty();
    rec.first_action = greedy_action(policy, env.state(), maps.back(), past);
    rec.accurate = oracle.count(ActionId(rec.first_action)) > 0;
    if (!rollout_needed || ec.max_steps == 0) return rec;

    bool hit_oob = false;
    bool found_all = false;
    int a = rec.first_action;
    for (int step = 0; step < ec.max_steps && !env.state().terminal; ++step) {
        if (step > 0) a = greedy_action(policy, env.state(), maps.back(), past);
        int tgt = nearest_unfound(env.state(), env.state().agent.centre);
        Vec3 tgt_pos = env.state().sources[size_t(tgt)].position;
        double d_prev = distance(env.state().agent.centre, tgt_pos);
        StepOutcome out = env.step(ActionId(a));
        double d_cur = distance(env.state().agent.centre, tgt_pos);
        rec.steps = step + 1;

        double r = 0;
        if (out.event == StepEvent::FoundNewSource) r += cfg.r_plus;
        if (out.event == StepEvent::OutOfBounds) {
            r += cfg.r_oob;
            hit_oob = true;
        }
        double soft = ec.soft_reward_scale * (d_prev - d_cur);
        if (ec.soft_reward_printed_sign) soft = -soft;
        rec.total_reward += r + soft;

        if (out.event == StepEvent::FoundNewSource &&
            int(env.state().found.size()) == cfg.n_sources)
            found_all = true;

        past.emplace_back(&maps.back(), a);
        maps.push_back(logmel(out.observation, ctx.features));
        if (found_all && hit_oob) break;  // both outcomes already decided
        if (env.state().terminal) break;
    }
    rec.reached = found_all && !hit_oob;
    return rec;
}

inline MetricsReport run_trials(const EvalContext& ctx, const PolicyFn& policy,
                                const EvalConfig& ec, int threads, bool rollout_needed) {
    ec.validate();
    MetricsReport rep;
    rep.n_trials = ec.n_trials;
    rep.trials.resize(size_t(ec.n_trials));
    parallel_for(size_t(ec.n_trials), size_t(std::max(1, threads)), [&](size_t i) {
        rep.trials[i] = run_trial(ctx, policy, ec, i, rollout_needed);
    });
    int acc = 0, reach = 0;
    double reward = 0;
    for (const auto& t : rep.trials) {
        acc += t.accurate ? 1 : 0;
        reach += t.reached ? 1 : 0;
        reward += t.total_reward;
    }
    rep.accuracy = double(acc) / double(ec.n_trials);
    rep.reachability = double(reach) / double(ec.n_trials);
    rep.avg_total_reward = reward / double(ec.n_trials);
    return rep;
}

}  // namespace eval_detail

// Policy-injectable cores (oracle stubs plug in here in tests).
inline double accuracy(const EvalContext& ctx, const PolicyFn& policy, const EvalConfig& ec,
                       int threads = 1) {
    return eval_detail::run_trials(ctx, policy, ec, threads, false).accuracy;
}

inline double reachability(const EvalContext& ctx, const PolicyFn& policy, const EvalConfig& ec,
                           int threads = 1) {
    return eval_detail::run_trials(ctx, policy, ec, threads, true).reachability;
}

inline double avg_total_reward(const EvalContext& ctx, const PolicyFn& policy,
                               const EvalConfig& ec, int threads = 1) {
    return eval_detail::run_trials(ctx, policy, ec, threads, true).avg_total_reward;
}

// All three metrics from one shared set of greedy rollouts.
inline MetricsReport evaluate(const EvalContext& ctx, const PolicyFn& policy, const EvalConfig& ec,
                              int threads = 1) {
    return eval_detail::run_trials(ctx, policy, ec, threads, true);
}

inline MetricsReport evaluate(const EvalContext& ctx, const ParamStore<float>& params,
                              const NetArchitecture& arch, const EvalConfig& ec, int threads = 1) {
    return evaluate(ctx, make_qnet_policy(params, arch), ec, threads);
}

// ---- Policy field (quiver figure) --------------------------------------

struct FieldCell {
    double x = 0, y = 0;
    int action = -1;
    double dx = 0, dy = 0;  // unit arrow in the floor plane (0,0 for z moves)
};

struct PolicyField {
    double grid_step = 0.5;
    int nx = 0, ny = 0;
    Vec3 source;
    std::vector<FieldCell> cells;          // row-major, y fastest
    std::vector<Vec3> trajectory;          // greedy path, start included
    std::vector<int> trajectory_actions;   // one per hop
};

inline PolicyField policy_field(const EvalContext& ctx, const PolicyFn& policy, double grid_step,
                                const SourceSpec& source, const Vec3& start, int max_steps,
                                int threads = 1) {
    if (grid_step <= 0) throw std::invalid_argument("policy_field: grid_step must be positive");
    EnvConfig cfg = ctx.env;
    cfg.horizon = std::max(1, max_steps);
    if (!cfg.room.contains(source.position))
        throw std::invalid_argument("policy_field: source outside the room");

    PolicyField field;
    field.grid_step = grid_step;
    field.source = source.position;
    field.nx = std::max(1, int(cfg.room.dims.x / grid_step));
    field.ny = std::max(1, int(cfg.room.dims.y / grid_step));
    field.cells.resize(size_t(field.nx) * size_t(field.ny));

    auto probe_state = [&](const Vec3& at) {
        EnvState st;
        st.agent.centre = at;
        st.sources = {source};
        return st;
    };
    Environment env(cfg, ctx.acoustics, ctx.bank);
    parallel_for(field.cells.size(), size_t(std::max(1, threads)), [&](size_t idx) {
        int i = int(idx) / field.ny;
        int j = int(idx) % field.ny;
        Vec3 at{(i + 0.5) * grid_step, (j + 0.5) * grid_step, cfg.agent_height};
        Environment cell_env(cfg, ctx.acoustics, ctx.bank);
        cell_env.set_state(probe_state(at));
        FeatureMap fm = logmel(cell_env.render(), ctx.features);
        int a = eval_detail::greedy_action(policy, cell_env.state(), fm, {});
        Vec3 d = action_delta(ActionId(a), 1.0);
        field.cells[idx] = FieldCell{at.x, at.y, a, d.x, d.y};
    });

    // One greedy trajectory from the configurable start.
    env.set_state(probe_state(start));
    field.trajectory.push_back(start);
    std::vector<FeatureMap> maps;
    maps.reserve(size_t(max_steps) + 2);
    maps.push_back(logmel(env.render(), ctx.features));
    HistoryView past;
    for (int step = 0; step < max_steps && !env.state().terminal; ++step) {
        int a = eval_detail::greedy_action(policy, env.state(), maps.back(), past);
        StepOutcome out = env.step(ActionId(a));
        field.trajectory_actions.push_back(a);
        field.trajectory.push_back(env.state().agent.centre);
        past.emplace_back(&maps.back(), a);
        maps.push_back(logmel(out.observation, ctx.features));
    }
    return field;
}

// ---- Writers ------------------------------------------------------------

inline nlohmann::json metrics_to_json(const MetricsReport& rep, bool with_trials = true) {
    nlohmann::json j;
    j["n_trials"] = rep.n_trials;
    j["accuracy"] = rep.accuracy;
    j["reachability"] = rep.reachability;
    j["avg_total_reward"] = rep.avg_total_reward;
    if (with_trials) {
        auto arr = nlohmann::json::array();
        for (const auto& t : rep.trials)
            arr.push_back({{"seed", t.seed},
                           {"first_action", t.first_action},
                           {"oracle_empty", t.oracle_empty},
                           {"accurate", t.accurate},
                           {"reached", t.reached},
                           {"steps", t.steps},
                           {"total_reward", t.total_reward}});
        j["trials"] = std::move(arr);
    }
    return j;
}

inline void write_metrics_json(const std::string& path, const MetricsReport& rep,
                               bool with_trials = true) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << metrics_to_json(rep, with_trials).dump(2) << "\n";
}

inline void write_field_csv(const std::string& path, const PolicyField& field) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "x,y,action,dx,dy\n";
    out << std::setprecision(17);
    for (const auto& c : field.cells)
        out << c.x << "," << c.y << "," << c.action << "," << c.dx << "," << c.dy << "\n";
}

inline void write_trajectory_json(const std::string& path, const PolicyField& field) {
    nlohmann::json j;
    j["source"] = {field.source.x, field.source.y, field.source.z};
    j["grid_step"] = field.grid_step;
    auto pts = nlohmann::json::array();
    for (const auto& p : field.trajectory) pts.push_back({p.x, p.y, p.z});
    j["trajectory"] = std::move(pts);
    j["actions"] = field.trajectory_actions;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace echolocate
