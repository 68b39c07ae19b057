#pragma once

#include <functional>
#include <memory>

#include "echolocate/environment.hpp"
#include "echolocate/qnet.hpp"
#include "echolocate/replay.hpp"

namespace echolocate {

// Past (features, action) pairs available to a policy, most recent last.
using HistoryView = std::vector<std::pair<const FeatureMap*, int>>;

// Action-value estimates for one step. The EnvState is exposed so test
// policies can cheat (oracle stubs); network policies must ignore it.
using PolicyFn =
    std::function<ActionValues<float>(const EnvState&, const FeatureMap&, const HistoryView&)>;

inline StateInput<float> make_state_input(const FeatureMap& cur, const HistoryView& past,
                                          int history_len) {
    StateInput<float> in;
    in.cur = to_planes<float>(cur);
    size_t start = past.size() > size_t(history_len) ? past.size() - size_t(history_len) : 0;
    for (size_t i = start; i < past.size(); ++i)
        in.past.emplace_back(to_planes<float>(*past[i].first), past[i].second);
    return in;
}

// Q-network policy; variant-aware.
inline PolicyFn make_qnet_policy(const ParamStore<float>& params, const NetArchitecture& arch) {
    return [&params, &arch](const EnvState&, const FeatureMap& cur,
                            const HistoryView& past) -> ActionValues<float> {
        if (arch.variant == Variant::Memoryless)
            return forward_memoryless(params, arch, to_planes<float>(cur));
        return forward_stateful(params, arch, make_state_input(cur, past, arch.history_len));
    };
}

// Distance-reducing reference policy used by tests and sanity baselines.
inline PolicyFn make_oracle_policy(const EnvConfig& cfg) {
    return [cfg](const EnvState& st, const FeatureMap&, const HistoryView&) {
        ActionValues<float> q(size_t(cfg.n_actions()), 0.0f);
        auto good = oracle_action_set(st, cfg);
        for (ActionId a : good) q[size_t(int(a))] = 1.0f;
        return q;
    };
}

// epsilon is the greedy probability by default (the annealed-to-0.95 reading);
// set epsilon_is_random_prob for the textbook semantics. Argmax ties break to
// the lowest action index.
inline int select_action(const ActionValues<float>& values, double epsilon, Rng& rng,
                         bool epsilon_is_random_prob = false) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
        throw std::invalid_argument("select_action: epsilon must be in [0, 1]");
    double greedy_p = epsilon_is_random_prob ? 1.0 - epsilon : epsilon;
    if (rng.uniform() < greedy_p) return argmax_action(values);
    return int(rng.uniform_int(values.size()));
}

struct RolloutParams {
    double epsilon = 1.0;  // greedy probability (see select_action)
    bool epsilon_is_random_prob = false;
    int history_len = 0;  // how much history to hand to the policy
    uint64_t reset_seed = 0;
    uint64_t action_seed = 0;
    EnvMode mode = EnvMode::Train;
};

// One full episode from reset to terminal.
inline EpisodeRecord rollout_episode(Environment& env, const FeatureConfig& fcfg,
                                     const PolicyFn& policy, const RolloutParams& rp) {
    EpisodeRecord ep;
    Observation obs = env.reset(rp.mode, rp.reset_seed);
    ep.agent_start = env.state().agent.centre;
    ep.sources = env.state().sources;
    // history entries point into ep.maps; reserve so they stay valid
    ep.maps.reserve(size_t(env.config().horizon) + 2);
    ep.maps.push_back(logmel(obs, fcfg));
    Rng arng(mix_seed(rp.action_seed, 0xac7));
    HistoryView past;
    while (!env.state().terminal) {
        const FeatureMap& cur = ep.maps.back();
        ActionValues<float> q = policy(env.state(), cur, past);
        int a = select_action(q, rp.epsilon, arng, rp.epsilon_is_random_prob);
        StepOutcome out = env.step(ActionId(a));
        ep.actions.push_back(a);
        ep.rewards.push_back(float(out.reward));
        ep.events.push_back(out.event);
        if (out.event == StepEvent::FoundNewSource) ep.success = true;
        past.emplace_back(&cur, a);
        if (int(past.size()) > rp.history_len && !past.empty()) past.erase(past.begin());
        ep.maps.push_back(logmel(out.observation, fcfg));
    }
    return ep;
}

}  // namespace echolocate
