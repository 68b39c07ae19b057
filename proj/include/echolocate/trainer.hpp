#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>

#include "echolocate/checkpoint.hpp"
#include "echolocate/manifest.hpp"
#include "echolocate/policy.hpp"
#include "echolocate/replay.hpp"

#include <json.hpp>

namespace echolocate {

// Closed form of the recurrence eps^{k+1} = 1 - (1 - eps^k) * anneal, capped.
inline double epsilon_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("epsilon_at: epoch must be >= 0");
    return std::min(cfg.eps_cap, 1.0 - (1.0 - cfg.eps0) * std::pow(cfg.anneal, epoch));
}

struct TrainLogRecord {
    int epoch = 0;
    double mean_episode_reward = 0;
    double success_fraction = 0;
    double mean_loss = 0;
    double epsilon = 0;
    double wall_seconds = 0;
};

class Trainer {
public:
    explicit Trainer(RunManifest man, int threads = 1)
        : man_(std::move(man)), threads_(threads), bank_(man_.env.f_s), replay_(size_t(man_.train.replay_capacity)) {
        man_.resolve_and_validate();
        // warm the signal bank so parallel rollouts only read it
        for (int j = 0; j < man_.env.n_sources; ++j) bank_.get(j);
        online_ = init_params<float>(man_.arch, man_.train.seed);
        target_ = online_;
        opt_ = OptState<float>::make(online_, float(man_.train.lr));
        snapshots_.emplace_back(0, online_);
    }

    // Both rollout and update phases of one epoch; networks are frozen during
    // the rollout phase by construction (no update call precedes phase 2).
    TrainLogRecord run_epoch() {
        auto t_start = std::chrono::steady_clock::now();
        const TrainConfig& tc = man_.train;
        double eps = epsilon_at(epoch_, tc);

        // rollout phase
        int n_ep = tc.episodes_per_epoch;
        std::vector<EpisodeRecord> rolled;
        rolled.resize(size_t(n_ep));
        PolicyFn policy = make_qnet_policy(online_, man_.arch);
        parallel_for(size_t(n_ep), threads_, [&](size_t i) {
            Environment env(man_.env, man_.acoustics, &bank_);
            RolloutParams rp;
            rp.epsilon = eps;
            rp.epsilon_is_random_prob = tc.epsilon_is_random_prob;
            rp.history_len =
                man_.arch.variant == Variant::Stateful ? man_.arch.history_len : 0;
            rp.reset_seed = mix_seed(tc.seed, 0xe1, uint64_t(epoch_), i);
            rp.action_seed = mix_seed(tc.seed, 0xe2, uint64_t(epoch_), i);
            rp.mode = EnvMode::Train;
            rolled[i] = rollout_episode(env, man_.features, policy, rp);
        });
        double reward_sum = 0;
        int successes = 0;
        for (auto& ep : rolled) {
            for (float r : ep.rewards) reward_sum += r;
            if (ep.success) ++successes;
            ep.id = next_episode_id_++;
            replay_.push_episode(std::move(ep));
        }

        // update phase: strictly sequential iterations
        double loss_sum = 0;
        for (int it = 0; it < tc.updates_per_epoch; ++it) {
            ++global_update_;
            auto refs = replay_.sample_without_replacement(
                size_t(tc.batch), mix_seed(tc.seed, 0x5a, global_update_));
            std::vector<Sample<float>> batch;
            batch.reserve(refs.size());
            for (const auto& ref : refs) batch.push_back(make_sample(ref));
            auto [loss, grads] =
                loss_and_grads(online_, target_, batch, man_.arch, float(tc.gamma), threads_);
            adam_step(online_, grads, opt_);
            loss_sum += double(loss);
            snapshots_.emplace_back(global_update_, online_);
            trim_snapshots();
            if (global_update_ % uint64_t(tc.target_update_period) == 0) hard_update_by_iter();
        }

        epoch_ += 1;
        TrainLogRecord rec;
        rec.epoch = epoch_;
        rec.mean_episode_reward = reward_sum / double(n_ep);
        rec.success_fraction = double(successes) / double(n_ep);
        rec.mean_loss = loss_sum / double(tc.updates_per_epoch);
        rec.epsilon = eps;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return rec;
    }

    Checkpoint make_checkpoint() const {
        Checkpoint c;
        c.config_hash = config_hash(man_);
        c.epoch = uint32_t(epoch_);
        c.global_update = global_update_;
        c.next_episode_id = next_episode_id_;
        c.epsilon = epsilon_at(epoch_, man_.train);
        c.arch = man_.arch;
        c.online = online_;
        c.target = target_;
        c.opt_step = opt_.step;
        c.opt_m = opt_.m;
        c.opt_v = opt_.v;
        // keep only snapshots a future hard update can still reference
        uint64_t delay = uint64_t(man_.train.target_delay);
        uint64_t period = uint64_t(man_.train.target_update_period);
        for (const auto& [iter, ps] : snapshots_)
            if ((iter + delay) % period == 0 && iter + delay > global_update_)
                c.snapshots.emplace_back(iter, ps);
        for (const auto& ep : replay_.episodes()) {
            EpisodeTrace tr;
            tr.id = ep.id;
            tr.agent_start = ep.agent_start;
            tr.sources = ep.sources;
            tr.actions = ep.actions;
            c.buffer.push_back(std::move(tr));
        }
        return c;
    }

    void restore(const Checkpoint& c) {
        if (c.config_hash != config_hash(man_))
            throw std::runtime_error("checkpoint was produced by a different configuration");
        epoch_ = int(c.epoch);
        global_update_ = c.global_update;
        next_episode_id_ = c.next_episode_id;
        online_ = c.online;
        target_ = c.target;
        opt_ = OptState<float>::make(online_, float(man_.train.lr));
        opt_.step = c.opt_step;
        opt_.m = c.opt_m;
        opt_.v = c.opt_v;
        snapshots_.clear();
        for (const auto& [iter, ps] : c.snapshots) snapshots_.emplace_back(iter, ps);
        replay_.clear();
        for (const auto& tr : c.buffer) replay_.push_episode(replay_trace(tr));
    }

    const RunManifest& manifest() const { return man_; }
    const ParamStore<float>& online_params() const { return online_; }
    const ParamStore<float>& target_params() const { return target_; }
    const ReplayBuffer& replay() const { return replay_; }
    int epoch() const { return epoch_; }
    uint64_t global_update() const { return global_update_; }
    const SignalBank& bank() const { return bank_; }

private:
    Sample<float> make_sample(const TransitionRef& ref) const {
        const EpisodeRecord& ep = *ref.episode;
        int k = ref.step;
        int H = man_.arch.variant == Variant::Stateful ? man_.arch.history_len : 0;
        Sample<float> s;
        s.action = ep.actions[size_t(k)];
        s.reward = ep.rewards[size_t(k)];
        s.terminal = (k == ep.n_transitions() - 1);
        s.s = window_at(ep, k, H);
        if (!s.terminal) s.s_next = window_at(ep, k + 1, H);
        return s;
    }

    static StateInput<float> window_at(const EpisodeRecord& ep, int k, int H) {
        StateInput<float> in;
        in.cur = to_planes<float>(ep.maps[size_t(k)]);
        int lo = std::max(0, k - H);
        for (int j = lo; j < k; ++j)
            in.past.emplace_back(to_planes<float>(ep.maps[size_t(j)]), ep.actions[size_t(j)]);
        return in;
    }

    void trim_snapshots() {
        uint64_t delay = uint64_t(man_.train.target_delay);
        uint64_t keep_from = global_update_ > delay ? global_update_ - delay : 0;
        while (!snapshots_.empty() && snapshots_.front().first < keep_from)
            snapshots_.pop_front();
    }

    // theta_hat <- online snapshot from target_delay iterations ago (exact
    // iteration match; falls back to the oldest stored snapshot).
    void hard_update_by_iter() {
        uint64_t delay = uint64_t(man_.train.target_delay);
        const ParamStore<float>* pick = nullptr;
        if (global_update_ >= delay) {
            uint64_t want = global_update_ - delay;
            for (const auto& [iter, ps] : snapshots_)
                if (iter == want) {
                    pick = &ps;
                    break;
                }
        }
        if (!pick) pick = &snapshots_.front().second;
        target_ = *pick;
    }

    // Re-renders a stored episode trace (pure functions of the trace).
    EpisodeRecord replay_trace(const EpisodeTrace& tr) const {
        Environment env(man_.env, man_.acoustics, &bank_);
        EnvState st;
        st.agent.centre = tr.agent_start;
        st.sources = tr.sources;
        env.set_state(st);
        EpisodeRecord ep;
        ep.id = tr.id;
        ep.agent_start = tr.agent_start;
        ep.sources = tr.sources;
        ep.maps.reserve(tr.actions.size() + 1);
        ep.maps.push_back(logmel(env.render(), man_.features));
        for (int a : tr.actions) {
            StepOutcome out = env.step(ActionId(a));
            ep.actions.push_back(a);
            ep.rewards.push_back(float(out.reward));
            ep.events.push_back(out.event);
            if (out.event == StepEvent::FoundNewSource) ep.success = true;
            ep.maps.push_back(logmel(out.observation, man_.features));
        }
        return ep;
    }

    RunManifest man_;
    int threads_;
    SignalBank bank_;
    ParamStore<float> online_, target_;
    OptState<float> opt_;
    std::deque<std::pair<uint64_t, ParamStore<float>>> snapshots_;
    ReplayBuffer replay_;
    int epoch_ = 0;
    uint64_t global_update_ = 0;
    uint64_t next_episode_id_ = 0;
};

struct TrainResult {
    Checkpoint final_checkpoint;
    std::vector<TrainLogRecord> log;
    std::string run_dir;
};

inline std::string resolve_output_dir(const RunManifest& man) {
    if (const char* env = std::getenv("ECHOLOCATE_OUT"); env && *env) return env;
    return man.output_dir;
}

// Full training run with artifact persistence: resolved manifest copy,
// JSON-lines log, one checkpoint per epoch.
inline TrainResult train(const RunManifest& man, int threads = 1,
                         const std::string& resume_checkpoint = "") {
    namespace fs = std::filesystem;
    Trainer trainer(man, threads);
    const RunManifest& rman = trainer.manifest();
    fs::path run_dir = fs::path(resolve_output_dir(rman)) / rman.run_id;
    fs::create_directories(run_dir);
    {
        std::ofstream mf(run_dir / "manifest.resolved.toml");
        mf << serialize_manifest(rman);
    }
    TrainResult res;
    res.run_dir = run_dir.string();
    if (!resume_checkpoint.empty()) trainer.restore(load_checkpoint(resume_checkpoint));
    std::ofstream log_file(run_dir / "train_log.jsonl", std::ios::app);
    if (!log_file) throw std::runtime_error("cannot write training log");
    for (int e = trainer.epoch(); e < rman.train.epochs; ++e) {
        TrainLogRecord rec = trainer.run_epoch();
        res.log.push_back(rec);
        nlohmann::json j{{"epoch", rec.epoch},
                         {"mean_episode_reward", rec.mean_episode_reward},
                         {"success_fraction", rec.success_fraction},
                         {"mean_loss", rec.mean_loss},
                         {"epsilon", rec.epsilon},
                         {"wall_seconds", rec.wall_seconds}};
        log_file << j.dump() << "\n";
        log_file.flush();
        save_checkpoint((run_dir / ("ckpt_epoch_" + std::to_string(rec.epoch) + ".bin")).string(),
                        trainer.make_checkpoint());
    }
    res.final_checkpoint = trainer.make_checkpoint();
    return res;
}

}  // namespace echolocate
