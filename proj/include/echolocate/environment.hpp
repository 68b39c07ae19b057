#pragma once

#include "echolocate/acoustics.hpp"
#include "echolocate/features.hpp"
#include "echolocate/geometry.hpp"

namespace echolocate {

struct StepOutcome {
    Observation observation;
    double reward = 0;
    bool terminal = false;
    StepEvent event = StepEvent::None;
    int found_id = -1;
};

// Binds the geometry rules to the acoustic renderer. Found sources are
// silenced for the rest of the episode so the scene always cues the nearest
// unfound source. Single-threaded per instance.
class Environment {
public:
    Environment(EnvConfig cfg, AcousticParams params, const SignalBank* bank)
        : cfg_(std::move(cfg)), params_(params), bank_(bank) {
        cfg_.validate();
        params_.validate();
        if (params_.f_s != cfg_.f_s)
            throw std::invalid_argument("environment and acoustics sampling rates differ");
    }

    Observation reset(EnvMode mode, uint64_t seed) {
        state_ = reset_state(cfg_, mode, seed);
        return render();
    }

    StepOutcome step(ActionId action) {
        StepOutcome out;
        GeomOutcome geo = apply_action(state_, action, cfg_);
        out.reward = geo.reward;
        out.event = geo.event;
        out.found_id = geo.found_id;
        out.terminal = geo.terminal;
        out.observation = render();
        return out;
    }

    Observation render() const {
        std::vector<SourceSpec> active;
        for (const auto& s : state_.sources)
            if (!state_.found.count(s.id)) active.push_back(s);
        return render_observation(cfg_.room, active, state_.agent, cfg_.mics, *bank_, params_,
                                  cfg_.clip_seconds);
    }

    const EnvState& state() const { return state_; }
    EnvState& state() { return state_; }

    // Installs an explicit state (checkpoint replay, policy-field probes).
    void set_state(EnvState s) { state_ = std::move(s); }
    const EnvConfig& config() const { return cfg_; }
    const AcousticParams& acoustics() const { return params_; }
    const SignalBank& bank() const { return *bank_; }

private:
    EnvConfig cfg_;
    AcousticParams params_;
    const SignalBank* bank_;
    EnvState state_;
};

}  // namespace echolocate
