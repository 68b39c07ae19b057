#pragma once

#include <array>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "echolocate/common.hpp"

namespace echolocate {

// Axis-aligned shoebox room with (0,0,0) at the bottom-left floor corner.
// Absorption is the energy absorption coefficient per surface, ordered
// x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
struct RoomSpec {
    Vec3 dims{10.0, 10.0, 5.0};
    std::array<double, 6> wall_absorption{0.5, 0.5, 0.5, 0.5, 0.5, 0.5};

    bool contains(const Vec3& p) const {
        return p.x >= 0 && p.x <= dims.x && p.y >= 0 && p.y <= dims.y && p.z >= 0 &&
               p.z <= dims.z;
    }
    bool strictly_contains(const Vec3& p) const {
        return p.x > 0 && p.x < dims.x && p.y > 0 && p.y < dims.y && p.z > 0 && p.z < dims.z;
    }
    void validate() const {
        if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0)
            throw std::invalid_argument("room dims must be positive");
        for (double a : wall_absorption)
            if (a < 0.0 || a > 1.0)
                throw std::invalid_argument("wall absorption must be in [0,1]");
    }
};

struct SourceSpec {
    int id = 0;
    Vec3 position{0, 0, 2.6};
    int signal_id = 0;
};

struct AgentPose {
    Vec3 centre{0, 0, 2.5};
};

struct MicArraySpec {
    std::vector<Vec3> offsets{{0.25, 0.25, 0.0}, {-0.25, -0.25, 0.0}};

    int channels() const { return int(offsets.size()); }
};

enum class ActionId : int { PosX = 0, NegX = 1, PosY = 2, NegY = 3, PosZ = 4, NegZ = 5 };

inline Vec3 action_delta(ActionId a, double step) {
    switch (a) {
        case ActionId::PosX: return {step, 0, 0};
        case ActionId::NegX: return {-step, 0, 0};
        case ActionId::PosY: return {0, step, 0};
        case ActionId::NegY: return {0, -step, 0};
        case ActionId::PosZ: return {0, 0, step};
        case ActionId::NegZ: return {0, 0, -step};
    }
    throw std::invalid_argument("bad action id");
}

inline const char* action_name(ActionId a) {
    switch (a) {
        case ActionId::PosX: return "+x";
        case ActionId::NegX: return "-x";
        case ActionId::PosY: return "+y";
        case ActionId::NegY: return "-y";
        case ActionId::PosZ: return "+z";
        case ActionId::NegZ: return "-z";
    }
    return "?";
}

struct EnvConfig {
    RoomSpec room;
    double step_size = 0.5;
    double reach_radius = 0.6;
    double r_plus = 1.0;
    double r_minus = -0.1;
    double r_oob = -1.0;
    int horizon = 50;
    int reward_delay = 1;  // reward assessed one action period after the move
    double clip_seconds = 0.5;
    double f_s = 16000.0;
    int n_sources = 1;
    bool allow_z = false;  // enables the +z/-z actions
    double agent_height = 2.5;
    double source_height = 2.6;
    MicArraySpec mics;

    int n_actions() const { return allow_z ? 6 : 4; }

    void validate() const {
        room.validate();
        if (step_size <= 0) throw std::invalid_argument("step_size must be positive");
        if (reach_radius <= 0) throw std::invalid_argument("reach_radius must be positive");
        if (reach_radius >= std::min(room.dims.x, room.dims.y))
            throw std::invalid_argument("reach_radius must be smaller than the room extent");
        if (!(r_plus > 0 && 0 > r_minus && r_minus >= r_oob))
            throw std::invalid_argument("rewards must satisfy r_plus > 0 > r_minus >= r_oob");
        if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
        if (clip_seconds <= 0) throw std::invalid_argument("clip_seconds must be positive");
        if (f_s <= 0) throw std::invalid_argument("f_s must be positive");
        if (n_sources < 1) throw std::invalid_argument("n_sources must be >= 1");
        if (mics.channels() < 1) throw std::invalid_argument("need at least one microphone");
        if (agent_height < 0 || agent_height > room.dims.z || source_height < 0 ||
            source_height > room.dims.z)
            throw std::invalid_argument("agent/source heights must lie inside the room");
    }
};

enum class Quadrant : int { TL = 0, TR = 1, BL = 2, BR = 3 };

// Halves split at Lx/2, Ly/2; boundary points go to the higher-index quadrant.
inline Quadrant quadrant_of(double x, double y, const RoomSpec& room) {
    if (x < 0 || x > room.dims.x || y < 0 || y > room.dims.y)
        throw std::domain_error("point outside room");
    bool right = x >= room.dims.x / 2.0;
    bool bottom = y <= room.dims.y / 2.0;
    if (bottom) return right ? Quadrant::BR : Quadrant::BL;
    return right ? Quadrant::TR : Quadrant::TL;
}

enum class StepEvent : int { None = 0, FoundNewSource = 1, OutOfBounds = 2 };

struct EnvState {
    AgentPose agent;
    std::vector<SourceSpec> sources;
    std::set<int> found;
    int step_index = 0;
    bool terminal = false;
    uint64_t rng_cursor = 0;  // reset stream position, kept for reproducibility

    bool operator==(const EnvState& s) const {
        if (!(agent.centre == s.agent.centre) || found != s.found ||
            step_index != s.step_index || terminal != s.terminal ||
            sources.size() != s.sources.size())
            return false;
        for (size_t i = 0; i < sources.size(); ++i)
            if (sources[i].id != s.sources[i].id ||
                !(sources[i].position == s.sources[i].position) ||
                sources[i].signal_id != s.sources[i].signal_id)
                return false;
        return true;
    }
};

struct GeomOutcome {
    double reward = 0;
    StepEvent event = StepEvent::None;
    int found_id = -1;
    bool terminal = false;
};

enum class EnvMode { Train, Eval };

namespace detail {

inline std::pair<double, double> quadrant_box_x(Quadrant q, const RoomSpec& room) {
    double hx = room.dims.x / 2.0;
    bool right = (q == Quadrant::TR || q == Quadrant::BR);
    return right ? std::pair{hx, room.dims.x} : std::pair{0.0, hx};
}
inline std::pair<double, double> quadrant_box_y(Quadrant q, const RoomSpec& room) {
    double hy = room.dims.y / 2.0;
    bool top = (q == Quadrant::TL || q == Quadrant::TR);
    return top ? std::pair{hy, room.dims.y} : std::pair{0.0, hy};
}

inline Vec3 draw_in_quadrant(Quadrant q, const RoomSpec& room, double z, Rng& rng) {
    auto [x0, x1] = quadrant_box_x(q, room);
    auto [y0, y1] = quadrant_box_y(q, room);
    return {rng.uniform(x0, x1), rng.uniform(y0, y1), z};
}

constexpr Quadrant kTrainQuadrants[3] = {Quadrant::TL, Quadrant::TR, Quadrant::BL};

}  // namespace detail

// Places agent and sources; redraws everything while any source starts within
// reach_radius of the agent.
inline EnvState reset_state(const EnvConfig& cfg, EnvMode mode, uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x5e5e));
    EnvState st;
    for (int attempt = 0; attempt < 100000; ++attempt) {
        Quadrant aq = detail::kTrainQuadrants[rng.uniform_int(3)];
        st.agent.centre = detail::draw_in_quadrant(aq, cfg.room, cfg.agent_height, rng);
        st.sources.clear();
        bool ok = true;
        for (int j = 0; j < cfg.n_sources; ++j) {
            Quadrant sq = (mode == EnvMode::Eval)
                              ? Quadrant::BR
                              : detail::kTrainQuadrants[rng.uniform_int(3)];
            Vec3 p = detail::draw_in_quadrant(sq, cfg.room, cfg.source_height, rng);
            if (distance(p, st.agent.centre) <= cfg.reach_radius) {
                ok = false;
                break;
            }
            st.sources.push_back(SourceSpec{j, p, j});
        }
        if (ok) {
            st.found.clear();
            st.step_index = 0;
            st.terminal = false;
            st.rng_cursor = seed;
            return st;
        }
    }
    throw std::runtime_error("reset: could not place agent and sources apart");
}

// Index of the nearest unfound source, lowest id on ties; -1 when all found.
inline int nearest_unfound(const EnvState& st, const Vec3& from) {
    int best = -1;
    double best_d = 0;
    for (size_t j = 0; j < st.sources.size(); ++j) {
        if (st.found.count(st.sources[j].id)) continue;
        double d = distance(from, st.sources[j].position);
        if (best < 0 || d < best_d) {
            best = int(j);
            best_d = d;
        }
    }
    return best;
}

// The reward rule: pure geometry, no rendering. Mutates the state in place.
inline GeomOutcome apply_action(EnvState& st, ActionId action, const EnvConfig& cfg) {
    if (st.terminal) throw std::logic_error("step: state is terminal");
    if (!cfg.allow_z && (action == ActionId::PosZ || action == ActionId::NegZ))
        throw std::invalid_argument("z actions are disabled");
    GeomOutcome out;
    Vec3 cand = st.agent.centre + action_delta(action, cfg.step_size);
    if (!cfg.room.contains(cand)) {
        out.reward = cfg.r_oob;
        out.event = StepEvent::OutOfBounds;
    } else {
        st.agent.centre = cand;
        // nearest unfound source within reach wins; reward at most once per id
        int j = nearest_unfound(st, st.agent.centre);
        if (j >= 0 &&
            distance(st.agent.centre, st.sources[j].position) <= cfg.reach_radius) {
            st.found.insert(st.sources[j].id);
            out.reward = cfg.r_plus;
            out.event = StepEvent::FoundNewSource;
            out.found_id = st.sources[j].id;
        } else {
            out.reward = cfg.r_minus;
        }
    }
    st.step_index += 1;
    st.terminal = (int(st.found.size()) == int(st.sources.size())) ||
                  (st.step_index >= cfg.horizon);
    out.terminal = st.terminal;
    return out;
}

// Every in-bounds action that strictly reduces the Euclidean distance to the
// nearest unfound source. May be empty for an agent sitting on the source axis.
inline std::set<ActionId> oracle_action_set(const EnvState& st, const EnvConfig& cfg) {
    int j = nearest_unfound(st, st.agent.centre);
    if (j < 0) throw std::logic_error("oracle_action_set: all sources found");
    const Vec3& tgt = st.sources[j].position;
    double d0 = distance(st.agent.centre, tgt);
    std::set<ActionId> out;
    for (int a = 0; a < cfg.n_actions(); ++a) {
        ActionId act = ActionId(a);
        Vec3 cand = st.agent.centre + action_delta(act, cfg.step_size);
        if (!cfg.room.contains(cand)) continue;
        if (distance(cand, tgt) < d0) out.insert(act);
    }
    return out;
}

}  // namespace echolocate
