#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "echolocate/acoustics.hpp"
#include "echolocate/features.hpp"
#include "echolocate/geometry.hpp"
#include "echolocate/qnet.hpp"

namespace echolocate {

struct TrainConfig {
    int epochs = -1;  // resolved to 30 (memoryless) or 15 (stateful) when unset
    int episodes_per_epoch = 64;
    int updates_per_epoch = 150;
    int batch = 64;
    int target_update_period = 15;
    int target_delay = 15;
    double gamma = 0.9;
    double lr = 1e-4;
    double eps0 = 0.6;
    double eps_cap = 0.95;
    double anneal = 0.95;
    uint64_t seed = 0;
    int replay_capacity = 4000;  // transitions
    // epsilon is the greedy probability by default; flip to read it as the
    // random-step probability instead.
    bool epsilon_is_random_prob = false;

    void validate() const {
        if (replay_capacity < 1)
            throw std::invalid_argument("train.replay_capacity must be >= 1");
        if (epochs < 0) throw std::invalid_argument("train.epochs must be >= 0");
        if (episodes_per_epoch < 1 || updates_per_epoch < 1 || batch < 1 ||
            target_update_period < 1 || target_delay < 0)
            throw std::invalid_argument("train counts must be >= 1");
        if (!(eps0 > 0 && eps0 <= 1 && eps_cap > 0 && eps_cap <= 1))
            throw std::invalid_argument("eps0 and eps_cap must be in (0, 1]");
        if (!(anneal > 0 && anneal < 1))
            throw std::invalid_argument("anneal must be in (0, 1)");
        if (!(gamma >= 0 && gamma < 1)) throw std::invalid_argument("gamma must be in [0, 1)");
        if (lr < 0) throw std::invalid_argument("lr must be >= 0");
    }
};

struct EvalConfig {
    int n_trials = 1000;
    int max_steps = 50;  // 100 is the alternative reachability budget
    double soft_reward_scale = 0.1;
    uint64_t seed = 0;
    // The corrected sign rewards distance reduction; the flag selects the
    // formula exactly as printed instead.
    bool soft_reward_printed_sign = false;

    void validate() const {
        if (n_trials < 1) throw std::invalid_argument("eval.n_trials must be >= 1");
        if (max_steps < 0) throw std::invalid_argument("eval.max_steps must be >= 0");
    }
};

struct RunManifest {
    EnvConfig env;
    AcousticParams acoustics;
    FeatureConfig features;
    NetArchitecture arch;
    TrainConfig train;
    EvalConfig eval;
    std::string output_dir = "runs";
    std::string run_id = "run";

    void resolve_and_validate() {
        arch.in_channels = env.mics.channels();
        arch.n_actions = env.n_actions();
        if (train.epochs < 0)
            train.epochs = (arch.variant == Variant::Memoryless) ? 30 : 15;
        env.validate();
        acoustics.validate();
        features.validate();
        arch.validate();
        train.validate();
        eval.validate();
        if (env.f_s != acoustics.f_s)
            throw std::invalid_argument("env.f_s and acoustics.f_s must match");
        if (env.f_s != features.f_s)
            throw std::invalid_argument("env.f_s and features.f_s must match");
        if (features.f_max > env.f_s / 2 + 1e-9)
            throw std::invalid_argument("features.f_max must be at most f_s/2");
        if (int(std::lround(env.clip_seconds * env.f_s)) < features.win)
            throw std::invalid_argument("clip shorter than the feature analysis window");
    }
};

namespace manifest_detail {

struct Value {
    enum Kind { Num, Bool, Str, Arr } kind = Num;
    double num = 0;
    bool b = false;
    std::string str;
    std::vector<double> arr;
    int line = 0;
    mutable bool used = false;
};

using Table = std::map<std::string, Value>;  // key "section.key"

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline Value parse_value(const std::string& raw, int line) {
    Value v;
    v.line = line;
    std::string s = trim(raw);
    if (s.empty()) throw std::runtime_error("line " + std::to_string(line) + ": empty value");
    if (s == "true" || s == "false") {
        v.kind = Value::Bool;
        v.b = (s == "true");
        return v;
    }
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"')
            throw std::runtime_error("line " + std::to_string(line) + ": unterminated string");
        v.kind = Value::Str;
        v.str = s.substr(1, s.size() - 2);
        return v;
    }
    if (s.front() == '[') {
        if (s.back() != ']')
            throw std::runtime_error("line " + std::to_string(line) + ": unterminated array");
        v.kind = Value::Arr;
        std::string body = s.substr(1, s.size() - 2);
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            size_t pos = 0;
            double d = std::stod(item, &pos);
            if (pos != item.size())
                throw std::runtime_error("line " + std::to_string(line) +
                                         ": bad array element '" + item + "'");
            v.arr.push_back(d);
        }
        return v;
    }
    size_t pos = 0;
    try {
        v.num = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size())
        throw std::runtime_error("line " + std::to_string(line) + ": bad value '" + s + "'");
    v.kind = Value::Num;
    return v;
}

inline Table parse_table(std::istream& in) {
    Table tab;
    std::string line, section;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        // strip comments outside strings
        std::string clean;
        bool in_str = false;
        for (char c : line) {
            if (c == '"') in_str = !in_str;
            if (c == '#' && !in_str) break;
            clean.push_back(c);
        }
        clean = trim(clean);
        if (clean.empty()) continue;
        if (clean.front() == '[' && clean.back() == ']' && clean.find('=') == std::string::npos) {
            section = trim(clean.substr(1, clean.size() - 2));
            if (section.empty())
                throw std::runtime_error("line " + std::to_string(ln) + ": empty section name");
            continue;
        }
        size_t eq = clean.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("line " + std::to_string(ln) + ": expected key = value");
        std::string key = trim(clean.substr(0, eq));
        if (key.empty())
            throw std::runtime_error("line " + std::to_string(ln) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (tab.count(full))
            throw std::runtime_error("line " + std::to_string(ln) + ": duplicate key " + full);
        tab[full] = parse_value(clean.substr(eq + 1), ln);
    }
    return tab;
}

class Reader {
public:
    explicit Reader(const Table& t) : tab_(t) {}

    bool has(const std::string& k) const { return tab_.count(k) > 0; }

    double num(const std::string& k, double dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind != Value::Num) bad(k, "a number", v);
        return v->num;
    }
    int integer(const std::string& k, int dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind != Value::Num || v->num != std::floor(v->num)) bad(k, "an integer", v);
        return int(v->num);
    }
    uint64_t u64(const std::string& k, uint64_t dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind != Value::Num || v->num < 0 || v->num != std::floor(v->num))
            bad(k, "a non-negative integer", v);
        return uint64_t(v->num);
    }
    bool boolean(const std::string& k, bool dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind != Value::Bool) bad(k, "true or false", v);
        return v->b;
    }
    std::string str(const std::string& k, const std::string& dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind != Value::Str) bad(k, "a string", v);
        return v->str;
    }
    std::vector<double> arr(const std::string& k, std::vector<double> dflt) {
        auto* v = find(k);
        if (!v) return dflt;
        if (v->kind == Value::Num) return {v->num};  // scalar broadcast
        if (v->kind != Value::Arr) bad(k, "an array of numbers", v);
        return v->arr;
    }

    void check_all_used() const {
        for (const auto& [k, v] : tab_)
            if (!v.used)
                throw std::runtime_error("unknown key '" + k + "' (line " +
                                         std::to_string(v.line) + ")");
    }

private:
    const Value* find(const std::string& k) {
        auto it = tab_.find(k);
        if (it == tab_.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }
    [[noreturn]] void bad(const std::string& k, const char* want, const Value* v) {
        throw std::runtime_error("key '" + k + "' (line " + std::to_string(v->line) +
                                 "): expected " + want);
    }
    const Table& tab_;
};

}  // namespace manifest_detail

inline RunManifest parse_manifest_stream(std::istream& in) {
    using namespace manifest_detail;
    Table tab = parse_table(in);
    Reader r(tab);
    RunManifest m;

    m.output_dir = r.str("output_dir", m.output_dir);
    m.run_id = r.str("run_id", m.run_id);

    auto dims = r.arr("env.room_dims", {m.env.room.dims.x, m.env.room.dims.y, m.env.room.dims.z});
    if (dims.size() != 3) throw std::runtime_error("env.room_dims must have 3 entries");
    m.env.room.dims = {dims[0], dims[1], dims[2]};
    auto absorb = r.arr("env.wall_absorption", {0.5});
    if (absorb.size() == 1)
        m.env.room.wall_absorption.fill(absorb[0]);
    else if (absorb.size() == 6)
        std::copy(absorb.begin(), absorb.end(), m.env.room.wall_absorption.begin());
    else
        throw std::runtime_error("env.wall_absorption must have 1 or 6 entries");
    m.env.step_size = r.num("env.step_size", m.env.step_size);
    m.env.reach_radius = r.num("env.reach_radius", m.env.reach_radius);
    m.env.r_plus = r.num("env.r_plus", m.env.r_plus);
    m.env.r_minus = r.num("env.r_minus", m.env.r_minus);
    m.env.r_oob = r.num("env.r_oob", m.env.r_oob);
    m.env.horizon = r.integer("env.horizon", m.env.horizon);
    m.env.reward_delay = r.integer("env.reward_delay", m.env.reward_delay);
    m.env.clip_seconds = r.num("env.clip_seconds", m.env.clip_seconds);
    m.env.f_s = r.num("env.f_s", m.env.f_s);
    m.env.n_sources = r.integer("env.n_sources", m.env.n_sources);
    m.env.allow_z = r.boolean("env.allow_z", m.env.allow_z);
    m.env.agent_height = r.num("env.agent_height", m.env.agent_height);
    m.env.source_height = r.num("env.source_height", m.env.source_height);
    if (r.has("env.mic_offsets")) {
        auto mo = r.arr("env.mic_offsets", {});
        if (mo.empty() || mo.size() % 3 != 0)
            throw std::runtime_error("env.mic_offsets must be a flat list of (dx, dy, dz) triples");
        m.env.mics.offsets.clear();
        for (size_t i = 0; i + 2 < mo.size(); i += 3)
            m.env.mics.offsets.push_back({mo[i], mo[i + 1], mo[i + 2]});
    }

    m.acoustics.c = r.num("acoustics.c", m.acoustics.c);
    m.acoustics.max_order = r.integer("acoustics.max_order", m.acoustics.max_order);
    m.acoustics.f_s = r.num("acoustics.f_s", m.env.f_s);
    m.acoustics.frac_delay_len = r.integer("acoustics.frac_delay_len", m.acoustics.frac_delay_len);

    m.features.f_s = r.num("features.f_s", m.env.f_s);
    m.features.win = r.integer("features.win", m.features.win);
    m.features.hop = r.integer("features.hop", m.features.hop);
    m.features.n_mels = r.integer("features.n_mels", m.features.n_mels);
    m.features.log_floor = r.num("features.log_floor", m.features.log_floor);
    m.features.f_min = r.num("features.f_min", m.features.f_min);
    m.features.f_max = r.num("features.f_max", m.features.f_s / 2);

    std::string variant = r.str("arch.variant", "memoryless");
    if (variant == "memoryless")
        m.arch.variant = Variant::Memoryless;
    else if (variant == "stateful")
        m.arch.variant = Variant::Stateful;
    else
        throw std::runtime_error("arch.variant must be 'memoryless' or 'stateful'");
    auto cc = r.arr("arch.conv_channels", {16, 32, 64});
    m.arch.conv_channels.clear();
    for (double d : cc) {
        if (d < 1 || d != std::floor(d))
            throw std::runtime_error("arch.conv_channels must be positive integers");
        m.arch.conv_channels.push_back(int(d));
    }
    m.arch.embed_dim = r.integer("arch.embed_dim", m.arch.embed_dim);
    m.arch.history_len = r.integer("arch.history_len", m.arch.history_len);
    m.arch.attn_heads = r.integer("arch.attn_heads", m.arch.attn_heads);
    m.arch.action_embed_dim = r.integer("arch.action_embed_dim", m.arch.action_embed_dim);

    m.train.epochs = r.integer("train.epochs", m.train.epochs);
    m.train.episodes_per_epoch = r.integer("train.episodes_per_epoch", m.train.episodes_per_epoch);
    m.train.updates_per_epoch = r.integer("train.updates_per_epoch", m.train.updates_per_epoch);
    m.train.batch = r.integer("train.batch", m.train.batch);
    m.train.target_update_period =
        r.integer("train.target_update_period", m.train.target_update_period);
    m.train.target_delay = r.integer("train.target_delay", m.train.target_delay);
    m.train.gamma = r.num("train.gamma", m.train.gamma);
    m.train.lr = r.num("train.lr", m.train.lr);
    m.train.eps0 = r.num("train.eps0", m.train.eps0);
    m.train.eps_cap = r.num("train.eps_cap", m.train.eps_cap);
    m.train.anneal = r.num("train.anneal", m.train.anneal);
    m.train.seed = r.u64("train.seed", m.train.seed);
    m.train.replay_capacity = r.integer("train.replay_capacity", m.train.replay_capacity);
    m.train.epsilon_is_random_prob =
        r.boolean("train.epsilon_is_random_prob", m.train.epsilon_is_random_prob);

    m.eval.n_trials = r.integer("eval.n_trials", m.eval.n_trials);
    m.eval.max_steps = r.integer("eval.max_steps", m.eval.max_steps);
    m.eval.soft_reward_scale = r.num("eval.soft_reward_scale", m.eval.soft_reward_scale);
    m.eval.seed = r.u64("eval.seed", m.eval.seed);
    m.eval.soft_reward_printed_sign =
        r.boolean("eval.soft_reward_printed_sign", m.eval.soft_reward_printed_sign);

    r.check_all_used();
    m.resolve_and_validate();
    return m;
}

inline RunManifest parse_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest: " + path);
    try {
        return parse_manifest_stream(f);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

// Canonical text form of a resolved manifest; also the basis of config_hash.
inline std::string serialize_manifest(const RunManifest& m) {
    std::ostringstream o;
    o.precision(17);
    o << "output_dir = \"" << m.output_dir << "\"\n";
    o << "run_id = \"" << m.run_id << "\"\n\n";
    o << "[env]\n";
    o << "room_dims = [" << m.env.room.dims.x << ", " << m.env.room.dims.y << ", "
      << m.env.room.dims.z << "]\n";
    o << "wall_absorption = [";
    for (int i = 0; i < 6; ++i) o << (i ? ", " : "") << m.env.room.wall_absorption[size_t(i)];
    o << "]\n";
    o << "step_size = " << m.env.step_size << "\n";
    o << "reach_radius = " << m.env.reach_radius << "\n";
    o << "r_plus = " << m.env.r_plus << "\n";
    o << "r_minus = " << m.env.r_minus << "\n";
    o << "r_oob = " << m.env.r_oob << "\n";
    o << "horizon = " << m.env.horizon << "\n";
    o << "reward_delay = " << m.env.reward_delay << "\n";
    o << "clip_seconds = " << m.env.clip_seconds << "\n";
    o << "f_s = " << m.env.f_s << "\n";
    o << "n_sources = " << m.env.n_sources << "\n";
    o << "allow_z = " << (m.env.allow_z ? "true" : "false") << "\n";
    o << "agent_height = " << m.env.agent_height << "\n";
    o << "source_height = " << m.env.source_height << "\n";
    o << "mic_offsets = [";
    for (size_t i = 0; i < m.env.mics.offsets.size(); ++i) {
        const auto& v = m.env.mics.offsets[i];
        o << (i ? ", " : "") << v.x << ", " << v.y << ", " << v.z;
    }
    o << "]\n\n";
    o << "[acoustics]\n";
    o << "c = " << m.acoustics.c << "\n";
    o << "max_order = " << m.acoustics.max_order << "\n";
    o << "f_s = " << m.acoustics.f_s << "\n";
    o << "frac_delay_len = " << m.acoustics.frac_delay_len << "\n\n";
    o << "[features]\n";
    o << "f_s = " << m.features.f_s << "\n";
    o << "win = " << m.features.win << "\n";
    o << "hop = " << m.features.hop << "\n";
    o << "n_mels = " << m.features.n_mels << "\n";
    o << "log_floor = " << m.features.log_floor << "\n";
    o << "f_min = " << m.features.f_min << "\n";
    o << "f_max = " << m.features.f_max << "\n\n";
    o << "[arch]\n";
    o << "variant = \"" << (m.arch.variant == Variant::Memoryless ? "memoryless" : "stateful")
      << "\"\n";
    o << "conv_channels = [";
    for (size_t i = 0; i < m.arch.conv_channels.size(); ++i)
        o << (i ? ", " : "") << m.arch.conv_channels[i];
    o << "]\n";
    o << "embed_dim = " << m.arch.embed_dim << "\n";
    o << "history_len = " << m.arch.history_len << "\n";
    o << "attn_heads = " << m.arch.attn_heads << "\n";
    o << "action_embed_dim = " << m.arch.action_embed_dim << "\n\n";
    o << "[train]\n";
    o << "epochs = " << m.train.epochs << "\n";
    o << "episodes_per_epoch = " << m.train.episodes_per_epoch << "\n";
    o << "updates_per_epoch = " << m.train.updates_per_epoch << "\n";
    o << "batch = " << m.train.batch << "\n";
    o << "target_update_period = " << m.train.target_update_period << "\n";
    o << "target_delay = " << m.train.target_delay << "\n";
    o << "gamma = " << m.train.gamma << "\n";
    o << "lr = " << m.train.lr << "\n";
    o << "eps0 = " << m.train.eps0 << "\n";
    o << "eps_cap = " << m.train.eps_cap << "\n";
    o << "anneal = " << m.train.anneal << "\n";
    o << "seed = " << m.train.seed << "\n";
    o << "replay_capacity = " << m.train.replay_capacity << "\n";
    o << "epsilon_is_random_prob = " << (m.train.epsilon_is_random_prob ? "true" : "false")
      << "\n\n";
    o << "[eval]\n";
    o << "n_trials = " << m.eval.n_trials << "\n";
    o << "max_steps = " << m.eval.max_steps << "\n";
    o << "soft_reward_scale = " << m.eval.soft_reward_scale << "\n";
    o << "seed = " << m.eval.seed << "\n";
    o << "soft_reward_printed_sign = " << (m.eval.soft_reward_printed_sign ? "true" : "false")
      << "\n";
    return o.str();
}

// Identity of the training setup a checkpoint belongs to. Fields that do not
// shape the optimization trajectory are normalized away so a resume run may
// extend the epoch budget, retarget the output, or change evaluation settings.
inline uint64_t config_hash(const RunManifest& m) {
    RunManifest n = m;
    n.output_dir.clear();
    n.run_id.clear();
    n.train.epochs = 0;
    n.eval = EvalConfig{};
    return fnv1a(serialize_manifest(n));
}

}  // namespace echolocate
