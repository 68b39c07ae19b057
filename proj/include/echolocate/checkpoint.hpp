#pragma once

#include <cstdio>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

#include "echolocate/manifest.hpp"
#include "echolocate/qnet.hpp"
#include "echolocate/replay.hpp"

namespace echolocate {

namespace ckpt_detail {

constexpr char kMagic[8] = {'E', 'C', 'H', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& o, const T& v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(T));  // little-endian host
}
template <typename T>
T get(std::istream& i) {
    T v{};
    i.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!i) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
inline void put_str(std::ostream& o, const std::string& s) {
    put<uint32_t>(o, uint32_t(s.size()));
    o.write(s.data(), std::streamsize(s.size()));
}
inline std::string get_str(std::istream& i) {
    uint32_t n = get<uint32_t>(i);
    std::string s(n, '\0');
    i.read(s.data(), n);
    if (!i) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

inline void put_params(std::ostream& o, const ParamStore<float>& ps) {
    put<uint32_t>(o, uint32_t(ps.entries.size()));
    for (const auto& e : ps.entries) {
        put_str(o, e.name);
        put<uint32_t>(o, uint32_t(e.shape.size()));
        for (int d : e.shape) put<int32_t>(o, d);
        put<uint64_t>(o, uint64_t(e.data.size()));
        o.write(reinterpret_cast<const char*>(e.data.data()),
                std::streamsize(e.data.size() * sizeof(float)));
    }
}

inline ParamStore<float> get_params(std::istream& i) {
    ParamStore<float> ps;
    uint32_t n = get<uint32_t>(i);
    for (uint32_t k = 0; k < n; ++k) {
        std::string name = get_str(i);
        uint32_t nd = get<uint32_t>(i);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = get<int32_t>(i);
        uint64_t sz = get<uint64_t>(i);
        auto& data = ps.add(name, shape);
        if (data.size() != sz) throw std::runtime_error("checkpoint: shape/size mismatch");
        i.read(reinterpret_cast<char*>(data.data()), std::streamsize(sz * sizeof(float)));
        if (!i) throw std::runtime_error("checkpoint: truncated parameter data");
    }
    return ps;
}

}  // namespace ckpt_detail

// Geometry trace of one stored episode; observations are re-rendered on load.
struct EpisodeTrace {
    uint64_t id = 0;
    Vec3 agent_start;
    std::vector<SourceSpec> sources;
    std::vector<int> actions;
};

struct Checkpoint {
    uint64_t config_hash = 0;
    uint32_t epoch = 0;
    uint64_t global_update = 0;
    uint64_t next_episode_id = 0;
    double epsilon = 0;
    NetArchitecture arch;
    ParamStore<float> online;
    ParamStore<float> target;
    std::vector<std::vector<float>> opt_m, opt_v;
    uint64_t opt_step = 0;
    // snapshots still reachable by a future hard update: (iteration, params)
    std::vector<std::pair<uint64_t, ParamStore<float>>> snapshots;
    std::vector<EpisodeTrace> buffer;
};

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    using namespace ckpt_detail;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    put<uint32_t>(f, kVersion);
    put<uint64_t>(f, c.config_hash);
    put<uint32_t>(f, c.epoch);
    put<uint64_t>(f, c.global_update);
    put<uint64_t>(f, c.next_episode_id);
    put<double>(f, c.epsilon);

    const NetArchitecture& a = c.arch;
    put<uint8_t>(f, uint8_t(a.variant == Variant::Stateful ? 1 : 0));
    put<int32_t>(f, a.in_channels);
    put<uint32_t>(f, uint32_t(a.conv_channels.size()));
    for (int ch : a.conv_channels) put<int32_t>(f, ch);
    put<int32_t>(f, a.embed_dim);
    put<int32_t>(f, a.n_actions);
    put<int32_t>(f, a.history_len);
    put<int32_t>(f, a.attn_heads);
    put<int32_t>(f, a.action_embed_dim);

    put_params(f, c.online);
    put_params(f, c.target);
    put<uint64_t>(f, c.opt_step);
    put<uint32_t>(f, uint32_t(c.opt_m.size()));
    for (size_t e = 0; e < c.opt_m.size(); ++e) {
        put<uint64_t>(f, uint64_t(c.opt_m[e].size()));
        f.write(reinterpret_cast<const char*>(c.opt_m[e].data()),
                std::streamsize(c.opt_m[e].size() * sizeof(float)));
        f.write(reinterpret_cast<const char*>(c.opt_v[e].data()),
                std::streamsize(c.opt_v[e].size() * sizeof(float)));
    }
    put<uint32_t>(f, uint32_t(c.snapshots.size()));
    for (const auto& [iter, ps] : c.snapshots) {
        put<uint64_t>(f, iter);
        put_params(f, ps);
    }
    put<uint32_t>(f, uint32_t(c.buffer.size()));
    for (const auto& ep : c.buffer) {
        put<uint64_t>(f, ep.id);
        put<double>(f, ep.agent_start.x);
        put<double>(f, ep.agent_start.y);
        put<double>(f, ep.agent_start.z);
        put<uint32_t>(f, uint32_t(ep.sources.size()));
        for (const auto& s : ep.sources) {
            put<int32_t>(f, s.id);
            put<double>(f, s.position.x);
            put<double>(f, s.position.y);
            put<double>(f, s.position.z);
            put<int32_t>(f, s.signal_id);
        }
        put<uint32_t>(f, uint32_t(ep.actions.size()));
        for (int act : ep.actions) put<uint8_t>(f, uint8_t(act));
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error("not a checkpoint file: " + path);
    uint32_t version = get<uint32_t>(f);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.config_hash = get<uint64_t>(f);
    c.epoch = get<uint32_t>(f);
    c.global_update = get<uint64_t>(f);
    c.next_episode_id = get<uint64_t>(f);
    c.epsilon = get<double>(f);

    c.arch.variant = get<uint8_t>(f) ? Variant::Stateful : Variant::Memoryless;
    c.arch.in_channels = get<int32_t>(f);
    uint32_t nc = get<uint32_t>(f);
    c.arch.conv_channels.resize(nc);
    for (auto& ch : c.arch.conv_channels) ch = get<int32_t>(f);
    c.arch.embed_dim = get<int32_t>(f);
    c.arch.n_actions = get<int32_t>(f);
    c.arch.history_len = get<int32_t>(f);
    c.arch.attn_heads = get<int32_t>(f);
    c.arch.action_embed_dim = get<int32_t>(f);

    c.online = get_params(f);
    c.target = get_params(f);
    c.opt_step = get<uint64_t>(f);
    uint32_t ne = get<uint32_t>(f);
    c.opt_m.resize(ne);
    c.opt_v.resize(ne);
    for (uint32_t e = 0; e < ne; ++e) {
        uint64_t sz = get<uint64_t>(f);
        c.opt_m[e].resize(sz);
        c.opt_v[e].resize(sz);
        f.read(reinterpret_cast<char*>(c.opt_m[e].data()), std::streamsize(sz * sizeof(float)));
        f.read(reinterpret_cast<char*>(c.opt_v[e].data()), std::streamsize(sz * sizeof(float)));
        if (!f) throw std::runtime_error("checkpoint: truncated optimizer state");
    }
    uint32_t ns = get<uint32_t>(f);
    for (uint32_t s = 0; s < ns; ++s) {
        uint64_t iter = get<uint64_t>(f);
        c.snapshots.emplace_back(iter, get_params(f));
    }
    uint32_t nb = get<uint32_t>(f);
    for (uint32_t b = 0; b < nb; ++b) {
        EpisodeTrace ep;
        ep.id = get<uint64_t>(f);
        ep.agent_start.x = get<double>(f);
        ep.agent_start.y = get<double>(f);
        ep.agent_start.z = get<double>(f);
        uint32_t nsrc = get<uint32_t>(f);
        for (uint32_t j = 0; j < nsrc; ++j) {
            SourceSpec sp;
            sp.id = get<int32_t>(f);
            sp.position.x = get<double>(f);
            sp.position.y = get<double>(f);
            sp.position.z = get<double>(f);
            sp.signal_id = get<int32_t>(f);
            ep.sources.push_back(sp);
        }
        uint32_t na = get<uint32_t>(f);
        ep.actions.resize(na);
        for (auto& act : ep.actions) act = int(get<uint8_t>(f));
        c.buffer.push_back(std::move(ep));
    }
    return c;
}

inline uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (f) {
        f.read(buf, sizeof(buf));
        h = fnv1a(buf, size_t(f.gcount()), h);
    }
    return h;
}

}  // namespace echolocate
