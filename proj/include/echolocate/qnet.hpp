#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "echolocate/common.hpp"
#include "echolocate/features.hpp"

namespace echolocate {

enum class Variant : int { Memoryless = 0, Stateful = 1 };

struct NetArchitecture {
    Variant variant = Variant::Memoryless;
    int in_channels = 2;
    std::vector<int> conv_channels{16, 32, 64};  // each block: 3x3 conv, ReLU, 2x2 avg pool
    int embed_dim = 64;
    int n_actions = 4;
    int history_len = 7;  // H past states for the stateful variant
    int attn_heads = 8;
    int action_embed_dim = 8;

    int token_dim() const { return embed_dim + action_embed_dim; }

    void validate() const {
        if (n_actions < 2) throw std::invalid_argument("n_actions must be >= 2");
        if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
        if (conv_channels.empty()) throw std::invalid_argument("need at least one conv block");
        if (embed_dim < 1) throw std::invalid_argument("embed_dim must be >= 1");
        if (history_len < 0) throw std::invalid_argument("history_len must be >= 0");
        if (variant == Variant::Stateful) {
            if (attn_heads < 1) throw std::invalid_argument("attn_heads must be >= 1");
            if (embed_dim % attn_heads != 0)
                throw std::invalid_argument("embed_dim must be divisible by attn_heads");
            if (token_dim() % attn_heads != 0)
                throw std::invalid_argument("token_dim must be divisible by attn_heads");
            if (action_embed_dim < 1)
                throw std::invalid_argument("action_embed_dim must be >= 1");
        }
    }
};

// Dense channel-major planes, the qnet-side view of a FeatureMap.
template <typename T>
struct Planes {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    T* plane(int ci) { return v.data() + size_t(ci) * h * w; }
    const T* plane(int ci) const { return v.data() + size_t(ci) * h * w; }
};

template <typename T>
Planes<T> to_planes(const FeatureMap& fm) {
    Planes<T> p;
    p.c = fm.channels;
    p.h = fm.mels;
    p.w = fm.frames;
    p.v.assign(fm.data.begin(), fm.data.end());
    return p;
}

// Ordered map of named flat parameter arrays.
template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<T> data;
    };
    std::vector<Entry> entries;
    std::unordered_map<std::string, int> index;

    std::vector<T>& add(const std::string& name, std::vector<int> shape) {
        size_t n = 1;
        for (int d : shape) n *= size_t(d);
        index[name] = int(entries.size());
        entries.push_back({name, std::move(shape), std::vector<T>(n, T(0))});
        return entries.back().data;
    }
    std::vector<T>& at(const std::string& name) { return entries[idx(name)].data; }
    const std::vector<T>& at(const std::string& name) const { return entries[idx(name)].data; }
    int idx(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::logic_error("no parameter named " + name);
        return it->second;
    }
    size_t total_size() const {
        size_t n = 0;
        for (const auto& e : entries) n += e.data.size();
        return n;
    }
    void zero() {
        for (auto& e : entries) std::fill(e.data.begin(), e.data.end(), T(0));
    }
    bool same_shapes(const ParamStore& o) const {
        if (entries.size() != o.entries.size()) return false;
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name != o.entries[i].name || entries[i].shape != o.entries[i].shape)
                return false;
        return true;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries) {
            auto& d = out.add(e.name, e.shape);
            for (size_t i = 0; i < e.data.size(); ++i) d[i] = U(e.data[i]);
        }
        return out;
    }
};

template <typename T>
using GradStore = ParamStore<T>;

constexpr int kNullActionId = -1;  // maps to the last row of the action embedding

namespace qdetail {

template <typename T>
void declare_params(const NetArchitecture& arch, ParamStore<T>& ps) {
    int cin = arch.in_channels;
    for (size_t i = 0; i < arch.conv_channels.size(); ++i) {
        int cout = arch.conv_channels[i];
        ps.add("conv" + std::to_string(i) + ".w", {cout, cin, 3, 3});
        ps.add("conv" + std::to_string(i) + ".b", {cout});
        cin = cout;
    }
    ps.add("fc1.w", {arch.embed_dim, cin});
    ps.add("fc1.b", {arch.embed_dim});
    if (arch.variant == Variant::Memoryless) {
        ps.add("fc2.w", {arch.n_actions, arch.embed_dim});
        ps.add("fc2.b", {arch.n_actions});
    } else {
        int d = arch.token_dim();
        ps.add("act_embed", {arch.n_actions + 1, arch.action_embed_dim});
        for (const char* n : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
            ps.add(n, {d, d});
        for (const char* n : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) ps.add(n, {d});
        ps.add("head.w", {arch.n_actions, d});
        ps.add("head.b", {arch.n_actions});
    }
}

}  // namespace qdetail

// He-uniform conv weights, Xavier-uniform linear weights, zero biases.
template <typename T>
ParamStore<T> init_params(const NetArchitecture& arch, uint64_t seed) {
    arch.validate();
    ParamStore<T> ps;
    qdetail::declare_params(arch, ps);
    Rng rng(mix_seed(seed, 0x1217));
    for (auto& e : ps.entries) {
        bool is_conv_w = e.name.rfind("conv", 0) == 0 && e.shape.size() == 4;
        bool is_lin_w = e.shape.size() == 2 && e.name != "act_embed";
        if (is_conv_w) {
            double fan_in = double(e.shape[1]) * e.shape[2] * e.shape[3];
            double lim = std::sqrt(6.0 / fan_in);
            for (auto& v : e.data) v = T(rng.uniform(-lim, lim));
        } else if (is_lin_w) {
            double lim = std::sqrt(6.0 / double(e.shape[0] + e.shape[1]));
            for (auto& v : e.data) v = T(rng.uniform(-lim, lim));
        } else if (e.name == "act_embed") {
            for (auto& v : e.data) v = T(rng.uniform(-0.1, 0.1));
        }
        // biases stay zero
    }
    return ps;
}

namespace qdetail {

template <typename T>
void conv3x3_forward(const Planes<T>& in, const std::vector<T>& w, const std::vector<T>& b,
                     Planes<T>& out, int cout) {
    int H = in.h, W = in.w, Cin = in.c;
    out.c = cout;
    out.h = H;
    out.w = W;
    out.v.assign(size_t(cout) * H * W, T(0));
    for (int co = 0; co < cout; ++co) {
        T* op = out.plane(co);
        T bias = b[size_t(co)];
        for (int i = 0; i < H * W; ++i) op[i] = bias;
        for (int ci = 0; ci < Cin; ++ci) {
            const T* ip = in.plane(ci);
            const T* wp = w.data() + ((size_t(co) * Cin + ci) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                int dy = ky - 1;
                int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    int dx = kx - 1;
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    T wgt = wp[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        T* orow = op + size_t(y) * W;
                        const T* irow = ip + size_t(y + dy) * W + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wgt * irow[x];
                    }
                }
            }
        }
    }
}

// din may be null when input gradients are not needed (first layer).
template <typename T>
void conv3x3_backward(const Planes<T>& in, const std::vector<T>& w, const Planes<T>& dout,
                      Planes<T>* din, std::vector<T>& dw, std::vector<T>& db) {
    int H = in.h, W = in.w, Cin = in.c, Cout = dout.c;
    if (din) {
        din->c = Cin;
        din->h = H;
        din->w = W;
        din->v.assign(size_t(Cin) * H * W, T(0));
    }
    for (int co = 0; co < Cout; ++co) {
        const T* dop = dout.plane(co);
        T acc = T(0);
        for (int i = 0; i < H * W; ++i) acc += dop[i];
        db[size_t(co)] += acc;
        for (int ci = 0; ci < Cin; ++ci) {
            const T* ip = in.plane(ci);
            T* dip = din ? din->plane(ci) : nullptr;
            T* dwp = dw.data() + ((size_t(co) * Cin + ci) * 9);
            const T* wp = w.data() + ((size_t(co) * Cin + ci) * 9);
            for (int ky = 0; ky < 3; ++ky) {
                int dy = ky - 1;
                int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    int dx = kx - 1;
                    int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    T wgrad = T(0);
                    T wgt = wp[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        const T* drow = dop + size_t(y) * W;
                        const T* irow = ip + size_t(y + dy) * W + dx;
                        if (dip) {
                            T* dirow = dip + size_t(y + dy) * W + dx;
                            for (int x = x0; x < x1; ++x) {
                                wgrad += drow[x] * irow[x];
                                dirow[x] += wgt * drow[x];
                            }
                        } else {
                            for (int x = x0; x < x1; ++x) wgrad += drow[x] * irow[x];
                        }
                    }
                    dwp[ky * 3 + kx] += wgrad;
                }
            }
        }
    }
}

template <typename T>
void relu_inplace(Planes<T>& p) {
    for (auto& v : p.v)
        if (v < T(0)) v = T(0);
}

// Uses the post-activation values to gate the gradient.
template <typename T>
void relu_backward(const Planes<T>& post, Planes<T>& dpost) {
    for (size_t i = 0; i < post.v.size(); ++i)
        if (post.v[i] <= T(0)) dpost.v[i] = T(0);
}

template <typename T>
void avgpool2_forward(const Planes<T>& in, Planes<T>& out) {
    int H2 = in.h / 2, W2 = in.w / 2;
    if (H2 < 1 || W2 < 1) throw std::invalid_argument("input too small for 2x2 pooling");
    out.c = in.c;
    out.h = H2;
    out.w = W2;
    out.v.assign(size_t(in.c) * H2 * W2, T(0));
    for (int c = 0; c < in.c; ++c) {
        const T* ip = in.plane(c);
        T* op = out.plane(c);
        for (int y = 0; y < H2; ++y)
            for (int x = 0; x < W2; ++x) {
                const T* p0 = ip + size_t(2 * y) * in.w + 2 * x;
                const T* p1 = p0 + in.w;
                op[size_t(y) * W2 + x] = (p0[0] + p0[1] + p1[0] + p1[1]) * T(0.25);
            }
    }
}

// Remainder rows/columns dropped by the floor pooling receive zero gradient.
template <typename T>
void avgpool2_backward(const Planes<T>& in, const Planes<T>& dout, Planes<T>& din) {
    din.c = in.c;
    din.h = in.h;
    din.w = in.w;
    din.v.assign(in.v.size(), T(0));
    int H2 = dout.h, W2 = dout.w;
    for (int c = 0; c < in.c; ++c) {
        const T* dop = dout.plane(c);
        T* dip = din.plane(c);
        for (int y = 0; y < H2; ++y)
            for (int x = 0; x < W2; ++x) {
                T g = dop[size_t(y) * W2 + x] * T(0.25);
                T* p0 = dip + size_t(2 * y) * in.w + 2 * x;
                T* p1 = p0 + in.w;
                p0[0] += g;
                p0[1] += g;
                p1[0] += g;
                p1[1] += g;
            }
    }
}

// y = W x + b with row-major W [out, in].
template <typename T>
void linear_forward(const std::vector<T>& w, const std::vector<T>& b, const T* x, int nin,
                    T* y, int nout) {
    for (int o = 0; o < nout; ++o) {
        const T* wrow = w.data() + size_t(o) * nin;
        T acc = b.empty() ? T(0) : b[size_t(o)];
        for (int i = 0; i < nin; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
}

template <typename T>
void linear_backward(const std::vector<T>& w, const T* x, const T* dy, int nin, int nout,
                     std::vector<T>& dw, std::vector<T>* db, T* dx) {
    for (int o = 0; o < nout; ++o) {
        T g = dy[o];
        if (db) (*db)[size_t(o)] += g;
        T* dwrow = dw.data() + size_t(o) * nin;
        const T* wrow = w.data() + size_t(o) * nin;
        for (int i = 0; i < nin; ++i) dwrow[i] += g * x[i];
        if (dx)
            for (int i = 0; i < nin; ++i) dx[i] += wrow[i] * g;
    }
}

template <typename T>
struct EncoderTrace {
    Planes<T> input;
    std::vector<Planes<T>> act;     // post-ReLU conv output per block
    std::vector<Planes<T>> pooled;  // post-pool per block
    std::vector<T> gap;             // [C_last]
    std::vector<T> embed;           // post-ReLU fc1 output [embed_dim]
};

// conv blocks -> global average pool -> linear(embed) -> ReLU
template <typename T>
void encoder_forward(const ParamStore<T>& ps, const NetArchitecture& arch,
                     const Planes<T>& input, EncoderTrace<T>& tr) {
    if (input.c != arch.in_channels)
        throw std::invalid_argument("feature channel count does not match the architecture");
    tr.input = input;
    size_t nb = arch.conv_channels.size();
    tr.act.resize(nb);
    tr.pooled.resize(nb);
    const Planes<T>* cur = &tr.input;
    for (size_t i = 0; i < nb; ++i) {
        std::string tag = "conv" + std::to_string(i);
        conv3x3_forward(*cur, ps.at(tag + ".w"), ps.at(tag + ".b"), tr.act[i],
                        arch.conv_channels[i]);
        relu_inplace(tr.act[i]);
        avgpool2_forward(tr.act[i], tr.pooled[i]);
        cur = &tr.pooled[i];
    }
    const Planes<T>& last = *cur;
    tr.gap.assign(size_t(last.c), T(0));
    T inv = T(1) / T(last.h * last.w);
    for (int c = 0; c < last.c; ++c) {
        const T* p = last.plane(c);
        T acc = T(0);
        for (int i = 0; i < last.h * last.w; ++i) acc += p[i];
        tr.gap[size_t(c)] = acc * inv;
    }
    tr.embed.assign(size_t(arch.embed_dim), T(0));
    linear_forward(ps.at("fc1.w"), ps.at("fc1.b"), tr.gap.data(), last.c, tr.embed.data(),
                   arch.embed_dim);
    for (auto& v : tr.embed)
        if (v < T(0)) v = T(0);
}

template <typename T>
void encoder_backward(const ParamStore<T>& ps, const NetArchitecture& arch,
                      const EncoderTrace<T>& tr, const std::vector<T>& dembed,
                      GradStore<T>& g) {
    size_t nb = arch.conv_channels.size();
    const Planes<T>& last = tr.pooled[nb - 1];
    std::vector<T> de = dembed;
    for (size_t i = 0; i < de.size(); ++i)
        if (tr.embed[i] <= T(0)) de[i] = T(0);
    std::vector<T> dgap(size_t(last.c), T(0));
    linear_backward(ps.at("fc1.w"), tr.gap.data(), de.data(), last.c, arch.embed_dim,
                    g.at("fc1.w"), &g.at("fc1.b"), dgap.data());
    Planes<T> dcur;
    dcur.c = last.c;
    dcur.h = last.h;
    dcur.w = last.w;
    dcur.v.assign(last.v.size(), T(0));
    T inv = T(1) / T(last.h * last.w);
    for (int c = 0; c < last.c; ++c) {
        T gg = dgap[size_t(c)] * inv;
        T* p = dcur.plane(c);
        for (int i = 0; i < last.h * last.w; ++i) p[i] = gg;
    }
    for (size_t i = nb; i-- > 0;) {
        Planes<T> dact;
        avgpool2_backward(tr.act[i], dcur, dact);
        relu_backward(tr.act[i], dact);
        std::string tag = "conv" + std::to_string(i);
        const Planes<T>& below = (i == 0) ? tr.input : tr.pooled[i - 1];
        Planes<T> dbelow;
        conv3x3_backward(below, ps.at(tag + ".w"), dact, (i == 0) ? nullptr : &dbelow,
                         g.at(tag + ".w"), g.at(tag + ".b"));
        if (i > 0) dcur = std::move(dbelow);
    }
}

}  // namespace qdetail

// History window ingredients for the stateful variant: the current feature
// planes plus up to H past (planes, action) pairs, most recent last.
template <typename T>
struct StateInput {
    Planes<T> cur;
    std::vector<std::pair<Planes<T>, int>> past;
};

template <typename T>
using ActionValues = std::vector<T>;

namespace qdetail {

template <typename T>
struct MemorylessTrace {
    EncoderTrace<T> enc;
};

template <typename T>
ActionValues<T> forward_memoryless_traced(const ParamStore<T>& ps, const NetArchitecture& arch,
                                          const Planes<T>& input, MemorylessTrace<T>& tr) {
    encoder_forward(ps, arch, input, tr.enc);
    ActionValues<T> q(size_t(arch.n_actions), T(0));
    linear_forward(ps.at("fc2.w"), ps.at("fc2.b"), tr.enc.embed.data(), arch.embed_dim,
                   q.data(), arch.n_actions);
    return q;
}

template <typename T>
void backward_memoryless(const ParamStore<T>& ps, const NetArchitecture& arch,
                         const MemorylessTrace<T>& tr, const ActionValues<T>& dq,
                         GradStore<T>& g) {
    std::vector<T> dembed(size_t(arch.embed_dim), T(0));
    linear_backward(ps.at("fc2.w"), tr.enc.embed.data(), dq.data(), arch.embed_dim,
                    arch.n_actions, g.at("fc2.w"), &g.at("fc2.b"), dembed.data());
    encoder_backward(ps, arch, tr.enc, dembed, g);
}

template <typename T>
struct StatefulTrace {
    int n_tokens = 0;
    int n_valid = 0;
    std::vector<uint8_t> valid;
    std::vector<int> action_ids;            // embedding row per token
    std::vector<EncoderTrace<T>> enc;       // traces for valid tokens only
    std::vector<int> enc_slot;              // token index -> index into enc, or -1
    std::vector<T> x;                       // tokens [n_tokens, D]
    std::vector<T> q_, k_, v_;              // projections [n_tokens, D]
    std::vector<T> attn;                    // [heads, n_tokens, n_tokens], valid rows only
    std::vector<T> heads_out;               // [n_tokens, D]
    std::vector<T> y;                       // post-Wo [n_tokens, D]
    std::vector<T> pooled;                  // masked mean [D]
};

template <typename T>
ActionValues<T> forward_stateful_traced(const ParamStore<T>& ps, const NetArchitecture& arch,
                                        const StateInput<T>& in, StatefulTrace<T>& tr) {
    int H = arch.history_len;
    if (int(in.past.size()) > H)
        throw std::invalid_argument("history window longer than history_len");
    int n_tok = H + 1;
    int D = arch.token_dim();
    int E = arch.embed_dim;
    int AE = arch.action_embed_dim;
    int null_row = arch.n_actions;  // last embedding row
    tr.n_tokens = n_tok;
    tr.valid.assign(size_t(n_tok), 0);
    tr.action_ids.assign(size_t(n_tok), null_row);
    tr.enc.clear();
    tr.enc_slot.assign(size_t(n_tok), -1);
    tr.x.assign(size_t(n_tok) * D, T(0));
    const auto& act_embed = ps.at("act_embed");

    int pad = n_tok - 1 - int(in.past.size());
    // padded slots [0, pad) stay zero-embed with the null action id and invalid mask
    for (size_t p = 0; p < in.past.size(); ++p) {
        int i = pad + int(p);
        tr.valid[size_t(i)] = 1;
        int aid = in.past[p].second;
        if (aid < 0 || aid >= arch.n_actions)
            throw std::invalid_argument("history action id out of range");
        tr.action_ids[size_t(i)] = aid;
        tr.enc_slot[size_t(i)] = int(tr.enc.size());
        tr.enc.emplace_back();
        encoder_forward(ps, arch, in.past[p].first, tr.enc.back());
    }
    int cur_i = n_tok - 1;
    tr.valid[size_t(cur_i)] = 1;
    tr.enc_slot[size_t(cur_i)] = int(tr.enc.size());
    tr.enc.emplace_back();
    encoder_forward(ps, arch, in.cur, tr.enc.back());

    tr.n_valid = 0;
    for (int i = 0; i < n_tok; ++i) {
        T* xi = tr.x.data() + size_t(i) * D;
        if (tr.valid[size_t(i)]) {
            ++tr.n_valid;
            const auto& emb = tr.enc[size_t(tr.enc_slot[size_t(i)])].embed;
            std::copy(emb.begin(), emb.end(), xi);
        }
        const T* ae = act_embed.data() + size_t(tr.action_ids[size_t(i)]) * AE;
        std::copy(ae, ae + AE, xi + E);
    }

    // multi-head self-attention over the valid tokens
    int nh = arch.attn_heads, dh = D / nh;
    tr.q_.assign(size_t(n_tok) * D, T(0));
    tr.k_.assign(size_t(n_tok) * D, T(0));
    tr.v_.assign(size_t(n_tok) * D, T(0));
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        const T* xi = tr.x.data() + size_t(i) * D;
        linear_forward(ps.at("attn.wq"), ps.at("attn.bq"), xi, D, tr.q_.data() + size_t(i) * D, D);
        linear_forward(ps.at("attn.wk"), ps.at("attn.bk"), xi, D, tr.k_.data() + size_t(i) * D, D);
        linear_forward(ps.at("attn.wv"), ps.at("attn.bv"), xi, D, tr.v_.data() + size_t(i) * D, D);
    }
    tr.attn.assign(size_t(nh) * n_tok * n_tok, T(0));
    tr.heads_out.assign(size_t(n_tok) * D, T(0));
    T scale = T(1) / std::sqrt(T(dh));
    for (int h = 0; h < nh; ++h) {
        for (int i = 0; i < n_tok; ++i) {
            if (!tr.valid[size_t(i)]) continue;
            const T* qi = tr.q_.data() + size_t(i) * D + size_t(h) * dh;
            T* arow = tr.attn.data() + (size_t(h) * n_tok + i) * n_tok;
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < n_tok; ++j) {
                if (!tr.valid[size_t(j)]) continue;
                const T* kj = tr.k_.data() + size_t(j) * D + size_t(h) * dh;
                T s = T(0);
                for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
                arow[j] = s * scale;
                mx = std::max(mx, arow[j]);
            }
            T denom = T(0);
            for (int j = 0; j < n_tok; ++j) {
                if (!tr.valid[size_t(j)]) {
                    arow[j] = T(0);
                    continue;
                }
                arow[j] = std::exp(arow[j] - mx);
                denom += arow[j];
            }
            for (int j = 0; j < n_tok; ++j) arow[j] /= denom;
            T* oi = tr.heads_out.data() + size_t(i) * D + size_t(h) * dh;
            for (int j = 0; j < n_tok; ++j) {
                if (arow[j] == T(0)) continue;
                const T* vj = tr.v_.data() + size_t(j) * D + size_t(h) * dh;
                for (int d = 0; d < dh; ++d) oi[d] += arow[j] * vj[d];
            }
        }
    }
    tr.y.assign(size_t(n_tok) * D, T(0));
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        linear_forward(ps.at("attn.wo"), ps.at("attn.bo"), tr.heads_out.data() + size_t(i) * D,
                       D, tr.y.data() + size_t(i) * D, D);
    }
    tr.pooled.assign(size_t(D), T(0));
    T invn = T(1) / T(tr.n_valid);
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        const T* yi = tr.y.data() + size_t(i) * D;
        for (int d = 0; d < D; ++d) tr.pooled[size_t(d)] += yi[d] * invn;
    }
    ActionValues<T> q(size_t(arch.n_actions), T(0));
    linear_forward(ps.at("head.w"), ps.at("head.b"), tr.pooled.data(), D, q.data(),
                   arch.n_actions);
    return q;
}

template <typename T>
void backward_stateful(const ParamStore<T>& ps, const NetArchitecture& arch,
                       const StatefulTrace<T>& tr, const ActionValues<T>& dq,
                       GradStore<T>& g) {
    int n_tok = tr.n_tokens;
    int D = arch.token_dim();
    int E = arch.embed_dim;
    int AE = arch.action_embed_dim;
    int nh = arch.attn_heads, dh = D / nh;

    std::vector<T> dpooled(size_t(D), T(0));
    linear_backward(ps.at("head.w"), tr.pooled.data(), dq.data(), D, arch.n_actions,
                    g.at("head.w"), &g.at("head.b"), dpooled.data());

    std::vector<T> dy(size_t(n_tok) * D, T(0));
    T invn = T(1) / T(tr.n_valid);
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        T* dyi = dy.data() + size_t(i) * D;
        for (int d = 0; d < D; ++d) dyi[d] = dpooled[size_t(d)] * invn;
    }
    std::vector<T> dheads(size_t(n_tok) * D, T(0));
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        linear_backward(ps.at("attn.wo"), tr.heads_out.data() + size_t(i) * D,
                        dy.data() + size_t(i) * D, D, D, g.at("attn.wo"), &g.at("attn.bo"),
                        dheads.data() + size_t(i) * D);
    }
    std::vector<T> dq_(size_t(n_tok) * D, T(0));
    std::vector<T> dk_(size_t(n_tok) * D, T(0));
    std::vector<T> dv_(size_t(n_tok) * D, T(0));
    T scale = T(1) / std::sqrt(T(dh));
    for (int h = 0; h < nh; ++h) {
        for (int i = 0; i < n_tok; ++i) {
            if (!tr.valid[size_t(i)]) continue;
            const T* arow = tr.attn.data() + (size_t(h) * n_tok + i) * n_tok;
            const T* doi = dheads.data() + size_t(i) * D + size_t(h) * dh;
            // d attn and d v
            std::vector<T> da(size_t(n_tok), T(0));
            for (int j = 0; j < n_tok; ++j) {
                if (!tr.valid[size_t(j)]) continue;
                const T* vj = tr.v_.data() + size_t(j) * D + size_t(h) * dh;
                T* dvj = dv_.data() + size_t(j) * D + size_t(h) * dh;
                T aij = arow[j];
                T acc = T(0);
                for (int d = 0; d < dh; ++d) {
                    acc += doi[d] * vj[d];
                    dvj[d] += aij * doi[d];
                }
                da[size_t(j)] = acc;
            }
            // softmax backward
            T dot = T(0);
            for (int j = 0; j < n_tok; ++j) dot += da[size_t(j)] * arow[j];
            const T* qi = tr.q_.data() + size_t(i) * D + size_t(h) * dh;
            T* dqi = dq_.data() + size_t(i) * D + size_t(h) * dh;
            for (int j = 0; j < n_tok; ++j) {
                if (!tr.valid[size_t(j)]) continue;
                T dscore = arow[j] * (da[size_t(j)] - dot) * scale;
                const T* kj = tr.k_.data() + size_t(j) * D + size_t(h) * dh;
                T* dkj = dk_.data() + size_t(j) * D + size_t(h) * dh;
                for (int d = 0; d < dh; ++d) {
                    dqi[d] += dscore * kj[d];
                    dkj[d] += dscore * qi[d];
                }
            }
        }
    }
    std::vector<T> dx(size_t(n_tok) * D, T(0));
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        const T* xi = tr.x.data() + size_t(i) * D;
        linear_backward(ps.at("attn.wq"), xi, dq_.data() + size_t(i) * D, D, D, g.at("attn.wq"),
                        &g.at("attn.bq"), dx.data() + size_t(i) * D);
        linear_backward(ps.at("attn.wk"), xi, dk_.data() + size_t(i) * D, D, D, g.at("attn.wk"),
                        &g.at("attn.bk"), dx.data() + size_t(i) * D);
        linear_backward(ps.at("attn.wv"), xi, dv_.data() + size_t(i) * D, D, D, g.at("attn.wv"),
                        &g.at("attn.bv"), dx.data() + size_t(i) * D);
    }
    auto& dact_embed = g.at("act_embed");
    for (int i = 0; i < n_tok; ++i) {
        if (!tr.valid[size_t(i)]) continue;
        const T* dxi = dx.data() + size_t(i) * D;
        std::vector<T> dembed(dxi, dxi + E);
        encoder_backward(ps, arch, tr.enc[size_t(tr.enc_slot[size_t(i)])], dembed, g);
        T* dae = dact_embed.data() + size_t(tr.action_ids[size_t(i)]) * AE;
        for (int d = 0; d < AE; ++d) dae[d] += dxi[E + d];
    }
}

}  // namespace qdetail

// conv blocks (3x3 conv, ReLU, 2x2 avg pool) -> GAP -> linear -> ReLU -> linear.
template <typename T>
ActionValues<T> forward_memoryless(const ParamStore<T>& ps, const NetArchitecture& arch,
                                   const Planes<T>& input) {
    qdetail::MemorylessTrace<T> tr;
    return qdetail::forward_memoryless_traced(ps, arch, input, tr);
}

// shared encoder per state, action embeddings, (H+1)-token self-attention,
// masked mean, linear head.
template <typename T>
ActionValues<T> forward_stateful(const ParamStore<T>& ps, const NetArchitecture& arch,
                                 const StateInput<T>& in) {
    qdetail::StatefulTrace<T> tr;
    return qdetail::forward_stateful_traced(ps, arch, in, tr);
}

template <typename T>
ActionValues<T> forward(const ParamStore<T>& ps, const NetArchitecture& arch,
                        const StateInput<T>& in) {
    if (arch.variant == Variant::Memoryless) return forward_memoryless(ps, arch, in.cur);
    return forward_stateful(ps, arch, in);
}

template <typename T>
struct Sample {
    StateInput<T> s;
    StateInput<T> s_next;
    int action = 0;
    T reward = T(0);
    bool terminal = false;
};

// r if terminal; else r + gamma * max_a target(s_next, a).
template <typename T>
T td_target(const Sample<T>& sm, const ParamStore<T>& target_params,
            const NetArchitecture& arch, T gamma) {
    if (sm.terminal) return sm.reward;
    ActionValues<T> qn = forward(target_params, arch, sm.s_next);
    T mx = qn[0];
    for (T v : qn) mx = std::max(mx, v);
    return sm.reward + gamma * mx;
}

// Mean squared TD error over the batch with reverse-mode gradients. The target
// branch contributes no gradient. Per-sample gradients are reduced in batch
// order so the result is independent of the thread count.
template <typename T>
std::pair<T, GradStore<T>> loss_and_grads(const ParamStore<T>& params,
                                          const ParamStore<T>& target_params,
                                          const std::vector<Sample<T>>& batch,
                                          const NetArchitecture& arch, T gamma,
                                          int threads = 1) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
    size_t B = batch.size();
    std::vector<GradStore<T>> per(B);
    std::vector<T> losses(B, T(0));
    parallel_for(B, threads, [&](size_t i) {
        GradStore<T> g;
        qdetail::declare_params(arch, g);
        const Sample<T>& sm = batch[i];
        T td = td_target(sm, target_params, arch, gamma);
        ActionValues<T> q;
        ActionValues<T> dq(size_t(arch.n_actions), T(0));
        if (arch.variant == Variant::Memoryless) {
            qdetail::MemorylessTrace<T> tr;
            q = qdetail::forward_memoryless_traced(params, arch, sm.s.cur, tr);
            T err = td - q[size_t(sm.action)];
            losses[i] = err * err;
            dq[size_t(sm.action)] = T(-2) * err;
            qdetail::backward_memoryless(params, arch, tr, dq, g);
        } else {
            qdetail::StatefulTrace<T> tr;
            q = qdetail::forward_stateful_traced(params, arch, sm.s, tr);
            T err = td - q[size_t(sm.action)];
            losses[i] = err * err;
            dq[size_t(sm.action)] = T(-2) * err;
            qdetail::backward_stateful(params, arch, tr, dq, g);
        }
        per[i] = std::move(g);
    });
    GradStore<T> grads;
    qdetail::declare_params(arch, grads);
    T inv = T(1) / T(B);
    for (size_t i = 0; i < B; ++i)
        for (size_t e = 0; e < grads.entries.size(); ++e) {
            auto& dst = grads.entries[e].data;
            const auto& src = per[i].entries[e].data;
            for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    T loss = T(0);
    for (size_t i = 0; i < B; ++i) loss += losses[i];
    loss *= inv;
    for (auto& e : grads.entries)
        for (auto& v : e.data) v *= inv;
    return {loss, std::move(grads)};
}

template <typename T>
struct OptState {
    std::vector<std::vector<T>> m, v;  // first/second moments, mirror the params
    uint64_t step = 0;
    T lr = T(1e-4), beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

    static OptState make(const ParamStore<T>& ps, T lr = T(1e-4)) {
        OptState o;
        o.lr = lr;
        for (const auto& e : ps.entries) {
            o.m.emplace_back(e.data.size(), T(0));
            o.v.emplace_back(e.data.size(), T(0));
        }
        return o;
    }
};

// Standard Adam with bias correction.
template <typename T>
void adam_step(ParamStore<T>& params, const GradStore<T>& grads, OptState<T>& opt) {
    if (!params.same_shapes(grads)) throw std::invalid_argument("adam_step: shape mismatch");
    opt.step += 1;
    T bc1 = T(1) - std::pow(opt.beta1, T(opt.step));
    T bc2 = T(1) - std::pow(opt.beta2, T(opt.step));
    for (size_t e = 0; e < params.entries.size(); ++e) {
        auto& p = params.entries[e].data;
        const auto& gr = grads.entries[e].data;
        auto& m = opt.m[e];
        auto& v = opt.v[e];
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = opt.beta1 * m[i] + (T(1) - opt.beta1) * gr[i];
            v[i] = opt.beta2 * v[i] + (T(1) - opt.beta2) * gr[i] * gr[i];
            T mhat = m[i] / bc1;
            T vhat = v[i] / bc2;
            p[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

// Sets the target to the online snapshot `delay` update iterations back, or
// the oldest available snapshot. The queue is ordered oldest first.
template <typename T>
void hard_update(ParamStore<T>& target, const std::vector<const ParamStore<T>*>& snapshots,
                 int delay) {
    if (snapshots.empty()) throw std::invalid_argument("hard_update: empty snapshot queue");
    int n = int(snapshots.size());
    int pick = std::max(0, n - 1 - delay);
    target = *snapshots[size_t(pick)];
}

// theta_hat <- (1 - tau) * theta_hat + tau * theta
template <typename T>
void soft_update(ParamStore<T>& target, const ParamStore<T>& online, T tau) {
    if (!(tau >= T(0) && tau <= T(1)))
        throw std::invalid_argument("soft_update: tau must be in [0,1]");
    if (!target.same_shapes(online)) throw std::invalid_argument("soft_update: shape mismatch");
    for (size_t e = 0; e < target.entries.size(); ++e) {
        auto& t = target.entries[e].data;
        const auto& o = online.entries[e].data;
        for (size_t i = 0; i < t.size(); ++i) t[i] = (T(1) - tau) * t[i] + tau * o[i];
    }
}

template <typename T>
int argmax_action(const ActionValues<T>& q) {
    int best = 0;
    for (int i = 1; i < int(q.size()); ++i)
        if (q[size_t(i)] > q[size_t(best)]) best = i;  // ties keep the lowest index
    return best;
}

template <typename T>
uint64_t param_hash(const ParamStore<T>& ps) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& e : ps.entries) {
        h = fnv1a(e.name, h);
        h = fnv1a(e.data.data(), e.data.size() * sizeof(T), h);
    }
    return h;
}

}  // namespace echolocate
