#pragma once

#include <deque>
#include <stdexcept>
#include <vector>

#include "echolocate/common.hpp"
#include "echolocate/features.hpp"
#include "echolocate/geometry.hpp"

namespace echolocate {

// One finished episode. Observations are kept as feature maps, one per visited
// state (length = steps + 1), so transition windows can be rebuilt without
// duplicating storage. The geometry trace (start pose, sources, actions) is
// what checkpoints persist; maps are re-rendered on load.
struct EpisodeRecord {
    uint64_t id = 0;
    Vec3 agent_start;
    std::vector<SourceSpec> sources;
    std::vector<int> actions;
    std::vector<float> rewards;
    std::vector<StepEvent> events;
    std::vector<FeatureMap> maps;  // s_0 .. s_n
    bool success = false;          // some step found a new source

    int n_transitions() const { return int(actions.size()); }
};

// (episode, step) handle; valid until the next push.
struct TransitionRef {
    const EpisodeRecord* episode = nullptr;
    int step = 0;
};

// Episode-grouped buffer, capacity counted in transitions. Eviction removes
// the oldest unsuccessful episode first and falls back to FIFO.
class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity = 4000) : capacity_(capacity) {}

    void push_episode(EpisodeRecord ep) {
        if (ep.actions.empty()) throw std::invalid_argument("push_episode: empty episode");
        if (ep.maps.size() != ep.actions.size() + 1)
            throw std::invalid_argument("push_episode: need one feature map per visited state");
        if (size_t(ep.n_transitions()) > capacity_)
            throw std::invalid_argument("push_episode: episode larger than buffer capacity");
        size_ += size_t(ep.n_transitions());
        episodes_.push_back(std::move(ep));
        while (size_ > capacity_) {
            int victim = -1;
            for (size_t i = 0; i < episodes_.size(); ++i)
                if (!episodes_[i].success) {
                    victim = int(i);
                    break;
                }
            if (victim < 0) victim = 0;  // all successful: plain FIFO
            size_ -= size_t(episodes_[size_t(victim)].n_transitions());
            episodes_.erase(episodes_.begin() + victim);
        }
    }

    // n distinct transitions uniformly without replacement; all of them when
    // fewer than n exist.
    std::vector<TransitionRef> sample_without_replacement(size_t n, uint64_t seed) const {
        if (episodes_.empty()) throw std::logic_error("sample: empty buffer");
        std::vector<TransitionRef> flat;
        flat.reserve(size_);
        for (const auto& ep : episodes_)
            for (int k = 0; k < ep.n_transitions(); ++k) flat.push_back({&ep, k});
        Rng rng(mix_seed(seed, 0x5a3e));
        size_t take = std::min(n, flat.size());
        for (size_t i = 0; i < take; ++i) {
            size_t j = i + rng.uniform_int(flat.size() - i);
            std::swap(flat[i], flat[j]);
        }
        flat.resize(take);
        return flat;
    }

    size_t size() const { return size_; }  // transitions
    size_t capacity() const { return capacity_; }
    size_t n_episodes() const { return episodes_.size(); }
    const std::deque<EpisodeRecord>& episodes() const { return episodes_; }
    void clear() {
        episodes_.clear();
        size_ = 0;
    }

private:
    size_t capacity_;
    size_t size_ = 0;
    std::deque<EpisodeRecord> episodes_;
};

}  // namespace echolocate
