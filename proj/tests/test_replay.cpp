#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <deque>
#include <map>

#include "echolocate/replay.hpp"

using namespace echolocate;

namespace {

EpisodeRecord make_episode(uint64_t id, int n, bool success) {
    EpisodeRecord ep;
    ep.id = id;
    ep.success = success;
    for (int i = 0; i < n; ++i) {
        ep.actions.push_back(i % 4);
        ep.rewards.push_back(success && i == n - 1 ? 1.0f : -0.1f);
        ep.events.push_back(success && i == n - 1 ? StepEvent::FoundNewSource : StepEvent::None);
    }
    ep.maps.resize(size_t(n) + 1);
    for (auto& m : ep.maps) {
        m.channels = 1;
        m.mels = 1;
        m.frames = 1;
        m.data = {float(id)};
    }
    return ep;
}

// Brute-force simulator of the two-phase eviction rule.
struct Sim {
    size_t capacity;
    std::deque<std::pair<uint64_t, std::pair<int, bool>>> eps;  // id -> (len, success)

    void push(uint64_t id, int n, bool success) {
        eps.emplace_back(id, std::make_pair(n, success));
        auto total = [&] {
            size_t s = 0;
            for (auto& e : eps) s += size_t(e.second.first);
            return s;
        };
        while (total() > capacity) {
            size_t victim = eps.size();
            for (size_t i = 0; i < eps.size(); ++i)
                if (!eps[i].second.second) {
                    victim = i;
                    break;
                }
            if (victim == eps.size()) victim = 0;  // all successful: FIFO
            eps.erase(eps.begin() + long(victim));
        }
    }
};

bool matches(const ReplayBuffer& buf, const Sim& sim) {
    if (buf.n_episodes() != sim.eps.size()) return false;
    size_t i = 0;
    for (const auto& ep : buf.episodes()) {
        if (ep.id != sim.eps[i].first) return false;
        if (ep.n_transitions() != sim.eps[i].second.first) return false;
        if (ep.success != sim.eps[i].second.second) return false;
        ++i;
    }
    return true;
}

}  // namespace

TEST_CASE("eviction examples from the stated rule") {
    SUBCASE("failed episode evicted before successful ones") {
        ReplayBuffer buf(10);
        buf.push_episode(make_episode(0, 6, true));   // A
        buf.push_episode(make_episode(1, 5, false));  // B
        buf.push_episode(make_episode(2, 4, true));   // C -> evicts B
        CHECK(buf.n_episodes() == 2);
        CHECK(buf.size() == 10);
        CHECK(buf.episodes()[0].id == 0);
        CHECK(buf.episodes()[1].id == 2);
    }
    SUBCASE("all-successful contents fall back to FIFO") {
        ReplayBuffer buf(10);
        buf.push_episode(make_episode(0, 6, true));
        buf.push_episode(make_episode(1, 5, true));  // evicts 0
        CHECK(buf.n_episodes() == 1);
        CHECK(buf.episodes()[0].id == 1);
    }
    SUBCASE("a pushed failure may immediately evict itself") {
        ReplayBuffer buf(10);
        buf.push_episode(make_episode(0, 6, true));
        buf.push_episode(make_episode(1, 4, true));
        buf.push_episode(make_episode(2, 3, false));  // only failure, over cap -> gone
        CHECK(buf.n_episodes() == 2);
        CHECK(buf.episodes()[0].id == 0);
        CHECK(buf.episodes()[1].id == 1);
    }
    SUBCASE("oversized episode is rejected") {
        ReplayBuffer buf(10);
        CHECK_THROWS(buf.push_episode(make_episode(0, 11, true)));
    }
    SUBCASE("empty episode is rejected") {
        ReplayBuffer buf(10);
        EpisodeRecord ep;
        ep.maps.resize(1);
        CHECK_THROWS(buf.push_episode(std::move(ep)));
    }
}

TEST_CASE("eviction equivalence against the brute-force simulator") {
    Rng rng(314);
    for (int run = 0; run < 300; ++run) {
        size_t cap = 10 + rng.uniform_int(40);
        ReplayBuffer buf(cap);
        Sim sim{cap, {}};
        int pushes = 5 + int(rng.uniform_int(40));
        for (int p = 0; p < pushes; ++p) {
            int n = 1 + int(rng.uniform_int(std::min<size_t>(cap, 12)));
            bool success = rng.uniform() < 0.4;
            buf.push_episode(make_episode(uint64_t(p), n, success));
            sim.push(uint64_t(p), n, success);
            REQUIRE(buf.size() <= cap);
        }
        CHECK(matches(buf, sim));
    }
}

TEST_CASE("success-first ordering property") {
    // If any unsuccessful episode remains, the last eviction never removed a
    // successful one: equivalently, evicted-successful implies no failures left.
    Rng rng(271);
    for (int run = 0; run < 100; ++run) {
        size_t cap = 15 + rng.uniform_int(20);
        ReplayBuffer buf(cap);
        for (int p = 0; p < 30; ++p) {
            std::set<uint64_t> successful_before;
            for (const auto& ep : buf.episodes())
                if (ep.success) successful_before.insert(ep.id);
            buf.push_episode(
                make_episode(uint64_t(run * 100 + p), 1 + int(rng.uniform_int(10)),
                             rng.uniform() < 0.5));
            bool evicted_successful = false;
            std::set<uint64_t> now;
            for (const auto& ep : buf.episodes()) now.insert(ep.id);
            for (uint64_t id : successful_before)
                if (!now.count(id)) evicted_successful = true;
            bool any_failure_left = false;
            for (const auto& ep : buf.episodes())
                if (!ep.success) any_failure_left = true;
            if (evicted_successful) CHECK_FALSE(any_failure_left);
        }
    }
}

TEST_CASE("sampling without replacement") {
    ReplayBuffer buf(200);
    for (int p = 0; p < 10; ++p) buf.push_episode(make_episode(uint64_t(p), 10, false));
    REQUIRE(buf.size() == 100);

    SUBCASE("n = size yields a permutation of the whole buffer") {
        auto refs = buf.sample_without_replacement(100, 7);
        REQUIRE(refs.size() == 100);
        std::set<std::pair<const EpisodeRecord*, int>> seen;
        for (const auto& r : refs) seen.insert({r.episode, r.step});
        CHECK(seen.size() == 100);
    }
    SUBCASE("64 from 100 are distinct") {
        auto refs = buf.sample_without_replacement(64, 7);
        REQUIRE(refs.size() == 64);
        std::set<std::pair<const EpisodeRecord*, int>> seen;
        for (const auto& r : refs) seen.insert({r.episode, r.step});
        CHECK(seen.size() == 64);
    }
    SUBCASE("asking beyond the size returns everything") {
        CHECK(buf.sample_without_replacement(1000, 7).size() == 100);
    }
    SUBCASE("inclusion frequency matches the hypergeometric expectation") {
        // each transition included with p = 64/100 per draw
        std::map<std::pair<const EpisodeRecord*, int>, int> counts;
        const int draws = 10000;
        for (int d = 0; d < draws; ++d)
            for (const auto& r : buf.sample_without_replacement(64, uint64_t(d)))
                counts[{r.episode, r.step}] += 1;
        double p = 0.64;
        double sigma = std::sqrt(p * (1 - p) / draws);
        for (const auto& [key, c] : counts) {
            double f = double(c) / draws;
            CHECK(std::abs(f - p) < 4.0 * sigma + 1e-9);
        }
    }
    SUBCASE("identical seeds give identical samples") {
        auto a = buf.sample_without_replacement(64, 99);
        auto b = buf.sample_without_replacement(64, 99);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].episode == b[i].episode);
            CHECK(a[i].step == b[i].step);
        }
    }
}

TEST_CASE("within-episode transition order is preserved") {
    ReplayBuffer buf(50);
    buf.push_episode(make_episode(0, 8, true));
    const EpisodeRecord& ep = buf.episodes()[0];
    for (int i = 0; i < ep.n_transitions(); ++i) CHECK(ep.actions[size_t(i)] == i % 4);
}
