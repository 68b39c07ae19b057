#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "echolocate/geometry.hpp"

using namespace echolocate;

static EnvConfig default_cfg() {
    EnvConfig cfg;
    return cfg;
}

TEST_CASE("quadrant split and boundary tie-break") {
    RoomSpec room;
    CHECK(quadrant_of(7.5, 2.5, room) == Quadrant::BR);
    CHECK(quadrant_of(2.5, 7.5, room) == Quadrant::TL);
    CHECK(quadrant_of(5.0, 5.0, room) == Quadrant::BR);
    CHECK(quadrant_of(2.5, 2.5, room) == Quadrant::BL);
    CHECK(quadrant_of(7.5, 7.5, room) == Quadrant::TR);
    CHECK_THROWS_AS(quadrant_of(-1.0, 2.0, room), std::domain_error);
    CHECK_THROWS_AS(quadrant_of(2.0, 11.0, room), std::domain_error);
}

TEST_CASE("config validation") {
    EnvConfig cfg = default_cfg();
    CHECK_NOTHROW(cfg.validate());
    EnvConfig bad = cfg;
    bad.room.dims.x = -1;
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.reach_radius = 20.0;  // >= room extent
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.r_minus = 0.1;  // must be negative
    CHECK_THROWS(bad.validate());
    bad = cfg;
    bad.horizon = 0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("step: reward rule examples") {
    EnvConfig cfg = default_cfg();

    SUBCASE("finding a source within reach") {
        EnvState st;
        st.agent.centre = {2.4, 2.1, 2.5};
        st.sources = {SourceSpec{0, {2.1, 2.1, 2.6}, 0}};
        GeomOutcome out = apply_action(st, ActionId::NegX, cfg);
        CHECK(st.agent.centre.x == doctest::Approx(1.9));
        CHECK(st.agent.centre.y == doctest::Approx(2.1));
        CHECK(out.reward == doctest::Approx(1.0));
        CHECK(out.event == StepEvent::FoundNewSource);
        CHECK(st.found.count(0) == 1);
    }
    SUBCASE("out of bounds keeps the agent in place") {
        EnvState st;
        st.agent.centre = {0.2, 5.0, 2.5};
        st.sources = {SourceSpec{0, {9.0, 9.0, 2.6}, 0}};
        GeomOutcome out = apply_action(st, ActionId::NegX, cfg);
        CHECK(st.agent.centre.x == doctest::Approx(0.2));
        CHECK(out.reward == doctest::Approx(-1.0));
        CHECK(out.event == StepEvent::OutOfBounds);
    }
    SUBCASE("ordinary move far from the source") {
        EnvState st;
        st.agent.centre = {5.0, 5.0, 2.5};
        st.sources = {SourceSpec{0, {9.0, 9.0, 2.6}, 0}};
        GeomOutcome out = apply_action(st, ActionId::PosX, cfg);
        CHECK(out.reward == doctest::Approx(-0.1));
        CHECK(out.event == StepEvent::None);
    }
    SUBCASE("stepping a terminal state is a usage error") {
        EnvState st;
        st.agent.centre = {5.0, 5.0, 2.5};
        st.sources = {SourceSpec{0, {9.0, 9.0, 2.6}, 0}};
        st.terminal = true;
        CHECK_THROWS_AS(apply_action(st, ActionId::PosX, cfg), std::logic_error);
    }
}

TEST_CASE("oracle_action_set examples") {
    EnvConfig cfg = default_cfg();
    EnvState st;
    st.sources = {SourceSpec{0, {3.0, 1.0, 2.6}, 0}};
    st.agent.centre = {1.0, 1.0, 2.5};
    auto set = oracle_action_set(st, cfg);
    CHECK(set == std::set<ActionId>{ActionId::PosX});

    st.sources[0].position = {3.0, 3.0, 2.6};
    set = oracle_action_set(st, cfg);
    CHECK(set == std::set<ActionId>{ActionId::PosX, ActionId::PosY});

    st.agent.centre = {3.0, 3.0, 2.5};  // directly below the source
    set = oracle_action_set(st, cfg);
    CHECK(set.empty());

    st.found = {0};
    CHECK_THROWS_AS(oracle_action_set(st, cfg), std::logic_error);
}

TEST_CASE("oracle_action_set agrees with exhaustive enumeration") {
    EnvConfig cfg = default_cfg();
    Rng rng(123);
    for (int trial = 0; trial < 10000; ++trial) {
        EnvState st;
        st.agent.centre = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0), cfg.agent_height};
        st.sources = {SourceSpec{
            0, {rng.uniform(0.1, 9.9), rng.uniform(0.1, 9.9), cfg.source_height}, 0}};
        auto set = oracle_action_set(st, cfg);
        double d0 = distance(st.agent.centre, st.sources[0].position);
        for (int a = 0; a < 4; ++a) {
            Vec3 cand = st.agent.centre + action_delta(ActionId(a), cfg.step_size);
            bool expect = cfg.room.contains(cand) &&
                          distance(cand, st.sources[0].position) < d0;
            CHECK(set.count(ActionId(a)) == (expect ? 1u : 0u));
        }
    }
}

TEST_CASE("reset: determinism and quadrant placement") {
    EnvConfig cfg = default_cfg();

    SUBCASE("same seed is bit-identical") {
        for (uint64_t s = 0; s < 20; ++s)
            CHECK(reset_state(cfg, EnvMode::Train, s) == reset_state(cfg, EnvMode::Train, s));
    }
    SUBCASE("eval mode places the source in the bottom-right quadrant") {
        for (uint64_t s = 0; s < 500; ++s) {
            EnvState st = reset_state(cfg, EnvMode::Eval, s);
            const Vec3& p = st.sources[0].position;
            CHECK(p.x >= 5.0);
            CHECK(p.x < 10.0);
            CHECK(p.y >= 0.0);
            CHECK(p.y < 5.0);
            CHECK(quadrant_of(st.agent.centre.x, st.agent.centre.y, cfg.room) != Quadrant::BR);
            CHECK(distance(st.agent.centre, p) > cfg.reach_radius);
        }
    }
    SUBCASE("train sources cover the three training quadrants evenly") {
        int counts[4] = {0, 0, 0, 0};
        const int n = 10000;
        for (uint64_t s = 0; s < n; ++s) {
            EnvState st = reset_state(cfg, EnvMode::Train, s);
            counts[int(quadrant_of(st.sources[0].position.x, st.sources[0].position.y,
                                   cfg.room))] += 1;
        }
        CHECK(counts[int(Quadrant::BR)] == 0);
        for (Quadrant q : {Quadrant::TL, Quadrant::TR, Quadrant::BL}) {
            double frac = double(counts[int(q)]) / n;
            CHECK(frac > 1.0 / 3.0 - 0.03);
            CHECK(frac < 1.0 / 3.0 + 0.03);
        }
    }
}

TEST_CASE("random walks: trichotomy, bounds, once-per-source, terminal rule") {
    EnvConfig cfg = default_cfg();
    cfg.horizon = 200;
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        EnvState st = reset_state(cfg, EnvMode::Train, uint64_t(trial));
        int plus_count = 0;
        while (!st.terminal) {
            size_t found_before = st.found.size();
            GeomOutcome out = apply_action(st, ActionId(rng.uniform_int(4)), cfg);
            bool grew = st.found.size() > found_before;
            bool is_plus = out.reward == cfg.r_plus;
            bool is_minus = out.reward == cfg.r_minus;
            bool is_oob = out.reward == cfg.r_oob;
            CHECK(int(is_plus) + int(is_minus) + int(is_oob) == 1);
            CHECK(is_plus == grew);
            CHECK((out.event == StepEvent::FoundNewSource) == is_plus);
            CHECK(cfg.room.contains(st.agent.centre));
            if (is_plus) ++plus_count;
            CHECK(st.terminal ==
                  ((int(st.found.size()) == cfg.n_sources) || (st.step_index == cfg.horizon)));
        }
        CHECK(plus_count <= cfg.n_sources);  // each source rewards at most once
    }
}
