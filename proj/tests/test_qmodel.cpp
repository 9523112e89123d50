#include "jmp/model_io.hpp"
#include "jmp/qmodel.hpp"
#include "jmp/scenarios.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

using namespace jmp;

namespace {

QModel two_state(double a, double b) {
    return QModel({2, false}, {{0, 1, TimeProfile::constant(a)}, {1, 0, TimeProfile::constant(b)}});
}

QModel step_model() {
    return QModel({2, false}, {{0, 1, TimeProfile::piecewise_constant({1.0}, {1.0, 3.0})}});
}

std::string config_error_path(const nlohmann::json& j) {
    try {
        model_from_json(j);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

}  // namespace

TEST(StateSpace, CemeteryIsLastIndex) {
    StateSpace s{3, true};
    EXPECT_EQ(s.size(), 4u);
    EXPECT_EQ(s.cemetery(), 3u);
    EXPECT_TRUE(s.is_cemetery(3));
    EXPECT_FALSE(s.is_cemetery(2));
    EXPECT_FALSE((StateSpace{3, false}).is_cemetery(3));
}

TEST(QModel, RejectsEmptySpaceAndBadEdges) {
    EXPECT_THROW(QModel({0, false}, {}), DomainError);
    EXPECT_THROW(QModel({2, false}, {{0, 0, TimeProfile::constant(1)}}), DomainError);
    EXPECT_THROW(QModel({2, false}, {{0, 2, TimeProfile::constant(1)}}), DomainError);
    EXPECT_THROW(QModel({2, true}, {{2, 0, TimeProfile::constant(1)}}), DomainError);
}

TEST(QModel, TotalRate) {
    const auto m = two_state(1.0, 1.0);
    EXPECT_EQ(m.total_rate(0, 0.3), 1.0);
    EXPECT_EQ(m.total_rate(0, 7.0), 1.0);
    const auto s = step_model();
    EXPECT_EQ(s.total_rate(0, 0.5), 1.0);
    EXPECT_EQ(s.total_rate(0, 1.5), 3.0);
    EXPECT_EQ(s.total_rate(0, 1.0), 3.0);
    EXPECT_EQ(s.total_rate(0, 1.0, Side::left), 1.0);
    EXPECT_THROW(s.total_rate(2, 1.0), DomainError);
}

TEST(QModel, CemeteryHasZeroRate) {
    const QModel m({1, false}, {}, {{0, TimeProfile::constant(2.0)}});
    const auto c = make_conservative(m);
    EXPECT_EQ(c.total_rate(c.space().cemetery(), 0.4), 0.0);
    EXPECT_EQ(c.total_rate(c.space().cemetery(), 40.0), 0.0);
}

TEST(QModel, CumulativeRate) {
    EXPECT_DOUBLE_EQ(two_state(1.0, 1.0).cumulative_rate(0, 0.5, 1.5), 1.0);
    EXPECT_DOUBLE_EQ(step_model().cumulative_rate(0, 0.5, 1.5), 2.0);
    EXPECT_EQ(step_model().cumulative_rate(0, 0.8, 0.8), 0.0);
    EXPECT_THROW(step_model().cumulative_rate(0, 1.5, 0.5), DomainError);
}

TEST(QModel, DuplicateEdgesAggregate) {
    const QModel m({2, false}, {{0, 1, TimeProfile::constant(1.0)}, {0, 1, TimeProfile::constant(0.5)}});
    ASSERT_EQ(m.edges(0).size(), 1u);
    EXPECT_DOUBLE_EQ(m.total_rate(0, 0.1), 1.5);
}

TEST(QModel, JumpDistribution) {
    const QModel m({3, false}, {{0, 1, TimeProfile::constant(2.0)}, {0, 2, TimeProfile::constant(3.0)}});
    const auto d = m.jump_distribution(0, 0.5);
    ASSERT_EQ(d.targets, (std::vector<State>{1, 2}));
    EXPECT_DOUBLE_EQ(d.probs[0], 0.4);
    EXPECT_DOUBLE_EQ(d.probs[1], 0.6);

    const auto single = two_state(1.0, 1.0).jump_distribution(0, 0.5);
    ASSERT_EQ(single.targets, (std::vector<State>{1}));
    EXPECT_EQ(single.probs[0], 1.0);

    EXPECT_THROW(m.jump_distribution(1, 0.5), AbsorbingStateError);
}

TEST(QModel, JumpDistributionAtBreakpointUsesRightValues) {
    // 0->1 steps 1 -> 3 at t=1; 0->2 is 2 - t, linear on [0, 2]
    const QModel m({3, false}, {{0, 1, TimeProfile::piecewise_constant({1.0}, {1.0, 3.0})},
                                {0, 2, TimeProfile::piecewise_linear({0.0, 2.0}, {2.0, 0.0})}});
    const auto d = m.jump_distribution(0, 1.0);
    EXPECT_DOUBLE_EQ(d.probs[0], 3.0 / 4.0);
    EXPECT_DOUBLE_EQ(d.probs[1], 1.0 / 4.0);
}

TEST(QModel, JumpDistributionReportsKillMass) {
    const QModel m({2, false}, {{0, 1, TimeProfile::constant(1.0)}}, {{0, TimeProfile::constant(3.0)}});
    const auto d = m.jump_distribution(0, 0.2);
    ASSERT_EQ(d.targets, (std::vector<State>{1, 2}));
    EXPECT_DOUBLE_EQ(d.probs[1], 0.75);
}

TEST(QModel, QBound) {
    const auto m = two_state(1.0, 1.0);
    const std::vector<State> all{0, 1};
    EXPECT_EQ(m.q_bound(all), 1.0);
    const std::vector<State> one{0};
    EXPECT_EQ(step_model().q_bound(one), step_model().stable_bound(0));
    const auto birth = scenario_models::explosive_birth(20);
    std::vector<State> first10(10);
    std::iota(first10.begin(), first10.end(), 0);
    EXPECT_EQ(model_from_json(birth).q_bound(first10), 100.0);
    EXPECT_THROW(m.q_bound(std::vector<State>{}), DomainError);
}

TEST(MakeConservative, IdempotentOnConservative) {
    const auto m = two_state(1.0, 2.0);
    const auto c = make_conservative(m);
    EXPECT_EQ(c.size(), m.size());
    EXPECT_FALSE(c.space().has_cemetery);
    EXPECT_EQ(model_to_json(c), model_to_json(m));
    EXPECT_EQ(model_to_json(make_conservative(c)), model_to_json(c));
}

TEST(MakeConservative, KillBecomesCemeteryInflow) {
    const QModel m({1, false}, {}, {{0, TimeProfile::constant(2.0)}});
    EXPECT_FALSE(m.conservative());
    const auto c = make_conservative(m);
    EXPECT_TRUE(c.conservative());
    EXPECT_EQ(c.size(), 2u);
    EXPECT_EQ(c.cemetery_role(), CemeteryRole::kill);
    ASSERT_EQ(c.edges(0).size(), 1u);
    EXPECT_EQ(c.edges(0)[0].to, 1u);
    EXPECT_EQ(c.edges(0)[0].rate.value(0.3), 2.0);
}

TEST(MakeConservative, CopiesKillProfileExactly) {
    const auto prof = TimeProfile::piecewise_constant({1.0}, {1.0, 3.0});
    const QModel m({1, false}, {}, {{0, prof}});
    const auto c = make_conservative(m);
    ASSERT_EQ(c.transitions().size(), 1u);
    EXPECT_EQ(c.transitions()[0].profile, prof);
}

// After completion the outflow to named states equals the total rate.
TEST(MakeConservative, SignedMeasureIdentityProperty) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Transition> tr;
        std::vector<KillRate> kills;
        for (State x = 0; x < 3; ++x) {
            tr.push_back({x, (x + 1) % 3, TimeProfile::piecewise_constant({0.5 + unit(rng)}, {unit(rng), unit(rng)})});
            kills.push_back({x, TimeProfile::piecewise_linear({0.2, 1.4}, {unit(rng), unit(rng)})});
        }
        const auto c = make_conservative(QModel({3, false}, tr, kills));
        for (State x = 0; x < c.size(); ++x)
            for (double t : {0.1, 0.7, 1.2, 2.5}) {
                double out = 0.0;
                for (const auto& e : c.edges(x)) out += e.rate.value(t);
                EXPECT_NEAR(out - c.total_rate(x, t), 0.0, 1e-14);
            }
    }
}

// total_rate never exceeds the stable bound; jump distributions sum to one.
TEST(QModel, BoundsAndNormalizationProperty) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Transition> tr;
        for (State x = 0; x < 4; ++x)
            for (State y = 0; y < 4; ++y)
                if (x != y && unit(rng) < 0.6)
                    tr.push_back({x, y, TimeProfile::piecewise_linear({0.3, 1.1, 2.0}, {3 * unit(rng), 3 * unit(rng),
                                                                                       3 * unit(rng)})});
        const QModel m({4, false}, tr, {{0, TimeProfile::constant(unit(rng))}});
        for (State x = 0; x < 4; ++x)
            for (int k = 0; k < 20; ++k) {
                const double t = 3.0 * unit(rng);
                const double q = m.total_rate(x, t);
                EXPECT_GE(q, 0.0);
                EXPECT_LE(q, m.stable_bound(x));
                if (q > 0) {
                    const auto d = m.jump_distribution(x, t);
                    EXPECT_NEAR(std::accumulate(d.probs.begin(), d.probs.end(), 0.0), 1.0, 1e-12);
                }
            }
    }
}

TEST(QModel, CumulativeRateAdditiveAtBreakpoints) {
    const auto m = model_from_json(bundled_scenarios()[2].model);
    for (State x = 0; x < 2; ++x)
        for (double s : {0.5, 0.77, 1.0, 1.5}) EXPECT_NEAR(m.cumulative_rate(x, 0.25, s) + m.cumulative_rate(x, s, 1.75),
                                                            m.cumulative_rate(x, 0.25, 1.75), 1e-15);
}

TEST(QModel, Reachability) {
    const auto m = model_from_json(scenario_models::explosive_birth(5));
    const auto r = reachable_from(m, 3);
    EXPECT_EQ(r, (std::vector<bool>{false, false, false, true, true, true}));
}

// ---------------------------------------------------------------------------

TEST(ModelIo, RoundTrip) {
    for (const auto& sc : bundled_scenarios()) {
        const auto m = sc.build_model();
        const auto again = model_from_json(model_to_json(m));
        EXPECT_EQ(model_to_json(again), model_to_json(m)) << sc.id;
    }
}

TEST(ModelIo, NegativeRateNamesTheField) {
    nlohmann::json j = bundled_scenarios()[1].model;
    j["transitions"][1]["profile"]["values"][0] = -1.0;
    EXPECT_EQ(config_error_path(j), "/transitions/1/profile/values/0");
    try {
        model_from_json(j);
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("nonnegative"), std::string::npos);
    }
}

TEST(ModelIo, ErrorsCitePaths) {
    EXPECT_EQ(config_error_path({{"conservative", true}}), "/n_states");
    EXPECT_EQ(config_error_path({{"n_states", 0}}), "/n_states");
    EXPECT_EQ(config_error_path({{"n_states", 2}, {"transitions", {{{"from", 0}, {"to", 5}}}}}), "/transitions/0/to");
    EXPECT_EQ(config_error_path({{"n_states", 2},
                                 {"transitions", {{{"from", 0}, {"to", 1}, {"profile", {{"kind", "cubic"}}}}}}}),
              "/transitions/0/profile/kind");
    EXPECT_EQ(config_error_path({{"n_states", 1},
                                 {"kill", {{{"state", 0}, {"profile", {{"kind", "constant"}, {"values", {1.0}}}}}}}}),
              "/kill/0");
    EXPECT_EQ(config_error_path({{"n_states", 2}, {"cemetery", "heaven"}}), "/cemetery");
}

TEST(ModelIo, LoadFromFile) {
    const std::string path = ::testing::TempDir() + "jmp_model.json";
    {
        std::ofstream out(path);
        out << bundled_scenarios()[1].model.dump();
    }
    EXPECT_EQ(load_model(path).size(), 2u);
    EXPECT_THROW(load_model(path + ".missing"), ConfigError);
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    EXPECT_THROW(load_model(path), ConfigError);
    std::remove(path.c_str());
}
