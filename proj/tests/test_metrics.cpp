#include "oracles.hpp"
#include "pinned_corpus.hpp"
#include "sdst/metrics.hpp"

#include <gtest/gtest.h>

using namespace sdst;
using namespace sdst::testing_support;

TEST(Canonicalize, FoldsCaseAndWhitespace) {
    DialogueState s;
    s.add_domain("Restaurant");
    s.set("Restaurant-Food", " Italian ");
    auto c = canonicalize(s);
    EXPECT_EQ(c.slots.at("restaurant-food"), "italian");
    EXPECT_TRUE(c.domains.contains("restaurant"));
    EXPECT_TRUE(canonicalize({}).slots.empty());
    EXPECT_EQ(fold_whitespace_lower("  New \t York  "), "new york");
}

TEST(Canonicalize, AliasesAndIdempotence) {
    DialogueState s;
    s.add_domain("hotel");
    s.set("hotel-area", "Center");
    AliasTable aliases{{"center", "centre"}};
    EXPECT_EQ(canonicalize(s).slots.at("hotel-area"), "center");
    auto c = canonicalize(s, aliases);
    EXPECT_EQ(c.slots.at("hotel-area"), "centre");
    EXPECT_EQ(canonicalize(to_state(c), aliases), c);
}

TEST(Jga, PerfectAndOneWrong) {
    std::vector<DialogueState> g{st({{"a-x", "1"}}), st({{"a-x", "1"}, {"a-y", "2"}}), st({}), st({{"b-z", "q"}})};
    EXPECT_DOUBLE_EQ(joint_goal_accuracy(g, g), 1.0);
    auto p = g;
    p[1].slots[1].second = "3";
    EXPECT_DOUBLE_EQ(joint_goal_accuracy(p, g), 0.75);
    EXPECT_THROW(joint_goal_accuracy({}, g), std::invalid_argument);
}

TEST(Jga, DomainsAreNotScored) {
    auto g = st({{"a-x", "1"}});
    auto p = g;
    p.add_domain("b");
    EXPECT_DOUBLE_EQ(joint_goal_accuracy({p}, {g}), 1.0);
}

TEST(Ser, Definitions) {
    std::vector<DialogueState> g{st({{"a-x", "1"}, {"a-y", "2"}}), st({{"a-x", "1"}, {"a-y", "2"}, {"a-z", "3"}})};
    EXPECT_DOUBLE_EQ(slot_error_rate(g, g).value, 0.0);
    std::vector<DialogueState> empty(2);
    auto all_missing = slot_error_rate(empty, g);
    EXPECT_TRUE(all_missing.defined);
    EXPECT_DOUBLE_EQ(all_missing.value, 1.0);
}

TEST(Ser, UndefinedWithoutGoldSlots) {
    std::vector<DialogueState> g(2);
    EXPECT_DOUBLE_EQ(slot_error_rate(g, g).value, 0.0);
    EXPECT_TRUE(slot_error_rate(g, g).defined);
    std::vector<DialogueState> p{st({{"a-x", "1"}}), st({})};
    auto s = slot_error_rate(p, g);
    EXPECT_FALSE(s.defined);
    EXPECT_TRUE(std::isinf(s.value));
}

TEST(Evaluate, PinnedCorpus) {
    auto c = pinned();
    auto r = evaluate(c.preds, c.gold);
    // Values from an independent script over the same six turns.
    EXPECT_DOUBLE_EQ(r.jga, 0.5);
    EXPECT_DOUBLE_EQ(r.ser.value, 4.0 / 9.0);
    EXPECT_EQ(r.counts.gold_slots, 9);
    EXPECT_EQ(r.counts.correct, 7);
    EXPECT_EQ(r.counts.missing, 1);
    EXPECT_EQ(r.counts.spurious, 2);
    EXPECT_EQ(r.counts.wrong_value, 1);
    EXPECT_EQ(r.turns, 6);
    EXPECT_EQ(r.dialogues, 2);
    ASSERT_EQ(r.per_domain.size(), 3u);
    EXPECT_EQ(r.per_domain.at("hotel").turns, 3);
    EXPECT_DOUBLE_EQ(r.per_domain.at("hotel").jga, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.per_domain.at("hotel").ser.value, 2.0 / 5.0);
    EXPECT_DOUBLE_EQ(r.per_domain.at("taxi").jga, 0.0);
    EXPECT_DOUBLE_EQ(r.per_domain.at("taxi").ser.value, 1.0);
    EXPECT_DOUBLE_EQ(r.per_domain.at("restaurant").jga, 0.5);
    EXPECT_DOUBLE_EQ(r.per_domain.at("restaurant").ser.value, 1.0 / 3.0);
    EXPECT_EQ(r.counts.correct + r.counts.missing + r.counts.wrong_value, r.counts.gold_slots);
}

TEST(Evaluate, OrderOfPredictionsDoesNotMatter) {
    auto c = pinned();
    auto a = evaluate(c.preds, c.gold);
    std::reverse(c.preds.begin(), c.preds.end());
    auto b = evaluate(c.preds, c.gold);
    EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Evaluate, AlignmentErrors) {
    auto c = pinned();
    auto dup = c.preds;
    dup.push_back(dup.front());
    EXPECT_THROW(evaluate(dup, c.gold), std::invalid_argument);
    auto missing = c.preds;
    missing.pop_back();
    EXPECT_THROW(evaluate(missing, c.gold), std::invalid_argument);
    auto extra = c.preds;
    extra.push_back(pred("zzz", 0, {}));
    EXPECT_THROW(evaluate(extra, c.gold), std::invalid_argument);
    EXPECT_THROW(evaluate(c.preds, c.gold, nullptr, true), std::invalid_argument);
}

TEST(Evaluate, FuzzyUsesOntology) {
    auto c = pinned();
    c.preds[2].state.slots[0].second = "nort";
    Ontology o;
    o.add("hotel-area", {"north", "south"});
    auto raw = evaluate(c.preds, c.gold);
    auto fuzzy = evaluate(c.preds, c.gold, &o, true);
    EXPECT_EQ(raw.counts.wrong_value, 1);
    EXPECT_EQ(fuzzy.counts.wrong_value, 0);
    EXPECT_TRUE(fuzzy.to_json().at("fuzzy").get<bool>());
}

TEST(Evaluate, ReportJsonAndTable) {
    auto c = pinned();
    auto r = evaluate(c.preds, c.gold);
    r.config_hash = "00ff";
    auto j = r.to_json();
    EXPECT_EQ(j.at("config_hash"), "00ff");
    EXPECT_EQ(j.at("gold_slots"), 9);
    EXPECT_NE(r.table().find("hotel"), std::string::npos);
    for (auto& p : c.preds) p.state = st({{"x-y", "1"}});
    DialogueCorpus blank = c.gold;
    for (auto& d : blank.dialogues)
        for (auto& t : d.turns) t.state = {};
    auto u = evaluate(c.preds, blank);
    EXPECT_EQ(u.to_json().at("ser"), "undefined");
    EXPECT_NE(u.table().find("undefined"), std::string::npos);
}

TEST(Evaluate, MatchesNaiveOracleOnRandomCorpora) {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        MiniCorpus m = random_mini_corpus(rng);
        auto r = evaluate(m.preds, m.gold);
        auto o = oracle::score(m.oracle_preds, m.oracle_golds);
        EXPECT_EQ(r.jga, static_cast<double>(o.exact) / static_cast<double>(o.turns));
        EXPECT_EQ(r.counts.gold_slots, o.gold);
        EXPECT_EQ(r.counts.correct, o.correct);
        EXPECT_EQ(r.counts.missing, o.missing);
        EXPECT_EQ(r.counts.spurious, o.spurious);
        EXPECT_EQ(r.counts.wrong_value, o.wrong);
        if (o.gold > 0)
            EXPECT_EQ(r.ser.value, static_cast<double>(o.missing + o.spurious + o.wrong) / static_cast<double>(o.gold));
    }
}
