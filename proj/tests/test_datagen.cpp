#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "monli/datagen.hpp"
#include "monli/error.hpp"
#include "monli/oracle.hpp"

using namespace monli;

namespace {

Lexicon lexicon_of(const std::string& text) {
    std::istringstream in(text);
    return parse_lexicon(in);
}

const Template kHolding = make_template("t1", "the three children are holding {N}",
                                        "the three children are not holding {N}");

const NLIExample* find(const std::vector<NLIExample>& v, const std::string& wp, const std::string& wh, bool neg) {
    for (const auto& e : v) {
        if (e.w_p == wp && e.w_h == wh && e.negated == neg) return &e;
    }
    return nullptr;
}

// `count` examples whose hyponym is `hypo`, as forward/reverse pairs.
void add_hyponym(std::vector<NLIExample>& out, const std::string& hypo, std::size_t count) {
    for (std::size_t k = 0; k < count / 2; ++k) {
        const std::string other = hypo + "_h" + std::to_string(k);
        NLIExample f;
        f.premise = {"a", hypo};
        f.hypothesis = {"a", other};
        f.w_p = hypo;
        f.w_h = other;
        f.negated = true;
        f.lexrel = LexicalRelation::Forward;
        f.label = Label::Neutral;
        f.pair_id = hypo + "/" + std::to_string(k);
        f.template_id = "t";
        NLIExample r = f;
        std::swap(r.premise, r.hypothesis);
        std::swap(r.w_p, r.w_h);
        r.lexrel = LexicalRelation::Reverse;
        r.label = Label::Entailment;
        out.push_back(f);
        out.push_back(r);
    }
}

std::map<std::string, std::size_t> hyponym_counts(const std::vector<NLIExample>& v) {
    std::map<std::string, std::size_t> m;
    for (const auto& e : v) ++m[hyponym_of(e)];
    return m;
}

std::vector<NLIExample> default_corpus() {
    const auto lex = load_lexicon(std::string(MONLI_DATA_DIR) + "/lexicon.txt");
    const auto tmpl = load_templates(std::string(MONLI_DATA_DIR) + "/templates.txt");
    return generate(tmpl, lex, Polarity::Both);
}

}  // namespace

TEST_CASE("templates are validated") {
    CHECK(kHolding.positive_form[kHolding.positive_slot] == "{n}");
    CHECK_THROWS_AS(make_template("x", "no slot here", "no slot not here"), DataError);
    CHECK_THROWS_AS(make_template("x", "{N} and {N}", "not {N} and {N}"), DataError);
    CHECK_THROWS_AS(make_template("x", "not holding {N}", "not holding {N}"), DataError);
    CHECK_THROWS_AS(make_template("x", "holding {N}", "holding {N}"), DataError);
    CHECK_THROWS_AS(make_template("x", "holding {N}", "holding {N} not"), DataError);
    CHECK_THROWS_AS(make_template("x", "holding {N}", "not not holding {N}"), DataError);

    std::istringstream dup("a | x {N} | x not {N}\na | y {N} | y not {N}\n");
    CHECK_THROWS_AS(parse_templates(dup), DataError);
}

TEST_CASE("negated template: plants/flowers pair") {
    const auto lex = lexicon_of("flowers plants\n");
    const std::vector<Template> t{kHolding};
    const auto v = generate(t, lex, Polarity::Negated);
    REQUIRE(v.size() == 2);
    const auto* a = find(v, "plants", "flowers", true);
    const auto* b = find(v, "flowers", "plants", true);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(join_tokens(a->premise) == "the three children are not holding plants");
    CHECK(join_tokens(a->hypothesis) == "the three children are not holding flowers");
    CHECK(a->label == Label::Entailment);
    CHECK(a->lexrel == LexicalRelation::Reverse);
    CHECK(b->label == Label::Neutral);
    CHECK(a->pair_id == b->pair_id);
}

TEST_CASE("positive template: labels swap") {
    const auto lex = lexicon_of("flowers plants\n");
    const std::vector<Template> t{kHolding};
    const auto v = generate(t, lex, Polarity::Positive);
    REQUIRE(v.size() == 2);
    CHECK(find(v, "flowers", "plants", false)->label == Label::Entailment);
    CHECK(find(v, "plants", "flowers", false)->label == Label::Neutral);
}

TEST_CASE("example count is 4 * templates * closure pairs") {
    const auto lex = lexicon_of("roses flowers\nflowers plants\ntrees plants\n");
    const std::vector<Template> t{kHolding, make_template("t2", "a man sees {N} here", "a man does not see {N} here")};
    // brute force: every ordered related pair appears once per template and polarity
    std::size_t related = 0;
    for (const auto& a : lex.vocabulary()) {
        for (const auto& b : lex.vocabulary()) related += lex_rel(lex, a, b) != LexicalRelation::None;
    }
    const std::size_t E = related / 2;
    CHECK(E == lex.closure_size());
    CHECK(E == 4);
    const auto v = generate(t, lex, Polarity::Both);
    CHECK(v.size() == 4 * t.size() * E);
    const auto ent = std::count_if(v.begin(), v.end(), [](const auto& e) { return e.label == Label::Entailment; });
    CHECK(static_cast<std::size_t>(ent) == 2 * t.size() * E);
    CHECK(generate(t, lex, Polarity::Positive).size() == 2 * t.size() * E);
}

TEST_CASE("generated corpus invariants") {
    const auto v = default_corpus();
    REQUIRE(v.size() >= 2000);
    std::size_t ent = 0;
    std::map<std::string, std::vector<const NLIExample*>> pairs;
    for (const auto& e : v) {
        ent += e.label == Label::Entailment;
        CHECK(relation_to_label(infer(e)) == e.label);
        CHECK(e.lexrel != LexicalRelation::None);
        CHECK(e.negated == contains_not_tokens(e.premise, e.hypothesis));
        REQUIRE(e.premise.size() == e.hypothesis.size());
        std::size_t diff = 0;
        for (std::size_t k = 0; k < e.premise.size(); ++k) {
            if (e.premise[k] != e.hypothesis[k]) {
                ++diff;
                CHECK(e.premise[k] == e.w_p);
                CHECK(e.hypothesis[k] == e.w_h);
            }
        }
        CHECK(diff == 1);
        pairs[e.pair_id].push_back(&e);
    }
    CHECK(2 * ent == v.size());
    for (const auto& [id, members] : pairs) {
        REQUIRE(members.size() == 2);
        const auto& a = *members[0];
        const auto& b = *members[1];
        CHECK(a.w_p == b.w_h);
        CHECK(a.w_h == b.w_p);
        CHECK(a.lexrel == reverse(b.lexrel));
        CHECK(a.label == flip(b.label));
    }
}

TEST_CASE("polarity partitions by negation") {
    const auto lex = load_lexicon(std::string(MONLI_DATA_DIR) + "/lexicon.txt");
    const auto tmpl = load_templates(std::string(MONLI_DATA_DIR) + "/templates.txt");
    for (const auto& e : generate(tmpl, lex, Polarity::Negated)) CHECK(contains_not(e));
    for (const auto& e : generate(tmpl, lex, Polarity::Positive)) CHECK_FALSE(contains_not(e));
}

TEST_CASE("category tags keep words out of the wrong slots") {
    const auto lex = lexicon_of("pugs dogs @animal\nroses flowers @plant\n");
    const std::vector<Template> t{make_template("a", "she pets {N:animal}", "she does not pet {N:animal}"),
                                  make_template("p", "she waters {N:plant}", "she does not water {N:plant}")};
    const auto v = generate(t, lex, Polarity::Both);
    CHECK(v.size() == 8);
    for (const auto& e : v) {
        if (e.template_id == "a") CHECK(hyponym_of(e) == "pugs");
        if (e.template_id == "p") CHECK(hyponym_of(e) == "roses");
    }
    const std::vector<Template> only_animals{t[0]};
    CHECK_THROWS_AS(generate(only_animals, lex, Polarity::Both), DataError);
}

TEST_CASE("hyponym split manifest lists per-hyponym counts") {
    std::vector<NLIExample> v;
    add_hyponym(v, "dog", 88);
    add_hyponym(v, "building", 64);
    add_hyponym(v, "ball", 28);
    add_hyponym(v, "tree", 120);
    add_hyponym(v, "car", 100);
    add_hyponym(v, "instrument", 96);
    const auto s = split_by_hyponyms(v, {"dog", "building", "ball"});
    std::vector<ManifestRow> test_rows;
    for (const auto& r : s.manifest) {
        if (r.side == "test") test_rows.push_back(r);
    }
    REQUIRE(test_rows.size() == 3);
    CHECK(test_rows[0] == ManifestRow{"test", "dog", 88});
    CHECK(test_rows[1] == ManifestRow{"test", "building", 64});
    CHECK(test_rows[2] == ManifestRow{"test", "ball", 28});
    CHECK(s.test.size() == 180);

    std::ostringstream csv;
    write_manifest_csv(csv, s.manifest);
    CHECK(csv.str().rfind("side,hyponym,count\n", 0) == 0);
    CHECK(csv.str().find("test,dog,88\n") != std::string::npos);
}

TEST_CASE("systematic split: disjoint hyponyms across seeds and fractions") {
    std::vector<NLIExample> v;
    const char* names[] = {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l"};
    std::size_t k = 0;
    for (const char* n : names) add_hyponym(v, n, 2 * (10 + 7 * (k++ % 5)));
    v.resize(500 < v.size() ? 500 : v.size());
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (double f : {0.05, 0.1, 0.2, 0.3, 0.5, 0.7}) {
            const auto s = split_systematic(v, f, seed);
            const auto tr = hyponym_counts(s.train);
            const auto te = hyponym_counts(s.test);
            for (const auto& [h, c] : te) CHECK(tr.count(h) == 0);
            CHECK(s.train.size() + s.test.size() == v.size());
            CHECK(static_cast<double>(s.test.size()) >= f * static_cast<double>(v.size()));
            std::size_t manifest_total = 0;
            for (const auto& r : s.manifest) manifest_total += r.count;
            CHECK(manifest_total == v.size());
            std::set<std::string> ids_train, ids_test;
            for (const auto& e : s.train) ids_train.insert(e.pair_id);
            for (const auto& e : s.test) CHECK(ids_train.count(e.pair_id) == 0);
        }
    }
}

TEST_CASE("systematic split: tiny fraction takes exactly one hyponym") {
    std::vector<NLIExample> v;
    add_hyponym(v, "dog", 40);
    add_hyponym(v, "cat", 40);
    add_hyponym(v, "cow", 40);
    const auto s = split_systematic(v, 0.01, 3);
    CHECK(hyponym_counts(s.test).size() == 1);
    CHECK(s.test.size() == 40);
}

TEST_CASE("systematic split: infeasible and invalid fractions") {
    std::vector<NLIExample> v;
    add_hyponym(v, "dog", 90);
    add_hyponym(v, "cat", 10);
    CHECK_THROWS_AS(split_systematic(v, 0.2, 0), DataError);
    CHECK_THROWS_AS(split_systematic(v, 0.0, 0), ConfigError);
    CHECK_THROWS_AS(split_systematic(v, 1.0, 0), ConfigError);
}

TEST_CASE("random split") {
    std::vector<NLIExample> v;
    for (int k = 0; k < 25; ++k) add_hyponym(v, "w" + std::to_string(k), 4);
    REQUIRE(v.size() == 100);
    const auto a = split_random(v, 0.5, 11);
    const auto b = split_random(v, 0.5, 11);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    CHECK(a.test.size() >= 48);
    CHECK(a.test.size() <= 52);

    std::multiset<std::string> all, parts;
    for (const auto& e : v) all.insert(e.pair_id + e.w_p);
    for (const auto& e : a.train) parts.insert(e.pair_id + e.w_p);
    for (const auto& e : a.test) parts.insert(e.pair_id + e.w_p);
    CHECK(all == parts);
    std::set<std::string> train_ids;
    for (const auto& e : a.train) train_ids.insert(e.pair_id);
    for (const auto& e : a.test) CHECK(train_ids.count(e.pair_id) == 0);
}

TEST_CASE("ingest the worked negated pair") {
    const auto lex = lexicon_of("flowers plants\n");
    std::istringstream in(
        R"({"sentence1": "The three children are not holding plants", "sentence2": "The three children are not holding flowers", "gold_label": "entailment", "w_p": "plants", "w_h": "flowers", "negated": true})"
        "\n");
    const auto r = ingest_external(in, lex);
    REQUIRE(r.examples.size() == 1);
    const auto& e = r.examples[0];
    CHECK(e.negated);
    CHECK(e.lexrel == LexicalRelation::Reverse);
    CHECK(e.label == Label::Entailment);
    CHECK(r.label_conflicts.empty());
}

TEST_CASE("ingest: negation fallback, conflicts and errors") {
    const auto lex = lexicon_of("flowers plants\n");
    std::istringstream in(
        R"({"sentence1": "a man is not holding plants", "sentence2": "a man is not holding flowers", "gold_label": "neutral", "w_p": "plants", "w_h": "flowers"})"
        "\n");
    const auto r = ingest_external(in, lex);
    REQUIRE(r.examples.size() == 1);
    CHECK(r.examples[0].negated);
    CHECK(r.label_conflicts == std::vector<std::size_t>{0});

    std::istringstream unknown(
        R"({"sentence1": "a cat", "sentence2": "a dog", "gold_label": "neutral", "w_p": "cat", "w_h": "dog"})"
        "\n");
    CHECK_THROWS_AS(ingest_external(unknown, lex), DataError);

    std::istringstream bad("{not json\n");
    CHECK_THROWS_AS(ingest_external(bad, lex), ParseError);
}

TEST_CASE("export then ingest round-trips") {
    const auto lex = load_lexicon(std::string(MONLI_DATA_DIR) + "/lexicon.txt");
    const auto tmpl = load_templates(std::string(MONLI_DATA_DIR) + "/templates.txt");
    const std::vector<Template> two(tmpl.begin(), tmpl.begin() + 2);
    const auto v = generate(two, lex, Polarity::Both);
    std::stringstream buf;
    write_jsonl(buf, v);
    const auto r = ingest_external(buf, lex);
    CHECK(r.examples == v);
    CHECK(r.label_conflicts.empty());
}
