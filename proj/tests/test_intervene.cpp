#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "monli/datagen.hpp"
#include "monli/intervene.hpp"
#include "monli/oracle.hpp"
#include "monli/train.hpp"

using namespace monli;
namespace fs = std::filesystem;

namespace {

std::vector<NLIExample> corpus(std::size_t templates = 1) {
    const auto lex = load_lexicon(std::string(MONLI_DATA_DIR) + "/lexicon.txt");
    const auto tmpl = load_templates(std::string(MONLI_DATA_DIR) + "/templates.txt");
    const std::vector<Template> some(tmpl.begin(), tmpl.begin() + static_cast<std::ptrdiff_t>(templates));
    return generate(some, lex, Polarity::Both);
}

Label oracle_label(const NLIExample& e) { return relation_to_label(infer(e)); }
Label interv_label(const NLIExample& i, const NLIExample& j) { return relation_to_label(interv_oracle(i, j)); }

// Stub networks. Each answers correctly when unpatched.
class StubSource : public InterchangeSource {
public:
    enum class Kind { Perfect, IgnoresPatch, Random };

    StubSource(std::span<const NLIExample> ex, Kind kind, int rows = 2) : ex_(ex), kind_(kind), rows_(rows) {}
    // Kind applies only at `loc`; elsewhere the patch is ignored.
    void only_at(Location loc) { only_ = loc, restricted_ = true; }

    int rows() const override { return rows_; }
    std::size_t size() const override { return ex_.size(); }
    Label unpatched(std::size_t i) const override { return oracle_label(ex_[i]); }
    Label patched(std::size_t i, std::size_t j, Location loc) const override {
        const auto kind = restricted_ && !(loc == only_) ? Kind::IgnoresPatch : kind_;
        switch (kind) {
            case Kind::Perfect: return interv_label(ex_[i], ex_[j]);
            case Kind::IgnoresPatch: return unpatched(i);
            case Kind::Random:
                // Identity patches are exact in a real network; everything else is a coin flip.
                if (i == j) return unpatched(i);
                return ((i * 2654435761u) ^ (j * 40503u) ^ 0x5bd1u) % 7 < 3 ? Label::Entailment : Label::Neutral;
        }
        return unpatched(i);
    }

private:
    std::span<const NLIExample> ex_;
    Kind kind_;
    int rows_;
    Location only_;
    bool restricted_ = false;
};

std::vector<std::size_t> iota_nodes(std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = k;
    return v;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Model small_model(std::span<const NLIExample> data, int epochs) {
    ModelConfig c;
    c.rows = 2;
    c.width = 8;
    c.heads = 2;
    c.vocab = Vocab::build(data);
    c.seed = 1;
    Hyperparams hp;
    hp.epochs = epochs;
    hp.learning_rate = 3e-3;
    return train(c, data, hp).first;
}

fs::path temp_dir(const char* name) {
    const auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("record and header round trips") {
    for (int row = 1; row <= 4; ++row) {
        for (Role role : {Role::Cls, Role::Wp, Role::Wh}) {
            for (int bits = 0; bits < 8; ++bits) {
                const auto r = make_result(123456u, 7u, {row, role}, static_cast<Label>(bits & 1),
                                           static_cast<Label>((bits >> 1) & 1), static_cast<Label>((bits >> 2) & 1));
                unsigned char buf[kLogRecordBytes];
                encode_record(r, buf);
                CHECK(decode_record(buf) == r);
            }
        }
    }
    const ResultLogHeader h{300, {3, Role::Wp}, 0xdeadbeefcafef00dull};
    unsigned char hb[kLogHeaderBytes];
    encode_log_header(h, hb);
    CHECK(std::string(reinterpret_cast<char*>(hb), 8) == "MNLIXLOG");
    const auto back = decode_log_header(hb);
    CHECK(back.count == 300);
    CHECK(back.location == h.location);
    CHECK(back.fingerprint == h.fingerprint);
    hb[0] = 'X';
    CHECK_THROWS_AS(decode_log_header(hb), DataError);

    unsigned char rb[kLogRecordBytes];
    encode_record(make_result(0, 0, {1, Role::Cls}, Label::Neutral, Label::Neutral, Label::Neutral), rb);
    rb[9] = 9;  // role byte
    CHECK_THROWS_AS(decode_record(rb), DataError);
}

TEST_CASE("result flags") {
    auto r = make_result(1, 2, {1, Role::Cls}, Label::Neutral, Label::Entailment, Label::Neutral);
    CHECK(r.match);
    CHECK(r.causal);
    r = make_result(1, 2, {1, Role::Cls}, Label::Entailment, Label::Entailment, Label::Neutral);
    CHECK_FALSE(r.match);
    CHECK_FALSE(r.causal);
}

TEST_CASE("interchanges on a trained model") {
    const auto data = corpus();
    const auto m = small_model(data, 30);
    REQUIRE(evaluate(m, data) > 0.9);

    SUBCASE("self interchange is the identity") {
        for (std::size_t k = 0; k < data.size(); k += 9) {
            for (auto loc : all_locations(2)) {
                const auto r = run_interchange(m, data[k], data[k], loc);
                CHECK(r.patched == r.unpatched);
                CHECK_FALSE(r.causal);
                CHECK(r.match == (r.unpatched == data[k].label));
            }
        }
    }
    SUBCASE("negated recipient, donor with the other relation") {
        // not holding plants / not holding flowers  <-  holding flowers / holding plants
        const NLIExample* i = nullptr;
        const NLIExample* j = nullptr;
        for (const auto& e : data) {
            if (e.negated && e.lexrel == LexicalRelation::Reverse && !i) i = &e;
            if (!e.negated && e.lexrel == LexicalRelation::Forward && !j) j = &e;
        }
        REQUIRE(i);
        REQUIRE(j);
        CHECK(interv_oracle(*i, *j) == LexicalRelation::Reverse);
        const auto r = run_interchange(m, *i, *j, {2, Role::Cls}, 4, 9);
        CHECK(r.i == 4);
        CHECK(r.j == 9);
        CHECK(r.oracle == Label::Neutral);
        CHECK(r.unpatched == forward(m, *i).first);
        // the top [CLS] vector fixes the decision, so the donor's label comes through
        CHECK(r.patched == forward(m, *j).first);
    }
    SUBCASE("equal-relation donor keeps the recipient's oracle label") {
        for (std::size_t a = 0; a < data.size(); a += 13) {
            for (std::size_t b = 1; b < data.size(); b += 17) {
                if (data[a].lexrel != data[b].lexrel) continue;
                CHECK(run_interchange(m, data[a], data[b], {1, Role::Wp}).oracle == data[a].label);
            }
        }
    }
    SUBCASE("ModelSource agrees with fresh interchanges") {
        const ModelSource src(m, data);
        for (std::size_t a = 0; a < data.size(); a += 11) {
            for (std::size_t b = 0; b < data.size(); b += 7) {
                const auto loc = all_locations(2)[(a + b) % 6];
                CHECK(src.patched(a, b, loc) == run_interchange(m, data[a], data[b], loc).patched);
            }
        }
    }
}

TEST_CASE("streamed sweeps") {
    auto data = corpus();
    data.resize(40);
    const auto m = small_model(data, 3);
    const auto dir = temp_dir("monli_test_sweep");
    const Location loc{1, Role::Wh};

    const auto ref = dir / "ref.log";
    const auto s = sweep(m, data, loc, ref, {});
    CHECK(s.recipients == 40);
    CHECK(s.results == 1600);
    CHECK(fs::file_size(ref) == kLogHeaderBytes + 1600 * kLogRecordBytes);
    const auto log = read_result_log(ref);
    REQUIRE(log.results.size() == 1600);
    CHECK(log.header.count == 40);
    CHECK(log.header.location == loc);
    CHECK(log.header.fingerprint == sweep_fingerprint(m, data, loc, ""));
    // recipient-major, donor ascending, every pair once
    for (std::size_t k = 0; k < log.results.size(); ++k) {
        CHECK(log.results[k].i == k / 40);
        CHECK(log.results[k].j == k % 40);
    }
    CHECK(log.results[41 * 5] == run_interchange(m, data[5], data[5], loc, 5, 5));
    CHECK(log.results[40 * 3 + 17] == run_interchange(m, data[3], data[17], loc, 3, 17));
    const auto expected = slurp(ref);

    SUBCASE("resume after an interruption") {
        const auto p = dir / "cut.log";
        SweepOptions o;
        o.on_commit = [](std::size_t done) {
            if (done == 13) throw std::runtime_error("interrupted");
        };
        CHECK_THROWS_AS(sweep(m, data, loc, p, o), std::runtime_error);
        SweepIndex idx;
        REQUIRE(read_sweep_index(p, idx));
        CHECK(idx.recipients == 13);
        CHECK(read_result_log(p).results.size() == 13 * 40);
        const auto again = sweep(m, data, loc, p, {});
        CHECK(again.resumed_from == 13);
        CHECK(slurp(p) == expected);
    }
    SUBCASE("resume ignores a torn tail") {
        const auto p = dir / "torn.log";
        SweepOptions o;
        o.on_commit = [](std::size_t done) {
            if (done == 7) throw std::runtime_error("interrupted");
        };
        CHECK_THROWS_AS(sweep(m, data, loc, p, o), std::runtime_error);
        {
            std::ofstream junk(p, std::ios::binary | std::ios::app);
            junk << "half a record";
        }
        CHECK(read_result_log(p).results.size() == 7 * 40);
        sweep(m, data, loc, p, {});
        CHECK(slurp(p) == expected);
    }
    SUBCASE("a different sweep starts over") {
        const auto p = dir / "other.log";
        fs::copy_file(ref, p);
        fs::copy_file(index_path(ref), index_path(p));
        const auto again = sweep(m, data, {2, Role::Cls}, p, {});
        CHECK(again.resumed_from == 0);
        CHECK(read_result_log(p).header.location == Location{2, Role::Cls});
    }
    SUBCASE("parallel output is byte-identical") {
        for (unsigned w : {2u, 3u, 5u}) {
            const auto p = dir / ("par" + std::to_string(w) + ".log");
            SweepOptions o;
            o.workers = w;
            o.queue_capacity = 2;
            sweep(m, data, loc, p, o);
            CHECK(slurp(p) == expected);
        }
    }
    SUBCASE("filters") {
        const auto p = dir / "filtered.log";
        SweepOptions o;
        o.filter = [](std::size_t i, std::size_t j) { return (i + j) % 2 == 0; };
        o.filter_tag = "even";
        const auto f = sweep(m, data, loc, p, o);
        CHECK(f.results == 800);
        for (const auto& r : read_result_log(p).results) CHECK((r.i + r.j) % 2 == 0);
        CHECK(sweep_fingerprint(m, data, loc, "even") != sweep_fingerprint(m, data, loc, ""));
    }
    fs::remove_all(dir);
}

TEST_CASE("graphs from stub networks") {
    const auto data = corpus();
    const auto nodes = iota_nodes(60);
    const Location loc{1, Role::Cls};

    SUBCASE("perfect network gives a complete graph") {
        const StubSource src(data, StubSource::Kind::Perfect);
        const auto res = sweep_pairs(src, data, nodes, loc);
        CHECK(res.size() == 3600);
        const auto g = build_graph(res);
        CHECK(g.size() == 60);
        CHECK(g.edge_count() == 60 * 59 / 2);
        std::size_t differ = 0;
        for (std::size_t a = 0; a < 60; ++a) {
            for (std::size_t b = a + 1; b < 60; ++b) {
                const bool d = data[a].lexrel != data[b].lexrel;
                differ += d;
                CHECK(g.edge(a, b) == (d ? EdgeKind::Causal : EdgeKind::Plain));
            }
        }
        CHECK(g.causal_edge_count() == differ);
        const auto q = greedy_clique(g, 1);
        REQUIRE(q.size() == 1);
        CHECK(q[0].size() == 60);
        CHECK(verify_clique(q[0].members, res));
    }
    SUBCASE("patch-ignoring network links equal relations only") {
        const StubSource src(data, StubSource::Kind::IgnoresPatch);
        const auto res = sweep_pairs(src, data, nodes, loc);
        const auto g = build_graph(res);
        CHECK(g.causal_edge_count() == 0);
        for (std::size_t a = 0; a < 60; ++a) {
            for (std::size_t b = a + 1; b < 60; ++b) {
                CHECK((g.edge(a, b) != EdgeKind::None) == (data[a].lexrel == data[b].lexrel));
            }
        }
        // big single-relation cliques exist but carry no causal edge
        CHECK(greedy_clique(g, 1).empty());
        CHECK(clique_alpha_sweep(g, 1, 5).best.size() == 0);
    }
    SUBCASE("random network matches its analytic edge density") {
        const StubSource src(data, StubSource::Kind::Random);
        const auto all = iota_nodes(200);
        const auto g = build_graph(sweep_pairs(src, data, all, loc));
        // Each cross interchange matches with probability 3/7 or 4/7 depending
        // on the oracle label; an edge needs both directions.
        double expect = 0.0;
        std::size_t pairs = 0;
        for (std::size_t a = 0; a < 200; ++a) {
            for (std::size_t b = a + 1; b < 200; ++b) {
                auto p_match = [&](std::size_t i, std::size_t j) {
                    return interv_label(data[i], data[j]) == Label::Entailment ? 3.0 / 7.0 : 4.0 / 7.0;
                };
                expect += p_match(a, b) * p_match(b, a);
                ++pairs;
            }
        }
        const double density = static_cast<double>(g.edge_count()) / static_cast<double>(pairs);
        CHECK(density == doctest::Approx(expect / static_cast<double>(pairs)).epsilon(0.05));
    }
    SUBCASE("missing pairs are reported") {
        const StubSource src(data, StubSource::Kind::Perfect);
        auto res = sweep_pairs(src, data, nodes, loc);
        res.erase(res.begin() + 61);  // (1, 1)
        res.erase(res.begin() + 3 * 60 + 7 - 1);  // (3, 7) after the shift
        try {
            build_graph(res);
            FAIL("expected IncompleteResultsError");
        } catch (const IncompleteResultsError& e) {
            const std::set<std::pair<std::uint32_t, std::uint32_t>> got(e.missing().begin(), e.missing().end());
            CHECK(got.count({1, 1}) == 1);
            CHECK(got.count({3, 7}) == 1);
        }
    }
    SUBCASE("result order does not matter") {
        const StubSource src(data, StubSource::Kind::Random);
        auto res = sweep_pairs(src, data, nodes, loc);
        const auto g1 = build_graph(res);
        std::mt19937_64 rng(4);
        std::shuffle(res.begin(), res.end(), rng);
        const auto g2 = build_graph(res);
        REQUIRE(g1.nodes() == g2.nodes());
        for (std::size_t a = 0; a < 60; ++a) {
            for (std::size_t b = 0; b < 60; ++b) CHECK(g1.edge(a, b) == g2.edge(a, b));
        }
    }
}

TEST_CASE("greedy clique extraction") {
    std::vector<std::uint32_t> ids(100);
    for (std::uint32_t k = 0; k < 100; ++k) ids[k] = 1000 + k;

    SUBCASE("planted clique in a sparse graph") {
        InterventionGraph g(ids, {1, Role::Cls});
        std::mt19937_64 rng(11);
        std::bernoulli_distribution coin(0.1);
        for (std::size_t a = 0; a < 100; ++a) {
            for (std::size_t b = a + 1; b < 100; ++b) {
                if (coin(rng)) g.set_edge(a, b, EdgeKind::Plain);
            }
        }
        const std::vector<std::size_t> planted{3, 14, 15, 26, 35, 58, 79, 83, 90, 97};
        for (auto a : planted) {
            for (auto b : planted) {
                if (a < b) g.set_edge(a, b, a == 3 && b == 14 ? EdgeKind::Plain : EdgeKind::Causal);
            }
        }
        // A few causal edges scattered outside the clique.
        g.set_edge(1, 2, EdgeKind::Causal);
        g.set_edge(40, 41, EdgeKind::Causal);
        CHECK(is_clique(g, planted));

        const auto q = greedy_clique(g, 3);
        REQUIRE_FALSE(q.empty());
        std::vector<std::uint32_t> want;
        for (auto a : planted) want.push_back(ids[a]);
        CHECK(q[0].members == want);
        CHECK(q[0].alpha == 3);
        CHECK(q[0].causal_edges == 44);

        const auto sweep = clique_alpha_sweep(g, 1, 10);
        CHECK(sweep.by_alpha.size() == 10);
        CHECK(sweep.best.size() >= 10);
    }
    SUBCASE("a complete causal graph is a fixed point") {
        InterventionGraph g(std::vector<std::uint32_t>(ids.begin(), ids.begin() + 12), {1, Role::Cls});
        for (std::size_t a = 0; a < 12; ++a) {
            for (std::size_t b = a + 1; b < 12; ++b) g.set_edge(a, b, EdgeKind::Causal);
        }
        const auto q = greedy_clique(g, 11);
        REQUIRE(q.size() == 1);
        CHECK(q[0].size() == 12);
        CHECK(q[0].causal_edges == 66);
        CHECK(greedy_clique(g, 12).empty());
    }
    SUBCASE("empty graph and bad alpha") {
        InterventionGraph g(ids, {1, Role::Cls});
        CHECK(g.edge_count() == 0);
        CHECK(greedy_clique(g, 1).empty());
        CHECK_THROWS_AS(greedy_clique(g, 0), ConfigError);
        CHECK(causal_clustering(g) == 0.0);
    }
}

TEST_CASE("expected clique counts in random graphs") {
    CHECK(expected_cliques(4, 2, 0.5) == 3.0);
    CHECK(expected_cliques(10, 3, 0.5) == 15.0);
    CHECK(expected_cliques(5, 5, 1.0) == 1.0);
    CHECK(expected_cliques(300, 14, 0.5) < 1e-3);
    CHECK(expected_cliques(300, 13, 0.5) > 1e-3);
    CHECK(std::log(expected_cliques(300, 14, 0.5)) == doctest::Approx(log_expected_cliques(300, 14, 0.5)));

    // enumerate all 64 graphs on four labelled nodes
    for (double p : {0.5, 0.3}) {
        double mean3 = 0.0, mean4 = 0.0;
        const int pairs[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
        for (int mask = 0; mask < 64; ++mask) {
            bool adj[4][4] = {};
            int edges = 0;
            for (int e = 0; e < 6; ++e) {
                if (mask >> e & 1) {
                    adj[pairs[e][0]][pairs[e][1]] = adj[pairs[e][1]][pairs[e][0]] = true;
                    ++edges;
                }
            }
            const double w = std::pow(p, edges) * std::pow(1 - p, 6 - edges);
            int tri = 0;
            for (int a = 0; a < 4; ++a)
                for (int b = a + 1; b < 4; ++b)
                    for (int c = b + 1; c < 4; ++c) tri += adj[a][b] && adj[a][c] && adj[b][c];
            mean3 += w * tri;
            mean4 += w * (edges == 6);
        }
        CHECK(expected_cliques(4, 3, p) == doctest::Approx(mean3).epsilon(1e-12));
        CHECK(expected_cliques(4, 4, p) == doctest::Approx(mean4).epsilon(1e-12));
    }

    for (std::uint64_t k = 10; k < 40; ++k) CHECK(expected_cliques(300, k + 1, 0.5) < expected_cliques(300, k, 0.5));
    CHECK(expected_cliques(300, 20, 0.6) > expected_cliques(300, 20, 0.5));

    CHECK_THROWS_AS(expected_cliques(5, 6, 0.5), std::domain_error);
    CHECK_THROWS_AS(expected_cliques(5, 0, 0.5), std::domain_error);
    CHECK_THROWS_AS(expected_cliques(5, 2, 0.0), std::domain_error);
    CHECK_THROWS_AS(expected_cliques(5, 2, 1.5), std::domain_error);
}

TEST_CASE("location choice") {
    const auto data = corpus();
    SUBCASE("the only working location wins") {
        StubSource src(data, StubSource::Kind::Perfect, 3);
        src.only_at({2, Role::Wh});
        const auto ranked = choose_location(src, data, 200, 5);
        REQUIRE(ranked.size() == 9);
        CHECK(ranked[0].location == Location{2, Role::Wh});
        // complete graph; only triangles of one relation lack a causal edge
        CHECK(ranked[0].score > 0.5);
        CHECK(ranked[0].score < 1.0);
        CHECK(ranked[0].causal_edges > 0);
        for (std::size_t k = 1; k < ranked.size(); ++k) CHECK(ranked[k].score == 0.0);
    }
    SUBCASE("no causal effect anywhere keeps location order") {
        const StubSource src(data, StubSource::Kind::IgnoresPatch, 3);
        const auto ranked = choose_location(src, data, 200, 5);
        REQUIRE(ranked.size() == 9);
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            CHECK(ranked[k].location == all_locations(3)[k]);
            CHECK(ranked[k].causal_edges == 0);
        }
    }
    SUBCASE("budget too small") {
        const StubSource src(data, StubSource::Kind::Perfect, 3);
        CHECK_THROWS_AS(choose_location(src, data, 99, 0), ConfigError);
    }
}

TEST_CASE("exports") {
    const auto data = corpus();
    const StubSource src(data, StubSource::Kind::Perfect);
    const std::vector<std::size_t> nodes{0, 1, 2, 3, 4, 5};
    const auto g = build_graph(sweep_pairs(src, data, nodes, {1, Role::Cls}));
    std::ostringstream dot;
    write_dot(dot, g, data);
    const auto s = dot.str();
    CHECK(s.rfind("graph", 0) == 0);
    CHECK(s.find(data[0].w_p + " / " + data[0].w_h) != std::string::npos);
    CHECK((s.find("color=red") != std::string::npos) == (g.causal_edge_count() > 0));

    const auto cliques = greedy_clique(g, 1);
    REQUIRE_FALSE(cliques.empty());
    std::ostringstream csv;
    write_clique_csv(csv, cliques, data);
    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "clique,alpha,size,causal_edges,hyponym,example,pair_id,lexrel,negated");
    std::size_t rows = 0;
    std::string last_hypo;
    while (std::getline(lines, line)) {
        ++rows;
        CHECK(line.rfind("0,1,", 0) == 0);
    }
    CHECK(rows == cliques[0].size());
}
