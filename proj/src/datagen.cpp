#include "monli/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <unordered_map>

#include "monli/error.hpp"
#include "monli/oracle.hpp"

namespace monli {

namespace {

struct SlotScan {
    std::size_t position = 0;
    std::string category;
};

SlotScan find_slot(std::vector<std::string>& tokens, const std::string& where) {
    std::size_t found = 0;
    SlotScan scan;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& t = tokens[i];
        if (t.size() >= 3 && t.front() == '{' && t.back() == '}' && (t[1] == 'n')) {
            const std::string inner = t.substr(1, t.size() - 2);
            if (inner != "n" && inner.rfind("n:", 0) != 0) continue;
            ++found;
            scan.position = i;
            scan.category = inner.size() > 2 ? inner.substr(2) : std::string{};
        }
    }
    if (found != 1) {
        throw DataError(where + ": expected exactly one slot marker, found " + std::to_string(found));
    }
    return scan;
}

std::string pair_id_for(const Template& t, bool negated, const HyponymEdge& edge) {
    return t.id + "/" + (negated ? "neg" : "pos") + "/" + edge.hyponym + ">" + edge.hypernym;
}

NLIExample fill(const Template& t, bool negated, const std::string& premise_word,
                const std::string& hypothesis_word, LexicalRelation lexrel, std::string pair_id) {
    NLIExample e;
    const auto& form = negated ? t.negated_form : t.positive_form;
    const std::size_t slot = negated ? t.negated_slot : t.positive_slot;
    e.premise = form;
    e.hypothesis = form;
    e.premise[slot] = premise_word;
    e.hypothesis[slot] = hypothesis_word;
    e.w_p = premise_word;
    e.w_h = hypothesis_word;
    e.negated = negated;
    e.lexrel = lexrel;
    e.label = relation_to_label(infer(e));
    e.pair_id = std::move(pair_id);
    e.template_id = t.id;
    return e;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

Template make_template(std::string id, std::string_view positive, std::string_view negated) {
    Template t;
    t.id = std::move(id);
    if (t.id.empty()) throw DataError("template id must not be empty");
    t.positive_form = tokenize(positive);
    t.negated_form = tokenize(negated);
    const auto pos = find_slot(t.positive_form, "template " + t.id + " positive form");
    const auto neg = find_slot(t.negated_form, "template " + t.id + " negated form");
    if (pos.category != neg.category) {
        throw DataError("template " + t.id + ": slot categories differ between forms");
    }
    auto count_not = [](const std::vector<std::string>& s) {
        return std::count(s.begin(), s.end(), "not");
    };
    if (count_not(t.positive_form) != 0) {
        throw DataError("template " + t.id + ": positive form must not contain 'not'");
    }
    if (count_not(t.negated_form) != 1) {
        throw DataError("template " + t.id + ": negated form must contain exactly one 'not'");
    }
    if (static_cast<std::size_t>(std::find(t.negated_form.begin(), t.negated_form.end(), "not") -
                                 t.negated_form.begin()) > neg.position) {
        throw DataError("template " + t.id + ": 'not' must precede the slot it scopes over");
    }
    t.positive_slot = pos.position;
    t.negated_slot = neg.position;
    t.category = pos.category;
    return t;
}

std::vector<Template> parse_templates(std::istream& in, const std::string& source) {
    std::vector<Template> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped.front() == '#') continue;
        std::vector<std::string> parts;
        std::stringstream ss(stripped);
        for (std::string part; std::getline(ss, part, '|');) parts.push_back(trim(part));
        if (parts.size() != 3) {
            throw ParseError(source, line_no, "expected 'id | positive form | negated form'");
        }
        try {
            out.push_back(make_template(parts[0], parts[1], parts[2]));
        } catch (const DataError& e) {
            throw ParseError(source, line_no, e.what());
        }
    }
    std::sort(out.begin(), out.end(), [](const Template& a, const Template& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < out.size(); ++i) {
        if (out[i].id == out[i - 1].id) throw DataError(source + ": duplicate template id " + out[i].id);
    }
    return out;
}

std::vector<Template> load_templates(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open template file " + path.string());
    return parse_templates(in, path.string());
}

std::vector<NLIExample> generate(std::span<const Template> templates, const Lexicon& lexicon,
                                 Polarity polarity) {
    if (templates.empty()) throw DataError("generate: no templates");
    if (lexicon.empty()) throw DataError("generate: empty lexicon");

    const auto pairs = lexicon.closure_pairs();
    for (const auto& p : pairs) {
        const auto cat = lexicon.category(p.hyponym);
        const bool fits = std::any_of(templates.begin(), templates.end(),
                                      [&](const Template& t) { return t.category == cat; });
        if (!fits) {
            throw DataError("word '" + p.hyponym + "' (category '" + std::string(cat) +
                            "') fits no template slot");
        }
    }

    std::vector<bool> polarities;
    if (polarity != Polarity::Negated) polarities.push_back(false);
    if (polarity != Polarity::Positive) polarities.push_back(true);

    std::vector<NLIExample> out;
    for (const auto& t : templates) {
        for (const auto& p : pairs) {
            if (lexicon.category(p.hyponym) != t.category) continue;
            for (bool negated : polarities) {
                const auto& form = negated ? t.negated_form : t.positive_form;
                for (const auto* w : {&p.hyponym, &p.hypernym}) {
                    if (std::find(form.begin(), form.end(), *w) != form.end()) {
                        throw DataError("template " + t.id + " already contains '" + *w + "'");
                    }
                }
                std::string id = pair_id_for(t, negated, p);
                out.push_back(fill(t, negated, p.hyponym, p.hypernym, LexicalRelation::Forward, id));
                out.push_back(fill(t, negated, p.hypernym, p.hyponym, LexicalRelation::Reverse, id));
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const NLIExample& a, const NLIExample& b) {
        if (a.template_id != b.template_id) return a.template_id < b.template_id;
        return a.pair_id < b.pair_id;
    });
    return out;
}

std::vector<ManifestRow> build_manifest(std::span<const NLIExample> train,
                                        std::span<const NLIExample> test) {
    std::vector<ManifestRow> rows;
    for (const auto& [side, data] : {std::pair{"train", train}, std::pair{"test", test}}) {
        std::map<std::string, std::size_t> counts;
        for (const auto& e : data) ++counts[hyponym_of(e)];
        std::vector<ManifestRow> part;
        for (auto& [h, c] : counts) part.push_back({side, h, c});
        std::stable_sort(part.begin(), part.end(),
                         [](const ManifestRow& a, const ManifestRow& b) { return a.count > b.count; });
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

DatasetSplit split_by_hyponyms(std::span<const NLIExample> examples,
                               const std::set<std::string>& test_hyponyms) {
    DatasetSplit split;
    for (const auto& e : examples) {
        (test_hyponyms.count(hyponym_of(e)) ? split.test : split.train).push_back(e);
    }
    split.manifest = build_manifest(split.train, split.test);
    return split;
}

DatasetSplit split_systematic(std::span<const NLIExample> examples, double test_fraction,
                              std::uint64_t seed) {
    if (examples.empty()) throw DataError("split_systematic: no examples");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("split_systematic: test_fraction must lie in (0, 1)");
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& e : examples) ++counts[hyponym_of(e)];

    const double total = static_cast<double>(examples.size());
    for (const auto& [h, c] : counts) {
        if (static_cast<double>(c) >= (1.0 - test_fraction) * total) {
            throw DataError("split_systematic: infeasible, hyponym '" + h + "' holds " +
                            std::to_string(c) + " of " + std::to_string(examples.size()) + " examples");
        }
    }

    std::vector<std::string> order;
    for (const auto& [h, c] : counts) order.push_back(h);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::set<std::string> test;
    std::size_t test_size = 0;
    for (const auto& h : order) {
        if (static_cast<double>(test_size) >= test_fraction * total) break;
        test.insert(h);
        test_size += counts[h];
    }
    return split_by_hyponyms(examples, test);
}

DatasetSplit split_random(std::span<const NLIExample> examples, double test_fraction,
                          std::uint64_t seed) {
    std::vector<std::string> groups;
    std::unordered_map<std::string, std::size_t> group_size;
    for (const auto& e : examples) {
        if (group_size[e.pair_id]++ == 0) groups.push_back(e.pair_id);
    }
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);

    const double target = test_fraction * static_cast<double>(examples.size());
    std::set<std::string> test_groups;
    std::size_t test_size = 0;
    for (const auto& g : groups) {
        if (static_cast<double>(test_size) >= target) break;
        test_groups.insert(g);
        test_size += group_size[g];
    }

    DatasetSplit split;
    for (const auto& e : examples) {
        (test_groups.count(e.pair_id) ? split.test : split.train).push_back(e);
    }
    split.manifest = build_manifest(split.train, split.test);
    return split;
}

void write_manifest_csv(std::ostream& out, std::span<const ManifestRow> rows) {
    out << "side,hyponym,count\n";
    for (const auto& r : rows) out << r.side << ',' << r.hyponym << ',' << r.count << '\n';
}

void write_manifest_csv(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_manifest_csv(out, rows);
}

IngestResult ingest_external(std::istream& in, const Lexicon& lexicon, const std::string& source) {
    IngestResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        NLIExample e;
        try {
            const auto j = nlohmann::json::parse(line);
            e.premise = tokenize(j.at("sentence1").get<std::string>());
            e.hypothesis = tokenize(j.at("sentence2").get<std::string>());
            e.label = label_from_string(j.at("gold_label").get<std::string>());
            e.w_p = tokenize(j.at("w_p").get<std::string>()).at(0);
            e.w_h = tokenize(j.at("w_h").get<std::string>()).at(0);
            e.negated = j.contains("negated") ? j.at("negated").get<bool>()
                                              : contains_not_tokens(e.premise, e.hypothesis);
            e.pair_id = j.value("pair_id", source + ":" + std::to_string(line_no));
            e.template_id = j.value("template_id", std::string{});
        } catch (const std::exception& ex) {
            throw ParseError(source, line_no, ex.what());
        }
        e.lexrel = lexicon.relation(e.w_p, e.w_h);
        if (e.lexrel == LexicalRelation::None) {
            throw DataError(source + ":" + std::to_string(line_no) + ": no lexical relation between '" +
                            e.w_p + "' and '" + e.w_h + "'");
        }
        if (relation_to_label(infer(e)) != e.label) result.label_conflicts.push_back(result.examples.size());
        result.examples.push_back(std::move(e));
    }
    return result;
}

IngestResult ingest_external(const std::filesystem::path& path, const Lexicon& lexicon) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return ingest_external(in, lexicon, path.string());
}

}  // namespace monli
