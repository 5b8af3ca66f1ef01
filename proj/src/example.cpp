#include "monli/example.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "monli/error.hpp"

namespace monli {

std::string_view to_string(Label l) noexcept {
    return l == Label::Entailment ? "entailment" : "neutral";
}

Label label_from_string(std::string_view s) {
    if (s == "entailment") return Label::Entailment;
    if (s == "neutral") return Label::Neutral;
    throw DataError("unsupported gold_label '" + std::string(s) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) tokens.push_back(std::move(current));
            current.clear();
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

const std::string& hyponym_of(const NLIExample& e) {
    return e.lexrel == LexicalRelation::Reverse ? e.w_h : e.w_p;
}

nlohmann::json to_json(const NLIExample& e) {
    return nlohmann::json{
        {"sentence1", join_tokens(e.premise)},
        {"sentence2", join_tokens(e.hypothesis)},
        {"gold_label", to_string(e.label)},
        {"w_p", e.w_p},
        {"w_h", e.w_h},
        {"negated", e.negated},
        {"lexrel", to_string(e.lexrel)},
        {"pair_id", e.pair_id},
        {"template_id", e.template_id},
    };
}

NLIExample example_from_json(const nlohmann::json& j) {
    NLIExample e;
    e.premise = tokenize(j.at("sentence1").get<std::string>());
    e.hypothesis = tokenize(j.at("sentence2").get<std::string>());
    e.label = label_from_string(j.at("gold_label").get<std::string>());
    e.w_p = j.at("w_p").get<std::string>();
    e.w_h = j.at("w_h").get<std::string>();
    e.negated = j.at("negated").get<bool>();
    e.lexrel = relation_from_string(j.at("lexrel").get<std::string>());
    e.pair_id = j.value("pair_id", std::string{});
    e.template_id = j.value("template_id", std::string{});
    return e;
}

void write_jsonl(std::ostream& out, std::span<const NLIExample> examples) {
    for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

void write_jsonl(const std::filesystem::path& path, std::span<const NLIExample> examples) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_jsonl(out, examples);
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NLIExample> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<NLIExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(example_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(path.string(), line_no, ex.what());
        }
    }
    return out;
}

}  // namespace monli
