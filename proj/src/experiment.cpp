#include "monli/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "monli/datagen.hpp"
#include "monli/error.hpp"
#include "monli/intervene.hpp"
#include "monli/lexicon.hpp"

#ifndef MONLI_DATA_DIR
#define MONLI_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace monli {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    c.data.lexicon = fs::path(MONLI_DATA_DIR) / "lexicon.txt";
    c.data.templates = fs::path(MONLI_DATA_DIR) / "templates.txt";
    const char* root = std::getenv("MONLI_OUTPUT_ROOT");
    c.output_dir = fs::path(root && *root ? root : "runs") / "default";
    c.train.epochs = 16;
    return c;
}

namespace {

json amounts_to_json(const std::vector<std::size_t>& amounts) {
    json a = json::array();
    for (auto v : amounts) {
        if (v == kAllExamples) {
            a.push_back("all");
        } else {
            a.push_back(v);
        }
    }
    return a;
}

std::vector<std::size_t> amounts_from_json(const json& a) {
    std::vector<std::size_t> out;
    for (const auto& v : a) {
        if (v.is_string() && v.get<std::string>() == "all") {
            out.push_back(kAllExamples);
        } else {
            out.push_back(v.get<std::size_t>());
        }
    }
    return out;
}

std::string_view control_mode_name(ControlMode m) {
    return m == ControlMode::PerExample ? "per_example" : "per_word_type";
}

ControlMode control_mode_from(const std::string& s) {
    if (s == "per_example") return ControlMode::PerExample;
    if (s == "per_word_type") return ControlMode::PerWordType;
    throw ConfigError("unknown probe control_mode '" + s + "'");
}

// Every key of `user` must exist in `base`; objects are checked recursively.
void check_keys(const json& user, const json& base, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        if (base.at(key).is_object()) check_keys(value, base.at(key), path);
    }
}

std::uint64_t fnv(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

}  // namespace

json to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["output_dir"] = c.output_dir.string();
    j["data"] = {{"lexicon", c.data.lexicon.string()},
                 {"templates", c.data.templates.string()},
                 {"heldout_templates", c.data.heldout_templates},
                 {"max_per_polarity", c.data.max_per_polarity}};
    j["split"] = {{"kind", c.split.kind},
                  {"fraction", c.split.fraction},
                  {"challenge_kind", c.split.challenge_kind},
                  {"challenge_fraction", c.split.challenge_fraction}};
    j["model"] = {{"rows", c.model.rows},
                  {"width", c.model.width},
                  {"heads", c.model.heads},
                  {"ffn", c.model.ffn},
                  {"max_len", c.model.max_len}};
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"epochs", c.train.epochs},
                  {"clip_norm", c.train.clip_norm}};
    j["inoculate"] = {{"amounts", amounts_to_json(c.inoculate.amounts)},
                      {"learning_rates", c.inoculate.learning_rates},
                      {"replay", c.inoculate.replay},
                      {"epochs", c.inoculate.epochs},
                      {"batch_size", c.inoculate.batch_size}};
    json targets = json::array();
    for (auto t : c.probe.targets) targets.push_back(std::string(to_string(t)));
    const auto& p = c.probe.config;
    j["probe"] = {{"hidden", p.hidden},
                  {"nonlinear", p.nonlinear},
                  {"learning_rate", p.learning_rate},
                  {"max_epochs", p.max_epochs},
                  {"patience", p.patience},
                  {"tolerance", p.tolerance},
                  {"heldout_fraction", p.heldout_fraction},
                  {"control_mode", std::string(control_mode_name(p.control_mode))},
                  {"targets", targets},
                  {"model", c.probe.model}};
    json locs = json::array();
    for (auto l : c.intervene.locations) locs.push_back(l.to_string());
    j["intervene"] = {{"examples", c.intervene.examples},
                      {"locations", locs},
                      {"budget", c.intervene.budget},
                      {"alpha_min", c.intervene.alpha_min},
                      {"alpha_max", c.intervene.alpha_max},
                      {"model", c.intervene.model}};
    return j;
}

ExperimentConfig config_from_json(const json& user) {
    json j = to_json(ExperimentConfig::defaults());
    check_keys(user, j, "");
    j.merge_patch(user);
    ExperimentConfig c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.workers = j.at("workers").get<unsigned>();
        c.output_dir = j.at("output_dir").get<std::string>();
        const auto& d = j.at("data");
        c.data.lexicon = d.at("lexicon").get<std::string>();
        c.data.templates = d.at("templates").get<std::string>();
        c.data.heldout_templates = d.at("heldout_templates").get<std::vector<std::string>>();
        c.data.max_per_polarity = d.at("max_per_polarity").get<std::size_t>();
        const auto& s = j.at("split");
        c.split.kind = s.at("kind").get<std::string>();
        c.split.fraction = s.at("fraction").get<double>();
        c.split.challenge_kind = s.at("challenge_kind").get<std::string>();
        c.split.challenge_fraction = s.at("challenge_fraction").get<double>();
        const auto& m = j.at("model");
        c.model.rows = m.at("rows").get<int>();
        c.model.width = m.at("width").get<int>();
        c.model.heads = m.at("heads").get<int>();
        c.model.ffn = m.at("ffn").get<int>();
        c.model.max_len = m.at("max_len").get<int>();
        const auto& t = j.at("train");
        c.train.learning_rate = t.at("learning_rate").get<double>();
        c.train.batch_size = t.at("batch_size").get<std::size_t>();
        c.train.epochs = t.at("epochs").get<int>();
        c.train.clip_norm = t.at("clip_norm").get<double>();
        const auto& in = j.at("inoculate");
        c.inoculate.amounts = amounts_from_json(in.at("amounts"));
        c.inoculate.learning_rates = in.at("learning_rates").get<std::vector<double>>();
        c.inoculate.replay = in.at("replay").get<std::vector<double>>();
        c.inoculate.epochs = in.at("epochs").get<int>();
        c.inoculate.batch_size = in.at("batch_size").get<std::size_t>();
        const auto& p = j.at("probe");
        c.probe.config.hidden = p.at("hidden").get<int>();
        c.probe.config.nonlinear = p.at("nonlinear").get<bool>();
        c.probe.config.learning_rate = p.at("learning_rate").get<double>();
        c.probe.config.max_epochs = p.at("max_epochs").get<int>();
        c.probe.config.patience = p.at("patience").get<int>();
        c.probe.config.tolerance = p.at("tolerance").get<double>();
        c.probe.config.heldout_fraction = p.at("heldout_fraction").get<double>();
        c.probe.config.control_mode = control_mode_from(p.at("control_mode").get<std::string>());
        c.probe.targets.clear();
        for (const auto& name : p.at("targets")) c.probe.targets.push_back(probe_target_from_string(name.get<std::string>()));
        c.probe.model = p.at("model").get<std::string>();
        const auto& v = j.at("intervene");
        c.intervene.examples = v.at("examples").get<std::size_t>();
        c.intervene.locations.clear();
        for (const auto& l : v.at("locations")) c.intervene.locations.push_back(Location::parse(l.get<std::string>()));
        c.intervene.budget = v.at("budget").get<std::size_t>();
        c.intervene.alpha_min = v.at("alpha_min").get<int>();
        c.intervene.alpha_max = v.at("alpha_max").get<int>();
        c.intervene.model = v.at("model").get<std::string>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }

    for (const auto* kind : {&c.split.kind, &c.split.challenge_kind}) {
        if (*kind != "random" && *kind != "systematic") throw ConfigError("split kind must be random or systematic");
    }
    for (const auto* which : {&c.probe.model, &c.intervene.model}) {
        if (*which != "base" && *which != "inoculated") throw ConfigError("model choice must be base or inoculated");
    }
    if (c.inoculate.learning_rates.empty() || c.inoculate.replay.empty() || c.inoculate.amounts.empty()) {
        throw ConfigError("inoculation grid must not be empty");
    }
    if (c.intervene.alpha_min < 1 || c.intervene.alpha_max < c.intervene.alpha_min) {
        throw ConfigError("intervene alpha range is invalid");
    }
    ModelConfig probe_model = c.model;
    probe_model.validate();
    return c;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("empty key segment in override " + assignment);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (!node->is_object() && !node->is_null()) throw ConfigError("override path is not an object: " + key);
        start = dot + 1;
    }
}

ExperimentConfig load_config(const fs::path& file, const std::vector<std::string>& overrides) {
    json user = json::object();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw IoError("cannot open config " + file.string());
        try {
            user = json::parse(in, nullptr, true, true);
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse config " + file.string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(user, o);
    auto c = config_from_json(user);
    c.data.lexicon = fs::absolute(c.data.lexicon);
    c.data.templates = fs::absolute(c.data.templates);
    c.output_dir = fs::absolute(c.output_dir);
    return c;
}

std::uint64_t config_checksum(const ExperimentConfig& c) {
    json j = to_json(c);
    j.erase("output_dir");
    j.erase("workers");
    return fnv(j.dump());
}

std::uint64_t stage_seed(std::uint64_t root, std::string_view stage) {
    // splitmix64 finaliser over the root seed mixed with the stage name
    std::uint64_t z = root ^ fnv(stage);
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{"gen", "train", "eval", "inoculate", "probe", "intervene", "report"};
    return names;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

RunManifest RunManifest::load(const fs::path& path) {
    RunManifest m;
    std::ifstream in(path);
    if (!in) return m;
    try {
        const json j = json::parse(in);
        m.config_checksum = j.value("config_checksum", "");
        for (const auto& [name, s] : j.at("stages").items()) {
            StageRecord r;
            r.complete = s.value("complete", false);
            r.key = s.value("key", "");
            r.seconds = s.value("seconds", 0.0);
            r.artifacts = s.value("artifacts", std::vector<std::string>{});
            r.error = s.value("error", "");
            m.stages[name] = r;
        }
    } catch (const json::exception& e) {
        throw DataError("corrupt run manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void RunManifest::save(const fs::path& path) const {
    json j;
    j["config_checksum"] = config_checksum;
    json stages = json::object();
    for (const auto& [name, r] : this->stages) {
        stages[name] = {{"complete", r.complete},
                        {"key", r.key},
                        {"seconds", r.seconds},
                        {"artifacts", r.artifacts},
                        {"error", r.error}};
    }
    j["stages"] = stages;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << j.dump(2) << '\n';
        if (!out) throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

bool RunManifest::up_to_date(const std::string& stage, const std::string& key) const {
    const auto it = stages.find(stage);
    return it != stages.end() && it->second.complete && it->second.key == key;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

struct Context {
    const ExperimentConfig& config;
    fs::path dir;
    std::ostream* log;

    fs::path at(const char* rel) const { return dir / rel; }
    void say(const std::string& s) const {
        if (log) *log << s << '\n' << std::flush;
    }
};

std::vector<NLIExample> concat(std::initializer_list<const std::vector<NLIExample>*> parts) {
    std::vector<NLIExample> out;
    for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
    return out;
}

std::vector<NLIExample> cap_examples(const std::vector<NLIExample>& examples, std::size_t cap, std::uint64_t seed) {
    if (cap == 0 || examples.size() <= cap) return examples;
    std::vector<std::string> groups;
    for (const auto& e : examples) groups.push_back(e.pair_id);
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    std::mt19937_64 rng(seed);
    std::shuffle(groups.begin(), groups.end(), rng);
    std::map<std::string, std::size_t> size;
    for (const auto& e : examples) ++size[e.pair_id];
    std::set<std::string> keep;
    std::size_t total = 0;
    for (const auto& g : groups) {
        if (total + size[g] > cap) continue;
        keep.insert(g);
        total += size[g];
    }
    std::vector<NLIExample> out;
    for (const auto& e : examples) {
        if (keep.count(e.pair_id)) out.push_back(e);
    }
    return out;
}

std::string balance(const std::vector<NLIExample>& v) {
    const auto ent = std::count_if(v.begin(), v.end(), [](const auto& e) { return e.label == Label::Entailment; });
    return std::to_string(v.size()) + " examples (" + std::to_string(ent) + " entailment, " +
           std::to_string(v.size() - static_cast<std::size_t>(ent)) + " neutral)";
}

DatasetSplit do_split(const std::vector<NLIExample>& v, const std::string& kind, double fraction, std::uint64_t seed) {
    return kind == "systematic" ? split_systematic(v, fraction, seed) : split_random(v, fraction, seed);
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + path.string());
}

std::vector<std::string> stage_gen(const Context& ctx) {
    const auto& c = ctx.config;
    const auto seed = stage_seed(c.seed, "gen");
    const auto lexicon = load_lexicon(c.data.lexicon);
    const auto templates = load_templates(c.data.templates);
    std::set<std::string> held(c.data.heldout_templates.begin(), c.data.heldout_templates.end());
    std::vector<Template> iid_t, held_t;
    for (const auto& t : templates) (held.count(t.id) ? held_t : iid_t).push_back(t);
    if (held_t.size() != held.size()) throw ConfigError("held-out template id not found in " + c.data.templates.string());
    if (iid_t.empty()) throw ConfigError("every template is held out; nothing to train on");

    const auto positive = cap_examples(generate(iid_t, lexicon, Polarity::Positive), c.data.max_per_polarity, seed);
    const auto heldout = cap_examples(generate(held_t, lexicon, Polarity::Positive), c.data.max_per_polarity, seed + 1);
    const auto negated = cap_examples(generate(templates, lexicon, Polarity::Negated), c.data.max_per_polarity, seed + 2);
    const auto iid = do_split(positive, c.split.kind, c.split.fraction, seed + 3);
    const auto challenge = do_split(negated, c.split.challenge_kind, c.split.challenge_fraction, seed + 4);

    fs::create_directories(ctx.dir / "data");
    write_jsonl(ctx.at(artifacts::kPositive), positive);
    write_jsonl(ctx.at(artifacts::kHeldout), heldout);
    write_jsonl(ctx.at(artifacts::kNegated), negated);
    write_jsonl(ctx.at(artifacts::kIidTrain), iid.train);
    write_jsonl(ctx.at(artifacts::kIidTest), iid.test);
    write_jsonl(ctx.at(artifacts::kChallengeTrain), challenge.train);
    write_jsonl(ctx.at(artifacts::kChallengeTest), challenge.test);
    write_manifest_csv(ctx.at(artifacts::kIidSplit), iid.manifest);
    write_manifest_csv(ctx.at(artifacts::kChallengeSplit), challenge.manifest);

    ctx.say("lexicon: " + std::to_string(lexicon.closure_size()) + " hyponym/hypernym pairs, " +
            std::to_string(templates.size()) + " templates");
    ctx.say("positive:       " + balance(positive));
    ctx.say("held-out:       " + balance(heldout));
    ctx.say("negated:        " + balance(negated));
    ctx.say("iid train/test: " + std::to_string(iid.train.size()) + " / " + std::to_string(iid.test.size()));
    ctx.say("challenge train/test: " + std::to_string(challenge.train.size()) + " / " +
            std::to_string(challenge.test.size()));
    return {artifacts::kPositive,  artifacts::kHeldout,        artifacts::kNegated,
            artifacts::kIidTrain,  artifacts::kIidTest,        artifacts::kChallengeTrain,
            artifacts::kChallengeTest, artifacts::kIidSplit,   artifacts::kChallengeSplit};
}

struct Corpus {
    std::vector<NLIExample> positive, heldout, negated, iid_train, iid_test, challenge_train, challenge_test;
};

Corpus load_corpus(const Context& ctx) {
    Corpus k;
    k.positive = read_jsonl(ctx.at(artifacts::kPositive));
    k.heldout = read_jsonl(ctx.at(artifacts::kHeldout));
    k.negated = read_jsonl(ctx.at(artifacts::kNegated));
    k.iid_train = read_jsonl(ctx.at(artifacts::kIidTrain));
    k.iid_test = read_jsonl(ctx.at(artifacts::kIidTest));
    k.challenge_train = read_jsonl(ctx.at(artifacts::kChallengeTrain));
    k.challenge_test = read_jsonl(ctx.at(artifacts::kChallengeTest));
    return k;
}

std::vector<NLIExample> everything(const Corpus& k) { return concat({&k.positive, &k.heldout, &k.negated}); }

json accuracy_table(const Model& model, const Corpus& k, unsigned workers, const std::string& condition) {
    json acc = json::object(), count = json::object();
    const std::pair<const char*, const std::vector<NLIExample>*> sets[] = {
        {"iid_test", &k.iid_test},
        {"heldout_positive", &k.heldout},
        {"negated", &k.negated},
        {"challenge_test", &k.challenge_test}};
    for (const auto& [name, v] : sets) {
        acc[name] = evaluate(model, *v, workers);
        count[name] = v->size();
    }
    return {{"condition", condition}, {"accuracy", acc}, {"count", count}};
}

std::string format_accuracies(const json& table) {
    std::string s;
    for (const auto& [name, a] : table.at("accuracy").items()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%s %.3f  ", name.c_str(), a.get<double>());
        s += buf;
    }
    return s;
}

std::vector<std::string> stage_train(const Context& ctx) {
    const auto& c = ctx.config;
    const auto k = load_corpus(ctx);
    ModelConfig mc = c.model;
    mc.vocab = Vocab::build(everything(k));
    mc.seed = stage_seed(c.seed, "model");
    Hyperparams hp = c.train;
    hp.seed = stage_seed(c.seed, "train");
    auto [model, report] = train(mc, k.iid_train, hp);
    fs::create_directories(ctx.dir / "models");
    fs::create_directories(ctx.dir / "train");
    save_checkpoint(model, ctx.at(artifacts::kBaseModel));
    write_json(ctx.at(artifacts::kTrainReport), {{"epochs", report.epochs_run},
                                                  {"final_loss", report.final_loss},
                                                  {"train_accuracy", report.final_train_accuracy},
                                                  {"parameters", model.parameters().size()}});
    ctx.say("trained " + std::to_string(model.parameters().size()) + " parameters for " +
            std::to_string(report.epochs_run) + " epochs, train accuracy " + std::to_string(report.final_train_accuracy));
    return {artifacts::kBaseModel, artifacts::kTrainReport};
}

std::vector<std::string> stage_eval(const Context& ctx) {
    const auto k = load_corpus(ctx);
    const auto model = load_checkpoint(ctx.at(artifacts::kBaseModel));
    fs::create_directories(ctx.dir / "eval");
    const auto table = accuracy_table(model, k, ctx.config.workers, "base");
    write_json(ctx.at(artifacts::kEval), table);
    ctx.say("base model: " + format_accuracies(table));
    return {artifacts::kEval};
}

std::vector<std::string> stage_inoculate(const Context& ctx) {
    const auto& c = ctx.config;
    const auto k = load_corpus(ctx);
    const auto model = load_checkpoint(ctx.at(artifacts::kBaseModel));
    std::vector<Hyperparams> grid;
    for (double replay : c.inoculate.replay) {
        for (double lr : c.inoculate.learning_rates) {
            Hyperparams hp = c.train;
            hp.learning_rate = lr;
            hp.replay = replay;
            hp.epochs = c.inoculate.epochs;
            hp.batch_size = c.inoculate.batch_size;
            hp.seed = stage_seed(c.seed, "inoculate");
            grid.push_back(hp);
        }
    }
    const auto result = inoculate(model, k.iid_test, k.challenge_train, k.challenge_test, c.inoculate.amounts, grid,
                                  k.iid_train, c.workers);
    fs::create_directories(ctx.dir / "inoculate");
    {
        std::ofstream out(ctx.at(artifacts::kCurve));
        if (!out) throw IoError("cannot write " + ctx.at(artifacts::kCurve).string());
        out << "amount,grid_index,learning_rate,replay,original_accuracy,challenge_accuracy,mean,selected\n";
        for (const auto& p : result.curve) {
            out << p.amount << ',' << p.grid_index << ',' << p.hyperparams.learning_rate << ',' << p.hyperparams.replay
                << ',' << p.original_accuracy << ',' << p.challenge_accuracy << ',' << p.mean() << ','
                << (p.selected ? 1 : 0) << '\n';
        }
    }
    save_checkpoint(result.best, ctx.at(artifacts::kInoculatedModel));
    auto table = accuracy_table(result.best, k, c.workers, "inoculated");
    const auto& b = result.best_point;
    table["selected"] = {{"amount", b.amount},
                         {"learning_rate", b.hyperparams.learning_rate},
                         {"replay", b.hyperparams.replay},
                         {"original_accuracy", b.original_accuracy},
                         {"challenge_accuracy", b.challenge_accuracy}};
    write_json(ctx.at(artifacts::kInoculated), table);
    ctx.say("inoculated model (" + std::to_string(b.amount) + " challenge examples): " + format_accuracies(table));
    return {artifacts::kCurve, artifacts::kInoculatedModel, artifacts::kInoculated};
}

const char* model_path(const std::string& which) {
    return which == "base" ? artifacts::kBaseModel : artifacts::kInoculatedModel;
}

std::vector<std::string> stage_probe(const Context& ctx) {
    const auto& c = ctx.config;
    const auto k = load_corpus(ctx);
    const auto model = load_checkpoint(ctx.at(model_path(c.probe.model)));
    ProbeConfig pc = c.probe.config;
    pc.seed = stage_seed(c.seed, "probe");
    const auto data = everything(k);
    const auto reports = selectivity_sweep(model, data, c.probe.targets, pc);
    fs::create_directories(ctx.dir / "probe");
    write_probe_csv(ctx.at(artifacts::kProbe), reports);
    ctx.say("probed " + std::to_string(reports.size()) + " location/target cells on " + std::to_string(data.size()) +
            " examples");
    return {artifacts::kProbe};
}

std::string location_slug(Location l) { return "r" + std::to_string(l.row) + "_" + std::string(to_string(l.role)); }

std::vector<std::string> stage_intervene(const Context& ctx) {
    const auto& c = ctx.config;
    const auto k = load_corpus(ctx);
    const auto model = load_checkpoint(ctx.at(model_path(c.intervene.model)));
    const auto seed = stage_seed(c.seed, "intervene");
    const auto pool = everything(k);
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), c.intervene.examples));
    std::sort(idx.begin(), idx.end());
    std::vector<NLIExample> subset;
    for (auto i : idx) subset.push_back(pool[i]);

    fs::create_directories(ctx.dir / "intervene");
    write_jsonl(ctx.at(artifacts::kSubset), subset);
    std::vector<std::string> written{artifacts::kSubset};

    std::vector<Location> locations = c.intervene.locations;
    if (locations.empty()) {
        const auto ranking = choose_location(model, subset, c.intervene.budget, seed + 1);
        std::ofstream out(ctx.at(artifacts::kLocations));
        out << "rank,location_row,location_role,score,edges,causal_edges\n";
        for (std::size_t r = 0; r < ranking.size(); ++r) {
            out << r + 1 << ',' << ranking[r].location.row << ',' << to_string(ranking[r].location.role) << ','
                << ranking[r].score << ',' << ranking[r].edges << ',' << ranking[r].causal_edges << '\n';
        }
        if (!out) throw IoError("cannot write " + ctx.at(artifacts::kLocations).string());
        written.push_back(artifacts::kLocations);
        locations.push_back(ranking.front().location);
        ctx.say("location search picked " + ranking.front().location.to_string());
    }

    json doc;
    doc["examples"] = subset.size();
    doc["locations"] = json::array();
    for (const auto loc : locations) {
        const std::string log_rel = "intervene/results_" + location_slug(loc) + ".log";
        SweepOptions opts;
        opts.workers = c.workers;
        const auto summary = sweep(model, subset, loc, ctx.dir / log_rel, opts);
        const auto results = read_result_log(ctx.dir / log_rel).results;
        const auto graph = build_graph(results);
        const auto alphas = clique_alpha_sweep(graph, c.intervene.alpha_min, c.intervene.alpha_max);
        json entry;
        entry["location"] = loc.to_string();
        entry["log"] = log_rel;
        entry["results"] = results.size();
        entry["edges"] = graph.edge_count();
        entry["causal_edges"] = graph.causal_edge_count();
        entry["alphas"] = json::array();
        for (const auto& [alpha, cliques] : alphas.by_alpha) {
            json cs = json::array();
            for (const auto& q : cliques) {
                if (!verify_clique(q.members, results)) {
                    throw StageError("clique at alpha " + std::to_string(alpha) + " failed verification");
                }
                cs.push_back({{"members", q.members}, {"causal_edges", q.causal_edges}});
            }
            entry["alphas"].push_back({{"alpha", alpha}, {"cliques", cs}});
        }
        entry["best"] = {{"alpha", alphas.best.alpha},
                         {"size", alphas.best.size()},
                         {"causal_edges", alphas.best.causal_edges}};
        doc["locations"].push_back(entry);
        written.push_back(log_rel);
        ctx.say("location " + loc.to_string() + ": " + std::to_string(summary.results) + " interchanges, " +
                std::to_string(graph.edge_count()) + " edges (" + std::to_string(graph.causal_edge_count()) +
                " causal), largest clique " + std::to_string(alphas.best.size()));
    }
    write_json(ctx.at(artifacts::kCliques), doc);
    written.push_back(artifacts::kCliques);
    return written;
}

std::vector<std::string> stage_report(const Context& ctx) {
    write_report(ctx.dir, ctx.log);
    return {"report"};
}

}  // namespace

RunManifest run_pipeline(const ExperimentConfig& config, const RunOptions& options) {
    const auto& names = stage_names();
    std::set<std::string> requested;
    for (const auto& s : options.stages) {
        if (std::find(names.begin(), names.end(), s) == names.end()) throw ConfigError("unknown stage '" + s + "'");
        requested.insert(s);
    }
    if (requested.empty()) requested.insert(names.begin(), names.end());

    const fs::path dir = config.output_dir;
    fs::create_directories(dir);
    const auto manifest_path = dir / artifacts::kManifest;
    auto manifest = RunManifest::load(manifest_path);
    manifest.config_checksum = hex(config_checksum(config));
    write_json(dir / artifacts::kConfig, to_json(config));

    // Stage keys chain the config sections each stage reads with the keys of
    // its inputs, so a config change invalidates everything downstream.
    const json cj = to_json(config);
    auto h = [](const std::string& s) { return hex(fnv(s)); };
    std::map<std::string, std::string> key;
    std::map<std::string, std::vector<std::string>> deps;
    key["gen"] = h(cj["data"].dump() + cj["split"].dump() + std::to_string(config.seed));
    key["train"] = h(key["gen"] + cj["model"].dump() + cj["train"].dump());
    key["eval"] = h(key["train"] + "eval");
    key["inoculate"] = h(key["train"] + cj["inoculate"].dump());
    const auto model_stage = [](const std::string& which) { return which == "base" ? "train" : "inoculate"; };
    key["probe"] = h(key[model_stage(config.probe.model)] + cj["probe"].dump());
    key["intervene"] = h(key[model_stage(config.intervene.model)] + cj["intervene"].dump());
    deps["gen"] = {};
    deps["train"] = {"gen"};
    deps["eval"] = {"gen", "train"};
    deps["inoculate"] = {"gen", "train"};
    deps["probe"] = {"gen", model_stage(config.probe.model)};
    deps["intervene"] = {"gen", model_stage(config.intervene.model)};
    deps["report"] = {"eval", "inoculate", "probe"};
    {
        std::string r = key["eval"] + key["inoculate"] + key["probe"];
        if (manifest.up_to_date("intervene", key["intervene"]) || requested.count("intervene")) r += key["intervene"];
        key["report"] = h(r);
    }

    const Context ctx{config, dir, options.log};
    using StageFn = std::vector<std::string> (*)(const Context&);
    const std::map<std::string, StageFn> fns{{"gen", stage_gen},         {"train", stage_train},
                                             {"eval", stage_eval},       {"inoculate", stage_inoculate},
                                             {"probe", stage_probe},     {"intervene", stage_intervene},
                                             {"report", stage_report}};

    for (const auto& name : names) {
        if (!requested.count(name)) continue;
        if (!options.force && manifest.up_to_date(name, key[name])) {
            ctx.say("[" + name + "] up to date, skipped");
            continue;
        }
        for (const auto& d : deps[name]) {
            if (!manifest.up_to_date(d, key[d])) {
                throw StageError("stage '" + name + "' needs stage '" + d + "', which has not run for this config");
            }
        }
        ctx.say("[" + name + "] running");
        auto& rec = manifest.stages[name];
        rec = StageRecord{};
        rec.key = key[name];
        const auto t0 = std::chrono::steady_clock::now();
        try {
            rec.artifacts = fns.at(name)(ctx);
        } catch (const std::exception& e) {
            rec.error = e.what();
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            manifest.save(manifest_path);
            throw;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.complete = true;
        manifest.save(manifest_path);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", rec.seconds);
        ctx.say("[" + name + "] done in " + buf + " s");
    }
    return manifest;
}

}  // namespace monli
