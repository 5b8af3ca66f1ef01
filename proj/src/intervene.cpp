#include "monli/intervene.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "monli/oracle.hpp"

namespace monli {

InterchangeResult make_result(std::uint32_t i, std::uint32_t j, Location loc, Label patched, Label unpatched,
                              Label oracle) {
    InterchangeResult r;
    r.i = i;
    r.j = j;
    r.location = loc;
    r.patched = patched;
    r.unpatched = unpatched;
    r.oracle = oracle;
    r.match = patched == oracle;
    r.causal = patched != unpatched;
    return r;
}

InterchangeResult run_interchange(const Model& model, const NLIExample& recipient, const NLIExample& donor,
                                  Location loc, std::uint32_t i, std::uint32_t j) {
    const auto [donor_label, donor_rec] = forward(model, donor);
    ForwardTrace trace;
    model.run(encode(recipient, model.config()), trace);
    const Label patched = model.run_patched(trace, loc, donor_rec.at(loc));
    return make_result(i, j, loc, patched, trace.label(), relation_to_label(interv_oracle(recipient, donor)));
}

ModelSource::ModelSource(const Model& model, std::span<const NLIExample> examples)
    : model_(model), examples_(examples) {
    records_.reserve(examples.size());
    for (const auto& e : examples) records_.push_back(forward(model, e).second);
}

Label ModelSource::patched(std::size_t i, std::size_t j, Location loc) const {
    if (cached_ != i) {
        model_.run(encode(examples_[i], model_.config()), trace_);
        cached_ = i;
    }
    return model_.run_patched(trace_, loc, records_.at(j).at(loc));
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv(std::string_view s, std::uint64_t h) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::uint64_t sweep_fingerprint(const Model& model, std::span<const NLIExample> examples, Location loc,
                                const std::string& filter_tag) {
    std::uint64_t h = fnv(std::to_string(model.checksum()), 1469598103934665603ull);
    h = fnv(loc.to_string(), h);
    h = fnv(filter_tag, h);
    for (const auto& e : examples) {
        h = fnv(e.pair_id, h);
        h = fnv(join_tokens(e.premise) + "|" + join_tokens(e.hypothesis), h);
    }
    return h;
}

SweepSummary sweep(const Model& model, std::span<const NLIExample> examples, Location loc,
                   const std::filesystem::path& log, const SweepOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    if (loc.row < 1 || loc.row > model.config().rows) throw ConfigError("sweep location row out of range");
    if (examples.size() > std::numeric_limits<std::uint32_t>::max()) throw ConfigError("too many examples");
    const std::size_t n = examples.size();
    const std::uint64_t fp = sweep_fingerprint(model, examples, loc, options.filter_tag);

    SweepSummary summary;
    std::uint64_t bytes = kLogHeaderBytes;
    SweepIndex idx;
    std::error_code ec;
    if (options.resume && std::filesystem::exists(log) && read_sweep_index(log, idx) && idx.fingerprint == fp &&
        idx.recipients <= n && std::filesystem::file_size(log, ec) >= idx.bytes && !ec) {
        summary.resumed_from = idx.recipients;
        bytes = idx.bytes;
        std::filesystem::resize_file(log, bytes, ec);
        if (ec) throw IoError("cannot truncate " + log.string() + ": " + ec.message());
    } else {
        std::ofstream out(log, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot create result log " + log.string());
        unsigned char head[kLogHeaderBytes];
        encode_log_header({static_cast<std::uint32_t>(n), loc, fp}, head);
        out.write(reinterpret_cast<const char*>(head), sizeof head);
        out.flush();
        if (!out) throw IoError("cannot write result log " + log.string());
        write_sweep_index(log, {0, bytes, fp});
    }

    // Donor vectors once per example.
    const auto width = static_cast<std::size_t>(model.config().width);
    std::vector<double> donors(n * width);
    for (std::size_t j = 0; j < n; ++j) {
        const auto rec = forward(model, examples[j]).second;
        const auto v = rec.at(loc);
        std::copy(v.begin(), v.end(), donors.begin() + static_cast<std::ptrdiff_t>(j * width));
    }

    auto process = [&](std::size_t i, ForwardTrace& trace) {
        std::vector<unsigned char> block;
        model.run(encode(examples[i], model.config()), trace);
        const Label unpatched = trace.label();
        for (std::size_t j = 0; j < n; ++j) {
            if (options.filter && !options.filter(i, j)) continue;
            const Label patched = model.run_patched(
                trace, loc, std::span<const double>(donors.data() + j * width, width));
            const auto r = make_result(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), loc, patched,
                                       unpatched, relation_to_label(interv_oracle(examples[i], examples[j])));
            const auto at = block.size();
            block.resize(at + kLogRecordBytes);
            encode_record(r, block.data() + at);
        }
        return block;
    };

    std::ofstream out(log, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to result log " + log.string());
    auto commit = [&](std::size_t i, const std::vector<unsigned char>& block) {
        out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size()));
        out.flush();
        if (!out) throw IoError("write failed on result log " + log.string());
        bytes += block.size();
        summary.results += block.size() / kLogRecordBytes;
        write_sweep_index(log, {i + 1, bytes, fp});
        if (options.on_commit) options.on_commit(i + 1);
    };

    const std::size_t start = summary.resumed_from;
    const unsigned workers = std::max(1u, options.workers);
    if (workers == 1 || n - start < 2) {
        ForwardTrace trace;
        for (std::size_t i = start; i < n; ++i) commit(i, process(i, trace));
    } else {
        const std::size_t capacity = std::max<std::size_t>(1, options.queue_capacity);
        std::mutex mu;
        std::condition_variable cv;
        std::map<std::size_t, std::vector<unsigned char>> ready;
        std::size_t next_write = start;
        std::size_t next_take = start;
        bool stop = false;
        std::exception_ptr failure;

        auto worker = [&] {
            ForwardTrace trace;
            for (;;) {
                std::size_t i;
                {
                    std::unique_lock lock(mu);
                    cv.wait(lock, [&] { return stop || next_take >= n || next_take < next_write + capacity; });
                    if (stop || next_take >= n) return;
                    i = next_take++;
                }
                try {
                    auto block = process(i, trace);
                    std::lock_guard lock(mu);
                    ready.emplace(i, std::move(block));
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                    stop = true;
                }
                cv.notify_all();
            }
        };

        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
        try {
            while (next_write < n) {
                std::vector<unsigned char> block;
                {
                    std::unique_lock lock(mu);
                    cv.wait(lock, [&] { return stop || ready.count(next_write) > 0; });
                    if (stop) break;
                    block = std::move(ready.at(next_write));
                    ready.erase(next_write);
                }
                commit(next_write, block);
                {
                    std::lock_guard lock(mu);
                    ++next_write;
                }
                cv.notify_all();
            }
        } catch (...) {
            {
                std::lock_guard lock(mu);
                stop = true;
            }
            cv.notify_all();
            pool.clear();
            throw;
        }
        pool.clear();
        if (failure) std::rethrow_exception(failure);
    }

    summary.recipients = n;
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return summary;
}

std::vector<InterchangeResult> sweep_pairs(const InterchangeSource& source, std::span<const NLIExample> examples,
                                           std::span<const std::size_t> nodes, Location loc) {
    std::vector<InterchangeResult> out;
    out.reserve(nodes.size() * nodes.size());
    for (auto a : nodes) {
        for (auto b : nodes) {
            out.push_back(make_result(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), loc,
                                      source.patched(a, b, loc), source.unpatched(a),
                                      relation_to_label(interv_oracle(examples[a], examples[b]))));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graphs
// ---------------------------------------------------------------------------

namespace {

std::string describe_missing(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& missing) {
    std::string s = "intervention results incomplete: " + std::to_string(missing.size()) + " ordered pairs missing";
    const std::size_t show = std::min<std::size_t>(missing.size(), 10);
    for (std::size_t k = 0; k < show; ++k) {
        s += k == 0 ? " (" : ", ";
        s += std::to_string(missing[k].first) + "<-" + std::to_string(missing[k].second);
    }
    if (show) s += missing.size() > show ? ", ...)" : ")";
    return s;
}

}  // namespace

IncompleteResultsError::IncompleteResultsError(std::vector<std::pair<std::uint32_t, std::uint32_t>> missing)
    : StageError(describe_missing(missing)), missing_(std::move(missing)) {}

InterventionGraph::InterventionGraph(std::vector<std::uint32_t> nodes, Location location)
    : nodes_(std::move(nodes)), location_(location), adj_(nodes_.size() * nodes_.size(), EdgeKind::None) {}

void InterventionGraph::set_edge(std::size_t a, std::size_t b, EdgeKind k) {
    if (a == b) return;
    adj_[a * nodes_.size() + b] = k;
    adj_[b * nodes_.size() + a] = k;
}

std::size_t InterventionGraph::edge_count() const {
    return static_cast<std::size_t>(std::count_if(adj_.begin(), adj_.end(), [](EdgeKind k) { return k != EdgeKind::None; })) / 2;
}

std::size_t InterventionGraph::causal_edge_count() const {
    return static_cast<std::size_t>(std::count(adj_.begin(), adj_.end(), EdgeKind::Causal)) / 2;
}

InterventionGraph build_graph(std::span<const InterchangeResult> results) {
    std::vector<std::uint32_t> nodes;
    for (const auto& r : results) nodes.push_back(r.i);
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    const std::size_t n = nodes.size();
    auto local = [&](std::uint32_t id) -> std::size_t {
        const auto it = std::lower_bound(nodes.begin(), nodes.end(), id);
        return it != nodes.end() && *it == id ? static_cast<std::size_t>(it - nodes.begin()) : n;
    };

    // bit 0 present, bit 1 match, bit 2 causal
    std::vector<std::uint8_t> cell(n * n, 0);
    Location loc = results.empty() ? Location{} : results.front().location;
    for (const auto& r : results) {
        const auto a = local(r.i), b = local(r.j);
        if (b == n) continue;  // donor that is never a recipient
        cell[a * n + b] = static_cast<std::uint8_t>(1 | (r.match ? 2 : 0) | (r.causal ? 4 : 0));
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> missing;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            if (!(cell[a * n + b] & 1)) missing.emplace_back(nodes[a], nodes[b]);
        }
    }
    if (!missing.empty()) throw IncompleteResultsError(std::move(missing));

    InterventionGraph g(nodes, loc);
    auto match = [&](std::size_t a, std::size_t b) { return (cell[a * n + b] & 2) != 0; };
    auto causal = [&](std::size_t a, std::size_t b) { return (cell[a * n + b] & 4) != 0; };
    for (std::size_t a = 0; a < n; ++a) {
        if (!match(a, a)) continue;
        for (std::size_t b = a + 1; b < n; ++b) {
            if (match(b, b) && match(a, b) && match(b, a)) {
                g.set_edge(a, b, causal(a, b) || causal(b, a) ? EdgeKind::Causal : EdgeKind::Plain);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Location choice
// ---------------------------------------------------------------------------

double causal_clustering(const InterventionGraph& g) {
    const std::size_t n = g.size();
    std::vector<std::size_t> deg(n, 0);
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) deg[a] += g.edge(a, b) != EdgeKind::None;
    }
    double triples = 0.0;
    for (auto d : deg) triples += 0.5 * static_cast<double>(d) * static_cast<double>(d > 0 ? d - 1 : 0);
    if (triples == 0.0) return 0.0;
    std::size_t triangles = 0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            const auto ab = g.edge(a, b);
            if (ab == EdgeKind::None) continue;
            for (std::size_t c = b + 1; c < n; ++c) {
                const auto ac = g.edge(a, c), bc = g.edge(b, c);
                if (ac == EdgeKind::None || bc == EdgeKind::None) continue;
                if (ab == EdgeKind::Causal || ac == EdgeKind::Causal || bc == EdgeKind::Causal) ++triangles;
            }
        }
    }
    return 3.0 * static_cast<double>(triangles) / triples;
}

std::vector<LocationScore> choose_location(const InterchangeSource& source, std::span<const NLIExample> examples,
                                           std::size_t budget, std::uint64_t seed) {
    if (budget < 100) throw ConfigError("location search needs a budget of at least 100 pairs");
    if (source.size() != examples.size()) throw DataError("interchange source does not match the examples");
    std::size_t m = 2;
    while ((m + 1) * m / 2 <= budget) ++m;
    m = std::min(m, examples.size());

    std::vector<std::size_t> nodes(examples.size());
    std::iota(nodes.begin(), nodes.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    nodes.resize(m);
    std::sort(nodes.begin(), nodes.end());

    std::vector<LocationScore> out;
    for (const auto loc : all_locations(source.rows())) {
        const auto results = sweep_pairs(source, examples, nodes, loc);
        const auto g = build_graph(results);
        out.push_back({loc, causal_clustering(g), g.edge_count(), g.causal_edge_count()});
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    return out;
}

std::vector<LocationScore> choose_location(const Model& model, std::span<const NLIExample> examples,
                                           std::size_t budget, std::uint64_t seed) {
    return choose_location(ModelSource(model, examples), examples, budget, seed);
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

void write_dot(std::ostream& out, const InterventionGraph& g, std::span<const NLIExample> examples,
               std::span<const std::uint32_t> members) {
    std::vector<std::size_t> keep;
    for (std::size_t a = 0; a < g.size(); ++a) {
        if (members.empty() || std::find(members.begin(), members.end(), g.nodes()[a]) != members.end()) {
            keep.push_back(a);
        }
    }
    out << "graph intervention {\n";
    out << "  label=\"location " << g.location().to_string() << "\";\n";
    out << "  node [shape=box, fontsize=9];\n";
    for (auto a : keep) {
        const auto id = g.nodes()[a];
        const auto& e = examples[id];
        out << "  n" << id << " [label=\"" << e.w_p << " / " << e.w_h << (e.negated ? " (not)" : "")
            << "\", group=\"" << hyponym_of(e) << "\"];\n";
    }
    for (std::size_t x = 0; x < keep.size(); ++x) {
        for (std::size_t y = x + 1; y < keep.size(); ++y) {
            const auto k = g.edge(keep[x], keep[y]);
            if (k == EdgeKind::None) continue;
            out << "  n" << g.nodes()[keep[x]] << " -- n" << g.nodes()[keep[y]];
            if (k == EdgeKind::Causal) out << " [color=red, penwidth=2]";
            out << ";\n";
        }
    }
    out << "}\n";
}

void write_clique_csv(std::ostream& out, std::span<const CliqueReport> cliques,
                      std::span<const NLIExample> examples) {
    out << "clique,alpha,size,causal_edges,hyponym,example,pair_id,lexrel,negated\n";
    for (std::size_t c = 0; c < cliques.size(); ++c) {
        auto members = cliques[c].members;
        std::stable_sort(members.begin(), members.end(), [&](auto a, auto b) {
            return hyponym_of(examples[a]) < hyponym_of(examples[b]);
        });
        for (auto id : members) {
            const auto& e = examples[id];
            out << c << ',' << cliques[c].alpha << ',' << cliques[c].size() << ',' << cliques[c].causal_edges << ','
                << hyponym_of(e) << ',' << id << ',' << e.pair_id << ',' << to_string(e.lexrel) << ','
                << (e.negated ? 1 : 0) << '\n';
        }
    }
}

}  // namespace monli
