#include <cstdio>
#include <fstream>
#include <ostream>

#include "monli/error.hpp"
#include "monli/experiment.hpp"
#include "monli/intervene.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace monli {

namespace {

constexpr const char* kPlotScript = R"PY(#!/usr/bin/env python3
# Plots for a monli report directory. Needs pandas and matplotlib.
# usage: python3 plot_results.py [report_dir]
import sys
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

d = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).parent)

probe = pd.read_csv(d / "probe.csv")
for target, rows in probe.groupby("target"):
    grid = rows.pivot(index="location_role", columns="location_row", values="selectivity")
    fig, ax = plt.subplots(figsize=(6, 2.2))
    im = ax.imshow(grid.values, vmin=-0.1, vmax=0.5, cmap="viridis")
    ax.set_xticks(range(grid.shape[1]), grid.columns)
    ax.set_yticks(range(grid.shape[0]), grid.index)
    ax.set_xlabel("row")
    ax.set_title(f"probe selectivity: {target}")
    fig.colorbar(im)
    fig.savefig(d / f"probe_{target}.png", bbox_inches="tight")

curve = pd.read_csv(d / "inoculation.csv")
sel = curve[curve.selected == 1]
fig, ax = plt.subplots()
ax.plot(sel.amount, sel.original_accuracy, marker="o", label="original (IID test)")
ax.plot(sel.amount, sel.challenge_accuracy, marker="o", label="challenge (negated test)")
ax.set_xscale("symlog")
ax.set_xlabel("challenge examples used")
ax.set_ylabel("accuracy")
ax.legend()
fig.savefig(d / "inoculation.png", bbox_inches="tight")
)PY";

void require(const fs::path& dir, const char* rel, const char* stage) {
    if (!fs::exists(dir / rel)) {
        throw StageError("report needs the '" + std::string(stage) + "' stage: missing " + (dir / rel).string());
    }
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("cannot parse " + path.string() + ": " + e.what());
    }
}

void copy_artifact(const fs::path& from, const fs::path& to) {
    std::error_code ec;
    fs::copy_file(from, to, fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("cannot copy " + from.string() + ": " + ec.message());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

void write_report(const fs::path& run_dir, std::ostream* log) {
    require(run_dir, artifacts::kEval, "eval");
    require(run_dir, artifacts::kInoculated, "inoculate");
    require(run_dir, artifacts::kCurve, "inoculate");
    require(run_dir, artifacts::kProbe, "probe");
    const fs::path out = run_dir / "report";
    fs::create_directories(out);
    std::ofstream summary(out / "summary.txt");
    if (!summary) throw IoError("cannot write " + (out / "summary.txt").string());

    // (a) behavioural table
    {
        std::ofstream t(out / "table1.csv");
        t << "condition,dataset,examples,accuracy\n";
        summary << "Behavioural evaluation\n";
        for (const char* rel : {artifacts::kEval, artifacts::kInoculated}) {
            const auto j = read_json(run_dir / rel);
            const auto cond = j.at("condition").get<std::string>();
            summary << "  " << cond << ":";
            for (const auto& [name, acc] : j.at("accuracy").items()) {
                t << cond << ',' << name << ',' << j.at("count").at(name).get<std::size_t>() << ','
                  << fmt("%.6f", acc.get<double>()) << '\n';
                summary << "  " << name << ' ' << fmt("%.3f", acc.get<double>());
            }
            summary << '\n';
            if (j.contains("selected")) {
                const auto& s = j.at("selected");
                summary << "  selected inoculation point: " << s.at("amount").get<std::size_t>()
                        << " challenge examples, lr " << s.at("learning_rate").get<double>() << ", replay "
                        << s.at("replay").get<double>() << '\n';
            }
        }
        if (!t) throw IoError("cannot write table1.csv");
    }

    // (b) probes, (c) inoculation curve
    copy_artifact(run_dir / artifacts::kProbe, out / "probe.csv");
    copy_artifact(run_dir / artifacts::kCurve, out / "inoculation.csv");
    {
        const auto probes = read_probe_csv(run_dir / artifacts::kProbe);
        summary << "\nProbes (task / control / selectivity)\n";
        for (const auto& r : probes) {
            summary << "  " << r.location.to_string() << ' ' << to_string(r.target) << "  "
                    << fmt("%.3f", r.task_accuracy) << " / " << fmt("%.3f", r.control_accuracy) << " / "
                    << fmt("%+.3f", r.selectivity) << '\n';
        }
    }

    // (d), (e) interventions
    if (!fs::exists(run_dir / artifacts::kCliques)) {
        summary << "\nInterventions: omitted (the intervene stage has not run), so no clique CSV or graph.\n";
    } else {
        const auto doc = read_json(run_dir / artifacts::kCliques);
        const auto examples = read_jsonl(run_dir / artifacts::kSubset);
        const auto n = doc.at("examples").get<std::size_t>();
        summary << "\nInterventions over " << n << " examples\n";
        bool first = true;
        for (const auto& entry : doc.at("locations")) {
            const auto loc = Location::parse(entry.at("location").get<std::string>());
            const auto results = read_result_log(run_dir / entry.at("log").get<std::string>()).results;
            const auto graph = build_graph(results);
            const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n > 0 ? n - 1 : 0);
            const double density = pairs > 0 ? static_cast<double>(graph.edge_count()) / pairs : 0.0;
            summary << "  location " << loc.to_string() << ": " << graph.edge_count() << " edges ("
                    << graph.causal_edge_count() << " causal), density " << fmt("%.3f", density) << '\n';

            // Cliques from the alpha that produced the largest one.
            const int best_alpha = entry.at("best").at("alpha").get<int>();
            std::vector<CliqueReport> cliques;
            for (const auto& a : entry.at("alphas")) {
                if (a.at("alpha").get<int>() != best_alpha) continue;
                for (const auto& q : a.at("cliques")) {
                    CliqueReport r;
                    r.alpha = best_alpha;
                    r.members = q.at("members").get<std::vector<std::uint32_t>>();
                    r.causal_edges = q.at("causal_edges").get<std::size_t>();
                    cliques.push_back(std::move(r));
                }
            }
            if (cliques.empty()) summary << "    no clique with a causal edge for any alpha\n";
            std::vector<std::uint32_t> members;
            for (std::size_t c = 0; c < cliques.size(); ++c) {
                const auto& q = cliques[c];
                if (!verify_clique(q.members, results)) {
                    throw StageError("clique " + std::to_string(c) + " at " + loc.to_string() + " is not a clique");
                }
                members.insert(members.end(), q.members.begin(), q.members.end());
                summary << "    clique " << c << " (alpha " << q.alpha << "): size " << q.size() << ", "
                        << q.causal_edges << " causal edges, verified; expected count in G(n, 0.5): "
                        << fmt("%.3g", expected_cliques(n, q.size(), 0.5));
                if (density > 0.0 && density < 1.0) {
                    summary << ", in G(n, " << fmt("%.3f", density)
                            << "): " << fmt("%.3g", expected_cliques(n, q.size(), density));
                }
                summary << '\n';
            }
            const std::string suffix = first ? "" : "_r" + std::to_string(loc.row) + "_" + std::string(to_string(loc.role));
            std::ofstream csv(out / ("cliques" + suffix + ".csv"));
            write_clique_csv(csv, cliques, examples);
            std::ofstream dot(out / ("graph" + suffix + ".dot"));
            write_dot(dot, graph, examples, members);
            if (!csv || !dot) throw IoError("cannot write clique outputs");
            first = false;
        }
    }

    std::ofstream script(out / "plot_results.py");
    script << kPlotScript;
    if (!summary || !script) throw IoError("cannot write report files in " + out.string());
    if (log) *log << "report written to " << out.string() << '\n';
}

}  // namespace monli
