// monli: generate data, train, evaluate, probe and intervene from one config.
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 stage failure, 5 I/O error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "monli/error.hpp"
#include "monli/experiment.hpp"

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kData = 3, kStage = 4, kIo = 5 };

int exit_code(monli::ErrorKind k) {
    switch (k) {
        case monli::ErrorKind::Config: return kConfig;
        case monli::ErrorKind::Data: return kData;
        case monli::ErrorKind::Stage: return kStage;
        case monli::ErrorKind::Io: return kIo;
    }
    return kStage;
}

std::vector<std::string> split_stages(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!part.empty()) out.push_back(part);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monotonicity NLI experiments: data generation, training, probing and interventions"};
    app.require_subcommand(1);

    std::string config_file, out_dir, stages;
    std::vector<std::string> overrides;
    bool force = false;
    auto add_config_options = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_file, "JSON config file (defaults apply to missing keys)");
        cmd->add_option("-s,--set", overrides, "Override a config key, e.g. --set model.width=32");
        cmd->add_option("-o,--out", out_dir, "Output directory (default: $MONLI_OUTPUT_ROOT/default)");
    };

    auto* gen = app.add_subcommand("gen", "Generate datasets and split manifests");
    add_config_options(gen);
    gen->add_flag("-f,--force", force, "Regenerate even if outputs are current");

    auto* run = app.add_subcommand("run", "Run pipeline stages in order");
    add_config_options(run);
    run->add_option("--stages", stages, "Comma-separated subset of gen,train,eval,inoculate,probe,intervene,report");
    run->add_flag("-f,--force", force, "Rerun stages even if current");

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Write report files for a finished run");
    report->add_option("run_dir", run_dir, "Run directory")->required();

    auto* show = app.add_subcommand("config", "Print the fully resolved config");
    add_config_options(show);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }

    try {
        if (*report) {
            monli::write_report(run_dir, &std::cout);
            return kOk;
        }
        if (!out_dir.empty()) overrides.push_back("output_dir=" + nlohmann::json(out_dir).dump());
        const auto config = monli::load_config(config_file, overrides);
        if (*show) {
            std::cout << monli::to_json(config).dump(2) << '\n';
            return kOk;
        }
        monli::RunOptions opts;
        opts.force = force;
        opts.log = &std::cout;
        opts.stages = *gen ? std::vector<std::string>{"gen"} : split_stages(stages);
        monli::run_pipeline(config, opts);
        return kOk;
    } catch (const monli::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStage;
    }
}
