#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtsr/backend.hpp"
#include "dtsr/controller.hpp"
#include "dtsr/gateway.hpp"
#include "dtsr/harness.hpp"
#include "dtsr/oracle.hpp"
#include "dtsr/signal_matcher.hpp"

namespace {

struct CommonOptions {
    std::string backend_spec;
    std::string check_backend_spec;
    std::string patterns_path;
    dtsr::ControllerConfig config;
    std::optional<std::int64_t> seed;

    void add_flags(CLI::App* cmd, bool with_backend = true) {
        if (with_backend) {
            cmd->add_option("--backend", backend_spec,
                            "Backend: an HTTP base URL or mock:<script.json> "
                            "(default: $DTSR_BACKEND_URL)");
            cmd->add_option("--check-backend", check_backend_spec,
                            "Separate backend for sufficiency checks (default: same)");
        }
        cmd->add_option("--tau", config.tau, "Sufficiency threshold (default 100)");
        cmd->add_option("--k", config.k, "Minimum tokens between checks (default 64)");
        cmd->add_option("--max-len", config.max_len, "Generation budget in tokens");
        cmd->add_option("--conclusion-reserve", config.conclusion_reserve,
                        "Tokens reserved for a forced conclusion");
        cmd->add_option("--check-max-tokens", config.check_max_tokens,
                        "Token cap for check replies");
        cmd->add_option("--temperature", config.temperature, "Main decode temperature");
        cmd->add_option("--top-p", config.top_p, "Main decode top-p");
        cmd->add_option("--system", config.system_prompt, "System prompt override");
        cmd->add_option("--seed", seed, "Decode seed");
        cmd->add_option("--patterns", patterns_path,
                        "JSON array of reflection-signal literals");
    }

    dtsr::ControllerConfig build_config() {
        dtsr::ControllerConfig cfg = config;
        cfg.seed = seed;
        if (!patterns_path.empty()) {
            std::ifstream in(patterns_path);
            if (!in) {
                throw dtsr::Error(dtsr::ErrorKind::io, "cannot open " + patterns_path);
            }
            std::ostringstream buf;
            buf << in.rdbuf();
            cfg.signal_patterns = dtsr::SignalMatcher::patterns_from_json(buf.str());
        }
        return cfg;
    }

    std::unique_ptr<dtsr::Backend> make_main() { return dtsr::make_backend(backend_spec); }
    std::unique_ptr<dtsr::Backend> make_check() {
        return check_backend_spec.empty() ? nullptr : dtsr::make_backend(check_backend_spec);
    }
};

struct PolicyOptions {
    std::string name = "dtsr";
    std::int64_t probe_interval = 256;
    std::int64_t probe_window = 3;
    double conf_threshold = 0.95;

    void add_flags(CLI::App* cmd) {
        cmd->add_option("--policy", name,
                        "vanilla|dtsr|dtsr1|nothinking|budget_force|probe|deer|deer1|deer2|nowait");
        cmd->add_option("--probe-interval", probe_interval, "answer_probe token interval");
        cmd->add_option("--probe-window", probe_window, "answer_probe consistency window");
        cmd->add_option("--conf-threshold", conf_threshold, "entropy-exit confidence threshold");
    }

    dtsr::ExitPolicy build() const {
        dtsr::ExitPolicy policy = dtsr::ExitPolicy::from_name(name);
        policy.probe_interval = probe_interval;
        policy.probe_window = probe_window;
        policy.conf_threshold = conf_threshold;
        return policy;
    }
};

std::vector<std::string> split_csv(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

int cmd_run(CommonOptions& common, PolicyOptions& policy_opts, const std::string& question,
            const std::string& question_id, const std::string& records_path) {
    const auto backend = common.make_main();
    const auto check = common.make_check();
    const dtsr::RunRecord record =
        dtsr::run(question, policy_opts.build(), common.build_config(), *backend, check.get(),
                  question_id.empty() ? "cli" : question_id);
    std::cout << record.to_json_string(/*pretty=*/true) << "\n";
    if (!records_path.empty()) {
        std::ofstream out(records_path, std::ios::app);
        out << record.to_json_string() << "\n";
    }
    return 0;
}

int cmd_bench(CommonOptions& common, const std::string& dataset_path,
              const std::string& policies_csv, int seeds, int parallelism,
              const std::string& records_path, const std::string& out_prefix) {
    dtsr::BenchConfig config;
    config.samples = dtsr::load_dataset(dataset_path);
    for (const auto& name : split_csv(policies_csv)) {
        config.policies.push_back(dtsr::ExitPolicy::from_name(name));
    }
    config.controller = common.build_config();
    config.seeds = seeds;
    config.parallelism = parallelism;
    config.records_path = records_path;

    const auto backend = common.make_main();
    const auto check = common.make_check();
    const dtsr::Report report = dtsr::run_bench(config, *backend, check.get());

    std::cout << dtsr::render_report(report, dtsr::ReportFormat::markdown);
    if (!out_prefix.empty()) {
        dtsr::emit_report(report, dtsr::ReportFormat::csv, out_prefix + ".csv");
        dtsr::emit_report(report, dtsr::ReportFormat::json, out_prefix + ".json");
        dtsr::emit_report(report, dtsr::ReportFormat::markdown, out_prefix + ".md");
    }
    return 0;
}

int cmd_sweep(CommonOptions& common, const std::string& dataset_path,
              const std::string& policies_csv, const std::string& axis,
              const std::string& values_csv, int seeds, int parallelism,
              const std::string& records_path, const std::string& csv_path) {
    dtsr::BenchConfig config;
    config.samples = dtsr::load_dataset(dataset_path);
    for (const auto& name : split_csv(policies_csv)) {
        config.policies.push_back(dtsr::ExitPolicy::from_name(name));
    }
    config.controller = common.build_config();
    config.seeds = seeds;
    config.parallelism = parallelism;
    config.records_path = records_path;
    config.sweep_axis = dtsr::sweep_axis_from_string(axis);
    for (const auto& v : split_csv(values_csv)) {
        config.sweep_values.push_back(std::stod(v));
    }

    const auto backend = common.make_main();
    const auto check = common.make_check();
    const auto reports = dtsr::sweep(config, *backend, check.get());
    const std::string csv = dtsr::render_sweep_csv(reports);
    std::cout << csv;
    if (!csv_path.empty()) {
        std::ofstream out(csv_path, std::ios::trunc);
        if (!out) {
            throw dtsr::Error(dtsr::ErrorKind::io, "cannot write " + csv_path);
        }
        out << csv;
    }
    return 0;
}

int cmd_oracle(CommonOptions& common, const std::string& records_path,
               const std::string& dataset_path, const std::string& out_path,
               const std::string& gap_csv_path) {
    const auto samples = dtsr::load_dataset(dataset_path);
    const auto runs = dtsr::load_bench_runs(records_path);
    const auto backend = common.make_main();
    const dtsr::ControllerConfig config = common.build_config();

    std::map<std::string, const dtsr::Sample*> by_id;
    for (const auto& s : samples) {
        by_id[s.id] = &s;
    }

    std::vector<dtsr::OptimalExit> oracles;
    std::set<std::string> done;
    std::size_t skipped = 0;
    for (const auto& run : runs) {
        if (run.failed || done.count(run.sample_id) != 0) {
            continue;
        }
        const auto it = by_id.find(run.sample_id);
        if (it == by_id.end()) {
            ++skipped;
            continue;
        }
        oracles.push_back(find_optimal_exit(*it->second, run.record, *backend, config));
        done.insert(run.sample_id);
    }

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::trunc);
        if (!file) {
            throw dtsr::Error(dtsr::ErrorKind::io, "cannot write " + out_path);
        }
        out = &file;
    }
    for (const auto& oracle : oracles) {
        *out << oracle.to_json_string() << "\n";
    }

    const dtsr::GapSummary summary = dtsr::gap_report(runs, oracles);
    std::cerr << "samples without dataset rows: " << skipped
              << ", runs without oracle pairs: " << summary.missing_pairs << "\n";
    const std::string csv = summary.to_csv();
    if (!gap_csv_path.empty()) {
        std::ofstream gap(gap_csv_path, std::ios::trunc);
        if (!gap) {
            throw dtsr::Error(dtsr::ErrorKind::io, "cannot write " + gap_csv_path);
        }
        gap << csv;
    } else {
        std::cout << csv;
    }
    return 0;
}

int cmd_replay(CommonOptions& common, PolicyOptions& policy_opts, const std::string& script_path,
               const std::string& expected_path, const std::string& question,
               const std::string& question_id) {
    common.backend_spec = "mock:" + script_path;
    const auto backend = common.make_main();
    const dtsr::RunRecord actual =
        dtsr::run(question, policy_opts.build(), common.build_config(), *backend, nullptr,
                  question_id.empty() ? "replay" : question_id);

    std::ifstream in(expected_path);
    if (!in) {
        throw dtsr::Error(dtsr::ErrorKind::io, "cannot open " + expected_path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const nlohmann::json expected = nlohmann::json::parse(buf.str());
    const nlohmann::json got = nlohmann::json::parse(actual.to_json_string());

    if (expected == got) {
        std::cout << "replay: identical (" << got.value("check_events", nlohmann::json::array()).size()
                  << " check events)\n";
        return 0;
    }
    std::cout << "replay: MISMATCH\n";
    for (auto it = expected.begin(); it != expected.end(); ++it) {
        if (!got.contains(it.key()) || got.at(it.key()) != it.value()) {
            std::cout << "  field '" << it.key() << "'\n    expected: " << it.value().dump()
                      << "\n    got:      "
                      << (got.contains(it.key()) ? got.at(it.key()).dump() : "<missing>") << "\n";
        }
    }
    for (auto it = got.begin(); it != got.end(); ++it) {
        if (!expected.contains(it.key())) {
            std::cout << "  unexpected field '" << it.key() << "': " << it.value().dump() << "\n";
        }
    }
    return 1;
}

int cmd_serve(CommonOptions& common, PolicyOptions& policy_opts, const std::string& config_path,
              const std::string& listen, bool no_overrides) {
    dtsr::GatewayConfig config;
    if (!config_path.empty()) {
        config = dtsr::GatewayConfig::from_json_file(config_path);
    }
    config.apply_env();
    if (!common.backend_spec.empty()) {
        config.backend_url = common.backend_spec;
    }
    if (!common.check_backend_spec.empty()) {
        config.check_backend_url = common.check_backend_spec;
    }
    if (!listen.empty()) {
        const auto colon = listen.rfind(':');
        config.listen_host = listen.substr(0, colon);
        config.listen_port = colon == std::string::npos ? 8080 : std::atoi(listen.c_str() + colon + 1);
    }
    if (policy_opts.name != "dtsr") {
        config.default_policy = policy_opts.build();
    }
    if (no_overrides) {
        config.allow_overrides = false;
    }
    // flag-level controller overrides win over file and env
    config.controller = common.build_config();

    const auto backend = dtsr::make_backend(config.backend_url);
    std::unique_ptr<dtsr::Backend> check;
    if (!config.check_backend_url.empty() && config.check_backend_url != config.backend_url) {
        check = dtsr::make_backend(config.check_backend_url);
    }

    dtsr::GatewayServer server(config, *backend, check.get());
    server.start();
    std::cout << "dtsr gateway listening on " << config.listen_host << ":" << server.port()
              << " (backend: " << config.backend_url << ")\n";
    server.wait();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Early-exit reasoning controller: run, benchmark, and serve exit policies"};
    app.require_subcommand(1);

    CommonOptions common;
    PolicyOptions policy_opts;

    // run
    auto* run_cmd = app.add_subcommand("run", "Run one question through a policy");
    std::string question;
    std::string question_id;
    std::string run_records;
    run_cmd->add_option("--question,-q", question, "Question text")->required();
    run_cmd->add_option("--id", question_id, "Question id for the record");
    run_cmd->add_option("--records", run_records, "Append the RunRecord to this JSONL file");
    policy_opts.add_flags(run_cmd);
    common.add_flags(run_cmd);

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Run a dataset across policies and seeds");
    std::string dataset_path;
    std::string policies_csv = "vanilla,dtsr";
    int seeds = 3;
    int parallelism = 4;
    std::string bench_records;
    std::string out_prefix;
    bench_cmd->add_option("--dataset", dataset_path, "JSONL dataset")->required();
    bench_cmd->add_option("--policies", policies_csv, "Comma-separated policy names");
    bench_cmd->add_option("--seeds", seeds, "Seeds per sample (default 3)");
    bench_cmd->add_option("--parallelism", parallelism, "Worker threads");
    bench_cmd->add_option("--records", bench_records, "Persist RunRecords to this JSONL file");
    bench_cmd->add_option("--out-prefix", out_prefix, "Write report.{csv,json,md} here");
    common.add_flags(bench_cmd);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "Sweep budget, k, or tau over a dataset");
    std::string axis;
    std::string values_csv;
    std::string sweep_dataset;
    std::string sweep_policies = "dtsr";
    int sweep_seeds = 1;
    int sweep_parallelism = 4;
    std::string sweep_records;
    std::string sweep_csv_path;
    sweep_cmd->add_option("--axis", axis, "budget|k|tau")->required();
    sweep_cmd->add_option("--values", values_csv, "Comma-separated axis values")->required();
    sweep_cmd->add_option("--dataset", sweep_dataset, "JSONL dataset")->required();
    sweep_cmd->add_option("--policies", sweep_policies, "Comma-separated policy names");
    sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds per sample");
    sweep_cmd->add_option("--parallelism", sweep_parallelism, "Worker threads");
    sweep_cmd->add_option("--records", sweep_records, "Persist RunRecords to this JSONL file");
    sweep_cmd->add_option("--csv", sweep_csv_path, "Write the tidy sweep CSV here");
    common.add_flags(sweep_cmd);

    // oracle
    auto* oracle_cmd =
        app.add_subcommand("oracle", "Find optimal exit points for recorded runs");
    std::string oracle_records;
    std::string oracle_dataset;
    std::string oracle_out;
    std::string gap_csv;
    oracle_cmd->add_option("--records", oracle_records, "Bench run JSONL")->required();
    oracle_cmd->add_option("--dataset", oracle_dataset, "JSONL dataset")->required();
    oracle_cmd->add_option("--out", oracle_out, "Write OptimalExit JSONL here");
    oracle_cmd->add_option("--gap-csv", gap_csv, "Write the per-policy gap summary here");
    common.add_flags(oracle_cmd);

    // replay
    auto* replay_cmd =
        app.add_subcommand("replay", "Re-execute a golden script and diff the RunRecord");
    std::string script_path;
    std::string expected_path;
    std::string replay_question;
    std::string replay_id;
    replay_cmd->add_option("--script", script_path, "Mock script JSON")->required();
    replay_cmd->add_option("--expected", expected_path, "Expected RunRecord JSON")->required();
    replay_cmd->add_option("--question,-q", replay_question, "Question text")->required();
    replay_cmd->add_option("--id", replay_id, "Question id");
    policy_opts.add_flags(replay_cmd);
    common.add_flags(replay_cmd, /*with_backend=*/false);

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Run the chat-completions gateway");
    std::string config_path;
    std::string listen;
    bool no_overrides = false;
    serve_cmd->add_option("--config", config_path, "Gateway config JSON");
    serve_cmd->add_option("--listen", listen, "host:port (default 127.0.0.1:8080)");
    serve_cmd->add_flag("--no-overrides", no_overrides, "Reject per-request dtsr overrides");
    policy_opts.add_flags(serve_cmd);
    common.add_flags(serve_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        std::cerr << e.what() << "\n\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (run_cmd->parsed()) {
            return cmd_run(common, policy_opts, question, question_id, run_records);
        }
        if (bench_cmd->parsed()) {
            return cmd_bench(common, dataset_path, policies_csv, seeds, parallelism,
                             bench_records, out_prefix);
        }
        if (sweep_cmd->parsed()) {
            return cmd_sweep(common, sweep_dataset, sweep_policies, axis, values_csv, sweep_seeds,
                             sweep_parallelism, sweep_records, sweep_csv_path);
        }
        if (oracle_cmd->parsed()) {
            return cmd_oracle(common, oracle_records, oracle_dataset, oracle_out, gap_csv);
        }
        if (replay_cmd->parsed()) {
            return cmd_replay(common, policy_opts, script_path, expected_path, replay_question,
                              replay_id);
        }
        if (serve_cmd->parsed()) {
            return cmd_serve(common, policy_opts, config_path, listen, no_overrides);
        }
    } catch (const dtsr::RunError& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        std::cerr << "partial record:\n" << e.partial_record.to_json_string(true) << "\n";
        return 1;
    } catch (const dtsr::Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
