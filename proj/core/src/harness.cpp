#include "dtsr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace dtsr {

const char* to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::budget: return "budget";
        case SweepAxis::k:      return "k";
        case SweepAxis::tau:    return "tau";
    }
    return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "budget") return SweepAxis::budget;
    if (s == "k") return SweepAxis::k;
    if (s == "tau") return SweepAxis::tau;
    throw Error(ErrorKind::config, "unknown sweep axis '" + s + "'");
}

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "markdown" || s == "md" || s == "markdown-table") return ReportFormat::markdown;
    throw Error(ErrorKind::config, "unknown report format '" + s + "'");
}

void BenchConfig::validate() const {
    if (samples.empty()) {
        throw Error(ErrorKind::config, "bench: empty dataset");
    }
    if (policies.empty()) {
        throw Error(ErrorKind::config, "bench: no policies");
    }
    if (seeds < 1) {
        throw Error(ErrorKind::config, "bench: seeds must be >= 1");
    }
    if (parallelism < 1) {
        throw Error(ErrorKind::config, "bench: parallelism must be >= 1");
    }
    if (sweep_axis) {
        if (sweep_values.empty()) {
            throw Error(ErrorKind::config, "sweep: no values");
        }
        for (std::size_t i = 1; i < sweep_values.size(); ++i) {
            if (sweep_values[i] <= sweep_values[i - 1]) {
                throw Error(ErrorKind::config, "sweep: values must be strictly increasing");
            }
        }
    }
    controller.validate();
    for (const auto& p : policies) {
        p.validate();
    }
}

std::string BenchRun::to_json_string() const {
    nlohmann::json j{
        {"sample_id", sample_id}, {"policy", policy},   {"seed", seed},
        {"failed", failed},       {"error", error},     {"correct", correct},
        {"record", nlohmann::json::parse(record.to_json_string())},
    };
    if (sweep_value) {
        j["sweep_value"] = *sweep_value;
    }
    return j.dump();
}

BenchRun BenchRun::from_json_string(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, std::string("bench run: ") + e.what());
    }
    BenchRun run;
    run.sample_id = j.value("sample_id", std::string());
    run.policy = j.value("policy", std::string());
    run.seed = j.value("seed", 0);
    run.failed = j.value("failed", false);
    run.error = j.value("error", std::string());
    run.correct = j.value("correct", false);
    if (j.contains("sweep_value")) {
        run.sweep_value = j.at("sweep_value").get<double>();
    }
    if (j.contains("record")) {
        run.record = RunRecord::from_json_string(j.at("record").dump());
    }
    return run;
}

namespace {

std::int64_t percentile(std::vector<std::int64_t> values, double p) {
    if (values.empty()) {
        return 0;
    }
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(
        std::ceil(p * static_cast<double>(values.size())));
    return values[std::min(values.size() - 1, rank == 0 ? 0 : rank - 1)];
}

ReportRow aggregate_policy(const std::string& policy,
                           const std::vector<const BenchRun*>& runs,
                           std::optional<SweepAxis> axis,
                           std::optional<double> axis_value) {
    ReportRow row;
    row.policy = policy;
    row.axis = axis;
    row.axis_value = axis_value;

    std::map<std::string, std::vector<const BenchRun*>> by_sample;
    for (const auto* run : runs) {
        by_sample[run->sample_id].push_back(run);
    }

    double acc_sum = 0.0;
    double tok_sum = 0.0;
    double checks_sum = 0.0;
    double overhead_sum = 0.0;
    std::int64_t ok_runs = 0;
    std::vector<std::int64_t> latencies;

    for (const auto& [sample_id, sample_runs] : by_sample) {
        (void)sample_id;
        std::int64_t succeeded = 0;
        std::int64_t correct = 0;
        for (const auto* run : sample_runs) {
            if (run->failed) {
                continue;
            }
            ++succeeded;
            correct += run->correct ? 1 : 0;
            tok_sum += static_cast<double>(run->record.tokens_main);
            checks_sum += static_cast<double>(run->record.check_events.size());
            overhead_sum += static_cast<double>(run->record.tokens_check_overhead);
            latencies.push_back(run->record.wall_latency_us);
        }
        if (succeeded == 0) {
            ++row.failed_samples;
            continue;
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(succeeded);  // pass@1
        ++row.n_samples;
        ok_runs += succeeded;
    }

    if (row.n_samples > 0) {
        row.acc_mean = acc_sum / static_cast<double>(row.n_samples);
    }
    if (ok_runs > 0) {
        row.tok_mean = tok_sum / static_cast<double>(ok_runs);
        row.checks_mean = checks_sum / static_cast<double>(ok_runs);
        row.overhead_tokens_mean = overhead_sum / static_cast<double>(ok_runs);
    }
    row.latency_p50_us = percentile(latencies, 0.50);
    row.latency_p95_us = percentile(latencies, 0.95);
    return row;
}

Report aggregate(const std::vector<BenchRun>& runs, const std::vector<ExitPolicy>& policies,
                 std::optional<SweepAxis> axis, std::optional<double> axis_value) {
    Report report;
    for (const auto& policy : policies) {
        const std::string name = policy.name();
        std::vector<const BenchRun*> selected;
        for (const auto& run : runs) {
            if (run.policy == name && run.sweep_value == axis_value) {
                selected.push_back(&run);
            }
        }
        report.rows.push_back(aggregate_policy(name, selected, axis, axis_value));
    }
    return report;
}

std::vector<BenchRun> execute_runs(const BenchConfig& config, Backend& backend,
                                   Backend* check_backend,
                                   std::optional<double> sweep_value) {
    struct Task {
        const Sample* sample;
        const ExitPolicy* policy;
        int seed;
    };
    std::vector<Task> tasks;
    for (const auto& policy : config.policies) {
        for (const auto& sample : config.samples) {
            for (int seed = 0; seed < config.seeds; ++seed) {
                tasks.push_back({&sample, &policy, seed});
            }
        }
    }

    std::vector<BenchRun> results(tasks.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
            const Task& task = tasks[i];
            BenchRun& out = results[i];
            out.sample_id = task.sample->id;
            out.policy = task.policy->name();
            out.seed = task.seed;
            out.sweep_value = sweep_value;

            ControllerConfig cfg = config.controller;
            cfg.seed = task.seed;
            try {
                out.record = run(task.sample->question, *task.policy, cfg, backend,
                                 check_backend, task.sample->id);
                const std::string& src =
                    out.record.conclusion.empty() ? out.record.trace : out.record.conclusion;
                const std::string pred = extract_answer(src, task.sample->task_kind);
                out.correct = grade(pred, task.sample->gold_answer, task.sample->task_kind);
            } catch (const RunError& e) {
                out.failed = true;
                out.error = e.what();
                out.record = e.partial_record;
            } catch (const Error& e) {
                out.failed = true;
                out.error = e.what();
            }
        }
    };

    const int workers = std::max(1, std::min<int>(config.parallelism,
                                                  static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    return results;
}

void persist_runs(const std::vector<BenchRun>& runs, const std::string& path, bool append) {
    if (path.empty()) {
        return;
    }
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write run records to " + path);
    }
    for (const auto& run : runs) {
        out << run.to_json_string() << "\n";
    }
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

}  // namespace

Report run_bench(const BenchConfig& config, Backend& backend, Backend* check_backend) {
    config.validate();
    const auto runs = execute_runs(config, backend, check_backend, std::nullopt);
    persist_runs(runs, config.records_path, /*append=*/false);
    Report report = aggregate(runs, config.policies, std::nullopt, std::nullopt);
    report.records_path = config.records_path;
    return report;
}

std::vector<Report> sweep(const BenchConfig& config, Backend& backend, Backend* check_backend) {
    config.validate();
    if (!config.sweep_axis) {
        throw Error(ErrorKind::config, "sweep: no axis configured");
    }

    std::vector<Report> reports;
    bool first = true;
    for (const double value : config.sweep_values) {
        BenchConfig point = config;
        switch (*config.sweep_axis) {
            case SweepAxis::budget:
                point.controller.max_len = static_cast<std::int64_t>(value);
                break;
            case SweepAxis::k:
                point.controller.k = static_cast<std::int64_t>(value);
                break;
            case SweepAxis::tau:
                point.controller.tau = value;
                break;
        }
        point.controller.validate();
        const auto runs = execute_runs(point, backend, check_backend, value);
        persist_runs(runs, config.records_path, /*append=*/!first);
        first = false;
        Report report = aggregate(runs, config.policies, config.sweep_axis, value);
        report.records_path = config.records_path;
        reports.push_back(std::move(report));
    }
    return reports;
}

Report report_from_runs(const std::vector<BenchRun>& runs) {
    // Rebuild policy/sweep groupings from the persisted rows themselves.
    std::vector<std::pair<std::string, std::optional<double>>> groups;
    for (const auto& run : runs) {
        const auto key = std::make_pair(run.policy, run.sweep_value);
        if (std::find(groups.begin(), groups.end(), key) == groups.end()) {
            groups.push_back(key);
        }
    }
    Report report;
    for (const auto& [policy, value] : groups) {
        std::vector<const BenchRun*> selected;
        for (const auto& run : runs) {
            if (run.policy == policy && run.sweep_value == value) {
                selected.push_back(&run);
            }
        }
        report.rows.push_back(aggregate_policy(policy, selected, std::nullopt, value));
    }
    return report;
}

std::vector<BenchRun> load_bench_runs(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::io, "cannot open run records " + path);
    }
    std::vector<BenchRun> runs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        runs.push_back(BenchRun::from_json_string(line));
    }
    return runs;
}

std::string render_report(const Report& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::csv: {
            std::ostringstream os;
            os << "policy,axis,value,acc_mean,tok_mean,latency_p50_us,latency_p95_us,"
                  "checks_mean,overhead_tokens_mean,n_samples,failed_samples\n";
            for (const auto& row : report.rows) {
                os << row.policy << ',' << (row.axis ? to_string(*row.axis) : "") << ','
                   << (row.axis_value ? format_double(*row.axis_value) : "") << ','
                   << format_double(row.acc_mean) << ',' << format_double(row.tok_mean) << ','
                   << row.latency_p50_us << ',' << row.latency_p95_us << ','
                   << format_double(row.checks_mean) << ','
                   << format_double(row.overhead_tokens_mean) << ',' << row.n_samples << ','
                   << row.failed_samples << "\n";
            }
            return os.str();
        }
        case ReportFormat::json: {
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& row : report.rows) {
                nlohmann::json j{
                    {"policy", row.policy},
                    {"acc_mean", row.acc_mean},
                    {"tok_mean", row.tok_mean},
                    {"latency_p50_us", row.latency_p50_us},
                    {"latency_p95_us", row.latency_p95_us},
                    {"checks_mean", row.checks_mean},
                    {"overhead_tokens_mean", row.overhead_tokens_mean},
                    {"n_samples", row.n_samples},
                    {"failed_samples", row.failed_samples},
                };
                if (row.axis) {
                    j["axis"] = to_string(*row.axis);
                    j["value"] = *row.axis_value;
                }
                rows.push_back(std::move(j));
            }
            nlohmann::json doc{{"rows", rows}};
            if (!report.records_path.empty()) {
                doc["records_path"] = report.records_path;
            }
            return doc.dump(2) + "\n";
        }
        case ReportFormat::markdown: {
            std::ostringstream os;
            os << "| Policy | Acc | Tok | p50 (ms) | p95 (ms) | Checks | Overhead | N |\n";
            os << "|---|---|---|---|---|---|---|---|\n";
            os.setf(std::ios::fixed);
            for (const auto& row : report.rows) {
                os.precision(1);
                os << "| " << row.policy;
                if (row.axis) {
                    os << " (" << to_string(*row.axis) << "=" << *row.axis_value << ")";
                }
                os << " | " << row.acc_mean * 100.0 << " | ";
                os.precision(0);
                os << row.tok_mean << " | ";
                os.precision(1);
                os << static_cast<double>(row.latency_p50_us) / 1000.0 << " | "
                   << static_cast<double>(row.latency_p95_us) / 1000.0 << " | "
                   << row.checks_mean << " | ";
                os.precision(0);
                os << row.overhead_tokens_mean << " | " << row.n_samples << " |\n";
            }
            return os.str();
        }
    }
    return "";
}

void emit_report(const Report& report, ReportFormat format, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::io, "cannot write report to " + path);
    }
    out << render_report(report, format);
}

std::string render_sweep_csv(const std::vector<Report>& reports) {
    std::ostringstream os;
    os << "axis,value,policy,acc,tok,latency_p50_us,checks\n";
    for (const auto& report : reports) {
        for (const auto& row : report.rows) {
            os << (row.axis ? to_string(*row.axis) : "") << ','
               << (row.axis_value ? format_double(*row.axis_value) : "") << ',' << row.policy
               << ',' << format_double(row.acc_mean) << ',' << format_double(row.tok_mean)
               << ',' << row.latency_p50_us << ',' << format_double(row.checks_mean) << "\n";
        }
    }
    return os.str();
}

Report parse_report_csv(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::parse, "report csv: empty input");
    }
    Report report;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream row_in(line);
        std::string cell;
        while (std::getline(row_in, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() < 11) {
            throw Error(ErrorKind::parse, "report csv: malformed row '" + line + "'");
        }
        ReportRow row;
        row.policy = cells[0];
        if (!cells[1].empty()) {
            row.axis = sweep_axis_from_string(cells[1]);
            row.axis_value = std::stod(cells[2]);
        }
        row.acc_mean = std::stod(cells[3]);
        row.tok_mean = std::stod(cells[4]);
        row.latency_p50_us = std::stoll(cells[5]);
        row.latency_p95_us = std::stoll(cells[6]);
        row.checks_mean = std::stod(cells[7]);
        row.overhead_tokens_mean = std::stod(cells[8]);
        row.n_samples = std::stoll(cells[9]);
        row.failed_samples = std::stoll(cells[10]);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace dtsr
