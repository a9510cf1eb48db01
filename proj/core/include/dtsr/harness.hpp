#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtsr/answers.hpp"
#include "dtsr/backend.hpp"
#include "dtsr/controller.hpp"

namespace dtsr {

enum class SweepAxis { budget, k, tau };

const char* to_string(SweepAxis axis);
SweepAxis sweep_axis_from_string(const std::string& s);

struct BenchConfig {
    std::vector<Sample> samples;
    std::vector<ExitPolicy> policies;
    ControllerConfig controller;
    int seeds = 3;
    int parallelism = 4;
    std::optional<SweepAxis> sweep_axis;
    std::vector<double> sweep_values;  // strictly increasing

    // When non-empty, every RunRecord is appended here as JSONL.
    std::string records_path;

    void validate() const;
};

/// One completed run with its bench attribution, as persisted to JSONL.
struct BenchRun {
    std::string sample_id;
    std::string policy;
    int seed = 0;
    std::optional<double> sweep_value;
    bool failed = false;
    std::string error;
    bool correct = false;
    RunRecord record;

    std::string to_json_string() const;
    static BenchRun from_json_string(const std::string& json_text);
};

struct ReportRow {
    std::string policy;
    std::optional<SweepAxis> axis;
    std::optional<double> axis_value;
    double acc_mean = 0.0;  // in [0, 1]
    double tok_mean = 0.0;
    std::int64_t latency_p50_us = 0;
    std::int64_t latency_p95_us = 0;
    double checks_mean = 0.0;
    double overhead_tokens_mean = 0.0;
    std::int64_t n_samples = 0;
    std::int64_t failed_samples = 0;  // all seeds failed; excluded from means
};

struct Report {
    std::vector<ReportRow> rows;
    std::string records_path;
};

enum class ReportFormat { csv, json, markdown };

ReportFormat report_format_from_string(const std::string& s);

/// Run every (sample x policy x seed) with bounded parallelism and aggregate
/// pass@1 / token / latency statistics.
Report run_bench(const BenchConfig& config, Backend& backend, Backend* check_backend = nullptr);

/// One Report per sweep value; requires config.sweep_axis.
std::vector<Report> sweep(const BenchConfig& config, Backend& backend,
                          Backend* check_backend = nullptr);

std::string render_report(const Report& report, ReportFormat format);
void emit_report(const Report& report, ReportFormat format, const std::string& path);

/// Tidy CSV across sweep points: axis,value,policy,acc,tok,latency_p50,checks.
std::string render_sweep_csv(const std::vector<Report>& reports);

/// Inverse of render_report(csv); used by round-trip checks and tooling.
Report parse_report_csv(const std::string& csv_text);

/// Recompute a report from persisted bench runs (re-derivation check).
Report report_from_runs(const std::vector<BenchRun>& runs);

std::vector<BenchRun> load_bench_runs(const std::string& path);

}  // namespace dtsr
