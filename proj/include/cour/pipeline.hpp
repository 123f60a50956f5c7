#pragma once

// End-to-end reward design: generate candidates, score and refine their
// components, optimize the assembled reward, validate it, and record every
// step in a self-contained JSON report. Also the ablation and sampling
// sweep harnesses built on top of single runs.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cour/bdo.hpp"
#include "cour/cuq.hpp"
#include "cour/env.hpp"
#include "cour/llm.hpp"

namespace cour::pipeline {

using nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr double kThresholdFraction = 0.8;

enum class Mode { Cour, MonolithicBo, NoCuq, LlmTune, CoupledTheta };

std::string to_string(Mode m);
Mode mode_from_string(std::string_view s);
std::vector<Mode> all_modes();

struct CuqParams {
    int n_samples = 5;
    double tau = 0.3;
    int n_alt = 3;
    int max_refine_rounds = 2;
    int library_k = 16;
};

struct RunConfig {
    std::string env = "point-mass-velocity";
    std::string task;                  // empty -> environment default
    std::vector<std::string> aspects;  // empty -> every environment aspect
    llm::ProviderConfig provider;
    CuqParams cuq;
    bdo::BdoConfig bdo;
    int eval_seeds = 5;
    std::uint64_t seed = 0;
    Mode mode = Mode::Cour;
    std::string library_path;  // empty -> in-memory library
    bool update_library = true;

    void validate() const;
};

json config_to_json(const RunConfig& cfg);
/// The master seed is required; everything else falls back to defaults.
RunConfig config_from_json(const json& j);
RunConfig load_config(const std::string& path);

std::vector<std::uint64_t> eval_seeds(const RunConfig& cfg);
std::vector<std::uint64_t> validation_seeds(const RunConfig& cfg);

/// Reference-reward fitness on the given seeds (cached per process).
double reference_fitness(const env::ToyEnv& env, const env::CemConfig& cem, const std::vector<std::uint64_t>& seeds);

struct RunReport {
    bool complete = false;
    std::string failed_stage;
    std::string error;
    std::string error_kind;  // "config", "provider" or "runtime"
    double final_fitness = 0.0;
    int evaluations = 0;
    int evaluations_to_threshold = 0;
    bool threshold_reached = false;
    double reference_fitness = 0.0;
    std::size_t provider_calls = 0;
    std::string final_reward;  // canonical text
    json doc;                  // full report
};

struct RunOptions {
    /// Opened library to read and update; null opens cfg.library_path.
    cuq::ComponentLibrary* library = nullptr;
    /// Number of library records visible to the run; default: all.
    std::optional<std::size_t> library_snapshot;
    bool dump_trajectories = false;
    /// "generate" or "cuq" ends the run after that stage; empty runs all.
    std::string stop_after;
};

RunReport run_pipeline(const RunConfig& cfg, const RunOptions& opts = {});

/// `<env>_<mode>_<seed>.json`
std::string report_filename(const RunConfig& cfg);
void write_json(const std::string& path, const json& doc);
json read_json(const std::string& path);

/// Copy of a report without wall-clock fields.
json strip_timing(json doc);

struct ValidationResult {
    bool ok = false;
    std::string message;
};

/// Re-derives the final validation fitness from the stored reward; with
/// `full`, re-runs the whole pipeline and compares reports modulo timing.
ValidationResult validate_report(const json& report, bool full);

// -------------------------------------------------------------- ablation

struct Cell {
    std::string env;
    Mode mode = Mode::Cour;
    std::uint64_t seed = 0;
    int n_samples = 0;
    bool complete = false;
    double final_fitness = 0.0;
    int evaluations_to_threshold = 0;
    bool threshold_reached = false;
    std::size_t provider_calls = 0;
    std::string report_file;
    std::string error;
};

struct AblationTable {
    std::vector<Cell> cells;

    std::vector<Cell> select(const std::string& env, Mode mode) const;
    std::string to_csv() const;
    json summary() const;  // medians per (env, mode) and pairwise comparisons
};

struct HarnessOptions {
    std::string out_dir;  // empty -> reports kept in memory only
    int jobs = 1;
};

AblationTable run_ablation_suite(const RunConfig& base, const std::vector<std::string>& envs,
                                 const std::vector<Mode>& modes, const std::vector<std::uint64_t>& seeds,
                                 const HarnessOptions& opts = {});

struct SweepTable {
    std::vector<Cell> rows;
    std::string to_csv() const;
    json summary() const;
};

SweepTable sampling_sweep(const RunConfig& base, const std::vector<std::string>& envs,
                          const std::vector<int>& n_values, const std::vector<std::uint64_t>& seeds,
                          const HarnessOptions& opts = {});

double median(std::vector<double> v);

}  // namespace cour::pipeline
