#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nitp/config.hpp"
#include "nitp/geometry.hpp"

namespace nitp {

struct MetricsRecord {
    int64_t step = 0;
    double lr = 0.0;
    double ntp_loss = 0.0;
    double nitp_loss = 0.0;
    double total_loss = 0.0;
    double grad_norm = 0.0;
    std::optional<double> s;  // mean cosine alignment between predictions and latent targets
    std::optional<double> router_entropy;
    std::optional<GeometrySnapshot> snapshot;
};

// Runs the full training loop: forward -> losses -> backward -> clip -> adamw,
// with metric logging, geometry snapshots and checkpointing under
// run.out_dir. Deterministic for a fixed config and seed. Returns the final
// metrics record.
MetricsRecord train(const RunConfig& run, const std::optional<std::filesystem::path>& resume_ckpt = {});

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path);

struct CompareRow {
    int64_t step = 0;
    double d_ntp_loss = 0.0;
    std::optional<double> d_effective_rank;
    std::optional<double> d_avg_cosine;
};

struct CompareReport {
    std::vector<CompareRow> rows;       // aligned on common steps
    int64_t skipped_snapshot_rows = 0;  // common steps where only one side had a snapshot
    int64_t final_step = 0;
    double final_d_ntp_loss = 0.0;
    std::optional<double> final_d_effective_rank;
    std::optional<double> final_d_avg_cosine;

    std::string to_text() const;
};

// Aligns two metrics logs by step and reports per-step deltas (b minus a).
CompareReport compare_runs(const std::filesystem::path& log_a, const std::filesystem::path& log_b);

}  // namespace nitp
