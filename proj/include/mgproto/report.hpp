#pragma once

// Run artifacts: CSV tables and small SVG plots. All numbers are written with
// 17 significant digits so files are byte-stable for identical inputs.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgproto/density.hpp"
#include "mgproto/metrics.hpp"
#include "mgproto/trainer.hpp"

namespace mgproto {

struct MetricRow {
  std::string name;
  std::string split;
  double value = 0.0;
};

struct ReportInputs {
  std::vector<MetricRow> metrics;
  std::optional<ScoreSet> scores;        // histogram.csv / histogram.svg
  std::optional<ModelHead> head;         // priors.csv / priors.svg
  std::vector<StepRecord> history;       // losses.csv / losses.svg
  std::size_t histogram_bins = 30;
};

std::string format_number(double v);

/// Writes metrics.csv and whichever of histogram, priors and losses files the
/// inputs support into `dir` (created if missing). Throws std::runtime_error
/// when a file cannot be written.
std::vector<std::filesystem::path> emit_report(const std::filesystem::path& dir, const ReportInputs& in);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);
void write_priors_csv(const std::filesystem::path& path, const ModelHead& head);
void write_losses_csv(const std::filesystem::path& path, const std::vector<StepRecord>& history);

}  // namespace mgproto
