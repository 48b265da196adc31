#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streammem/ports.hpp"
#include "streammem/retrieval.hpp"

namespace streammem {

struct AnswerRecord {
  std::size_t query_index = 0;
  std::string question;
  std::string answer;
  double t_input = 0.0;
  double t_start = 0.0;  // context assembled, generation begins
  double t_done = 0.0;
  double rpd = 0.0;      // t_start - t_input
  std::string bundle_digest;
  std::uint64_t snapshot_version = 0;
  std::string best_caption;
  std::vector<PathStep> path;
  std::optional<std::size_t> dialogue_turn;
  std::optional<std::string> dialogue_question;
  std::optional<std::string> error;

  // Filled in by the harness.
  std::string task_type;
  std::string reference_answer;
  std::optional<Judgement> judgement;
};

nlohmann::json answer_to_json(const AnswerRecord& a);

struct TaskMetrics {
  std::size_t count = 0;
  double mean_score = 0.0;
  double accuracy = 0.0;
};

struct MetricsReport {
  std::size_t count = 0;
  double threshold = 3.0;
  double mean_score = 0.0;
  double accuracy = 0.0;
  std::optional<double> coherence;  // absent for fewer than two turns
  double rpd_mean = 0.0;
  double rpd_p95 = 0.0;
  std::map<std::string, TaskMetrics> per_task;
};

nlohmann::json metrics_to_json(const MetricsReport& m);

/// Fraction of scores >= threshold.
double accuracy(std::span<const double> scores, double threshold);

/// Mean |S_i - S_{i+1}| over consecutive turns; nothing for fewer than two.
std::optional<double> coherence(std::span<const double> scores);

/// Nearest-rank percentile, p in (0,100].
double percentile(std::vector<double> values, double p);

/// Requires a judgement on every answer. Coherence follows answer order.
MetricsReport compute_metrics(std::span<const AnswerRecord> answers, double threshold = 3.0);

}  // namespace streammem
