#include "streammem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace streammem {

using nlohmann::json;

json answer_to_json(const AnswerRecord& a) {
  json path = json::array();
  for (const auto& s : a.path) path.push_back({{"level", s.level}, {"node", s.index}, {"similarity", s.similarity}});
  json j = {{"query_index", a.query_index},
            {"question", a.question},
            {"answer", a.answer},
            {"t_input", a.t_input},
            {"t_start", a.t_start},
            {"t_done", a.t_done},
            {"rpd", a.rpd},
            {"bundle_digest", a.bundle_digest},
            {"snapshot_version", a.snapshot_version},
            {"best_caption", a.best_caption},
            {"path", std::move(path)},
            {"dialogue_turn", a.dialogue_turn ? json(*a.dialogue_turn) : json(nullptr)},
            {"dialogue_question", a.dialogue_question ? json(*a.dialogue_question) : json(nullptr)},
            {"error", a.error ? json(*a.error) : json(nullptr)},
            {"task_type", a.task_type},
            {"reference_answer", a.reference_answer}};
  if (a.judgement) {
    j["verdict"] = a.judgement->verdict ? "yes" : "no";
    j["score"] = a.judgement->score;
  } else {
    j["verdict"] = nullptr;
    j["score"] = nullptr;
  }
  return j;
}

json metrics_to_json(const MetricsReport& m) {
  json tasks = json::object();
  for (const auto& [name, t] : m.per_task) {
    tasks[name] = {{"count", t.count}, {"mean_score", t.mean_score}, {"accuracy", t.accuracy}};
  }
  return {{"count", m.count},
          {"threshold", m.threshold},
          {"mean_score", m.mean_score},
          {"accuracy", m.accuracy},
          {"coherence", m.coherence ? json(*m.coherence) : json(nullptr)},
          {"rpd_mean", m.rpd_mean},
          {"rpd_p95", m.rpd_p95},
          {"per_task", std::move(tasks)}};
}

double accuracy(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw InputError("accuracy: no scores");
  const auto hits = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

std::optional<double> coherence(std::span<const double> scores) {
  if (scores.size() < 2) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) sum += std::abs(scores[i] - scores[i + 1]);
  return sum / static_cast<double>(scores.size() - 1);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("percentile: no values");
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

MetricsReport compute_metrics(std::span<const AnswerRecord> answers, double threshold) {
  if (answers.empty()) throw InputError("compute_metrics: no answers");
  MetricsReport m;
  m.count = answers.size();
  m.threshold = threshold;
  std::vector<double> scores, rpds;
  std::map<std::string, std::vector<double>> by_task;
  for (const auto& a : answers) {
    if (!a.judgement) throw InputError("compute_metrics: answer " + std::to_string(a.query_index) + " is not judged");
    const auto s = static_cast<double>(a.judgement->score);
    scores.push_back(s);
    rpds.push_back(a.rpd);
    by_task[a.task_type.empty() ? std::string("untyped") : a.task_type].push_back(s);
  }
  m.mean_score = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  m.accuracy = accuracy(scores, threshold);
  m.coherence = coherence(scores);
  m.rpd_mean = std::accumulate(rpds.begin(), rpds.end(), 0.0) / static_cast<double>(rpds.size());
  m.rpd_p95 = percentile(rpds, 95.0);
  for (const auto& [name, s] : by_task) {
    TaskMetrics t;
    t.count = s.size();
    t.mean_score = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    t.accuracy = accuracy(s, threshold);
    m.per_task[name] = t;
  }
  return m;
}

}  // namespace streammem
