// Multi-run evaluation drivers: ablation variants and the shift-distance
// sweep. Runs are independent and seeded, so they parallelize across a small
// job pool without affecting results. Reported rows aggregate >= 3 seeds;
// single-seed aggregates are refused.
#pragma once

#include <future>
#include <thread>
#include <vector>

#include "upesv/trainer.hpp"

namespace upesv::eval {

struct RunMetrics {
  std::string variant;  // "full", "no_vsc", ... or "s=0", "s=1", ...
  uint64_t seed = 0;
  double labeling_accuracy = -1;
  double latent_purity = -1;
  double policy_success = -1;
  double random_success = -1;
  double mean_steps_success = -1;
  double elapsed_seconds = 0;
  int64_t interactions_used = 0;
};

struct ReportRow {
  std::string variant;
  int64_t seed_count = 0;
  double labeling_mean = 0, labeling_std = 0;
  double purity_mean = 0, purity_std = 0;
  double success_mean = 0, success_std = 0;
  double steps_mean = 0, steps_std = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

}  // namespace detail

// Aggregate one variant's runs into a report row. Refuses fewer than three
// seeds: single-seed numbers are not reportable.
inline ReportRow aggregate(const std::string& variant,
                           const std::vector<RunMetrics>& runs) {
  require<ConfigError>(static_cast<int64_t>(runs.size()) >= 3,
                       cat("report row '", variant, "' has ", runs.size(),
                           " seed(s); at least 3 are required"));
  std::vector<double> lab, pur, suc, steps;
  for (const auto& r : runs) {
    require<ConfigError>(r.variant == variant, "aggregate: mixed variants");
    lab.push_back(r.labeling_accuracy);
    pur.push_back(r.latent_purity);
    suc.push_back(r.policy_success);
    steps.push_back(r.mean_steps_success);
  }
  ReportRow row;
  row.variant = variant;
  row.seed_count = static_cast<int64_t>(runs.size());
  std::tie(row.labeling_mean, row.labeling_std) = detail::mean_std(lab);
  std::tie(row.purity_mean, row.purity_std) = detail::mean_std(pur);
  std::tie(row.success_mean, row.success_std) = detail::mean_std(suc);
  std::tie(row.steps_mean, row.steps_std) = detail::mean_std(steps);
  return row;
}

// One full pipeline run under a variant; run_dir may be empty (no artifacts).
template <class S>
RunMetrics run_pipeline(const cfg::TrainConfig& config, Variant variant,
                        uint64_t seed, const data::VideoDataset& videos,
                        const data::VideoDataset* eval_videos,
                        const std::string& run_dir) {
  cfg::TrainConfig c = config;
  c.seed = seed;
  train::Trainer<S> trainer(c, &videos, eval_videos, variant, run_dir);
  auto summary = trainer.run_full();
  RunMetrics m;
  m.variant = variant_name(variant);
  m.seed = seed;
  m.labeling_accuracy = summary.labeling_accuracy;
  m.latent_purity = summary.latent_purity;
  m.policy_success = summary.policy_success;
  m.random_success = summary.random_success;
  m.mean_steps_success = summary.mean_steps_success;
  m.elapsed_seconds = summary.elapsed_seconds;
  m.interactions_used = summary.interactions_used;
  return m;
}

struct MatrixJob {
  Variant variant = Variant::kFull;
  int shift_s = -1;  // >= 0 overrides config.shift_s (sweep mode)
  uint64_t seed = 0;
  std::string label;  // row label: variant name or "s=<n>"
};

// Run a job matrix with at most `jobs` concurrent pipelines. Results are in
// job order regardless of scheduling.
template <class S>
std::vector<RunMetrics> run_matrix(const cfg::TrainConfig& config,
                                   const std::vector<MatrixJob>& matrix,
                                   const data::VideoDataset& videos,
                                   const data::VideoDataset* eval_videos,
                                   const std::string& out_root, int jobs) {
  if (jobs <= 0)
    jobs = std::max(1u, std::thread::hardware_concurrency());
  std::vector<RunMetrics> results(matrix.size());
  size_t next = 0;
  while (next < matrix.size()) {
    size_t batch = std::min<size_t>(static_cast<size_t>(jobs),
                                    matrix.size() - next);
    std::vector<std::future<RunMetrics>> futs;
    for (size_t b = 0; b < batch; ++b) {
      const MatrixJob& job = matrix[next + b];
      futs.push_back(std::async(std::launch::async, [&, job] {
        cfg::TrainConfig c = config;
        if (job.shift_s >= 0) c.shift_s = job.shift_s;
        std::string dir =
            out_root.empty()
                ? std::string()
                : cat(out_root, "/", job.label, "-seed", job.seed);
        RunMetrics m = run_pipeline<S>(c, job.variant, job.seed, videos,
                                       eval_videos, dir);
        m.variant = job.label;
        return m;
      }));
    }
    for (size_t b = 0; b < batch; ++b) results[next + b] = futs[b].get();
    next += batch;
  }
  return results;
}

inline std::vector<MatrixJob> ablation_matrix(const std::vector<Variant>& variants,
                                              uint64_t base_seed, int n_seeds) {
  std::vector<MatrixJob> jobs;
  for (Variant v : variants)
    for (int s = 0; s < n_seeds; ++s)
      jobs.push_back({v, -1, base_seed + static_cast<uint64_t>(s),
                      variant_name(v)});
  return jobs;
}

inline std::vector<MatrixJob> sweep_matrix(const std::vector<int>& s_values,
                                           uint64_t base_seed, int n_seeds) {
  std::vector<MatrixJob> jobs;
  for (int sv : s_values)
    for (int s = 0; s < n_seeds; ++s)
      jobs.push_back({Variant::kFull, sv, base_seed + static_cast<uint64_t>(s),
                      cat("s=", sv)});
  return jobs;
}

// ---------------------------------------------------------------------------
// CSV emission: one raw row per run, one summary row per variant.
// ---------------------------------------------------------------------------
inline std::string runs_csv(const std::vector<RunMetrics>& runs) {
  std::string out =
      "variant,seed,labeling_accuracy,latent_purity,policy_success,"
      "random_success,mean_steps_success,interactions_used,elapsed_seconds\n";
  for (const auto& r : runs)
    out += cat(r.variant, ",", r.seed, ",", metrics::format_value(r.labeling_accuracy),
               ",", metrics::format_value(r.latent_purity), ",",
               metrics::format_value(r.policy_success), ",",
               metrics::format_value(r.random_success), ",",
               metrics::format_value(r.mean_steps_success), ",",
               r.interactions_used, ",",
               metrics::format_value(r.elapsed_seconds), "\n");
  return out;
}

inline std::string summary_csv(const std::vector<ReportRow>& rows) {
  std::string out =
      "variant,seed_count,labeling_mean,labeling_std,purity_mean,purity_std,"
      "success_mean,success_std,steps_mean,steps_std\n";
  for (const auto& r : rows)
    out += cat(r.variant, ",", r.seed_count, ",",
               metrics::format_value(r.labeling_mean), ",",
               metrics::format_value(r.labeling_std), ",",
               metrics::format_value(r.purity_mean), ",",
               metrics::format_value(r.purity_std), ",",
               metrics::format_value(r.success_mean), ",",
               metrics::format_value(r.success_std), ",",
               metrics::format_value(r.steps_mean), ",",
               metrics::format_value(r.steps_std), "\n");
  return out;
}

// Group raw runs by variant label, preserving first-seen order.
inline std::vector<ReportRow> summarize(const std::vector<RunMetrics>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RunMetrics>> grouped;
  for (const auto& r : runs) {
    if (!grouped.count(r.variant)) order.push_back(r.variant);
    grouped[r.variant].push_back(r);
  }
  std::vector<ReportRow> rows;
  for (const auto& label : order)
    rows.push_back(aggregate(label, grouped[label]));
  return rows;
}

}  // namespace upesv::eval
