// Per-step metrics CSV. One row per optimizer step, fixed column superset,
// flushed every metrics_flush_every rows.
#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "upesv/common.hpp"
#include "upesv/losses.hpp"

namespace upesv::metrics {

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "step",          "phase",
      "loss",          "value",
      "aux_positive_similarity", "aux_temperature",
      "aux_recon",     "aux_vq_commit",
      "aux_vq_codebook", "aux_codebook_usage",
      "aux_accuracy",  "aux_target_usage"};
  return cols;
}

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& path, int64_t flush_every)
      : flush_every_(flush_every) {
    if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty())
      std::filesystem::create_directories(dir);
    out_.open(path, std::ios::trunc);
    require<DataError>(out_.good(), cat("metrics: cannot open ", path));
    const auto& cols = csv_columns();
    for (size_t i = 0; i < cols.size(); ++i)
      out_ << cols[i] << (i + 1 < cols.size() ? "," : "\n");
  }

  bool open() const { return out_.is_open(); }

  void row(int64_t step, const std::string& phase,
           const losses::LossReport& rep) {
    if (!out_.is_open()) return;
    out_ << step << ',' << phase << ',' << rep.name << ','
         << format_value(rep.value);
    const auto& cols = csv_columns();
    for (size_t c = 4; c < cols.size(); ++c) {
      out_ << ',';
      const std::string key = cols[c].substr(4);  // strip "aux_"
      for (const auto& [k, v] : rep.aux)
        if (k == key) {
          out_ << format_value(v);
          break;
        }
    }
    out_ << '\n';
    if (++rows_since_flush_ >= flush_every_) {
      out_.flush();
      rows_since_flush_ = 0;
    }
  }

  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
  int64_t flush_every_ = 100;
  int64_t rows_since_flush_ = 0;
};

}  // namespace upesv::metrics
