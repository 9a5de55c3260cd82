// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Ranking metrics and experiment reports: AUC (rank-based, ties at 1/2),
// PV-bucketed AUC, MBA layer-importance scores, and the ablation comparison
// table.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "savior/error.hpp"
#include "savior/tensor.hpp"

namespace savior::evalkit {

// Page-view bucket edges. Bucket i covers [edges[i], edges[i+1]); the last
// bucket is open-ended.
struct PvBucketing {
  std::vector<std::int64_t> edges{0, 100, 500, 1000, 5000, 10000, 20000};

  std::size_t bucket_count() const { return edges.size(); }

  std::size_t bucket_of(std::int64_t pv) const {
    std::size_t b = 0;
    while (b + 1 < edges.size() && pv >= edges[b + 1]) ++b;
    return b;
  }

  std::string label(std::size_t b) const {
    std::ostringstream os;
    os << "[" << edges[b] << ",";
    if (b + 1 < edges.size())
      os << edges[b + 1] << ")";
    else
      os << "inf)";
    return os.str();
  }
};

// AUC as the probability that a positive outranks a negative, ties counting
// one half. Computed from midranks; exactly equals pair counting.
inline double auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size())
    throw ContractError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (double y : labels) pos += (y > 0.5) ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw UndefinedMetricError("auc undefined: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);  // 1-based average
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] > 0.5) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

struct BucketMetric {
  std::string label;
  std::optional<double> auc;  // empty when the bucket lacks both classes
  std::size_t samples{0};
  std::size_t clicks{0};
};

struct EvalReport {
  double total_auc{0.0};
  std::vector<BucketMetric> buckets;
  std::map<std::string, std::string> metadata;  // ablation tag, seed, config hash

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["total_auc"] = total_auc;
    j["buckets"] = nlohmann::json::array();
    for (const auto& b : buckets) {
      nlohmann::json e;
      e["bucket"] = b.label;
      if (b.auc)
        e["auc"] = *b.auc;
      else
        e["auc"] = nullptr;
      e["samples"] = b.samples;
      e["clicks"] = b.clicks;
      j["buckets"].push_back(e);
    }
    j["metadata"] = metadata;
    return j;
  }
};

// Per-bucket AUC over samples whose candidate item falls in that bucket.
// Buckets lacking both classes are reported undefined and excluded from any
// aggregate.
inline EvalReport grouped_auc(const std::vector<double>& scores,
                              const std::vector<double>& labels,
                              const std::vector<std::int64_t>& item_pv,
                              const PvBucketing& bucketing = PvBucketing{}) {
  if (scores.size() != labels.size() || scores.size() != item_pv.size())
    throw ContractError("grouped_auc: input lengths differ");
  for (std::int64_t pv : item_pv)
    if (pv < 0) throw ContractError("grouped_auc: negative page-view count");

  EvalReport rep;
  rep.total_auc = auc(scores, labels);
  const std::size_t nb = bucketing.bucket_count();
  std::vector<std::vector<double>> s(nb), y(nb);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t b = bucketing.bucket_of(item_pv[i]);
    s[b].push_back(scores[i]);
    y[b].push_back(labels[i]);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    BucketMetric m;
    m.label = bucketing.label(b);
    m.samples = s[b].size();
    for (double v : y[b]) m.clicks += (v > 0.5) ? 1 : 0;
    try {
      m.auc = auc(s[b], y[b]);
    } catch (const UndefinedMetricError&) {
      m.auc = std::nullopt;
    } catch (const ContractError&) {
      m.auc = std::nullopt;
    }
    rep.buckets.push_back(std::move(m));
  }
  return rep;
}

// Subset AUC over the samples whose PV falls in buckets [lo, hi].
inline std::optional<double> bucket_range_auc(const std::vector<double>& scores,
                                              const std::vector<double>& labels,
                                              const std::vector<std::int64_t>& item_pv,
                                              std::size_t lo, std::size_t hi,
                                              const PvBucketing& bucketing = PvBucketing{}) {
  std::vector<double> s, y;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t b = bucketing.bucket_of(item_pv[i]);
    if (b >= lo && b <= hi) {
      s.push_back(scores[i]);
      y.push_back(labels[i]);
    }
  }
  try {
    return auc(s, y);
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// MBA layer importance
// ---------------------------------------------------------------------------

struct LayerImportance {
  std::vector<double> codebook;      // normalized to sum 1 (or all zero)
  std::vector<double> fusion_input;  // same normalization, first fusion layer
  bool all_zero{false};
};

// Mean L2 norm of each layer's codebook rows, and of the first fusion-layer
// weight rows belonging to each layer's input slice; each family normalized
// to sum 1 independently.
inline LayerImportance layer_importance(const std::vector<Tensor>& codebook_layers,
                                        const Tensor& fusion_w1, int code_dim) {
  const std::size_t layers = codebook_layers.size();
  LayerImportance out;
  out.codebook.assign(layers, 0.0);
  out.fusion_input.assign(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    const Tensor& cb = codebook_layers[l];
    const int rows = cb.dim(0), cols = cb.dim(1);
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
      double nrm = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double v = cb.value_at(static_cast<std::size_t>(r) * cols + c);
        nrm += v * v;
      }
      acc += std::sqrt(nrm);
    }
    out.codebook[l] = acc / rows;
  }
  const int in_dim = fusion_w1.dim(0), hidden = fusion_w1.dim(1);
  if (in_dim != static_cast<int>(layers) * code_dim)
    throw ContractError("layer_importance: fusion input dim does not cover layers*code_dim");
  for (std::size_t l = 0; l < layers; ++l) {
    double acc = 0.0;
    for (int r = 0; r < code_dim; ++r) {
      const int row = static_cast<int>(l) * code_dim + r;
      double nrm = 0.0;
      for (int c = 0; c < hidden; ++c) {
        const double v = fusion_w1.value_at(static_cast<std::size_t>(row) * hidden + c);
        nrm += v * v;
      }
      acc += std::sqrt(nrm);
    }
    out.fusion_input[l] = acc / code_dim;
  }
  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    if (s > 0.0)
      for (double& x : v) x /= s;
    return s > 0.0;
  };
  const bool cb_nz = normalize(out.codebook);
  const bool fu_nz = normalize(out.fusion_input);
  out.all_zero = !cb_nz && !fu_nz;
  return out;
}

// ---------------------------------------------------------------------------
// Ablation comparison
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string tag;
  bool ok{false};
  std::string error;  // set when the member run aborted
  EvalReport report;
  std::uint64_t sample_stream_hash{0};
};

struct AblationTable {
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& tag) const {
    for (const auto& r : rows)
      if (r.tag == tag) return &r;
    return nullptr;
  }
};

// Trains/evaluates each tag through `runner` (which must reuse one shared
// seed and dataset) and assembles the comparison table. A failing member is
// annotated, not fatal.
inline AblationTable ablation_suite(const std::vector<std::string>& tags,
                                    const std::function<AblationRow(const std::string&)>& runner) {
  AblationTable table;
  for (const auto& tag : tags) {
    try {
      table.rows.push_back(runner(tag));
    } catch (const std::exception& e) {
      AblationRow row;
      row.tag = tag;
      row.ok = false;
      row.error = e.what();
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Plain-text tables
// ---------------------------------------------------------------------------

inline std::string format_report_table(const EvalReport& rep, const std::string& title) {
  std::ostringstream os;
  os << title << "\n";
  os << std::left << std::setw(16) << "bucket" << std::right << std::setw(10) << "auc"
     << std::setw(10) << "samples" << std::setw(10) << "clicks" << "\n";
  os << std::string(46, '-') << "\n";
  auto put = [&](const std::string& label, const std::optional<double>& a, std::size_t samples,
                 std::size_t clicks) {
    os << std::left << std::setw(16) << label << std::right << std::setw(10);
    if (a)
      os << std::fixed << std::setprecision(4) << *a;
    else
      os << "undef";
    os << std::setw(10) << samples << std::setw(10) << clicks << "\n";
  };
  std::size_t total_samples = 0, total_clicks = 0;
  for (const auto& b : rep.buckets) {
    put(b.label, b.auc, b.samples, b.clicks);
    total_samples += b.samples;
    total_clicks += b.clicks;
  }
  os << std::string(46, '-') << "\n";
  put("total", rep.total_auc, total_samples, total_clicks);
  return os.str();
}

inline std::string format_ablation_table(const AblationTable& table) {
  std::ostringstream os;
  const AblationRow* full = table.find("full");
  os << std::left << std::setw(12) << "method" << std::right << std::setw(12) << "total_auc"
     << std::setw(12) << "delta" << "\n";
  os << std::string(36, '-') << "\n";
  for (const auto& r : table.rows) {
    os << std::left << std::setw(12) << r.tag << std::right << std::setw(12);
    if (!r.ok) {
      os << "FAILED" << std::setw(12) << "-" << "  (" << r.error << ")\n";
      continue;
    }
    os << std::fixed << std::setprecision(4) << r.report.total_auc << std::setw(12);
    if (full && full->ok)
      os << std::fixed << std::setprecision(4) << (r.report.total_auc - full->report.total_auc);
    else
      os << "-";
    os << "\n";
  }
  return os.str();
}

}  // namespace savior::evalkit
