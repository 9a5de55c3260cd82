// Copyright 2026 The SaviorRec Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic interaction world with a known ground-truth click model. Items
// carry a latent style; the two modality vectors are linear+noise views of
// it, so behavior (clicks driven by style affinity) is genuinely recoverable
// from modality features. The generator stores the true click probability of
// every impression, which gives every downstream metric a Bayes ceiling.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "savior/error.hpp"
#include "savior/evalkit.hpp"
#include "savior/rng.hpp"

namespace savior::synthgen {

struct SynthConfig {
  int n_items{2000};
  int n_users{500};
  long long n_impressions{200000};
  int d_style{8};
  int n_style_clusters{32};
  double style_noise{0.25};
  int d_modality_a{16};
  int d_modality_b{16};
  double modality_noise{0.10};
  double pareto_alpha{1.15};

  // Ground-truth click model: sigmoid(w_interest * <interest, style>
  //   + w_sequence * recency-weighted <clicked styles, style>
  //   + w_popularity * log(popularity) + bias)
  double w_interest{2.8};
  double w_sequence{1.8};
  double w_popularity{0.25};
  double bias{-1.6};
  double recency_decay{0.9};

  // Base-score corruption, in logit space. Low-PV items get noisier base
  // scores: sigma_eff = sigma_base * (1 + sigma_base_cold_boost /
  // (1 + pv / cold_pv_scale)), mirroring a production score that is reliable
  // for popular items and weak for cold ones.
  double sigma_base{0.15};
  double sigma_base_cold_boost{8.0};
  double cold_pv_scale{150.0};

  int n_max{20};            // sequence snapshot length
  int session_window{50};   // co-click window in user-local steps
  int min_coclick_count{2};
  double eval_fraction{0.1};

  int n_profile_a{5};
  int n_profile_b{3};

  void validate() const {
    if (d_style < 2) throw ConfigError("synthgen.d_style must be >= 2");
    if (n_items < 10) throw ConfigError("synthgen.n_items must be >= 10");
    if (n_users < 1) throw ConfigError("synthgen.n_users must be >= 1");
    if (n_impressions < 1) throw ConfigError("synthgen.n_impressions must be >= 1");
    if (n_style_clusters < 1) throw ConfigError("synthgen.n_style_clusters must be >= 1");
    if (pareto_alpha <= 0.0) throw ConfigError("synthgen.pareto_alpha must be positive");
    if (n_max < 1) throw ConfigError("synthgen.n_max must be >= 1");
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
      throw ConfigError("synthgen.eval_fraction must be in (0,1)");
    if (sigma_base < 0.0) throw ConfigError("synthgen.sigma_base must be >= 0");
  }
};

struct Item {
  int item_id{0};
  std::vector<double> style;       // unit norm
  std::vector<double> modality_a;  // A*style + noise
  std::vector<double> modality_b;  // B*style + noise
  double popularity{1.0};
};

struct User {
  int user_id{0};
  std::vector<double> interest;  // unit norm
  std::vector<int> profile;      // categorical features
};

struct Impression {
  int user_id{0};
  int item_id{0};
  int clicked{0};
  std::vector<int> sequence_snapshot;  // oldest -> newest, clicked items only
  double base_pctr{0.5};
  double p_true{0.5};  // generator ground truth; never a model feature
  long long timestamp{0};
  long long user_step{0};
};

struct ItemCatalog {
  SynthConfig config;
  std::vector<Item> items;
};

struct InteractionLog {
  std::vector<Impression> impressions;
};

// Unordered co-click pairs in canonical (a < b) order with user counts.
struct PairSet {
  std::vector<std::pair<int, int>> pairs;
  std::vector<int> counts;

  bool contains(int a, int b) const {
    if (a > b) std::swap(a, b);
    for (const auto& p : pairs)
      if (p.first == a && p.second == b) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> mix_toward(const std::vector<double>& center, double noise, Rng& rng) {
  std::vector<double> v(center.size());
  double nrm2 = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = center[i] + noise * rng.normal();
    nrm2 += v[i] * v[i];
  }
  const double inv = 1.0 / std::sqrt(std::max(nrm2, 1e-24));
  for (auto& x : v) x *= inv;
  return v;
}

inline std::vector<std::vector<double>> random_linear_map(int out_dim, int in_dim, Rng& rng) {
  std::vector<std::vector<double>> m(static_cast<std::size_t>(out_dim));
  const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (auto& row : m) {
    row.resize(static_cast<std::size_t>(in_dim));
    for (auto& x : row) x = rng.normal() * s;
  }
  return m;
}

inline std::vector<double> apply_map(const std::vector<std::vector<double>>& m,
                                     const std::vector<double>& v, double noise, Rng& rng) {
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < m.size(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) acc += m[r][c] * v[c];
    out[r] = acc + noise * rng.normal();
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

inline std::vector<std::vector<double>> style_cluster_centers(const SynthConfig& cfg,
                                                              std::uint64_t seed) {
  Rng rng = Rng(seed).fork("style-clusters");
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<std::size_t>(cfg.n_style_clusters));
  for (int c = 0; c < cfg.n_style_clusters; ++c) centers.push_back(rng.unit_vector(cfg.d_style));
  return centers;
}

inline ItemCatalog generate_catalog(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ItemCatalog cat;
  cat.config = cfg;
  const auto centers = style_cluster_centers(cfg, seed);
  Rng rng = Rng(seed).fork("catalog");
  const auto map_a = detail::random_linear_map(cfg.d_modality_a, cfg.d_style, rng);
  const auto map_b = detail::random_linear_map(cfg.d_modality_b, cfg.d_style, rng);
  cat.items.reserve(static_cast<std::size_t>(cfg.n_items));
  for (int i = 0; i < cfg.n_items; ++i) {
    Item it;
    it.item_id = i;
    const auto& center = centers[static_cast<std::size_t>(rng.uniform_int(cfg.n_style_clusters))];
    it.style = detail::mix_toward(center, cfg.style_noise, rng);
    it.modality_a = detail::apply_map(map_a, it.style, cfg.modality_noise, rng);
    it.modality_b = detail::apply_map(map_b, it.style, cfg.modality_noise, rng);
    it.popularity = rng.pareto(1.0, cfg.pareto_alpha);
    cat.items.push_back(std::move(it));
  }
  return cat;
}

inline std::vector<User> generate_users(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto centers = style_cluster_centers(cfg, seed);
  Rng rng = Rng(seed).fork("users");
  std::vector<User> users;
  users.reserve(static_cast<std::size_t>(cfg.n_users));
  for (int u = 0; u < cfg.n_users; ++u) {
    User usr;
    usr.user_id = u;
    const auto& center = centers[static_cast<std::size_t>(rng.uniform_int(cfg.n_style_clusters))];
    usr.interest = detail::mix_toward(center, cfg.style_noise, rng);
    usr.profile = {static_cast<int>(rng.uniform_int(cfg.n_profile_a)),
                   static_cast<int>(rng.uniform_int(cfg.n_profile_b))};
    users.push_back(std::move(usr));
  }
  return users;
}

inline InteractionLog generate_interactions(const ItemCatalog& cat, const std::vector<User>& users,
                                            const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cat.items.empty() || users.empty())
    throw ContractError("generate_interactions: catalog and users must be generated first");
  Rng rng = Rng(seed).fork("interactions");

  // Popularity-proportional item sampling via inverse CDF.
  std::vector<double> cdf(cat.items.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cat.items.size(); ++i) {
    total += cat.items[i].popularity;
    cdf[i] = total;
  }
  auto sample_item = [&]() {
    const double u = rng.uniform01() * total;
    return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  };

  // Impressions are allocated before clicks so each item's realized page
  // views are known when scaling the base-score noise.
  const std::size_t n = static_cast<std::size_t>(cfg.n_impressions);
  std::vector<int> imp_user(n), imp_item(n);
  std::vector<std::int64_t> pv(cat.items.size(), 0);
  for (std::size_t t = 0; t < n; ++t) {
    imp_user[t] = static_cast<int>(rng.uniform_int(cfg.n_users));
    imp_item[t] = std::min(sample_item(), static_cast<int>(cat.items.size()) - 1);
    ++pv[static_cast<std::size_t>(imp_item[t])];
  }

  InteractionLog log;
  log.impressions.reserve(n);
  std::vector<std::deque<int>> history(users.size());
  std::vector<long long> user_steps(users.size(), 0);

  for (std::size_t t = 0; t < n; ++t) {
    const int u = imp_user[t];
    const int i = imp_item[t];
    const Item& item = cat.items[static_cast<std::size_t>(i)];
    const User& user = users[static_cast<std::size_t>(u)];
    const auto& hist = history[static_cast<std::size_t>(u)];

    double seq_term = 0.0;
    if (!hist.empty()) {
      double wsum = 0.0, acc = 0.0, w = 1.0;
      for (auto it = hist.rbegin(); it != hist.rend(); ++it) {  // newest first
        acc += w * detail::dot(cat.items[static_cast<std::size_t>(*it)].style, item.style);
        wsum += w;
        w *= cfg.recency_decay;
      }
      seq_term = acc / wsum;
    }
    const double logit = cfg.w_interest * detail::dot(user.interest, item.style) +
                         cfg.w_sequence * seq_term +
                         cfg.w_popularity * std::log(item.popularity) + cfg.bias;
    const double p_true = detail::sigmoid(logit);
    const int clicked = rng.uniform01() < p_true ? 1 : 0;

    const double sigma_eff =
        cfg.sigma_base *
        (1.0 + cfg.sigma_base_cold_boost /
                   (1.0 + static_cast<double>(pv[static_cast<std::size_t>(i)]) / cfg.cold_pv_scale));
    double base = p_true;
    if (sigma_eff > 0.0) {
      const double noisy_logit = std::log(p_true / (1.0 - p_true)) + sigma_eff * rng.normal();
      base = detail::sigmoid(noisy_logit);
    }

    Impression imp;
    imp.user_id = u;
    imp.item_id = i;
    imp.clicked = clicked;
    imp.sequence_snapshot.assign(hist.begin(), hist.end());
    imp.base_pctr = base;
    imp.p_true = p_true;
    imp.timestamp = static_cast<long long>(t);
    imp.user_step = user_steps[static_cast<std::size_t>(u)]++;
    log.impressions.push_back(std::move(imp));

    if (clicked) {
      auto& h = history[static_cast<std::size_t>(u)];
      h.push_back(i);
      while (static_cast<int>(h.size()) > cfg.n_max) h.pop_front();
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Derived views
// ---------------------------------------------------------------------------

inline std::vector<std::int64_t> item_page_views(const InteractionLog& log, int n_items) {
  std::vector<std::int64_t> pv(static_cast<std::size_t>(n_items), 0);
  for (const auto& imp : log.impressions) ++pv[static_cast<std::size_t>(imp.item_id)];
  return pv;
}

inline std::vector<std::size_t> pv_bucket_histogram(const std::vector<std::int64_t>& pv,
                                                    const evalkit::PvBucketing& b = {}) {
  std::vector<std::size_t> hist(b.bucket_count(), 0);
  for (std::int64_t v : pv) ++hist[b.bucket_of(v)];
  return hist;
}

// AUC of the generator's own click probabilities: the ceiling any model can
// reach on this world.
inline double bayes_auc(const InteractionLog& log) {
  std::vector<double> scores, labels;
  scores.reserve(log.impressions.size());
  labels.reserve(log.impressions.size());
  for (const auto& imp : log.impressions) {
    scores.push_back(imp.p_true);
    labels.push_back(static_cast<double>(imp.clicked));
  }
  return evalkit::auc(scores, labels);
}

// Co-click mining: unordered item pairs clicked by the same user within
// `window` user-local steps, deduplicated per user, kept when at least
// `min_count` users contributed.
inline PairSet mine_coclick_pairs(const InteractionLog& log, int min_count, int window) {
  if (log.impressions.empty()) throw ContractError("mine_coclick_pairs: empty log");
  if (min_count < 1) throw ContractError("mine_coclick_pairs: min_count must be >= 1");

  std::map<int, std::vector<std::pair<long long, int>>> clicks_by_user;
  for (const auto& imp : log.impressions)
    if (imp.clicked) clicks_by_user[imp.user_id].emplace_back(imp.user_step, imp.item_id);

  std::map<std::pair<int, int>, int> counts;
  for (auto& [user, clicks] : clicks_by_user) {
    std::sort(clicks.begin(), clicks.end());
    std::map<std::pair<int, int>, bool> seen;  // per-user dedupe
    for (std::size_t a = 0; a < clicks.size(); ++a) {
      for (std::size_t b = a + 1; b < clicks.size(); ++b) {
        if (clicks[b].first - clicks[a].first > window) break;
        int x = clicks[a].second, y = clicks[b].second;
        if (x == y) continue;
        if (x > y) std::swap(x, y);
        seen[{x, y}] = true;
      }
    }
    for (const auto& [p, _] : seen) ++counts[p];
  }

  PairSet out;
  for (const auto& [p, c] : counts) {
    if (c >= min_count) {
      out.pairs.push_back(p);
      out.counts.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL serialization
// ---------------------------------------------------------------------------

inline nlohmann::json item_to_json(const Item& it) {
  return {{"item_id", it.item_id},
          {"style", it.style},
          {"modality_a", it.modality_a},
          {"modality_b", it.modality_b},
          {"popularity", it.popularity}};
}

inline Item item_from_json(const nlohmann::json& j) {
  Item it;
  it.item_id = j.at("item_id").get<int>();
  it.style = j.at("style").get<std::vector<double>>();
  it.modality_a = j.at("modality_a").get<std::vector<double>>();
  it.modality_b = j.at("modality_b").get<std::vector<double>>();
  it.popularity = j.at("popularity").get<double>();
  return it;
}

inline nlohmann::json user_to_json(const User& u) {
  return {{"user_id", u.user_id}, {"interest", u.interest}, {"profile", u.profile}};
}

inline User user_from_json(const nlohmann::json& j) {
  User u;
  u.user_id = j.at("user_id").get<int>();
  u.interest = j.at("interest").get<std::vector<double>>();
  u.profile = j.at("profile").get<std::vector<int>>();
  return u;
}

inline nlohmann::json impression_to_json(const Impression& imp) {
  return {{"user_id", imp.user_id},       {"item_id", imp.item_id},
          {"clicked", imp.clicked},       {"sequence", imp.sequence_snapshot},
          {"base_pctr", imp.base_pctr},   {"p_true", imp.p_true},
          {"timestamp", imp.timestamp},   {"user_step", imp.user_step}};
}

inline Impression impression_from_json(const nlohmann::json& j) {
  Impression imp;
  imp.user_id = j.at("user_id").get<int>();
  imp.item_id = j.at("item_id").get<int>();
  imp.clicked = j.at("clicked").get<int>();
  imp.sequence_snapshot = j.at("sequence").get<std::vector<int>>();
  imp.base_pctr = j.at("base_pctr").get<double>();
  imp.p_true = j.at("p_true").get<double>();
  imp.timestamp = j.at("timestamp").get<long long>();
  imp.user_step = j.at("user_step").get<long long>();
  return imp;
}

}  // namespace savior::synthgen
