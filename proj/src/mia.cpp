#include "tulab/mia.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tulab {
namespace {

using nlohmann::json;

// Runs fn(0..n-1); results must be written by index so scheduling order
// cannot leak into the output.
template <typename Fn>
void parallel_tasks(int n, int n_threads, Fn&& fn) {
  if (n_threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::future<void>> futures;
  const int workers = std::min(n_threads, n);
  futures.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, worker));
  }
  for (auto& f : futures) f.get();
}

double sum_log_density(const std::vector<double>& losses, const GaussianFit& fit) {
  double total = 0.0;
  for (double l : losses) total += gaussian_log_density(l, fit);
  return total;
}

}  // namespace

GaussianFit fit_loss_gaussian(const std::vector<double>& losses, double sigma_floor) {
  if (losses.size() < 2) {
    throw InvalidArgument("need at least 2 losses to fit a Gaussian, got " +
                          std::to_string(losses.size()));
  }
  GaussianFit fit;
  fit.n = static_cast<int>(losses.size());
  double sum = 0.0;
  for (double l : losses) sum += l;
  fit.mu = sum / static_cast<double>(losses.size());
  double sq = 0.0;
  for (double l : losses) sq += (l - fit.mu) * (l - fit.mu);
  const double var = sq / static_cast<double>(losses.size() - 1);
  fit.sigma = std::max(std::sqrt(var), sigma_floor);
  if (!std::isfinite(fit.mu) || !std::isfinite(fit.sigma)) {
    throw NumericalFailure("non-finite Gaussian fit");
  }
  return fit;
}

double gaussian_log_density(double x, const GaussianFit& fit) {
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  const double z = (x - fit.mu) / fit.sigma;
  return -kHalfLog2Pi - std::log(fit.sigma) - 0.5 * z * z;
}

std::vector<int> ShadowCollection::shadows_with_tool(int tool_id) const {
  std::vector<int> out;
  for (size_t i = 0; i < shadows.size(); ++i) {
    if (!shadows[i].out_tools.count(tool_id)) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> ShadowCollection::shadows_without_tool(int tool_id) const {
  std::vector<int> out;
  for (size_t i = 0; i < shadows.size(); ++i) {
    if (shadows[i].out_tools.count(tool_id)) out.push_back(static_cast<int>(i));
  }
  return out;
}

ShadowCollection train_shadow_models(const ToolUniverse& universe, const Tokenizer& tok,
                                     const std::vector<Demonstration>& all_demos,
                                     const Checkpoint& start,
                                     const std::vector<int>& forget_set_sizes,
                                     int n_shadows_per_size, const TrainHyper& hyper,
                                     uint64_t seed, int n_threads) {
  const int n_tools = static_cast<int>(universe.tools.size());
  if (n_shadows_per_size < 1) throw InvalidArgument("n_shadows_per_size must be >= 1");
  for (int s : forget_set_sizes) {
    if (s < 1 || s >= n_tools) {
      throw InvalidArgument("shadow forget-set size " + std::to_string(s) +
                            " must be in [1, n_tools)");
    }
  }

  ShadowCollection collection;
  collection.n_tools = n_tools;

  std::vector<int> ids(static_cast<size_t>(n_tools));
  std::iota(ids.begin(), ids.end(), 0);

  for (size_t si = 0; si < forget_set_sizes.size(); ++si) {
    const int size = forget_set_sizes[si];
    Rng rng(derive_seed(seed, "mia.shadow_draw", si));
    std::vector<std::set<int>> draws;
    const bool want_coverage = n_shadows_per_size >= n_tools;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      draws.clear();
      std::vector<int> out_count(static_cast<size_t>(n_tools), 0);
      for (int k = 0; k < n_shadows_per_size; ++k) {
        std::vector<int> pool = ids;
        std::shuffle(pool.begin(), pool.end(), rng);
        std::set<int> out(pool.begin(), pool.begin() + size);
        for (int t : out) out_count[static_cast<size_t>(t)]++;
        draws.push_back(std::move(out));
      }
      if (!want_coverage) break;
      const bool covered = std::all_of(out_count.begin(), out_count.end(), [&](int c) {
        return c >= 1 && c < n_shadows_per_size;
      });
      if (covered) break;
    }
    for (int k = 0; k < n_shadows_per_size; ++k) {
      ShadowModel sm;
      sm.out_tools = draws[static_cast<size_t>(k)];
      sm.forget_set_size = size;
      sm.index = k;
      collection.shadows.push_back(std::move(sm));
    }
  }

  parallel_tasks(static_cast<int>(collection.shadows.size()), n_threads, [&](int i) {
    auto& sm = collection.shadows[static_cast<size_t>(i)];
    std::vector<Example> dataset;
    for (const auto& d : all_demos) {
      if (!sm.out_tools.count(d.tool_id)) {
        dataset.push_back(Example{tok.encode(d.query), tok.encode(d.response)});
      }
    }
    TrainHyper h = hyper;
    h.seed = derive_seed(seed, "mia.shadow_train", static_cast<uint64_t>(i));
    sm.ckpt = train_lm(start, dataset, h);
  });

  return collection;
}

std::vector<double> harvest_losses(const Checkpoint& model, const Tokenizer& tok,
                                   const ShadowSet& shadow_set) {
  if (shadow_set.samples.empty()) throw InvalidArgument("shadow set is empty");
  std::vector<double> losses;
  losses.reserve(shadow_set.samples.size());
  for (const auto& d : shadow_set.samples) {
    losses.push_back(sequence_loss(model, tok.encode(d.query), tok.encode(d.response)));
  }
  return losses;
}

ShadowLossTable harvest_shadow_losses(const ShadowCollection& collection, const Tokenizer& tok,
                                      const std::map<int, ShadowSet>& shadow_sets,
                                      int n_threads) {
  ShadowLossTable table;
  table.losses.resize(collection.shadows.size());
  parallel_tasks(static_cast<int>(collection.shadows.size()), n_threads, [&](int i) {
    auto& row = table.losses[static_cast<size_t>(i)];
    for (const auto& [tool_id, set] : shadow_sets) {
      row[tool_id] = harvest_losses(collection.shadows[static_cast<size_t>(i)].ckpt, tok, set);
    }
  });
  return table;
}

LiraFits build_lira_fits(const ShadowCollection& collection, const ShadowLossTable& table,
                         double sigma_floor) {
  LiraFits fits;
  std::map<int, std::vector<double>> in_pool, out_pool;
  for (size_t i = 0; i < collection.shadows.size(); ++i) {
    const auto& sm = collection.shadows[i];
    for (const auto& [tool_id, losses] : table.losses[i]) {
      auto& pool = sm.out_tools.count(tool_id) ? out_pool[tool_id] : in_pool[tool_id];
      pool.insert(pool.end(), losses.begin(), losses.end());
    }
  }
  for (const auto& [tool_id, losses] : in_pool) {
    if (losses.size() >= 2) fits.fit_in[tool_id] = fit_loss_gaussian(losses, sigma_floor);
  }
  for (const auto& [tool_id, losses] : out_pool) {
    if (losses.size() >= 2) fits.fit_out[tool_id] = fit_loss_gaussian(losses, sigma_floor);
  }
  return fits;
}

MiaStatistic lira_tool_statistic(const Checkpoint& f_prime, const Checkpoint& f,
                                 const Tokenizer& tok,
                                 const std::map<int, ShadowSet>& shadow_sets_forget,
                                 const std::map<int, ShadowSet>& shadow_sets_retain,
                                 const LiraFits& fits) {
  MiaStatistic stat;

  std::map<int, std::vector<double>> forget_losses, retain_losses;
  std::vector<double> forget_pool, retain_pool;
  for (const auto& [tool_id, set] : shadow_sets_forget) {
    auto losses = harvest_losses(f_prime, tok, set);
    forget_pool.insert(forget_pool.end(), losses.begin(), losses.end());
    forget_losses[tool_id] = std::move(losses);
  }
  for (const auto& [tool_id, set] : shadow_sets_retain) {
    auto losses = harvest_losses(f, tok, set);
    retain_pool.insert(retain_pool.end(), losses.begin(), losses.end());
    retain_losses[tool_id] = std::move(losses);
  }

  stat.fit_unlearned = fit_loss_gaussian(forget_pool);
  stat.fit_retain = fit_loss_gaussian(retain_pool);

  // Products in the ratio become sums of log densities.
  double numerator = 0.0, denominator = 0.0;
  for (const auto& [tool_id, losses] : forget_losses) {
    numerator += sum_log_density(losses, stat.fit_unlearned);
  }
  for (const auto& [tool_id, losses] : retain_losses) {
    denominator += sum_log_density(losses, stat.fit_retain);
  }
  stat.log_lambda = numerator - denominator;

  auto per_tool_score = [&](int tool_id, const std::vector<double>& losses) {
    auto in_it = fits.fit_in.find(tool_id);
    auto out_it = fits.fit_out.find(tool_id);
    if (in_it == fits.fit_in.end() || out_it == fits.fit_out.end()) {
      throw NotFound("missing IN/OUT fit for tool " + std::to_string(tool_id));
    }
    return sum_log_density(losses, in_it->second) - sum_log_density(losses, out_it->second);
  };
  for (const auto& [tool_id, losses] : forget_losses) {
    stat.per_tool[tool_id] = per_tool_score(tool_id, losses);
  }
  for (const auto& [tool_id, losses] : retain_losses) {
    stat.per_tool[tool_id] = per_tool_score(tool_id, losses);
  }
  return stat;
}

std::vector<std::pair<double, int>> sample_level_lira(
    const Checkpoint& model, const Tokenizer& tok,
    const std::vector<Demonstration>& member_pairs,
    const std::vector<Demonstration>& nonmember_pairs, const GaussianFit& fit_in,
    const GaussianFit& fit_out) {
  std::vector<std::pair<double, int>> scores;
  scores.reserve(member_pairs.size() + nonmember_pairs.size());
  auto score_of = [&](const Demonstration& d) {
    const double l = sequence_loss(model, tok.encode(d.query), tok.encode(d.response));
    return gaussian_log_density(l, fit_in) - gaussian_log_density(l, fit_out);
  };
  for (const auto& d : member_pairs) scores.emplace_back(score_of(d), 1);
  for (const auto& d : nonmember_pairs) scores.emplace_back(score_of(d), 0);
  return scores;
}

RocResult roc_curve(const std::vector<std::pair<double, int>>& scores_with_labels) {
  long long pos = 0, neg = 0;
  for (const auto& [s, label] : scores_with_labels) {
    (label != 0 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) {
    throw InvalidArgument("ROC needs both member and non-member scores");
  }

  std::vector<std::pair<double, int>> sorted = scores_with_labels;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocResult roc;
  roc.points.push_back({0.0, 0.0});
  long long tp = 0, fp = 0;
  double auc_numerator = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    // One threshold per distinct score; ties advance together.
    long long tp_inc = 0, fp_inc = 0;
    const double score = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == score) {
      (sorted[i].second != 0 ? tp_inc : fp_inc)++;
      ++i;
    }
    auc_numerator += static_cast<double>(fp_inc) *
                     (static_cast<double>(tp) + 0.5 * static_cast<double>(tp_inc));
    tp += tp_inc;
    fp += fp_inc;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  roc.auc = auc_numerator / (static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

double tpr_at_fpr(const RocResult& roc, double fpr_target) {
  double best = 0.0;
  for (const auto& p : roc.points) {
    if (p.fpr <= fpr_target) best = std::max(best, p.tpr);
  }
  return best;
}

MiaReport evaluate_attack(const Checkpoint& f_prime, const Checkpoint& f, const Tokenizer& tok,
                          const CorpusSplit& split,
                          const std::map<int, ShadowSet>& shadow_sets,
                          const ShadowCollection& collection, const ShadowLossTable& table,
                          const LiraFits& fits) {
  std::map<int, ShadowSet> forget_sets, retain_sets;
  for (const auto& [tool_id, set] : shadow_sets) {
    if (split.forget_tools.count(tool_id)) {
      forget_sets[tool_id] = set;
    } else {
      retain_sets[tool_id] = set;
    }
  }
  if (forget_sets.empty()) throw InvalidArgument("no shadow sets for forget tools");

  MiaStatistic stat = lira_tool_statistic(f_prime, f, tok, forget_sets, retain_sets, fits);

  MiaReport report;
  report.per_tool_log_lambda = stat.per_tool;
  report.log_lambda = stat.log_lambda;

  // Member decisions: forget tools on the unlearned model.
  for (const auto& [tool_id, set] : forget_sets) {
    report.scores.emplace_back(stat.per_tool.at(tool_id), 1);
  }
  // Non-member decisions: tools scored on shadows that never trained them.
  for (size_t i = 0; i < collection.shadows.size(); ++i) {
    const auto& sm = collection.shadows[i];
    for (int tool_id : sm.out_tools) {
      auto it = table.losses[i].find(tool_id);
      if (it == table.losses[i].end()) continue;
      auto in_it = fits.fit_in.find(tool_id);
      auto out_it = fits.fit_out.find(tool_id);
      if (in_it == fits.fit_in.end() || out_it == fits.fit_out.end()) continue;
      const double score = sum_log_density(it->second, in_it->second) -
                           sum_log_density(it->second, out_it->second);
      report.scores.emplace_back(score, 0);
    }
  }

  report.roc = roc_curve(report.scores);
  report.auc = report.roc.auc;
  report.tpr_at_fpr_001 = tpr_at_fpr(report.roc, 0.01);
  return report;
}

std::string mia_report_to_json(const MiaReport& report) {
  json per_tool = json::object();
  for (const auto& [tool_id, v] : report.per_tool_log_lambda) {
    per_tool[std::to_string(tool_id)] = v;
  }
  json scores = json::array();
  for (const auto& [s, label] : report.scores) scores.push_back({{"score", s}, {"member", label}});
  json points = json::array();
  for (const auto& p : report.roc.points) points.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}});
  json j{{"per_tool_log_lambda", per_tool},
         {"log_lambda", report.log_lambda},
         {"scores", scores},
         {"roc", points},
         {"auc", report.auc},
         {"tpr_at_fpr_001", report.tpr_at_fpr_001}};
  return j.dump(2);
}

MiaReport mia_report_from_json(const std::string& text) {
  json j = json::parse(text);
  MiaReport r;
  for (const auto& [key, v] : j.at("per_tool_log_lambda").items()) {
    r.per_tool_log_lambda[std::stoi(key)] = v.get<double>();
  }
  r.log_lambda = j.at("log_lambda").get<double>();
  for (const auto& s : j.at("scores")) {
    r.scores.emplace_back(s.at("score").get<double>(), s.at("member").get<int>());
  }
  for (const auto& p : j.at("roc")) {
    r.roc.points.push_back({p.at("fpr").get<double>(), p.at("tpr").get<double>()});
  }
  r.auc = j.at("auc").get<double>();
  r.roc.auc = r.auc;
  r.tpr_at_fpr_001 = j.at("tpr_at_fpr_001").get<double>();
  return r;
}

std::string roc_to_tsv(const RocResult& roc) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& p : roc.points) out << p.fpr << '\t' << p.tpr << '\n';
  return out.str();
}

}  // namespace tulab
