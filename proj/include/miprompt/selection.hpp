#pragma once

/**
 * Template selection: the estimation driver that turns a backend and a
 * dataset into per-template statistics, MI ranking, top-p ensembling, the
 * labeled-accuracy baseline sweep, and transfer-score normalization.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "backend.hpp"
#include "collapse.hpp"
#include "core.hpp"
#include "infotheory.hpp"

namespace miprompt {

// ============================================================================
// Deterministic sampling
// ============================================================================

namespace detail {

/// Uniform draw in [0, bound) by rejection, so results do not depend on the
/// standard library's distribution implementation.
inline std::uint64_t bounded_uniform(std::mt19937_64& rng,
                                     std::uint64_t bound) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % bound;
  for (;;) {
    const std::uint64_t x = rng();
    if (x < limit) return x % bound;
  }
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[bounded_uniform(rng, i)]);
  }
}

/// splitmix64 finalizer folded over the inputs; decorrelates the per-cell
/// streams of the baseline sweep.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b) {
  auto fin = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return fin(fin(fin(seed) ^ a) ^ b);
}

}  // namespace detail

/**
 * The first min(n, total) positions of a seeded shuffle of [0, total).
 * Because the whole list is shuffled before the prefix is taken, growing n
 * under the same seed only appends instances, never reorders them.
 */
inline std::vector<std::size_t> subsample_indices(std::size_t total,
                                                  std::size_t n,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> indices(total);
  for (std::size_t i = 0; i < total; ++i) indices[i] = i;
  std::mt19937_64 rng(seed);
  detail::seeded_shuffle(indices, rng);
  indices.resize(std::min(n, total));
  return indices;
}

// ============================================================================
// Accuracy
// ============================================================================

/**
 * Closed mode compares the argmax label with the gold label exactly. Open
 * mode treats the argmax token (already normalized) as correct when it is a
 * non-empty prefix of the normalized gold answer text.
 */
inline bool prediction_correct(const LabelDistribution& dist,
                               const std::string& gold, LabelMode mode) {
  const std::string& predicted = dist.argmax_label();
  if (mode == LabelMode::closed) return predicted == gold;
  return matches_answer(predicted, normalize_token(gold));
}

inline double accuracy(std::span<const LabelDistribution> predictions,
                       std::span<const std::string> golds, LabelMode mode) {
  if (predictions.size() != golds.size()) {
    throw LengthMismatchError(predictions.size(), golds.size());
  }
  if (predictions.empty()) throw EmptySampleError();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (prediction_correct(predictions[i], golds[i], mode)) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(predictions.size());
}

// ============================================================================
// Estimation driver
// ============================================================================

/// Everything recorded for one template over the sampled instances. The
/// parallel vectors cover usable (non-skipped) instances in sample order; in
/// open mode the distributions are already aligned to one shared token space.
struct TemplateEstimate {
  TemplateStats stats;
  std::vector<LabelDistribution> distributions;
  std::vector<std::string> instance_ids;
  std::vector<std::optional<std::string>> golds;
};

struct EstimationResult {
  std::vector<TemplateEstimate> templates;  // config order
  std::vector<std::string> sampled_ids;     // the N drawn instances, in order
};

/**
 * Runs every template over one seeded subsample of the dataset:
 * render, query, collapse, then the entropy decomposition per template.
 * ZeroMassError marks an instance skipped for that template;
 * skipped instances leave both the MI and the accuracy denominators.
 * Accuracy is reported when every usable instance carries a gold value.
 * Backend queries fan out over descriptor().max_parallel threads; every
 * aggregate is computed in sample order, so results do not depend on the
 * interleaving.
 */
inline EstimationResult run_estimation(RunConfig cfg,
                                       std::span<const InstanceRecord> instances,
                                       Backend& backend,
                                       const LabelSpacePtr& space) {
  if (!space) throw ConfigError("run_estimation: null label space");
  cfg = validate_run_config(std::move(cfg), *space);
  if (instances.empty()) {
    throw ConfigError("run_estimation: dataset is empty");
  }

  const auto sample = subsample_indices(instances.size(), cfg.n, cfg.seed);
  EstimationResult result;
  result.sampled_ids.reserve(sample.size());
  for (std::size_t idx : sample) {
    result.sampled_ids.push_back(instances[idx].id);
  }

  const int workers = backend.descriptor().max_parallel;
  for (const auto& tpl : cfg.templates) {
    auto responses = detail::parallel_map_ordered<TokenTopK>(
        sample.size(), workers, [&](std::size_t i) {
          return backend.query_logprobs(
              render_prompt(tpl, instances[sample[i]]));
        });

    TemplateEstimate estimate;
    estimate.stats.template_id = tpl.id;
    for (std::size_t i = 0; i < responses.size(); ++i) {
      const InstanceRecord& instance = instances[sample[i]];
      try {
        LabelDistribution dist =
            collapse(responses[i], tpl.collapsing_map, space);
        estimate.distributions.push_back(std::move(dist));
        estimate.instance_ids.push_back(instance.id);
        estimate.golds.push_back(instance.gold);
      } catch (const ZeroMassError&) {
        ++estimate.stats.skipped;
      }
    }

    estimate.stats.n = estimate.distributions.size();
    if (estimate.stats.n > 0) {
      if (space->mode() == LabelMode::open) {
        estimate.distributions =
            align_open_distributions(estimate.distributions);
      }
      const auto decomposition = decompose_entropy(estimate.distributions);
      estimate.stats.mi = decomposition.mi;
      estimate.stats.marginal_entropy = decomposition.marginal;
      estimate.stats.conditional_entropy = decomposition.conditional;

      const bool all_gold =
          std::all_of(estimate.golds.begin(), estimate.golds.end(),
                      [](const auto& g) { return g.has_value(); });
      if (all_gold) {
        std::vector<std::string> golds;
        golds.reserve(estimate.golds.size());
        for (const auto& g : estimate.golds) golds.push_back(*g);
        estimate.stats.accuracy =
            accuracy(estimate.distributions, golds, space->mode());
      }
    }
    result.templates.push_back(std::move(estimate));
  }
  return result;
}

// ============================================================================
// Ranking and ensembling
// ============================================================================

/// Templates ordered by estimated MI, descending; equal MI breaks toward the
/// smaller id so a rerun can never swap places.
struct RankedTemplates {
  std::vector<TemplateStats> stats;

  std::vector<int> order() const {
    std::vector<int> ids;
    ids.reserve(stats.size());
    for (const auto& s : stats) ids.push_back(s.template_id);
    return ids;
  }

  const TemplateStats& best() const { return stats.front(); }

  std::vector<int> top_p(int p) const {
    if (p < 1 || static_cast<std::size_t>(p) > stats.size()) {
      throw EnsembleTooLargeError(p, stats.size());
    }
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) ids.push_back(stats[i].template_id);
    return ids;
  }
};

inline RankedTemplates rank_by_mi(std::vector<TemplateStats> stats) {
  if (stats.empty()) throw EmptyTemplatesError();
  std::sort(stats.begin(), stats.end(),
            [](const TemplateStats& a, const TemplateStats& b) {
              if (a.mi != b.mi) return a.mi > b.mi;
              return a.template_id < b.template_id;
            });
  return RankedTemplates{std::move(stats)};
}

/// Highest value wins, ties break toward the smaller id.
inline int select_by_mi(std::span<const TemplateStats> stats) {
  if (stats.empty()) throw EmptyTemplatesError();
  const TemplateStats* best = nullptr;
  for (const auto& s : stats) {
    if (best == nullptr || s.mi > best->mi ||
        (s.mi == best->mi && s.template_id < best->template_id)) {
      best = &s;
    }
  }
  return best->template_id;
}

/// Labeled baseline: highest accuracy wins, ties break toward the smaller
/// id. Every entry must carry an accuracy.
inline int select_by_accuracy(std::span<const TemplateStats> stats) {
  if (stats.empty()) throw EmptyTemplatesError();
  const TemplateStats* best = nullptr;
  for (const auto& s : stats) {
    if (!s.accuracy) {
      throw ConfigError("select_by_accuracy: template " +
                        std::to_string(s.template_id) + " has no accuracy");
    }
    if (best == nullptr || *s.accuracy > *best->accuracy ||
        (*s.accuracy == *best->accuracy &&
         s.template_id < best->template_id)) {
      best = &s;
    }
  }
  return best->template_id;
}

/**
 * Instance-wise average of the member templates' label distributions.
 * Every member must cover the same instances in the same order; a count
 * mismatch (diverging skip patterns) is an error, not a silent intersection.
 */
inline std::vector<LabelDistribution> ensemble_distributions(
    std::span<const int> member_ids,
    const std::map<int, std::vector<LabelDistribution>>& per_template) {
  if (member_ids.empty()) throw EmptyTemplatesError();
  std::vector<const std::vector<LabelDistribution>*> members;
  members.reserve(member_ids.size());
  std::size_t count = 0;
  for (int id : member_ids) {
    auto it = per_template.find(id);
    if (it == per_template.end()) {
      throw ConfigError("ensemble: no distributions for template " +
                        std::to_string(id));
    }
    if (members.empty()) {
      count = it->second.size();
    } else if (it->second.size() != count) {
      throw MismatchedInstanceCountsError(id, it->second.size(), count);
    }
    members.push_back(&it->second);
  }

  std::vector<LabelDistribution> ensembled;
  ensembled.reserve(count);
  std::vector<LabelDistribution> column;
  for (std::size_t i = 0; i < count; ++i) {
    column.clear();
    for (const auto* member : members) column.push_back((*member)[i]);
    ensembled.push_back(mean_distribution(column));
  }
  return ensembled;
}

/// Averages the p highest-MI templates' distributions per instance.
inline std::vector<LabelDistribution> ensemble_top_p(
    const RankedTemplates& ranked, int p,
    const std::map<int, std::vector<LabelDistribution>>& per_template) {
  const auto ids = ranked.top_p(p);
  return ensemble_distributions(ids, per_template);
}

// ============================================================================
// Transfer normalization
// ============================================================================

/**
 * Rescales a selected template's accuracy against the template pool:
 * 0 at the pool mean, 1 at the pool maximum. Requires max > mean, which
 * fails only when every template scores the same.
 */
inline double normalize_transfer(double selected_accuracy,
                                 std::span<const double> pool_accuracies) {
  if (pool_accuracies.empty()) {
    throw ConfigError("normalize_transfer: empty accuracy pool");
  }
  const double mean = detail::pairwise_sum(pool_accuracies) /
                      static_cast<double>(pool_accuracies.size());
  const double max =
      *std::max_element(pool_accuracies.begin(), pool_accuracies.end());
  if (max <= mean) throw DegenerateSpreadError();
  return (selected_accuracy - mean) / (max - mean);
}

/// One cell of a cross-model transfer matrix: templates ranked on the
/// selection model, accuracy measured on the inference model.
struct TransferCell {
  std::string selection_model;
  std::string inference_model;
  int selected_template_id = 0;
  double normalized_score = 0.0;
};

/// What picks the template on the selection model: MI (unlabeled) or the
/// accuracy oracle (labeled upper bound).
enum class SelectionMode { mi, oracle };

inline TransferCell transfer_cell(const std::string& selection_model,
                                  std::span<const TemplateStats> selection_stats,
                                  const std::string& inference_model,
                                  std::span<const TemplateStats> inference_stats,
                                  SelectionMode mode = SelectionMode::mi) {
  const int chosen = mode == SelectionMode::mi
                         ? select_by_mi(selection_stats)
                         : select_by_accuracy(selection_stats);
  std::vector<double> pool;
  pool.reserve(inference_stats.size());
  std::optional<double> selected;
  for (const auto& s : inference_stats) {
    if (!s.accuracy) {
      throw ConfigError("transfer: template " +
                        std::to_string(s.template_id) +
                        " has no accuracy on " + inference_model);
    }
    pool.push_back(*s.accuracy);
    if (s.template_id == chosen) selected = *s.accuracy;
  }
  if (!selected) {
    throw ConfigError("transfer: selected template " +
                      std::to_string(chosen) + " missing from " +
                      inference_model + " stats");
  }
  return {selection_model, inference_model, chosen,
          normalize_transfer(*selected, pool)};
}

// ============================================================================
// Baseline sweep
// ============================================================================

/**
 * Precomputed per-template, per-instance outcomes over a whole dataset, so a
 * sweep repartitions cheaply without touching the backend again. Slot i of
 * each inner vector belongs to instance i; nullopt marks a skip.
 */
struct SweepInputs {
  LabelSpacePtr space;
  std::vector<int> template_ids;
  std::vector<std::vector<std::optional<LabelDistribution>>> distributions;
  std::vector<std::vector<std::optional<bool>>> correct;
  std::size_t instance_count = 0;
};

inline SweepInputs collect_sweep_inputs(const RunConfig& cfg,
                                        std::span<const InstanceRecord> instances,
                                        Backend& backend,
                                        const LabelSpacePtr& space) {
  if (!space) throw ConfigError("collect_sweep_inputs: null label space");
  validate_run_config(cfg, *space);
  if (instances.empty()) {
    throw ConfigError("collect_sweep_inputs: dataset is empty");
  }
  for (const auto& instance : instances) {
    if (!instance.gold) {
      throw ConfigError("baseline sweep: instance " + instance.id +
                        " has no gold value");
    }
  }

  SweepInputs inputs;
  inputs.space = space;
  inputs.instance_count = instances.size();
  const int workers = backend.descriptor().max_parallel;
  for (const auto& tpl : cfg.templates) {
    auto responses = detail::parallel_map_ordered<TokenTopK>(
        instances.size(), workers, [&](std::size_t i) {
          return backend.query_logprobs(render_prompt(tpl, instances[i]));
        });
    std::vector<std::optional<LabelDistribution>> dists(instances.size());
    std::vector<std::optional<bool>> correct(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
      try {
        LabelDistribution dist =
            collapse(responses[i], tpl.collapsing_map, space);
        correct[i] =
            prediction_correct(dist, *instances[i].gold, space->mode());
        dists[i] = std::move(dist);
      } catch (const ZeroMassError&) {
        // skip stays nullopt
      }
    }
    inputs.template_ids.push_back(tpl.id);
    inputs.distributions.push_back(std::move(dists));
    inputs.correct.push_back(std::move(correct));
  }
  return inputs;
}

struct SweepPoint {
  std::size_t train_n = 0;
  std::size_t partitions = 0;
  double accuracy_selection_mean = 0.0;  // labeled baseline
  double accuracy_selection_stddev = 0.0;
  double mi_selection_mean = 0.0;  // unlabeled MI selection
  double mi_selection_stddev = 0.0;
};

namespace detail {

inline double mean_of(std::span<const double> xs) {
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

/// Sample standard deviation; 0 when fewer than two observations.
inline double stddev_of(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mean = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

/// Test-set accuracy of one template over the usable subset; a template
/// with no usable instance in the subset scores 0.
inline double subset_accuracy(const std::vector<std::optional<bool>>& correct,
                              std::span<const std::size_t> subset) {
  std::size_t usable = 0;
  std::size_t hits = 0;
  for (std::size_t i : subset) {
    if (!correct[i]) continue;
    ++usable;
    if (*correct[i]) ++hits;
  }
  if (usable == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(usable);
}

inline double subset_mi(const SweepInputs& inputs, std::size_t tpl_index,
                        std::span<const std::size_t> subset) {
  std::vector<LabelDistribution> dists;
  dists.reserve(subset.size());
  for (std::size_t i : subset) {
    if (inputs.distributions[tpl_index][i]) {
      dists.push_back(*inputs.distributions[tpl_index][i]);
    }
  }
  if (dists.empty()) return -std::numeric_limits<double>::infinity();
  if (inputs.space->mode() == LabelMode::open) {
    dists = align_open_distributions(dists);
  }
  return decompose_entropy(dists).mi;
}

}  // namespace detail

/**
 * For each train size n: P seeded repartitions into train (first n of a
 * shuffle) and test (the rest). On the train half, one template is selected
 * by labeled accuracy and one by MI alone; both selections are scored by
 * accuracy on the held-out half. Each (n, partition) cell derives its own
 * rng stream from the base seed, so adding train sizes or partitions never
 * disturbs the other cells.
 */
inline std::vector<SweepPoint> baseline_sweep(
    const SweepInputs& inputs, std::span<const std::size_t> train_sizes,
    std::size_t partitions, std::uint64_t seed) {
  if (inputs.template_ids.empty()) throw EmptyTemplatesError();
  if (partitions < 1) {
    throw ConfigError("baseline sweep: partitions must be >= 1");
  }
  const std::size_t total = inputs.instance_count;
  std::vector<SweepPoint> points;
  points.reserve(train_sizes.size());

  for (std::size_t train_n : train_sizes) {
    if (train_n < 1 || train_n >= total) {
      throw ConfigError("baseline sweep: train size " +
                        std::to_string(train_n) +
                        " must leave a non-empty test split of " +
                        std::to_string(total) + " instances");
    }
    std::vector<double> acc_scores;
    std::vector<double> mi_scores;
    acc_scores.reserve(partitions);
    mi_scores.reserve(partitions);

    for (std::size_t part = 0; part < partitions; ++part) {
      std::vector<std::size_t> order(total);
      for (std::size_t i = 0; i < total; ++i) order[i] = i;
      std::mt19937_64 rng(detail::mix_seed(seed, train_n, part));
      detail::seeded_shuffle(order, rng);
      const std::span<const std::size_t> train(order.data(), train_n);
      const std::span<const std::size_t> test(order.data() + train_n,
                                              total - train_n);

      double best_acc = -std::numeric_limits<double>::infinity();
      double best_mi = -std::numeric_limits<double>::infinity();
      std::size_t acc_pick = 0;
      std::size_t mi_pick = 0;
      auto better = [&](double value, double best, std::size_t t,
                        std::size_t pick) {
        return value > best ||
               (value == best &&
                inputs.template_ids[t] < inputs.template_ids[pick]);
      };
      for (std::size_t t = 0; t < inputs.template_ids.size(); ++t) {
        const double train_acc =
            detail::subset_accuracy(inputs.correct[t], train);
        if (t == 0 || better(train_acc, best_acc, t, acc_pick)) {
          best_acc = train_acc;
          acc_pick = t;
        }
        const double train_mi = detail::subset_mi(inputs, t, train);
        if (t == 0 || better(train_mi, best_mi, t, mi_pick)) {
          best_mi = train_mi;
          mi_pick = t;
        }
      }
      acc_scores.push_back(
          detail::subset_accuracy(inputs.correct[acc_pick], test));
      mi_scores.push_back(
          detail::subset_accuracy(inputs.correct[mi_pick], test));
    }

    SweepPoint point;
    point.train_n = train_n;
    point.partitions = partitions;
    point.accuracy_selection_mean = detail::mean_of(acc_scores);
    point.accuracy_selection_stddev = detail::stddev_of(acc_scores);
    point.mi_selection_mean = detail::mean_of(mi_scores);
    point.mi_selection_stddev = detail::stddev_of(mi_scores);
    points.push_back(point);
  }
  return points;
}

}  // namespace miprompt
