#pragma once

/**
 * Core domain types for mutual-information template selection.
 *
 * A prompt template pairs a natural-language scaffold (placeholders filled
 * from dataset instances) with a collapsing map that folds a model's
 * next-token logprobs into a distribution over task labels. Everything
 * downstream (entropy decomposition, ranking, ensembling, reports) speaks
 * the types in this header.
 *
 * Conventions:
 * - Entropy and mutual information are in nats everywhere.
 * - Template ids are 1-based and stable across reports.
 * - All types are immutable after construction and safe to share across
 *   threads.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace miprompt {

// ============================================================================
// Errors
// ============================================================================

/// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad inputs: configs, label spaces, datasets, reports. CLI exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

/// Transport, fixture, or response failures from a backend. CLI exit code 3.
struct BackendError : Error {
  using Error::Error;
};

struct EmptyTemplatesError : ConfigError {
  EmptyTemplatesError() : ConfigError("templates: list is empty") {}
};

struct EnsembleTooLargeError : ConfigError {
  EnsembleTooLargeError(int p, std::size_t k)
      : ConfigError("ensemble_p: " + std::to_string(p) +
                    " exceeds template count " + std::to_string(k)) {}
};

struct DuplicateLabelsError : ConfigError {
  explicit DuplicateLabelsError(const std::string& label)
      : ConfigError("labels: duplicate or empty label \"" + label + "\"") {}
};

/// No token in a response matched any label; the instance carries no signal.
struct ZeroMassError : Error {
  ZeroMassError() : Error("collapse: no token matched any answer variant") {}
};

/// One token prefixes answers of two different labels, so the response
/// cannot be attributed. Signals a broken collapsing setup.
struct AmbiguousTokenError : ConfigError {
  AmbiguousTokenError(const std::string& token, const std::string& label_a,
                      const std::string& label_b)
      : ConfigError("collapse: token \"" + token + "\" matches both label \"" +
                    label_a + "\" and label \"" + label_b + "\"") {}
};

struct MismatchedSpacesError : ConfigError {
  MismatchedSpacesError()
      : ConfigError("distributions do not share one label space") {}
};

struct LengthMismatchError : ConfigError {
  LengthMismatchError(std::size_t a, std::size_t b)
      : ConfigError("length mismatch: " + std::to_string(a) + " vs " +
                    std::to_string(b)) {}
};

struct DegenerateVarianceError : ConfigError {
  DegenerateVarianceError()
      : ConfigError("pearson_r: input has zero variance") {}
};

struct DegenerateSpreadError : ConfigError {
  DegenerateSpreadError()
      : ConfigError("normalize_transfer: max accuracy equals mean accuracy") {}
};

struct MismatchedInstanceCountsError : ConfigError {
  MismatchedInstanceCountsError(int template_id, std::size_t got,
                                std::size_t want)
      : ConfigError("ensemble: template " + std::to_string(template_id) +
                    " has " + std::to_string(got) + " distributions, expected " +
                    std::to_string(want)) {}
};

struct MissingFieldError : ConfigError {
  explicit MissingFieldError(const std::string& name)
      : ConfigError("render_prompt: instance is missing field \"" + name +
                    "\"") {}
};

struct EmptySampleError : ConfigError {
  EmptySampleError() : ConfigError("playground_check: sample is empty") {}
};

struct FixtureMissError : BackendError {
  explicit FixtureMissError(const std::string& prompt)
      : BackendError("mock backend: no fixture entry for prompt \"" +
                     (prompt.size() > 80 ? prompt.substr(0, 80) + "..."
                                         : prompt) +
                     "\"") {}
};

struct TransportError : BackendError {
  using BackendError::BackendError;
};

struct MalformedResponseError : BackendError {
  using BackendError::BackendError;
};

struct RateLimitedError : BackendError {
  using BackendError::BackendError;
};

// ============================================================================
// Label space
// ============================================================================

enum class LabelMode { closed, open };

/**
 * The target space Y. Closed mode enumerates the task labels up front; open
 * mode leaves them empty at declaration time and lets each response define
 * its own observed-token space.
 */
class LabelSpace {
 public:
  /// Closed task space over an explicit label list. Labels must be unique
  /// and non-empty, and at least one is required.
  static LabelSpace closed(std::vector<std::string> labels) {
    if (labels.empty()) throw DuplicateLabelsError("");
    std::unordered_set<std::string_view> seen;
    for (const auto& label : labels) {
      if (label.empty() || !seen.insert(label).second) {
        throw DuplicateLabelsError(label);
      }
    }
    return LabelSpace(LabelMode::closed, std::move(labels));
  }

  /// Open task space: labels are defined per response.
  static LabelSpace open() { return LabelSpace(LabelMode::open, {}); }

  /// Per-response open-mode space whose labels are the observed normalized
  /// tokens of one response (or a union of responses).
  static LabelSpace observed(std::vector<std::string> tokens) {
    return LabelSpace(LabelMode::open, std::move(tokens));
  }

  LabelMode mode() const { return mode_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  const std::string& label(std::size_t i) const { return labels_[i]; }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == label) return i;
    }
    return std::nullopt;
  }

  friend bool operator==(const LabelSpace&, const LabelSpace&) = default;

 private:
  LabelSpace(LabelMode mode, std::vector<std::string> labels)
      : mode_(mode), labels_(std::move(labels)) {}

  LabelMode mode_;
  std::vector<std::string> labels_;
};

using LabelSpacePtr = std::shared_ptr<const LabelSpace>;

inline LabelSpacePtr make_space(LabelSpace space) {
  return std::make_shared<const LabelSpace>(std::move(space));
}

/// True when two distributions may be combined: same object or equal content.
inline bool same_space(const LabelSpacePtr& a, const LabelSpacePtr& b) {
  return a == b || (a && b && *a == *b);
}

// ============================================================================
// Label distribution
// ============================================================================

/// Tolerance for the sum-to-1 invariant of LabelDistribution.
inline constexpr double kProbSumTolerance = 1e-9;

/**
 * A normalized probability distribution P(Y | f_theta(x)) over the labels of
 * one space. Construction validates non-negativity and the sum-to-1
 * invariant; `normalized` builds one from raw non-negative weights.
 */
class LabelDistribution {
 public:
  LabelDistribution(LabelSpacePtr space, std::vector<double> probs)
      : space_(std::move(space)), probs_(std::move(probs)) {
    if (!space_) throw ConfigError("LabelDistribution: null label space");
    if (probs_.size() != space_->size()) {
      throw LengthMismatchError(probs_.size(), space_->size());
    }
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) {
        throw ConfigError("LabelDistribution: negative or NaN probability");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
      throw ConfigError("LabelDistribution: probabilities sum to " +
                        std::to_string(sum) + ", expected 1");
    }
  }

  /// Normalizes raw non-negative weights (total must be positive).
  static LabelDistribution normalized(LabelSpacePtr space,
                                      std::vector<double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) {
        throw ConfigError("LabelDistribution: negative or NaN weight");
      }
      total += w;
    }
    if (!(total > 0.0)) throw ZeroMassError();
    for (double& w : weights) w /= total;
    return LabelDistribution(std::move(space), std::move(weights));
  }

  const LabelSpace& space() const { return *space_; }
  const LabelSpacePtr& space_ptr() const { return space_; }
  std::span<const double> probs() const { return probs_; }
  std::size_t size() const { return probs_.size(); }
  double prob(std::size_t i) const { return probs_[i]; }

  /// Index of the most probable label; ties go to the first label in space
  /// order.
  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs_.size(); ++i) {
      if (probs_[i] > probs_[best]) best = i;
    }
    return best;
  }

  const std::string& argmax_label() const { return space_->label(argmax()); }

  friend bool operator==(const LabelDistribution& a,
                         const LabelDistribution& b) {
    return same_space(a.space_, b.space_) && a.probs_ == b.probs_;
  }

 private:
  LabelSpacePtr space_;
  std::vector<double> probs_;
};

// ============================================================================
// Backend response
// ============================================================================

struct TokenEntry {
  std::string token;
  double logprob = 0.0;  // natural log, <= 0

  friend bool operator==(const TokenEntry&, const TokenEntry&) = default;
};

/**
 * One backend response: the top-k (token, logprob) pairs of the model's
 * next-token distribution, plus a digest of the prompt that produced it.
 * Tokens are opaque strings; no tokenizer is modeled.
 */
class TokenTopK {
 public:
  TokenTopK(std::vector<TokenEntry> entries, std::string prompt_hash)
      : entries_(std::move(entries)), prompt_hash_(std::move(prompt_hash)) {
    std::unordered_set<std::string_view> seen;
    for (const auto& e : entries_) {
      if (!std::isfinite(e.logprob) || e.logprob > 0.0) {
        throw MalformedResponseError("TokenTopK: logprob " +
                                     std::to_string(e.logprob) +
                                     " for token \"" + e.token +
                                     "\" is not a finite value <= 0");
      }
      if (!seen.insert(e.token).second) {
        throw MalformedResponseError("TokenTopK: duplicate token \"" +
                                     e.token + "\"");
      }
    }
  }

  const std::vector<TokenEntry>& entries() const { return entries_; }
  const std::string& prompt_hash() const { return prompt_hash_; }
  bool empty() const { return entries_.empty(); }

  friend bool operator==(const TokenTopK& a, const TokenTopK& b) {
    return a.entries_ == b.entries_ && a.prompt_hash_ == b.prompt_hash_;
  }

 private:
  std::vector<TokenEntry> entries_;
  std::string prompt_hash_;
};

// ============================================================================
// Templates and instances
// ============================================================================

/// label -> answer strings whose first tokens identify that label.
using CollapsingMap = std::map<std::string, std::vector<std::string>>;

/**
 * A templatizing function f_theta: a scaffold with {placeholder} slots,
 * paired with the collapsing map c_theta. An absent collapsing map means
 * open-vocabulary mode (all tokens considered).
 */
struct TemplateSpec {
  int id = 0;  // 1-based
  std::string scaffold;
  std::optional<CollapsingMap> collapsing_map;
  std::optional<std::string> few_shot_block;  // static exemplar text, already
                                              // part of the scaffold

  bool open_vocabulary() const { return !collapsing_map.has_value(); }
};

/// Placeholder names in `scaffold`, in order of appearance, duplicates kept.
/// A placeholder is `{name}` where name is [A-Za-z_][A-Za-z0-9_]*; any other
/// brace sequence is literal text.
inline std::vector<std::string> extract_placeholders(
    std::string_view scaffold) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < scaffold.size(); ++i) {
    if (scaffold[i] != '{') continue;
    std::size_t j = i + 1;
    if (j >= scaffold.size()) break;
    char c = scaffold[j];
    if (!(std::isalpha(static_cast<unsigned char>(c)) || c == '_')) continue;
    while (j < scaffold.size() &&
           (std::isalnum(static_cast<unsigned char>(scaffold[j])) ||
            scaffold[j] == '_')) {
      ++j;
    }
    if (j < scaffold.size() && scaffold[j] == '}') {
      names.emplace_back(scaffold.substr(i + 1, j - i - 1));
      i = j;
    }
  }
  return names;
}

/// One raw dataset input x: named fields for the scaffolds plus an optional
/// gold label (closed mode) or gold answer text (open mode).
struct InstanceRecord {
  std::string id;
  std::map<std::string, std::string> fields;
  std::optional<std::string> gold;
};

// ============================================================================
// Estimation results and run configuration
// ============================================================================

/**
 * Per-template estimate: the MI value with its entropy components, the
 * number of instances that produced a usable distribution, and the count of
 * instances skipped because no token matched any label.
 */
struct TemplateStats {
  int template_id = 0;
  double mi = 0.0;                   // nats
  double marginal_entropy = 0.0;     // H(Y)
  double conditional_entropy = 0.0;  // H(Y | f_theta(X))
  std::size_t n = 0;
  std::optional<double> accuracy;
  std::size_t skipped = 0;

  /// More than half of the attempted instances collapsed to zero mass; the
  /// template would not have survived a playground pass.
  bool failed_playground() const { return 2 * skipped > n + skipped; }
};

/// One estimation run: K templates, an instance budget, and backend identity.
struct RunConfig {
  std::vector<TemplateSpec> templates;
  std::size_t n = 1;          // instance budget N
  std::uint64_t seed = 0;     // for instance subsampling
  std::string backend_id;     // names the model phi
  int top_k = 100;            // requested logprob depth
  int ensemble_p = 1;
};

/**
 * Validates a run configuration against its label space. Returns the config
 * unchanged when every invariant holds:
 * - at least one template, n >= 1, 1 <= ensemble_p <= K
 * - template ids are positive and unique
 * - each placeholder appears exactly once in its scaffold
 * - closed mode: every template carries a map giving every label at least
 *   one answer string; open mode: no template carries a map
 */
inline RunConfig validate_run_config(RunConfig cfg, const LabelSpace& space) {
  if (cfg.templates.empty()) throw EmptyTemplatesError();
  if (cfg.n < 1) throw ConfigError("n: instance budget must be >= 1");
  if (cfg.ensemble_p < 1) throw ConfigError("ensemble_p: must be >= 1");
  if (static_cast<std::size_t>(cfg.ensemble_p) > cfg.templates.size()) {
    throw EnsembleTooLargeError(cfg.ensemble_p, cfg.templates.size());
  }
  if (cfg.top_k < 1) throw ConfigError("top_k: must be >= 1");

  std::unordered_set<int> ids;
  for (const auto& tpl : cfg.templates) {
    const std::string where = "template " + std::to_string(tpl.id);
    if (tpl.id < 1) throw ConfigError(where + ": id must be >= 1");
    if (!ids.insert(tpl.id).second) {
      throw ConfigError(where + ": duplicate id");
    }

    auto names = extract_placeholders(tpl.scaffold);
    std::unordered_set<std::string_view> seen;
    for (const auto& name : names) {
      if (!seen.insert(name).second) {
        throw ConfigError(where + ": placeholder {" + name +
                          "} appears more than once in the scaffold");
      }
    }

    if (space.mode() == LabelMode::closed) {
      if (!tpl.collapsing_map) {
        throw ConfigError(where + ": closed label space requires a collapsing map");
      }
      for (const auto& label : space.labels()) {
        auto it = tpl.collapsing_map->find(label);
        if (it == tpl.collapsing_map->end() || it->second.empty()) {
          throw ConfigError(where + ": collapsing map gives no answer string for label \"" +
                            label + "\"");
        }
      }
      for (const auto& [label, variants] : *tpl.collapsing_map) {
        if (!space.index_of(label)) {
          throw ConfigError(where + ": collapsing map names unknown label \"" +
                            label + "\"");
        }
        for (const auto& v : variants) {
          if (v.empty()) {
            throw ConfigError(where + ": empty answer string for label \"" +
                              label + "\"");
          }
        }
      }
    } else if (tpl.collapsing_map) {
      throw ConfigError(where + ": open label space forbids a collapsing map");
    }
  }
  return cfg;
}

}  // namespace miprompt
