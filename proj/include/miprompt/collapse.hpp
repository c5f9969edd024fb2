#pragma once

/**
 * The collapsing function c_theta.
 *
 * A backend response is a top-k list of (token, logprob) pairs. Collapsing
 * folds it into a label distribution: tokens are normalized (lower-cased,
 * Unicode whitespace stripped from both ends), a token counts toward a label
 * when it is a non-empty prefix of one of that label's answer strings, the
 * exponentiated logprobs of matching tokens are summed per label, and the
 * sums are normalized. Open-vocabulary mode skips the matching step: the
 * normalized tokens themselves become the label space.
 *
 * Only the returned top-k participates; unreturned tail mass is ignored and
 * the result renormalized.
 *
 * Case folding covers ASCII and the Latin-1 supplement. The answer sets this
 * library targets are single ASCII-ish words; full Unicode case folding
 * would pull in ICU.
 */

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "core.hpp"

namespace miprompt {

namespace detail {

// Unicode White_Space code points.
inline bool is_unicode_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x20: case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

/// Decodes the UTF-8 code point starting at `pos`; advances `pos` past it.
/// Malformed bytes decode as themselves (latin-1 style) one byte at a time.
inline char32_t decode_utf8(std::string_view s, std::size_t& pos) {
  const auto byte = [&](std::size_t i) {
    return static_cast<unsigned char>(s[i]);
  };
  const unsigned char b0 = byte(pos);
  std::size_t len = 1;
  char32_t cp = b0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  }
  if (len == 1 || pos + len > s.size()) {
    ++pos;
    return b0;
  }
  for (std::size_t i = 1; i < len; ++i) {
    if ((byte(pos + i) & 0xC0) != 0x80) {
      ++pos;
      return b0;
    }
    cp = (cp << 6) | (byte(pos + i) & 0x3F);
  }
  pos += len;
  return cp;
}

inline std::size_t prev_codepoint_start(std::string_view s, std::size_t end) {
  std::size_t i = end - 1;
  while (i > 0 && (static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) --i;
  return i;
}

}  // namespace detail

/**
 * Lower-cases `raw` and strips Unicode whitespace from both ends (interior
 * spaces are preserved). An empty result is permitted; it matches nothing.
 */
inline std::string normalize_token(std::string_view raw) {
  std::size_t begin = 0;
  std::size_t end = raw.size();
  while (begin < end) {
    std::size_t next = begin;
    if (!detail::is_unicode_space(detail::decode_utf8(raw, next))) break;
    begin = next;
  }
  while (end > begin) {
    std::size_t start = detail::prev_codepoint_start(raw, end);
    std::size_t next = start;
    if (!detail::is_unicode_space(detail::decode_utf8(raw, next)) ||
        next != end) {
      break;
    }
    end = start;
  }

  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    unsigned char c = static_cast<unsigned char>(raw[i]);
    if (c >= 'A' && c <= 'Z') {
      out.push_back(static_cast<char>(c + 0x20));
    } else if (c == 0xC3 && i + 1 < end) {
      // Latin-1 supplement uppercase range, multiplication sign excepted.
      unsigned char c1 = static_cast<unsigned char>(raw[i + 1]);
      if (c1 >= 0x80 && c1 <= 0x9E && c1 != 0x97) {
        out.push_back(static_cast<char>(c));
        out.push_back(static_cast<char>(c1 + 0x20));
        ++i;
        continue;
      }
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

/// True iff the normalized token is a non-empty prefix of `answer`.
/// `answer` must already be normalized.
inline bool matches_answer(std::string_view token, std::string_view answer) {
  const std::string t = normalize_token(token);
  return !t.empty() && answer.substr(0, t.size()) == t;
}

/// One label's normalized answer variants.
struct NormalizedAnswer {
  std::string label;
  std::vector<std::string> variants;
};

/// Normalizes a collapsing map against a closed space, in label order.
/// Variants that normalize to the empty string are rejected.
inline std::vector<NormalizedAnswer> normalize_answers(
    const CollapsingMap& map, const LabelSpace& space) {
  std::vector<NormalizedAnswer> out;
  out.reserve(space.size());
  for (const auto& label : space.labels()) {
    auto it = map.find(label);
    if (it == map.end() || it->second.empty()) {
      throw ConfigError("collapsing map gives no answer string for label \"" +
                        label + "\"");
    }
    NormalizedAnswer entry{label, {}};
    for (const auto& raw : it->second) {
      std::string v = normalize_token(raw);
      if (v.empty()) {
        throw ConfigError("collapsing map: answer string \"" + raw +
                          "\" for label \"" + label +
                          "\" normalizes to the empty string");
      }
      bool dup = false;
      for (const auto& have : entry.variants) dup = dup || have == v;
      if (!dup) entry.variants.push_back(std::move(v));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

namespace detail {

/// Per-label exponentiated mass for a closed-mode response. A token is
/// credited to at most one label, and once per label even when it prefixes
/// several of that label's variants. A token matching two labels throws.
inline std::vector<double> closed_masses(
    const TokenTopK& topk, const std::vector<NormalizedAnswer>& answers) {
  std::vector<double> mass(answers.size(), 0.0);
  for (const auto& entry : topk.entries()) {
    const std::string t = normalize_token(entry.token);
    if (t.empty()) continue;
    int matched = -1;
    for (std::size_t li = 0; li < answers.size(); ++li) {
      bool hit = false;
      for (const auto& variant : answers[li].variants) {
        if (variant.size() >= t.size() &&
            std::string_view(variant).substr(0, t.size()) == t) {
          hit = true;
          break;
        }
      }
      if (!hit) continue;
      if (matched >= 0) {
        throw AmbiguousTokenError(entry.token,
                                  answers[static_cast<std::size_t>(matched)].label,
                                  answers[li].label);
      }
      matched = static_cast<int>(li);
    }
    if (matched >= 0) {
      mass[static_cast<std::size_t>(matched)] += std::exp(entry.logprob);
    }
  }
  return mass;
}

/// Open-mode masses keyed by normalized token, first-occurrence order.
/// Tokens that normalize to the empty string match nothing and are dropped.
inline std::pair<std::vector<std::string>, std::vector<double>> open_masses(
    const TokenTopK& topk) {
  std::vector<std::string> tokens;
  std::vector<double> mass;
  std::unordered_map<std::string_view, std::size_t> index;
  tokens.reserve(topk.entries().size());
  for (const auto& entry : topk.entries()) {
    std::string t = normalize_token(entry.token);
    if (t.empty()) continue;
    auto it = index.find(t);
    if (it == index.end()) {
      tokens.push_back(std::move(t));
      mass.push_back(std::exp(entry.logprob));
      index.emplace(tokens.back(), tokens.size() - 1);
    } else {
      mass[it->second] += std::exp(entry.logprob);
    }
  }
  return {std::move(tokens), std::move(mass)};
}

}  // namespace detail

/**
 * Collapses one response into a label distribution.
 *
 * Closed mode (map present): per-label prefix-matched mass, normalized over
 * the labels of `space`. Open mode (map absent): mass per distinct
 * normalized token, normalized over an observed-token space.
 *
 * Throws ZeroMassError when nothing matches (the caller records the
 * instance as skipped) and AmbiguousTokenError when one token prefixes
 * answers of two labels.
 */
inline LabelDistribution collapse(const TokenTopK& topk,
                                  const std::optional<CollapsingMap>& map,
                                  const LabelSpacePtr& space) {
  if (!space) throw ConfigError("collapse: null label space");
  if (space->mode() == LabelMode::closed) {
    if (!map) throw ConfigError("collapse: closed label space requires a collapsing map");
    auto answers = normalize_answers(*map, *space);
    auto mass = detail::closed_masses(topk, answers);
    return LabelDistribution::normalized(space, std::move(mass));
  }
  if (map) throw ConfigError("collapse: open label space forbids a collapsing map");
  auto [tokens, mass] = detail::open_masses(topk);
  if (tokens.empty()) throw ZeroMassError();
  return LabelDistribution::normalized(
      make_space(LabelSpace::observed(std::move(tokens))), std::move(mass));
}

/**
 * Matched probability mass of a response before renormalization: the sum of
 * exp(logprob) that the collapse would keep. Drives the playground check.
 */
inline double collapsed_mass(const TokenTopK& topk,
                             const std::optional<CollapsingMap>& map,
                             const LabelSpacePtr& space) {
  double total = 0.0;
  if (space && space->mode() == LabelMode::closed && map) {
    auto answers = normalize_answers(*map, *space);
    for (double m : detail::closed_masses(topk, answers)) total += m;
  } else {
    auto [tokens, mass] = detail::open_masses(topk);
    for (double m : mass) total += m;
  }
  return total;
}

// ============================================================================
// Setup validation
// ============================================================================

/// Two answer variants of different labels that share a first token.
struct CollapsingConflict {
  std::string label_a;
  std::string variant_a;
  std::string label_b;
  std::string variant_b;
  std::string shared_prefix;
};

struct TemplateSetupResult {
  int template_id = 0;
  bool pass = true;
  std::vector<CollapsingConflict> conflicts;
};

struct CollapsingSetupReport {
  std::vector<TemplateSetupResult> templates;

  bool all_pass() const {
    for (const auto& t : templates) {
      if (!t.pass) return false;
    }
    return true;
  }
};

/**
 * Checks every template's collapsing map for cross-label ambiguity: two
 * labels may not share a normalized answer variant, and no variant may share
 * a non-empty prefix with a variant of another label (a token equal to that
 * prefix could not be attributed). Answer sets whose options start with a
 * shared first word fail here.
 */
inline CollapsingSetupReport validate_collapsing_setup(
    std::span<const TemplateSpec> templates, const LabelSpace& space) {
  if (space.mode() != LabelMode::closed) {
    throw ConfigError("validate_collapsing_setup: requires a closed label space");
  }
  CollapsingSetupReport report;
  for (const auto& tpl : templates) {
    TemplateSetupResult result;
    result.template_id = tpl.id;
    if (!tpl.collapsing_map) {
      throw ConfigError("template " + std::to_string(tpl.id) +
                        ": closed label space requires a collapsing map");
    }
    auto answers = normalize_answers(*tpl.collapsing_map, space);
    for (std::size_t a = 0; a < answers.size(); ++a) {
      for (std::size_t b = a + 1; b < answers.size(); ++b) {
        for (const auto& va : answers[a].variants) {
          for (const auto& vb : answers[b].variants) {
            std::size_t k = 0;
            while (k < va.size() && k < vb.size() && va[k] == vb[k]) ++k;
            if (k == 0) continue;
            result.conflicts.push_back({answers[a].label, va,
                                        answers[b].label, vb,
                                        va.substr(0, k)});
          }
        }
      }
    }
    result.pass = result.conflicts.empty();
    report.templates.push_back(std::move(result));
  }
  return report;
}

// ============================================================================
// Open-mode alignment
// ============================================================================

/**
 * Re-expresses open-mode per-response distributions over the sorted union of
 * their observed tokens, so they share one space and can enter the entropy
 * estimators. Labels absent from a response carry probability 0.
 */
inline std::vector<LabelDistribution> align_open_distributions(
    std::span<const LabelDistribution> dists) {
  if (dists.empty()) {
    throw ConfigError("align_open_distributions: empty list");
  }
  std::map<std::string, std::size_t> union_index;
  for (const auto& d : dists) {
    if (d.space().mode() != LabelMode::open) {
      throw ConfigError("align_open_distributions: distribution is not open-mode");
    }
    for (const auto& label : d.space().labels()) union_index.emplace(label, 0);
  }
  std::vector<std::string> labels;
  labels.reserve(union_index.size());
  for (auto& [label, idx] : union_index) {
    idx = labels.size();
    labels.push_back(label);
  }
  auto space = make_space(LabelSpace::observed(std::move(labels)));

  std::vector<LabelDistribution> aligned;
  aligned.reserve(dists.size());
  for (const auto& d : dists) {
    std::vector<double> probs(space->size(), 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      probs[union_index.at(d.space().label(i))] = d.prob(i);
    }
    aligned.emplace_back(space, std::move(probs));
  }
  return aligned;
}

}  // namespace miprompt
