#pragma once

/**
 * The g_phi abstraction: prompt rendering and top-k logprob acquisition.
 *
 * Two backends share one interface. MockBackend serves responses from an
 * exact-match fixture table keyed by the rendered prompt, which makes every
 * estimation run fully deterministic. RemoteBackend (remote.hpp) talks to a
 * completion endpoint and persists responses in an append-only cache.
 */

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "collapse.hpp"
#include "core.hpp"
#include "sha256.hpp"

namespace miprompt {

// ============================================================================
// Descriptor
// ============================================================================

enum class BackendKind { mock, remote };

struct BackendDescriptor {
  std::string id;  // model name phi
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // remote only
  int top_k = 100;       // requested logprob depth, recorded in every report
  std::chrono::milliseconds request_timeout{30000};
  int max_parallel = 1;
  std::string auth_env;  // env var holding the bearer token, optional
  int max_retries = 5;   // rate-limit backoff cap
  std::chrono::milliseconds retry_initial_delay{250};
};

inline BackendDescriptor validate_descriptor(BackendDescriptor desc) {
  if (desc.id.empty()) throw ConfigError("backend: id must be non-empty");
  if (desc.kind == BackendKind::remote && desc.endpoint.empty()) {
    throw ConfigError("backend: remote kind requires an endpoint");
  }
  if (desc.top_k < 1) throw ConfigError("backend: top_k must be >= 1");
  if (desc.max_parallel < 1) {
    throw ConfigError("backend: max_parallel must be >= 1");
  }
  return desc;
}

/// Advisory only: shallow top-k against a closed space starves the collapse.
inline std::vector<std::string> descriptor_warnings(
    const BackendDescriptor& desc, const LabelSpace& space) {
  std::vector<std::string> warnings;
  if (space.mode() == LabelMode::closed &&
      desc.top_k < static_cast<int>(space.size())) {
    warnings.push_back("top_k (" + std::to_string(desc.top_k) +
                       ") is below the label count (" +
                       std::to_string(space.size()) + ")");
  }
  return warnings;
}

// ============================================================================
// Prompt rendering
// ============================================================================

/**
 * Fills the scaffold's {placeholder} slots from the instance fields.
 * Byte-exact around the substitutions: no trimming, no newline
 * normalization.
 */
inline std::string render_prompt(const TemplateSpec& tpl,
                                 const InstanceRecord& instance) {
  const std::string_view scaffold = tpl.scaffold;
  std::string out;
  out.reserve(scaffold.size());
  std::size_t i = 0;
  while (i < scaffold.size()) {
    if (scaffold[i] != '{') {
      out.push_back(scaffold[i++]);
      continue;
    }
    std::size_t j = i + 1;
    while (j < scaffold.size() &&
           (std::isalnum(static_cast<unsigned char>(scaffold[j])) ||
            scaffold[j] == '_')) {
      ++j;
    }
    const bool is_placeholder =
        j > i + 1 && j < scaffold.size() && scaffold[j] == '}' &&
        (std::isalpha(static_cast<unsigned char>(scaffold[i + 1])) ||
         scaffold[i + 1] == '_');
    if (!is_placeholder) {
      out.push_back(scaffold[i++]);
      continue;
    }
    const std::string name(scaffold.substr(i + 1, j - i - 1));
    auto it = instance.fields.find(name);
    if (it == instance.fields.end()) throw MissingFieldError(name);
    out += it->second;
    i = j + 1;
  }
  return out;
}

inline std::string prompt_hash_hex(std::string_view prompt) {
  return detail::sha256_hex(prompt);
}

// ============================================================================
// Backend interface
// ============================================================================

class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  /// Top-k logprobs of the next token after `prompt`. Thread safe.
  virtual TokenTopK query_logprobs(const std::string& prompt) = 0;

 protected:
  static void require_prompt(const std::string& prompt) {
    if (prompt.empty()) throw ConfigError("query_logprobs: empty prompt");
  }
};

// ============================================================================
// Mock backend
// ============================================================================

using MockTable = std::unordered_map<std::string, std::vector<TokenEntry>>;

class MockBackend final : public Backend {
 public:
  MockBackend(BackendDescriptor desc, MockTable table)
      : desc_(validate_descriptor(std::move(desc))), table_(std::move(table)) {}

  /// Table file format: one JSON object mapping each prompt string to a list
  /// of [token, logprob] pairs.
  static MockBackend from_json_file(const std::filesystem::path& path,
                                    BackendDescriptor desc) {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("mock table: cannot open " + path.string());
    }
    nlohmann::json doc;
    try {
      in >> doc;
      MockTable table;
      for (const auto& [prompt, entries] : doc.items()) {
        std::vector<TokenEntry> list;
        for (const auto& pair : entries) {
          list.push_back({pair.at(0).get<std::string>(),
                          pair.at(1).get<double>()});
        }
        // Constructing a response validates the entries up front.
        TokenTopK probe(list, "");
        table.emplace(prompt, std::move(list));
      }
      return MockBackend(std::move(desc), std::move(table));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("mock table " + path.string() + ": " + e.what());
    } catch (const MalformedResponseError& e) {
      throw ConfigError("mock table " + path.string() + ": " + e.what());
    }
  }

  const BackendDescriptor& descriptor() const override { return desc_; }

  TokenTopK query_logprobs(const std::string& prompt) override {
    require_prompt(prompt);
    auto it = table_.find(prompt);
    if (it == table_.end()) throw FixtureMissError(prompt);
    return TokenTopK(it->second, prompt_hash_hex(prompt));
  }

  std::size_t table_size() const { return table_.size(); }

 private:
  BackendDescriptor desc_;
  MockTable table_;
};

// ============================================================================
// Response cache
// ============================================================================

struct CacheEntry {
  std::string backend_id;
  std::string prompt_hash;  // hex digest of the rendered prompt
  int top_k = 0;
  TokenTopK response{{}, ""};
  std::string fetched_at;  // RFC 3339, UTC
};

inline std::string now_rfc3339() {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

/**
 * Persistent response cache. One JSON record per line, append-only; the last
 * record wins when a key repeats at load, so merged or partially written
 * files stay usable (a torn trailing line is skipped).
 *
 * Key: (backend_id, prompt_hash, top_k).
 */
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        insert_locked(parse_line(line));
      } catch (const std::exception&) {
        // Torn or foreign line; ignore.
      }
    }
  }

  std::optional<TokenTopK> lookup(const std::string& backend_id,
                                  const std::string& prompt_hash,
                                  int top_k) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(std::tie(backend_id, prompt_hash, top_k));
    if (it == entries_.end()) return std::nullopt;
    return it->second.response;
  }

  void store(CacheEntry entry) {
    std::unique_lock lock(mutex_);
    std::ofstream out(path_, std::ios::app);
    if (!out) {
      throw ConfigError("cache: cannot open " + path_.string() +
                        " for append");
    }
    out << serialize_line(entry) << '\n';
    insert_locked(std::move(entry));
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  const std::filesystem::path& path() const { return path_; }

  static std::string serialize_line(const CacheEntry& entry) {
    nlohmann::ordered_json record;
    record["backend_id"] = entry.backend_id;
    record["prompt_hash"] = entry.prompt_hash;
    record["top_k"] = entry.top_k;
    auto& list = record["entries"] = nlohmann::json::array();
    for (const auto& e : entry.response.entries()) {
      list.push_back({e.token, e.logprob});
    }
    record["fetched_at"] = entry.fetched_at;
    return record.dump();
  }

  static CacheEntry parse_line(const std::string& line) {
    const auto record = nlohmann::json::parse(line);
    std::vector<TokenEntry> entries;
    for (const auto& pair : record.at("entries")) {
      entries.push_back(
          {pair.at(0).get<std::string>(), pair.at(1).get<double>()});
    }
    CacheEntry entry;
    entry.backend_id = record.at("backend_id").get<std::string>();
    entry.prompt_hash = record.at("prompt_hash").get<std::string>();
    entry.top_k = record.at("top_k").get<int>();
    entry.response = TokenTopK(std::move(entries), entry.prompt_hash);
    entry.fetched_at = record.at("fetched_at").get<std::string>();
    return entry;
  }

 private:
  using Key = std::tuple<std::string, std::string, int>;

  void insert_locked(CacheEntry entry) {
    Key key{entry.backend_id, entry.prompt_hash, entry.top_k};
    entries_.insert_or_assign(std::move(key), std::move(entry));
  }

  mutable std::shared_mutex mutex_;
  std::filesystem::path path_;
  std::map<Key, CacheEntry> entries_;
};

// ============================================================================
// Parallel query helper
// ============================================================================

namespace detail {

/**
 * Runs fn(i) for i in [0, count) on up to `workers` threads and returns the
 * results in index order, so downstream aggregation is deterministic no
 * matter how the calls interleave. The first exception wins and is rethrown
 * after all workers join.
 */
template <typename T, typename Fn>
std::vector<T> parallel_map_ordered(std::size_t count, int workers, Fn&& fn) {
  std::vector<T> results;
  if (count == 0) return results;
  if (workers <= 1 || count == 1) {
    results.reserve(count);
    for (std::size_t i = 0; i < count; ++i) results.push_back(fn(i));
    return results;
  }

  std::vector<std::optional<T>> slots(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        slots[i] = fn(i);
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t thread_count =
      std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  std::vector<std::thread> threads;
  threads.reserve(thread_count);
  for (std::size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  if (error) std::rethrow_exception(error);
  results.reserve(count);
  for (auto& slot : slots) results.push_back(std::move(*slot));
  return results;
}

}  // namespace detail

// ============================================================================
// Playground check
// ============================================================================

inline constexpr double kPlaygroundMassThreshold = 0.5;

struct PlaygroundEntry {
  int template_id = 0;
  double success_fraction = 0.0;   // non-zero-mass collapses / samples
  double mean_matched_mass = 0.0;  // matched exp(logprob) before renormalizing
  bool flagged = false;
};

/**
 * Label-free sanity pass over a small sample: does each template put
 * probability mass on tokens its collapsing map can absorb? Gold labels are
 * never consulted. A template whose mean matched mass falls below the
 * threshold is flagged for revision.
 */
inline std::vector<PlaygroundEntry> playground_check(
    Backend& backend, std::span<const TemplateSpec> templates,
    std::span<const InstanceRecord> sample, const LabelSpacePtr& space,
    double threshold = kPlaygroundMassThreshold) {
  if (sample.empty()) throw EmptySampleError();
  std::vector<PlaygroundEntry> report;
  report.reserve(templates.size());
  for (const auto& tpl : templates) {
    PlaygroundEntry entry;
    entry.template_id = tpl.id;
    double mass_sum = 0.0;
    std::size_t successes = 0;
    for (const auto& instance : sample) {
      const auto response =
          backend.query_logprobs(render_prompt(tpl, instance));
      const double mass = collapsed_mass(response, tpl.collapsing_map, space);
      mass_sum += mass;
      if (mass > 0.0) ++successes;
    }
    entry.success_fraction =
        static_cast<double>(successes) / static_cast<double>(sample.size());
    entry.mean_matched_mass = mass_sum / static_cast<double>(sample.size());
    entry.flagged = entry.mean_matched_mass < threshold;
    report.push_back(entry);
  }
  return report;
}

}  // namespace miprompt
