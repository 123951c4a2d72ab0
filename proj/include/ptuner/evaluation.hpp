#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptuner/search_space.hpp"

namespace ptuner {

struct EvalRequest {
    std::string id;
    Candidate candidate;
    std::string base_prompt;
    RenderedPrompt prompt;
};

/// Either objectives or an error, never both.
struct EvalResult {
    std::string id;
    double time_ms = 0.0;
    double quality = 0.0;
    std::optional<std::string> error;

    [[nodiscard]] bool ok() const noexcept { return !error.has_value(); }

    static EvalResult success(std::string id, double time_ms, double quality) {
        return {std::move(id), time_ms, quality, std::nullopt};
    }
    static EvalResult failure(std::string id, std::string message) {
        return {std::move(id), 0.0, 0.0, std::move(message)};
    }
};

struct EvaluationRecord {
    std::int64_t generation = 0;
    Candidate candidate;
    double time_ms = 0.0;
    double quality = 0.0;
    std::string evaluator_id;
    std::chrono::system_clock::time_point wall_clock{};
};

/// Anything that turns a request into objectives: the surrogate, a test
/// problem, or an external process.
class Backend {
public:
    virtual ~Backend() = default;
    [[nodiscard]] virtual std::string id() const = 0;
    /// When false, evaluate_batch never calls evaluate() concurrently.
    [[nodiscard]] virtual bool parallel_safe() const = 0;
    /// May throw; exceptions count as a failed attempt.
    virtual EvalResult evaluate(const EvalRequest& req) = 0;
};

/// Canonical candidate key; equal candidates have equal keys and vice versa.
std::string cache_key(const Candidate& c);

/// Successful results keyed by cache_key(). In memory, optionally mirrored
/// to a directory with one small text file per key. Thread-safe.
class ResultCache {
public:
    ResultCache() = default;
    explicit ResultCache(std::optional<std::filesystem::path> directory);

    struct Entry {
        double time_ms;
        double quality;
    };

    [[nodiscard]] std::optional<Entry> lookup(const std::string& key);
    void store(const std::string& key, Entry e);
    [[nodiscard]] std::size_t size() const;

    static std::string entry_file_name(const std::string& key);

private:
    std::optional<Entry> read_disk(const std::string& key) const;
    void write_disk(const std::string& key, Entry e) const;

    mutable std::mutex mu_;
    std::unordered_map<std::string, Entry> entries_;
    std::optional<std::filesystem::path> dir_;
};

struct BatchStats {
    std::size_t backend_calls = 0;
    std::size_t cache_hits = 0;
};

/// One result per request, in request order. Duplicates inside the batch and
/// cache hits reach the backend zero times; each failing request is retried
/// `retries` times before it comes back as an error result.
std::vector<EvalResult> evaluate_batch(const std::vector<EvalRequest>& reqs, Backend& backend,
                                       std::size_t parallelism, std::size_t retries, ResultCache* cache = nullptr,
                                       BatchStats* stats = nullptr);

/// Backend plus its per-run cache and dispatch settings.
class Evaluator {
public:
    Evaluator(std::shared_ptr<Backend> backend, std::size_t parallelism = 1, std::size_t retries = 1,
              std::optional<std::filesystem::path> disk_cache = std::nullopt);

    std::vector<EvalResult> evaluate(const std::vector<EvalRequest>& reqs);

    [[nodiscard]] std::string id() const { return backend_->id(); }
    [[nodiscard]] const BatchStats& stats() const noexcept { return stats_; }

private:
    std::shared_ptr<Backend> backend_;
    std::size_t parallelism_;
    std::size_t retries_;
    ResultCache cache_;
    BatchStats stats_;
};

} // namespace ptuner
