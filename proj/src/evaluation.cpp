#include "ptuner/evaluation.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace ptuner {

std::string cache_key(const Candidate& c) { return serialize(c); }

ResultCache::ResultCache(std::optional<std::filesystem::path> directory) : dir_(std::move(directory)) {
    if (dir_) std::filesystem::create_directories(*dir_);
}

std::string ResultCache::entry_file_name(const std::string& key) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx.rec", static_cast<unsigned long long>(fnv1a64(key)));
    return buf;
}

std::optional<ResultCache::Entry> ResultCache::lookup(const std::string& key) {
    std::lock_guard lock(mu_);
    if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    if (!dir_) return std::nullopt;
    auto e = read_disk(key);
    if (e) entries_.emplace(key, *e);
    return e;
}

void ResultCache::store(const std::string& key, Entry e) {
    std::lock_guard lock(mu_);
    entries_.insert_or_assign(key, e);
    if (dir_) write_disk(key, e);
}

std::size_t ResultCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

// File layout, one field per line:
//   pareto-tuner-cache 1
//   key <cache key>
//   time_ms <%.17g>
//   quality <%.17g>
std::optional<ResultCache::Entry> ResultCache::read_disk(const std::string& key) const {
    std::ifstream in(*dir_ / entry_file_name(key));
    if (!in) return std::nullopt;
    std::string header, line;
    if (!std::getline(in, header) || header != "pareto-tuner-cache 1") return std::nullopt;
    if (!std::getline(in, line) || line != "key " + key) return std::nullopt; // hash collision or stale
    Entry e{};
    std::string tag;
    if (!(in >> tag >> e.time_ms) || tag != "time_ms") return std::nullopt;
    if (!(in >> tag >> e.quality) || tag != "quality") return std::nullopt;
    return e;
}

void ResultCache::write_disk(const std::string& key, Entry e) const {
    const auto final_path = *dir_ / entry_file_name(key);
    const auto tmp_path = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp_path, std::ios::trunc);
        if (!out) return;
        char buf[96];
        out << "pareto-tuner-cache 1\n" << "key " << key << '\n';
        std::snprintf(buf, sizeof buf, "time_ms %.17g\nquality %.17g\n", e.time_ms, e.quality);
        out << buf;
    }
    std::error_code ec;
    std::filesystem::rename(tmp_path, final_path, ec);
}

namespace {

EvalResult attempt_with_retries(const EvalRequest& req, Backend& backend, std::size_t retries,
                                std::mutex* serial, std::atomic<std::size_t>& calls) {
    EvalResult last = EvalResult::failure(req.id, "not evaluated");
    for (std::size_t attempt = 0; attempt <= retries; ++attempt) {
        try {
            ++calls;
            if (serial) {
                std::lock_guard lock(*serial);
                last = backend.evaluate(req);
            } else {
                last = backend.evaluate(req);
            }
            last.id = req.id;
        } catch (const std::exception& e) {
            last = EvalResult::failure(req.id, e.what());
        }
        if (last.ok()) return last;
    }
    return last;
}

} // namespace

std::vector<EvalResult> evaluate_batch(const std::vector<EvalRequest>& reqs, Backend& backend,
                                       std::size_t parallelism, std::size_t retries, ResultCache* cache,
                                       BatchStats* stats) {
    std::vector<EvalResult> out(reqs.size());
    if (reqs.empty()) return out;

    // Collapse duplicates: `owner[i]` is the first request with the same key.
    std::vector<std::string> keys(reqs.size());
    std::unordered_map<std::string, std::size_t> first;
    std::vector<std::size_t> owner(reqs.size());
    std::vector<std::size_t> pending;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        keys[i] = cache_key(reqs[i].candidate);
        auto [it, inserted] = first.emplace(keys[i], i);
        owner[i] = it->second;
        if (!inserted) continue;
        if (cache) {
            if (auto e = cache->lookup(keys[i])) {
                out[i] = EvalResult::success(reqs[i].id, e->time_ms, e->quality);
                ++hits;
                continue;
            }
        }
        pending.push_back(i);
    }

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> calls{0};
    std::mutex serial_mu;
    std::mutex* serial = backend.parallel_safe() ? nullptr : &serial_mu;
    auto worker = [&] {
        for (std::size_t k = next++; k < pending.size(); k = next++) {
            const std::size_t i = pending[k];
            out[i] = attempt_with_retries(reqs[i], backend, retries, serial, calls);
            if (cache && out[i].ok()) cache->store(keys[i], {out[i].time_ms, out[i].quality});
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(parallelism, 1), pending.size());
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }

    for (std::size_t i = 0; i < reqs.size(); ++i) {
        if (owner[i] == i) continue;
        out[i] = out[owner[i]];
        out[i].id = reqs[i].id;
    }
    if (stats) {
        stats->backend_calls += calls.load();
        stats->cache_hits += hits + (reqs.size() - first.size());
    }
    return out;
}

Evaluator::Evaluator(std::shared_ptr<Backend> backend, std::size_t parallelism, std::size_t retries,
                     std::optional<std::filesystem::path> disk_cache)
    : backend_(std::move(backend)), parallelism_(parallelism), retries_(retries),
      cache_(std::move(disk_cache)) {}

std::vector<EvalResult> Evaluator::evaluate(const std::vector<EvalRequest>& reqs) {
    return evaluate_batch(reqs, *backend_, parallelism_, retries_, &cache_, &stats_);
}

} // namespace ptuner
