#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "ptuner/evaluation.hpp"
#include "ptuner/surrogate.hpp"

using namespace ptuner;

namespace {

// Counts calls per key; optionally fails the first `fail_first` attempts per key.
class CountingBackend : public Backend {
public:
    explicit CountingBackend(int fail_first = 0, bool throw_instead = false, bool parallel = true)
        : fail_first_(fail_first), throw_(throw_instead), parallel_(parallel) {}
    std::string id() const override { return "counting"; }
    bool parallel_safe() const override { return parallel_; }
    EvalResult evaluate(const EvalRequest& req) override {
        const int active = ++in_flight_;
        max_in_flight_ = std::max(max_in_flight_.load(), active);
        std::this_thread::sleep_for(std::chrono::microseconds(200));
        int attempt;
        {
            std::lock_guard lock(mu_);
            attempt = ++calls_[cache_key(req.candidate)];
        }
        --in_flight_;
        if (attempt <= fail_first_) {
            if (throw_) throw std::runtime_error("boom");
            return EvalResult::failure(req.id, "transient");
        }
        const auto steps = std::get<std::int64_t>(req.candidate.gene(0));
        return EvalResult::success(req.id, 100.0 * static_cast<double>(steps), 0.5);
    }
    int total_calls() {
        std::lock_guard lock(mu_);
        int n = 0;
        for (auto& [k, v] : calls_) n += v;
        return n;
    }
    std::atomic<int> max_in_flight_{0};

private:
    int fail_first_;
    bool throw_;
    bool parallel_;
    std::atomic<int> in_flight_{0};
    std::mutex mu_;
    std::map<std::string, int> calls_;
};

const SearchSpace kSpace = SearchSpace::default_space();

EvalRequest request(const std::string& id, std::int64_t steps, std::int64_t seed = 7) {
    const Candidate c({steps, 7.5, 0.5, seed, TokenMask{true, false, true}, TokenMask{false, false, false}});
    return {id, c, "two people and a bus", render_prompt(c, "two people and a bus", kSpace)};
}

std::vector<EvalRequest> random_requests(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<EvalRequest> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = sample_random(kSpace, rng);
        out.push_back({"r" + std::to_string(i), c, "two people and a bus", render_prompt(c, "two people and a bus", kSpace)});
    }
    return out;
}

} // namespace

TEST_CASE("empty batch") {
    CountingBackend b;
    CHECK(evaluate_batch({}, b, 4, 1).empty());
    CHECK(b.total_calls() == 0);
}

TEST_CASE("duplicate candidate inside a batch: one call, two identical results") {
    CountingBackend b;
    BatchStats stats;
    const auto res = evaluate_batch({request("a", 10), request("b", 10)}, b, 1, 1, nullptr, &stats);
    REQUIRE(res.size() == 2);
    CHECK(b.total_calls() == 1);
    CHECK(stats.backend_calls == 1);
    CHECK(res[0].id == "a");
    CHECK(res[1].id == "b");
    CHECK(res[0].time_ms == res[1].time_ms);
    CHECK(res[0].quality == res[1].quality);
}

TEST_CASE("results follow request order") {
    CountingBackend b;
    std::vector<EvalRequest> reqs;
    for (int i = 1; i <= 40; ++i) reqs.push_back(request("id" + std::to_string(i), i));
    const auto res = evaluate_batch(reqs, b, 4, 0);
    for (int i = 0; i < 40; ++i) {
        CHECK(res[static_cast<std::size_t>(i)].id == "id" + std::to_string(i + 1));
        CHECK(res[static_cast<std::size_t>(i)].time_ms == 100.0 * (i + 1));
    }
}

TEST_CASE("parallelism 4 vs 1 on the surrogate gives identical results") {
    SurrogateBackend s;
    const auto reqs = random_requests(200, 5);
    const auto one = evaluate_batch(reqs, s, 1, 1);
    const auto four = evaluate_batch(reqs, s, 4, 1);
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
        CHECK(one[i].id == four[i].id);
        CHECK(one[i].time_ms == four[i].time_ms);
        CHECK(one[i].quality == four[i].quality);
    }
}

TEST_CASE("cache hits skip the backend") {
    CountingBackend b;
    ResultCache cache;
    BatchStats stats;
    evaluate_batch({request("a", 3), request("b", 4)}, b, 1, 1, &cache, &stats);
    evaluate_batch({request("c", 3), request("d", 5)}, b, 1, 1, &cache, &stats);
    CHECK(b.total_calls() == 3);
    CHECK(stats.cache_hits == 1);
    CHECK(cache.size() == 3);
}

TEST_CASE("retries recover transient failures") {
    CountingBackend b(1);
    const auto res = evaluate_batch({request("a", 3)}, b, 1, 1);
    CHECK(res[0].ok());
    CHECK(b.total_calls() == 2);
}

TEST_CASE("failures beyond retries surface as error results without objectives") {
    CountingBackend b(5, true);
    ResultCache cache;
    const auto res = evaluate_batch({request("a", 3), request("b", 4)}, b, 2, 2, &cache);
    REQUIRE(res.size() == 2);
    for (const auto& r : res) {
        CHECK(!r.ok());
        CHECK(r.time_ms == 0.0);
        CHECK(r.quality == 0.0);
    }
    CHECK(res[0].id == "a");
    CHECK(b.total_calls() == 6);
    CHECK(cache.size() == 0);
}

TEST_CASE("a backend that is not parallel-safe is never called concurrently") {
    CountingBackend b(0, false, false);
    std::vector<EvalRequest> reqs;
    for (int i = 1; i <= 30; ++i) reqs.push_back(request("x" + std::to_string(i), i));
    evaluate_batch(reqs, b, 8, 0);
    CHECK(b.max_in_flight_.load() == 1);
}

TEST_CASE("cache_key") {
    const auto a = request("a", 50, 7).candidate;
    const auto b = request("b", 50, 7).candidate;
    const auto other_seed = request("c", 50, 8).candidate;
    CHECK(cache_key(a) == cache_key(b));
    CHECK(cache_key(a) != cache_key(other_seed));

    const Candidate sum({std::int64_t{50}, 7.5, 0.1 + 0.2, std::int64_t{7}, TokenMask{1, 0, 1}, TokenMask{0, 0, 0}});
    const Candidate exact({std::int64_t{50}, 7.5, 0.3, std::int64_t{7}, TokenMask{1, 0, 1}, TokenMask{0, 0, 0}});
    const Candidate near({std::int64_t{50}, 7.5, 0.3000001, std::int64_t{7}, TokenMask{1, 0, 1}, TokenMask{0, 0, 0}});
    // equal at 9 significant digits
    CHECK(cache_key(sum) == cache_key(exact));
    CHECK(cache_key(near) != cache_key(exact));
}

TEST_CASE("disk cache persists across cache instances") {
    const auto dir = std::filesystem::temp_directory_path() / "ptuner_cache_test";
    std::filesystem::remove_all(dir);
    const auto key = cache_key(request("a", 12).candidate);
    {
        ResultCache c(dir);
        c.store(key, {1234.5, 0.625});
    }
    ResultCache fresh(dir);
    const auto hit = fresh.lookup(key);
    REQUIRE(hit.has_value());
    CHECK(hit->time_ms == 1234.5);
    CHECK(hit->quality == 0.625);

    const auto file = dir / ResultCache::entry_file_name(key);
    REQUIRE(std::filesystem::exists(file));
    std::ifstream in(file);
    std::string first;
    std::getline(in, first);
    CHECK(first == "pareto-tuner-cache 1");

    // a corrupt record is ignored rather than trusted
    { std::ofstream(file, std::ios::trunc) << "garbage\n"; }
    ResultCache again(dir);
    CHECK(!again.lookup(key).has_value());
    std::filesystem::remove_all(dir);
}

TEST_CASE("Evaluator counts backend calls across batches") {
    auto b = std::make_shared<CountingBackend>();
    Evaluator ev(b, 2, 1);
    ev.evaluate({request("a", 1), request("b", 2)});
    ev.evaluate({request("c", 1)});
    CHECK(ev.stats().backend_calls == 2);
    CHECK(ev.stats().cache_hits == 1);
    CHECK(ev.id() == "counting");
}
