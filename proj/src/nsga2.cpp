#include "ptuner/nsga2.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_set>

namespace ptuner {

std::string to_string(Mode m) { return m == Mode::pareto ? "pareto" : "weighted_single"; }

Mode mode_from_string(const std::string& s) {
    if (s == "pareto") return Mode::pareto;
    if (s == "weighted_single") return Mode::weighted_single;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

void NsgaConfig::validate() const {
    if (population_size == 0) throw std::invalid_argument("population_size must be positive");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw std::invalid_argument("mutation_rate not in [0,1]");
    if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) throw std::invalid_argument("crossover_rate not in [0,1]");
    if (!std::isfinite(weights.w_quality) || !std::isfinite(weights.w_time))
        throw std::invalid_argument("weights must be finite");
}

std::pair<double, double> scaled(const ObjectiveVector& o, const ScalingWeights& w) {
    return {w.w_quality * o.quality, w.w_time * (o.time_ms / 1000.0)};
}

bool dominates(std::span<const double> a, std::span<const double> b) {
    bool strictly = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] < b[k]) return false;
        if (a[k] > b[k]) strictly = true;
    }
    return strictly;
}

bool dominates(std::pair<double, double> a, std::pair<double, double> b) {
    const double x[2] = {a.first, a.second};
    const double y[2] = {b.first, b.second};
    return dominates(std::span<const double>(x), std::span<const double>(y));
}

std::vector<double> fitness_point(const ObjectiveVector& o, const ScalingWeights& w, Mode mode) {
    const auto [q, t] = scaled(o, w);
    if (mode == Mode::weighted_single) return {q + t};
    return {q, t};
}

std::vector<std::vector<std::size_t>> nondominated_fronts(const std::vector<std::vector<double>>& points) {
    const std::size_t n = points.size();
    std::vector<std::vector<std::size_t>> dominated_by(n);
    std::vector<std::size_t> domination_count(n, 0);
    std::vector<std::vector<std::size_t>> fronts;
    std::vector<std::size_t> current;
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = p + 1; q < n; ++q) {
            if (dominates(points[p], points[q])) {
                dominated_by[p].push_back(q);
                ++domination_count[q];
            } else if (dominates(points[q], points[p])) {
                dominated_by[q].push_back(p);
                ++domination_count[p];
            }
        }
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (domination_count[p] == 0) current.push_back(p);
    }
    while (!current.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t p : current) {
            for (std::size_t q : dominated_by[p]) {
                if (--domination_count[q] == 0) next.push_back(q);
            }
        }
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(current));
        current = std::move(next);
    }
    return fronts;
}

std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop, const ScalingWeights& w,
                                                             Mode mode) {
    std::vector<std::vector<double>> points;
    points.reserve(pop.size());
    for (const auto& ind : pop) points.push_back(fitness_point(ind.objectives, w, mode));
    auto fronts = nondominated_fronts(points);
    for (std::size_t r = 0; r < fronts.size(); ++r) {
        for (std::size_t i : fronts[r]) pop[i].rank = r;
    }
    return fronts;
}

// Interior points take the gap between the nearest strictly smaller and
// strictly larger values, so exact duplicates get equal distances.
std::vector<double> crowding_distances(const std::vector<std::vector<double>>& pts) {
    const std::size_t n = pts.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (n <= 2) return std::vector<double>(n, inf);
    std::vector<double> dist(n, 0.0);
    const std::size_t dims = pts.front().size();
    std::vector<std::size_t> order(n);
    for (std::size_t m = 0; m < dims; ++m) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return pts[a][m] < pts[b][m]; });
        const double lo = pts[order.front()][m];
        const double hi = pts[order.back()][m];
        const double range = hi - lo;
        if (!(range > 0.0)) continue;
        dist[order.front()] = inf;
        dist[order.back()] = inf;
        std::size_t group_begin = 0;
        while (group_begin < n) {
            std::size_t group_end = group_begin + 1;
            const double v = pts[order[group_begin]][m];
            while (group_end < n && pts[order[group_end]][m] == v) ++group_end;
            const double prev = group_begin > 0 ? pts[order[group_begin - 1]][m] : v;
            const double next = group_end < n ? pts[order[group_end]][m] : v;
            for (std::size_t k = group_begin; k < group_end; ++k) {
                const std::size_t i = order[k];
                if (k == 0 || k == n - 1) continue;
                dist[i] += (next - prev) / range;
            }
            group_begin = group_end;
        }
    }
    return dist;
}

std::vector<double> crowding_distance(std::span<const Individual> front, const ScalingWeights& w, Mode mode) {
    std::vector<std::vector<double>> pts;
    pts.reserve(front.size());
    for (const auto& ind : front) pts.push_back(fitness_point(ind.objectives, w, mode));
    return crowding_distances(pts);
}

const Individual& tournament_select(std::span<const Individual> pop, Rng& rng) {
    const Individual& a = pop[rng.index(pop.size())];
    const Individual& b = pop[rng.index(pop.size())];
    if (b.rank < a.rank || (b.rank == a.rank && b.crowding > a.crowding)) return b;
    return a;
}

namespace {

double best_scalar(const std::vector<Individual>& pop, const ScalingWeights& w) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& ind : pop) {
        const auto [q, t] = scaled(ind.objectives, w);
        best = std::max(best, q + t);
    }
    return best;
}

/// Ranks `pop`, sets crowding per front and returns the fronts.
std::vector<std::vector<std::size_t>> rank_and_crowd(std::vector<Individual>& pop, const NsgaConfig& cfg) {
    auto fronts = fast_nondominated_sort(pop, cfg.weights, cfg.mode);
    for (const auto& f : fronts) {
        std::vector<std::vector<double>> pts;
        pts.reserve(f.size());
        for (std::size_t i : f) pts.push_back(fitness_point(pop[i].objectives, cfg.weights, cfg.mode));
        const auto d = crowding_distances(pts);
        for (std::size_t k = 0; k < f.size(); ++k) pop[f[k]].crowding = d[k];
    }
    return fronts;
}

std::vector<Individual> first_front(const std::vector<Individual>& pop) {
    std::vector<Individual> out;
    for (const auto& ind : pop) {
        if (ind.rank == 0) out.push_back(ind);
    }
    return out;
}

class Run {
public:
    Run(const SearchSpace& space, Evaluator& evaluator, const NsgaConfig& cfg, const std::string& base_prompt)
        : space_(space), evaluator_(evaluator), cfg_(cfg), base_prompt_(base_prompt), rng_(cfg.master_seed) {
        archive_.config = cfg;
        archive_.space = space;
        archive_.base_prompt = base_prompt;
        archive_.evaluator_id = evaluator.id();
    }

    /// Evaluates `cands`; false when any evaluation failed for good.
    bool evaluate(std::size_t generation, const std::vector<Candidate>& cands, std::vector<Individual>& out) {
        std::vector<EvalRequest> reqs;
        reqs.reserve(cands.size());
        for (std::size_t i = 0; i < cands.size(); ++i) {
            reqs.push_back({"g" + std::to_string(generation) + "-" + std::to_string(i), cands[i], base_prompt_,
                            render_prompt(cands[i], base_prompt_, space_)});
        }
        const auto results = evaluator_.evaluate(reqs);
        const auto now = std::chrono::system_clock::now();
        for (std::size_t i = 0; i < cands.size(); ++i) {
            const auto& r = results[i];
            if (!r.ok()) {
                archive_.complete = false;
                archive_.failure = "evaluation of " + cache_key(cands[i]) + " failed: " + *r.error;
                return false;
            }
            if (seen_.insert(cache_key(cands[i])).second) {
                archive_.records.push_back({static_cast<std::int64_t>(generation), cands[i], r.time_ms, r.quality,
                                            evaluator_.id(), now});
            }
            out.push_back({cands[i], {r.time_ms, r.quality}, 0, 0.0});
        }
        return true;
    }

    std::vector<Candidate> make_offspring(const std::vector<Individual>& pop) {
        std::vector<Candidate> kids;
        kids.reserve(cfg_.population_size);
        while (kids.size() < cfg_.population_size) {
            const Individual& p1 = tournament_select(pop, rng_);
            const Individual& p2 = tournament_select(pop, rng_);
            Candidate c1 = p1.candidate;
            Candidate c2 = p2.candidate;
            if (rng_.bernoulli(cfg_.crossover_rate)) std::tie(c1, c2) = crossover(p1.candidate, p2.candidate, space_, rng_);
            kids.push_back(mutate(c1, space_, cfg_.mutation_rate, rng_));
            if (kids.size() < cfg_.population_size) kids.push_back(mutate(c2, space_, cfg_.mutation_rate, rng_));
        }
        return kids;
    }

    /// Fills the next population front by front, cutting the split front by
    /// descending crowding distance.
    std::vector<Individual> environmental_selection(std::vector<Individual> merged) {
        const auto fronts = rank_and_crowd(merged, cfg_);
        std::vector<Individual> next;
        next.reserve(cfg_.population_size);
        for (const auto& f : fronts) {
            if (next.size() + f.size() <= cfg_.population_size) {
                for (std::size_t i : f) next.push_back(merged[i]);
                continue;
            }
            std::vector<std::size_t> order = f;
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return merged[a].crowding > merged[b].crowding; });
            for (std::size_t k = 0; next.size() < cfg_.population_size; ++k) next.push_back(merged[order[k]]);
            break;
        }
        return next;
    }

    RunArchive run(const Observer& observer) {
        std::vector<Candidate> init;
        init.reserve(cfg_.population_size);
        for (std::size_t i = 0; i < cfg_.population_size; ++i) init.push_back(sample_random(space_, rng_));
        std::vector<Individual> pop;
        if (!evaluate(0, init, pop)) return finish(pop);
        rank_and_crowd(pop, cfg_);
        notify(observer, 0, pop);

        for (std::size_t gen = 1; gen <= cfg_.generations; ++gen) {
            const auto kids = make_offspring(pop);
            std::vector<Individual> merged = pop;
            if (!evaluate(gen, kids, merged)) return finish(pop);
            pop = environmental_selection(std::move(merged));
            notify(observer, gen, pop);
        }
        return finish(pop);
    }

private:
    void notify(const Observer& observer, std::size_t gen, const std::vector<Individual>& pop) const {
        if (!observer) return;
        observer(GenerationSnapshot{gen, best_scalar(pop, cfg_.weights), first_front(pop)});
    }

    RunArchive finish(std::vector<Individual> pop) {
        if (!pop.empty()) {
            rank_and_crowd(pop, cfg_);
            archive_.final_front = first_front(pop);
        }
        return std::move(archive_);
    }

    const SearchSpace& space_;
    Evaluator& evaluator_;
    const NsgaConfig& cfg_;
    const std::string& base_prompt_;
    Rng rng_;
    RunArchive archive_;
    std::unordered_set<std::string> seen_;
};

} // namespace

RunArchive evolve(const SearchSpace& space, Evaluator& evaluator, const NsgaConfig& config, const Observer& observer,
                  const std::string& base_prompt) {
    config.validate();
    Run run(space, evaluator, config, base_prompt);
    return run.run(observer);
}

} // namespace ptuner
