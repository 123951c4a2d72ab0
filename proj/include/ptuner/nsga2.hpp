#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptuner/evaluation.hpp"
#include "ptuner/search_space.hpp"

namespace ptuner {

struct ObjectiveVector {
    double time_ms = 0.0;
    double quality = 0.0;
    bool operator==(const ObjectiveVector&) const = default;
};

/// Multiplies quality and time (in seconds) before any comparison. A positive
/// weight maximizes its objective, a negative one minimizes it.
struct ScalingWeights {
    double w_quality = 0.001;
    double w_time = -1000.0;
    bool operator==(const ScalingWeights&) const = default;
};

enum class Mode { pareto, weighted_single };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct NsgaConfig {
    std::size_t population_size = 25;
    std::size_t generations = 50;
    double mutation_rate = 0.2;
    double crossover_rate = 0.2;
    ScalingWeights weights{};
    Mode mode = Mode::pareto;
    std::uint64_t master_seed = 0;

    /// Throws std::invalid_argument.
    void validate() const;
    bool operator==(const NsgaConfig&) const = default;
};

struct Individual {
    Candidate candidate;
    ObjectiveVector objectives;
    /// Front index and crowding distance; only valid right after sorting.
    std::size_t rank = 0;
    double crowding = 0.0;
};

/// Hypervolume reference point: worst quality loss (1 - quality) and worst
/// time in milliseconds.
struct RefPoint {
    double quality_loss_ref = 1.0;
    double time_ref = 50000.0;
    bool operator==(const RefPoint&) const = default;
};

struct RunArchive {
    NsgaConfig config;
    SearchSpace space = SearchSpace::default_space();
    std::string base_prompt;
    std::string evaluator_id;
    RefPoint hv_ref;
    std::vector<EvaluationRecord> records;
    std::vector<Individual> final_front;
    bool complete = true;
    std::string failure;
};

/// Both returned coordinates are maximized.
std::pair<double, double> scaled(const ObjectiveVector& o, const ScalingWeights& w);

/// `a` is at least as large as `b` everywhere and larger somewhere.
bool dominates(std::span<const double> a, std::span<const double> b);
bool dominates(std::pair<double, double> a, std::pair<double, double> b);

/// The point an individual is compared by: the scaled pair in pareto mode,
/// the single weighted sum in weighted_single mode.
std::vector<double> fitness_point(const ObjectiveVector& o, const ScalingWeights& w, Mode mode);

/// Fronts of indices into `points`, front 0 non-dominated.
std::vector<std::vector<std::size_t>> nondominated_fronts(const std::vector<std::vector<double>>& points);

/// Sorts `pop` into fronts and writes each individual's rank.
std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop, const ScalingWeights& w,
                                                             Mode mode = Mode::pareto);

/// Crowding distance of each point within one front; boundary points get
/// +infinity and an objective with zero spread contributes nothing (not even
/// the infinite boundary values).
std::vector<double> crowding_distances(const std::vector<std::vector<double>>& front_points);
std::vector<double> crowding_distance(std::span<const Individual> front, const ScalingWeights& w,
                                      Mode mode = Mode::pareto);

/// Binary tournament on (rank, -crowding); ties go to the first draw.
const Individual& tournament_select(std::span<const Individual> pop, Rng& rng);

struct GenerationSnapshot {
    std::size_t generation = 0;
    /// Largest w_quality * quality + w_time * time_s in the population.
    double best_scalar = 0.0;
    std::vector<Individual> front;
};

using Observer = std::function<void(const GenerationSnapshot&)>;

RunArchive evolve(const SearchSpace& space, Evaluator& evaluator, const NsgaConfig& config,
                  const Observer& observer = {}, const std::string& base_prompt = "two people and a bus");

} // namespace ptuner
