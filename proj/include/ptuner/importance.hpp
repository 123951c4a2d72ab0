#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptuner/nsga2.hpp"
#include "ptuner/rng.hpp"

namespace ptuner {

class ImportanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major design matrix with named columns.
struct FeatureMatrix {
    std::vector<std::string> names;
    /// Column group: the search-space param a column came from.
    std::vector<std::string> groups;
    std::size_t rows = 0;
    std::vector<double> data;

    [[nodiscard]] std::size_t cols() const noexcept { return names.size(); }
    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
};

enum class Target { time, quality };

std::string to_string(Target t);
Target target_from_string(const std::string& s);

/// One row per record. Columns follow the search space order, skipping the
/// "seed" param: one column per integer or real param (named after it) and
/// one 0/1 column per vocabulary token (named "<param>:<token>").
FeatureMatrix build_feature_matrix(const std::vector<RunArchive>& archives);
std::vector<double> build_target(const std::vector<RunArchive>& archives, Target target);

struct ForestConfig {
    std::size_t n_trees = 100;
    /// nullopt grows until the other stopping rules apply.
    std::optional<std::size_t> max_depth;
    std::size_t min_samples_leaf = 1;
    double max_features_fraction = 1.0;
    bool bootstrap = true;
    std::uint64_t rng_seed = 0;

    void validate() const;
    bool operator==(const ForestConfig&) const = default;
};

struct TreeNode {
    /// -1 for leaves.
    int feature = -1;
    double threshold = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
    double value = 0.0;
    std::size_t samples = 0;
    /// Sum of squared errors at this node minus that of its two children.
    double sse_decrease = 0.0;

    bool operator==(const TreeNode&) const = default;
};

/// CART regression tree: variance-reduction splits at midpoints between
/// sorted distinct values, rows with x <= threshold go left.
struct RegressionTree {
    std::vector<TreeNode> nodes;
    std::size_t n_features = 0;
    std::size_t root_samples = 0;

    [[nodiscard]] double predict(const double* row) const;
    [[nodiscard]] std::size_t leaf_count() const;
    bool operator==(const RegressionTree&) const = default;
};

struct Forest {
    std::vector<RegressionTree> trees;
    std::size_t n_features = 0;
    /// Out-of-bag R^2 when bootstrapping left at least one row out of a tree.
    std::optional<double> oob_r2;

    [[nodiscard]] double predict(const double* row) const;
    [[nodiscard]] std::vector<double> predict(const FeatureMatrix& X) const;
};

/// Rows are put in a canonical (lexicographic) order before fitting, so the
/// fitted model does not depend on input row order.
RegressionTree fit_tree(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg, Rng& rng);

/// Tree t is fitted with Rng(derive_seed(cfg.rng_seed, t)), so the result does
/// not depend on `threads`.
Forest fit_forest(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg,
                  std::size_t threads = 1);

struct MdiResult {
    std::vector<double> importances;
    /// Every tree was a single leaf; importances were set uniform.
    bool uniform_fallback = false;
};

/// Mean decrease in impurity: per tree each split adds
/// (node samples / root samples) * (variance before - weighted variance after)
/// to its feature; summed per feature, averaged over trees, normalized to 1.
MdiResult mdi_importance(const Forest& f);

/// 1 - SS_res / SS_tot; with SS_tot == 0 it is 1 for a perfect fit, else 0.
double r2_score(const std::vector<double>& truth, const std::vector<double>& pred);

struct CvResult {
    double mean_r2 = 0.0;
    std::size_t folds = 0;
    bool folds_reduced = false;
};

/// Rows are shuffled with `fold_seed` and cut into contiguous blocks.
/// Fewer rows than folds reduces the fold count; one row is an error.
CvResult cross_validate(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg,
                        std::size_t folds, std::uint64_t fold_seed);

struct SearchResult {
    ForestConfig best;
    double best_r2 = 0.0;
    std::vector<std::pair<ForestConfig, double>> tried;
    bool folds_reduced = false;
};

/// The grid: n_trees in {50,100,...,300}, max_depth in {3..20, unlimited},
/// min_samples_leaf in {1..10}, max_features_fraction in {0.3,0.4,...,1.0},
/// bootstrap on.
ForestConfig default_grid_config();

/// Samples `budget` configs uniformly from the grid and keeps the best mean
/// 5-fold R^2; ties prefer fewer trees, then shallower depth.
SearchResult randomized_search(const FeatureMatrix& X, const std::vector<double>& y, std::size_t budget, Rng& rng,
                               std::size_t folds = 5);

struct ImportanceReport {
    Target target = Target::time;
    std::vector<std::string> features;
    std::vector<std::string> feature_groups;
    /// [repeat][feature]
    std::vector<std::vector<double>> per_repeat;
    std::vector<double> mean;
    std::vector<double> sd;

    std::vector<std::string> groups;
    /// [repeat][group]
    std::vector<std::vector<double>> group_per_repeat;
    std::vector<double> group_mean;
    std::vector<double> group_sd;

    std::vector<ForestConfig> chosen;
    std::vector<double> cv_r2;
    std::size_t uniform_fallbacks = 0;
    std::size_t rows = 0;
};

struct ImportanceOptions {
    std::size_t repeats = 10;
    std::size_t search_budget = 10;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Repeat r runs randomized_search, fit_forest and mdi_importance with
/// Rng(derive_seed(seed, r)).
ImportanceReport importance_analysis(const std::vector<RunArchive>& archives, Target target,
                                     const ImportanceOptions& opts = {});

std::string importance_table_tsv(const ImportanceReport& r);
std::string importance_group_table_tsv(const ImportanceReport& r);
std::string importance_bar_chart(const ImportanceReport& r, std::size_t width = 40);

} // namespace ptuner
