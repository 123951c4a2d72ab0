#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ptuner/importance.hpp"
#include "ptuner/surrogate.hpp"

using namespace ptuner;

namespace {

FeatureMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    FeatureMatrix X;
    for (std::size_t c = 0; c < cols; ++c) {
        X.names.push_back("x" + std::to_string(c));
        X.groups.push_back("x" + std::to_string(c));
    }
    X.rows = rows;
    X.data.resize(rows * cols);
    for (auto& v : X.data) v = rng.uniform();
    return X;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

} // namespace

TEST_CASE("feature matrix from archives") {
    RunArchive a;
    EvaluationRecord r;
    r.candidate = Candidate({std::int64_t{50}, 7.5, 0.25, std::int64_t{9}, TokenMask{1, 0, 1}, TokenMask{0, 1, 0}});
    r.time_ms = 12000;
    r.quality = 0.75;
    a.records = {r, r};
    const auto X = build_feature_matrix({a});
    CHECK(X.names == std::vector<std::string>{"inference_steps", "guidance_scale", "guidance_rescale",
                                              "positive_prompt:photograph", "positive_prompt:color",
                                              "positive_prompt:ultra real", "negative_prompt:sketch",
                                              "negative_prompt:cropped", "negative_prompt:low quality"});
    CHECK(X.groups[3] == "positive_prompt");
    CHECK(X.groups[8] == "negative_prompt");
    CHECK(X.rows == 2);
    CHECK(X.at(1, 0) == 50);
    CHECK(X.at(0, 2) == 0.25);
    CHECK(X.at(0, 4) == 0.0);
    CHECK(X.at(0, 7) == 1.0);
    CHECK(build_target({a}, Target::time) == std::vector<double>{12000, 12000});
    CHECK(build_target({a}, Target::quality) == std::vector<double>{0.75, 0.75});
    CHECK(target_from_string("quality") == Target::quality);
    CHECK_THROWS(target_from_string("speed"));
}

TEST_CASE("tree: constant target is a single leaf") {
    Rng rng(1);
    const auto X = random_matrix(30, 3, rng);
    const auto t = fit_tree(X, std::vector<double>(30, 4.5), {}, rng);
    REQUIRE(t.nodes.size() == 1);
    CHECK(t.nodes[0].value == 4.5);
    CHECK(t.leaf_count() == 1);
}

TEST_CASE("tree: step function splits at the step (exhaustive oracle)") {
    Rng rng(2);
    auto X = random_matrix(60, 3, rng);
    std::vector<double> y(60);
    for (std::size_t r = 0; r < 60; ++r) y[r] = X.at(r, 0) > 0.6 ? 10.0 : 1.0;
    ForestConfig cfg;
    cfg.max_depth = 1;
    const auto t = fit_tree(X, y, cfg, rng);
    REQUIRE(t.nodes.size() == 3);
    CHECK(t.nodes[0].feature == 0);
    // oracle: the midpoint between the largest x0 <= 0.6 and the smallest above
    double below = -1, above = 2;
    for (std::size_t r = 0; r < 60; ++r) {
        const double v = X.at(r, 0);
        if (v <= 0.6) below = std::max(below, v);
        else above = std::min(above, v);
    }
    CHECK(t.nodes[0].threshold == doctest::Approx((below + above) / 2));
}

TEST_CASE("tree: min_samples_leaf = n gives a single leaf") {
    Rng rng(3);
    const auto X = random_matrix(25, 2, rng);
    std::vector<double> y(25);
    for (std::size_t r = 0; r < 25; ++r) y[r] = X.at(r, 0);
    ForestConfig cfg;
    cfg.min_samples_leaf = 25;
    CHECK(fit_tree(X, y, cfg, rng).nodes.size() == 1);
}

TEST_CASE("tree: row order does not matter") {
    Rng rng(4);
    auto X = random_matrix(80, 4, rng);
    std::vector<double> y(80);
    for (std::size_t r = 0; r < 80; ++r) y[r] = X.at(r, 0) * 3 + X.at(r, 1) + 0.1 * rng.uniform();
    auto P = X;
    std::vector<double> py(80);
    for (std::size_t r = 0; r < 80; ++r) {
        const std::size_t src = 79 - r;
        for (std::size_t c = 0; c < 4; ++c) P.at(r, c) = X.at(src, c);
        py[r] = y[src];
    }
    ForestConfig cfg;
    cfg.max_features_fraction = 0.5;
    Rng a(9), b(9);
    CHECK(fit_tree(X, y, cfg, a) == fit_tree(P, py, cfg, b));
}

TEST_CASE("tree: errors") {
    Rng rng(5);
    FeatureMatrix empty;
    empty.names = {"x"};
    empty.groups = {"x"};
    CHECK_THROWS_AS(fit_tree(empty, {}, {}, rng), ImportanceError);
    auto X = random_matrix(3, 1, rng);
    CHECK_THROWS_AS(fit_tree(X, {1, 2}, {}, rng), ImportanceError);
    CHECK_THROWS_AS(fit_tree(X, {1, NAN, 2}, {}, rng), ImportanceError);
}

TEST_CASE("forest of one tree without bootstrap equals the tree") {
    Rng rng(6);
    const auto X = random_matrix(100, 5, rng);
    std::vector<double> y(100);
    for (std::size_t r = 0; r < 100; ++r) y[r] = std::sin(6 * X.at(r, 0)) + X.at(r, 3);
    ForestConfig cfg;
    cfg.n_trees = 1;
    cfg.bootstrap = false;
    cfg.max_features_fraction = 0.6;
    cfg.rng_seed = 42;
    const auto f = fit_forest(X, y, cfg);
    Rng tree_rng(derive_seed(42, 0));
    REQUIRE(f.trees.size() == 1);
    CHECK(f.trees[0] == fit_tree(X, y, cfg, tree_rng));
    for (std::size_t r = 0; r < 100; ++r) CHECK(f.predict(&X.data[r * 5]) == f.trees[0].predict(&X.data[r * 5]));
}

TEST_CASE("forest: constant target, mean prediction, threads, OOB") {
    Rng rng(7);
    const auto X = random_matrix(200, 3, rng);
    ForestConfig cfg;
    cfg.n_trees = 20;
    const auto flat = fit_forest(X, std::vector<double>(200, -2.0), cfg);
    for (double p : flat.predict(X)) CHECK(p == -2.0);

    std::vector<double> y(200);
    for (std::size_t r = 0; r < 200; ++r) y[r] = 3 * X.at(r, 0) + 0.1 * (rng.uniform() - 0.5);
    const auto f = fit_forest(X, y, cfg);
    const double* row = &X.data[0];
    double mean = 0;
    for (const auto& t : f.trees) mean += t.predict(row);
    CHECK(f.predict(row) == doctest::Approx(mean / 20));
    REQUIRE(f.oob_r2.has_value());
    CHECK(*f.oob_r2 > 0.8);

    const auto f4 = fit_forest(X, y, cfg, 4);
    REQUIRE(f4.trees.size() == f.trees.size());
    for (std::size_t t = 0; t < f.trees.size(); ++t) CHECK(f4.trees[t] == f.trees[t]);
}

TEST_CASE("MDI: single signal, duplicates, null signal") {
    Rng rng(8);
    auto X = random_matrix(300, 4, rng);
    std::vector<double> y(300);
    for (std::size_t r = 0; r < 300; ++r) y[r] = X.at(r, 0) * X.at(r, 0);
    ForestConfig cfg;
    cfg.n_trees = 50;
    cfg.max_features_fraction = 0.5;
    const auto m = mdi_importance(fit_forest(X, y, cfg));
    CHECK(m.importances[0] > 0.8);
    CHECK(sum(m.importances) == doctest::Approx(1.0).epsilon(1e-9));
    for (double v : m.importances) CHECK(v >= 0.0);

    // a constant offset changes nothing
    auto shifted = y;
    for (auto& v : shifted) v += 17.0;
    const auto ms = mdi_importance(fit_forest(X, shifted, cfg));
    for (std::size_t k = 0; k < 4; ++k) CHECK(ms.importances[k] == doctest::Approx(m.importances[k]).epsilon(1e-9));

    // column 1 duplicates column 0
    auto D = X;
    for (std::size_t r = 0; r < 300; ++r) D.at(r, 1) = D.at(r, 0);
    const auto md = mdi_importance(fit_forest(D, y, cfg));
    CHECK(md.importances[0] + md.importances[1] == doctest::Approx(m.importances[0]).epsilon(0.1));
    CHECK(md.importances[0] > 0.2);
    CHECK(md.importances[1] > 0.2);

    for (int rep = 0; rep < 10; ++rep) {
        Rng nr(100 + rep);
        const auto N = random_matrix(200, 5, nr);
        std::vector<double> noise(200);
        for (auto& v : noise) v = nr.uniform();
        ForestConfig nc;
        nc.n_trees = 50;
        nc.rng_seed = static_cast<std::uint64_t>(rep);
        const auto mn = mdi_importance(fit_forest(N, noise, nc));
        for (double v : mn.importances) CHECK(v <= 3.0 / 5.0);
    }
}

TEST_CASE("MDI: all-leaf forest falls back to uniform") {
    Rng rng(9);
    const auto X = random_matrix(20, 4, rng);
    ForestConfig cfg;
    cfg.n_trees = 3;
    const auto m = mdi_importance(fit_forest(X, std::vector<double>(20, 1.0), cfg));
    CHECK(m.uniform_fallback);
    for (double v : m.importances) CHECK(v == 0.25);
}

TEST_CASE("r2 and cross validation") {
    CHECK(r2_score({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(r2_score({1, 2, 3}, {2, 2, 2}) == doctest::Approx(0.0));
    CHECK(r2_score({5, 5}, {5, 5}) == 1.0);
    CHECK(r2_score({5, 5}, {4, 5}) == 0.0);

    Rng rng(10);
    const auto X = random_matrix(3, 2, rng);
    ForestConfig cfg;
    cfg.n_trees = 5;
    const auto cv = cross_validate(X, {1, 2, 3}, cfg, 5, 1);
    CHECK(cv.folds_reduced);
    CHECK(cv.folds == 3);
    const auto one = random_matrix(1, 2, rng);
    CHECK_THROWS_AS(cross_validate(one, {1}, cfg, 5, 1), ImportanceError);
}

TEST_CASE("randomized search") {
    Rng data(11);
    auto X = random_matrix(150, 4, data);
    std::vector<double> y(150);
    for (std::size_t r = 0; r < 150; ++r) y[r] = 5 * X.at(r, 2) + 0.05 * data.uniform();

    Rng r1(1);
    const auto one = randomized_search(X, y, 1, r1);
    REQUIRE(one.tried.size() == 1);
    CHECK(one.best == one.tried[0].first);

    Rng a(2), b(2);
    const auto sa = randomized_search(X, y, 3, a);
    const auto sb = randomized_search(X, y, 3, b);
    CHECK(sa.best == sb.best);
    CHECK(sa.best_r2 == sb.best_r2);

    for (const auto& [cfg, r2] : sa.tried) {
        CHECK(cfg.n_trees % 50 == 0);
        CHECK(cfg.n_trees >= 50);
        CHECK(cfg.n_trees <= 300);
        CHECK(cfg.min_samples_leaf >= 1);
        CHECK(cfg.min_samples_leaf <= 10);
        CHECK(cfg.max_features_fraction >= 0.3 - 1e-12);
        CHECK(cfg.max_features_fraction <= 1.0);
        if (cfg.max_depth) {
            CHECK(*cfg.max_depth >= 3);
            CHECK(*cfg.max_depth <= 20);
        }
    }
}

TEST_CASE("randomized search beats the grid default on strong signal") {
    Rng data(12);
    auto X = random_matrix(120, 3, data);
    std::vector<double> y(120);
    for (std::size_t r = 0; r < 120; ++r) y[r] = 4 * X.at(r, 0) + X.at(r, 1);
    Rng rng(5);
    Rng peek = rng;
    const std::uint64_t fold_seed = peek.next();
    const auto best = randomized_search(X, y, 20, rng);
    ForestConfig def = default_grid_config();
    const auto base = cross_validate(X, y, def, 5, fold_seed);
    CHECK(best.best_r2 >= base.mean_r2 - 1e-3);
}

TEST_CASE("importance analysis on surrogate archives") {
    auto backend = std::make_shared<SurrogateBackend>();
    Evaluator ev(backend);
    NsgaConfig cfg;
    cfg.generations = 6;
    cfg.master_seed = 3;
    const auto archive = evolve(SearchSpace::default_space(), ev, cfg);

    ImportanceOptions o;
    o.repeats = 2;
    o.search_budget = 1;
    o.seed = 4;
    const auto r = importance_analysis({archive}, Target::time, o);
    CHECK(r.rows == archive.records.size());
    CHECK(r.per_repeat.size() == 2);
    CHECK(std::max_element(r.mean.begin(), r.mean.end()) - r.mean.begin() == 0);
    CHECK(r.groups == std::vector<std::string>{"inference_steps", "guidance_scale", "guidance_rescale",
                                               "positive_prompt", "negative_prompt"});
    for (const auto& rep : r.per_repeat) CHECK(sum(rep) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sum(r.group_mean) == doctest::Approx(1.0).epsilon(1e-9));

    o.repeats = 1;
    const auto first = importance_analysis({archive}, Target::time, o);
    CHECK(first.per_repeat[0] == r.per_repeat[0]);
    CHECK(first.chosen[0] == r.chosen[0]);

    const auto tsv = importance_table_tsv(r);
    CHECK(tsv.find("inference_steps\t") != std::string::npos);
    CHECK(importance_group_table_tsv(r).find("positive_prompt\t") != std::string::npos);
    CHECK(importance_bar_chart(r).find('#') != std::string::npos);
    CHECK_THROWS_AS(importance_analysis({}, Target::time, o), ImportanceError);
}
