#include "ptuner/importance.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "ptuner/archive.hpp"

namespace ptuner {

std::string to_string(Target t) { return t == Target::time ? "time" : "quality"; }

Target target_from_string(const std::string& s) {
    if (s == "time") return Target::time;
    if (s == "quality") return Target::quality;
    throw ImportanceError("unknown target '" + s + "' (expected time or quality)");
}

FeatureMatrix build_feature_matrix(const std::vector<RunArchive>& archives) {
    if (archives.empty()) throw ImportanceError("no archives");
    const SearchSpace& space = archives.front().space;
    FeatureMatrix X;
    std::vector<std::size_t> source_param;
    std::vector<std::size_t> source_token;
    for (std::size_t p = 0; p < space.size(); ++p) {
        const auto& spec = space.param(p);
        if (spec.name == "seed") continue;
        if (const auto* t = std::get_if<TokenSubset>(&spec.kind)) {
            for (std::size_t k = 0; k < t->vocabulary.size(); ++k) {
                X.names.push_back(spec.name + ":" + t->vocabulary[k]);
                X.groups.push_back(spec.name);
                source_param.push_back(p);
                source_token.push_back(k);
            }
        } else {
            X.names.push_back(spec.name);
            X.groups.push_back(spec.name);
            source_param.push_back(p);
            source_token.push_back(0);
        }
    }
    for (const auto& a : archives) {
        if (!(a.space == space)) throw ImportanceError("archives use different search spaces");
        X.rows += a.records.size();
    }
    X.data.reserve(X.rows * X.cols());
    for (const auto& a : archives) {
        for (const auto& r : a.records) {
            for (std::size_t c = 0; c < X.cols(); ++c) {
                const auto& g = r.candidate.gene(source_param[c]);
                if (const auto* i = std::get_if<std::int64_t>(&g)) {
                    X.data.push_back(static_cast<double>(*i));
                } else if (const auto* d = std::get_if<double>(&g)) {
                    X.data.push_back(*d);
                } else {
                    X.data.push_back(std::get<TokenMask>(g)[source_token[c]] ? 1.0 : 0.0);
                }
            }
        }
    }
    return X;
}

std::vector<double> build_target(const std::vector<RunArchive>& archives, Target target) {
    std::vector<double> y;
    for (const auto& a : archives) {
        for (const auto& r : a.records) y.push_back(target == Target::time ? r.time_ms : r.quality);
    }
    return y;
}

void ForestConfig::validate() const {
    if (n_trees < 1) throw ImportanceError("n_trees must be >= 1");
    if (!(max_features_fraction > 0.0 && max_features_fraction <= 1.0))
        throw ImportanceError("max_features_fraction must be in (0,1]");
    if (min_samples_leaf < 1) throw ImportanceError("min_samples_leaf must be >= 1");
}

double RegressionTree::predict(const double* row) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        i = row[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    }
    return nodes[i].value;
}

std::size_t RegressionTree::leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

double Forest::predict(const double* row) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(row);
    return s / static_cast<double>(trees.size());
}

std::vector<double> Forest::predict(const FeatureMatrix& X) const {
    std::vector<double> out(X.rows);
    for (std::size_t r = 0; r < X.rows; ++r) out[r] = predict(&X.data[r * X.cols()]);
    return out;
}

namespace {

void check_inputs(const FeatureMatrix& X, const std::vector<double>& y) {
    if (X.rows == 0) throw ImportanceError("empty training set");
    if (y.size() != X.rows) throw ImportanceError("target length does not match row count");
    if (X.cols() == 0) throw ImportanceError("no feature columns");
    for (double v : y) {
        if (!std::isfinite(v)) throw ImportanceError("non-finite target value");
    }
}

struct Dataset {
    FeatureMatrix X;
    std::vector<double> y;
};

/// Lexicographic row order on (features, target).
Dataset canonical(const FeatureMatrix& X, const std::vector<double>& y) {
    std::vector<std::size_t> perm(X.rows);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    const std::size_t d = X.cols();
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        const double* ra = &X.data[a * d];
        const double* rb = &X.data[b * d];
        for (std::size_t c = 0; c < d; ++c) {
            if (ra[c] != rb[c]) return ra[c] < rb[c];
        }
        return y[a] < y[b];
    });
    Dataset out;
    out.X.names = X.names;
    out.X.groups = X.groups;
    out.X.rows = X.rows;
    out.X.data.resize(X.data.size());
    out.y.resize(y.size());
    for (std::size_t r = 0; r < perm.size(); ++r) {
        std::copy_n(&X.data[perm[r] * d], d, &out.X.data[r * d]);
        out.y[r] = y[perm[r]];
    }
    return out;
}

Dataset subset(const Dataset& src, const std::vector<std::size_t>& rows) {
    const std::size_t d = src.X.cols();
    Dataset out;
    out.X.names = src.X.names;
    out.X.groups = src.X.groups;
    out.X.rows = rows.size();
    out.X.data.resize(rows.size() * d);
    out.y.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(&src.X.data[rows[r] * d], d, &out.X.data[r * d]);
        out.y[r] = src.y[rows[r]];
    }
    return out;
}

/// Grows one tree over a bag of row ids (duplicates allowed). Every feature
/// keeps its own ordering of the bag; a node owns the same [begin, end)
/// slice of each ordering, and splits partition all of them stably.
class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg, Rng& rng,
                std::vector<std::size_t> bag)
        : X_(X), y_(y), cfg_(cfg), rng_(rng), bag_(std::move(bag)), d_(X.cols()) {
        const std::size_t m = bag_.size();
        order_.assign(d_, std::vector<std::uint32_t>(m));
        for (std::size_t f = 0; f < d_; ++f) {
            auto& o = order_[f];
            std::iota(o.begin(), o.end(), std::uint32_t{0});
            std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) { return x(a, f) < x(b, f); });
        }
        goes_left_.assign(m, 0);
        scratch_.resize(m);
        features_.resize(d_);
        std::iota(features_.begin(), features_.end(), std::size_t{0});
        max_features_ = static_cast<std::size_t>(std::ceil(cfg_.max_features_fraction * static_cast<double>(d_)));
        max_features_ = std::clamp<std::size_t>(max_features_, 1, d_);
    }

    RegressionTree build() {
        tree_.n_features = d_;
        tree_.root_samples = bag_.size();
        grow(0, bag_.size(), 0);
        return std::move(tree_);
    }

private:
    double x(std::size_t pos, std::size_t f) const { return X_.data[bag_[pos] * d_ + f]; }
    double target(std::size_t pos) const { return y_[bag_[pos]]; }

    std::size_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
        const std::size_t n = end - begin;
        const auto& seg = order_[0];
        double sum = 0.0;
        double lo = target(seg[begin]);
        double hi = lo;
        for (std::size_t k = begin; k < end; ++k) {
            const double v = target(seg[k]);
            sum += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double mean = sum / static_cast<double>(n);
        double sse = 0.0;
        for (std::size_t k = begin; k < end; ++k) {
            const double r = target(seg[k]) - mean;
            sse += r * r;
        }

        const std::size_t id = tree_.nodes.size();
        tree_.nodes.push_back(TreeNode{-1, 0.0, 0, 0, mean, n, 0.0});

        const bool depth_limited = cfg_.max_depth && depth >= *cfg_.max_depth;
        if (depth_limited || lo == hi || n < 2 * cfg_.min_samples_leaf) return id;

        // Random feature subset: partial Fisher-Yates.
        for (std::size_t k = 0; k < max_features_; ++k) {
            const std::size_t j = k + rng_.index(d_ - k);
            std::swap(features_[k], features_[j]);
        }

        double best_gain = 0.0;
        int best_feature = -1;
        double best_threshold = 0.0;
        const double total = sum - mean * static_cast<double>(n);
        const double base = total * total / static_cast<double>(n);
        // Gains closer than this count as ties (first candidate wins), so
        // rounding noise such as a constant shift of y cannot flip a split.
        const double tie = sse * 1e-9;
        for (std::size_t k = 0; k < max_features_; ++k) {
            const std::size_t f = features_[k];
            const auto& o = order_[f];
            if (x(o[begin], f) == x(o[end - 1], f)) continue;
            double left_sum = 0.0;
            for (std::size_t i = begin; i + 1 < end; ++i) {
                left_sum += target(o[i]) - mean;
                const std::size_t nl = i + 1 - begin;
                const std::size_t nr = n - nl;
                if (nl < cfg_.min_samples_leaf) continue;
                if (nr < cfg_.min_samples_leaf) break;
                const double xa = x(o[i], f);
                const double xb = x(o[i + 1], f);
                if (!(xa < xb)) continue;
                const double right_sum = total - left_sum;
                const double gain = left_sum * left_sum / static_cast<double>(nl) +
                                    right_sum * right_sum / static_cast<double>(nr) - base;
                if (gain > best_gain + tie) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = xa + (xb - xa) / 2.0;
                    if (!(best_threshold < xb)) best_threshold = xa;
                }
            }
        }
        if (best_feature < 0) return id;

        const auto bf = static_cast<std::size_t>(best_feature);
        std::size_t n_left = 0;
        for (std::size_t k = begin; k < end; ++k) {
            const std::uint32_t pos = order_[bf][k];
            goes_left_[pos] = x(pos, bf) <= best_threshold ? 1 : 0;
            n_left += goes_left_[pos];
        }
        for (std::size_t f = 0; f < d_; ++f) {
            auto& o = order_[f];
            std::size_t l = 0;
            std::size_t r = n_left;
            for (std::size_t k = begin; k < end; ++k) {
                const std::uint32_t pos = o[k];
                scratch_[goes_left_[pos] ? l++ : r++] = pos;
            }
            std::copy_n(scratch_.begin(), n, o.begin() + static_cast<std::ptrdiff_t>(begin));
        }

        tree_.nodes[id].feature = best_feature;
        tree_.nodes[id].threshold = best_threshold;
        tree_.nodes[id].sse_decrease = best_gain;
        const std::size_t left = grow(begin, begin + n_left, depth + 1);
        const std::size_t right = grow(begin + n_left, end, depth + 1);
        tree_.nodes[id].left = left;
        tree_.nodes[id].right = right;
        return id;
    }

    const FeatureMatrix& X_;
    const std::vector<double>& y_;
    const ForestConfig& cfg_;
    Rng& rng_;
    std::vector<std::size_t> bag_;
    std::size_t d_;
    std::size_t max_features_ = 1;
    std::vector<std::vector<std::uint32_t>> order_;
    std::vector<std::uint8_t> goes_left_;
    std::vector<std::uint32_t> scratch_;
    std::vector<std::size_t> features_;
    RegressionTree tree_;
};

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

/// `data` must already be canonical.
Forest fit_forest_canonical(const Dataset& data, const ForestConfig& cfg, std::size_t threads) {
    const std::size_t n = data.X.rows;
    Forest forest;
    forest.n_features = data.X.cols();
    forest.trees.resize(cfg.n_trees);
    std::vector<std::vector<std::uint8_t>> in_bag(cfg.bootstrap ? cfg.n_trees : 0);

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t t = next++; t < cfg.n_trees; t = next++) {
            Rng rng(derive_seed(cfg.rng_seed, t));
            std::vector<std::size_t> bag;
            if (cfg.bootstrap) {
                bag.resize(n);
                in_bag[t].assign(n, 0);
                for (auto& b : bag) {
                    b = rng.index(n);
                    in_bag[t][b] = 1;
                }
            } else {
                bag = all_rows(n);
            }
            forest.trees[t] = TreeBuilder(data.X, data.y, cfg, rng, std::move(bag)).build();
        }
    };
    const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), cfg.n_trees);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    if (cfg.bootstrap) {
        std::vector<double> truth, pred;
        for (std::size_t r = 0; r < n; ++r) {
            double s = 0.0;
            std::size_t k = 0;
            for (std::size_t t = 0; t < cfg.n_trees; ++t) {
                if (in_bag[t][r]) continue;
                s += forest.trees[t].predict(&data.X.data[r * data.X.cols()]);
                ++k;
            }
            if (k == 0) continue;
            truth.push_back(data.y[r]);
            pred.push_back(s / static_cast<double>(k));
        }
        if (!truth.empty()) forest.oob_r2 = r2_score(truth, pred);
    }
    return forest;
}

} // namespace

RegressionTree fit_tree(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg, Rng& rng) {
    check_inputs(X, y);
    cfg.validate();
    const Dataset data = canonical(X, y);
    return TreeBuilder(data.X, data.y, cfg, rng, all_rows(data.X.rows)).build();
}

Forest fit_forest(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg, std::size_t threads) {
    check_inputs(X, y);
    cfg.validate();
    return fit_forest_canonical(canonical(X, y), cfg, threads);
}

MdiResult mdi_importance(const Forest& f) {
    MdiResult out;
    out.importances.assign(f.n_features, 0.0);
    for (const auto& tree : f.trees) {
        const double root = static_cast<double>(tree.root_samples);
        for (const auto& node : tree.nodes) {
            if (node.feature < 0) continue;
            // (n_node / n_root) * (node variance - weighted child variance)
            // equals the node's SSE decrease over n_root.
            out.importances[static_cast<std::size_t>(node.feature)] += node.sse_decrease / root;
        }
    }
    for (auto& v : out.importances) v /= static_cast<double>(std::max<std::size_t>(f.trees.size(), 1));
    const double total = std::accumulate(out.importances.begin(), out.importances.end(), 0.0);
    if (!(total > 0.0)) {
        out.uniform_fallback = true;
        std::fill(out.importances.begin(), out.importances.end(), 1.0 / static_cast<double>(f.n_features));
        return out;
    }
    for (auto& v : out.importances) v /= total;
    return out;
}

double r2_score(const std::vector<double>& truth, const std::vector<double>& pred) {
    const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

namespace {

CvResult cross_validate_canonical(const Dataset& data, const ForestConfig& cfg, std::size_t folds,
                                  std::uint64_t fold_seed) {
    const std::size_t n = data.X.rows;
    if (n < 2) throw ImportanceError("cross-validation needs at least two rows");
    CvResult res;
    res.folds = folds;
    if (n < folds) {
        res.folds = n;
        res.folds_reduced = true;
    }
    std::vector<std::size_t> perm = all_rows(n);
    Rng rng(fold_seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);

    double total = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < res.folds; ++k) {
        const std::size_t len = n / res.folds + (k < n % res.folds ? 1 : 0);
        std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                      perm.begin() + static_cast<std::ptrdiff_t>(start + len));
        std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(start));
        train.insert(train.end(), perm.begin() + static_cast<std::ptrdiff_t>(start + len), perm.end());
        std::sort(train.begin(), train.end());
        std::sort(test.begin(), test.end());
        start += len;

        const Dataset tr = subset(data, train);
        const Dataset te = subset(data, test);
        const Forest forest = fit_forest_canonical(tr, cfg, 1);
        total += r2_score(te.y, forest.predict(te.X));
    }
    res.mean_r2 = total / static_cast<double>(res.folds);
    return res;
}

std::size_t depth_rank(const ForestConfig& c) { return c.max_depth ? *c.max_depth : SIZE_MAX; }

} // namespace

CvResult cross_validate(const FeatureMatrix& X, const std::vector<double>& y, const ForestConfig& cfg,
                        std::size_t folds, std::uint64_t fold_seed) {
    check_inputs(X, y);
    cfg.validate();
    if (folds < 2) throw ImportanceError("need at least two folds");
    return cross_validate_canonical(canonical(X, y), cfg, folds, fold_seed);
}

ForestConfig default_grid_config() {
    ForestConfig c;
    c.n_trees = 100;
    c.max_depth = std::nullopt;
    c.min_samples_leaf = 1;
    c.max_features_fraction = 1.0;
    c.bootstrap = true;
    return c;
}

SearchResult randomized_search(const FeatureMatrix& X, const std::vector<double>& y, std::size_t budget, Rng& rng,
                               std::size_t folds) {
    check_inputs(X, y);
    if (budget < 1) throw ImportanceError("search budget must be >= 1");
    if (X.rows < 2) throw ImportanceError("randomized search needs at least two rows");
    const Dataset data = canonical(X, y);
    const std::uint64_t fold_seed = rng.next();

    SearchResult res;
    bool have_best = false;
    for (std::size_t i = 0; i < budget; ++i) {
        ForestConfig c;
        c.n_trees = 50 * (1 + rng.index(6));
        const std::size_t depth_pick = rng.index(19);
        c.max_depth = depth_pick < 18 ? std::optional<std::size_t>(3 + depth_pick) : std::nullopt;
        c.min_samples_leaf = 1 + rng.index(10);
        c.max_features_fraction = static_cast<double>(3 + rng.index(8)) / 10.0;
        c.bootstrap = true;
        c.rng_seed = rng.next();

        const CvResult cv = cross_validate_canonical(data, c, folds, fold_seed);
        res.folds_reduced = res.folds_reduced || cv.folds_reduced;
        res.tried.emplace_back(c, cv.mean_r2);
        const bool better =
            !have_best || cv.mean_r2 > res.best_r2 ||
            (cv.mean_r2 == res.best_r2 &&
             (c.n_trees < res.best.n_trees ||
              (c.n_trees == res.best.n_trees && depth_rank(c) < depth_rank(res.best))));
        if (better) {
            res.best = c;
            res.best_r2 = cv.mean_r2;
            have_best = true;
        }
    }
    return res;
}

namespace {

void mean_and_sd(const std::vector<std::vector<double>>& rows, std::vector<double>& mean, std::vector<double>& sd) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    mean.assign(cols, 0.0);
    sd.assign(cols, 0.0);
    if (rows.empty()) return;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < cols; ++c) mean[c] += r[c];
    }
    for (auto& m : mean) m /= static_cast<double>(rows.size());
    if (rows.size() < 2) return;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < cols; ++c) sd[c] += (r[c] - mean[c]) * (r[c] - mean[c]);
    }
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(rows.size() - 1));
}

} // namespace

ImportanceReport importance_analysis(const std::vector<RunArchive>& archives, Target target,
                                     const ImportanceOptions& opts) {
    if (archives.empty()) throw ImportanceError("no archives");
    if (opts.repeats < 1) throw ImportanceError("repeats must be >= 1");
    const FeatureMatrix X = build_feature_matrix(archives);
    const std::vector<double> y = build_target(archives, target);
    check_inputs(X, y);

    ImportanceReport rep;
    rep.target = target;
    rep.features = X.names;
    rep.feature_groups = X.groups;
    rep.rows = X.rows;
    for (const auto& g : X.groups) {
        if (std::find(rep.groups.begin(), rep.groups.end(), g) == rep.groups.end()) rep.groups.push_back(g);
    }

    for (std::size_t r = 0; r < opts.repeats; ++r) {
        Rng rng(derive_seed(opts.seed, r));
        const SearchResult search = randomized_search(X, y, opts.search_budget, rng);
        const Forest forest = fit_forest(X, y, search.best, opts.threads);
        const MdiResult mdi = mdi_importance(forest);
        if (mdi.uniform_fallback) ++rep.uniform_fallbacks;
        rep.per_repeat.push_back(mdi.importances);
        std::vector<double> grouped(rep.groups.size(), 0.0);
        for (std::size_t c = 0; c < X.cols(); ++c) {
            const auto g = static_cast<std::size_t>(
                std::find(rep.groups.begin(), rep.groups.end(), X.groups[c]) - rep.groups.begin());
            grouped[g] += mdi.importances[c];
        }
        rep.group_per_repeat.push_back(std::move(grouped));
        rep.chosen.push_back(search.best);
        rep.cv_r2.push_back(search.best_r2);
    }
    mean_and_sd(rep.per_repeat, rep.mean, rep.sd);
    mean_and_sd(rep.group_per_repeat, rep.group_mean, rep.group_sd);
    return rep;
}

std::string importance_table_tsv(const ImportanceReport& r) {
    std::ostringstream out;
    out << "# pareto-tuner importance-table 1\n";
    out << "# target=" << to_string(r.target) << " repeats=" << r.per_repeat.size() << " rows=" << r.rows << '\n';
    out << "feature\tgroup\tmean_mdi\tsd_mdi\n";
    for (std::size_t c = 0; c < r.features.size(); ++c) {
        out << r.features[c] << '\t' << r.feature_groups[c] << '\t' << format_double(r.mean[c]) << '\t'
            << format_double(r.sd[c]) << '\n';
    }
    return out.str();
}

std::string importance_group_table_tsv(const ImportanceReport& r) {
    std::ostringstream out;
    out << "# pareto-tuner importance-groups 1\n";
    out << "# target=" << to_string(r.target) << " repeats=" << r.per_repeat.size() << " rows=" << r.rows << '\n';
    out << "group\tmean_mdi\tsd_mdi\n";
    for (std::size_t g = 0; g < r.groups.size(); ++g) {
        out << r.groups[g] << '\t' << format_double(r.group_mean[g]) << '\t' << format_double(r.group_sd[g]) << '\n';
    }
    return out.str();
}

std::string importance_bar_chart(const ImportanceReport& r, std::size_t width) {
    std::ostringstream out;
    std::size_t label = 0;
    for (const auto& f : r.features) label = std::max(label, f.size());
    for (const auto& g : r.groups) label = std::max(label, g.size() + 2);
    char buf[64];
    auto bar = [&](const std::string& name, double mean, double sd) {
        const auto len = static_cast<std::size_t>(std::lround(std::clamp(mean, 0.0, 1.0) * static_cast<double>(width)));
        out << name << std::string(label - name.size() + 1, ' ') << '|' << std::string(len, '#')
            << std::string(width - len, ' ') << "| ";
        std::snprintf(buf, sizeof buf, "%.4f +- %.4f\n", mean, sd);
        out << buf;
    };
    out << "MDI importance w.r.t. " << to_string(r.target) << " (" << r.per_repeat.size() << " repeats, " << r.rows
        << " rows)\n";
    for (std::size_t c = 0; c < r.features.size(); ++c) bar(r.features[c], r.mean[c], r.sd[c]);
    out << "grouped:\n";
    for (std::size_t g = 0; g < r.groups.size(); ++g) bar("  " + r.groups[g], r.group_mean[g], r.group_sd[g]);
    return out.str();
}

} // namespace ptuner
