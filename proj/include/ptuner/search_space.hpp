#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ptuner/rng.hpp"

namespace ptuner {

class SpaceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IntegerRange {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    bool operator==(const IntegerRange&) const = default;
};

struct RealRange {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const RealRange&) const = default;
};

struct TokenSubset {
    std::vector<std::string> vocabulary;
    bool operator==(const TokenSubset&) const = default;
};

struct ParamSpec {
    std::string name;
    std::variant<IntegerRange, RealRange, TokenSubset> kind;

    bool operator==(const ParamSpec&) const = default;
};

using TokenMask = std::vector<bool>;
using GeneValue = std::variant<std::int64_t, double, TokenMask>;

/// Rounds a real gene to the 9 significant digits it is serialized with.
/// Every real stored in a Candidate goes through this, so equality, cache
/// keys and the text form always agree.
double canonical_real(double v);

/// One point of a SearchSpace. Genes are positional, one per ParamSpec.
class Candidate {
public:
    Candidate() = default;
    explicit Candidate(std::vector<GeneValue> genes);

    [[nodiscard]] const std::vector<GeneValue>& genes() const noexcept { return genes_; }
    [[nodiscard]] const GeneValue& gene(std::size_t i) const { return genes_.at(i); }
    [[nodiscard]] std::size_t size() const noexcept { return genes_.size(); }

    bool operator==(const Candidate&) const = default;

private:
    std::vector<GeneValue> genes_;
};

class SearchSpace {
public:
    /// Real bounds are rounded like real genes. Throws SpaceError when a range
    /// is inverted, a vocabulary has empty or duplicate tokens, or two params
    /// share a name.
    explicit SearchSpace(std::vector<ParamSpec> params);

    /// inference_steps, guidance_scale, guidance_rescale, seed and the two
    /// prompt token lists.
    static SearchSpace default_space();
    static SearchSpace default_space(std::vector<std::string> positive_vocabulary,
                                     std::vector<std::string> negative_vocabulary);

    [[nodiscard]] const std::vector<ParamSpec>& params() const noexcept { return params_; }
    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }
    [[nodiscard]] const ParamSpec& param(std::size_t i) const { return params_.at(i); }
    /// Index of the named param, or size() when absent.
    [[nodiscard]] std::size_t find(std::string_view name) const noexcept;

    [[nodiscard]] bool contains(const Candidate& c) const noexcept;
    /// Throws SpaceError naming the first offending gene.
    void validate(const Candidate& c) const;

    bool operator==(const SearchSpace&) const = default;

private:
    std::vector<ParamSpec> params_;
};

inline const std::vector<std::string>& default_positive_vocabulary() {
    static const std::vector<std::string> v{"photograph", "color", "ultra real"};
    return v;
}

inline const std::vector<std::string>& default_negative_vocabulary() {
    static const std::vector<std::string> v{"sketch", "cropped", "low quality"};
    return v;
}

Candidate sample_random(const SearchSpace& space, Rng& rng);

/// Each integer or real gene mutates with probability `per_gene_rate`: an even
/// choice between a uniform resample and a triangular step of at most 2% of
/// the range (integers always move by at least 1). Every token bit flips
/// independently with that probability.
Candidate mutate(const Candidate& c, const SearchSpace& space, double per_gene_rate, Rng& rng);

/// Uniform crossover. Token masks are crossed bit by bit.
std::pair<Candidate, Candidate> crossover(const Candidate& a, const Candidate& b, const SearchSpace& space,
                                          Rng& rng);

struct RenderedPrompt {
    std::string positive;
    std::string negative;
    bool operator==(const RenderedPrompt&) const = default;
};

/// Appends the selected positive tokens to `base_prompt` and joins the
/// selected negative tokens, both with ", " in vocabulary order. Looks up the
/// params named "positive_prompt" and "negative_prompt".
RenderedPrompt render_prompt(const Candidate& c, std::string_view base_prompt, const SearchSpace& space);

/// Canonical text form, e.g. "i:50|r:7.5|r:0.3|i:7|m:101|m:000".
std::string serialize(const Candidate& c);
/// Inverse of serialize(); the result is validated against `space`.
Candidate deserialize(std::string_view text, const SearchSpace& space);

/// Space definition files are JSON; see README for the schema.
std::string space_to_json(const SearchSpace& space);
SearchSpace space_from_json(std::string_view text);
SearchSpace load_space(const std::filesystem::path& path);

/// One token per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

} // namespace ptuner

template <>
struct std::hash<ptuner::Candidate> {
    std::size_t operator()(const ptuner::Candidate& c) const noexcept {
        return static_cast<std::size_t>(ptuner::fnv1a64(ptuner::serialize(c)));
    }
};
