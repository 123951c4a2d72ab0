#include "ptuner/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ptuner {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

[[noreturn]] void bad_gene(const ParamSpec& p, std::string_view what) {
    throw SpaceError("gene '" + p.name + "': " + std::string(what));
}

} // namespace

double canonical_real(double v) {
    if (!std::isfinite(v)) return v;
    double r = std::strtod(format_real(v).c_str(), nullptr);
    return r == 0.0 ? 0.0 : r; // folds -0
}

Candidate::Candidate(std::vector<GeneValue> genes) : genes_(std::move(genes)) {
    for (auto& g : genes_) {
        if (auto* d = std::get_if<double>(&g)) *d = canonical_real(*d);
    }
}

SearchSpace::SearchSpace(std::vector<ParamSpec> params) : params_(std::move(params)) {
    std::set<std::string> names;
    for (auto& p : params_) {
        // bounds at gene precision, so a gene clamped to a bound stays inside
        if (auto* r = std::get_if<RealRange>(&p.kind)) {
            r->lo = canonical_real(r->lo);
            r->hi = canonical_real(r->hi);
        }
        if (p.name.empty()) throw SpaceError("param with empty name");
        if (!names.insert(p.name).second) throw SpaceError("duplicate param name '" + p.name + "'");
        std::visit(overloaded{
                       [&](const IntegerRange& r) {
                           if (r.lo > r.hi) throw SpaceError("param '" + p.name + "': lo > hi");
                       },
                       [&](const RealRange& r) {
                           if (!std::isfinite(r.lo) || !std::isfinite(r.hi))
                               throw SpaceError("param '" + p.name + "': non-finite bound");
                           if (r.lo > r.hi) throw SpaceError("param '" + p.name + "': lo > hi");
                       },
                       [&](const TokenSubset& t) {
                           std::set<std::string> seen;
                           for (const auto& tok : t.vocabulary) {
                               if (tok.empty()) throw SpaceError("param '" + p.name + "': empty token");
                               if (!seen.insert(tok).second)
                                   throw SpaceError("param '" + p.name + "': duplicate token '" + tok + "'");
                           }
                       },
                   },
                   p.kind);
    }
}

SearchSpace SearchSpace::default_space() {
    return default_space(default_positive_vocabulary(), default_negative_vocabulary());
}

SearchSpace SearchSpace::default_space(std::vector<std::string> positive_vocabulary,
                                       std::vector<std::string> negative_vocabulary) {
    return SearchSpace({
        {"inference_steps", IntegerRange{1, 100}},
        {"guidance_scale", RealRange{1.0, 20.0}},
        {"guidance_rescale", RealRange{0.0, 1.0}},
        {"seed", IntegerRange{1, 512}},
        {"positive_prompt", TokenSubset{std::move(positive_vocabulary)}},
        {"negative_prompt", TokenSubset{std::move(negative_vocabulary)}},
    });
}

std::size_t SearchSpace::find(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) return i;
    }
    return params_.size();
}

void SearchSpace::validate(const Candidate& c) const {
    if (c.size() != params_.size())
        throw SpaceError("candidate has " + std::to_string(c.size()) + " genes, space has " +
                         std::to_string(params_.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const auto& p = params_[i];
        const auto& g = c.gene(i);
        std::visit(overloaded{
                       [&](const IntegerRange& r) {
                           const auto* v = std::get_if<std::int64_t>(&g);
                           if (!v) bad_gene(p, "expected integer");
                           if (*v < r.lo || *v > r.hi) bad_gene(p, "out of bounds");
                       },
                       [&](const RealRange& r) {
                           const auto* v = std::get_if<double>(&g);
                           if (!v) bad_gene(p, "expected real");
                           if (!(*v >= r.lo && *v <= r.hi)) bad_gene(p, "out of bounds");
                       },
                       [&](const TokenSubset& t) {
                           const auto* v = std::get_if<TokenMask>(&g);
                           if (!v) bad_gene(p, "expected token mask");
                           if (v->size() != t.vocabulary.size()) bad_gene(p, "mask length mismatch");
                       },
                   },
                   p.kind);
    }
}

bool SearchSpace::contains(const Candidate& c) const noexcept {
    try {
        validate(c);
        return true;
    } catch (const SpaceError&) {
        return false;
    }
}

namespace {

// Numeric mutation: half the time a uniform resample, otherwise a local step
// of at most 2% of the range.
constexpr double kLocalShare = 0.5;
constexpr double kPerturbWidth = 0.02;

GeneValue sample_gene(const ParamSpec& p, Rng& rng) {
    return std::visit(overloaded{
                          [&](const IntegerRange& r) -> GeneValue { return rng.uniform_int(r.lo, r.hi); },
                          [&](const RealRange& r) -> GeneValue {
                              // canonical rounding may step just past hi
                              return std::clamp(canonical_real(rng.uniform(r.lo, r.hi)), r.lo, r.hi);
                          },
                          [&](const TokenSubset& t) -> GeneValue {
                              TokenMask m(t.vocabulary.size());
                              for (std::size_t k = 0; k < m.size(); ++k) m[k] = rng.bernoulli(0.5);
                              return m;
                          },
                      },
                      p.kind);
}

// Local move: triangular step on [-w, w] with w a fixed share of the range.
GeneValue perturb_gene(const ParamSpec& p, const GeneValue& g, Rng& rng) {
    const double step = rng.uniform() + rng.uniform() - 1.0;
    if (const auto* r = std::get_if<IntegerRange>(&p.kind)) {
        const auto old = std::get<std::int64_t>(g);
        if (r->lo == r->hi) return old;
        const double w = std::max(1.0, kPerturbWidth * static_cast<double>(r->hi - r->lo));
        auto delta = static_cast<std::int64_t>(std::llround(step * w));
        if (delta == 0) delta = step < 0.0 ? -1 : 1;
        // step the other way off a bound so the gene always moves
        auto v = old + delta;
        if (v < r->lo || v > r->hi) v = old - delta;
        return std::clamp(v, r->lo, r->hi);
    }
    const auto& r = std::get<RealRange>(p.kind);
    const double v = std::get<double>(g) + step * kPerturbWidth * (r.hi - r.lo);
    return std::clamp(canonical_real(std::clamp(v, r.lo, r.hi)), r.lo, r.hi);
}

} // namespace

Candidate sample_random(const SearchSpace& space, Rng& rng) {
    std::vector<GeneValue> genes;
    genes.reserve(space.size());
    for (const auto& p : space.params()) genes.push_back(sample_gene(p, rng));
    return Candidate(std::move(genes));
}

Candidate mutate(const Candidate& c, const SearchSpace& space, double per_gene_rate, Rng& rng) {
    std::vector<GeneValue> genes = c.genes();
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& p = space.param(i);
        if (auto* mask = std::get_if<TokenMask>(&genes[i])) {
            for (std::size_t k = 0; k < mask->size(); ++k) {
                if (rng.bernoulli(per_gene_rate)) (*mask)[k] = !(*mask)[k];
            }
        } else if (rng.bernoulli(per_gene_rate)) {
            genes[i] = rng.bernoulli(kLocalShare) ? perturb_gene(p, genes[i], rng) : sample_gene(p, rng);
        }
    }
    return Candidate(std::move(genes));
}

std::pair<Candidate, Candidate> crossover(const Candidate& a, const Candidate& b, const SearchSpace& space,
                                          Rng& rng) {
    std::vector<GeneValue> x = a.genes();
    std::vector<GeneValue> y = b.genes();
    for (std::size_t i = 0; i < space.size(); ++i) {
        auto* mx = std::get_if<TokenMask>(&x[i]);
        auto* my = std::get_if<TokenMask>(&y[i]);
        if (mx && my) {
            for (std::size_t k = 0; k < mx->size(); ++k) {
                if (rng.bernoulli(0.5)) {
                    const bool t = (*mx)[k];
                    (*mx)[k] = (*my)[k];
                    (*my)[k] = t;
                }
            }
        } else if (rng.bernoulli(0.5)) {
            std::swap(x[i], y[i]);
        }
    }
    return {Candidate(std::move(x)), Candidate(std::move(y))};
}

namespace {

std::string join_selected(const Candidate& c, const SearchSpace& space, std::string_view name) {
    const std::size_t idx = space.find(name);
    if (idx == space.size()) return {};
    const auto* tokens = std::get_if<TokenSubset>(&space.param(idx).kind);
    const auto* mask = std::get_if<TokenMask>(&c.gene(idx));
    if (!tokens || !mask) return {};
    std::string out;
    for (std::size_t k = 0; k < mask->size() && k < tokens->vocabulary.size(); ++k) {
        if (!(*mask)[k]) continue;
        if (!out.empty()) out += ", ";
        out += tokens->vocabulary[k];
    }
    return out;
}

} // namespace

RenderedPrompt render_prompt(const Candidate& c, std::string_view base_prompt, const SearchSpace& space) {
    RenderedPrompt r;
    r.positive = std::string(base_prompt);
    const std::string pos = join_selected(c, space, "positive_prompt");
    if (!pos.empty()) r.positive += r.positive.empty() ? pos : ", " + pos;
    r.negative = join_selected(c, space, "negative_prompt");
    return r;
}

std::string serialize(const Candidate& c) {
    std::string out;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (i) out += '|';
        std::visit(overloaded{
                       [&](std::int64_t v) { out += "i:" + std::to_string(v); },
                       [&](double v) { out += "r:" + format_real(v); },
                       [&](const TokenMask& m) {
                           out += "m:";
                           for (bool b : m) out += b ? '1' : '0';
                       },
                   },
                   c.gene(i));
    }
    return out;
}

Candidate deserialize(std::string_view text, const SearchSpace& space) {
    std::vector<GeneValue> genes;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('|', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view field = text.substr(pos, end - pos);
        if (field.size() < 2 || field[1] != ':') throw SpaceError("malformed gene '" + std::string(field) + "'");
        const std::string body(field.substr(2));
        switch (field[0]) {
        case 'i': {
            char* stop = nullptr;
            const long long v = std::strtoll(body.c_str(), &stop, 10);
            if (body.empty() || *stop != '\0') throw SpaceError("malformed integer gene '" + body + "'");
            genes.emplace_back(static_cast<std::int64_t>(v));
            break;
        }
        case 'r': {
            char* stop = nullptr;
            const double v = std::strtod(body.c_str(), &stop);
            if (body.empty() || *stop != '\0') throw SpaceError("malformed real gene '" + body + "'");
            genes.emplace_back(v);
            break;
        }
        case 'm': {
            TokenMask m;
            for (char ch : body) {
                if (ch != '0' && ch != '1') throw SpaceError("malformed mask gene '" + body + "'");
                m.push_back(ch == '1');
            }
            genes.emplace_back(std::move(m));
            break;
        }
        default:
            throw SpaceError("unknown gene tag in '" + std::string(field) + "'");
        }
        if (end == text.size()) break;
        pos = end + 1;
    }
    Candidate c(std::move(genes));
    space.validate(c);
    return c;
}

std::string space_to_json(const SearchSpace& space) {
    using nlohmann::ordered_json;
    ordered_json params = ordered_json::array();
    for (const auto& p : space.params()) {
        ordered_json j;
        j["name"] = p.name;
        std::visit(overloaded{
                       [&](const IntegerRange& r) {
                           j["kind"] = "integer";
                           j["lo"] = r.lo;
                           j["hi"] = r.hi;
                       },
                       [&](const RealRange& r) {
                           j["kind"] = "real";
                           j["lo"] = r.lo;
                           j["hi"] = r.hi;
                       },
                       [&](const TokenSubset& t) {
                           j["kind"] = "tokens";
                           j["vocabulary"] = t.vocabulary;
                       },
                   },
                   p.kind);
        params.push_back(std::move(j));
    }
    ordered_json doc;
    doc["schema"] = "pareto-tuner/space";
    doc["version"] = 1;
    doc["params"] = std::move(params);
    return doc.dump(2) + "\n";
}

SearchSpace space_from_json(std::string_view text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SpaceError(std::string("space file: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("params") || !doc["params"].is_array())
        throw SpaceError("space file: missing 'params' array");
    if (doc.contains("version") && doc["version"] != 1) throw SpaceError("space file: unsupported version");
    std::vector<ParamSpec> params;
    try {
        for (const auto& j : doc["params"]) {
            ParamSpec p;
            p.name = j.at("name").get<std::string>();
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "integer") {
                p.kind = IntegerRange{j.at("lo").get<std::int64_t>(), j.at("hi").get<std::int64_t>()};
            } else if (kind == "real") {
                p.kind = RealRange{j.at("lo").get<double>(), j.at("hi").get<double>()};
            } else if (kind == "tokens") {
                p.kind = TokenSubset{j.at("vocabulary").get<std::vector<std::string>>()};
            } else {
                throw SpaceError("space file: unknown kind '" + kind + "'");
            }
            params.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SpaceError(std::string("space file: ") + e.what());
    }
    return SearchSpace(std::move(params));
}

SearchSpace load_space(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SpaceError("cannot open space file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return space_from_json(ss.str());
}

std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SpaceError("cannot open vocabulary file " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        const auto e = line.find_last_not_of(" \t\r");
        out.push_back(line.substr(b, e - b + 1));
    }
    return out;
}

} // namespace ptuner
