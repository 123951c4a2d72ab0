#include "ptuner/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ptuner {

namespace {

double unit_from_hash(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

std::size_t count_selected(const TokenMask& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

double concave_bump(double x, double peak, double width) {
    const double d = (x - peak) / width;
    return std::max(0.0, 1.0 - d * d);
}

} // namespace

void SurrogateConfig::validate() const {
    const double values[] = {time_base_ms,      time_per_step_ms,  time_jitter,          quality_base,
                             steps_amplitude,   steps_scale,       rescale_amplitude,    rescale_peak,
                             scale_amplitude,   scale_peak,        scale_width,          positive_token_bonus,
                             positive_bonus_cap, negative_token_bonus, negative_bonus_cap, noise_sigma};
    for (double v : values) {
        if (!std::isfinite(v)) throw std::invalid_argument("surrogate: non-finite constant");
    }
    if (time_per_step_ms <= 0.0) throw std::invalid_argument("surrogate: time_per_step_ms must be > 0");
    if (time_base_ms + time_per_step_ms <= 0.0) throw std::invalid_argument("surrogate: non-positive time");
    if (time_jitter < 0.0 || time_jitter >= 1.0) throw std::invalid_argument("surrogate: time_jitter in [0,1)");
    if (steps_scale <= 0.0 || rescale_peak <= 0.0 || scale_width <= 0.0)
        throw std::invalid_argument("surrogate: shape widths must be > 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("surrogate: noise_sigma must be >= 0");
}

EvalResult surrogate_eval(const Candidate& c, const SurrogateConfig& cfg) {
    const auto& g = c.genes();
    const std::int64_t* steps = g.size() == 6 ? std::get_if<std::int64_t>(&g[0]) : nullptr;
    const double* scale = steps ? std::get_if<double>(&g[1]) : nullptr;
    const double* rescale = scale ? std::get_if<double>(&g[2]) : nullptr;
    const std::int64_t* seed = rescale ? std::get_if<std::int64_t>(&g[3]) : nullptr;
    const TokenMask* pos = seed ? std::get_if<TokenMask>(&g[4]) : nullptr;
    const TokenMask* neg = pos ? std::get_if<TokenMask>(&g[5]) : nullptr;
    if (!neg) return EvalResult::failure({}, "surrogate: candidate does not match the default search space");
    if (*steps < 1 || *steps > 100 || *scale < 1.0 || *scale > 20.0 || *rescale < 0.0 || *rescale > 1.0 ||
        *seed < 1 || *seed > 512)
        return EvalResult::failure({}, "surrogate: gene outside the default search space bounds");

    const std::uint64_t h = derive_seed(fnv1a64(serialize(c)), cfg.noise_seed);
    const double u_jitter = unit_from_hash(mix64(h ^ 0x1ULL));
    const double u1 = unit_from_hash(mix64(h ^ 0x2ULL));
    const double u2 = unit_from_hash(mix64(h ^ 0x3ULL));

    const double s = static_cast<double>(*steps);
    const double nominal = cfg.time_base_ms + cfg.time_per_step_ms * s;
    const double time_ms = nominal * (1.0 + cfg.time_jitter * (2.0 * u_jitter - 1.0));

    // Box-Muller; 1 - u1 keeps the log argument in (0, 1].
    const double z = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
    const double noise = cfg.noise_sigma * std::clamp(z, -2.0, 2.0);

    double q = cfg.quality_base;
    q += cfg.steps_amplitude * (1.0 - std::exp(-s / cfg.steps_scale));
    q += cfg.rescale_amplitude * concave_bump(*rescale, cfg.rescale_peak, cfg.rescale_peak);
    q += cfg.scale_amplitude * concave_bump(*scale, cfg.scale_peak, cfg.scale_width);
    q += std::min(cfg.positive_bonus_cap, cfg.positive_token_bonus * static_cast<double>(count_selected(*pos)));
    q += std::min(cfg.negative_bonus_cap, cfg.negative_token_bonus * static_cast<double>(count_selected(*neg)));
    q += noise;

    return EvalResult::success({}, std::max(time_ms, 1e-9), std::clamp(q, 0.0, 1.0));
}

SurrogateBackend::SurrogateBackend(SurrogateConfig cfg) : cfg_(cfg) { cfg_.validate(); }

std::string SurrogateBackend::id() const { return "surrogate/" + std::to_string(cfg_.noise_seed); }

EvalResult SurrogateBackend::evaluate(const EvalRequest& req) {
    EvalResult r = surrogate_eval(req.candidate, cfg_);
    r.id = req.id;
    return r;
}

} // namespace ptuner
