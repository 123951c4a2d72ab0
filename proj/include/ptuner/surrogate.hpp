#pragma once

#include <cstdint>
#include <string>

#include "ptuner/evaluation.hpp"

namespace ptuner {

/// Synthetic time/quality response surface over the default search space.
///
/// time_ms = (time_base_ms + time_per_step_ms * steps) * (1 + jitter), with
/// jitter uniform in [-time_jitter, +time_jitter].
///
/// quality = clamp01(quality_base
///                   + steps_amplitude * (1 - exp(-steps / steps_scale))
///                   + rescale_amplitude * max(0, 1 - ((rescale - rescale_peak) / rescale_peak)^2)
///                   + scale_amplitude * max(0, 1 - ((scale - scale_peak) / scale_width)^2)
///                   + min(positive_bonus_cap, positive_token_bonus * #positive)
///                   + min(negative_bonus_cap, negative_token_bonus * #negative)
///                   + noise)
///
/// noise is Gaussian with sd noise_sigma, clipped to +-2 sd. Jitter and noise
/// are pure hashes of (genes, noise_seed).
struct SurrogateConfig {
    std::uint64_t noise_seed = 0;
    double time_base_ms = 900.0;
    double time_per_step_ms = 230.0;
    double time_jitter = 0.02;

    double quality_base = 0.08;
    double steps_amplitude = 0.06;
    double steps_scale = 10.0;
    double rescale_amplitude = 0.40;
    double rescale_peak = 0.65;
    double scale_amplitude = 0.05;
    double scale_peak = 7.5;
    double scale_width = 12.5;
    double positive_token_bonus = 0.07;
    double positive_bonus_cap = 0.21;
    double negative_token_bonus = 0.03;
    double negative_bonus_cap = 0.09;
    double noise_sigma = 0.05;

    /// Throws std::invalid_argument on non-finite constants or a time model
    /// that does not increase with steps.
    void validate() const;
};

/// Error result when `c` does not have the default space's shape.
EvalResult surrogate_eval(const Candidate& c, const SurrogateConfig& cfg);

class SurrogateBackend final : public Backend {
public:
    explicit SurrogateBackend(SurrogateConfig cfg = {});

    [[nodiscard]] std::string id() const override;
    [[nodiscard]] bool parallel_safe() const override { return true; }
    EvalResult evaluate(const EvalRequest& req) override;

private:
    SurrogateConfig cfg_;
};

} // namespace ptuner
