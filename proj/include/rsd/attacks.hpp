#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsd/classifier.hpp"
#include "rsd/defense_fn.hpp"

namespace rsd {

/// L-infinity attack configuration. fgsm is pinned to one full-step with no
/// random init; bim is pgd without random init.
struct AttackConfig {
  enum class Kind { fgsm, bim, pgd, bpda_pgd };

  Kind kind = Kind::pgd;
  float epsilon = 8.0f / 255.0f;
  std::int64_t steps = 100;
  float step_size = 2.0f / 255.0f;
  bool random_init = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilon < 0.0f) throw ConfigError("attack: epsilon must be >= 0");
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (step_size < 0.0f) throw ConfigError("attack: step_size must be >= 0");
  }

  /// Canonicalizes fgsm/bim to their pgd equivalents.
  AttackConfig normalized() const {
    AttackConfig c = *this;
    if (kind == Kind::fgsm) {
      c.steps = 1;
      c.step_size = epsilon;
      c.random_init = false;
    } else if (kind == Kind::bim) {
      c.random_init = false;
    }
    c.validate();
    return c;
  }

  std::string describe() const;
  static Kind kind_from_string(const std::string& s);
  static std::string kind_to_string(Kind k);
};

/// Projected gradient descent on a batch; the core of every attack here.
/// first_index seeds per-image init streams so results are independent of
/// batching. If `defense` is non-null the forward pass is F(defense(x)) and
/// the backward pass substitutes the identity for the defense (BPDA).
Tensor attack_batch(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
                    const AttackConfig& cfg, std::int64_t first_index = 0,
                    const DefenseFn* defense = nullptr);

Tensor fgsm(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
            float epsilon);
Tensor bim(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
           const AttackConfig& cfg);
Tensor pgd(const ClassifierModel& victim, const Tensor& x, const std::vector<std::int32_t>& y,
           const AttackConfig& cfg);
Tensor bpda_pgd(const ClassifierModel& victim, const DefenseFn& defense, const Tensor& x,
                const std::vector<std::int32_t>& y, const AttackConfig& cfg);

/// Attacks a whole image set in fixed-size batches (parallel across
/// batches, deterministic regardless of thread count).
Tensor attack_images(const ClassifierModel& victim, const Tensor& images,
                     const std::vector<std::int32_t>& labels, const AttackConfig& cfg,
                     const DefenseFn* defense = nullptr, std::int64_t batch_size = 64);

}  // namespace rsd
