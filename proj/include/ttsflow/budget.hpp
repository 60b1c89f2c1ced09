#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ttsflow {

enum class Phase : std::size_t { advance = 0, rollout = 1, final_solve = 2 };

inline constexpr std::array<Phase, 3> kPhases{Phase::advance, Phase::rollout, Phase::final_solve};

constexpr std::string_view phase_name(Phase p) {
    switch (p) {
        case Phase::advance: return "advance";
        case Phase::rollout: return "rollout";
        case Phase::final_solve: return "final";
    }
    return "?";
}

/// Counts velocity-field and score evaluations per phase. Counters only grow; ledgers from
/// independent workers combine with merge().
class BudgetLedger {
public:
    void charge_velocity(Phase p, std::uint64_t n = 1) { velocity_[index(p)] += n; }
    void charge_score(Phase p, std::uint64_t n = 1) { score_[index(p)] += n; }

    [[nodiscard]] std::uint64_t velocity(Phase p) const { return velocity_[index(p)]; }
    [[nodiscard]] std::uint64_t score(Phase p) const { return score_[index(p)]; }

    [[nodiscard]] std::uint64_t velocity_total() const {
        return velocity_[0] + velocity_[1] + velocity_[2];
    }
    [[nodiscard]] std::uint64_t score_total() const { return score_[0] + score_[1] + score_[2]; }

    BudgetLedger& merge(const BudgetLedger& other) {
        for (std::size_t i = 0; i < 3; ++i) {
            velocity_[i] += other.velocity_[i];
            score_[i] += other.score_[i];
        }
        return *this;
    }

    friend bool operator==(const BudgetLedger&, const BudgetLedger&) = default;

private:
    static constexpr std::size_t index(Phase p) { return static_cast<std::size_t>(p); }

    std::array<std::uint64_t, 3> velocity_{};
    std::array<std::uint64_t, 3> score_{};
};

} // namespace ttsflow
