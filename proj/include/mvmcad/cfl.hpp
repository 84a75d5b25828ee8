#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mvmcad/autodiff.hpp"

namespace mvmcad {

// Cross-feature loss: cross-level cosine alignment (fe1 <-> f2, fe2 <-> f1)
// restricted to the hardest 10% of tokens.
namespace cfl {

inline constexpr double kCosEps = 1e-6;
inline constexpr double kMiningFraction = 0.10;

template <typename Real>
struct LossReport {
    Real loss = Real(0);
    Real threshold_h[2] = {Real(0), Real(0)};     // per-pair mining threshold
    Real selected_fraction[2] = {Real(0), Real(0)};
    Real per_pair[2] = {Real(0), Real(0)};        // mined means per pair
};

// Per-token cosine distance over D: 1 - <a,b> / max(|a||b|, eps).
template <typename Real>
Var<Real> cosine_distance_map(const Var<Real>& za, const Var<Real>& zb) {
    if (za->value.shape != zb->value.shape)
        throw ValidationError("cosine_distance_map shape mismatch: " + shape_str(za->value.shape) +
                              " vs " + shape_str(zb->value.shape));
    std::size_t last = za->value.rank() - 1;
    auto dot = ad::reduce(ad::mul(za, zb), last, ReduceKind::Sum);
    auto na = ad::sqrt(ad::reduce(ad::square(za), last, ReduceKind::Sum));
    auto nb = ad::sqrt(ad::reduce(ad::square(zb), last, ReduceKind::Sum));
    auto denom = ad::clamp_min(ad::mul(na, nb), Real(kCosEps));
    return ad::add_const(ad::neg(ad::div(dot, denom)), Real(1));
}

template <typename Real>
struct MiningResult {
    Real threshold = Real(0);
    std::vector<std::size_t> selected;
};

// h = the ceil(0.1 * n)-th largest score (minimum 1); ties at h included.
template <typename Real>
MiningResult<Real> hard_mining_threshold(const std::vector<Real>& scores,
                                         double fraction = kMiningFraction) {
    if (scores.empty()) throw ValidationError("hard_mining_threshold on empty scores");
    std::size_t k = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(scores.size())));
    k = std::max<std::size_t>(k, 1);
    std::vector<Real> sorted = scores;
    std::sort(sorted.begin(), sorted.end(), std::greater<Real>());
    MiningResult<Real> res;
    res.threshold = sorted[k - 1];
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= res.threshold) res.selected.push_back(i);
    return res;
}

namespace detail {

// Mean of mined scores; the 0/1 mask enters as a constant, so gradient is
// exactly zero at non-mined tokens.
template <typename Real>
Var<Real> mined_mean(const Var<Real>& scores, const MiningResult<Real>& mining) {
    Tensor<Real> mask(scores->value.shape);
    for (std::size_t i : mining.selected) mask.data[i] = Real(1);
    auto masked = ad::mul(scores, scores->tape->constant(mask));
    return ad::scale(ad::sum_all(masked),
                     Real(1) / static_cast<Real>(mining.selected.size()));
}

}  // namespace detail

// Pooled-batch mining per pair; invert_mining selects the complement set.
template <typename Real>
std::pair<Var<Real>, LossReport<Real>> cross_feature_loss(const Var<Real>& fe1,
                                                          const Var<Real>& fe2,
                                                          const Var<Real>& f1,
                                                          const Var<Real>& f2,
                                                          bool invert_mining = false) {
    for (const auto& t : {fe2, f1, f2})
        if (t->value.shape != fe1->value.shape)
            throw ValidationError("cross_feature_loss: feature shapes must all equal " +
                                  shape_str(fe1->value.shape));
    LossReport<Real> report;
    Var<Real> halves[2];
    const Var<Real>* pairs[2][2] = {{&fe1, &f2}, {&fe2, &f1}};
    for (int p = 0; p < 2; ++p) {
        auto scores = cosine_distance_map(*pairs[p][0], *pairs[p][1]);
        auto mining = hard_mining_threshold<Real>(scores->value.data);
        if (invert_mining) {
            std::vector<std::size_t> complement;
            std::vector<bool> in(scores->value.size(), false);
            for (std::size_t i : mining.selected) in[i] = true;
            for (std::size_t i = 0; i < in.size(); ++i)
                if (!in[i]) complement.push_back(i);
            if (!complement.empty()) mining.selected = std::move(complement);
        }
        halves[p] = detail::mined_mean(scores, mining);
        report.threshold_h[p] = mining.threshold;
        report.selected_fraction[p] =
            static_cast<Real>(mining.selected.size()) / static_cast<Real>(scores->value.size());
        report.per_pair[p] = halves[p]->value.data[0];
    }
    auto loss = ad::scale(ad::add(halves[0], halves[1]), Real(0.5));
    report.loss = loss->value.data[0];
    return {loss, report};
}

// Ablation variant (cfl disabled): plain non-crossed alignment fe1<->f1,
// fe2<->f2 over all tokens, no mining.
template <typename Real>
std::pair<Var<Real>, LossReport<Real>> plain_feature_loss(const Var<Real>& fe1,
                                                          const Var<Real>& fe2,
                                                          const Var<Real>& f1,
                                                          const Var<Real>& f2) {
    auto s1 = ad::mean_all(cosine_distance_map(fe1, f1));
    auto s2 = ad::mean_all(cosine_distance_map(fe2, f2));
    auto loss = ad::scale(ad::add(s1, s2), Real(0.5));
    LossReport<Real> report;
    report.loss = loss->value.data[0];
    report.per_pair[0] = s1->value.data[0];
    report.per_pair[1] = s2->value.data[0];
    report.selected_fraction[0] = report.selected_fraction[1] = Real(1);
    return {loss, report};
}

}  // namespace cfl
}  // namespace mvmcad
