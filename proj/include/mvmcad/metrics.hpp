#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <vector>

#include "mvmcad/errors.hpp"
#include "mvmcad/tensor.hpp"

namespace mvmcad {
namespace metrics {

// Tie-aware AUROC via the rank statistic: P(s+ > s-) + 0.5 P(s+ = s-).
inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ValidationError("auroc: size mismatch");
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw ValidationError("auroc requires both classes present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks across ties (1-based).
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg = 0.5 * (double(i + 1) + double(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum = 0;
    for (std::size_t k = 0; k < scores.size(); ++k)
        if (labels[k]) rank_sum += rank[k];
    double u = rank_sum - 0.5 * double(pos) * double(pos + 1);
    return u / (double(pos) * double(neg));
}

// Step-interpolated PR-AUC with deterministic tie ordering by stable sort.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ValidationError("average_precision: size mismatch");
    std::size_t pos = 0;
    for (int l : labels) pos += l ? 1 : 0;
    if (pos == 0) throw ValidationError("average_precision requires at least one positive");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]]) {
            ++tp;
            ap += (double(tp) / double(k + 1)) / double(pos);
        }
    }
    return ap;
}

// Maximum F1 over thresholds placed at every distinct score, pred = s >= t.
inline double f1_max(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ValidationError("f1_max: size mismatch");
    std::size_t pos = 0;
    for (int l : labels) pos += l ? 1 : 0;
    if (pos == 0) throw ValidationError("f1_max requires at least one positive");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double best = 0;
    std::size_t tp = 0, predicted = 0;
    std::size_t k = 0;
    while (k < order.size()) {
        // consume the whole tie group; threshold = this score
        std::size_t j = k;
        while (j < order.size() && scores[order[j]] == scores[order[k]]) {
            if (labels[order[j]]) ++tp;
            ++predicted;
            ++j;
        }
        double precision = double(tp) / double(predicted);
        double recall = double(tp) / double(pos);
        if (precision + recall > 0) best = std::max(best, 2 * precision * recall / (precision + recall));
        k = j;
    }
    return best;
}

// 8-connected components of a binary mask; returns a label map with
// 0 = background and the component count.
inline std::size_t connected_components(const std::vector<std::uint8_t>& mask, std::size_t h,
                                        std::size_t w, std::vector<std::uint32_t>& labels_out) {
    labels_out.assign(h * w, 0);
    std::uint32_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask[start] || labels_out[start]) continue;
        ++next;
        stack.push_back(start);
        labels_out[start] = next;
        while (!stack.empty()) {
            std::size_t p = stack.back();
            stack.pop_back();
            long py = long(p / w), px = long(p % w);
            for (long dy = -1; dy <= 1; ++dy) {
                for (long dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    long y = py + dy, x = px + dx;
                    if (y < 0 || x < 0 || y >= long(h) || x >= long(w)) continue;
                    std::size_t q = std::size_t(y) * w + std::size_t(x);
                    if (mask[q] && !labels_out[q]) {
                        labels_out[q] = next;
                        stack.push_back(q);
                    }
                }
            }
        }
    }
    return next;
}

// Per-region-overlap vs pooled FPR, trapezoid-integrated up to fpr_limit
// and normalized by it. Regions are 8-connected mask components.
inline double aupro(const std::vector<Tensor<double>>& maps,
                    const std::vector<Tensor<double>>& masks, double fpr_limit = 0.3) {
    if (maps.size() != masks.size() || maps.empty())
        throw ValidationError("aupro: maps and masks must align");
    struct Pixel {
        double score;
        std::uint32_t region;  // 0 = negative
    };
    std::vector<Pixel> pixels;
    std::vector<std::size_t> region_sizes;  // 1-based via offset
    std::size_t total_regions = 0, total_neg = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        const auto& map = maps[m];
        const auto& mask = masks[m];
        if (map.shape != mask.shape) throw ValidationError("aupro: map/mask shape mismatch");
        std::size_t h = map.shape[0], w = map.shape[1];
        std::vector<std::uint8_t> bin(h * w);
        for (std::size_t i = 0; i < h * w; ++i) bin[i] = mask.data[i] > 0.5 ? 1 : 0;
        std::vector<std::uint32_t> labels;
        std::size_t n = connected_components(bin, h, w, labels);
        for (std::size_t i = 0; i < h * w; ++i) {
            std::uint32_t r = labels[i] ? std::uint32_t(total_regions + labels[i]) : 0;
            pixels.push_back({map.data[i], r});
            if (!r) ++total_neg;
        }
        for (std::size_t r = 0; r < n; ++r) region_sizes.push_back(0);
        for (std::size_t i = 0; i < h * w; ++i)
            if (labels[i]) region_sizes[total_regions + labels[i] - 1]++;
        total_regions += n;
    }
    if (total_regions == 0) throw ValidationError("aupro requires at least one mask region");
    if (total_neg == 0) throw ValidationError("aupro requires negative pixels");

    std::sort(pixels.begin(), pixels.end(),
              [](const Pixel& a, const Pixel& b) { return a.score > b.score; });

    std::vector<std::size_t> region_hits(total_regions, 0);
    std::size_t fp = 0;
    double prev_fpr = 0.0, prev_pro = 0.0, area = 0.0;
    auto mean_pro = [&]() {
        double s = 0;
        for (std::size_t r = 0; r < total_regions; ++r)
            s += double(region_hits[r]) / double(region_sizes[r]);
        return s / double(total_regions);
    };
    std::size_t i = 0;
    while (i < pixels.size()) {
        std::size_t j = i;
        while (j < pixels.size() && pixels[j].score == pixels[i].score) {
            if (pixels[j].region)
                region_hits[pixels[j].region - 1]++;
            else
                ++fp;
            ++j;
        }
        double fpr = double(fp) / double(total_neg);
        double pro = mean_pro();
        // trapezoid between (prev_fpr, prev_pro) and (fpr, pro), clipped
        if (fpr >= prev_fpr) {
            double hi = std::min(fpr, fpr_limit);
            if (hi > prev_fpr) {
                double t1 = prev_pro;
                double t2 = (fpr == prev_fpr)
                                ? pro
                                : prev_pro + (pro - prev_pro) * (hi - prev_fpr) / (fpr - prev_fpr);
                area += 0.5 * (t1 + t2) * (hi - prev_fpr);
            }
        }
        prev_fpr = fpr;
        prev_pro = pro;
        if (prev_fpr >= fpr_limit) break;
        i = j;
    }
    return area / fpr_limit;
}

}  // namespace metrics
}  // namespace mvmcad
