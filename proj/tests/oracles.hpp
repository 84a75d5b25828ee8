#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mvmcad/tensor.hpp"

// Brute-force reference implementations used to cross-check the fast metric
// paths. Deliberately simple and slow.
namespace oracles {

using mvmcad::Tensor;


// O(n^2) pairwise oracle for AUROC.
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            ++pairs;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    return wins / double(pairs);
}

// Per-positive precision-at-rank oracle for AP, stable tie ordering.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::size_t pos = 0;
    for (int l : y) pos += l ? 1 : 0;
    double ap = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        // rank of i under descending stable sort = 1 + #items strictly higher
        // + #equal items with earlier index
        std::size_t rank = 1, tp = 1;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (j == i) continue;
            bool before = s[j] > s[i] || (s[j] == s[i] && j < i);
            if (before) {
                ++rank;
                if (y[j]) ++tp;
            }
        }
        ap += double(tp) / double(rank) / double(pos);
    }
    return ap;
}

// Direct-count oracle for F1-max over all distinct-score thresholds.
double f1_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    std::size_t pos = 0;
    for (int l : y) pos += l ? 1 : 0;
    double best = 0;
    for (double t : s) {
        std::size_t tp = 0, fp = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] >= t) (y[i] ? tp : fp)++;
        }
        if (tp == 0) continue;
        double p = double(tp) / double(tp + fp);
        double r = double(tp) / double(pos);
        best = std::max(best, 2 * p * r / (p + r));
    }
    return best;
}

// Union-find connected components as an independent labeling oracle.
struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

std::size_t cc_oracle(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w,
                      std::vector<std::uint32_t>& labels) {
    UnionFind uf(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t p = y * w + x;
            if (!mask[p]) continue;
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    long ny = long(y) + dy, nx = long(x) + dx;
                    if (ny < 0 || nx < 0 || ny >= long(h) || nx >= long(w)) continue;
                    std::size_t q = std::size_t(ny) * w + std::size_t(nx);
                    if (mask[q]) uf.unite(p, q);
                }
        }
    labels.assign(h * w, 0);
    std::vector<std::size_t> roots;
    for (std::size_t p = 0; p < h * w; ++p) {
        if (!mask[p]) continue;
        std::size_t r = uf.find(p);
        auto it = std::find(roots.begin(), roots.end(), r);
        if (it == roots.end()) {
            roots.push_back(r);
            it = roots.end() - 1;
        }
        labels[p] = std::uint32_t(it - roots.begin()) + 1;
    }
    return roots.size();
}

// Exhaustive per-threshold AUPRO oracle: one curve point per distinct score,
// trapezoid-integrated with the same clipping convention.
double aupro_oracle(const std::vector<Tensor<double>>& maps,
                    const std::vector<Tensor<double>>& masks, double fpr_limit) {
    struct Px {
        double score;
        std::size_t region;  // 0 = negative pixel
    };
    std::vector<Px> px;
    std::vector<std::size_t> region_size;
    std::size_t neg = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        std::size_t h = masks[m].shape[0], w = masks[m].shape[1];
        std::vector<std::uint8_t> bin(h * w);
        for (std::size_t i = 0; i < h * w; ++i) bin[i] = masks[m].data[i] > 0.5 ? 1 : 0;
        std::vector<std::uint32_t> labels;
        std::size_t base = region_size.size();
        std::size_t n = cc_oracle(bin, h, w, labels);
        region_size.resize(base + n, 0);
        for (std::size_t i = 0; i < h * w; ++i) {
            std::size_t r = labels[i] ? base + labels[i] : 0;
            px.push_back({maps[m].data[i], r});
            if (labels[i]) region_size[base + labels[i] - 1]++;
            else ++neg;
        }
    }
    std::vector<double> thresholds;
    for (const auto& p : px) thresholds.push_back(p.score);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    double prev_fpr = 0, prev_pro = 0, area = 0;
    for (double t : thresholds) {
        std::vector<std::size_t> hits(region_size.size(), 0);
        std::size_t fp = 0;
        for (const auto& p : px) {
            if (p.score < t) continue;
            if (p.region) hits[p.region - 1]++;
            else ++fp;
        }
        double fpr = double(fp) / double(neg);
        double pro = 0;
        for (std::size_t r = 0; r < region_size.size(); ++r)
            pro += double(hits[r]) / double(region_size[r]);
        pro /= double(region_size.size());
        double hi = std::min(fpr, fpr_limit);
        if (hi > prev_fpr) {
            double t2 = (fpr == prev_fpr)
                            ? pro
                            : prev_pro + (pro - prev_pro) * (hi - prev_fpr) / (fpr - prev_fpr);
            area += 0.5 * (prev_pro + t2) * (hi - prev_fpr);
        }
        prev_fpr = fpr;
        prev_pro = pro;
        if (fpr >= fpr_limit) break;
    }
    return area / fpr_limit;
}


}  // namespace oracles
