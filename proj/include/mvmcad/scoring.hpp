#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mvmcad/image.hpp"
#include "mvmcad/tensor.hpp"

namespace mvmcad {
namespace scoring {

inline constexpr double kCosEps = 1e-6;

enum class Reduction { TopMean, Max, Mean };

inline Reduction reduction_from_string(const std::string& s) {
    if (s == "top_mean") return Reduction::TopMean;
    if (s == "max") return Reduction::Max;
    if (s == "mean") return Reduction::Mean;
    throw ValidationError("unknown score reduction: " + s);
}

inline std::string reduction_to_string(Reduction r) {
    switch (r) {
        case Reduction::TopMean: return "top_mean";
        case Reduction::Max: return "max";
        default: return "mean";
    }
}

struct AnomalyResult {
    Tensor<double> map;  // [out,out] smoothed anomaly scores
    double score = 0;
    std::size_t grid_rows = 0, grid_cols = 0;
};

// Raw per-token cosine distance over the feature axis of [N,D] tensors.
template <typename Real>
std::vector<double> token_cosine_distance(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape != b.shape || a.rank() != 2)
        throw ValidationError("token_cosine_distance expects matching [N,D] tensors");
    std::size_t n = a.shape[0], d = a.shape[1];
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t j = 0; j < d; ++j) {
            double av = a.data[i * d + j], bv = b.data[i * d + j];
            dot += av * bv;
            na += av * av;
            nb += bv * bv;
        }
        double denom = std::max(std::sqrt(na) * std::sqrt(nb), kCosEps);
        out[i] = 1.0 - dot / denom;
    }
    return out;
}

inline double reduce_score(const Tensor<double>& map, Reduction reduction) {
    switch (reduction) {
        case Reduction::Max:
            return *std::max_element(map.data.begin(), map.data.end());
        case Reduction::Mean: {
            double s = 0;
            for (double v : map.data) s += v;
            return s / double(map.size());
        }
        case Reduction::TopMean:
        default: {
            // mean of the top 1% pixels (at least one)
            std::size_t k = std::max<std::size_t>(
                1, std::size_t(std::ceil(0.01 * double(map.size()))));
            std::vector<double> vals = map.data;
            std::nth_element(vals.begin(), vals.begin() + std::ptrdiff_t(k - 1), vals.end(),
                             std::greater<double>());
            double s = 0;
            for (std::size_t i = 0; i < k; ++i) s += vals[i];
            return s / double(k);
        }
    }
}

// Per-token map: mean of the two cross-pair cosine distances, reshaped to
// the token grid, upsampled, blurred, then reduced to the image score S.
template <typename Real>
AnomalyResult anomaly_map(const Tensor<Real>& fe1, const Tensor<Real>& fe2,
                          const Tensor<Real>& f1, const Tensor<Real>& f2,
                          std::size_t grid_rows, std::size_t grid_cols, std::size_t out_size,
                          double sigma, Reduction reduction = Reduction::TopMean) {
    auto s1 = token_cosine_distance(fe1, f2);
    auto s2 = token_cosine_distance(fe2, f1);
    if (s1.size() != grid_rows * grid_cols)
        throw ValidationError("anomaly_map: token count does not match grid");
    if (out_size < grid_rows || out_size < grid_cols)
        throw ValidationError("anomaly_map: out_size must be >= grid");
    Tensor<double> token_map({grid_rows, grid_cols});
    for (std::size_t i = 0; i < s1.size(); ++i) token_map.data[i] = 0.5 * (s1[i] + s2[i]);
    auto up = bilinear_upsample(token_map, out_size, out_size);
    auto smooth = gaussian_blur(up, sigma);
    if (!smooth.all_finite()) throw NumericError("anomaly_map produced non-finite values");
    AnomalyResult res;
    res.map = std::move(smooth);
    res.grid_rows = grid_rows;
    res.grid_cols = grid_cols;
    res.score = reduce_score(res.map, reduction);
    return res;
}

// Default smoothing: 4.0 at the 392-px reference resolution, scaled.
inline double default_sigma(std::size_t out_size) {
    return 4.0 * double(out_size) / 392.0;
}

}  // namespace scoring
}  // namespace mvmcad
