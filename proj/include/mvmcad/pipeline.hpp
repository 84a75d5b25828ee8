#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mvmcad/aam.hpp"
#include "mvmcad/backbone.hpp"
#include "mvmcad/cfl.hpp"
#include "mvmcad/checkpoint.hpp"
#include "mvmcad/config.hpp"
#include "mvmcad/dataset.hpp"
#include "mvmcad/decoder.hpp"
#include "mvmcad/metrics.hpp"
#include "mvmcad/optim.hpp"
#include "mvmcad/prior_gate.hpp"
#include "mvmcad/scoring.hpp"

namespace mvmcad {
namespace pipeline {

// All model parameters for one run, frozen backbone included.
template <typename Real>
void init_model(ParamStore<Real>& store, const RunConfig& cfg) {
    cfg.validate();
    store.add("prior_gate.gamma", Tensor<Real>::full({cfg.channels}, Real(1)));
    backbone::init_params(store, cfg.backbone_config());
    aam::init_params(store, cfg.aam_config());
    decoder::init_params(store, cfg.decoder_config());
}

template <typename Real>
struct ForwardOut {
    Var<Real> fe1, fe2, f1, f2;
    Var<Real> loss;
    cfl::LossReport<Real> report;
};

// prior gate (if sfe) -> patchify+encode+group -> AAM bottleneck (if aam,
// else identity) -> decoder -> loss.
template <typename Real>
ForwardOut<Real> forward(BoundParams<Real>& bound, const Var<Real>& image_batch,
                         const RunConfig& cfg, bool with_loss = true) {
    auto bcfg = cfg.backbone_config();
    Var<Real> x = image_batch;
    if (cfg.sfe_enabled) x = prior_gate::forward(x, bound("prior_gate.gamma")).x_prior;
    auto tokens = backbone::patchify(bound, x, bcfg);
    auto outs = backbone::encode(bound, tokens, bcfg);
    auto fp = backbone::group_features(outs, bcfg);

    ForwardOut<Real> out;
    out.fe1 = cfg.cfl_detach_targets ? ad::detach(fp.fe1) : fp.fe1;
    out.fe2 = cfg.cfl_detach_targets ? ad::detach(fp.fe2) : fp.fe2;
    Var<Real> f_m = outs.back();
    if (cfg.aam_enabled) f_m = aam::forward(bound, f_m, cfg.aam_config()).out;
    auto dec = decoder::decode(bound, f_m, cfg.decoder_config());
    out.f1 = dec.f1;
    out.f2 = dec.f2;
    if (with_loss) {
        auto [loss, report] =
            cfg.cfl_enabled
                ? cfl::cross_feature_loss(out.fe1, out.fe2, out.f1, out.f2, cfg.cfl_invert_mining)
                : cfl::plain_feature_loss(out.fe1, out.fe2, out.f1, out.f2);
        out.loss = loss;
        out.report = report;
    }
    return out;
}

template <typename Real>
Tensor<Real> batch_images(const std::vector<Tensor<Real>>& images,
                          const std::vector<std::size_t>& indices) {
    const Shape& one = images[indices[0]].shape;  // [C,H,W]
    Tensor<Real> batch({indices.size(), one[0], one[1], one[2]});
    std::size_t stride = numel(one);
    for (std::size_t b = 0; b < indices.size(); ++b)
        std::copy(images[indices[b]].data.begin(), images[indices[b]].data.end(),
                  batch.data.begin() + std::ptrdiff_t(b * stride));
    return batch;
}

template <typename Real>
std::vector<Tensor<Real>> collect_train_images(const dataset::Dataset& data,
                                               const RunConfig& cfg) {
    std::vector<Tensor<Real>> images;
    for (const auto& sample : data.train)
        for (const auto& view : sample.views) {
            if (view.label) throw ValidationError("train view is defective: " + view.image_path);
            if (view.image.height != cfg.image_size || view.image.width != cfg.image_size ||
                view.image.channels != cfg.channels)
                throw ValidationError("train image does not match config dims: " + view.image_path);
            images.push_back(image_to_tensor<Real>(view.image));
        }
    if (images.empty()) throw ValidationError("train split is empty");
    return images;
}

template <typename Real>
double grad_norm(const BoundParams<Real>& bound) {
    double acc = 0;
    for (const auto& [name, var] : bound.vars) {
        if (!var->requires_grad) continue;
        for (Real g : var->grad.data) acc += double(g) * double(g);
    }
    return std::sqrt(acc);
}

// Training loop. Writes one JSON object per step to `log` when given and a
// checkpoint every `checkpoint_every` steps plus one at the end.
template <typename Real>
checkpoint::Checkpoint<Real> train(const RunConfig& cfg, const dataset::Dataset& data,
                                   const std::string& out_dir, std::ostream* log = nullptr) {
    auto images = collect_train_images<Real>(data, cfg);
    checkpoint::Checkpoint<Real> ckpt;
    ckpt.config = cfg;
    ckpt.rng = Rng(cfg.seed);
    init_model(ckpt.params, cfg);

    typename StableAdamW<Real>::Hyper hyper;
    hyper.lr = Real(cfg.lr);
    hyper.beta1 = Real(cfg.beta1);
    hyper.beta2 = Real(cfg.beta2);
    hyper.weight_decay = Real(cfg.weight_decay);
    hyper.clip_rms = Real(cfg.clip_rms);
    StableAdamW<Real> opt(hyper);

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir);
    std::string ckpt_path = (fs::path(out_dir) / "checkpoint.mvmc").string();

    auto snapshot = [&](std::uint64_t iter) {
        ckpt.iteration = iter;
        ckpt.opt_step = opt.step_count();
        ckpt.opt_state = opt.state();
        checkpoint::save(ckpt_path, ckpt);
    };
    snapshot(0);

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        std::vector<std::size_t> idx(cfg.batch_size);
        for (auto& i : idx) i = ckpt.rng.uniform_index(images.size());

        Tape<Real> tape;
        BoundParams<Real> bound(tape, ckpt.params);
        auto batch = tape.leaf(batch_images(images, idx), false);
        auto out = forward(bound, batch, cfg);
        double loss = double(out.loss->value.data[0]);
        if (!std::isfinite(loss)) throw NumericError("non-finite training loss at iteration " +
                                                     std::to_string(it));
        tape.backward(out.loss);
        opt.step(ckpt.params, bound);

        if (log) {
            nlohmann::ordered_json line = {
                {"iter", it},
                {"loss", loss},
                {"h", 0.5 * (double(out.report.threshold_h[0]) +
                             double(out.report.threshold_h[1]))},
                {"grad_norm", grad_norm(bound)},
                {"lr_eff", double(opt.last_lr_eff())}};
            (*log) << line.dump() << "\n";
        }
        if (cfg.checkpoint_every && it % cfg.checkpoint_every == 0) snapshot(it);
    }
    snapshot(cfg.iterations);
    return ckpt;
}

// One test view pushed through the model to an anomaly map and image score.
template <typename Real>
scoring::AnomalyResult score_view(ParamStore<Real>& params, const RunConfig& cfg,
                                  const Tensor<Real>& image) {
    Tape<Real> tape;
    BoundParams<Real> bound(tape, params);
    const Shape& s = image.shape;  // [C,H,W]
    Tensor<Real> batched({1, s[0], s[1], s[2]}, image.data);
    auto out = forward(bound, tape.leaf(batched, false), cfg, false);
    std::size_t grid = cfg.backbone_config().grid();
    auto squeeze = [](const Var<Real>& v) {
        const Shape& sh = v->value.shape;  // [1,N,D]
        return Tensor<Real>({sh[1], sh[2]}, v->value.data);
    };
    return scoring::anomaly_map(squeeze(out.fe1), squeeze(out.fe2), squeeze(out.f1),
                                squeeze(out.f2), grid, grid, cfg.image_size,
                                cfg.effective_sigma(),
                                scoring::reduction_from_string(cfg.reduction));
}

struct MetricReport {
    struct Level {
        double auroc = 0, ap = 0, f1_max = 0;
    };
    Level image, pixel;
    double aupro = 0;
    double sample_auroc = 0;  // secondary: max score over a sample's views
    std::size_t image_positives = 0, image_negatives = 0;
    std::size_t pixel_positives = 0, pixel_negatives = 0;

    nlohmann::ordered_json to_json() const {
        return {{"image", {{"auroc", image.auroc}, {"ap", image.ap}, {"f1_max", image.f1_max}}},
                {"pixel",
                 {{"auroc", pixel.auroc},
                  {"ap", pixel.ap},
                  {"f1_max", pixel.f1_max},
                  {"aupro", aupro}}},
                {"sample", {{"auroc", sample_auroc}}},
                {"counts",
                 {{"image_positives", image_positives},
                  {"image_negatives", image_negatives},
                  {"pixel_positives", pixel_positives},
                  {"pixel_negatives", pixel_negatives}}}};
    }
};

struct ViewResult {
    double score = 0;
    int label = 0;
    std::size_t sample_index = 0;
    Tensor<double> map;   // [H,W]
    Tensor<double> mask;  // [H,W]
};

// Scores every test view; `jobs` > 1 fans out per view with results merged
// in index order, so the report does not depend on scheduling.
template <typename Real>
std::vector<ViewResult> score_test_set(ParamStore<Real>& params, const RunConfig& cfg,
                                       const std::vector<dataset::MultiViewSample>& test,
                                       std::size_t jobs = 1) {
    struct Item {
        const dataset::ViewRecord* view;
        std::size_t sample_index;
    };
    std::vector<Item> items;
    for (std::size_t si = 0; si < test.size(); ++si)
        for (const auto& v : test[si].views) items.push_back({&v, si});
    if (items.empty()) throw ValidationError("test split is empty");

    std::vector<ViewResult> results(items.size());
    auto worker = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const auto& view = *items[i].view;
            if (view.image.height != cfg.image_size || view.image.width != cfg.image_size ||
                view.image.channels != cfg.channels)
                throw ValidationError("test image does not match config dims: " + view.image_path);
            auto res = score_view(params, cfg, image_to_tensor<Real>(view.image));
            results[i].score = res.score;
            results[i].label = view.label;
            results[i].sample_index = items[i].sample_index;
            results[i].map = std::move(res.map);
            results[i].mask = view.mask;
        }
    };
    if (jobs <= 1) {
        worker(0, items.size());
    } else {
        std::size_t n_threads = std::min(jobs, items.size());
        std::vector<std::thread> threads;
        std::size_t chunk = (items.size() + n_threads - 1) / n_threads;
        std::exception_ptr err;
        std::mutex err_mutex;
        for (std::size_t t = 0; t < n_threads; ++t) {
            std::size_t lo = t * chunk, hi = std::min(items.size(), lo + chunk);
            threads.emplace_back([&, lo, hi] {
                try {
                    worker(lo, hi);
                } catch (...) {
                    std::lock_guard<std::mutex> g(err_mutex);
                    if (!err) err = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        if (err) std::rethrow_exception(err);
    }
    return results;
}

inline MetricReport report_from_results(const std::vector<ViewResult>& results) {
    MetricReport rep;
    std::vector<double> image_scores;
    std::vector<int> image_labels;
    std::vector<double> pixel_scores;
    std::vector<int> pixel_labels;
    std::vector<Tensor<double>> maps, masks;
    std::map<std::size_t, std::pair<double, int>> per_sample;
    for (const auto& r : results) {
        image_scores.push_back(r.score);
        image_labels.push_back(r.label);
        auto [it, fresh] = per_sample.try_emplace(r.sample_index,
                                                  std::make_pair(r.score, r.label));
        auto& agg = it->second;
        agg.first = std::max(agg.first, r.score);
        agg.second = agg.second || r.label;
        for (std::size_t i = 0; i < r.map.size(); ++i) {
            pixel_scores.push_back(r.map.data[i]);
            pixel_labels.push_back(r.mask.data[i] > 0.5 ? 1 : 0);
        }
        maps.push_back(r.map);
        masks.push_back(r.mask);
    }
    for (int l : image_labels) (l ? rep.image_positives : rep.image_negatives)++;
    for (int l : pixel_labels) (l ? rep.pixel_positives : rep.pixel_negatives)++;

    rep.image.auroc = metrics::auroc(image_scores, image_labels);
    rep.image.ap = metrics::average_precision(image_scores, image_labels);
    rep.image.f1_max = metrics::f1_max(image_scores, image_labels);
    rep.pixel.auroc = metrics::auroc(pixel_scores, pixel_labels);
    rep.pixel.ap = metrics::average_precision(pixel_scores, pixel_labels);
    rep.pixel.f1_max = metrics::f1_max(pixel_scores, pixel_labels);
    rep.aupro = metrics::aupro(maps, masks);

    std::vector<double> sample_scores;
    std::vector<int> sample_labels;
    for (const auto& [idx, agg] : per_sample) {
        sample_scores.push_back(agg.first);
        sample_labels.push_back(agg.second);
    }
    rep.sample_auroc = metrics::auroc(sample_scores, sample_labels);
    return rep;
}

template <typename Real>
MetricReport evaluate(ParamStore<Real>& params, const RunConfig& cfg,
                      const std::vector<dataset::MultiViewSample>& test, std::size_t jobs = 1) {
    return report_from_results(score_test_set(params, cfg, test, jobs));
}

// Writes the smoothed map as a min-max scaled 16-bit PGM plus a JSON sidecar
// holding the score, config hash, and the scale needed to invert the PGM.
inline void write_heatmap(const std::string& path_base, const scoring::AnomalyResult& res,
                          std::uint64_t cfg_hash) {
    const auto& map = res.map;
    double lo = map.data[0], hi = map.data[0];
    for (double v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double span = hi > lo ? hi - lo : 1.0;
    std::vector<std::uint16_t> pixels(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        pixels[i] = std::uint16_t(std::lround((map.data[i] - lo) / span * 65535.0));
    netpbm::write_pgm16(path_base + ".pgm", pixels, map.shape[0], map.shape[1]);
    nlohmann::ordered_json side = {{"score", res.score},
                                   {"config_hash", cfg_hash},
                                   {"map_min", lo},
                                   {"map_max", hi}};
    std::ofstream os(path_base + ".json");
    if (!os) throw IoError("cannot write sidecar: " + path_base + ".json");
    os << side.dump(2) << "\n";
}

template <typename Real>
scoring::AnomalyResult infer(ParamStore<Real>& params, const RunConfig& cfg,
                             const std::string& image_path, const std::string& out_base) {
    Image img = netpbm::read_image(image_path);
    if (img.height != cfg.image_size || img.width != cfg.image_size ||
        img.channels != cfg.channels)
        throw ValidationError("input image dims do not match config: " + image_path);
    auto res = score_view(params, cfg, image_to_tensor<Real>(img));
    if (!out_base.empty()) write_heatmap(out_base, res, config_hash(cfg));
    return res;
}

// ---- finite-difference verification harness ----

struct GradCheckRow {
    std::string module;
    double max_rel_error = 0;
    bool skipped = false;
    bool passed = false;
};

namespace detail {

inline double rel_err(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Central finite differences on sampled coordinates of one parameter tensor.
template <typename Real, typename LossFn>
double check_param(ParamStore<Real>& store, const std::string& name, const Tensor<Real>& analytic,
                   LossFn loss_fn, Rng& rng, std::size_t max_coords, double step) {
    auto& tensor = store.at(name).value;
    std::size_t n = tensor.size();
    std::vector<std::size_t> coords;
    if (n <= max_coords) {
        coords.resize(n);
        for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
        for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_index(n));
    }
    double worst = 0;
    for (std::size_t i : coords) {
        Real saved = tensor.data[i];
        tensor.data[i] = saved + Real(step);
        double up = loss_fn();
        tensor.data[i] = saved - Real(step);
        double down = loss_fn();
        tensor.data[i] = saved;
        double numeric = (up - down) / (2 * step);
        worst = std::max(worst, rel_err(double(analytic.data[i]), numeric));
    }
    return worst;
}

}  // namespace detail

// Finite-difference audit of every trainable module on a small random
// problem; meant for 64-bit mode (float mode is too noisy at 1e-4).
template <typename Real>
std::vector<GradCheckRow> gradcheck(const RunConfig& run_cfg, double tolerance = 1e-4,
                                    std::size_t max_coords = 12) {
    RunConfig cfg = run_cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.group1 = {1};
    cfg.group2 = {2};
    cfg.validate();

    ParamStore<Real> store;
    init_model(store, cfg);
    Rng rng(cfg.seed + 17);
    // Perturb every trainable tensor off its init. At the raw init the
    // decoder emits near-zero features (zero biases plus layer-norm eps
    // swallowing a tiny input), where the cosine loss is ill-conditioned
    // and finite differences are meaningless; a generic point is not.
    for (auto& [name, entry] : store.entries)
        if (!entry.frozen)
            for (auto& v : entry.value.data) v += Real(rng.uniform(-0.3, 0.3));
    Tensor<Real> probe({2, cfg.channels, cfg.image_size, cfg.image_size});
    for (auto& v : probe.data) v = Real(rng.uniform(0.05, 0.95));

    auto loss_value = [&]() {
        Tape<Real> tape;
        BoundParams<Real> bound(tape, store);
        auto out = forward(bound, tape.leaf(probe, false), cfg);
        return double(out.loss->value.data[0]);
    };
    // analytic gradients for the full composite
    Tape<Real> tape;
    BoundParams<Real> bound(tape, store);
    auto out = forward(bound, tape.leaf(probe, false), cfg);
    tape.backward(out.loss);

    struct ModuleSpec {
        const char* name;
        std::vector<std::string> params;
        bool enabled;
    };
    std::vector<std::string> aam_params, dec_params;
    for (const auto& [name, entry] : store.entries) {
        if (name.rfind("aam.", 0) == 0) aam_params.push_back(name);
        if (name.rfind("decoder.", 0) == 0) dec_params.push_back(name);
    }
    std::vector<ModuleSpec> modules = {
        {"prior-gate", {"prior_gate.gamma"}, cfg.sfe_enabled},
        {"aam", aam_params, cfg.aam_enabled},
        {"decoder", dec_params, true},
        {"cfl", dec_params, true},  // loss path re-audited with a larger step
    };
    std::vector<GradCheckRow> rows;
    for (const auto& mod : modules) {
        GradCheckRow row;
        row.module = mod.name;
        if (!mod.enabled) {
            row.skipped = true;
            row.passed = true;
            rows.push_back(row);
            continue;
        }
        double step = std::string(mod.name) == "cfl" ? 5e-6 : 1e-5;
        for (const auto& pname : mod.params) {
            auto it = bound.vars.find(pname);
            if (it == bound.vars.end()) continue;
            row.max_rel_error = std::max(
                row.max_rel_error, detail::check_param(store, pname, it->second->grad, loss_value,
                                                       rng, max_coords, step));
        }
        row.passed = row.max_rel_error <= tolerance;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace pipeline
}  // namespace mvmcad
