#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvmcad/image.hpp"
#include "mvmcad/rng.hpp"
#include "mvmcad/tensor.hpp"

namespace mvmcad {

// Synthetic multi-view benchmark and its loader. Each sample is one latent
// object rendered under V per-view affine transforms; the defective test
// split injects blobs, scratches, or edge chips with exact masks.
namespace dataset {

namespace fs = std::filesystem;

struct SynthSpec {
    std::vector<std::string> categories = {"rings", "bars"};
    std::size_t train_samples = 50;
    std::size_t test_ok = 20;
    std::size_t test_ng = 20;
    std::size_t views = 5;
    std::size_t image_size = 32;
    std::uint64_t seed = 0;
};

struct ViewRecord {
    std::string image_path;
    Image image;                 // 8-bit pixels as stored on disk
    Tensor<double> mask;         // [H,W] in {0,1}; empty shape for train views
    int label = 0;               // 1 iff the mask has any positive pixel
};

struct MultiViewSample {
    std::string category;
    std::string sample_id;
    std::vector<ViewRecord> views;
};

struct Dataset {
    std::vector<MultiViewSample> train;
    std::vector<MultiViewSample> test;
};

// Latent object shared by all views of one sample.
struct Latent {
    int family = 0;           // 0: concentric rings on a disk, 1: striped bar
    double cx = 0, cy = 0;    // object center offset from image center, px
    double radius = 0;        // base half-extent, px
    double base = 0;          // body brightness
    double contrast = 0;      // texture amplitude
    double period = 0;        // texture wavelength, px
    double phase = 0;
    double angle0 = 0;
    double tint[3] = {1, 1, 1};
};

struct ViewTransform {
    double angle = 0;
    double scale = 1;
    double dx = 0, dy = 0;
};

inline Latent sample_latent(int family, Rng& rng, std::size_t size) {
    Latent l;
    l.family = family;
    double s = double(size);
    l.cx = rng.uniform(-0.06, 0.06) * s;
    l.cy = rng.uniform(-0.06, 0.06) * s;
    l.radius = rng.uniform(0.32, 0.38) * s;
    l.base = rng.uniform(0.50, 0.60);
    l.contrast = rng.uniform(0.09, 0.11);
    l.period = rng.uniform(0.20, 0.26) * s;
    l.phase = rng.uniform(0, 6.283185307179586);
    l.angle0 = rng.uniform(0, 6.283185307179586);
    for (double& t : l.tint) t = rng.uniform(0.95, 1.0);
    return l;
}

inline ViewTransform view_transform(std::size_t view, Rng& rng) {
    ViewTransform t;
    // views step around the object with mild per-view jitter
    t.angle = double(view) * 0.35 + rng.uniform(-0.05, 0.05);
    t.scale = 0.9 + 0.05 * double(view % 3) + rng.uniform(-0.02, 0.02);
    t.dx = rng.uniform(-0.03, 0.03);
    t.dy = rng.uniform(-0.03, 0.03);
    return t;
}

// Object-frame intensity; returns false outside the object.
inline bool object_intensity(const Latent& l, double u, double v, double& out) {
    if (l.family == 0) {
        double r = std::sqrt(u * u + v * v);
        if (r > l.radius) return false;
        out = l.base + l.contrast * std::sin(6.283185307179586 * r / l.period + l.phase);
    } else {
        if (std::abs(u) > l.radius * 1.15 || std::abs(v) > l.radius * 0.55) return false;
        out = l.base + l.contrast * std::sin(6.283185307179586 * u / l.period + l.phase);
    }
    return true;
}

// Maps an image pixel center to object coordinates under the view transform.
inline void to_object_frame(const Latent& l, const ViewTransform& t, std::size_t size,
                            double x, double y, double& u, double& v) {
    double half = 0.5 * double(size);
    double px = x - half - l.cx - t.dx * double(size);
    double py = y - half - l.cy - t.dy * double(size);
    double c = std::cos(l.angle0 + t.angle), s = std::sin(l.angle0 + t.angle);
    u = (c * px + s * py) / t.scale;
    v = (-s * px + c * py) / t.scale;
}

inline Image render_view(const Latent& l, const ViewTransform& t, std::size_t size, Rng& rng) {
    Image img;
    img.height = img.width = size;
    img.channels = 3;
    img.pixels.resize(size * size * 3);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            // 2x2 supersampling; anti-aliased object boundaries keep the
            // per-view appearance of edge pixels predictable
            double bg = 0.12 + rng.uniform(-0.01, 0.01);
            double val[3] = {0, 0, 0};
            for (double sy : {0.25, 0.75})
                for (double sx : {0.25, 0.75}) {
                    double u, v, body;
                    to_object_frame(l, t, size, double(x) + sx, double(y) + sy, u, v);
                    if (object_intensity(l, u, v, body))
                        for (int c = 0; c < 3; ++c) val[c] += 0.25 * body * l.tint[c];
                    else
                        for (int c = 0; c < 3; ++c) val[c] += 0.25 * bg;
                }
            for (int c = 0; c < 3; ++c) {
                double q = std::clamp(val[c] + rng.uniform(-0.01, 0.01), 0.0, 1.0);
                img.at(y, x, std::size_t(c)) = std::uint8_t(std::lround(q * 255.0));
            }
        }
    return img;
}

// --- defect primitives; each paints the image and sets the exact mask ---

struct EllipseSpec {
    double cx = 0, cy = 0;  // pixel-center coordinates
    double a = 1, b = 1;    // semi-axes in pixels
};

// Pixel (x,y) belongs to the ellipse iff its center satisfies the implicit
// inequality; this exact predicate doubles as the test oracle.
inline bool in_ellipse(const EllipseSpec& e, std::size_t x, std::size_t y) {
    double dx = (double(x) + 0.5 - e.cx) / e.a;
    double dy = (double(y) + 0.5 - e.cy) / e.b;
    return dx * dx + dy * dy <= 1.0;
}

inline void inject_blob(Image& img, Tensor<double>& mask, const EllipseSpec& e, double value) {
    std::uint8_t byte = std::uint8_t(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            if (in_ellipse(e, x, y)) {
                for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = byte;
                mask.at({y, x}) = 1.0;
            }
}

// Polyline scratch: pixels within `thickness` of any segment.
inline void inject_scratch(Image& img, Tensor<double>& mask,
                           const std::vector<std::pair<double, double>>& points,
                           double thickness, double value) {
    std::uint8_t byte = std::uint8_t(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
    auto seg_dist = [](double px, double py, double ax, double ay, double bx, double by) {
        double vx = bx - ax, vy = by - ay;
        double len2 = vx * vx + vy * vy;
        double t = len2 > 0 ? std::clamp(((px - ax) * vx + (py - ay) * vy) / len2, 0.0, 1.0) : 0.0;
        double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
        return std::sqrt(dx * dx + dy * dy);
    };
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            double px = double(x) + 0.5, py = double(y) + 0.5;
            bool hit = false;
            for (std::size_t i = 0; i + 1 < points.size() && !hit; ++i)
                hit = seg_dist(px, py, points[i].first, points[i].second, points[i + 1].first,
                               points[i + 1].second) <= thickness;
            if (hit) {
                for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = byte;
                mask.at({y, x}) = 1.0;
            }
        }
}

// Edge chip: a disk centered on the object boundary overwrites object pixels
// with the defect value; only pixels that were part of the object are marked.
inline void inject_edge_chip(Image& img, Tensor<double>& mask, const Latent& l,
                             const ViewTransform& t, const EllipseSpec& e, double value) {
    std::uint8_t byte = std::uint8_t(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            if (!in_ellipse(e, x, y)) continue;
            double u, v, body;
            to_object_frame(l, t, img.height, double(x) + 0.5, double(y) + 0.5, u, v);
            if (!object_intensity(l, u, v, body)) continue;
            for (std::size_t c = 0; c < img.channels; ++c) img.at(y, x, c) = byte;
            mask.at({y, x}) = 1.0;
        }
}

// A point on the object boundary in image coordinates, at object angle phi.
inline void boundary_point(const Latent& l, const ViewTransform& t, std::size_t size, double phi,
                           double& x, double& y) {
    double u, v;
    if (l.family == 0) {
        u = l.radius * std::cos(phi);
        v = l.radius * std::sin(phi);
    } else {
        u = l.radius * 1.15 * std::cos(phi);
        v = l.radius * 0.55 * std::sin(phi);
    }
    double c = std::cos(l.angle0 + t.angle), s = std::sin(l.angle0 + t.angle);
    double px = (c * u - s * v) * t.scale;
    double py = (s * u + c * v) * t.scale;
    x = px + 0.5 * double(size) + l.cx + t.dx * double(size);
    y = py + 0.5 * double(size) + l.cy + t.dy * double(size);
}

// Applies one randomly chosen defect; the defect value contrasts with the
// object body so reconstruction-based scoring has signal.
inline void inject_defect(Image& img, Tensor<double>& mask, const Latent& l,
                          const ViewTransform& t, Rng& rng) {
    std::size_t size = img.height;
    double s = double(size);
    int kind = int(rng.uniform_index(3));
    double dark = 0.01 + rng.uniform(0, 0.03);
    double bright = 0.92 + rng.uniform(0, 0.07);
    double value = rng.uniform() < 0.35 ? dark : bright;
    // defect anchored inside the object
    double ox = 0.5 * s + l.cx + t.dx * s + rng.uniform(-0.4, 0.4) * l.radius * t.scale;
    double oy = 0.5 * s + l.cy + t.dy * s + rng.uniform(-0.4, 0.4) * l.radius * t.scale;
    if (kind == 0) {
        EllipseSpec e;
        e.cx = ox;
        e.cy = oy;
        e.a = rng.uniform(0.11, 0.17) * s;
        e.b = rng.uniform(0.11, 0.17) * s;
        inject_blob(img, mask, e, value);
    } else if (kind == 1) {
        double angle = rng.uniform(0, 6.283185307179586);
        double len = rng.uniform(0.45, 0.7) * s;
        double kink = rng.uniform(-0.3, 0.3);
        std::vector<std::pair<double, double>> pts = {
            {ox - 0.5 * len * std::cos(angle), oy - 0.5 * len * std::sin(angle)},
            {ox, oy},
            {ox + 0.5 * len * std::cos(angle + kink), oy + 0.5 * len * std::sin(angle + kink)}};
        inject_scratch(img, mask, pts, rng.uniform(1.6, 2.4), value);
    } else {
        double bx, by;
        boundary_point(l, t, size, rng.uniform(0, 6.283185307179586), bx, by);
        EllipseSpec e;
        e.cx = bx;
        e.cy = by;
        e.a = e.b = rng.uniform(0.12, 0.18) * s;
        inject_edge_chip(img, mask, l, t, e, value);
        // a chip can land fully outside the raster; fall back to a blob
        bool any = false;
        for (double m : mask.data) any = any || m > 0;
        if (!any) {
            e.cx = ox;
            e.cy = oy;
            inject_blob(img, mask, e, value);
        }
    }
}

inline void write_mask(const std::string& path, const Tensor<double>& mask) {
    Image m;
    m.height = mask.shape[0];
    m.width = mask.shape[1];
    m.channels = 1;
    m.pixels.resize(m.height * m.width);
    for (std::size_t i = 0; i < mask.size(); ++i) m.pixels[i] = mask.data[i] > 0.5 ? 255 : 0;
    netpbm::write_image(path, m);
}

inline std::string sample_name(std::size_t idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", idx);
    return buf;
}

// Writes the on-disk benchmark:
//   <root>/<category>/train/ok/<sample>_<view>.ppm
//   <root>/<category>/test/<ok|ng>/<sample>_<view>.ppm
//   <root>/<category>/ground_truth/<sample>_<view>_mask.pgm   (ng views only)
inline void synth_dataset(const SynthSpec& spec, const std::string& root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create dataset root: " + root);
    Rng base(spec.seed);
    for (std::size_t ci = 0; ci < spec.categories.size(); ++ci) {
        const std::string& cat = spec.categories[ci];
        fs::path cdir = fs::path(root) / cat;
        for (const char* sub : {"train/ok", "test/ok", "test/ng", "ground_truth"}) {
            fs::create_directories(cdir / sub, ec);
            if (ec) throw IoError("cannot create directory: " + (cdir / sub).string());
        }
        Rng cat_rng = base.fork(ci + 1);
        int family = int(ci % 2);
        std::size_t total = spec.train_samples + spec.test_ok + spec.test_ng;
        for (std::size_t si = 0; si < total; ++si) {
            Rng sample_rng = cat_rng.fork(si + 1);
            Latent latent = sample_latent(family, sample_rng, spec.image_size);
            bool is_train = si < spec.train_samples;
            bool is_ng = si >= spec.train_samples + spec.test_ok;
            // defective views: each with probability 0.6, at least one
            std::vector<bool> defective(spec.views, false);
            if (is_ng) {
                bool any = false;
                for (std::size_t v = 0; v < spec.views; ++v) {
                    defective[v] = sample_rng.uniform() < 0.6;
                    any = any || defective[v];
                }
                if (!any) defective[sample_rng.uniform_index(spec.views)] = true;
            }
            fs::path split_dir = cdir / (is_train ? "train/ok" : (is_ng ? "test/ng" : "test/ok"));
            for (std::size_t v = 0; v < spec.views; ++v) {
                Rng view_rng = sample_rng.fork(v + 1);
                ViewTransform t = view_transform(v, view_rng);
                Image img = render_view(latent, t, spec.image_size, view_rng);
                Tensor<double> mask({spec.image_size, spec.image_size});
                if (is_ng && defective[v]) inject_defect(img, mask, latent, t, view_rng);
                std::string stem = sample_name(si) + "_" + std::to_string(v);
                netpbm::write_image((split_dir / (stem + ".ppm")).string(), img);
                if (is_ng)
                    write_mask((cdir / "ground_truth" / (stem + "_mask.pgm")).string(), mask);
            }
        }
    }
}

namespace detail {

inline void split_stem(const std::string& stem, const std::string& path, std::string& sample,
                       std::string& view) {
    auto pos = stem.rfind('_');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= stem.size())
        throw ValidationError("image name is not <sample>_<view>: " + path);
    sample = stem.substr(0, pos);
    view = stem.substr(pos + 1);
}

inline void load_split(const fs::path& cdir, const std::string& category, bool test,
                       std::vector<MultiViewSample>& out) {
    std::map<std::string, MultiViewSample> by_sample;
    for (const char* sub : {"ok", "ng"}) {
        fs::path dir = cdir / (test ? "test" : "train") / sub;
        if (!fs::exists(dir)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            auto ext = entry.path().extension().string();
            if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        bool ng = std::string(sub) == "ng";
        for (const auto& file : files) {
            std::string sample, view;
            split_stem(file.stem().string(), file.string(), sample, view);
            ViewRecord rec;
            rec.image_path = file.string();
            rec.image = netpbm::read_image(file.string());
            if (rec.image.height == 0 || rec.image.width == 0)
                throw ValidationError("empty image: " + file.string());
            if (ng) {
                fs::path mask_path = cdir / "ground_truth" / (sample + "_" + view + "_mask.pgm");
                if (!fs::exists(mask_path))
                    throw ValidationError("dataset integrity: ng view " + file.string() +
                                          " has no mask at " + mask_path.string());
                Image m = netpbm::read_image(mask_path.string());
                if (m.channels != 1 || m.height != rec.image.height || m.width != rec.image.width)
                    throw ValidationError("mask size mismatch for " + mask_path.string());
                rec.mask = Tensor<double>({m.height, m.width});
                for (std::size_t i = 0; i < m.pixels.size(); ++i)
                    rec.mask.data[i] = m.pixels[i] > 127 ? 1.0 : 0.0;
                for (double px : rec.mask.data)
                    if (px > 0) rec.label = 1;
            } else {
                rec.mask = Tensor<double>({rec.image.height, rec.image.width});
            }
            auto& ms = by_sample[sample];
            ms.category = category;
            ms.sample_id = sample;
            ms.views.push_back(std::move(rec));
        }
    }
    for (auto& [id, ms] : by_sample) out.push_back(std::move(ms));
}

}  // namespace detail

// Loads <root>/<category>/{train,test}, grouped by sample in lexicographic
// category then sample order.
inline Dataset load_dataset(const std::string& root) {
    if (!fs::exists(root)) throw IoError("dataset root does not exist: " + root);
    std::vector<std::string> categories;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) categories.push_back(entry.path().filename().string());
    std::sort(categories.begin(), categories.end());
    if (categories.empty()) throw ValidationError("dataset root has no categories: " + root);
    Dataset ds;
    for (const auto& cat : categories) {
        detail::load_split(fs::path(root) / cat, cat, false, ds.train);
        detail::load_split(fs::path(root) / cat, cat, true, ds.test);
    }
    for (const auto& s : ds.train)
        for (const auto& v : s.views)
            if (v.label) throw ValidationError("train split contains a defective view: " + v.image_path);
    return ds;
}

}  // namespace dataset
}  // namespace mvmcad
