#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvmcad/aam.hpp"
#include "mvmcad/backbone.hpp"
#include "mvmcad/decoder.hpp"
#include "mvmcad/errors.hpp"
#include "mvmcad/scoring.hpp"

namespace mvmcad {

struct RunConfig {
    // model
    std::size_t image_size = 32;
    std::size_t patch_size = 4;
    std::size_t channels = 3;
    std::size_t embed_dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::vector<std::size_t> group1 = {1, 2};
    std::vector<std::size_t> group2 = {3, 4};
    bool pos_embed = true;
    std::uint64_t backbone_seed = 1;
    // toggles (ablation rows)
    bool sfe_enabled = true;
    bool aam_enabled = true;
    bool cfl_enabled = true;
    // optimizer
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-4;
    double clip_rms = 1.0;
    // train
    std::size_t iterations = 500;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 100;
    // scoring
    double sigma = -1.0;  // < 0: auto (4 * image_size / 392)
    std::string reduction = "top_mean";
    // aam extras
    bool aam_joint_views = false;
    bool aam_residual = false;
    bool aam_bias = false;
    // cfl extras
    bool cfl_detach_targets = false;
    bool cfl_invert_mining = false;
    // data
    std::string data_root;
    std::vector<std::string> categories;
    std::size_t views = 5;

    BackboneConfig backbone_config() const {
        BackboneConfig c;
        c.image_size = image_size;
        c.patch_size = patch_size;
        c.channels = channels;
        c.embed_dim = embed_dim;
        c.depth = depth;
        c.heads = heads;
        c.group1 = group1;
        c.group2 = group2;
        c.pos_embed = pos_embed;
        c.seed = backbone_seed;
        return c;
    }
    aam::AamConfig aam_config() const {
        aam::AamConfig c;
        c.embed_dim = embed_dim;
        c.heads = heads;
        c.bias = aam_bias;
        c.residual = aam_residual;
        c.seed = backbone_seed + 1;
        return c;
    }
    decoder::DecoderConfig decoder_config() const {
        decoder::DecoderConfig c;
        c.embed_dim = embed_dim;
        c.depth = depth;
        c.heads = heads;
        c.seed = backbone_seed + 2;
        return c;
    }
    double effective_sigma() const {
        return sigma >= 0 ? sigma : scoring::default_sigma(image_size);
    }
    void validate() const {
        backbone_config().validate();
        decoder_config().validate();
        scoring::reduction_from_string(reduction);
        if (batch_size == 0) throw ValidationError("batch_size must be positive");
    }
};

namespace config_json {

using nlohmann::ordered_json;

inline void check_keys(const ordered_json& obj, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok) throw ValidationError("unknown config key '" + it.key() + "' in " + where);
    }
}

inline ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["model"] = {{"image_size", c.image_size}, {"patch_size", c.patch_size},
                  {"channels", c.channels},     {"embed_dim", c.embed_dim},
                  {"depth", c.depth},           {"heads", c.heads},
                  {"group_split", ordered_json::array({c.group1, c.group2})},
                  {"pos_embed", c.pos_embed},   {"backbone_seed", c.backbone_seed}};
    j["toggles"] = {{"sfe_enabled", c.sfe_enabled},
                    {"aam_enabled", c.aam_enabled},
                    {"cfl_enabled", c.cfl_enabled}};
    j["optimizer"] = {{"lr", c.lr},
                      {"beta1", c.beta1},
                      {"beta2", c.beta2},
                      {"weight_decay", c.weight_decay},
                      {"clip_rms", c.clip_rms}};
    j["train"] = {{"iterations", c.iterations},
                  {"batch_size", c.batch_size},
                  {"seed", c.seed},
                  {"checkpoint_every", c.checkpoint_every}};
    j["scoring"] = {{"sigma", c.sigma}, {"reduction", c.reduction}};
    j["aam"] = {{"joint_views", c.aam_joint_views},
                {"residual", c.aam_residual},
                {"bias", c.aam_bias}};
    j["cfl"] = {{"detach_targets", c.cfl_detach_targets},
                {"invert_mining", c.cfl_invert_mining}};
    j["data"] = {{"root", c.data_root}, {"categories", c.categories}, {"views", c.views}};
    return j;
}

inline RunConfig from_json(const ordered_json& j) {
    RunConfig c;
    check_keys(j, {"model", "toggles", "optimizer", "train", "scoring", "aam", "cfl", "data"},
               "top level");
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, {"image_size", "patch_size", "channels", "embed_dim", "depth", "heads",
                       "group_split", "pos_embed", "backbone_seed"}, "model");
        if (m.contains("image_size")) c.image_size = m.at("image_size").get<std::size_t>();
        if (m.contains("patch_size")) c.patch_size = m.at("patch_size").get<std::size_t>();
        if (m.contains("channels")) c.channels = m.at("channels").get<std::size_t>();
        if (m.contains("embed_dim")) c.embed_dim = m.at("embed_dim").get<std::size_t>();
        if (m.contains("depth")) c.depth = m.at("depth").get<std::size_t>();
        if (m.contains("heads")) c.heads = m.at("heads").get<std::size_t>();
        if (m.contains("group_split")) {
            auto gs = m.at("group_split");
            if (!gs.is_array() || gs.size() != 2)
                throw ValidationError("group_split must be a pair of index lists");
            c.group1 = gs[0].get<std::vector<std::size_t>>();
            c.group2 = gs[1].get<std::vector<std::size_t>>();
        }
        if (m.contains("pos_embed")) c.pos_embed = m.at("pos_embed").get<bool>();
        if (m.contains("backbone_seed")) c.backbone_seed = m.at("backbone_seed").get<std::uint64_t>();
    }
    if (j.contains("toggles")) {
        const auto& t = j.at("toggles");
        check_keys(t, {"sfe_enabled", "aam_enabled", "cfl_enabled"}, "toggles");
        if (t.contains("sfe_enabled")) c.sfe_enabled = t.at("sfe_enabled").get<bool>();
        if (t.contains("aam_enabled")) c.aam_enabled = t.at("aam_enabled").get<bool>();
        if (t.contains("cfl_enabled")) c.cfl_enabled = t.at("cfl_enabled").get<bool>();
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        check_keys(o, {"lr", "beta1", "beta2", "weight_decay", "clip_rms"}, "optimizer");
        if (o.contains("lr")) c.lr = o.at("lr").get<double>();
        if (o.contains("beta1")) c.beta1 = o.at("beta1").get<double>();
        if (o.contains("beta2")) c.beta2 = o.at("beta2").get<double>();
        if (o.contains("weight_decay")) c.weight_decay = o.at("weight_decay").get<double>();
        if (o.contains("clip_rms")) c.clip_rms = o.at("clip_rms").get<double>();
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"iterations", "batch_size", "seed", "checkpoint_every"}, "train");
        if (t.contains("iterations")) c.iterations = t.at("iterations").get<std::size_t>();
        if (t.contains("batch_size")) c.batch_size = t.at("batch_size").get<std::size_t>();
        if (t.contains("seed")) c.seed = t.at("seed").get<std::uint64_t>();
        if (t.contains("checkpoint_every"))
            c.checkpoint_every = t.at("checkpoint_every").get<std::size_t>();
    }
    if (j.contains("scoring")) {
        const auto& s = j.at("scoring");
        check_keys(s, {"sigma", "reduction"}, "scoring");
        if (s.contains("sigma")) c.sigma = s.at("sigma").get<double>();
        if (s.contains("reduction")) c.reduction = s.at("reduction").get<std::string>();
    }
    if (j.contains("aam")) {
        const auto& a = j.at("aam");
        check_keys(a, {"joint_views", "residual", "bias"}, "aam");
        if (a.contains("joint_views")) c.aam_joint_views = a.at("joint_views").get<bool>();
        if (a.contains("residual")) c.aam_residual = a.at("residual").get<bool>();
        if (a.contains("bias")) c.aam_bias = a.at("bias").get<bool>();
    }
    if (j.contains("cfl")) {
        const auto& f = j.at("cfl");
        check_keys(f, {"detach_targets", "invert_mining"}, "cfl");
        if (f.contains("detach_targets")) c.cfl_detach_targets = f.at("detach_targets").get<bool>();
        if (f.contains("invert_mining")) c.cfl_invert_mining = f.at("invert_mining").get<bool>();
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"root", "categories", "views"}, "data");
        if (d.contains("root")) c.data_root = d.at("root").get<std::string>();
        if (d.contains("categories")) c.categories = d.at("categories").get<std::vector<std::string>>();
        if (d.contains("views")) c.views = d.at("views").get<std::size_t>();
    }
    c.validate();
    return c;
}

}  // namespace config_json

inline std::string config_dump(const RunConfig& c) { return config_json::to_json(c).dump(); }

inline std::uint64_t config_hash(const RunConfig& c) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char ch : config_dump(c)) {
        h ^= static_cast<std::uint8_t>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace mvmcad
