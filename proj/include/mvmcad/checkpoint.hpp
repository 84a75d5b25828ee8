#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mvmcad/config.hpp"
#include "mvmcad/optim.hpp"
#include "mvmcad/params.hpp"
#include "mvmcad/rng.hpp"
#include "mvmcad/tensor_io.hpp"

namespace mvmcad {

// Checkpoint: magic "MVMC", version, config JSON, iteration, RNG state,
// named parameter table, optimizer state. std::map ordering keeps the byte
// stream deterministic; save -> load -> save is bitwise stable.
namespace checkpoint {

inline constexpr char kMagic[4] = {'M', 'V', 'M', 'C'};
inline constexpr std::uint32_t kVersion = 1;

template <typename Real>
struct Checkpoint {
    RunConfig config;
    std::uint64_t iteration = 0;
    Rng rng;
    ParamStore<Real> params;
    std::uint64_t opt_step = 0;
    std::map<std::string, typename StableAdamW<Real>::State> opt_state;
};

namespace detail {

inline void write_string(std::ostream& os, const std::string& s) {
    mvtn::detail::write_le<std::uint64_t>(os, s.size());
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_string(std::istream& is) {
    auto n = mvtn::detail::read_le<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), std::streamsize(n));
    if (!is) throw IoError("truncated checkpoint string");
    return s;
}

}  // namespace detail

template <typename Real>
void write(std::ostream& os, const Checkpoint<Real>& ckpt) {
    os.write(kMagic, 4);
    mvtn::detail::write_le<std::uint32_t>(os, kVersion);
    detail::write_string(os, config_dump(ckpt.config));
    mvtn::detail::write_le<std::uint64_t>(os, ckpt.iteration);
    detail::write_string(os, ckpt.rng.serialize());
    mvtn::detail::write_le<std::uint64_t>(os, ckpt.params.entries.size());
    for (const auto& [name, entry] : ckpt.params.entries) {
        detail::write_string(os, name);
        mvtn::detail::write_le<std::uint8_t>(os, entry.frozen ? 1 : 0);
        mvtn::write(os, entry.value);
    }
    mvtn::detail::write_le<std::uint64_t>(os, ckpt.opt_step);
    mvtn::detail::write_le<std::uint64_t>(os, ckpt.opt_state.size());
    for (const auto& [name, st] : ckpt.opt_state) {
        detail::write_string(os, name);
        mvtn::write(os, st.m);
        mvtn::write(os, st.v);
        mvtn::write(os, st.v_max);
    }
    if (!os) throw IoError("failed writing checkpoint stream");
}

template <typename Real>
Checkpoint<Real> read(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad checkpoint magic");
    auto version = mvtn::detail::read_le<std::uint32_t>(is);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint<Real> ckpt;
    ckpt.config = config_json::from_json(
        config_json::ordered_json::parse(detail::read_string(is)));
    ckpt.iteration = mvtn::detail::read_le<std::uint64_t>(is);
    ckpt.rng = Rng::deserialize(detail::read_string(is));
    auto n_params = mvtn::detail::read_le<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n_params; ++i) {
        std::string name = detail::read_string(is);
        bool frozen = mvtn::detail::read_le<std::uint8_t>(is) != 0;
        ckpt.params.add(name, mvtn::read<Real>(is), frozen);
    }
    ckpt.opt_step = mvtn::detail::read_le<std::uint64_t>(is);
    auto n_state = mvtn::detail::read_le<std::uint64_t>(is);
    for (std::uint64_t i = 0; i < n_state; ++i) {
        std::string name = detail::read_string(is);
        typename StableAdamW<Real>::State st;
        st.m = mvtn::read<Real>(is);
        st.v = mvtn::read<Real>(is);
        st.v_max = mvtn::read<Real>(is);
        ckpt.opt_state.emplace(std::move(name), std::move(st));
    }
    return ckpt;
}

template <typename Real>
void save(const std::string& path, const Checkpoint<Real>& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write(os, ckpt);
}

template <typename Real>
Checkpoint<Real> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return read<Real>(is);
}

}  // namespace checkpoint
}  // namespace mvmcad
