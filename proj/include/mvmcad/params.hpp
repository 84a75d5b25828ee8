#pragma once

#include <map>
#include <string>

#include "mvmcad/autodiff.hpp"
#include "mvmcad/rng.hpp"
#include "mvmcad/tensor.hpp"

namespace mvmcad {

// Named parameter table. Frozen entries never receive gradients or
// optimizer state; they are serialized like everything else.
template <typename Real>
struct ParamStore {
    struct Entry {
        Tensor<Real> value;
        bool frozen = false;
    };
    std::map<std::string, Entry> entries;

    Tensor<Real>& add(const std::string& name, Tensor<Real> value, bool frozen = false) {
        auto [it, inserted] = entries.emplace(name, Entry{std::move(value), frozen});
        if (!inserted) throw ValidationError("duplicate parameter: " + name);
        return it->second.value;
    }

    Entry& at(const std::string& name) {
        auto it = entries.find(name);
        if (it == entries.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw ValidationError("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return entries.count(name) != 0; }
};

// Per-tape view of a ParamStore: lazily creates one leaf Var per parameter
// (trainable unless frozen) so gradients can be read back after backward().
template <typename Real>
struct BoundParams {
    Tape<Real>* tape;
    ParamStore<Real>* store;
    std::map<std::string, Var<Real>> vars;

    BoundParams(Tape<Real>& t, ParamStore<Real>& s) : tape(&t), store(&s) {}

    Var<Real> operator()(const std::string& name) {
        auto it = vars.find(name);
        if (it != vars.end()) return it->second;
        auto& entry = store->at(name);
        auto v = tape->leaf(entry.value, !entry.frozen);
        vars.emplace(name, v);
        return v;
    }
};

template <typename Real>
Tensor<Real> gaussian_tensor(Shape shape, Rng& rng, double stddev) {
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<Real>(rng.normal(0.0, stddev));
    return t;
}

}  // namespace mvmcad
