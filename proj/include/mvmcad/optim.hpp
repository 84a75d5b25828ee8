#pragma once

#include <cmath>
#include <map>
#include <string>

#include "mvmcad/params.hpp"

namespace mvmcad {

// StableAdamW with AMSGrad: Adam moments with bias correction, a running
// max of the corrected second moment, per-tensor RMS clipping of the raw
// update, and decoupled weight decay. Frozen tensors are skipped entirely.
template <typename Real>
class StableAdamW {
public:
    struct Hyper {
        Real lr = Real(2e-3);
        Real beta1 = Real(0.9);
        Real beta2 = Real(0.999);
        Real weight_decay = Real(1e-4);
        Real clip_rms = Real(1.0);
        Real eps = Real(1e-8);
    };

    struct State {
        Tensor<Real> m, v, v_max;
    };

    explicit StableAdamW(Hyper hyper = {}) : hyper_(hyper) {}

    const Hyper& hyper() const { return hyper_; }
    std::uint64_t step_count() const { return step_; }
    std::map<std::string, State>& state() { return state_; }
    Real last_lr_eff() const { return last_lr_eff_; }

    // Applies one update using grads accumulated in `bound` vars.
    void step(ParamStore<Real>& store, BoundParams<Real>& bound) {
        ++step_;
        double bc1 = 1.0 - std::pow(double(hyper_.beta1), double(step_));
        double bc2 = 1.0 - std::pow(double(hyper_.beta2), double(step_));
        Real max_lr_eff = Real(0);
        for (auto& [name, entry] : store.entries) {
            if (entry.frozen) continue;
            auto it = bound.vars.find(name);
            if (it == bound.vars.end()) continue;  // parameter unused this step
            const Tensor<Real>& grad = it->second->grad;
            if (!grad.all_finite()) throw NumericError("NaN/Inf gradient in tensor " + name);
            auto& st = state_[name];
            if (st.m.size() == 0) {
                st.m = Tensor<Real>(entry.value.shape);
                st.v = Tensor<Real>(entry.value.shape);
                st.v_max = Tensor<Real>(entry.value.shape);
            }
            double rms_acc = 0;
            std::vector<Real> update(entry.value.size());
            for (std::size_t i = 0; i < entry.value.size(); ++i) {
                double g = double(grad.data[i]);
                double m = double(hyper_.beta1) * double(st.m.data[i]) +
                           (1.0 - double(hyper_.beta1)) * g;
                double v = double(hyper_.beta2) * double(st.v.data[i]) +
                           (1.0 - double(hyper_.beta2)) * g * g;
                st.m.data[i] = Real(m);
                st.v.data[i] = Real(v);
                double v_hat = v / bc2;
                double v_max = std::max(double(st.v_max.data[i]), v_hat);
                st.v_max.data[i] = Real(v_max);
                double u = (m / bc1) / (std::sqrt(v_max) + double(hyper_.eps));
                update[i] = Real(u);
                rms_acc += u * u;
            }
            double rms = std::sqrt(rms_acc / double(entry.value.size()));
            double lr_eff =
                double(hyper_.lr) / std::max(1.0, rms / double(hyper_.clip_rms));
            max_lr_eff = std::max(max_lr_eff, Real(lr_eff));
            for (std::size_t i = 0; i < entry.value.size(); ++i) {
                double p = double(entry.value.data[i]);
                p *= 1.0 - lr_eff * double(hyper_.weight_decay);
                p -= lr_eff * double(update[i]);
                entry.value.data[i] = Real(p);
            }
        }
        last_lr_eff_ = max_lr_eff;
    }

private:
    Hyper hyper_;
    std::map<std::string, State> state_;
    std::uint64_t step_ = 0;
    Real last_lr_eff_ = Real(0);
};

}  // namespace mvmcad
