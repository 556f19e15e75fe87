#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tclp/error.hpp"
#include "tclp/tensor.hpp"

namespace tclp {

// Linear warmup to max_lr, then cosine decay to floor_lr.
struct CosineSchedule {
    double max_lr = 3e-4;
    double floor_lr = 0.0;
    int64_t total_steps = 1;
    int64_t warmup_steps = 0;

    void validate() const {
        if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
        if (warmup_steps < 0 || warmup_steps > total_steps)
            throw ConfigError("schedule: warmup_steps outside [0, total_steps]");
        if (max_lr < 0 || floor_lr < 0 || floor_lr > max_lr)
            throw ConfigError("schedule: need 0 <= floor_lr <= max_lr");
    }

    double lr_at(int64_t step) const {
        if (step >= total_steps) return floor_lr;
        if (step < warmup_steps) return max_lr * double(step) / double(warmup_steps);
        double span = double(total_steps - warmup_steps);
        double progress = double(step - warmup_steps) / span;
        return floor_lr + 0.5 * (max_lr - floor_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
    }
};

// AdamW with bias correction and decoupled weight decay:
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
template <typename T>
class AdamWT {
public:
    AdamWT(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    // One update over a named parameter group. Gradients are consumed
    // (zeroed) after the update.
    void step(const std::vector<std::pair<std::string, TensorT<T>*>>& params, double lr) {
        if (lr < 0) throw ConfigError("adamw: negative learning rate");
        ++step_;
        double bc1 = 1.0 - std::pow(beta1_, double(step_));
        double bc2 = 1.0 - std::pow(beta2_, double(step_));
        for (const auto& [name, tensor] : params) {
            if (tensor->grad.size() != tensor->data.size())
                throw ConfigError("adamw: parameter " + name + " has no gradient");
            auto& slot = slots_[name];
            if (slot.m.size() != tensor->data.size()) {
                slot.m.assign(tensor->data.size(), T(0));
                slot.v.assign(tensor->data.size(), T(0));
            }
            T* th = tensor->data.data();
            T* g = tensor->grad.data();
            T* m = slot.m.data();
            T* v = slot.v.data();
            size_t n = tensor->data.size();
            for (size_t i = 0; i < n; ++i) {
                if (!std::isfinite(double(g[i])))
                    throw NumericError("adamw: non-finite gradient in parameter " + name);
                m[i] = T(beta1_) * m[i] + T(1.0 - beta1_) * g[i];
                v[i] = T(beta2_) * v[i] + T(1.0 - beta2_) * g[i] * g[i];
                double mhat = double(m[i]) / bc1;
                double vhat = double(v[i]) / bc2;
                double upd = lr * mhat / (std::sqrt(vhat) + eps_) + lr * weight_decay_ * double(th[i]);
                th[i] -= T(upd);
            }
            std::fill(g, g + n, T(0));
        }
    }

    int64_t step_count() const { return step_; }
    double weight_decay() const { return weight_decay_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t step_ = 0;
    std::map<std::string, Slot> slots_;
};

using AdamW = AdamWT<float>;

}  // namespace tclp
