#pragma once

#include <string>
#include <vector>

#include "rtfseg/nn_ops.hpp"

namespace rtfseg {

// Learning-rate groups: one per architectural region, per the training recipe.
enum class LrGroup : int { backbone = 0, fusion = 1, decoder = 2 };

// Ordered name -> tensor table for everything the optimizer, EMA, and
// checkpoint code needs. `stage` is the backbone stage (1..4, stem counts as
// stage 1) driving layer-wise LR decay; 0 for non-backbone parameters.
template <typename S>
struct ParamRegistry {
    struct Entry {
        std::string name;
        Var<S> var;
        bool decay;  // true only for conv/FC weights
        LrGroup group;
        int stage;
    };

    std::vector<Entry> entries;
    std::vector<std::pair<std::string, Tensor4<S>*>> buffers;  // BN running stats

    void add(const std::string& name, const Var<S>& v, bool decay, LrGroup group, int stage = 0) {
        if (!v) throw ConfigError("registering missing parameter " + name);
        for (const auto& e : entries)
            if (e.name == name) throw ConfigError("duplicate parameter name " + name);
        entries.push_back({name, v, decay, group, stage});
    }

    void add_buffer(const std::string& name, Tensor4<S>* t) {
        for (const auto& b : buffers)
            if (b.first == name) throw ConfigError("duplicate buffer name " + name);
        buffers.emplace_back(name, t);
    }

    void add_conv(const std::string& name, Conv2d<S>& conv, LrGroup group, int stage = 0) {
        add(name + ".weight", conv.weight, true, group, stage);
        if (conv.bias) add(name + ".bias", conv.bias, false, group, stage);
    }

    void add_bn(const std::string& name, BatchNorm<S>& bn, LrGroup group, int stage = 0) {
        add(name + ".gamma", bn.gamma, false, group, stage);
        add(name + ".beta", bn.beta, false, group, stage);
        add_buffer(name + ".running_mean", &bn.running_mean);
        add_buffer(name + ".running_var", &bn.running_var);
    }

    Eigen::Index param_count() const {
        Eigen::Index total = 0;
        for (const auto& e : entries) total += e.var->value.size();
        return total;
    }
};

}  // namespace rtfseg
