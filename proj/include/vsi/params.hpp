#pragma once

#include <map>
#include <string>

#include "vsi/error.hpp"
#include "vsi/tensor.hpp"

namespace vsi {

// Named learnable tensors. std::map keeps iteration order deterministic
// (sorted by name), which init, optimizer updates and checkpointing rely on.
struct Params {
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw Error("unknown parameter '" + name + "'");
        return it->second;
    }

    bool has(const std::string& name) const { return tensors.count(name) > 0; }

    void add(const std::string& name, Tensor t) {
        if (!tensors.emplace(name, std::move(t)).second)
            throw Error("duplicate parameter '" + name + "'");
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += t.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& [_, t] : tensors)
            if (!t.all_finite()) return false;
        return true;
    }
};

}  // namespace vsi
