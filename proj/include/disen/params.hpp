#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <utility>

#include "disen/autodiff.hpp"

namespace disen {

// Named trainable parameters in a stable (insertion) order so optimizer
// state, checkpoints, and gradient checks all walk the same sequence.
// Entries live in a deque so references handed out by add() survive
// later insertions.
template <class Real>
class ParamStore {
public:
    Value<Real>& add(const std::string& name, Tensor<Real> init) {
        if (find(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
        entries_.emplace_back(name, Value<Real>::param(std::move(init)));
        return entries_.back().second;
    }

    Value<Real>* find(const std::string& name) {
        for (auto& [n, v] : entries_)
            if (n == name) return &v;
        return nullptr;
    }

    Value<Real>& get(const std::string& name) {
        if (auto* v = find(name)) return *v;
        throw std::out_of_range("ParamStore: no parameter named " + name);
    }

    void zero_grad() {
        for (auto& [n, v] : entries_) v.node().grad.fill(Real(0));
    }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t total_numel() const {
        std::size_t t = 0;
        for (const auto& [n, v] : entries_) t += v.val().numel();
        return t;
    }

private:
    std::deque<std::pair<std::string, Value<Real>>> entries_;
};

}  // namespace disen
