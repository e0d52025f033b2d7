#pragma once

#include <string>
#include <vector>

#include "gcaru/tensor.hpp"

namespace gcaru {

// Named view into a module's tensors. Trainable entries carry a gradient
// slot; normalization statistics are serialized but never optimized.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
    bool trainable = false;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

template <typename T>
std::size_t trainable_count(const ParamList<T>& ps) {
    std::size_t n = 0;
    for (const auto& p : ps)
        if (p.trainable) n += p.value->numel();
    return n;
}

template <typename T>
void zero_grads(const ParamList<T>& ps) {
    for (const auto& p : ps)
        if (p.grad) p.grad->fill(T(0));
}

}  // namespace gcaru
