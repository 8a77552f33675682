#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lco/numerics.hpp"

namespace lco {

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for serialization, flattening and averaging.
class ParamStore {
public:
    Matrix& add(const std::string& name, Matrix value);
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;

    const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
    std::vector<std::pair<std::string, Matrix>>& entries() { return entries_; }
    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }
    std::size_t total_values() const;

    /// Same names and shapes, all zeros.
    ParamStore zeros_like() const;
    bool same_layout(const ParamStore& other) const;

    /// Concatenated values of the given tensors (all tensors if `names` is empty).
    std::vector<double> flatten(const std::vector<std::string>& names = {}) const;
    void unflatten(const std::vector<double>& flat, const std::vector<std::string>& names = {});

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

private:
    std::vector<std::pair<std::string, Matrix>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. State is keyed by tensor name.
class Adam {
public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(ParamStore& params, const ParamStore& grads, const std::vector<std::string>& names);
    long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

}  // namespace lco
