#include "lco/params.hpp"

#include <cmath>

#include "lco/error.hpp"

namespace lco {

Matrix& ParamStore::add(const std::string& name, Matrix value) {
    require(!contains(name), "duplicate tensor name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

Matrix& ParamStore::at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("missing tensor '" + name + "'");
    return entries_[it->second].second;
}

const Matrix& ParamStore::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("missing tensor '" + name + "'");
    return entries_[it->second].second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
}

std::size_t ParamStore::total_values() const {
    std::size_t n = 0;
    for (const auto& [_, m] : entries_) n += m.size();
    return n;
}

ParamStore ParamStore::zeros_like() const {
    ParamStore z;
    for (const auto& [name, m] : entries_) z.add(name, Matrix(m.rows(), m.cols()));
    return z;
}

bool ParamStore::same_layout(const ParamStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& [na, ma] = entries_[i];
        const auto& [nb, mb] = other.entries_[i];
        if (na != nb || ma.rows() != mb.rows() || ma.cols() != mb.cols()) return false;
    }
    return true;
}

std::vector<double> ParamStore::flatten(const std::vector<std::string>& names) const {
    std::vector<double> flat;
    const auto& list = names.empty() ? this->names() : names;
    for (const auto& n : list) {
        const auto& v = at(n).values();
        flat.insert(flat.end(), v.begin(), v.end());
    }
    return flat;
}

void ParamStore::unflatten(const std::vector<double>& flat, const std::vector<std::string>& names) {
    const auto& list = names.empty() ? this->names() : names;
    std::size_t offset = 0;
    for (const auto& n : list) {
        auto& v = at(n).values();
        require(offset + v.size() <= flat.size(), "unflatten: vector too short");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                  flat.begin() + static_cast<std::ptrdiff_t>(offset + v.size()), v.begin());
        offset += v.size();
    }
    require(offset == flat.size(), "unflatten: vector too long");
}

void Adam::step(ParamStore& params, const ParamStore& grads, const std::vector<std::string>& names) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : names) {
        auto& p = params.at(name).values();
        const auto& g = grads.at(name).values();
        auto [it, inserted] = moments_.try_emplace(name);
        if (inserted) {
            const auto& shape = params.at(name);
            it->second = {Matrix(shape.rows(), shape.cols()), Matrix(shape.rows(), shape.cols())};
        }
        auto& m = it->second.first.values();
        auto& v = it->second.second.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            p[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
}

}  // namespace lco
