#include "lco/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "lco/error.hpp"

namespace lco {

void EmbeddingSet::validate() const {
    require(ids.size() == vectors.rows(), "embedding set '" + modality + "': " + std::to_string(ids.size()) +
                                              " ids for " + std::to_string(vectors.rows()) + " rows");
    std::set<std::string> seen;
    for (const auto& id : ids) require(seen.insert(id).second, "embedding set '" + modality + "': duplicate id '" + id + "'");
    require(vectors.all_finite(), "embedding set '" + modality + "': non-finite value");
    for (std::size_t i = 0; i < vectors.rows(); ++i)
        require(norm(vectors.row(i)) > 0.0, "embedding set '" + modality + "': zero-norm row " + std::to_string(i));
}

EmbeddingSet EmbeddingSet::from_matrix(std::string modality, Matrix vectors) {
    EmbeddingSet s;
    s.modality = std::move(modality);
    s.ids.reserve(vectors.rows());
    for (std::size_t i = 0; i < vectors.rows(); ++i) s.ids.push_back(std::to_string(i));
    s.vectors = std::move(vectors);
    return s;
}

double anisotropy_naive(const Matrix& v) {
    const std::size_t n = v.rows();
    require(n >= 2, "anisotropy needs at least 2 vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) sum += cosine(v.row(i), v.row(j));
    return 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double anisotropy(const Matrix& v) {
    const std::size_t n = v.rows();
    require(n >= 2, "anisotropy needs at least 2 vectors");
    const Matrix u = normalize_rows(v);
    constexpr std::size_t kBlock = 64;
    double total = 0.0;
    for (std::size_t bi = 0; bi < n; bi += kBlock) {
        const std::size_t ei = std::min(n, bi + kBlock);
        for (std::size_t bj = bi; bj < n; bj += kBlock) {
            const std::size_t ej = std::min(n, bj + kBlock);
            double block = 0.0;
            for (std::size_t i = bi; i < ei; ++i)
                for (std::size_t j = std::max(bj, i + 1); j < ej; ++j)
                    block += std::clamp(dot(u.row(i), u.row(j)), -1.0, 1.0);
            total += block;
        }
    }
    return 2.0 * total / (static_cast<double>(n) * static_cast<double>(n - 1));
}

double anisotropy(const EmbeddingSet& set) {
    set.validate();
    return anisotropy(set.vectors);
}

std::vector<std::vector<std::size_t>> knn_indices(const Matrix& vectors, std::size_t k) {
    const std::size_t n = vectors.rows();
    require(n >= 2 && k >= 1 && k <= n - 1,
            "knn: k=" + std::to_string(k) + " out of range for n=" + std::to_string(n));
    const Matrix u = normalize_rows(vectors);
    const Matrix sim = matmul_nt(u, u);
    std::vector<std::vector<std::size_t>> out(n);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) order.push_back(j);
        const auto row = sim.row(i);
        // Smallest cosine distance first is largest similarity first.
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

double mutual_knn(const Matrix& phi, const Matrix& psi, std::size_t k) {
    require(phi.rows() == psi.rows(), "mutual_knn: size mismatch (" + std::to_string(phi.rows()) + " vs " +
                                          std::to_string(psi.rows()) + ")");
    const auto a = knn_indices(phi, k);
    const auto b = knn_indices(psi, k);
    double mean = 0.0;
    std::vector<std::size_t> sa, sb, common;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa = a[i];
        sb = b[i];
        std::sort(sa.begin(), sa.end());
        std::sort(sb.begin(), sb.end());
        common.clear();
        std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
        const double frac = static_cast<double>(common.size()) / static_cast<double>(k);
        mean += (frac - mean) / static_cast<double>(i + 1);
    }
    return mean;
}

double mutual_knn(const EmbeddingSet& phi, const EmbeddingSet& psi, std::size_t k) {
    phi.validate();
    psi.validate();
    return mutual_knn(phi.vectors, psi.vectors, k);
}

AlignmentCurve layerwise_alignment(const ToyModel& model, const InputBatch& x, const InputBatch& y, std::size_t k,
                                   const LoraAdapter* adapter) {
    require(x.size() == y.size(), "layerwise alignment: paired batches differ in size");
    require(x.size() > k, "layerwise alignment: batch size must exceed k");
    const auto ex = encode(model, x, adapter, true);
    const auto ey = encode(model, y, adapter, true);
    AlignmentCurve curve;
    curve.k = k;
    curve.batch = x.size();
    for (std::size_t l = 0; l < ex.layers.size(); ++l) {
        curve.layers.push_back(l);
        curve.scores.push_back(mutual_knn(ex.layers[l], ey.layers[l], k));
    }
    return curve;
}

}  // namespace lco
