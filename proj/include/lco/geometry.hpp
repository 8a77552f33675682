#pragma once

#include <string>
#include <vector>

#include "lco/numerics.hpp"
#include "lco/toymodel.hpp"

namespace lco {

/// Row embeddings of one modality with unique identifiers.
struct EmbeddingSet {
    std::string modality;
    std::vector<std::string> ids;
    Matrix vectors;  // n x d

    std::size_t size() const { return vectors.rows(); }
    std::size_t dim() const { return vectors.cols(); }
    /// Checks id count and uniqueness, finiteness and non-zero rows.
    void validate() const;
    /// Ids "0", "1", ... for an unlabelled matrix.
    static EmbeddingSet from_matrix(std::string modality, Matrix vectors);
};

/// Mean pairwise cosine over all i < j, computed in row blocks.
double anisotropy(const Matrix& vectors);
double anisotropy(const EmbeddingSet& set);
/// Plain double loop over pairs, kept as a reference implementation.
double anisotropy_naive(const Matrix& vectors);

/// k nearest neighbours of every row by cosine distance, excluding the row
/// itself. Ties go to the lower index. Result is sorted nearest first.
std::vector<std::vector<std::size_t>> knn_indices(const Matrix& vectors, std::size_t k);

/// Mean over rows of |S_phi(i) & S_psi(i)| / k.
double mutual_knn(const Matrix& phi, const Matrix& psi, std::size_t k);
double mutual_knn(const EmbeddingSet& phi, const EmbeddingSet& psi, std::size_t k);

struct AlignmentCurve {
    std::vector<std::size_t> layers;  // 0 is the trunk input
    std::vector<double> scores;
    std::size_t k = 0;
    std::size_t batch = 0;
};

/// Mutual kNN between the trunk activations of two paired input batches, at
/// the trunk input and after every trunk layer.
AlignmentCurve layerwise_alignment(const ToyModel& model, const InputBatch& x, const InputBatch& y, std::size_t k,
                                   const LoraAdapter* adapter = nullptr);

}  // namespace lco
