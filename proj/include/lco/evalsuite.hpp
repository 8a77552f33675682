#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lco/geometry.hpp"
#include "lco/numerics.hpp"

namespace lco {

/// Relevant document ids per query id (binary relevance).
using Qrels = std::map<std::string, std::set<std::string>>;
/// Ranked document ids per query id, best first.
using Rankings = std::map<std::string, std::vector<std::string>>;

/// Parses `query_id<TAB>doc_id` lines.
Qrels read_qrels(std::istream& in);
/// Throws if a relevant id is not among `corpus_ids`.
void check_qrels(const Qrels& qrels, const std::vector<std::string>& corpus_ids);

struct MetricReport {
    std::string metric;
    double value = 0.0;
    std::size_t k = 0;  // 0 when not applicable
    std::size_t n = 0;  // queries or samples
    std::uint64_t seed = 0;
    std::string dataset;
};

/// Corpus sorted by descending cosine for each query; ties keep corpus order.
Rankings rank_by_cosine(const EmbeddingSet& queries, const EmbeddingSet& corpus);

/// Binary-gain nDCG@k averaged over queries with a non-empty qrel set.
double ndcg_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k);
/// Fraction of queries with at least one relevant document in the top k.
double recall_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k);

/// Ranks starting at 1; tied values share their mean rank.
std::vector<double> average_ranks(const std::vector<double>& x);
double pearson(const std::vector<double>& x, const std::vector<double>& y);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct ProbeConfig {
    std::size_t shots = 16;
    std::size_t iterations = 500;
    double lr = 0.1;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

/// Multinomial logistic regression over C classes: W is C x d, b is 1 x C.
struct ProbeModel {
    std::vector<std::size_t> classes;  // sorted label values
    Matrix w;
    Matrix b;
};

struct ProbeLoss {
    double loss = 0.0;
    Matrix d_w;
    Matrix d_b;
};

/// Mean cross-entropy plus (l2 / 2) |W|^2 on labels given as class positions.
ProbeLoss probe_loss(const Matrix& w, const Matrix& b, const Matrix& x, const std::vector<std::size_t>& y, double l2);

/// Full-batch gradient descent from zero.
ProbeModel fit_probe(const Matrix& x, const std::vector<std::size_t>& labels, const ProbeConfig& cfg);
/// Arg-max class, lowest class on ties.
std::vector<std::size_t> probe_predict(const ProbeModel& model, const Matrix& x);

/// Samples `shots` examples per class, fits the probe and returns test accuracy.
double linear_probe(const Matrix& train, const std::vector<std::size_t>& train_labels, const Matrix& test,
                    const std::vector<std::size_t>& test_labels, const ProbeConfig& cfg);

/// Accuracy of predicting the prompt with largest cosine (lowest index on ties).
double zeroshot_classify(const Matrix& items, const Matrix& prompts, const std::vector<std::size_t>& gold);

struct KMeansConfig {
    std::size_t clusters = 2;
    std::size_t restarts = 10;
    std::size_t max_iter = 300;
    double tol = 1e-6;
    std::uint64_t seed = 0;
};

struct KMeansResult {
    std::vector<std::size_t> labels;
    Matrix centroids;
    double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; the restart with least inertia wins.
KMeansResult kmeans(const Matrix& x, const KMeansConfig& cfg);

enum class NmiNorm { sqrt, arithmetic };
NmiNorm parse_nmi_norm(const std::string& s);

/// Normalised mutual information; 0 when either labelling has zero entropy.
double nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, NmiNorm norm = NmiNorm::sqrt);
double kmeans_nmi(const Matrix& x, const std::vector<std::size_t>& gold, const KMeansConfig& cfg,
                  NmiNorm norm = NmiNorm::sqrt);

}  // namespace lco
