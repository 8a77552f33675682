#include "lco/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>

#include "lco/error.hpp"
#include "lco/rng.hpp"

namespace lco {

Qrels read_qrels(std::istream& in) {
    Qrels q;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size() || line.find('\t', tab + 1) != std::string::npos)
            throw ValidationError("qrels line " + std::to_string(lineno) + ": expected query_id<TAB>doc_id");
        q[line.substr(0, tab)].insert(line.substr(tab + 1));
    }
    return q;
}

void check_qrels(const Qrels& qrels, const std::vector<std::string>& corpus_ids) {
    const std::set<std::string> corpus(corpus_ids.begin(), corpus_ids.end());
    for (const auto& [query, docs] : qrels)
        for (const auto& d : docs)
            require(corpus.count(d) != 0, "qrels: query '" + query + "' references unknown document '" + d + "'");
}

Rankings rank_by_cosine(const EmbeddingSet& queries, const EmbeddingSet& corpus) {
    queries.validate();
    corpus.validate();
    require(queries.dim() == corpus.dim(), "rank_by_cosine: query and corpus dimensions differ");
    const Matrix sim = matmul_nt(normalize_rows(queries.vectors), normalize_rows(corpus.vectors));
    Rankings out;
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::iota(order.begin(), order.end(), 0);
        const auto row = sim.row(q);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
        auto& ranked = out[queries.ids[q]];
        ranked.reserve(order.size());
        for (std::size_t d : order) ranked.push_back(corpus.ids[d]);
    }
    return out;
}

namespace {

// Calls f(ranking, relevant) for every query with relevant documents.
template <class F>
double mean_over_queries(const Rankings& rankings, const Qrels& qrels, std::size_t k, F f) {
    require(k >= 1, "retrieval metric: k must be >= 1");
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& [query, relevant] : qrels) {
        if (relevant.empty()) continue;
        const auto it = rankings.find(query);
        if (it == rankings.end()) throw ValidationError("no ranking for query '" + query + "'");
        ++count;
        sum += f(it->second, relevant);
    }
    require(count >= 1, "retrieval metric: no query has relevant documents");
    // plain sum keeps hit-rate metrics exact fractions
    return sum / static_cast<double>(count);
}

}  // namespace

double ndcg_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k) {
    return mean_over_queries(rankings, qrels, k, [k](const std::vector<std::string>& ranked, const std::set<std::string>& rel) {
        double dcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
            if (rel.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        double idcg = 0.0;
        for (std::size_t r = 0; r < std::min(k, rel.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        return dcg / idcg;
    });
}

double recall_at_k(const Rankings& rankings, const Qrels& qrels, std::size_t k) {
    return mean_over_queries(rankings, qrels, k, [k](const std::vector<std::string>& ranked, const std::set<std::string>& rel) {
        for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r)
            if (rel.count(ranked[r])) return 1.0;
        return 0.0;
    });
}

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "correlation: length mismatch");
    require(x.size() >= 2, "correlation: need at least 2 values");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0 && syy > 0.0, "correlation undefined for a constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), "spearman: length mismatch");
    return pearson(average_ranks(x), average_ranks(y));
}

// ---------------------------------------------------------------------------
// Linear probe

ProbeLoss probe_loss(const Matrix& w, const Matrix& b, const Matrix& x, const std::vector<std::size_t>& y, double l2) {
    const std::size_t n = x.rows(), c = w.rows();
    require(n >= 1 && y.size() == n, "probe: label count mismatch");
    require(w.cols() == x.cols() && b.rows() == 1 && b.cols() == c, "probe: parameter shape mismatch");
    Matrix logits = matmul_nt(x, w);
    add_row_bias(logits, b);
    Matrix p(n, c), onehot(n, c);
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        require(y[i] < c, "probe: label out of range");
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const double nll = mx + std::log(sum) - row[y[i]];
        mean += (nll - mean) / static_cast<double>(i + 1);
        for (std::size_t k = 0; k < c; ++k) p(i, k) = std::exp(row[k] - mx) / sum;
        onehot(i, y[i]) = 1.0;
    }
    double reg = 0.0;
    for (double v : w.values()) reg += v * v;
    ProbeLoss out;
    out.loss = mean + 0.5 * l2 * reg;
    const double inv = 1.0 / static_cast<double>(n);
    // (P - Y)^T X, written as two sums so equal inputs cancel exactly.
    out.d_w = (matmul_tn(p, x) - matmul_tn(onehot, x)) * inv + w * l2;
    out.d_b = (column_sums(p) - column_sums(onehot)) * inv;
    return out;
}

ProbeModel fit_probe(const Matrix& x, const std::vector<std::size_t>& labels, const ProbeConfig& cfg) {
    require(x.rows() == labels.size() && x.rows() >= 1, "probe: label count mismatch");
    require(std::isfinite(cfg.lr) && cfg.lr > 0.0 && std::isfinite(cfg.l2) && cfg.l2 >= 0.0, "probe: bad lr or l2");
    ProbeModel m;
    m.classes = labels;
    std::sort(m.classes.begin(), m.classes.end());
    m.classes.erase(std::unique(m.classes.begin(), m.classes.end()), m.classes.end());
    std::vector<std::size_t> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        y[i] = static_cast<std::size_t>(std::lower_bound(m.classes.begin(), m.classes.end(), labels[i]) - m.classes.begin());
    m.w = Matrix(m.classes.size(), x.cols());
    m.b = Matrix(1, m.classes.size());
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto g = probe_loss(m.w, m.b, x, y, cfg.l2);
        m.w -= g.d_w * cfg.lr;
        m.b -= g.d_b * cfg.lr;
    }
    return m;
}

std::vector<std::size_t> probe_predict(const ProbeModel& model, const Matrix& x) {
    require(x.cols() == model.w.cols(), "probe: feature dimension mismatch");
    Matrix logits = matmul_nt(x, model.w);
    add_row_bias(logits, model.b);
    std::vector<std::size_t> out(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t k = 1; k < row.size(); ++k)
            if (row[k] > row[best]) best = k;
        out[i] = model.classes[best];
    }
    return out;
}

double linear_probe(const Matrix& train, const std::vector<std::size_t>& train_labels, const Matrix& test,
                    const std::vector<std::size_t>& test_labels, const ProbeConfig& cfg) {
    require(train.rows() == train_labels.size() && test.rows() == test_labels.size(), "probe: label count mismatch");
    require(test.rows() >= 1, "probe: empty test set");
    require(cfg.shots >= 1, "probe: shots must be >= 1");
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train_labels.size(); ++i) by_class[train_labels[i]].push_back(i);
    for (std::size_t lbl : test_labels)
        require(by_class.count(lbl) != 0, "probe: test class " + std::to_string(lbl) + " absent from training data");
    Rng rng(cfg.seed);
    std::vector<std::size_t> picked;
    for (const auto& [cls, idx] : by_class) {
        require(idx.size() >= cfg.shots, "probe: class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                                             " examples, need " + std::to_string(cfg.shots));
        for (std::size_t j : rng.sample_without_replacement(idx.size(), cfg.shots)) picked.push_back(idx[j]);
    }
    Matrix x(picked.size(), train.cols());
    std::vector<std::size_t> y;
    for (std::size_t i = 0; i < picked.size(); ++i) {
        std::copy(train.row(picked[i]).begin(), train.row(picked[i]).end(), x.row(i).begin());
        y.push_back(train_labels[picked[i]]);
    }
    const auto model = fit_probe(x, y, cfg);
    const auto pred = probe_predict(model, test);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test_labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double zeroshot_classify(const Matrix& items, const Matrix& prompts, const std::vector<std::size_t>& gold) {
    require(prompts.rows() >= 1, "zero-shot: no class prompts");
    require(items.cols() == prompts.cols(), "zero-shot: dimension mismatch");
    require(items.rows() == gold.size() && !gold.empty(), "zero-shot: label count mismatch");
    for (std::size_t c = 0; c < prompts.rows(); ++c)
        require(norm(prompts.row(c)) > 0.0, "zero-shot: zero-norm prompt " + std::to_string(c));
    const Matrix p = normalize_rows(prompts);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < items.rows(); ++i) {
        const double n = norm(items.row(i));
        std::size_t best = 0;
        if (n > 0.0) {
            double best_sim = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < p.rows(); ++c) {
                const double s = dot(items.row(i), p.row(c)) / n;
                if (s > best_sim) {
                    best_sim = s;
                    best = c;
                }
            }
        }
        hits += best == gold[i];
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

// ---------------------------------------------------------------------------
// Clustering

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

KMeansResult kmeans_once(const Matrix& x, const KMeansConfig& cfg, Rng& rng) {
    const std::size_t n = x.rows(), k = cfg.clusters;
    Matrix centroids(k, x.cols());
    // k-means++ seeding.
    std::size_t first = rng.uniform_int(n);
    std::copy(x.row(first).begin(), x.row(first).end(), centroids.row(0).begin());
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(x.row(i), centroids.row(0));
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.uniform_int(n);
        }
        std::copy(x.row(pick).begin(), x.row(pick).end(), centroids.row(c).begin());
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x.row(i), centroids.row(c)));
    }

    KMeansResult res;
    res.labels.assign(n, 0);
    auto assign = [&] {
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = sq_dist(x.row(i), centroids.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(x.row(i), centroids.row(c));
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            res.labels[i] = best;
            inertia += bd;
        }
        return inertia;
    };
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
        assign();
        Matrix sums(k, x.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto s = sums.row(res.labels[i]);
            const auto xi = x.row(i);
            for (std::size_t j = 0; j < s.size(); ++j) s[j] += xi[j];
            ++counts[res.labels[i]];
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            auto s = sums.row(c);
            for (auto& v : s) v /= static_cast<double>(counts[c]);
            shift += sq_dist(s, centroids.row(c));
            std::copy(s.begin(), s.end(), centroids.row(c).begin());
        }
        if (shift <= cfg.tol) break;
    }
    res.inertia = assign();
    res.centroids = std::move(centroids);
    return res;
}

}  // namespace

KMeansResult kmeans(const Matrix& x, const KMeansConfig& cfg) {
    require(cfg.clusters >= 1, "kmeans: need at least one cluster");
    require(x.rows() >= cfg.clusters, "kmeans: " + std::to_string(x.rows()) + " points for " +
                                          std::to_string(cfg.clusters) + " clusters");
    require(cfg.restarts >= 1, "kmeans: restarts must be >= 1");
    require(x.all_finite(), "kmeans: non-finite input");
    Rng rng(cfg.seed);
    KMeansResult best;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        auto res = kmeans_once(x, cfg, rng);
        if (r == 0 || res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

NmiNorm parse_nmi_norm(const std::string& s) {
    if (s == "sqrt") return NmiNorm::sqrt;
    if (s == "arithmetic") return NmiNorm::arithmetic;
    throw ValidationError("unknown NMI normalisation '" + s + "' (expected sqrt or arithmetic)");
}

double nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b, NmiNorm norm) {
    require(a.size() == b.size() && !a.empty(), "nmi: labelings differ in length or are empty");
    const double n = static_cast<double>(a.size());
    std::map<std::size_t, double> ca, cb;
    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca[a[i]] += 1.0;
        cb[b[i]] += 1.0;
        joint[{a[i], b[i]}] += 1.0;
    }
    auto entropy = [n](const std::map<std::size_t, double>& counts) {
        double h = 0.0;
        for (const auto& [_, c] : counts) h -= c / n * std::log(c / n);
        return h;
    };
    const double ha = entropy(ca), hb = entropy(cb);
    if (ca.size() < 2 || cb.size() < 2) return 0.0;
    double mi = 0.0;
    for (const auto& [key, c] : joint) mi += c / n * std::log(c * n / (ca[key.first] * cb[key.second]));
    const double denom = norm == NmiNorm::sqrt ? std::sqrt(ha * hb) : 0.5 * (ha + hb);
    return std::clamp(mi / denom, 0.0, 1.0);
}

double kmeans_nmi(const Matrix& x, const std::vector<std::size_t>& gold, const KMeansConfig& cfg, NmiNorm norm) {
    require(gold.size() == x.rows(), "kmeans_nmi: label count mismatch");
    return nmi(kmeans(x, cfg).labels, gold, norm);
}

}  // namespace lco
