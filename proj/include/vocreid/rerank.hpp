/**
 * @file rerank.hpp
 * @brief k-reciprocal encoding re-ranking over the fused score matrix.
 *
 * The joint (Q+G) x (Q+G) distance matrix is viewed zero-copy from three
 * blocks: the fused query-gallery matrix plus query-query and gallery-gallery
 * self-similarity blocks computed with the same branch features and fusion
 * weights. Similarities convert to distances as d = 1 - s.
 *
 * Procedure, per item i of the joint set:
 *   1. forward neighbors N(i, k1+1), ties broken by ascending index
 *   2. k-reciprocal set R(i, k1) = { j in N(i,k1+1) : i in N(j,k1+1) }
 *   3. expansion: for each c in R(i, k1), with h = ceil(k1/2), add R(c, h)
 *      when |R(c,h) intersect R(i,k1)| > (2/3)|R(c,h)|
 *   4. sparse encoding V[i][j] = exp(-d(i,j)) over the expanded set,
 *      L1-normalized per row
 *   5. local query expansion: V[i] = mean of V over N(i, k2) (when k2 > 1)
 *   6. Jaccard distance between query and gallery encodings,
 *      d_J = 1 - sum_min / (2 - sum_min) for L1-normalized rows
 *   7. final = lambda_rr * d_original + (1 - lambda_rr) * d_J
 *
 * Stages 1, 4, and 6 parallelize over items; all shared state is read-only,
 * so outputs are independent of the worker count.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "vocreid/parallel.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

struct RerankConfig {
    int k1 = 20;
    int k2 = 6;
    double lambda_rr = 0.3;
    std::size_t threads = 1;

    void validate() const {
        if (k1 < 1) throw Error(ErrorCategory::Config, "k1 must be >= 1");
        if (k2 < 1 || k2 > k1)
            throw Error(ErrorCategory::Config, "k2 must satisfy 1 <= k2 <= k1");
        if (!(lambda_rr >= 0.0) || !(lambda_rr <= 1.0))
            throw Error(ErrorCategory::Config, "lambda_rr must lie in [0,1]");
    }
};

namespace detail {

/// Zero-copy view of the joint distance matrix: queries first, then gallery.
class JointDistance {
public:
    JointDistance(const SimilarityMatrix& qg, const SimilarityMatrix& qq,
                  const SimilarityMatrix& gg)
        : qg_(qg), qq_(qq), gg_(gg), q_(qg.q_rows()), n_(qg.q_rows() + qg.g_cols()) {}

    std::size_t size() const { return n_; }
    std::size_t queries() const { return q_; }

    double operator()(std::size_t i, std::size_t j) const {
        if (i < q_)
            return j < q_ ? 1.0 - qq_.at(i, j) : 1.0 - qg_.at(i, j - q_);
        return j < q_ ? 1.0 - qg_.at(j, i - q_) : 1.0 - gg_.at(i - q_, j - q_);
    }

private:
    const SimilarityMatrix& qg_;
    const SimilarityMatrix& qq_;
    const SimilarityMatrix& gg_;
    std::size_t q_;
    std::size_t n_;
};

/// First k neighbors of each item by (distance, index) ascending, self
/// included. Computed with partial selection; the (d, index) order is total,
/// so the result equals the prefix of a full sort.
inline std::vector<std::uint32_t> nearest_neighbors(const JointDistance& dist,
                                                    std::size_t k,
                                                    std::size_t threads) {
    const std::size_t n = dist.size();
    std::vector<std::uint32_t> ranks(n * k);
    parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, std::uint32_t>> entries(n);
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = 0; j < n; ++j)
                entries[j] = {dist(i, j), static_cast<std::uint32_t>(j)};
            std::nth_element(entries.begin(), entries.begin() + (k - 1),
                             entries.end());
            std::sort(entries.begin(), entries.begin() + k);
            for (std::size_t r = 0; r < k; ++r)
                ranks[i * k + r] = entries[r].second;
        }
    });
    return ranks;
}

}  // namespace detail

/// Re-ranks the fused query-gallery matrix with the k-reciprocal encoding
/// procedure. query_self and gallery_self must be built from the same branch
/// features and fusion weights as fused. Returns a Q x G distance matrix.
inline SimilarityMatrix k_reciprocal_rerank(const SimilarityMatrix& fused,
                                            const SimilarityMatrix& query_self,
                                            const SimilarityMatrix& gallery_self,
                                            const RerankConfig& config) {
    config.validate();
    const std::size_t q_num = fused.q_rows();
    const std::size_t g_num = fused.g_cols();
    if (query_self.q_rows() != q_num || query_self.g_cols() != q_num)
        throw Error(ErrorCategory::Validation,
                    "query self-similarity must be Q x Q");
    if (gallery_self.q_rows() != g_num || gallery_self.g_cols() != g_num)
        throw Error(ErrorCategory::Validation,
                    "gallery self-similarity must be G x G");
    if (fused.kind() != ScoreKind::similarity ||
        query_self.kind() != ScoreKind::similarity ||
        gallery_self.kind() != ScoreKind::similarity)
        throw Error(ErrorCategory::Validation,
                    "rerank inputs must be similarity kind");

    const detail::JointDistance dist(fused, query_self, gallery_self);
    const std::size_t n = dist.size();
    const std::size_t k1 = static_cast<std::size_t>(config.k1);
    const std::size_t k2 = static_cast<std::size_t>(config.k2);
    if (k1 >= n)
        throw Error(ErrorCategory::Config,
                    "k1 must be smaller than the joint population Q+G");

    const std::size_t half_k1 = (k1 + 1) / 2;  // ceil(k1/2)
    const std::size_t list_len = k1 + 1;       // forward lists include self

    const std::vector<std::uint32_t> ranks =
        detail::nearest_neighbors(dist, list_len, config.threads);
    auto forward = [&](std::size_t i, std::size_t k) {
        return std::span<const std::uint32_t>(ranks.data() + i * list_len, k);
    };

    // membership test: sorted copy of each forward list
    std::vector<std::uint32_t> sorted_ranks(ranks);
    parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            std::sort(sorted_ranks.begin() + i * list_len,
                      sorted_ranks.begin() + (i + 1) * list_len);
    });
    auto in_forward = [&](std::size_t who, std::uint32_t target,
                          std::size_t k) {
        // k == list_len uses the fully sorted row; smaller k scans the prefix
        if (k == list_len) {
            auto begin = sorted_ranks.begin() + who * list_len;
            return std::binary_search(begin, begin + list_len, target);
        }
        auto prefix = forward(who, k);
        return std::find(prefix.begin(), prefix.end(), target) != prefix.end();
    };

    auto reciprocal_set = [&](std::size_t i, std::size_t k,
                              std::vector<std::uint32_t>& out) {
        out.clear();
        for (std::uint32_t j : forward(i, k))
            if (in_forward(j, static_cast<std::uint32_t>(i), k)) out.push_back(j);
    };

    // sparse encodings, one row per item, columns ascending
    struct SparseRow {
        std::vector<std::uint32_t> cols;
        std::vector<double> vals;
    };
    std::vector<SparseRow> encoding(n);

    parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<std::uint32_t> reciprocal, candidate, expanded;
        for (std::size_t i = begin; i < end; ++i) {
            reciprocal_set(i, list_len, reciprocal);
            expanded = reciprocal;
            std::vector<std::uint32_t> base_sorted(reciprocal);
            std::sort(base_sorted.begin(), base_sorted.end());
            for (std::uint32_t c : reciprocal) {
                reciprocal_set(c, half_k1 + 1, candidate);
                std::size_t overlap = 0;
                for (std::uint32_t x : candidate)
                    if (std::binary_search(base_sorted.begin(),
                                           base_sorted.end(), x))
                        ++overlap;
                if (3 * overlap > 2 * candidate.size())
                    expanded.insert(expanded.end(), candidate.begin(),
                                    candidate.end());
            }
            std::sort(expanded.begin(), expanded.end());
            expanded.erase(std::unique(expanded.begin(), expanded.end()),
                           expanded.end());

            if (expanded.empty())  // unreachable unless i has k1 closer twins
                expanded.push_back(static_cast<std::uint32_t>(i));

            SparseRow& row = encoding[i];
            row.cols.assign(expanded.begin(), expanded.end());
            row.vals.resize(row.cols.size());
            double total = 0.0;
            for (std::size_t s = 0; s < row.cols.size(); ++s) {
                row.vals[s] = std::exp(-dist(i, row.cols[s]));
                total += row.vals[s];
            }
            if (total == 0.0) {
                // every neighbor sits at sentinel distance; fall back to
                // uniform weights so the row still sums to one
                const double uniform = 1.0 / static_cast<double>(row.vals.size());
                for (double& v : row.vals) v = uniform;
            } else {
                const double inv = 1.0 / total;
                for (double& v : row.vals) v *= inv;
            }
        }
    });

    // local query expansion: mean encoding over the k2 nearest neighbors
    if (k2 > 1) {
        std::vector<SparseRow> expanded_enc(n);
        const double inv_k2 = 1.0 / static_cast<double>(k2);
        parallel_for(n, config.threads, [&](std::size_t begin, std::size_t end) {
            std::vector<double> dense(n, 0.0);
            std::vector<std::uint32_t> touched;
            for (std::size_t i = begin; i < end; ++i) {
                touched.clear();
                for (std::uint32_t nb : forward(i, k2)) {
                    const SparseRow& src = encoding[nb];
                    for (std::size_t s = 0; s < src.cols.size(); ++s) {
                        if (dense[src.cols[s]] == 0.0)
                            touched.push_back(src.cols[s]);
                        dense[src.cols[s]] += src.vals[s] * inv_k2;
                    }
                }
                std::sort(touched.begin(), touched.end());
                SparseRow& dst = expanded_enc[i];
                dst.cols.assign(touched.begin(), touched.end());
                dst.vals.resize(dst.cols.size());
                for (std::size_t s = 0; s < dst.cols.size(); ++s) {
                    dst.vals[s] = dense[dst.cols[s]];
                    dense[dst.cols[s]] = 0.0;
                }
            }
        });
        encoding.swap(expanded_enc);
    }

    // inverted index over gallery rows only; queries never appear as columns
    // of the output
    std::vector<std::vector<std::pair<std::uint32_t, double>>> inverted(n);
    for (std::size_t g = 0; g < g_num; ++g) {
        const SparseRow& row = encoding[q_num + g];
        for (std::size_t s = 0; s < row.cols.size(); ++s)
            inverted[row.cols[s]].emplace_back(static_cast<std::uint32_t>(g),
                                               row.vals[s]);
    }

    SimilarityMatrix out(q_num, g_num, ScoreKind::distance);
    const double lambda = config.lambda_rr;
    parallel_for(q_num, config.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> min_sum(g_num);
        for (std::size_t i = begin; i < end; ++i) {
            std::fill(min_sum.begin(), min_sum.end(), 0.0);
            const SparseRow& qrow = encoding[i];
            for (std::size_t s = 0; s < qrow.cols.size(); ++s) {
                const double qval = qrow.vals[s];
                for (const auto& [g, gval] : inverted[qrow.cols[s]])
                    min_sum[g] += std::min(qval, gval);
            }
            auto out_row = out.row(i);
            for (std::size_t g = 0; g < g_num; ++g) {
                const double jaccard = 1.0 - min_sum[g] / (2.0 - min_sum[g]);
                out_row[g] = lambda * dist(i, q_num + g) +
                             (1.0 - lambda) * jaccard;
            }
        }
    });
    return out;
}

}  // namespace vocreid
