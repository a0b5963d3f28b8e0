/// Shared helpers for the test suites: seeded random data builders and a
/// scratch directory that cleans up after itself.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "vocreid/types.hpp"

namespace testutil {

inline std::vector<float> random_floats(std::mt19937_64& gen, std::size_t count,
                                        float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> out(count);
    for (float& v : out) v = dist(gen);
    return out;
}

inline vocreid::EmbeddingMatrix random_embeddings(std::mt19937_64& gen,
                                                  std::size_t rows,
                                                  std::size_t dims,
                                                  vocreid::Branch branch) {
    return {rows, dims, random_floats(gen, rows * dims), branch};
}

/// Random similarity-kind matrix with entries in [-1, 1].
inline vocreid::SimilarityMatrix random_similarity(std::mt19937_64& gen,
                                                   std::size_t q,
                                                   std::size_t g) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    vocreid::SimilarityMatrix m(q, g, vocreid::ScoreKind::similarity);
    for (double& v : m.data()) v = dist(gen);
    return m;
}

/// Symmetric similarity matrix with unit diagonal, as a self-similarity block
/// would look.
inline vocreid::SimilarityMatrix random_self_similarity(std::mt19937_64& gen,
                                                        std::size_t n) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    vocreid::SimilarityMatrix m(n, n, vocreid::ScoreKind::similarity);
    for (std::size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = dist(gen);
            m.at(i, j) = v;
            m.at(j, i) = v;
        }
    }
    return m;
}

class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("vocreid_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string file(const std::string& name) const {
        return (path_ / name).string();
    }
    std::string dir() const { return path_.string(); }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
