/**
 * @file io.hpp
 * @brief File formats: VOCE binary matrices, metadata CSV, report emission.
 *
 * VOCE layout (all integers little-endian):
 *   offset  0: magic "VOCE" (4 bytes)
 *   offset  4: version, uint32 = 1
 *   offset  8: rows, uint64
 *   offset 16: dims, uint64
 *   offset 24: payload, rows*dims IEEE-754 float32, little-endian, row-major
 *
 * Metadata CSV header (one row per matrix row, same order):
 *   image_id,split,vehicle_id,camera_id,track_id,orientation_bin
 * Empty cells mean "absent".
 *
 * Writers flush and fsync before returning so an exit code never races the
 * bytes it reports on.
 */
#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "vocreid/types.hpp"

namespace vocreid {

inline constexpr std::array<char, 4> kEmbeddingMagic = {'V', 'O', 'C', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr const char* kMetadataHeader =
    "image_id,split,vehicle_id,camera_id,track_id,orientation_bin";

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 |
           static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

// =============================================================================
// Low-level file helpers
// =============================================================================

/// Writes the whole buffer, then fflush + fsync before close.
inline void write_file_synced(const std::string& path, const std::string& bytes) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f)
        throw Error(ErrorCategory::Io, "cannot open for writing: " + path);
    bool ok = bytes.empty() ||
              std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size();
    ok = ok && std::fflush(f) == 0;
    ok = ok && ::fsync(fileno(f)) == 0;
    if (std::fclose(f) != 0) ok = false;
    if (!ok) throw Error(ErrorCategory::Io, "write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCategory::Io, "cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof())
        throw Error(ErrorCategory::Io, "read failed: " + path);
    return std::move(buf).str();
}

// =============================================================================
// VOCE binary matrices
// =============================================================================

inline std::string encode_voce(std::size_t rows, std::size_t dims,
                               const float* values) {
    std::string out;
    out.reserve(24 + rows * dims * 4);
    out.append(kEmbeddingMagic.data(), kEmbeddingMagic.size());
    detail::put_u32_le(out, kEmbeddingVersion);
    detail::put_u64_le(out, rows);
    detail::put_u64_le(out, dims);
    for (std::size_t i = 0; i < rows * dims; ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(values[i]);
        detail::put_u32_le(out, bits);
    }
    return out;
}

struct VoceContents {
    std::size_t rows = 0;
    std::size_t dims = 0;
    std::vector<float> values;
};

inline VoceContents decode_voce(const std::string& bytes,
                                const std::string& origin) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 ||
        std::memcmp(bytes.data(), kEmbeddingMagic.data(), 4) != 0)
        throw Error(ErrorCategory::Format,
                    origin + ": bad magic at offset 0, expected \"VOCE\"");
    if (bytes.size() < 8)
        throw Error(ErrorCategory::Format,
                    origin + ": truncated header at offset 4");
    const std::uint32_t version = detail::get_u32_le(p + 4);
    if (version != kEmbeddingVersion)
        throw Error(ErrorCategory::Format,
                    origin + ": version mismatch at offset 4, expected " +
                        std::to_string(kEmbeddingVersion) + ", found " +
                        std::to_string(version));
    if (bytes.size() < 24)
        throw Error(ErrorCategory::Format,
                    origin + ": truncated header at offset 8");
    VoceContents out;
    out.rows = detail::get_u64_le(p + 8);
    out.dims = detail::get_u64_le(p + 16);
    const std::uint64_t expected =
        static_cast<std::uint64_t>(out.rows) * out.dims * 4;
    const std::uint64_t actual = bytes.size() - 24;
    if (actual < expected)
        throw Error(ErrorCategory::Format,
                    origin + ": truncated payload at offset 24, expected " +
                        std::to_string(expected) + " bytes, found " +
                        std::to_string(actual));
    if (actual > expected)
        throw Error(ErrorCategory::Format,
                    origin + ": trailing data at offset " +
                        std::to_string(24 + expected) + ", expected " +
                        std::to_string(expected) + " payload bytes, found " +
                        std::to_string(actual));
    out.values.resize(out.rows * out.dims);
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] =
            std::bit_cast<float>(detail::get_u32_le(p + 24 + 4 * i));
    return out;
}

inline void write_embeddings(const std::string& path,
                             const EmbeddingMatrix& matrix) {
    write_file_synced(path,
                      encode_voce(matrix.rows(), matrix.dims(),
                                  matrix.data().data()));
}

inline EmbeddingMatrix read_embeddings(const std::string& path, Branch branch) {
    VoceContents c = decode_voce(read_file(path), path);
    return EmbeddingMatrix(c.rows, c.dims, std::move(c.values), branch);
}

/// Similarity matrices reuse the VOCE container; the score kind is carried by
/// the consumer (CLI flag or pipeline context), not the file.
inline void write_matrix(const std::string& path, const SimilarityMatrix& m) {
    std::vector<float> payload(m.data().size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(m.data()[i]);
    write_file_synced(path, encode_voce(m.q_rows(), m.g_cols(), payload.data()));
}

inline SimilarityMatrix read_matrix(const std::string& path, ScoreKind kind) {
    VoceContents c = decode_voce(read_file(path), path);
    SimilarityMatrix m(c.rows, c.dims, kind);
    for (std::size_t i = 0; i < c.values.size(); ++i)
        m.data()[i] = static_cast<double>(c.values[i]);
    return m;
}

// =============================================================================
// Metadata CSV
// =============================================================================

inline std::string encode_metadata(const std::vector<ItemMeta>& meta) {
    std::string out(kMetadataHeader);
    out.push_back('\n');
    for (const auto& m : meta) {
        out += m.image_id;
        out.push_back(',');
        out += to_string(m.split);
        out.push_back(',');
        out += std::to_string(m.vehicle_id);
        out.push_back(',');
        out += std::to_string(m.camera_id);
        out.push_back(',');
        if (m.track_id) out += std::to_string(*m.track_id);
        out.push_back(',');
        if (m.orientation_bin) out += std::to_string(*m.orientation_bin);
        out.push_back('\n');
    }
    return out;
}

inline void write_metadata(const std::string& path,
                           const std::vector<ItemMeta>& meta) {
    write_file_synced(path, encode_metadata(meta));
}

namespace detail {

inline std::int64_t parse_int(const std::string& field, const std::string& what,
                              std::size_t line) {
    std::int64_t value = 0;
    const auto [ptr, ec] =
        std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size())
        throw Error(ErrorCategory::Format,
                    "metadata line " + std::to_string(line) + ": bad " + what +
                        " value \"" + field + "\"");
    return value;
}

}  // namespace detail

inline std::vector<ItemMeta> parse_metadata(const std::string& text,
                                            const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCategory::Format, origin + ": empty metadata file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetadataHeader)
        throw Error(ErrorCategory::Format,
                    origin + ": bad header, expected \"" +
                        std::string(kMetadataHeader) + "\"");

    std::vector<ItemMeta> meta;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (fields.size() != 6)
            throw Error(ErrorCategory::Format,
                        origin + ": line " + std::to_string(line_no) +
                            " has " + std::to_string(fields.size()) +
                            " fields, expected 6");

        ItemMeta m;
        m.image_id = fields[0];
        if (fields[1] == "query")
            m.split = Split::query;
        else if (fields[1] == "gallery")
            m.split = Split::gallery;
        else
            throw Error(ErrorCategory::Format,
                        origin + ": line " + std::to_string(line_no) +
                            ": split must be query or gallery, found \"" +
                            fields[1] + "\"");
        m.vehicle_id = detail::parse_int(fields[2], "vehicle_id", line_no);
        m.camera_id = detail::parse_int(fields[3], "camera_id", line_no);
        if (!fields[4].empty())
            m.track_id = detail::parse_int(fields[4], "track_id", line_no);
        if (!fields[5].empty())
            m.orientation_bin = static_cast<int>(
                detail::parse_int(fields[5], "orientation_bin", line_no));
        meta.push_back(std::move(m));
    }
    return meta;
}

inline std::vector<ItemMeta> read_metadata(const std::string& path) {
    return parse_metadata(read_file(path), path);
}

}  // namespace vocreid
