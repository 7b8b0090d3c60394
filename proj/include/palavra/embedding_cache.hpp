#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "palavra/binio.hpp"
#include "palavra/encoder.hpp"
#include "palavra/errors.hpp"
#include "palavra/linalg.hpp"

namespace palavra {

// Persistent embedding store.
//
// Binary file layout: 16-byte header (ASCII magic "PVLC", u32 LE version = 1,
// u32 LE dim, u32 LE count) followed by count rows of dim float32 LE values.
// A sidecar "<path>.ids" text file maps row index to item id, one id per
// line, UTF-8. Values are stored at float32; put/get round-trip bitwise at
// that precision.
class EmbeddingCache {
public:
    EmbeddingCache(std::string path, std::size_t dim) : path_(std::move(path)), dim_(dim) {
        if (dim_ == 0) throw InputError("embedding cache: dim must be positive");
    }

    static std::string ids_path_for(const std::string& path) { return path + ".ids"; }

    const std::string& path() const { return path_; }
    std::size_t dim() const { return dim_; }
    std::size_t count() const { return rows_.size(); }

    bool contains(const std::string& id) const { return index_.count(id) != 0; }

    void put(const std::string& id, const std::vector<float>& v) {
        if (v.size() != dim_)
            throw InputError("cache put: vector dim " + std::to_string(v.size()) +
                             " does not match cache dim " + std::to_string(dim_));
        auto it = index_.find(id);
        if (it != index_.end()) {
            rows_[it->second] = v;
            return;
        }
        index_.emplace(id, rows_.size());
        ids_.push_back(id);
        rows_.push_back(v);
    }

    void put(const std::string& id, const Vec& v) {
        std::vector<float> row(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) row[i] = static_cast<float>(v[i]);
        put(id, row);
    }

    const std::vector<float>& get_f32(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw DataError("cache: no entry for id '" + id + "'");
        return rows_[it->second];
    }

    // Widened copy for in-process math (exact: f32 -> f64 is lossless).
    Vec get(const std::string& id) const {
        const std::vector<float>& row = get_f32(id);
        return Vec(row.begin(), row.end());
    }

    void save() const {
        std::string bin;
        bin.reserve(16 + rows_.size() * dim_ * 4);
        bin += "PVLC";
        put_u32_le(bin, 1);
        put_u32_le(bin, static_cast<std::uint32_t>(dim_));
        put_u32_le(bin, static_cast<std::uint32_t>(rows_.size()));
        for (const std::vector<float>& row : rows_)
            for (float x : row) put_f32_le(bin, x);
        write_file_bytes(path_, bin);

        std::string sidecar;
        for (const std::string& id : ids_) {
            sidecar += id;
            sidecar += '\n';
        }
        write_file_bytes(ids_path_for(path_), sidecar);
    }

    static EmbeddingCache load(const std::string& path) {
        std::string bin = read_file_bytes(path);
        ByteReader r(bin);
        if (r.bytes(4, "magic") != "PVLC") throw InputError("not an embedding cache: " + path);
        std::uint32_t version = r.u32("version");
        if (version != 1)
            throw InputError("unsupported cache version " + std::to_string(version));
        std::uint32_t dim = r.u32("dim");
        std::uint32_t count = r.u32("count");

        EmbeddingCache cache(path, dim);
        cache.rows_.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            std::vector<float> row(dim);
            for (std::uint32_t d = 0; d < dim; ++d) row[d] = r.f32("row value");
            cache.rows_.push_back(std::move(row));
        }

        std::string sidecar = read_file_bytes(ids_path_for(path));
        std::istringstream in(sidecar);
        std::string id;
        while (std::getline(in, id)) {
            if (cache.ids_.size() >= count)
                throw InputError("cache sidecar has more ids than rows: " + path);
            cache.index_.emplace(id, cache.ids_.size());
            cache.ids_.push_back(id);
        }
        if (cache.ids_.size() != count)
            throw InputError("cache sidecar id count " + std::to_string(cache.ids_.size()) +
                             " does not match row count " + std::to_string(count));
        return cache;
    }

private:
    std::string path_;
    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<std::vector<float>> rows_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Encodes every item once and writes the cache; idempotent (re-running with
// the same inputs produces byte-identical files). Refuses to overwrite a
// cache of a different dimension.
inline EmbeddingCache cache_embeddings(const std::vector<std::pair<std::string, ImageRecord>>& items,
                                       const FrozenEncoderPair& enc, const std::string& cache_path) {
    {
        std::unordered_map<std::string, int> seen;
        for (const auto& [id, rec] : items) {
            (void)rec;
            if (++seen[id] > 1) throw PreconditionError("cache_embeddings: duplicate item id '" + id + "'");
        }
    }
    if (std::filesystem::exists(cache_path)) {
        std::string head = read_file_bytes(cache_path);
        ByteReader r(head);
        if (r.bytes(4, "magic") == "PVLC") {
            r.u32("version");
            std::uint32_t existing_dim = r.u32("dim");
            if (existing_dim != enc.output_dim())
                throw InputError("cache_embeddings: existing cache at " + cache_path + " has dim " +
                                 std::to_string(existing_dim) + " but encoder dim is " +
                                 std::to_string(enc.output_dim()));
        }
    }
    EmbeddingCache cache(cache_path, enc.output_dim());
    for (const auto& [id, rec] : items) cache.put(id, enc.encode_image(rec));
    cache.save();
    return cache;
}

}  // namespace palavra
