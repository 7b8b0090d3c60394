#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "palavra/binio.hpp"
#include "palavra/errors.hpp"

namespace palavra {

// Named float32 tensor container used for model checkpoints and token files.
//
// Layout (all integers u32 little-endian):
//   "PVTA" | version=1 | tensor_count
//   per tensor: name_len | name bytes | ndim | dims[ndim] | float32 data
//   meta_len | meta bytes (UTF-8 text, JSON by convention)
//
// Tensors are stored in insertion order, so a writer that always inserts in
// a fixed order produces byte-identical archives for identical contents.
class TensorArchive {
public:
    struct Tensor {
        std::vector<std::uint32_t> dims;
        std::vector<float> data;
    };

    void add(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> data) {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        if (n != data.size())
            throw InputError("tensor archive: '" + name + "' dims do not match data size");
        if (index_.count(name)) throw InputError("tensor archive: duplicate tensor '" + name + "'");
        index_.emplace(name, order_.size());
        order_.push_back(name);
        tensors_.push_back(Tensor{std::move(dims), std::move(data)});
    }

    void add_f64(const std::string& name, std::vector<std::uint32_t> dims,
                 const std::vector<double>& data) {
        std::vector<float> f(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) f[i] = static_cast<float>(data[i]);
        add(name, std::move(dims), std::move(f));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InputError("tensor archive: no tensor named '" + name + "'");
        return tensors_[it->second];
    }

    std::vector<double> get_f64(const std::string& name) const {
        const Tensor& t = get(name);
        return std::vector<double>(t.data.begin(), t.data.end());
    }

    const std::vector<std::string>& names() const { return order_; }

    void set_metadata(std::string meta) { meta_ = std::move(meta); }
    const std::string& metadata() const { return meta_; }

    std::string serialize() const {
        std::string out;
        out += "PVTA";
        put_u32_le(out, 1);
        put_u32_le(out, static_cast<std::uint32_t>(order_.size()));
        for (std::size_t i = 0; i < order_.size(); ++i) {
            const std::string& name = order_[i];
            const Tensor& t = tensors_[i];
            put_u32_le(out, static_cast<std::uint32_t>(name.size()));
            out += name;
            put_u32_le(out, static_cast<std::uint32_t>(t.dims.size()));
            for (std::uint32_t d : t.dims) put_u32_le(out, d);
            for (float x : t.data) put_f32_le(out, x);
        }
        put_u32_le(out, static_cast<std::uint32_t>(meta_.size()));
        out += meta_;
        return out;
    }

    void save(const std::string& path) const { write_file_bytes(path, serialize()); }

    static TensorArchive deserialize(const std::string& bytes) {
        ByteReader r(bytes);
        if (r.bytes(4, "magic") != "PVTA") throw InputError("not a tensor archive");
        std::uint32_t version = r.u32("version");
        if (version != 1)
            throw InputError("unsupported tensor archive version " + std::to_string(version));
        std::uint32_t count = r.u32("tensor count");
        TensorArchive ar;
        for (std::uint32_t i = 0; i < count; ++i) {
            std::uint32_t name_len = r.u32("name length");
            std::string name = r.bytes(name_len, "name");
            std::uint32_t ndim = r.u32("ndim");
            std::vector<std::uint32_t> dims(ndim);
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < ndim; ++d) {
                dims[d] = r.u32("dim");
                n *= dims[d];
            }
            std::vector<float> data(n);
            for (std::size_t k = 0; k < n; ++k) data[k] = r.f32("tensor value");
            ar.add(name, std::move(dims), std::move(data));
        }
        std::uint32_t meta_len = r.u32("meta length");
        ar.meta_ = r.bytes(meta_len, "metadata");
        return ar;
    }

    static TensorArchive load(const std::string& path) {
        return deserialize(read_file_bytes(path));
    }

private:
    std::vector<std::string> order_;
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
    std::string meta_;
};

}  // namespace palavra
