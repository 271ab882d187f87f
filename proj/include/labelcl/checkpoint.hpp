#pragma once

// Checkpoint container and its binary file format.
//
// Layout (native-endian, single-platform format):
//   magic "LABELCLCKPT1" | u32 version | u8 precision tag (0 float, 1 double)
//   | config text | epoch | iteration | named parameter tensors
//   | optimizer step + first/second moments (double)
//   | prototype bank state | memory bank contents | rng raw state
//   | trailing 64-bit FNV-1a checksum over everything before it.
// save -> load -> save is byte-identical; a wrong-precision or corrupted
// file is rejected with a descriptive error.

#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "labelcl/autograd.hpp"
#include "labelcl/contrastive.hpp"
#include "labelcl/data.hpp"
#include "labelcl/error.hpp"
#include "labelcl/tensor.hpp"

namespace labelcl {

template <typename S>
struct CheckpointData {
    std::string config_text;
    int64_t epoch = 0;     // number of fully completed epochs
    int64_t iteration = 0; // global iteration count

    std::vector<std::string> param_names;
    std::vector<Tensor<S>> param_values;

    int64_t opt_step = 0;
    std::vector<std::vector<double>> opt_m, opt_v;

    // Prototype bank.
    int64_t proto_classes = 0, proto_dim = 0;
    std::vector<double> proto_sums, proto_min, proto_max, proto_display;
    std::vector<int64_t> proto_counts, proto_display_counts;
    std::vector<uint8_t> proto_display_defined;

    // Memory bank.
    int64_t bank_capacity = 0, bank_dim = 0;
    uint64_t bank_next_stamp = 0;
    std::vector<std::deque<BankEntry<S>>> bank_buffers;

    uint64_t rng_raw = 0;
};

namespace ckpt_detail {

constexpr char kMagic[12] = {'L', 'A', 'B', 'E', 'L', 'C', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

inline void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}
template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    put_bytes(out, &v, sizeof(T));
}
inline void put_string(std::string& out, const std::string& s) {
    put<uint64_t>(out, s.size());
    out.append(s);
}
template <typename T>
void put_vector(std::string& out, const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    put<uint64_t>(out, v.size());
    if (!v.empty()) put_bytes(out, v.data(), v.size() * sizeof(T));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;
    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint truncated or corrupt");
    }
    template <typename T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_string() {
        const uint64_t n = get<uint64_t>();
        need(n);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    template <typename T>
    std::vector<T> get_vector() {
        static_assert(std::is_trivially_copyable_v<T>);
        const uint64_t n = get<uint64_t>();
        need(n * sizeof(T));
        std::vector<T> v(n);
        if (n) std::memcpy(v.data(), buf.data() + pos, n * sizeof(T));
        pos += n * sizeof(T);
        return v;
    }
};

template <typename S>
constexpr uint8_t precision_tag() {
    return std::is_same_v<S, double> ? 1 : 0;
}

} // namespace ckpt_detail

template <typename S>
std::string serialize_checkpoint(const CheckpointData<S>& c) {
    using namespace ckpt_detail;
    std::string out;
    put_bytes(out, kMagic, sizeof(kMagic));
    put<uint32_t>(out, kVersion);
    put<uint8_t>(out, precision_tag<S>());
    put_string(out, c.config_text);
    put<int64_t>(out, c.epoch);
    put<int64_t>(out, c.iteration);

    if (c.param_names.size() != c.param_values.size())
        throw ContractError("checkpoint: parameter name/value count mismatch");
    put<uint64_t>(out, c.param_names.size());
    for (size_t i = 0; i < c.param_names.size(); ++i) {
        put_string(out, c.param_names[i]);
        const auto& t = c.param_values[i];
        put<uint32_t>(out, static_cast<uint32_t>(t.rank()));
        for (auto d : t.shape) put<int64_t>(out, d);
        put_vector<S>(out, t.data);
    }

    put<int64_t>(out, c.opt_step);
    put<uint64_t>(out, c.opt_m.size());
    for (const auto& m : c.opt_m) put_vector<double>(out, m);
    put<uint64_t>(out, c.opt_v.size());
    for (const auto& v : c.opt_v) put_vector<double>(out, v);

    put<int64_t>(out, c.proto_classes);
    put<int64_t>(out, c.proto_dim);
    put_vector<double>(out, c.proto_sums);
    put_vector<double>(out, c.proto_min);
    put_vector<double>(out, c.proto_max);
    put_vector<double>(out, c.proto_display);
    put_vector<int64_t>(out, c.proto_counts);
    put_vector<int64_t>(out, c.proto_display_counts);
    put_vector<uint8_t>(out, c.proto_display_defined);

    put<int64_t>(out, c.bank_capacity);
    put<int64_t>(out, c.bank_dim);
    put<uint64_t>(out, c.bank_next_stamp);
    put<uint64_t>(out, c.bank_buffers.size());
    for (const auto& buf : c.bank_buffers) {
        put<uint64_t>(out, buf.size());
        for (const auto& e : buf) {
            put<uint64_t>(out, e.stamp);
            put<int64_t>(out, e.image_id);
            put_vector<S>(out, e.vec);
        }
    }

    put<uint64_t>(out, c.rng_raw);
    const uint64_t checksum = fnv1a64(out.data(), out.size());
    put<uint64_t>(out, checksum);
    return out;
}

template <typename S>
CheckpointData<S> deserialize_checkpoint(const std::string& bytes) {
    using namespace ckpt_detail;
    if (bytes.size() < sizeof(kMagic) + sizeof(uint64_t)) throw DataError("checkpoint truncated or corrupt");
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic)");
    uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(uint64_t));
    if (fnv1a64(bytes.data(), bytes.size() - sizeof(uint64_t)) != stored)
        throw DataError("checkpoint checksum mismatch");

    Cursor cur{bytes, sizeof(kMagic)};
    const uint32_t version = cur.get<uint32_t>();
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    const uint8_t tag = cur.get<uint8_t>();
    if (tag != precision_tag<S>())
        throw DataError(std::string("checkpoint precision mismatch: file holds ") +
                        (tag == 1 ? "double" : "float") + ", expected " +
                        (precision_tag<S>() == 1 ? "double" : "float"));

    CheckpointData<S> c;
    c.config_text = cur.get_string();
    c.epoch = cur.get<int64_t>();
    c.iteration = cur.get<int64_t>();

    const uint64_t n_params = cur.get<uint64_t>();
    for (uint64_t i = 0; i < n_params; ++i) {
        c.param_names.push_back(cur.get_string());
        const uint32_t rank = cur.get<uint32_t>();
        Shape sh;
        for (uint32_t r = 0; r < rank; ++r) sh.push_back(cur.get<int64_t>());
        auto data = cur.template get_vector<S>();
        if (static_cast<int64_t>(data.size()) != shape_numel(sh))
            throw DataError("checkpoint parameter " + c.param_names.back() + " has inconsistent shape");
        c.param_values.emplace_back(std::move(sh), std::move(data));
    }

    c.opt_step = cur.get<int64_t>();
    const uint64_t n_m = cur.get<uint64_t>();
    for (uint64_t i = 0; i < n_m; ++i) c.opt_m.push_back(cur.template get_vector<double>());
    const uint64_t n_v = cur.get<uint64_t>();
    for (uint64_t i = 0; i < n_v; ++i) c.opt_v.push_back(cur.template get_vector<double>());

    c.proto_classes = cur.get<int64_t>();
    c.proto_dim = cur.get<int64_t>();
    c.proto_sums = cur.template get_vector<double>();
    c.proto_min = cur.template get_vector<double>();
    c.proto_max = cur.template get_vector<double>();
    c.proto_display = cur.template get_vector<double>();
    c.proto_counts = cur.template get_vector<int64_t>();
    c.proto_display_counts = cur.template get_vector<int64_t>();
    c.proto_display_defined = cur.template get_vector<uint8_t>();

    c.bank_capacity = cur.get<int64_t>();
    c.bank_dim = cur.get<int64_t>();
    c.bank_next_stamp = cur.get<uint64_t>();
    const uint64_t n_classes = cur.get<uint64_t>();
    for (uint64_t j = 0; j < n_classes; ++j) {
        std::deque<BankEntry<S>> buf;
        const uint64_t n_entries = cur.get<uint64_t>();
        for (uint64_t e = 0; e < n_entries; ++e) {
            BankEntry<S> entry;
            entry.stamp = cur.get<uint64_t>();
            entry.image_id = cur.get<int64_t>();
            entry.vec = cur.template get_vector<S>();
            buf.push_back(std::move(entry));
        }
        c.bank_buffers.push_back(std::move(buf));
    }

    c.rng_raw = cur.get<uint64_t>();
    if (cur.pos != bytes.size() - sizeof(uint64_t))
        throw DataError("checkpoint has trailing bytes");
    return c;
}

template <typename S>
void save_checkpoint(const std::string& path, const CheckpointData<S>& c) {
    const std::string bytes = serialize_checkpoint(c);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

template <typename S>
CheckpointData<S> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint<S>(bytes);
}

// Peeks the precision tag so callers can dispatch to the right scalar type.
inline uint8_t checkpoint_precision_tag(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char header[17];
    f.read(header, sizeof(header));
    if (!f || std::memcmp(header, ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic)) != 0)
        throw DataError("not a checkpoint file (bad magic)");
    return static_cast<uint8_t>(header[16]);
}

} // namespace labelcl
