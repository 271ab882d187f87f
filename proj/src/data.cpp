#include "labelcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace labelcl {

namespace {

constexpr uint64_t kSignatureStream = 0x5349474e41545552ull; // "SIGNATUR"
constexpr uint64_t kLabelStream = 0x4c4142454c53ull;         // "LABELS"
constexpr uint64_t kNoiseStream = 0x4e4f495345ull;           // "NOISE"
constexpr uint64_t kPilotStream = 0x50494c4f54ull;           // "PILOT"

struct TileGrid {
    int rows = 1, cols = 1;
};

TileGrid tile_grid(const SyntheticSpec& spec) {
    const int L = spec.num_classes;
    int r = static_cast<int>(std::floor(std::sqrt(static_cast<double>(L))));
    while (r > 1 && L % r != 0) --r;
    TileGrid g{r, L / r};
    if (spec.grid_h < g.rows || spec.grid_w < g.cols)
        throw ParamError("synthetic spec: grid " + std::to_string(spec.grid_h) + "x" +
                         std::to_string(spec.grid_w) + " cannot hold a " + std::to_string(g.rows) +
                         "x" + std::to_string(g.cols) + " tile partition for " + std::to_string(L) +
                         " classes");
    return g;
}

// Boost multipliers as a dense symmetric matrix of (1 + boost) factors.
std::vector<double> boost_matrix(const SyntheticSpec& spec) {
    const int L = spec.num_classes;
    std::vector<double> m(static_cast<size_t>(L) * L, 1.0);
    for (const auto& cb : spec.cooccur) {
        m[static_cast<size_t>(cb.a) * L + cb.b] = 1.0 + cb.boost;
        m[static_cast<size_t>(cb.b) * L + cb.a] = 1.0 + cb.boost;
    }
    return m;
}

std::vector<uint8_t> draw_labels(RngState& rng, const SyntheticSpec& spec, double base,
                                 const std::vector<double>& boosts) {
    const int L = spec.num_classes;
    std::vector<uint8_t> y(static_cast<size_t>(L), 0);
    for (int j = 0; j < L; ++j) {
        double u = rng.uniform(); // always one draw per class for stream stability
        double p = base;
        for (int k = 0; k < j; ++k)
            if (y[static_cast<size_t>(k)]) p *= boosts[static_cast<size_t>(j) * L + k];
        p = std::min(p, 1.0);
        y[static_cast<size_t>(j)] = u < p ? 1 : 0;
    }
    return y;
}

// With co-occurrence boosts the raw base rate overshoots the target
// cardinality, so calibrate it against a seeded pilot simulation.
double calibrated_base(const SyntheticSpec& spec, const std::vector<double>& boosts) {
    double base = spec.kappa / static_cast<double>(spec.num_classes);
    if (spec.cooccur.empty()) return base;
    RngState pilot(mix_seed(spec.seed, kPilotStream));
    for (int round = 0; round < 3; ++round) {
        const int trials = 4000;
        double total = 0.0;
        for (int t = 0; t < trials; ++t) {
            auto y = draw_labels(pilot, spec, base, boosts);
            for (uint8_t v : y) total += v;
        }
        double mean = total / static_cast<double>(trials);
        if (mean > 0.0) base *= spec.kappa / mean;
        base = std::min(base, 1.0);
    }
    return base;
}

void write_header_kv(std::ostream& out, const SyntheticSpec& s) {
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        return std::string(buf);
    };
    out << "classes = " << s.num_classes << "\n";
    out << "grid_h = " << s.grid_h << "\n";
    out << "grid_w = " << s.grid_w << "\n";
    out << "grid_c = " << s.grid_c << "\n";
    out << "kappa = " << num(s.kappa) << "\n";
    out << "alpha = " << num(s.alpha) << "\n";
    out << "noise = " << num(s.noise) << "\n";
    out << "train_count = " << s.train_count << "\n";
    out << "test_count = " << s.test_count << "\n";
    out << "seed = " << s.seed << "\n";
    out << "cooccur = ";
    for (size_t i = 0; i < s.cooccur.size(); ++i) {
        if (i) out << ",";
        std::snprintf(buf, sizeof(buf), "%d:%d:%.17g", s.cooccur[i].a, s.cooccur[i].b,
                      s.cooccur[i].boost);
        out << buf;
    }
    out << "\n";
}

void append_sample_bytes(std::string& payload, const Sample& s) {
    payload.append(reinterpret_cast<const char*>(s.labels.data()), s.labels.size());
    payload.append(reinterpret_cast<const char*>(s.grid.data.data()),
                   s.grid.data.size() * sizeof(double));
}

} // namespace

uint64_t fnv1a64(const void* data, size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 14695981039346656037ull;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

TileRect class_tile(const SyntheticSpec& spec, int cls) {
    if (cls < 0 || cls >= spec.num_classes)
        throw ParamError("class_tile: class " + std::to_string(cls) + " out of range");
    TileGrid g = tile_grid(spec);
    const int br = cls / g.cols, bc = cls % g.cols;
    TileRect t;
    t.r0 = br * spec.grid_h / g.rows;
    t.r1 = (br + 1) * spec.grid_h / g.rows;
    t.c0 = bc * spec.grid_w / g.cols;
    t.c1 = (bc + 1) * spec.grid_w / g.cols;
    return t;
}

std::vector<Tensor<double>> class_signatures(const SyntheticSpec& spec) {
    RngState rng(mix_seed(spec.seed, kSignatureStream));
    std::vector<Tensor<double>> sigs;
    sigs.reserve(static_cast<size_t>(spec.num_classes));
    for (int j = 0; j < spec.num_classes; ++j) {
        TileRect t = class_tile(spec, j);
        Tensor<double> sig({t.r1 - t.r0, t.c1 - t.c0, spec.grid_c});
        for (auto& v : sig.data) v = rng.normal();
        sigs.push_back(std::move(sig));
    }
    return sigs;
}

Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    tile_grid(spec); // validates the partition fits
    const auto boosts = boost_matrix(spec);
    const double base = calibrated_base(spec, boosts);
    const auto sigs = class_signatures(spec);

    RngState label_rng(mix_seed(spec.seed, kLabelStream));
    RngState noise_rng(mix_seed(spec.seed, kNoiseStream));

    Dataset ds;
    ds.spec = spec;
    int64_t id = 0;
    auto make_sample = [&]() {
        Sample s;
        s.id = id++;
        s.labels = draw_labels(label_rng, spec, base, boosts);
        s.grid = Tensor<double>::zeros({spec.grid_h, spec.grid_w, spec.grid_c});
        for (int j = 0; j < spec.num_classes; ++j) {
            if (!s.labels[static_cast<size_t>(j)]) continue;
            TileRect t = class_tile(spec, j);
            const auto& sig = sigs[static_cast<size_t>(j)];
            for (int r = t.r0; r < t.r1; ++r)
                for (int c = t.c0; c < t.c1; ++c)
                    for (int ch = 0; ch < spec.grid_c; ++ch)
                        s.grid.at(r, c, ch) +=
                            spec.alpha * sig.at(r - t.r0, c - t.c0, ch);
        }
        if (spec.noise > 0.0)
            for (auto& v : s.grid.data) v += spec.noise * noise_rng.normal();
        return s;
    };
    ds.train.reserve(static_cast<size_t>(spec.train_count));
    for (int i = 0; i < spec.train_count; ++i) ds.train.push_back(make_sample());
    ds.test.reserve(static_cast<size_t>(spec.test_count));
    for (int i = 0; i < spec.test_count; ++i) ds.test.push_back(make_sample());
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::string payload;
    const auto& s = ds.spec;
    payload.reserve((ds.train.size() + ds.test.size()) *
                    (static_cast<size_t>(s.num_classes) +
                     static_cast<size_t>(s.grid_h) * s.grid_w * s.grid_c * sizeof(double)));
    for (const auto& smp : ds.train) append_sample_bytes(payload, smp);
    for (const auto& smp : ds.test) append_sample_bytes(payload, smp);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset file: " + path);
    out << "labelcl-dataset v1\n";
    write_header_kv(out, s);
    out << "payload_bytes = " << payload.size() << "\n";
    out << "checksum_fnv1a64 = " << fnv1a64(payload.data(), payload.size()) << "\n";
    out << "---\n";
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IoError("failed writing dataset file: " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset file: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != "labelcl-dataset v1")
        throw DataError("corrupt dataset " + path + ": bad magic line '" + magic + "'");

    SyntheticSpec spec;
    size_t payload_bytes = 0;
    uint64_t checksum = 0;
    bool have_bytes = false, have_sum = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line == "---") break;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("corrupt dataset " + path + ": malformed header line '" + line + "'");
        auto trim = [](std::string v) {
            size_t b = v.find_first_not_of(" \t");
            size_t e = v.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
        try {
            if (key == "classes") spec.num_classes = std::stoi(val);
            else if (key == "grid_h") spec.grid_h = std::stoi(val);
            else if (key == "grid_w") spec.grid_w = std::stoi(val);
            else if (key == "grid_c") spec.grid_c = std::stoi(val);
            else if (key == "kappa") spec.kappa = std::stod(val);
            else if (key == "alpha") spec.alpha = std::stod(val);
            else if (key == "noise") spec.noise = std::stod(val);
            else if (key == "train_count") spec.train_count = std::stoi(val);
            else if (key == "test_count") spec.test_count = std::stoi(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else if (key == "cooccur") {
                spec.cooccur.clear();
                std::stringstream ss(val);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    if (item.empty()) continue;
                    CooccurBoost cb;
                    if (std::sscanf(item.c_str(), "%d:%d:%lg", &cb.a, &cb.b, &cb.boost) != 3)
                        throw DataError("corrupt dataset " + path + ": bad cooccur entry '" + item + "'");
                    spec.cooccur.push_back(cb);
                }
            }
            else if (key == "payload_bytes") { payload_bytes = std::stoull(val); have_bytes = true; }
            else if (key == "checksum_fnv1a64") { checksum = std::stoull(val); have_sum = true; }
            else throw DataError("corrupt dataset " + path + ": unknown header key '" + key + "'");
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("corrupt dataset " + path + ": bad value for '" + key + "'");
        }
    }
    if (!have_bytes || !have_sum)
        throw DataError("corrupt dataset " + path + ": missing payload size or checksum");

    std::string payload(payload_bytes, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
    if (static_cast<size_t>(in.gcount()) != payload_bytes)
        throw DataError("corrupt dataset " + path + ": truncated payload (expected " +
                        std::to_string(payload_bytes) + " bytes, got " +
                        std::to_string(in.gcount()) + ")");
    if (fnv1a64(payload.data(), payload.size()) != checksum)
        throw DataError("corrupt dataset " + path + ": checksum mismatch");

    const size_t sample_bytes = static_cast<size_t>(spec.num_classes) +
                                static_cast<size_t>(spec.grid_h) * spec.grid_w * spec.grid_c *
                                    sizeof(double);
    const size_t total = static_cast<size_t>(spec.train_count) + spec.test_count;
    if (payload_bytes != sample_bytes * total)
        throw DataError("corrupt dataset " + path + ": payload size does not match sample counts");

    Dataset ds;
    ds.spec = spec;
    const char* p = payload.data();
    int64_t id = 0;
    auto read_sample = [&]() {
        Sample smp;
        smp.id = id++;
        smp.labels.resize(static_cast<size_t>(spec.num_classes));
        std::memcpy(smp.labels.data(), p, smp.labels.size());
        p += smp.labels.size();
        smp.grid = Tensor<double>({spec.grid_h, spec.grid_w, spec.grid_c});
        std::memcpy(smp.grid.data.data(), p, smp.grid.data.size() * sizeof(double));
        p += smp.grid.data.size() * sizeof(double);
        return smp;
    };
    ds.train.reserve(static_cast<size_t>(spec.train_count));
    for (int i = 0; i < spec.train_count; ++i) ds.train.push_back(read_sample());
    ds.test.reserve(static_cast<size_t>(spec.test_count));
    for (int i = 0; i < spec.test_count; ++i) ds.test.push_back(read_sample());
    return ds;
}

std::vector<std::vector<int64_t>> batch_order(int64_t count, int64_t batch_size,
                                              uint64_t shuffle_seed, bool shuffle) {
    if (batch_size < 1) throw ParamError("batch_order: batch_size must be >= 1");
    if (count < 0) throw ParamError("batch_order: negative count");
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
    if (shuffle) {
        RngState rng(shuffle_seed);
        for (int64_t i = count - 1; i > 0; --i) {
            int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
    }
    std::vector<std::vector<int64_t>> batches;
    for (int64_t start = 0; start < count; start += batch_size) {
        int64_t end = std::min(count, start + batch_size);
        batches.emplace_back(idx.begin() + start, idx.begin() + end);
    }
    return batches;
}

} // namespace labelcl
