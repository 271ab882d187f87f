#include "labelcl/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace labelcl {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParamError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t parse_int(const std::string& key, const std::string& v) {
    int64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ParamError("config key '" + key + "': expected an integer, got '" + v + "'");
    return x;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ParamError("config key '" + key + "': expected an unsigned integer, got '" + v + "'");
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ParamError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

// "a:b:boost,a:b:boost,..."
std::vector<CooccurBoost> parse_cooccur(const std::string& key, const std::string& v) {
    std::vector<CooccurBoost> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        size_t c1 = item.find(':');
        size_t c2 = item.find(':', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw ParamError("config key '" + key + "': expected a:b:boost entries, got '" + item + "'");
        CooccurBoost cb;
        cb.a = static_cast<int>(parse_int(key, trim(item.substr(0, c1))));
        cb.b = static_cast<int>(parse_int(key, trim(item.substr(c1 + 1, c2 - c1 - 1))));
        cb.boost = parse_double(key, trim(item.substr(c2 + 1)));
        out.push_back(cb);
    }
    return out;
}

std::string cooccur_to_text(const std::vector<CooccurBoost>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d:%d:%.17g", v[i].a, v[i].b, v[i].boost);
        s += buf;
    }
    return s;
}

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

void SyntheticSpec::validate() const {
    if (num_classes < 1) throw ParamError("synthetic spec: num_classes must be >= 1");
    if (grid_h < 1 || grid_w < 1 || grid_c < 1)
        throw ParamError("synthetic spec: grid dimensions must be >= 1");
    if (!(kappa > 0.0) || kappa >= static_cast<double>(num_classes))
        throw ParamError("synthetic spec: kappa must lie in (0, num_classes)");
    if (noise < 0.0) throw ParamError("synthetic spec: noise must be >= 0");
    if (train_count < 0 || test_count < 0)
        throw ParamError("synthetic spec: sample counts must be >= 0");
    if (static_cast<int64_t>(grid_h) * grid_w < num_classes)
        throw ParamError("synthetic spec: grid has fewer cells than classes; no disjoint regions exist");
    for (const auto& cb : cooccur) {
        if (cb.a < 0 || cb.a >= num_classes || cb.b < 0 || cb.b >= num_classes || cb.a == cb.b)
            throw ParamError("synthetic spec: cooccur pair (" + std::to_string(cb.a) + "," +
                             std::to_string(cb.b) + ") invalid");
        if (cb.boost < 0.0) throw ParamError("synthetic spec: cooccur boost must be >= 0");
    }
}

void RunConfig::validate() const {
    if (d_model < 1 || d_proj < 1 || d_hidden < 1) throw ParamError("config: model widths must be >= 1");
    if (heads < 1 || d_model % heads != 0)
        throw ParamError("config: heads must divide d_model (" + std::to_string(d_model) + " % " +
                         std::to_string(heads) + " != 0)");
    if (d_model % 4 != 0)
        throw ParamError("config: d_model must be divisible by 4 for the 2D positional encoding");
    if (enc_layers < 1 || dec_layers < 1) throw ParamError("config: layer counts must be >= 1");
    if (!(tau > 0.0)) throw ParamError("config: tau must be > 0");
    if (!(epsilon > 0.0) || !(epsilon < 1.0)) throw ParamError("config: epsilon must lie in (0, 1)");
    if (bank_capacity < 1) throw ParamError("config: bank_capacity must be >= 1");
    if (!(peak_lr > 0.0)) throw ParamError("config: peak_lr must be > 0");
    if (weight_decay < 0.0) throw ParamError("config: weight_decay must be >= 0");
    if (epochs < 1) throw ParamError("config: epochs must be >= 1");
    if (batch_size < 1) throw ParamError("config: batch_size must be >= 1");
    if (!(warmup_frac > 0.0) || !(warmup_frac < 1.0))
        throw ParamError("config: warmup_frac must lie in (0, 1)");
    if (dataset_path.empty()) synth.validate();
}

void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "d_model") cfg.d_model = static_cast<int>(parse_int(key, value));
    else if (key == "d_proj") cfg.d_proj = static_cast<int>(parse_int(key, value));
    else if (key == "d_hidden") cfg.d_hidden = static_cast<int>(parse_int(key, value));
    else if (key == "heads") cfg.heads = static_cast<int>(parse_int(key, value));
    else if (key == "enc_layers") cfg.enc_layers = static_cast<int>(parse_int(key, value));
    else if (key == "dec_layers") cfg.dec_layers = static_cast<int>(parse_int(key, value));
    else if (key == "query_self_attn") cfg.query_self_attn = parse_bool(key, value);
    else if (key == "activation") {
        if (value == "relu") cfg.activation = Activation::Relu;
        else if (value == "gelu") cfg.activation = Activation::Gelu;
        else throw ParamError("config key 'activation': expected relu or gelu, got '" + value + "'");
    }
    else if (key == "sscl_on") cfg.sscl_on = parse_bool(key, value);
    else if (key == "pscl_on") cfg.pscl_on = parse_bool(key, value);
    else if (key == "tau") cfg.tau = parse_double(key, value);
    else if (key == "epsilon") cfg.epsilon = parse_double(key, value);
    else if (key == "bank_capacity") cfg.bank_capacity = static_cast<int>(parse_int(key, value));
    else if (key == "normalize_projections") cfg.normalize_projections = parse_bool(key, value);
    else if (key == "w_bce") cfg.w_bce = parse_double(key, value);
    else if (key == "w_sscl") cfg.w_sscl = parse_double(key, value);
    else if (key == "w_pscl") cfg.w_pscl = parse_double(key, value);
    else if (key == "peak_lr") cfg.peak_lr = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "warmup_frac") cfg.warmup_frac = parse_double(key, value);
    else if (key == "dataset_path") cfg.dataset_path = value;
    else if (key == "data_classes") cfg.synth.num_classes = static_cast<int>(parse_int(key, value));
    else if (key == "data_grid_h") cfg.synth.grid_h = static_cast<int>(parse_int(key, value));
    else if (key == "data_grid_w") cfg.synth.grid_w = static_cast<int>(parse_int(key, value));
    else if (key == "data_grid_c") cfg.synth.grid_c = static_cast<int>(parse_int(key, value));
    else if (key == "data_kappa") cfg.synth.kappa = parse_double(key, value);
    else if (key == "data_alpha") cfg.synth.alpha = parse_double(key, value);
    else if (key == "data_noise") cfg.synth.noise = parse_double(key, value);
    else if (key == "data_train_count") cfg.synth.train_count = static_cast<int>(parse_int(key, value));
    else if (key == "data_test_count") cfg.synth.test_count = static_cast<int>(parse_int(key, value));
    else if (key == "data_seed") cfg.synth.seed = parse_u64(key, value);
    else if (key == "data_cooccur") cfg.synth.cooccur = parse_cooccur(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "precision") {
        if (value == "train") cfg.precision = Precision::Train;
        else if (value == "high") cfg.precision = Precision::High;
        else throw ParamError("config key 'precision': expected train or high, got '" + value + "'");
    }
    else if (key == "deterministic") cfg.deterministic = parse_bool(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else throw ParamError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParamError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        apply_config_kv(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string precision_name(Precision p) { return p == Precision::High ? "high" : "train"; }
std::string activation_name(Activation a) { return a == Activation::Gelu ? "gelu" : "relu"; }

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream o;
    o << "# model\n";
    o << "d_model = " << cfg.d_model << "\n";
    o << "d_proj = " << cfg.d_proj << "\n";
    o << "d_hidden = " << cfg.d_hidden << "\n";
    o << "heads = " << cfg.heads << "\n";
    o << "enc_layers = " << cfg.enc_layers << "\n";
    o << "dec_layers = " << cfg.dec_layers << "\n";
    o << "query_self_attn = " << (cfg.query_self_attn ? "true" : "false") << "\n";
    o << "activation = " << activation_name(cfg.activation) << "\n";
    o << "# losses\n";
    o << "sscl_on = " << (cfg.sscl_on ? "true" : "false") << "\n";
    o << "pscl_on = " << (cfg.pscl_on ? "true" : "false") << "\n";
    o << "tau = " << fmt_double(cfg.tau) << "\n";
    o << "epsilon = " << fmt_double(cfg.epsilon) << "\n";
    o << "bank_capacity = " << cfg.bank_capacity << "\n";
    o << "normalize_projections = " << (cfg.normalize_projections ? "true" : "false") << "\n";
    o << "w_bce = " << fmt_double(cfg.w_bce) << "\n";
    o << "w_sscl = " << fmt_double(cfg.w_sscl) << "\n";
    o << "w_pscl = " << fmt_double(cfg.w_pscl) << "\n";
    o << "# optimizer (reference setting: 5e-5 at batch 64; desk default is retuned)\n";
    o << "peak_lr = " << fmt_double(cfg.peak_lr) << "\n";
    o << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
    o << "epochs = " << cfg.epochs << "\n";
    o << "batch_size = " << cfg.batch_size << "\n";
    o << "warmup_frac = " << fmt_double(cfg.warmup_frac) << "\n";
    o << "# data\n";
    o << "dataset_path = " << cfg.dataset_path << "\n";
    o << "data_classes = " << cfg.synth.num_classes << "\n";
    o << "data_grid_h = " << cfg.synth.grid_h << "\n";
    o << "data_grid_w = " << cfg.synth.grid_w << "\n";
    o << "data_grid_c = " << cfg.synth.grid_c << "\n";
    o << "data_kappa = " << fmt_double(cfg.synth.kappa) << "\n";
    o << "data_alpha = " << fmt_double(cfg.synth.alpha) << "\n";
    o << "data_noise = " << fmt_double(cfg.synth.noise) << "\n";
    o << "data_train_count = " << cfg.synth.train_count << "\n";
    o << "data_test_count = " << cfg.synth.test_count << "\n";
    o << "data_seed = " << cfg.synth.seed << "\n";
    o << "data_cooccur = " << cooccur_to_text(cfg.synth.cooccur) << "\n";
    o << "# run\n";
    o << "seed = " << cfg.seed << "\n";
    o << "precision = " << precision_name(cfg.precision) << "\n";
    o << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n";
    o << "out_dir = " << cfg.out_dir << "\n";
    return o.str();
}

void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write config file: " + path);
    out << config_to_text(cfg);
    if (!out) throw IoError("failed writing config file: " + path);
}

} // namespace labelcl
