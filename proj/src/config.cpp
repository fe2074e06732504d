#include "hieremb/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hieremb/errors.hpp"

namespace hieremb {

namespace {

enum class Kind { Int, Double, Str, IntList };

struct KeyInfo {
    const char* key;
    const char* default_value;
    Kind kind;
};

// every known key with its default
const KeyInfo kRegistry[] = {
    {"grid.origin_x", "0", Kind::Double},
    {"grid.origin_y", "0", Kind::Double},
    {"grid.levels", "10km:10000,1km:1000,125m:125", Kind::Str},
    {"grid.ref_latitude", "35", Kind::Double},
    {"time.utc_offset", "32400", Kind::Int},
    {"time.tod_buckets", "24", Kind::Int},
    {"time.dur_edges", "600,1800,3600,7200,14400,28800,57600", Kind::IntList},
    {"data.staypoints", "", Kind::Str},
    {"data.labels", "", Kind::Str},
    {"data.place_classes", "", Kind::Str},
    {"data.max_seq_len", "64", Kind::Int},
    {"data.malformed_threshold", "0.01", Kind::Double},
    {"dataset.name", "synth", Kind::Str},
    {"split.seed", "7", Kind::Int},
    {"split.val", "0.1", Kind::Double},
    {"split.test", "0.1", Kind::Double},
    {"model.methods", "hier,hier1km,hier10km,nonhier", Kind::Str},
    {"model.d", "64", Kind::Int},
    {"model.hidden", "128", Kind::Int},
    {"model.layers", "2", Kind::Int},
    {"model.readout", "64", Kind::Int},
    {"model.emb_dow", "4", Kind::Int},
    {"model.emb_tod", "8", Kind::Int},
    {"model.emb_dur", "4", Kind::Int},
    {"train.epochs", "40", Kind::Int},
    {"train.batch", "32", Kind::Int},
    {"train.avg_interval", "10", Kind::Int},
    {"train.lr", "0.001", Kind::Double},
    {"train.beta1", "0.9", Kind::Double},
    {"train.beta2", "0.999", Kind::Double},
    {"train.eps", "1e-8", Kind::Double},
    {"train.clip", "5", Kind::Double},
    {"train.seeds", "1,2,3,4,5,6,7,8,9,10", Kind::IntList},
    {"train.avg_moments", "0", Kind::Int},
    {"synth.level1_per_side", "2", Kind::Int},
    {"synth.places_per_leaf", "10", Kind::Int},
    {"synth.users", "1000", Kind::Int},
    {"synth.mean_seq_len", "12", Kind::Double},
    {"synth.zipf_exponent", "1.1", Kind::Double},
    {"synth.alpha", "0.9", Kind::Double},
    {"synth.classes", "5", Kind::Int},
    {"synth.profile_noise", "0.25", Kind::Double},
    {"synth.seed", "1", Kind::Int},
    {"probe.lr", "0.01", Kind::Double},
    {"probe.epochs", "200", Kind::Int},
    {"probe.split_seed", "11", Kind::Int},
    {"probe.rural_percentile", "0.3", Kind::Double},
    {"probe.labels_kind", "place_class", Kind::Str},
    {"landuse.merge", "", Kind::Str},
    {"runtime.threads", "2", Kind::Int},
    {"runtime.out", "out", Kind::Str},
};

const KeyInfo* find_key(const std::string& key) {
    for (const auto& info : kRegistry)
        if (key == info.key) return &info;
    return nullptr;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::int64_t to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        std::int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        auto comma = v.find(',', pos);
        if (comma == std::string::npos) comma = v.size();
        auto item = trim(v.substr(pos, comma - pos));
        if (!item.empty()) out.push_back(item);
        pos = comma + 1;
    }
    return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    for (const auto& info : kRegistry) cfg.values_[info.key] = info.default_value;
    return cfg;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg = defaults();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const KeyInfo* info = find_key(key);
    if (!info) throw ConfigError("config: unknown key '" + key + "'");
    // validate the syntax eagerly
    switch (info->kind) {
        case Kind::Int:
            to_int(key, value);
            break;
        case Kind::Double:
            to_double(key, value);
            break;
        case Kind::IntList:
            for (const auto& item : split_list(value)) to_int(key, item);
            break;
        case Kind::Str:
            break;
    }
    values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
    return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const { return to_int(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return to_double(key, get(key)); }

std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : split_list(get(key))) out.push_back(to_int(key, item));
    return out;
}

std::string RunConfig::canonical() const {
    std::string out;
    char buf[64];
    for (const auto& [key, value] : values_) {  // std::map: already sorted
        if (key.rfind("runtime.", 0) == 0) continue;
        const KeyInfo* info = find_key(key);
        out += key;
        out += '=';
        switch (info->kind) {
            case Kind::Int:
                std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(to_int(key, value)));
                out += buf;
                break;
            case Kind::Double:
                std::snprintf(buf, sizeof(buf), "%.17g", to_double(key, value));
                out += buf;
                break;
            case Kind::IntList: {
                bool first = true;
                for (const auto& item : split_list(value)) {
                    if (!first) out += ',';
                    std::snprintf(buf, sizeof(buf), "%lld",
                                  static_cast<long long>(to_int(key, item)));
                    out += buf;
                    first = false;
                }
                break;
            }
            case Kind::Str:
                out += value;
                break;
        }
        out += '\n';
    }
    return out;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

GridSpec RunConfig::grid() const {
    std::vector<GridLevel> levels;
    for (const auto& item : split_list(get("grid.levels"))) {
        auto colon = item.rfind(':');
        if (colon == std::string::npos)
            throw ConfigError("config: grid.levels entries must be name:meters");
        levels.push_back(
            {trim(item.substr(0, colon)), to_double("grid.levels", trim(item.substr(colon + 1)))});
    }
    return GridSpec(get_double("grid.origin_x"), get_double("grid.origin_y"), std::move(levels));
}

BucketConfig RunConfig::buckets() const {
    BucketConfig b;
    b.utc_offset_seconds = get_int("time.utc_offset");
    b.tod_buckets = static_cast<std::int32_t>(get_int("time.tod_buckets"));
    if (b.tod_buckets < 1 || b.tod_buckets > 86400)
        throw ConfigError("config: time.tod_buckets out of range");
    b.dur_edges.clear();
    for (std::int64_t e : get_int_list("time.dur_edges")) b.dur_edges.push_back(e);
    if (!std::is_sorted(b.dur_edges.begin(), b.dur_edges.end()))
        throw ConfigError("config: time.dur_edges must be ascending");
    return b;
}

SynthConfig RunConfig::synth() const {
    SynthConfig s;
    s.level1_per_side = static_cast<std::int32_t>(get_int("synth.level1_per_side"));
    s.places_per_leaf = static_cast<std::int32_t>(get_int("synth.places_per_leaf"));
    s.users = static_cast<std::int32_t>(get_int("synth.users"));
    s.mean_seq_len = get_double("synth.mean_seq_len");
    s.zipf_exponent = get_double("synth.zipf_exponent");
    s.alpha = get_double("synth.alpha");
    s.classes = static_cast<std::int32_t>(get_int("synth.classes"));
    s.profile_noise = get_double("synth.profile_noise");
    s.seed = static_cast<std::uint64_t>(get_int("synth.seed"));
    return s;
}

ModelConfig RunConfig::model(const std::string& method) const {
    ModelConfig m;
    m.method = method;
    m.d = static_cast<std::size_t>(get_int("model.d"));
    m.hidden = static_cast<std::size_t>(get_int("model.hidden"));
    m.layers = static_cast<std::size_t>(get_int("model.layers"));
    m.readout = static_cast<std::size_t>(get_int("model.readout"));
    m.emb_dow = static_cast<std::size_t>(get_int("model.emb_dow"));
    m.emb_tod = static_cast<std::size_t>(get_int("model.emb_tod"));
    m.emb_dur = static_cast<std::size_t>(get_int("model.emb_dur"));
    m.dow_vocab = 7;
    m.tod_vocab = static_cast<std::size_t>(get_int("time.tod_buckets"));
    m.dur_vocab = get_int_list("time.dur_edges").size() + 1;
    m.epochs = static_cast<std::size_t>(get_int("train.epochs"));
    m.batch_size = static_cast<std::size_t>(get_int("train.batch"));
    m.avg_interval = static_cast<std::size_t>(get_int("train.avg_interval"));
    m.lr = get_double("train.lr");
    m.beta1 = get_double("train.beta1");
    m.beta2 = get_double("train.beta2");
    m.eps = get_double("train.eps");
    m.clip = get_double("train.clip");
    m.avg_moments = get_int("train.avg_moments") != 0;
    m.validate();
    return m;
}

std::vector<std::string> RunConfig::methods() const {
    auto out = split_list(get("model.methods"));
    if (out.empty()) throw ConfigError("config: model.methods is empty");
    return out;
}

std::vector<std::uint64_t> RunConfig::seeds() const {
    std::vector<std::uint64_t> out;
    for (std::int64_t s : get_int_list("train.seeds")) {
        if (s < 0) throw ConfigError("config: seeds must be non-negative");
        out.push_back(static_cast<std::uint64_t>(s));
    }
    if (out.empty()) throw ConfigError("config: train.seeds is empty");
    return out;
}

}  // namespace hieremb
