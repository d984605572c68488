#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "utal/ccta.hpp"
#include "utal/datagen.hpp"
#include "utal/errors.hpp"
#include "utal/trainer.hpp"

namespace utal {

/// Minimal INI reader: [section] headers, key = value lines, full-line
/// comments starting with '#' or ';'. Duplicate keys overwrite.
struct IniFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return {};
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    static IniFile parse(std::istream& in, const std::string& origin = "<stream>") {
        IniFile ini;
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
                section = trim(t.substr(1, t.size() - 2));
                ini.sections[section];
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside any section");
            ini.sections[section][key] = value;
        }
        return ini;
    }

    static IniFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        return parse(in, path);
    }
};

namespace detail {

/// Typed view over one section that tracks consumed keys so leftovers can be
/// rejected by name.
class SectionReader {
  public:
    SectionReader(const IniFile& ini, const std::string& name) : name_(name) {
        const auto it = ini.sections.find(name);
        if (it != ini.sections.end()) kv_ = &it->second;
    }

    bool present() const { return kv_ != nullptr; }
    bool has(const std::string& key) const { return kv_ != nullptr && kv_->count(key) > 0; }

    std::optional<std::string> raw(const std::string& key) {
        if (!has(key)) return std::nullopt;
        used_.insert(key);
        return kv_->at(key);
    }

    std::string require(const std::string& key) {
        auto v = raw(key);
        if (!v.has_value()) throw ConfigError("config: missing required key " + name_ + "." + key);
        return *v;
    }

    template <typename T>
    T get(const std::string& key, T fallback) {
        auto v = raw(key);
        if (!v.has_value()) return fallback;
        return convert<T>(key, *v);
    }

    template <typename T>
    T convert(const std::string& key, const std::string& value) const {
        std::istringstream iss(value);
        T out;
        iss >> out;
        if (iss.fail() || !(iss >> std::ws).eof())
            throw ConfigError("config: bad value for " + name_ + "." + key + ": '" + value + "'");
        return out;
    }

    void reject_unknown() const {
        if (kv_ == nullptr) return;
        for (const auto& [key, value] : *kv_)
            if (used_.count(key) == 0)
                throw ConfigError("config: unknown key " + name_ + "." + key);
    }

  private:
    std::string name_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::set<std::string> used_;
};

template <>
inline std::string SectionReader::convert<std::string>(const std::string&, const std::string& value) const {
    return value;
}

template <>
inline bool SectionReader::convert<bool>(const std::string& key, const std::string& value) const {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + name_ + "." + key + ": '" + value + "'");
}

} // namespace detail

struct EvalOptions {
    int cadence = 0;         // epochs between in-training snapshots; 0 = none
    double threshold = 0.5;  // affinity threshold for trajectory merging
};

struct IoConfig {
    std::string out_dir;
    std::string corpus = "corpus.jsonl";
    std::string log = "train_log.csv";
    std::string checkpoints = "checkpoints";
    std::string metrics = "metrics.json";
    std::string merge_report = "merge_report.csv";
    std::string pairs_dump;    // empty disables the per-epoch pair dump
    std::string affinity_dump; // empty disables the final affinity dump

    std::filesystem::path resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        if (p.is_absolute()) return p;
        return std::filesystem::path(out_dir) / p;
    }
};

/// Fully parsed run configuration. gen_seed_set records whether [gen].seed
/// was given explicitly; corpus generation refuses to run without it.
struct RunConfig {
    GenConfig gen;
    bool has_gen = false;
    bool gen_seed_set = false;
    TrainConfig train;
    EvalOptions eval;
    IoConfig io;
};

inline RunConfig parse_run_config(const IniFile& ini, const std::string& origin = "<config>") {
    for (const auto& [name, kv] : ini.sections)
        if (name != "gen" && name != "train" && name != "eval" && name != "io")
            throw ConfigError("config: unknown section [" + name + "] in " + origin);

    RunConfig rc;

    detail::SectionReader gen(ini, "gen");
    rc.has_gen = gen.present();
    if (gen.present()) {
        rc.gen.num_cameras = gen.get("num_cameras", rc.gen.num_cameras);
        rc.gen.num_identities = gen.get("num_identities", rc.gen.num_identities);
        rc.gen.raw_dim = gen.get("raw_dim", rc.gen.raw_dim);
        rc.gen.frames_per_tracklet.min = gen.get("frames_min", rc.gen.frames_per_tracklet.min);
        rc.gen.frames_per_tracklet.max = gen.get("frames_max", rc.gen.frames_per_tracklet.max);
        rc.gen.fragmentation_factor.min = gen.get("frag_min", rc.gen.fragmentation_factor.min);
        rc.gen.fragmentation_factor.max = gen.get("frag_max", rc.gen.fragmentation_factor.max);
        rc.gen.identity_spread = gen.get("identity_spread", rc.gen.identity_spread);
        rc.gen.camera_shift_scale = gen.get("camera_shift_scale", rc.gen.camera_shift_scale);
        rc.gen.presence_prob = gen.get("presence_prob", rc.gen.presence_prob);
        if (gen.has("seed")) {
            rc.gen.seed = gen.get<std::uint64_t>("seed", 0);
            rc.gen_seed_set = true;
        }
        gen.reject_unknown();
    }

    detail::SectionReader train(ini, "train");
    if (train.present()) {
        rc.train.epochs = train.get("epochs", rc.train.epochs);
        rc.train.batch_size = train.get("batch_size", rc.train.batch_size);
        rc.train.frames_per_tracklet = train.get("frames_per_tracklet", rc.train.frames_per_tracklet);
        rc.train.lambda = train.get("lambda", rc.train.lambda);
        rc.train.alpha = train.get("alpha", rc.train.alpha);
        rc.train.k = train.get("k", rc.train.k);
        if (auto v = train.raw("ccta_mode")) rc.train.ccta_mode = match_mode_from_string(*v);
        rc.train.ccta_knn = train.get("ccta_knn", rc.train.ccta_knn);
        rc.train.ccta_start_fraction = train.get("ccta_start_fraction", rc.train.ccta_start_fraction);
        if (auto v = train.raw("mode")) rc.train.mode = train_mode_from_string(*v);
        rc.train.seed = train.get<std::uint64_t>("seed", rc.train.seed);
        rc.train.learning_rate = train.get("learning_rate", rc.train.learning_rate);
        rc.train.hidden_dim = train.get("hidden_dim", rc.train.hidden_dim);
        rc.train.embed_dim = train.get("embed_dim", rc.train.embed_dim);
        if (auto v = train.raw("activation")) rc.train.activation = activation_from_string(*v);
        if (auto v = train.raw("repr_update")) rc.train.repr_update = repr_update_from_string(*v);
        rc.train.checkpoint_every = train.get("checkpoint_every", rc.train.checkpoint_every);
        train.reject_unknown();
    }

    detail::SectionReader eval(ini, "eval");
    if (eval.present()) {
        rc.eval.cadence = eval.get("cadence", rc.eval.cadence);
        rc.eval.threshold = eval.get("threshold", rc.eval.threshold);
        if (rc.eval.threshold <= 0.0 || rc.eval.threshold > 1.0)
            throw ConfigError("config: eval.threshold must lie in (0,1]");
        eval.reject_unknown();
    }
    rc.train.eval_cadence = rc.eval.cadence;

    detail::SectionReader io(ini, "io");
    if (!io.present()) throw ConfigError("config: missing required section [io]");
    rc.io.out_dir = io.require("out_dir");
    rc.io.corpus = io.get<std::string>("corpus", rc.io.corpus);
    rc.io.log = io.get<std::string>("log", rc.io.log);
    rc.io.checkpoints = io.get<std::string>("checkpoints", rc.io.checkpoints);
    rc.io.metrics = io.get<std::string>("metrics", rc.io.metrics);
    rc.io.merge_report = io.get<std::string>("merge_report", rc.io.merge_report);
    rc.io.pairs_dump = io.get<std::string>("pairs_dump", rc.io.pairs_dump);
    rc.io.affinity_dump = io.get<std::string>("affinity_dump", rc.io.affinity_dump);
    io.reject_unknown();

    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    return parse_run_config(IniFile::parse_file(path), path);
}

/// Serializes every effective setting, defaults included, so a run's inputs
/// can be reproduced from the echoed file alone.
inline std::string resolved_config_text(const RunConfig& rc) {
    std::ostringstream out;
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    if (rc.has_gen) {
        out << "[gen]\n";
        out << "num_cameras = " << rc.gen.num_cameras << '\n';
        out << "num_identities = " << rc.gen.num_identities << '\n';
        out << "raw_dim = " << rc.gen.raw_dim << '\n';
        out << "frames_min = " << rc.gen.frames_per_tracklet.min << '\n';
        out << "frames_max = " << rc.gen.frames_per_tracklet.max << '\n';
        out << "frag_min = " << rc.gen.fragmentation_factor.min << '\n';
        out << "frag_max = " << rc.gen.fragmentation_factor.max << '\n';
        out << "identity_spread = " << num(rc.gen.identity_spread) << '\n';
        out << "camera_shift_scale = " << num(rc.gen.camera_shift_scale) << '\n';
        out << "presence_prob = " << num(rc.gen.presence_prob) << '\n';
        if (rc.gen_seed_set) out << "seed = " << rc.gen.seed << '\n';
        out << '\n';
    }
    out << "[train]\n";
    out << "epochs = " << rc.train.epochs << '\n';
    out << "batch_size = " << rc.train.batch_size << '\n';
    out << "frames_per_tracklet = " << rc.train.frames_per_tracklet << '\n';
    out << "lambda = " << num(rc.train.lambda) << '\n';
    out << "alpha = " << num(rc.train.alpha) << '\n';
    out << "k = " << rc.train.k << '\n';
    out << "ccta_mode = " << to_string(rc.train.ccta_mode) << '\n';
    out << "ccta_knn = " << rc.train.ccta_knn << '\n';
    out << "ccta_start_fraction = " << num(rc.train.ccta_start_fraction) << '\n';
    out << "mode = " << to_string(rc.train.mode) << '\n';
    out << "seed = " << rc.train.seed << '\n';
    out << "learning_rate = " << num(rc.train.learning_rate) << '\n';
    out << "hidden_dim = " << rc.train.hidden_dim << '\n';
    out << "embed_dim = " << rc.train.embed_dim << '\n';
    out << "activation = " << to_string(rc.train.activation) << '\n';
    out << "repr_update = " << to_string(rc.train.repr_update) << '\n';
    out << "checkpoint_every = " << rc.train.checkpoint_every << '\n';
    out << '\n';
    out << "[eval]\n";
    out << "cadence = " << rc.eval.cadence << '\n';
    out << "threshold = " << num(rc.eval.threshold) << '\n';
    out << '\n';
    out << "[io]\n";
    out << "out_dir = " << rc.io.out_dir << '\n';
    out << "corpus = " << rc.io.corpus << '\n';
    out << "log = " << rc.io.log << '\n';
    out << "checkpoints = " << rc.io.checkpoints << '\n';
    out << "metrics = " << rc.io.metrics << '\n';
    out << "merge_report = " << rc.io.merge_report << '\n';
    if (!rc.io.pairs_dump.empty()) out << "pairs_dump = " << rc.io.pairs_dump << '\n';
    if (!rc.io.affinity_dump.empty()) out << "affinity_dump = " << rc.io.affinity_dump << '\n';
    return out.str();
}

} // namespace utal
