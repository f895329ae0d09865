#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "phenalign/connectome.hpp"
#include "phenalign/error.hpp"
#include "phenalign/serialize.hpp"
#include "phenalign/trainer.hpp"

namespace phenalign {

// `key = value` lines, '#' starts a comment, blank lines ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text, const std::string& context = "config") {
    std::vector<std::pair<std::string, std::string>> out;
    std::vector<std::string> lines = read_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(context + ": line " + std::to_string(i + 1) +
                             ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ParseError(context + ": line " + std::to_string(i + 1) +
                             ": empty key");
        out.emplace_back(key, value);
    }
    return out;
}

// Everything the command-line front end can configure. n_rois only drives
// synthesis; training reads the matrix size off the cohort.
struct CliConfig {
    SynthConfig synth;
    EncoderConfig enc;
    TrainConfig train;
};

namespace detail {

inline bool parse_on_off(const std::string& v, const std::string& key) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw ConfigError(key + " must be 'on' or 'off', got '" + v + "'");
}

}  // namespace detail

inline void apply_config_entry(CliConfig& cfg, const std::string& key,
                               const std::string& value) {
    const std::string ctx = "config key " + key;
    if (key == "n_subjects") cfg.synth.n_subjects = detail::parse_u64(value, ctx);
    else if (key == "n_rois") cfg.synth.n_rois = detail::parse_u64(value, ctx);
    else if (key == "n_timepoints") cfg.synth.n_timepoints = detail::parse_u64(value, ctx);
    else if (key == "effect_d") cfg.synth.effect_d = parse_double(value, ctx);
    else if (key == "effect_v") cfg.synth.effect_v = parse_double(value, ctx);
    else if (key == "confound_rho") cfg.synth.confound_rho = parse_double(value, ctx);
    else if (key == "n_clusters") cfg.enc.n_clusters = detail::parse_u64(value, ctx);
    else if (key == "embed_dim") cfg.enc.embed_dim = detail::parse_u64(value, ctx);
    else if (key == "heads") cfg.enc.heads = detail::parse_u64(value, ctx);
    else if (key == "text_layers") cfg.enc.text_layers = detail::parse_u64(value, ctx);
    else if (key == "lr") cfg.train.lr = parse_double(value, ctx);
    else if (key == "weight_decay") cfg.train.weight_decay = parse_double(value, ctx);
    else if (key == "batch_size") cfg.train.batch_size = detail::parse_u64(value, ctx);
    else if (key == "epochs") cfg.train.epochs = detail::parse_u64(value, ctx);
    else if (key == "warmup_ratio") cfg.train.warmup_ratio = parse_double(value, ctx);
    else if (key == "beta") cfg.train.beta = parse_double(value, ctx);
    else if (key == "folds") cfg.train.folds = detail::parse_u64(value, ctx);
    else if (key == "seed") {
        cfg.synth.seed = detail::parse_u64(value, ctx);
        cfg.train.seed = cfg.synth.seed;
    } else if (key == "sensitive") {
        cfg.train.sensitive = value == "none" ? "" : value;
    } else if (key == "attn_loss") {
        cfg.train.attn_term = detail::parse_on_off(value, key);
    } else if (key == "neg_grad") {
        cfg.train.negative_gradient = detail::parse_on_off(value, key);
    } else if (key == "clip_norm") {
        cfg.train.clip_norm = parse_double(value, ctx);
    } else if (key == "test_fraction") {
        cfg.train.test_fraction = parse_double(value, ctx);
    } else if (key == "loss_form") {
        cfg.train.form = detail::parse_form(value, ctx);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

inline CliConfig load_config(const std::filesystem::path& path) {
    CliConfig cfg;
    const auto entries = parse_config_text(read_text_file(path), path.string());
    for (const auto& [key, value] : entries) apply_config_entry(cfg, key, value);
    return cfg;
}

// ---- content hashing ----

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

// Hash over the canonical on-disk form (phenotype table plus every matrix),
// so a cohort hashes the same whether freshly synthesized or reloaded.
inline std::string cohort_hash(const std::vector<Subject>& cohort) {
    std::string data = std::string(kPhenotypeHeader) + "\n";
    for (const Subject& s : cohort) {
        data += s.id;
        data += ',';
        data += display(s.record.dx);
        data += ',';
        data += display(s.record.sex);
        data += ',';
        data += format_double(s.record.age);
        data += ',';
        data += display(s.record.srs);
        data += '\n';
    }
    for (const Subject& s : cohort) data += format_matrix_csv(s.matrix);
    return sha256_hex(data);
}

// ---- run manifest ----

// Flat key-value provenance file. `created` and `elapsed_seconds` are the
// only entries expected to differ between identical reruns.
struct RunManifest {
    std::string command;
    std::string created;
    double elapsed_seconds = 0.0;
    std::string cohort_sha256;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::string> checkpoints;
    std::vector<std::pair<std::string, std::string>> reports;
};

inline std::string serialize_manifest(const RunManifest& m) {
    std::string out;
    out += "command = " + m.command + "\n";
    out += "created = " + m.created + "\n";
    out += "elapsed_seconds = " + format_double(m.elapsed_seconds) + "\n";
    out += "cohort_sha256 = " + m.cohort_sha256 + "\n";
    for (const auto& [k, v] : m.config) out += "config." + k + " = " + v + "\n";
    for (std::size_t i = 0; i < m.checkpoints.size(); ++i)
        out += "checkpoint." + std::to_string(i) + " = " + m.checkpoints[i] + "\n";
    for (const auto& [k, v] : m.reports) out += "report." + k + " = " + v + "\n";
    return out;
}

inline RunManifest parse_manifest(const std::string& text,
                                  const std::string& context = "manifest") {
    RunManifest m;
    for (const auto& [key, value] : parse_config_text(text, context)) {
        if (key == "command") m.command = value;
        else if (key == "created") m.created = value;
        else if (key == "elapsed_seconds") m.elapsed_seconds = parse_double(value, context);
        else if (key == "cohort_sha256") m.cohort_sha256 = value;
        else if (key.rfind("config.", 0) == 0)
            m.config.emplace_back(key.substr(7), value);
        else if (key.rfind("checkpoint.", 0) == 0)
            m.checkpoints.push_back(value);
        else if (key.rfind("report.", 0) == 0)
            m.reports.emplace_back(key.substr(7), value);
        else
            throw ParseError(context + ": unknown manifest key '" + key + "'");
    }
    return m;
}

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
    write_text_file(path, serialize_manifest(m));
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_text_file(path), path.string());
}

}  // namespace phenalign
