#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "phenalign/connectome.hpp"
#include "phenalign/encoders.hpp"
#include "phenalign/error.hpp"
#include "phenalign/graph.hpp"
#include "phenalign/losses.hpp"
#include "phenalign/metrics.hpp"
#include "phenalign/optim.hpp"
#include "phenalign/params.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/rng.hpp"
#include "phenalign/serialize.hpp"

namespace phenalign {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t batch_size = 32;
    std::size_t epochs = 64;
    double warmup_ratio = 0.03;
    double beta = 0.001;
    std::size_t folds = 5;
    std::uint64_t seed = 0;
    std::string sensitive = "sex";  // empty string disables the fairness terms
    bool attn_term = true;
    bool negative_gradient = true;
    double clip_norm = 5.0;
    double test_fraction = 0.2;
    LossForm form = LossForm::standard;
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.lr <= 0.0) throw ConfigError("train: lr must be positive");
    if (cfg.weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
    if (cfg.batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (cfg.epochs == 0) throw ConfigError("train: epochs must be positive");
    if (cfg.warmup_ratio <= 0.0 || cfg.warmup_ratio >= 1.0)
        throw ConfigError("train: warmup ratio must lie in (0, 1)");
    if (cfg.beta < 0.0) throw ConfigError("train: beta must be >= 0");
    if (cfg.folds == 0) throw ConfigError("train: folds must be positive");
    if (cfg.clip_norm <= 0.0) throw ConfigError("train: clip norm must be positive");
    if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
        throw ConfigError("train: test fraction must lie in (0, 1)");
    if (!cfg.sensitive.empty() && !is_attribute(cfg.sensitive))
        throw ConfigError("train: unknown sensitive attribute " + cfg.sensitive);
}

// ---- splits ----

struct HoldoutSplit {
    std::vector<std::size_t> train, test;
};

struct Fold {
    std::vector<std::size_t> train, val;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> indices_by_class(
    const std::vector<int>& labels) {
    std::vector<std::vector<std::size_t>> by_class(2);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ContractError("split: labels must be 0 or 1");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    return by_class;
}

}  // namespace detail

inline HoldoutSplit stratified_holdout(const std::vector<int>& labels,
                                       double test_fraction, Rng rng) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw ContractError("holdout: fraction must lie in (0, 1)");
    HoldoutSplit split;
    for (auto& cls : detail::indices_by_class(labels)) {
        if (cls.empty()) continue;
        rng.shuffle(cls);
        const std::size_t n_test = static_cast<std::size_t>(
            std::lround(test_fraction * static_cast<double>(cls.size())));
        if (n_test == 0 || n_test >= cls.size())
            throw SplitError("holdout: class with " + std::to_string(cls.size()) +
                             " subjects cannot be split at fraction " +
                             format_double(test_fraction));
        split.test.insert(split.test.end(), cls.begin(), cls.begin() + n_test);
        split.train.insert(split.train.end(), cls.begin() + n_test, cls.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

// Round-robin deal within each class after a seeded shuffle: fold sizes per
// class differ by at most one, and folds partition the index range.
inline std::vector<Fold> stratified_kfold(const std::vector<int>& labels,
                                          std::size_t k, Rng rng) {
    if (k < 2) throw ContractError("kfold: k must be at least 2");
    std::vector<std::vector<std::size_t>> assigned(k);
    for (auto& cls : detail::indices_by_class(labels)) {
        if (cls.empty()) continue;
        if (cls.size() < k)
            throw SplitError("kfold: class with " + std::to_string(cls.size()) +
                             " subjects cannot fill " + std::to_string(k) + " folds");
        rng.shuffle(cls);
        for (std::size_t pos = 0; pos < cls.size(); ++pos)
            assigned[pos % k].push_back(cls[pos]);
    }
    std::vector<Fold> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        folds[f].val = assigned[f];
        std::sort(folds[f].val.begin(), folds[f].val.end());
        for (std::size_t o = 0; o < k; ++o) {
            if (o == f) continue;
            folds[f].train.insert(folds[f].train.end(), assigned[o].begin(),
                                  assigned[o].end());
        }
        std::sort(folds[f].train.begin(), folds[f].train.end());
    }
    return folds;
}

// ---- checkpoint ----

constexpr std::size_t kNoFold = static_cast<std::size_t>(-1);

struct Checkpoint {
    ParameterStore params;
    ParameterStore adam_m, adam_v;
    std::size_t step = 0;
    EncoderConfig enc;
    TrainConfig train;
    std::size_t fold = kNoFold;
    std::uint64_t fold_seed = 0;
    std::string rng_state;
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& s, const std::string& ctx) {
    if (s.empty()) throw ParseError(ctx + ": empty integer");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size())
        throw ParseError(ctx + ": bad integer '" + s + "'");
    return static_cast<std::uint64_t>(v);
}

inline const char* form_name(LossForm f) {
    return f == LossForm::standard ? "standard" : "printed";
}

inline LossForm parse_form(const std::string& s, const std::string& ctx) {
    if (s == "standard") return LossForm::standard;
    if (s == "printed") return LossForm::printed;
    throw ParseError(ctx + ": unknown loss form '" + s + "'");
}

}  // namespace detail

// Fixed key order; values round-trip exactly.
inline std::vector<std::pair<std::string, std::string>> config_to_kv(
    const EncoderConfig& enc, const TrainConfig& train) {
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("enc.n_rois", std::to_string(enc.n_rois));
    kv.emplace_back("enc.n_clusters", std::to_string(enc.n_clusters));
    kv.emplace_back("enc.embed_dim", std::to_string(enc.embed_dim));
    kv.emplace_back("enc.vocab_size", std::to_string(enc.vocab_size));
    kv.emplace_back("enc.text_layers", std::to_string(enc.text_layers));
    kv.emplace_back("enc.heads", std::to_string(enc.heads));
    kv.emplace_back("enc.seed", std::to_string(enc.seed));
    kv.emplace_back("train.lr", format_double(train.lr));
    kv.emplace_back("train.weight_decay", format_double(train.weight_decay));
    kv.emplace_back("train.batch_size", std::to_string(train.batch_size));
    kv.emplace_back("train.epochs", std::to_string(train.epochs));
    kv.emplace_back("train.warmup_ratio", format_double(train.warmup_ratio));
    kv.emplace_back("train.beta", format_double(train.beta));
    kv.emplace_back("train.folds", std::to_string(train.folds));
    kv.emplace_back("train.seed", std::to_string(train.seed));
    kv.emplace_back("train.sensitive",
                    train.sensitive.empty() ? "-" : train.sensitive);
    kv.emplace_back("train.attn_term", train.attn_term ? "1" : "0");
    kv.emplace_back("train.negative_gradient", train.negative_gradient ? "1" : "0");
    kv.emplace_back("train.clip_norm", format_double(train.clip_norm));
    kv.emplace_back("train.test_fraction", format_double(train.test_fraction));
    kv.emplace_back("train.form", detail::form_name(train.form));
    return kv;
}

inline void config_from_kv(const std::map<std::string, std::string>& kv,
                           EncoderConfig& enc, TrainConfig& train) {
    const auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ParseError(std::string("config: missing key ") + key);
        return it->second;
    };
    const std::string ctx = "config";
    enc.n_rois = detail::parse_u64(get("enc.n_rois"), ctx);
    enc.n_clusters = detail::parse_u64(get("enc.n_clusters"), ctx);
    enc.embed_dim = detail::parse_u64(get("enc.embed_dim"), ctx);
    enc.vocab_size = detail::parse_u64(get("enc.vocab_size"), ctx);
    enc.text_layers = detail::parse_u64(get("enc.text_layers"), ctx);
    enc.heads = detail::parse_u64(get("enc.heads"), ctx);
    enc.seed = detail::parse_u64(get("enc.seed"), ctx);
    train.lr = parse_double(get("train.lr"), ctx);
    train.weight_decay = parse_double(get("train.weight_decay"), ctx);
    train.batch_size = detail::parse_u64(get("train.batch_size"), ctx);
    train.epochs = detail::parse_u64(get("train.epochs"), ctx);
    train.warmup_ratio = parse_double(get("train.warmup_ratio"), ctx);
    train.beta = parse_double(get("train.beta"), ctx);
    train.folds = detail::parse_u64(get("train.folds"), ctx);
    train.seed = detail::parse_u64(get("train.seed"), ctx);
    train.sensitive = get("train.sensitive") == "-" ? "" : get("train.sensitive");
    train.attn_term = get("train.attn_term") == "1";
    train.negative_gradient = get("train.negative_gradient") == "1";
    train.clip_norm = parse_double(get("train.clip_norm"), ctx);
    train.test_fraction = parse_double(get("train.test_fraction"), ctx);
    train.form = detail::parse_form(get("train.form"), ctx);
}

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out = "format phenalign-checkpoint 1\n";
    for (const auto& [k, v] : config_to_kv(ckpt.enc, ckpt.train))
        out += "cfg " + k + " " + v + "\n";
    out += "fold ";
    out += ckpt.fold == kNoFold ? "-" : std::to_string(ckpt.fold);
    out += "\n";
    out += "fold_seed " + std::to_string(ckpt.fold_seed) + "\n";
    out += "step " + std::to_string(ckpt.step) + "\n";
    out += "rng " + ckpt.rng_state + "\n";
    out += "params " + std::to_string(ckpt.params.size()) + "\n";
    out += ckpt.params.serialize();
    out += "adam_m " + std::to_string(ckpt.adam_m.size()) + "\n";
    out += ckpt.adam_m.serialize();
    out += "adam_v " + std::to_string(ckpt.adam_v.size()) + "\n";
    out += ckpt.adam_v.serialize();
    out += "end\n";
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& text) {
    const std::string ctx = "checkpoint";
    std::vector<std::string> lines = read_lines(text);
    std::size_t pos = 0;
    const auto next = [&]() -> const std::string& {
        if (pos >= lines.size()) throw ParseError(ctx + ": truncated");
        return lines[pos++];
    };
    if (next() != "format phenalign-checkpoint 1")
        throw ParseError(ctx + ": unknown format line");

    Checkpoint ckpt;
    std::map<std::string, std::string> kv;
    while (pos < lines.size() && lines[pos].rfind("cfg ", 0) == 0) {
        const std::string& line = lines[pos++];
        const std::size_t a = line.find(' ', 4);
        if (a == std::string::npos) throw ParseError(ctx + ": bad cfg line");
        kv[line.substr(4, a - 4)] = line.substr(a + 1);
    }
    config_from_kv(kv, ckpt.enc, ckpt.train);

    const auto field = [&](const char* name) {
        const std::string& line = next();
        const std::string prefix = std::string(name) + " ";
        if (line.rfind(prefix, 0) != 0)
            throw ParseError(ctx + ": expected " + name + " line");
        return line.substr(prefix.size());
    };
    const std::string fold = field("fold");
    ckpt.fold = fold == "-" ? kNoFold : detail::parse_u64(fold, ctx);
    ckpt.fold_seed = detail::parse_u64(field("fold_seed"), ctx);
    ckpt.step = detail::parse_u64(field("step"), ctx);
    ckpt.rng_state = field("rng");

    const auto store = [&](const char* name) {
        const std::size_t count = detail::parse_u64(field(name), ctx);
        return ParameterStore::deserialize(lines, pos, count,
                                           ctx + std::string(": ") + name);
    };
    ckpt.params = store("params");
    ckpt.adam_m = store("adam_m");
    ckpt.adam_v = store("adam_v");
    if (next() != "end") throw ParseError(ctx + ": missing end marker");
    if (!ckpt.adam_m.same_layout(ckpt.params) ||
        !ckpt.adam_v.same_layout(ckpt.params))
        throw ParseError(ctx + ": moment layout does not match parameters");
    return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt,
                            const std::filesystem::path& path) {
    write_text_file(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_text_file(path));
}

// ---- training loop ----

struct LossRow {
    std::size_t epoch = 0;
    double global = 0.0;
    std::map<std::string, double> calt;  // keyed by attribute
    double attn = 0.0;
    double total = 0.0;
};

inline std::string loss_log_csv(const std::vector<LossRow>& rows) {
    std::string out = "epoch,global,calt_dx,calt_sex,calt_age,calt_srs,attn,total\n";
    for (const LossRow& r : rows) {
        out += std::to_string(r.epoch);
        out += "," + format_double(r.global);
        for (const char* attr : {"dx_group", "sex", "age", "srs"}) {
            auto it = r.calt.find(attr);
            out += ",";
            out += format_double(it == r.calt.end() ? 0.0 : it->second);
        }
        out += "," + format_double(r.attn);
        out += "," + format_double(r.total);
        out += "\n";
    }
    return out;
}

struct FoldResult {
    Checkpoint checkpoint;
    std::vector<LossRow> log;
};

inline LossConfig loss_config_for(const TrainConfig& cfg) {
    LossConfig lcfg;
    lcfg.beta = cfg.beta;
    lcfg.form = cfg.form;
    lcfg.attn_term = cfg.attn_term;
    lcfg.negative_gradient = cfg.negative_gradient;
    lcfg.sensitive.clear();
    if (!cfg.sensitive.empty()) lcfg.sensitive.insert(cfg.sensitive);
    return lcfg;
}

// Trains one model on the given subjects. All randomness (parameter init,
// center seeding, batch order) derives from fold_seed.
inline FoldResult train_fold(const std::vector<Subject>& subjects,
                             EncoderConfig enc, const TrainConfig& cfg,
                             std::uint64_t fold_seed, std::size_t fold = kNoFold) {
    validate_train_config(cfg);
    if (subjects.empty()) throw ContractError("train: empty training set");
    enc.seed = Rng(fold_seed).derive_seed(1);
    validate_config(enc);
    const LossConfig lcfg = loss_config_for(cfg);
    validate_loss_config(lcfg);

    Rng master(fold_seed);
    Rng shuffle_rng = master.derive(2);
    Rng center_rng = master.derive(3);

    ParameterStore store = init_parameters(enc);

    const std::size_t n = subjects.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;

    // Cluster centers start on node embeddings of the first batch.
    shuffle_rng.shuffle(order);
    {
        std::vector<Tensor> first;
        for (std::size_t i = 0; i < std::min(cfg.batch_size, n); ++i)
            first.push_back(subjects[order[i]].matrix);
        seed_dec_centers(store, enc, first, center_rng);
    }

    AdamW opt(store, AdamConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    FoldResult result;
    std::size_t global_step = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (epoch > 1) shuffle_rng.shuffle(order);
        LossRow row;
        row.epoch = epoch;
        for (const std::string& attr : lcfg.attributes) row.calt[attr] = 0.0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, n);
            std::vector<Tensor> conns;
            std::vector<PhenotypeRecord> recs;
            for (std::size_t i = start; i < stop; ++i) {
                conns.push_back(subjects[order[i]].matrix);
                recs.push_back(subjects[order[i]].record);
            }

            Graph g;
            ModelGraph m(g, store);
            LossValues lv = batch_loss(g, m, enc, lcfg, conns, recs);
            const double total = g.value(lv.total).item();
            if (!std::isfinite(total))
                throw TrainError("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(global_step + 1));
            g.backward(lv.total);
            GradientMap grads = g.parameter_gradients();
            for (const auto& [name, grad] : grads)
                if (!grad.all_finite())
                    throw TrainError("training diverged: non-finite gradient for " +
                                     name + " at epoch " + std::to_string(epoch));
            clip_gradients(grads, cfg.clip_norm);
            ++global_step;
            opt.step(store, grads,
                     lr_schedule(global_step, total_steps, cfg.lr, cfg.warmup_ratio));

            row.global += g.value(lv.global).item();
            for (const auto& [attr, val] : lv.calt) row.calt[attr] += g.value(val).item();
            row.attn += g.value(lv.attn).item();
            row.total += total;
        }

        const double nb = static_cast<double>(batches_per_epoch);
        row.global /= nb;
        for (auto& [attr, val] : row.calt) val /= nb;
        row.attn /= nb;
        row.total /= nb;
        result.log.push_back(std::move(row));
    }

    result.checkpoint.params = std::move(store);
    result.checkpoint.adam_m = opt.moments_m();
    result.checkpoint.adam_v = opt.moments_v();
    result.checkpoint.step = opt.step_count();
    result.checkpoint.enc = enc;
    result.checkpoint.train = cfg;
    result.checkpoint.fold = fold;
    result.checkpoint.fold_seed = fold_seed;
    result.checkpoint.rng_state = master.serialize_state();
    return result;
}

// ---- inference and evaluation ----

namespace detail {

inline double tensor_cosine(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("cosine: shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= kNormGuard * kNormGuard || nb <= kNormGuard * kNormGuard) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Two-candidate zero-shot scoring: the subject's text is rendered once per
// diagnosis value and the image embedding picks between them. The softmax
// over the two logits collapses to a sigmoid of their difference.
inline double zero_shot_classify(const ParameterStore& store,
                                 const EncoderConfig& enc, const Subject& subject) {
    SubjectEncoding image = encode_subject(store, enc, subject.matrix);
    PhenotypeRecord as_pos = subject.record;
    as_pos.dx = DxGroup::positive;
    PhenotypeRecord as_ctl = subject.record;
    as_ctl.dx = DxGroup::control;
    TextEncoding pos = encode_text_infer(store, enc, tokenize_record(as_pos));
    TextEncoding ctl = encode_text_infer(store, enc, tokenize_record(as_ctl));
    const double t = std::exp(store.get("loss.log_t").item());
    const double b = store.get("loss.bias").item();
    const double logit_pos = t * detail::tensor_cosine(image.v_g, pos.t_g) + b;
    const double logit_ctl = t * detail::tensor_cosine(image.v_g, ctl.t_g) + b;
    return detail::stable_sigmoid(logit_pos - logit_ctl);
}

inline std::vector<EvalRecord> score_subjects(const ParameterStore& store,
                                              const EncoderConfig& enc,
                                              const std::vector<Subject>& subjects,
                                              const std::string& sensitive) {
    if (!is_attribute(sensitive))
        throw LookupError("evaluate: unknown sensitive attribute " + sensitive);
    std::vector<EvalRecord> records;
    records.reserve(subjects.size());
    for (const Subject& s : subjects) {
        const double score = zero_shot_classify(store, enc, s);
        const int label = s.record.dx == DxGroup::positive ? 1 : 0;
        records.push_back(
            make_eval_record(score, label, rendered_value(s.record, sensitive)));
    }
    return records;
}

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names{"auc", "acc", "sen",    "spc",
                                               "dpd", "deodds", "es_auc"};
    return names;
}

inline MetricReport evaluate(const ParameterStore& store, const EncoderConfig& enc,
                             const std::vector<Subject>& subjects,
                             const std::string& sensitive) {
    std::vector<EvalRecord> records = score_subjects(store, enc, subjects, sensitive);
    ConfusionMetrics cm = confusion_metrics(records);
    MetricReport report;
    report.emplace_back("auc", roc_auc(records));
    report.emplace_back("acc", cm.acc);
    report.emplace_back("sen", cm.sen);
    report.emplace_back("spc", cm.spc);
    report.emplace_back("dpd", dpd(records));
    report.emplace_back("deodds", deodds(records));
    report.emplace_back("es_auc", es_auc(records));
    return report;
}

inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ContractError("mean report: no reports");
    MetricReport out = reports[0];
    for (std::size_t r = 1; r < reports.size(); ++r) {
        if (reports[r].size() != out.size())
            throw ContractError("mean report: mismatched metric sets");
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (reports[r][i].first != out[i].first)
                throw ContractError("mean report: mismatched metric order");
            out[i].second += reports[r][i].second;
        }
    }
    for (auto& [name, value] : out)
        value /= static_cast<double>(reports.size());
    return out;
}

// ---- cross-validated run ----

struct RunResult {
    HoldoutSplit holdout;
    std::vector<Fold> folds;             // empty when cfg.folds == 1
    std::vector<FoldResult> fold_results;
    std::vector<MetricReport> val_reports;   // per fold (folds >= 2)
    std::vector<MetricReport> test_reports;  // per trained model on the holdout
    MetricReport cv_report;    // fold-mean validation metrics (or test for 1 fold)
    MetricReport test_report;  // fold-mean holdout metrics
};

namespace detail {

inline void parallel_tasks(std::size_t jobs, std::size_t count,
                           const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    if (jobs <= 1 || count == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> cursor{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const std::size_t workers = std::min(jobs, count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            while (true) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline std::vector<Subject> subset(const std::vector<Subject>& all,
                                   const std::vector<std::size_t>& idx) {
    std::vector<Subject> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(all[i]);
    return out;
}

}  // namespace detail

inline std::vector<int> dx_labels(const std::vector<Subject>& subjects) {
    std::vector<int> labels;
    labels.reserve(subjects.size());
    for (const Subject& s : subjects)
        labels.push_back(s.record.dx == DxGroup::positive ? 1 : 0);
    return labels;
}

// Stratified 80/20 holdout, then k-fold cross-validation on the training
// side; one model per fold, each with its own derived rng stream. With
// folds = 1 a single model trains on the whole training side and is scored
// on the holdout only.
inline RunResult run_training(const std::vector<Subject>& cohort, EncoderConfig enc,
                              const TrainConfig& cfg, std::size_t jobs = 1) {
    validate_train_config(cfg);
    if (cohort.empty()) throw ContractError("run: empty cohort");
    const std::string sensitive = cfg.sensitive.empty() ? "sex" : cfg.sensitive;

    Rng master(cfg.seed);
    RunResult run;
    run.holdout = stratified_holdout(dx_labels(cohort), cfg.test_fraction,
                                     master.derive(11));
    const std::vector<Subject> train_side = detail::subset(cohort, run.holdout.train);
    const std::vector<Subject> test_side = detail::subset(cohort, run.holdout.test);

    if (cfg.folds == 1) {
        run.fold_results.resize(1);
        run.fold_results[0] =
            train_fold(train_side, enc, cfg, master.derive_seed(100), 0);
        const Checkpoint& ckpt = run.fold_results[0].checkpoint;
        run.test_reports.push_back(
            evaluate(ckpt.params, ckpt.enc, test_side, sensitive));
        run.cv_report = run.test_reports[0];
        run.test_report = run.test_reports[0];
        return run;
    }

    run.folds = stratified_kfold(dx_labels(train_side), cfg.folds, master.derive(12));
    std::vector<std::uint64_t> fold_seeds;
    for (std::size_t f = 0; f < cfg.folds; ++f)
        fold_seeds.push_back(master.derive_seed(100 + f));

    run.fold_results.resize(cfg.folds);
    run.val_reports.resize(cfg.folds);
    run.test_reports.resize(cfg.folds);
    detail::parallel_tasks(jobs, cfg.folds, [&](std::size_t f) {
        const std::vector<Subject> fold_train =
            detail::subset(train_side, run.folds[f].train);
        const std::vector<Subject> fold_val =
            detail::subset(train_side, run.folds[f].val);
        run.fold_results[f] = train_fold(fold_train, enc, cfg, fold_seeds[f], f);
        const Checkpoint& ckpt = run.fold_results[f].checkpoint;
        run.val_reports[f] = evaluate(ckpt.params, ckpt.enc, fold_val, sensitive);
        run.test_reports[f] = evaluate(ckpt.params, ckpt.enc, test_side, sensitive);
    });
    run.cv_report = mean_report(run.val_reports);
    run.test_report = mean_report(run.test_reports);
    return run;
}

}  // namespace phenalign
