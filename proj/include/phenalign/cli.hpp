#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/config.hpp"
#include "phenalign/connectome.hpp"
#include "phenalign/encoders.hpp"
#include "phenalign/error.hpp"
#include "phenalign/losses.hpp"
#include "phenalign/metrics.hpp"
#include "phenalign/trainer.hpp"
#include "phenalign/ttca.hpp"

namespace phenalign {

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string utc_now() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline CliConfig resolve_config(const std::string& config_path,
                                const ConfigOverrides& overrides) {
    CliConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& [key, value] : overrides) apply_config_entry(cfg, key, value);
    return cfg;
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw WriteError("cannot create directory " + dir.string());
}

inline std::vector<std::pair<std::string, std::string>> synth_kv(
    const SynthConfig& s) {
    return {{"n_subjects", std::to_string(s.n_subjects)},
            {"n_rois", std::to_string(s.n_rois)},
            {"n_timepoints", std::to_string(s.n_timepoints)},
            {"effect_d", format_double(s.effect_d)},
            {"effect_v", format_double(s.effect_v)},
            {"confound_rho", format_double(s.confound_rho)},
            {"seed", std::to_string(s.seed)}};
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_ =
        std::chrono::steady_clock::now();
};

}  // namespace detail

// ---- synth ----

struct SynthArgs {
    std::string config;
    std::string out;
    ConfigOverrides overrides;
};

inline void cmd_synth(const SynthArgs& args) {
    detail::Stopwatch watch;
    const CliConfig cfg = detail::resolve_config(args.config, args.overrides);
    validate_config(cfg.synth);
    const std::vector<Subject> cohort = synth_cohort(cfg.synth);
    detail::ensure_dir(args.out);
    write_cohort(cohort, args.out);

    RunManifest m;
    m.command = "synth";
    m.created = detail::utc_now();
    m.cohort_sha256 = cohort_hash(cohort);
    m.config = detail::synth_kv(cfg.synth);
    m.elapsed_seconds = watch.seconds();
    write_manifest(m, std::filesystem::path(args.out) / "manifest.txt");
    std::cout << "wrote " << cohort.size() << " subjects to " << args.out << "\n";
}

// ---- train ----

struct TrainArgs {
    std::string cohort;
    std::string config;
    std::string out;
    ConfigOverrides overrides;
    std::size_t jobs = 1;
};

inline void cmd_train(const TrainArgs& args) {
    detail::Stopwatch watch;
    CliConfig cfg = detail::resolve_config(args.config, args.overrides);
    const std::vector<Subject> cohort = read_cohort(args.cohort);
    if (cohort.empty()) throw ConfigError("cohort is empty: " + args.cohort);
    cfg.enc.n_rois = cohort[0].matrix.rows();
    validate_config(cfg.enc);
    validate_train_config(cfg.train);

    const RunResult run = run_training(cohort, cfg.enc, cfg.train, args.jobs);

    const std::filesystem::path out(args.out);
    detail::ensure_dir(out);
    RunManifest m;
    m.command = "train";
    m.created = detail::utc_now();
    m.cohort_sha256 = cohort_hash(cohort);
    m.config = config_to_kv(cfg.enc, cfg.train);
    for (std::size_t f = 0; f < run.fold_results.size(); ++f) {
        const std::string ckpt_name = "fold_" + std::to_string(f) + ".ckpt";
        const std::string log_name = "fold_" + std::to_string(f) + "_loss.csv";
        save_checkpoint(run.fold_results[f].checkpoint, out / ckpt_name);
        write_text_file(out / log_name, loss_log_csv(run.fold_results[f].log));
        m.checkpoints.push_back(ckpt_name);
    }
    write_text_file(out / "cv_report.csv", report_csv(run.cv_report));
    write_text_file(out / "cv_report_full.csv", report_csv_full(run.cv_report));
    write_text_file(out / "test_report.csv", report_csv(run.test_report));
    write_text_file(out / "test_report_full.csv", report_csv_full(run.test_report));
    m.reports = {{"cv", "cv_report.csv"},
                 {"cv_full", "cv_report_full.csv"},
                 {"test", "test_report.csv"},
                 {"test_full", "test_report_full.csv"}};
    m.elapsed_seconds = watch.seconds();
    write_manifest(m, out / "manifest.txt");
    std::cout << "held-out report (fold mean):\n" << report_csv(run.test_report);
}

// ---- eval ----

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string cohort;
    std::string sensitive;  // empty: use the checkpoint's setting
    std::string out;        // empty: print only
    bool force = false;
};

inline void cmd_eval(const EvalArgs& args) {
    detail::Stopwatch watch;
    if (args.checkpoints.empty()) throw ConfigError("eval: no checkpoints given");
    std::vector<Checkpoint> ckpts;
    for (const std::string& path : args.checkpoints)
        ckpts.push_back(load_checkpoint(path));
    for (const Checkpoint& c : ckpts)
        if (c.train.seed != ckpts[0].train.seed ||
            c.train.test_fraction != ckpts[0].train.test_fraction)
            throw ConfigError("eval: checkpoints come from different runs");

    const std::vector<Subject> cohort = read_cohort(args.cohort);
    const std::string hash = cohort_hash(cohort);

    // The training manifest, when present next to the checkpoint, pins the
    // cohort this model belongs to.
    const std::filesystem::path manifest_path =
        std::filesystem::path(args.checkpoints[0]).parent_path() / "manifest.txt";
    bool known_cohort = false;
    if (std::filesystem::exists(manifest_path)) {
        const RunManifest m = read_manifest(manifest_path);
        if (m.cohort_sha256 == hash) {
            known_cohort = true;
        } else if (!args.force) {
            throw ConfigError("eval: cohort hash " + hash +
                              " does not match the training manifest (" +
                              m.cohort_sha256 + "); pass --force to evaluate anyway");
        }
    }

    // Known training cohort: score only its held-out side, reconstructed from
    // the stored split seed. Anything else: score every subject.
    std::vector<Subject> subjects;
    if (known_cohort) {
        const HoldoutSplit split =
            stratified_holdout(dx_labels(cohort), ckpts[0].train.test_fraction,
                               Rng(ckpts[0].train.seed).derive(11));
        for (std::size_t i : split.test) subjects.push_back(cohort[i]);
    } else {
        subjects = cohort;
    }

    std::string sensitive = args.sensitive;
    if (sensitive.empty())
        sensitive = ckpts[0].train.sensitive.empty() ? "sex"
                                                     : ckpts[0].train.sensitive;

    std::vector<MetricReport> reports;
    for (const Checkpoint& c : ckpts)
        reports.push_back(evaluate(c.params, c.enc, subjects, sensitive));
    const MetricReport mean = mean_report(reports);
    std::cout << report_csv(mean);

    if (!args.out.empty()) {
        const std::filesystem::path out(args.out);
        detail::ensure_dir(out);
        write_text_file(out / "eval_report.csv", report_csv(mean));
        write_text_file(out / "eval_report_full.csv", report_csv_full(mean));
        RunManifest m;
        m.command = "eval";
        m.created = detail::utc_now();
        m.cohort_sha256 = hash;
        m.config = {{"sensitive", sensitive},
                    {"subjects", std::to_string(subjects.size())},
                    {"checkpoints", std::to_string(ckpts.size())},
                    {"holdout_only", known_cohort ? "1" : "0"}};
        m.reports = {{"eval", "eval_report.csv"},
                     {"eval_full", "eval_report_full.csv"}};
        m.elapsed_seconds = watch.seconds();
        write_manifest(m, out / "manifest.txt");
    }
}

// ---- attmap ----

struct AttmapArgs {
    std::string checkpoint;
    std::string cohort;
    std::string subject;
    std::string token;
    std::string format = "csv";
    std::string out;
};

inline void cmd_attmap(const AttmapArgs& args) {
    if (args.format != "csv" && args.format != "svg")
        throw ConfigError("attmap: format must be csv or svg, got " + args.format);
    const Checkpoint ckpt = load_checkpoint(args.checkpoint);
    const std::vector<Subject> cohort = read_cohort(args.cohort);
    const Subject* subject = nullptr;
    for (const Subject& s : cohort)
        if (s.id == args.subject) subject = &s;
    if (!subject)
        throw LookupError("attmap: no subject with id " + args.subject);

    Graph g;
    ModelGraph m(g, ckpt.params, false);
    Value nodes = encode_nodes(g, m, g.input(subject->matrix));
    auto [q, pooled] = dec_pool(g, m, nodes);
    (void)q;
    auto [v_loc, a_loc] = local_image_tokens(g, m, pooled, nodes, ckpt.enc.heads);
    const TokenSequence seq = tokenize_record(subject->record);
    auto [t_loc, t_g] = encode_text(g, m, seq, ckpt.enc);
    (void)t_g;
    TtcaOut ttca = ttca_forward(g, m, t_loc, v_loc, ckpt.enc.heads);

    const Tensor composed = compose_maps(g.value(ttca.a_ttca), g.value(a_loc));
    const Tensor map = activation_map(composed, seq, args.token);
    const std::string text = args.format == "csv" ? map_to_csv(map) : map_to_svg(map);
    const std::filesystem::path out_path(args.out);
    if (out_path.has_parent_path()) detail::ensure_dir(out_path.parent_path());
    write_text_file(out_path, text);
    std::cout << "wrote " << args.format << " map for " << args.subject << " / "
              << args.token << " to " << args.out << "\n";
}

// ---- ablate ----

struct AblateArgs {
    std::string cohort;
    std::string config;
    std::string out;
    ConfigOverrides overrides;
    std::size_t seeds = 10;
    std::size_t jobs = 1;
};

inline std::string ablation_csv(const std::vector<MetricReport>& rows,
                                bool full_precision) {
    static const bool kGrid[4][2] = {
        {false, false}, {false, true}, {true, false}, {true, true}};
    std::string out = "attn_loss,neg_grad";
    for (const std::string& name : metric_names()) out += "," + name;
    out += "\n";
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out += kGrid[r][0] ? "on" : "off";
        out += kGrid[r][1] ? ",on" : ",off";
        for (const auto& kv : rows[r]) {
            out += ",";
            out += full_precision ? format_double(kv.second)
                                  : format_fixed(kv.second, 6);
        }
        out += "\n";
    }
    return out;
}

// Trains the four on/off combinations of the two fairness components over a
// seed range, single holdout model per run, and reports seed-mean metrics.
inline void cmd_ablate(const AblateArgs& args) {
    detail::Stopwatch watch;
    if (args.seeds == 0) throw ConfigError("ablate: seeds must be positive");
    CliConfig base = detail::resolve_config(args.config, args.overrides);
    const std::vector<Subject> cohort = read_cohort(args.cohort);
    if (cohort.empty()) throw ConfigError("cohort is empty: " + args.cohort);
    base.enc.n_rois = cohort[0].matrix.rows();
    base.train.folds = 1;  // one model per (configuration, seed) cell
    validate_config(base.enc);
    validate_train_config(base.train);

    static const bool kGrid[4][2] = {
        {false, false}, {false, true}, {true, false}, {true, true}};
    const std::size_t n_tasks = 4 * args.seeds;
    std::vector<MetricReport> task_reports(n_tasks);
    detail::parallel_tasks(args.jobs, n_tasks, [&](std::size_t task) {
        const std::size_t row = task / args.seeds;
        const std::size_t seed_idx = task % args.seeds;
        TrainConfig cfg = base.train;
        cfg.attn_term = kGrid[row][0];
        cfg.negative_gradient = kGrid[row][1];
        cfg.seed = base.train.seed + seed_idx;
        const RunResult run = run_training(cohort, base.enc, cfg, 1);
        task_reports[task] = run.test_report;
    });

    std::vector<MetricReport> rows;
    for (std::size_t r = 0; r < 4; ++r) {
        std::vector<MetricReport> per_seed(
            task_reports.begin() + r * args.seeds,
            task_reports.begin() + (r + 1) * args.seeds);
        rows.push_back(mean_report(per_seed));
    }

    const std::filesystem::path out(args.out);
    detail::ensure_dir(out);
    write_text_file(out / "ablation.csv", ablation_csv(rows, false));
    write_text_file(out / "ablation_full.csv", ablation_csv(rows, true));
    RunManifest m;
    m.command = "ablate";
    m.created = detail::utc_now();
    m.cohort_sha256 = cohort_hash(cohort);
    m.config = config_to_kv(base.enc, base.train);
    m.config.emplace_back("seeds", std::to_string(args.seeds));
    m.reports = {{"ablation", "ablation.csv"},
                 {"ablation_full", "ablation_full.csv"}};
    m.elapsed_seconds = watch.seconds();
    write_manifest(m, out / "manifest.txt");
    std::cout << ablation_csv(rows, false);
}

}  // namespace phenalign
