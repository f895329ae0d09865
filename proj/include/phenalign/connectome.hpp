#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/phenotext.hpp"
#include "phenalign/rng.hpp"
#include "phenalign/serialize.hpp"
#include "phenalign/tensor.hpp"

namespace phenalign {

// Pairwise Pearson correlation of the rows of an N x T series matrix.
// The diagonal is forced to exactly 1 and the result is symmetric by
// construction. A (numerically) constant row correlates 0 with everything:
// degenerate synthetic input must not blow up the pipeline.
inline Tensor pearson_connectivity(const Tensor& ts) {
    const std::size_t n = ts.rows(), t = ts.cols();
    if (ts.ndim() != 2 || t < 3)
        throw ContractError("pearson: need an N x T matrix with T >= 3, got " +
                            shape_str(ts.shape()));
    if (!ts.all_finite()) throw ContractError("pearson: non-finite sample");

    std::vector<double> centered(n * t);
    std::vector<double> ssq(n, 0.0);
    std::vector<bool> degenerate(n, false);
    for (std::size_t p = 0; p < n; ++p) {
        const double* row = ts.data() + p * t;
        double mean = 0.0;
        for (std::size_t k = 0; k < t; ++k) mean += row[k];
        mean /= static_cast<double>(t);
        double s = 0.0;
        for (std::size_t k = 0; k < t; ++k) {
            const double c = row[k] - mean;
            centered[p * t + k] = c;
            s += c * c;
        }
        ssq[p] = s;
        // Relative guard: a constant row leaves only rounding residue here.
        degenerate[p] = s <= static_cast<double>(t) * 1e-20 * (1.0 + mean * mean);
    }

    Tensor out(Shape{n, n});
    for (std::size_t p = 0; p < n; ++p) {
        out.at(p, p) = 1.0;
        for (std::size_t q = p + 1; q < n; ++q) {
            double r = 0.0;
            if (!degenerate[p] && !degenerate[q]) {
                double dot = 0.0;
                const double* cp = centered.data() + p * t;
                const double* cq = centered.data() + q * t;
                for (std::size_t k = 0; k < t; ++k) dot += cp[k] * cq[k];
                r = dot / std::sqrt(ssq[p] * ssq[q]);
                if (r > 1.0) r = 1.0;
                if (r < -1.0) r = -1.0;
            }
            out.at(p, q) = r;
            out.at(q, p) = r;
        }
    }
    return out;
}

inline void validate_connectivity(const Tensor& m, double tol = 1e-12) {
    if (m.ndim() != 2 || m.rows() != m.cols())
        throw DimensionError("connectivity: not square: " + shape_str(m.shape()));
    const std::size_t n = m.rows();
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(m.at(i, i) - 1.0) > tol)
            throw ContractError("connectivity: diagonal (" + std::to_string(i) +
                                ") = " + format_double(m.at(i, i)));
        for (std::size_t j = 0; j < n; ++j) {
            const double v = m.at(i, j);
            if (!(v >= -1.0 - tol && v <= 1.0 + tol))
                throw ContractError("connectivity: entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") = " + format_double(v) +
                                    " outside [-1, 1]");
            if (std::abs(v - m.at(j, i)) > tol)
                throw ContractError("connectivity: asymmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
        }
    }
}

struct Subject {
    std::string id;
    Tensor matrix;
    PhenotypeRecord record;
};

// Synthetic cohort layout: the first quarter of the ROIs carries the
// disease signal, the second quarter the sensitive-attribute signal.
struct SynthConfig {
    std::size_t n_rois = 32;
    std::size_t n_timepoints = 120;
    std::size_t n_subjects = 400;
    double effect_d = 1.0;      // disease block signal strength
    double effect_v = 1.0;      // sensitive block signal strength
    double confound_rho = 0.6;  // P(sensitive group | positive label)
    std::uint64_t seed = 0;

    std::size_t disease_block_begin() const { return 0; }
    std::size_t disease_block_end() const { return n_rois / 4; }
    std::size_t sensitive_block_begin() const { return n_rois / 4; }
    std::size_t sensitive_block_end() const { return n_rois / 2; }
};

inline void validate_config(const SynthConfig& cfg) {
    if (cfg.n_rois < 8)
        throw ConfigError("synth: n_rois must be >= 8 (two disjoint signal blocks)");
    if (cfg.n_timepoints < 3) throw ConfigError("synth: n_timepoints must be >= 3");
    if (cfg.n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
    if (!(cfg.confound_rho >= 0.0 && cfg.confound_rho <= 1.0))
        throw ConfigError("synth: confound_rho must lie in [0, 1]");
    if (!(cfg.effect_d >= 0.0) || !(cfg.effect_v >= 0.0))
        throw ConfigError("synth: effect sizes must be non-negative");
}

// Draws a cohort. Each subject starts from i.i.d. Gaussian series; positive
// subjects get a shared per-timepoint component of strength d added across
// the disease block (coherent injection raises within-block correlation),
// and the sensitive group gets the same treatment on its own block. The
// sensitive group is sex, coupled to the label with strength rho:
// P(female | positive) = rho, P(female | control) = 1 - rho.
inline std::vector<Subject> synth_cohort(const SynthConfig& cfg) {
    validate_config(cfg);
    Rng master(cfg.seed);
    std::vector<Subject> cohort;
    cohort.reserve(cfg.n_subjects);
    const std::size_t n = cfg.n_rois, t = cfg.n_timepoints;
    for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
        Rng rng = master.derive(1000 + i);
        const bool positive = rng.bernoulli(0.5);
        const double p_female = positive ? cfg.confound_rho : 1.0 - cfg.confound_rho;
        const bool female = rng.bernoulli(p_female);
        const double age = rng.uniform(8.0, 30.0);

        Tensor series(Shape{n, t});
        for (std::size_t k = 0; k < series.size(); ++k) series[k] = rng.normal();
        if (positive && cfg.effect_d > 0.0)
            for (std::size_t k = 0; k < t; ++k) {
                const double shared = cfg.effect_d * rng.normal();
                for (std::size_t r = cfg.disease_block_begin();
                     r < cfg.disease_block_end(); ++r)
                    series.at(r, k) += shared;
            }
        if (female && cfg.effect_v > 0.0)
            for (std::size_t k = 0; k < t; ++k) {
                const double shared = cfg.effect_v * rng.normal();
                for (std::size_t r = cfg.sensitive_block_begin();
                     r < cfg.sensitive_block_end(); ++r)
                    series.at(r, k) += shared;
            }

        Subject s;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "sub-%04zu", i);
        s.id = buf;
        s.record = make_record(positive ? DxGroup::positive : DxGroup::control,
                               female ? Sex::female : Sex::male, age);
        s.matrix = pearson_connectivity(series);
        cohort.push_back(std::move(s));
    }
    return cohort;
}

inline const char* kPhenotypeHeader = "id,dx_group,sex,age,srs";

inline void write_cohort(const std::vector<Subject>& cohort,
                         const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "matrices", ec);
    if (ec) throw WriteError("cannot create " + (dir / "matrices").string());
    std::string csv = std::string(kPhenotypeHeader) + "\n";
    for (const Subject& s : cohort) {
        csv += s.id;
        csv += ',';
        csv += display(s.record.dx);
        csv += ',';
        csv += display(s.record.sex);
        csv += ',';
        csv += format_double(s.record.age);
        csv += ',';
        csv += display(s.record.srs);
        csv += '\n';
        write_text_file(dir / "matrices" / (s.id + ".csv"),
                        format_matrix_csv(s.matrix));
    }
    write_text_file(dir / "phenotypes.csv", csv);
}

inline std::vector<Subject> read_cohort(const std::filesystem::path& dir) {
    const std::filesystem::path pheno = dir / "phenotypes.csv";
    std::vector<std::string> lines = read_lines(read_text_file(pheno));
    if (lines.empty() || trim(lines[0]) != kPhenotypeHeader)
        throw ParseError(pheno.string() + ": line 1: expected header '" +
                         kPhenotypeHeader + "'");
    std::vector<Subject> cohort;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = pheno.string() + ": line " + std::to_string(i + 1);
        std::vector<std::string> f = split(lines[i], ',');
        if (f.size() != 5)
            throw ParseError(where + ": expected 5 fields, got " +
                             std::to_string(f.size()));
        Subject s;
        s.id = f[0];
        if (s.id.empty()) throw ParseError(where + ": empty id");
        try {
            s.record.dx = parse_dx(f[1]);
            s.record.sex = parse_sex(f[2]);
            s.record.age = parse_double(f[3], where);
            s.record.srs = parse_srs(f[4]);
            validate_record(s.record);
        } catch (const Error& e) {
            throw ParseError(where + ": " + e.what());
        }
        for (const Subject& prev : cohort)
            if (prev.id == s.id) throw ParseError(where + ": duplicate id " + s.id);
        const std::filesystem::path mpath = dir / "matrices" / (s.id + ".csv");
        s.matrix = parse_matrix_csv(read_text_file(mpath), mpath.string());
        try {
            validate_connectivity(s.matrix);
        } catch (const Error& e) {
            throw ParseError(mpath.string() + ": " + e.what());
        }
        cohort.push_back(std::move(s));
    }
    return cohort;
}

}  // namespace phenalign
