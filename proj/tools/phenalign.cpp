#include <cstdint>
#include <deque>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phenalign/cli.hpp"
#include "phenalign/error.hpp"

namespace {

// Collects `--flag value` pairs that override config-file entries, keeping
// the single parsing path in apply_config_entry.
struct OverrideFlag {
    CLI::Option* opt = nullptr;
    std::string key;
    std::string value;
};

class OverrideSet {
public:
    void add(CLI::App* cmd, const std::string& flag, const std::string& key,
             const std::string& help) {
        flags_.push_back(OverrideFlag{nullptr, key, ""});
        OverrideFlag& f = flags_.back();
        f.opt = cmd->add_option(flag, f.value, help);
    }

    phenalign::ConfigOverrides collect() const {
        phenalign::ConfigOverrides out;
        for (const OverrideFlag& f : flags_)
            if (f.opt->count() > 0) out.emplace_back(f.key, f.value);
        return out;
    }

private:
    std::deque<OverrideFlag> flags_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal connectivity/phenotype alignment toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    phenalign::SynthArgs synth_args;
    synth->add_option("--config", synth_args.config, "key = value config file");
    synth->add_option("--out", synth_args.out, "output cohort directory")
        ->required();
    OverrideSet synth_over;
    synth_over.add(synth, "--seed", "seed", "generator seed");

    // train
    auto* train = app.add_subcommand("train", "train with cross-validation");
    phenalign::TrainArgs train_args;
    train->add_option("--cohort", train_args.cohort, "cohort directory")
        ->required();
    train->add_option("--config", train_args.config, "key = value config file");
    train->add_option("--out", train_args.out, "output directory")->required();
    train->add_option("--jobs", train_args.jobs, "parallel fold workers");
    OverrideSet train_over;
    train_over.add(train, "--seed", "seed", "run seed");
    train_over.add(train, "--folds", "folds", "cross-validation folds");
    train_over.add(train, "--epochs", "epochs", "training epochs");
    train_over.add(train, "--batch-size", "batch_size", "batch size");
    train_over.add(train, "--lr", "lr", "base learning rate");
    train_over.add(train, "--beta", "beta", "disentanglement weight");
    train_over.add(train, "--sensitive", "sensitive",
                   "sensitive attribute (or 'none')");
    train_over.add(train, "--attn-loss", "attn_loss",
                   "attention disentanglement term: on|off");
    train_over.add(train, "--neg-grad", "neg_grad",
                   "sensitive-attribute gradient reversal: on|off");

    // eval
    auto* eval = app.add_subcommand("eval", "score a cohort with checkpoints");
    phenalign::EvalArgs eval_args;
    eval->add_option("--checkpoint", eval_args.checkpoints,
                     "checkpoint file (repeat for a fold set)")
        ->required();
    eval->add_option("--cohort", eval_args.cohort, "cohort directory")
        ->required();
    eval->add_option("--sensitive", eval_args.sensitive,
                     "sensitive attribute for the fairness metrics");
    eval->add_option("--out", eval_args.out, "directory for report files");
    eval->add_flag("--force", eval_args.force,
                   "evaluate even when the cohort hash mismatches");

    // attmap
    auto* attmap = app.add_subcommand("attmap", "export an attention map");
    phenalign::AttmapArgs attmap_args;
    attmap->add_option("--checkpoint", attmap_args.checkpoint, "checkpoint file")
        ->required();
    attmap->add_option("--cohort", attmap_args.cohort, "cohort directory")
        ->required();
    attmap->add_option("--subject", attmap_args.subject, "subject id")
        ->required();
    attmap->add_option("--token", attmap_args.token,
                       "attribute token: dx_group|sex|age|srs")
        ->required();
    attmap->add_option("--format", attmap_args.format, "csv or svg");
    attmap->add_option("--out", attmap_args.out, "output file")->required();

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run the 2x2 component grid");
    phenalign::AblateArgs ablate_args;
    ablate->add_option("--cohort", ablate_args.cohort, "cohort directory")
        ->required();
    ablate->add_option("--config", ablate_args.config, "key = value config file");
    ablate->add_option("--out", ablate_args.out, "output directory")->required();
    ablate->add_option("--seeds", ablate_args.seeds, "number of seeds per cell");
    ablate->add_option("--jobs", ablate_args.jobs, "parallel workers");
    OverrideSet ablate_over;
    ablate_over.add(ablate, "--seed", "seed", "base seed");
    ablate_over.add(ablate, "--epochs", "epochs", "training epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            synth_args.overrides = synth_over.collect();
            phenalign::cmd_synth(synth_args);
        } else if (*train) {
            train_args.overrides = train_over.collect();
            phenalign::cmd_train(train_args);
        } else if (*eval) {
            phenalign::cmd_eval(eval_args);
        } else if (*attmap) {
            phenalign::cmd_attmap(attmap_args);
        } else if (*ablate) {
            ablate_args.overrides = ablate_over.collect();
            phenalign::cmd_ablate(ablate_args);
        }
    } catch (const phenalign::UndefinedMetricError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const phenalign::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
