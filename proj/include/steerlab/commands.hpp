#pragma once

#include <optional>
#include <string>

#include "steerlab/config.hpp"

namespace steerlab::commands {

struct Options {
    std::string config_path;
    std::optional<uint64_t> seed_override;
    std::optional<std::string> out_override;
    bool quiet = false;

    // subcommand-specific
    std::string prompts_path;  // generate
    std::string steer_path;    // generate / eval, empty means no hook
};

// Conventional artifact locations under the output directory.
struct Paths {
    std::string root;
    std::string corpus_dir() const { return root + "/corpus"; }
    std::string contrastive(const std::string& attr) const {
        return corpus_dir() + "/contrastive_" + attr + ".jsonl";
    }
    std::string preference() const { return corpus_dir() + "/preference.jsonl"; }
    std::string captions() const { return corpus_dir() + "/captions.jsonl"; }
    std::string attacks() const { return corpus_dir() + "/attacks.jsonl"; }
    std::string model_dir() const { return root + "/model"; }
    std::string checkpoint() const { return model_dir() + "/ckpt.bin"; }
    std::string pretrain_log() const { return model_dir() + "/pretrain_log.jsonl"; }
    std::string steering_dir() const { return root + "/steering"; }
    std::string stage1() const { return steering_dir() + "/stage1.json"; }
    std::string stage2() const { return steering_dir() + "/stage2.json"; }
    std::string spo_dir() const { return root + "/spo"; }
    std::string spo_log() const { return spo_dir() + "/spo_log.jsonl"; }
    std::string plotdata() const { return spo_dir() + "/plotdata.csv"; }
    std::string eval_dir() const { return root + "/eval"; }
    std::string report(const std::string& condition) const {
        return eval_dir() + "/report_" + condition + ".json";
    }
    std::string ablation_csv() const { return eval_dir() + "/ablation.csv"; }
    std::string generate_dir() const { return root + "/generate"; }
    std::string generations() const { return generate_dir() + "/generations.jsonl"; }
};

config::RunConfig load_effective_config(const Options& options);

int cmd_gen_corpus(const Options& options);
int cmd_pretrain(const Options& options);
int cmd_extract_steer(const Options& options);
int cmd_spo_train(const Options& options);
int cmd_generate(const Options& options);
int cmd_eval(const Options& options);
int cmd_ablate(const Options& options);

}  // namespace steerlab::commands
