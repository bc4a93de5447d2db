#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "steerlab/commands.hpp"
#include "steerlab/error.hpp"

using steerlab::commands::Options;

namespace {

void add_common(CLI::App* cmd, Options& options) {
    cmd->add_option("--config", options.config_path, "run configuration file")->required();
    auto* seed = cmd->add_option_function<uint64_t>(
        "--seed", [&options](uint64_t v) { options.seed_override = v; },
        "override the config seed");
    seed->expected(1);
    cmd->add_option_function<std::string>(
           "--out", [&options](const std::string& v) { options.out_override = v; },
           "override the output directory")
        ->expected(1);
    cmd->add_flag("--quiet", options.quiet, "suppress progress output");
}

int dispatch(int (*fn)(const Options&), const Options& options) {
    try {
        return fn(options);
    } catch (const steerlab::Error& e) {
        nlohmann::json record = {
            {"error", {{"code", steerlab::error_code_name(e.code())}, {"message", e.what()}}}};
        std::cerr << record.dump() << "\n";
        return e.code() == steerlab::ErrorCode::missing_artifact ? 2 : 1;
    } catch (const std::exception& e) {
        nlohmann::json record = {{"error", {{"code", "internal"}, {"message", e.what()}}}};
        std::cerr << record.dump() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"steerlab: two-stage activation-steering defense laboratory"};
    app.require_subcommand(1);

    Options options;
    int (*selected)(const Options&) = nullptr;

    auto* gen_corpus = app.add_subcommand("gen-corpus", "generate the synthetic datasets");
    add_common(gen_corpus, options);
    gen_corpus->callback([&] { selected = steerlab::commands::cmd_gen_corpus; });

    auto* pretrain_cmd = app.add_subcommand("pretrain", "train the vulnerable base model");
    add_common(pretrain_cmd, options);
    pretrain_cmd->callback([&] { selected = steerlab::commands::cmd_pretrain; });

    auto* extract = app.add_subcommand("extract-steer",
                                       "extract and combine difference-in-means directions");
    add_common(extract, options);
    extract->callback([&] { selected = steerlab::commands::cmd_extract_steer; });

    auto* spo_cmd = app.add_subcommand("spo-train", "refine the steering vector");
    add_common(spo_cmd, options);
    spo_cmd->callback([&] { selected = steerlab::commands::cmd_spo_train; });

    auto* generate = app.add_subcommand("generate", "decode responses for a prompt file");
    add_common(generate, options);
    generate->add_option("--prompts", options.prompts_path, "JSONL prompt file")->required();
    generate->add_option("--steer", options.steer_path, "steering vector file (optional)");
    generate->callback([&] { selected = steerlab::commands::cmd_generate; });

    auto* eval_cmd = app.add_subcommand("eval", "evaluate one condition");
    add_common(eval_cmd, options);
    eval_cmd->add_option("--steer", options.steer_path, "steering vector file (optional)");
    eval_cmd->callback([&] { selected = steerlab::commands::cmd_eval; });

    auto* ablate = app.add_subcommand("ablate", "evaluate original/stage1/stage1+stage2");
    add_common(ablate, options);
    ablate->callback([&] { selected = steerlab::commands::cmd_ablate; });

    CLI11_PARSE(app, argc, argv);
    return dispatch(selected, options);
}
