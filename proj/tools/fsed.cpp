// Command-line front end: synth, train, eval, plot.
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsed/dataset.hpp"
#include "fsed/evaluation.hpp"
#include "fsed/models.hpp"
#include "fsed/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw fsed::Error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw fsed::Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

fs::path manifest_path(const fs::path& data) { return fs::is_directory(data) ? data / "manifest.json" : data; }

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw fsed::Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot sound event detection: dataset synthesis, training and evaluation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Synthesize an episodic dataset");
    fs::path synth_config;
    fs::path synth_out;
    std::string corpus_root;
    bool procedural = false;
    std::uint64_t synth_seed = 0;
    bool seed_given = false;
    int jobs = 1;
    synth->add_option("--config", synth_config, "Synthesis config (JSON)")->required()->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output directory")->required();
    auto* corpus_opt = synth->add_option("--corpus", corpus_root, "Event corpus root (overrides the config)");
    synth->add_flag("--procedural", procedural, "Use the built-in procedural corpus")->excludes(corpus_opt);
    synth->add_option("--seed", synth_seed, "Dataset seed (default: config seed)")->each([&](const std::string&) { seed_given = true; });
    synth->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

    // train
    auto* train = app.add_subcommand("train", "Train a model on a synthesized dataset");
    fs::path train_config;
    fs::path train_data;
    std::string train_variant;
    fs::path train_out;
    train->add_option("--config", train_config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
    train->add_option("--data", train_data, "Dataset directory or manifest")->required()->check(CLI::ExistingPath);
    train->add_option("--model", train_variant, "Variant: window-crnn | window-perceiver | proto-rcrnn | proto-rcrnn-perceiver");
    train->add_option("--out", train_out, "Run directory")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    fs::path ckpt;
    fs::path eval_data;
    std::string split = "test";
    fs::path eval_out;
    fs::path dump;
    int limit = 0;
    eval->add_option("--checkpoint", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--data", eval_data, "Dataset directory or manifest")->required()->check(CLI::ExistingPath);
    eval->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", eval_out, "Metrics report (JSON)")->required();
    eval->add_option("--dump-detections", dump, "Write per-query detections as JSON lines");
    eval->add_option("--limit", limit, "Evaluate only the first N episodes");

    // plot
    auto* plot = app.add_subcommand("plot", "Render SVG plots from a metrics report");
    fs::path report_path;
    fs::path plot_out;
    plot->add_option("--report", report_path, "Metrics report (JSON)")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", plot_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            fsed::SynthConfig cfg = read_json(synth_config).get<fsed::SynthConfig>();
            if (!corpus_root.empty()) {
                cfg.corpus_root = corpus_root;
                if (cfg.corpus_layout == "procedural") cfg.corpus_layout = "flat";
            }
            if (procedural) cfg.corpus_layout = "procedural";
            const std::uint64_t seed = seed_given ? synth_seed : cfg.seed;
            const fsed::Corpora corpora = fsed::load_corpora(cfg);
            const auto manifest = fsed::generate_dataset(cfg, corpora, seed, synth_out, jobs);
            std::cout << "wrote " << manifest.episodes.size() << " episodes to " << synth_out << '\n';
        } else if (*train) {
            fsed::TrainConfig cfg = fsed::load_train_config(train_config);
            if (!train_variant.empty()) cfg.model.variant = fsed::parse_variant(train_variant);
            fsed::ManifestSource data(fsed::load_manifest(manifest_path(train_data)), manifest_path(train_data).parent_path(),
                                      cfg.optim.cache_features);
            auto model = fsed::make_model(cfg.model);
            fs::create_directories(train_out);
            write_json(train_out / "config.json", cfg);
            const auto result = fsed::fit(*model, data, cfg.optim, cfg.loss, cfg.seed, train_out,
                                          [](const fsed::Model&, const fsed::TrainState& st) {
                                              std::cout << "step " << st.step << " best val loss " << st.best_val_loss
                                                        << " (rounds since best " << st.rounds_since_best << ")\n";
                                          });
            std::cout << "stopped at step " << result.state.step << " (" << result.state.stop_reason << "); best checkpoint "
                      << result.state.checkpoint << '\n';
        } else if (*eval) {
            auto loaded = fsed::load_checkpoint(ckpt);
            fsed::ManifestSource data(fsed::load_manifest(manifest_path(eval_data)), manifest_path(eval_data).parent_path(), false);
            fsed::EvalOptions opt;
            opt.limit = limit;
            std::ofstream det;
            if (!dump.empty()) {
                det.open(dump, std::ios::trunc);
                if (!det) throw fsed::Error("cannot write " + dump.string());
            }
            const auto report = fsed::evaluate(*loaded.model, data, fsed::parse_split(split), opt, dump.empty() ? nullptr : &det);
            if (eval_out.has_parent_path()) fs::create_directories(eval_out.parent_path());
            write_json(eval_out, fsed::to_json(report));
            std::cout << "AP " << report.ap.mean << " +/- " << report.ap.std << ", macro F1 " << report.f1_class.macro
                      << ", accuracy " << report.accuracy.mean << '\n';
        } else if (*plot) {
            const auto report = fsed::report_from_json(read_json(report_path));
            for (const auto& p : fsed::write_plots(report, plot_out)) std::cout << p.string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
