// Acceptance checks: one PASS/FAIL line per criterion. Criteria 9 and 10 train
// two models for up to 25 minutes each and run only when selected.

#include <chrono>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "fixtures.hpp"
#include "fsed/evaluation.hpp"
#include "fsed/features.hpp"
#include "fsed/heads.hpp"
#include "fsed/losses.hpp"
#include "fsed/synthesis.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fsed;
using nn::Tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// ------------------------------------------------------------------ 1
Outcome frame_math() {
    const int frames = frame_count(30 * 16000);
    AudioClip clip{std::vector<float>(30 * 16000, 0.0f), 16000};
    const int spec_frames = log_mel(clip).num_frames;
    return {frames == 2998 && spec_frames == 2998, "frame_count " + std::to_string(frames) + ", log_mel " + std::to_string(spec_frames)};
}

// ------------------------------------------------------------------ 2
Outcome geometry_oracles() {
    Rng rng(1001);
    RpnConfig cfg;
    int iou_bad = 0;
    int nms_bad = 0;
    int assign_bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = uniform_int(rng, 1, 50);
        std::vector<Interval> regions;
        for (int i = 0; i < n; ++i) regions.push_back(oracle::grid_interval(rng, 0, 750, 130));
        for (std::size_t i = 0; i < regions.size(); ++i) {
            for (std::size_t j = 0; j < regions.size(); ++j) iou_bad += iou(regions[i], regions[j]) != oracle::iou_cells(regions[i], regions[j]);
        }
        std::vector<Proposal> ps;
        for (int i = 0; i < n; ++i) ps.push_back({regions[static_cast<std::size_t>(i)], static_cast<double>(uniform_int(rng, 0, 20)) / 20.0, i});
        const auto got = nms(ps, 0.1);
        const auto want = oracle::nms(ps, 0.1);
        if (got.size() != want.size()) {
            ++nms_bad;
        } else {
            for (std::size_t i = 0; i < got.size(); ++i) nms_bad += got[i].source != want[i].source;
        }
        std::vector<Interval> gt;
        const auto m = uniform_int(rng, 0, 5);
        for (int i = 0; i < m; ++i) gt.push_back(oracle::grid_interval(rng, 0, 750, 130));
        const auto t = assign_targets(regions, gt, cfg);
        const auto o = oracle::assign(regions, gt, 0.7, 0.3, true);
        for (std::size_t a = 0; a < regions.size(); ++a) {
            assign_bad += static_cast<int>(t.labels[a]) != o.label[a] || t.matched[a] != o.matched[a] || t.lo[a] != o.lo[a] ||
                          t.co[a] != o.co[a];
        }
    }
    return {iou_bad + nms_bad + assign_bad == 0, "mismatches iou " + std::to_string(iou_bad) + ", nms " + std::to_string(nms_bad) +
                                                     ", assign " + std::to_string(assign_bad) + " over 1000 instances"};
}

// ------------------------------------------------------------------ 3
Outcome refinement_round_trip() {
    Rng rng(1003);
    RpnConfig loose;
    loose.iou_positive = 0.0;
    loose.iou_negative = -1.0;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const Anchor a{2.0 * static_cast<double>(uniform_int(rng, 0, 187)), 4.0 * (1 << uniform_int(rng, 0, 4))};
        const Interval gt = Interval::from_center(uniform(rng, 0.0, 375.0), uniform(rng, 1.0, 70.0));
        const auto t = assign_targets(std::vector<Interval>{a.interval()}, std::vector<Interval>{gt}, loose);
        const Interval r = refine(a.interval(), t.lo[0], t.co[0]);
        worst = std::max({worst, std::abs(r.start - gt.start), std::abs(r.end - gt.end)});
    }
    return {worst <= 1e-6, "worst endpoint error " + num(worst) + " frames"};
}

// ------------------------------------------------------------------ 4
Outcome anchor_inventory() {
    const auto anchors = generate_anchors(375, RpnConfig{});
    std::set<double> lengths;
    bool centres = true;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        lengths.insert(anchors[i].length);
        centres = centres && anchors[i].center == 2.0 * static_cast<double>(i / 5);
    }
    const bool ok = anchors.size() == 940 && lengths == std::set<double>{4, 8, 16, 32, 64} && centres;
    return {ok, std::to_string(anchors.size()) + " anchors, " + std::to_string(lengths.size()) + " lengths, stride-2 centres " +
                    (centres ? "yes" : "no")};
}

// ------------------------------------------------------------------ 5
Outcome loss_correctness() {
    double focal_ce = 0.0;
    double fd = 0.0;
    const double h = 1e-6;
    for (int i = 1; i < 1000; ++i) {
        const double p = i / 1000.0;
        for (int y : {0, 1}) {
            const double ce = y == 1 ? -std::log(p) : -std::log(1.0 - p);
            focal_ce = std::max(focal_ce, std::abs(focal_loss(p, y, 0.0, 0.5) - 0.5 * ce));
            for (double g : {0.0, 2.0}) {
                const double num_grad = (focal_loss(p + h, y, g, 0.25) - focal_loss(p - h, y, g, 0.25)) / (2 * h);
                fd = std::max(fd, test::rel_err(focal_loss_grad(p, y, g, 0.25), num_grad));
            }
        }
    }
    double continuity = 0.0;
    for (double beta : {0.1, 1.0, 3.0}) {
        continuity = std::max(continuity, std::abs(smooth_l1(beta - 1e-12, 0.0, beta) - smooth_l1(beta + 1e-12, 0.0, beta)));
        for (int i = -50; i <= 50; ++i) {
            const double x = i * 0.13 + 0.005;
            const double num_grad = (smooth_l1(x + h, 0.0, beta) - smooth_l1(x - h, 0.0, beta)) / (2 * h);
            fd = std::max(fd, std::abs(smooth_l1_grad(x, 0.0, beta) - num_grad) / std::max(1.0, std::abs(num_grad)));
        }
    }
    Rng rng(1005);
    Tensor logits = test::random_param({16}, rng, 2.0);
    Tensor offsets = test::random_param({16}, rng, 2.0);
    const std::vector<int> labels{1, 0, -1, 0, 1, 1, 0, -1, 0, 0, 1, 0, 0, 1, -1, 0};
    const std::vector<int> rows{0, 4, 5};
    const std::vector<double> lo{0.3, -2.0, 1.5};
    const std::vector<double> co{-0.4, 0.8, 3.0};
    const double graph = test::grad_check(
                             [&] {
                                 return nn::add(focal_binary(logits, labels, 2.0, 0.25), smooth_l1_rows(offsets, rows, lo, co, 1.0));
                             },
                             {logits, offsets})
                             .worst;
    fd = std::max(fd, graph);
    const bool ok = focal_ce <= 1e-9 && continuity <= 1e-6 && fd <= 1e-4;
    return {ok, "focal vs 0.5 CE " + num(focal_ce) + ", smooth L1 jump " + num(continuity) + ", worst gradient rel. err " + num(fd)};
}

// ------------------------------------------------------------------ 6
Outcome prototype_head() {
    Rng rng(1006);
    double mean_err = 0.0;
    double sum_err = 0.0;
    double shift_err = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(uniform_int(rng, 1, 6));
        const int k = static_cast<int>(uniform_int(rng, 1, 6));
        const int d = static_cast<int>(uniform_int(rng, 1, 64));
        std::vector<std::vector<Tensor>> groups(static_cast<std::size_t>(n));
        for (auto& g : groups) {
            for (int i = 0; i < k; ++i) g.push_back(test::random_const({1, d}, rng, 3.0));
        }
        const Tensor protos = compute_prototypes(groups);
        for (int c = 0; c < n; ++c) {
            for (int j = 0; j < d; ++j) {
                double s = 0.0;
                for (const auto& e : groups[static_cast<std::size_t>(c)]) s += e.at(static_cast<std::size_t>(j));
                mean_err = std::max(mean_err, std::abs(protos.at(static_cast<std::size_t>(c * d + j)) - s / k));
            }
        }
        const int m = static_cast<int>(uniform_int(rng, 1, 5));
        const Tensor q = test::random_const({m, d}, rng, 3.0);
        const Tensor ne = test::random_const({1}, rng, 5.0);
        const Tensor probs = proto_classify(q, protos, ne);
        const Tensor z = proto_logits(q, protos, ne);
        std::vector<double> shifted(z.values().begin(), z.values().end());
        const double shift = uniform(rng, -50.0, 50.0);
        for (double& v : shifted) v += shift;
        const Tensor probs2 = nn::softmax_rows(Tensor::from(z.shape(), shifted));
        for (int r = 0; r < m; ++r) {
            double s = 0.0;
            for (int c = 0; c <= n; ++c) {
                const auto i = static_cast<std::size_t>(r * (n + 1) + c);
                s += probs.at(i);
                shift_err = std::max(shift_err, std::abs(probs.at(i) - probs2.at(i)));
            }
            sum_err = std::max(sum_err, std::abs(s - 1.0));
        }
    }
    const bool ok = mean_err <= 1e-7 && sum_err <= 1e-6 && shift_err <= 1e-6;
    return {ok, "mean err " + num(mean_err) + ", row-sum err " + num(sum_err) + ", shift err " + num(shift_err)};
}

// ------------------------------------------------------------------ 7
std::string file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome synthesis_fidelity() {
    SynthConfig cfg = test::small_synth(2, 1, 1);
    cfg.query_seconds = 30.0;
    cfg.procedural_background_seconds = 32.0;
    const Corpora corpora = load_corpora(cfg);
    const auto& bg = corpora.backgrounds.front();
    int overlaps = 0;
    double worst_ebr = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        std::vector<EventSpec> specs;
        const auto count = uniform_int(rng, 1, 3);
        std::vector<double> targets;
        for (int i = 0; i < count; ++i) {
            const auto& ev = corpora.events[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(corpora.events.size()) - 1))];
            targets.push_back(kEbrLevels[static_cast<std::size_t>(uniform_int(rng, 0, 4))]);
            specs.push_back({&ev, targets.back()});
        }
        const QueryMix mix = synthesize_query_stems(bg, specs, rng);
        const auto& ann = mix.query.annotations;
        for (std::size_t i = 0; i < ann.size(); ++i) {
            for (std::size_t j = i + 1; j < ann.size(); ++j) overlaps += ann[i].start_s < ann[j].end_s && ann[j].start_s < ann[i].end_s;
        }
        for (std::size_t i = 0; i < mix.scaled_events.size(); ++i) {
            worst_ebr = std::max(worst_ebr, std::abs(measured_ebr_db(mix, i) - targets[i]));
        }
    }
    test::TempDir a("acc_regen_a");
    test::TempDir b("acc_regen_b");
    const DatasetManifest ma = generate_dataset(cfg, corpora, 17, a.path());
    (void)generate_dataset(cfg, load_corpora(cfg), 17, b.path());
    bool identical = file_bytes(a.path() / "manifest.json") == file_bytes(b.path() / "manifest.json");
    int files = 1;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a.path());
        identical = identical && file_bytes(entry.path()) == file_bytes(b.path() / rel);
        ++files;
    }
    const bool ok = worst_ebr <= 0.1 && overlaps == 0 && identical;
    return {ok, "worst EBR error " + num(worst_ebr) + " dB, overlaps " + std::to_string(overlaps) + ", regeneration " +
                    (identical ? "byte-identical" : "differs") + " (" + std::to_string(files) + " files)"};
}

// ------------------------------------------------------------------ 8
class OracleDetector final : public Model {
public:
    OracleDetector() : Model(ModelConfig{}) {}
    LossBreakdown accumulate_gradients(const EpisodeFeatures&, const LossConfig&) override { return {}; }
    [[nodiscard]] LossBreakdown evaluate_loss(const EpisodeFeatures&, const LossConfig&) const override { return {}; }
    [[nodiscard]] EpisodePrediction predict(const EpisodeFeatures& ep) const override {
        EpisodePrediction pred;
        for (const auto& q : ep.queries) {
            QueryPrediction qp;
            for (const auto& e : q.events) {
                std::vector<double> probs(static_cast<std::size_t>(ep.n_way() + 1), 0.0);
                probs[static_cast<std::size_t>(e.slot)] = 1.0;
                qp.stage1.push_back({e.frames(), 1.0});
                qp.final.push_back({e.frames(), 1.0, probs, e.slot});
            }
            pred.queries.push_back(std::move(qp));
        }
        return pred;
    }
};

Outcome metric_oracle() {
    test::MemorySource data(test::small_synth(1, 1, 6), 23);
    const MetricsReport r = evaluate(OracleDetector{}, data, Split::Test);
    auto rank = [](std::initializer_list<bool> labels) {
        std::vector<ScoredUnit> u;
        double s = 1.0;
        for (bool l : labels) u.push_back({s -= 0.01, l});
        return u;
    };
    const double ap1 = average_precision(rank({true, false, true})).value_or(-1);
    const double ap2 = average_precision(rank({false, false, false, false, false, false, false, false, false, true})).value_or(-1);
    F1Query q;
    q.truths = {{0.0, 10.0, "a", 0.0}};
    q.detections = {{0.0, 6.0, 0.7, "a"}, {0.0, 9.0, 0.8, "a"}};
    const double f1 = f1_per_class(std::vector<F1Query>{q}).macro;
    const bool ok = r.ap.mean == 1.0 && r.ap.count == 6 && r.f1_class.macro == 1.0 && std::abs(ap1 - 5.0 / 6.0) <= 1e-12 &&
                    std::abs(ap2 - 0.1) <= 1e-12 && std::abs(f1 - 2.0 / 3.0) <= 1e-12;
    return {ok, "oracle AP " + num(r.ap.mean) + ", F1 " + num(r.f1_class.macro) + "; examples " + num(ap1) + ", " + num(ap2) + ", " +
                    num(f1)};
}

// ------------------------------------------------------------------ 9, 10
struct OverfitResult {
    MetricsReport report;
    double train_seconds = 0.0;
    long long steps = 0;
    double loss_drop = 0.0;  // relative drop, first 10 episodes vs episodes 451-500
};

OverfitResult overfit(const std::filesystem::path& config, test::MemorySource& data, const std::string& tag) {
    const TrainConfig tc = load_train_config(config);
    const auto model = make_model(tc.model);
    test::TempDir dir(tag);
    const auto t0 = std::chrono::steady_clock::now();
    const FitResult fr = fit(*model, data, tc.optim, tc.loss, tc.seed, dir.path(), [](const Model&, const TrainState& st) {
        std::cerr << "  [" << st.step << "] best validation loss " << st.best_val_loss << '\n';
    });
    OverfitResult out;
    out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.steps = fr.state.step;
    // train_history holds 10-episode means when log_every is 10
    const auto& h = fr.train_history;
    if (tc.optim.log_every == 10 && h.size() >= 50) {
        double late = 0.0;
        for (std::size_t i = 45; i < 50; ++i) late += h[i] / 5.0;
        out.loss_drop = 1.0 - late / h.front();
    }
    const LoadedCheckpoint best = load_checkpoint(fr.state.checkpoint);
    EvalOptions opt;
    opt.limit = 20;
    out.report = evaluate(*best.model, data, Split::Train, opt);
    return out;
}

SynthConfig load_synth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("config not found: " + path.string());
    return nlohmann::json::parse(in).get<SynthConfig>();
}

// ------------------------------------------------------------------ 11
Outcome determinism() {
    test::MemorySource data(test::small_synth(4, 2, 0), 29);
    OptimConfig optim;
    optim.learning_rate = 1e-3;
    optim.max_episodes = 8;
    optim.eval_every = 4;
    optim.val_sample = 2;
    bool same = true;
    std::string which;
    for (Variant v : {Variant::ProtoRcrnn, Variant::WindowCrnn}) {
        test::TempDir a("det_a");
        test::TempDir b("det_b");
        auto ma = make_model(test::small_model(v, 3));
        auto mb = make_model(test::small_model(v, 3));
        (void)fit(*ma, data, optim, LossConfig{}, 5, a.path());
        (void)fit(*mb, data, optim, LossConfig{}, 5, b.path());
        const bool eq = file_bytes(a.path() / "checkpoint" / "params.bin") == file_bytes(b.path() / "checkpoint" / "params.bin") &&
                        file_bytes(a.path() / "checkpoint" / "checkpoint.json") == file_bytes(b.path() / "checkpoint" / "checkpoint.json") &&
                        !file_bytes(a.path() / "checkpoint" / "params.bin").empty();
        same = same && eq;
        which += variant_name(v) + (eq ? " identical" : " differs") + "; ";
    }
    return {same, which.substr(0, which.size() - 2)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::string only = "1,2,3,4,5,6,7,8,11";
    std::string config_dir = FSED_CONFIG_DIR;
    app.add_option("--criteria", only, "comma-separated criterion numbers");
    app.add_option("--configs", config_dir, "directory holding the overfit configs");
    CLI11_PARSE(app, argc, argv);
    std::set<int> selected;
    std::stringstream ss(only);
    for (std::string item; std::getline(ss, item, ',');) selected.insert(std::stoi(item));

    int failures = 0;
    auto report = [&](int id, const std::string& name, const Outcome& o) {
        std::cout << "criterion " << id << " (" << name << "): " << (o.pass ? "PASS" : "FAIL") << " | " << o.detail << std::endl;
        failures += o.pass ? 0 : 1;
    };
    auto run = [&](int id, const std::string& name, auto&& fn) {
        if (!selected.contains(id)) return;
        try {
            report(id, name, fn());
        } catch (const std::exception& e) {
            report(id, name, {false, std::string("exception: ") + e.what()});
        }
    };

    run(1, "frame math", frame_math);
    run(2, "geometry oracles", geometry_oracles);
    run(3, "refinement round trip", refinement_round_trip);
    run(4, "anchor inventory", anchor_inventory);
    run(5, "loss correctness", loss_correctness);
    run(6, "prototypical head", prototype_head);
    run(7, "synthesis fidelity", synthesis_fidelity);
    run(8, "metric oracle", metric_oracle);

    if (selected.contains(9) || selected.contains(10)) {
        try {
            const std::filesystem::path dir(config_dir);
            test::MemorySource data(load_synth(dir / "synth_overfit.json"), 11);
            const OverfitResult r = overfit(dir / "train_overfit_rcrnn.json", data, "acc_rcrnn");
            const OverfitResult w = overfit(dir / "train_overfit_window.json", data, "acc_window");
            const bool in_budget = r.train_seconds <= 1800.0 && w.train_seconds <= 1800.0;
            if (selected.contains(9)) {
                const bool ok = r.report.ap.mean >= 0.90 && r.report.f1_class.macro >= 0.80 && w.report.accuracy.mean >= 0.90 && in_budget;
                report(9, "overfit",
                       {ok, "proto-rcrnn AP " + num(r.report.ap.mean) + ", macro F1 " + num(r.report.f1_class.macro) + " (" +
                                std::to_string(r.steps) + " episodes, " + num(r.train_seconds, 5) + " s); window-crnn accuracy " +
                                num(w.report.accuracy.mean) + " (" + std::to_string(w.steps) + " episodes, " + num(w.train_seconds, 5) +
                                " s)"});
            }
            if (selected.contains(9)) {
                std::cout << "example (loss drop within 500 episodes): " << (r.loss_drop >= 0.5 ? "PASS" : "FAIL")
                          << " | proto-rcrnn training loss drop " << num(r.loss_drop) << std::endl;
                failures += r.loss_drop >= 0.5 ? 0 : 1;
            }
            if (selected.contains(10)) {
                const bool ok = r.report.ap.mean >= r.report.ap_stage1.mean - 0.02;
                report(10, "stage-II benefit",
                       {ok, "stage-I AP " + num(r.report.ap_stage1.mean) + ", stage-II AP " + num(r.report.ap.mean)});
            }
        } catch (const std::exception& e) {
            if (selected.contains(9)) report(9, "overfit", {false, std::string("exception: ") + e.what()});
            if (selected.contains(10)) report(10, "stage-II benefit", {false, std::string("exception: ") + e.what()});
        }
    }

    run(11, "determinism", determinism);
    std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
