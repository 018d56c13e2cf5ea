#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/models.hpp"
#include "fsed/training.hpp"

namespace fsed {

/// A proposal-like region in seconds with its predicted label and confidence.
struct Region {
    double start_s = 0.0;
    double end_s = 0.0;
    int predicted = 0;
    double confidence = 0.0;
};

/// Maximal runs of one argmax label become one region spanning first start to
/// last window end; confidence is the run's mean posterior for that label.
/// Runs of `no_event` produce nothing.
std::vector<Region> windows_to_proposals(const std::vector<WindowPrediction>& windows, int no_event);

struct ScoredUnit {
    double score = 0.0;
    bool positive = false;
};

/// Step-interpolated AP of a ranking (ties keep the given order); empty when
/// there are no positives.
std::optional<double> average_precision(std::vector<ScoredUnit> units);

struct LabeledUnit {
    int truth = 0;
    int predicted = 0;
};

double unit_accuracy(std::span<const LabeledUnit> units);

/// One query's detections and ground truth for F1 matching. Labels are strings so
/// that class ids and episode slots aggregate the same way.
struct F1Detection {
    double start_s = 0.0;
    double end_s = 0.0;
    double event_prob = 0.0;
    std::string label;  // empty means no-event
};

struct F1Truth {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string label;
    double ebr_db = 0.0;
};

struct F1Query {
    std::vector<F1Detection> detections;
    std::vector<F1Truth> truths;
};

struct F1Options {
    int top_k = 5;
    double iou_threshold = 0.5;
};

struct ClassCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    [[nodiscard]] double f1() const { return tp + fp + fn == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn); }
};

struct F1Table {
    double macro = 0.0;
    std::map<std::string, ClassCounts> per_class;  // classes with at least one ground truth
};

/// Greedy matching of one query: returns, per kept detection, the matched truth
/// index or -1. Detections are ranked by event probability and cut to top_k.
struct QueryMatch {
    std::vector<F1Detection> kept;
    std::vector<int> matched_truth;  // per kept detection
};

QueryMatch match_query(const F1Query& query, const F1Options& opt);

/// Per-class counts across all queries, macro F1 over classes with a ground truth.
F1Table f1_per_class(std::span<const F1Query> queries, const F1Options& opt = {});

/// F1 with ground truths restricted to one EBR level; false positives go to the
/// level of the query's nearest ground truth.
std::map<double, std::optional<F1Table>> ebr_breakdown(std::span<const F1Query> queries, std::span<const double> levels,
                                                      const F1Options& opt = {});

/// Rows: ground truth (n slots then no-event); columns: prediction.
std::vector<std::vector<long long>> confusion_matrix(std::span<const LabeledUnit> units, int n_way);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    int count = 0;
    int undefined = 0;
};

MeanStd mean_std(std::span<const std::optional<double>> values);

struct EvalOptions {
    F1Options f1;
    double unit_iou = 0.5;  // proposal counts as an event unit at this IoU
    int limit = 0;          // first N episodes of the split (0: all)
};

struct MetricsReport {
    static constexpr int kSchemaVersion = 1;
    std::string variant;
    std::string split;
    int episodes = 0;
    MeanStd ap;
    MeanStd ap_stage1;  // proposal models only
    MeanStd accuracy;
    F1Table f1_class;
    F1Table f1_slot;
    std::map<double, std::optional<F1Table>> ebr_f1;
    std::vector<std::vector<long long>> confusion;
    int n_way = 0;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

/// Per-episode metric inputs derived from a prediction.
struct EpisodeEvaluation {
    std::optional<double> ap;
    std::optional<double> ap_stage1;
    double accuracy = 0.0;
    std::vector<LabeledUnit> units;
    std::vector<F1Query> by_class;
    std::vector<F1Query> by_slot;
};

EpisodeEvaluation evaluate_episode(const EpisodeFeatures& ep, const EpisodePrediction& pred, bool proposal_model,
                                   const EvalOptions& opt);

/// Runs inference on a split and applies the metric suite. Detections are written
/// as JSON lines (one per query) when `detections` is set.
MetricsReport evaluate(const Model& model, EpisodeSource& data, Split split, const EvalOptions& opt = {},
                       std::ostream* detections = nullptr);

/// Writes F1-vs-EBR and confusion-matrix SVGs into `dir`; returns the file paths.
std::vector<std::filesystem::path> write_plots(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace fsed
