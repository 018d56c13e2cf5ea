#include "fsed/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace fsed {

using nlohmann::json;

namespace {

double iou_seconds(double a0, double a1, double b0, double b1) { return iou(Interval{a0, a1}, Interval{b0, b1}); }

std::string slot_label(int slot) { return "slot" + std::to_string(slot); }

json table_json(const F1Table& t) {
    json per = json::object();
    for (const auto& [label, c] : t.per_class) per[label] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"f1", c.f1()}};
    return {{"macro", t.macro}, {"per_class", per}};
}

F1Table table_from_json(const json& j) {
    F1Table t;
    t.macro = j.value("macro", 0.0);
    if (j.contains("per_class")) {
        for (const auto& [label, c] : j.at("per_class").items()) {
            t.per_class[label] = {c.value("tp", 0), c.value("fp", 0), c.value("fn", 0)};
        }
    }
    return t;
}

json mean_std_json(const MeanStd& m) {
    return {{"mean", m.mean}, {"std", m.std}, {"count", m.count}, {"undefined", m.undefined}};
}

MeanStd mean_std_from_json(const json& j) {
    return {j.value("mean", 0.0), j.value("std", 0.0), j.value("count", 0), j.value("undefined", 0)};
}

F1Table finish_table(std::map<std::string, ClassCounts> counts, const std::map<std::string, int>& truths) {
    F1Table t;
    double sum = 0.0;
    for (const auto& [label, n] : truths) {
        if (n == 0) continue;
        t.per_class[label] = counts[label];
        sum += counts[label].f1();
    }
    t.macro = t.per_class.empty() ? 0.0 : sum / static_cast<double>(t.per_class.size());
    return t;
}

}  // namespace

std::vector<Region> windows_to_proposals(const std::vector<WindowPrediction>& windows, int no_event) {
    std::vector<Region> out;
    std::size_t i = 0;
    while (i < windows.size()) {
        std::size_t j = i;
        double conf = 0.0;
        const int label = windows[i].predicted;
        while (j < windows.size() && windows[j].predicted == label) {
            conf += windows[j].class_probs.at(static_cast<std::size_t>(label));
            ++j;
        }
        if (label != no_event) {
            out.push_back({windows[i].start * kFrameSeconds, (windows[j - 1].start + kWindowFrames) * kFrameSeconds, label,
                           conf / static_cast<double>(j - i)});
        }
        i = j;
    }
    return out;
}

std::optional<double> average_precision(std::vector<ScoredUnit> units) {
    std::stable_sort(units.begin(), units.end(), [](const ScoredUnit& a, const ScoredUnit& b) { return a.score > b.score; });
    int positives = 0;
    double sum = 0.0;
    for (std::size_t k = 0; k < units.size(); ++k) {
        if (!units[k].positive) continue;
        ++positives;
        sum += static_cast<double>(positives) / static_cast<double>(k + 1);
    }
    if (positives == 0) return std::nullopt;
    return sum / positives;
}

double unit_accuracy(std::span<const LabeledUnit> units) {
    if (units.empty()) return 0.0;
    const auto correct = std::count_if(units.begin(), units.end(), [](const LabeledUnit& u) { return u.truth == u.predicted; });
    return static_cast<double>(correct) / static_cast<double>(units.size());
}

QueryMatch match_query(const F1Query& query, const F1Options& opt) {
    QueryMatch m;
    m.kept = query.detections;
    std::stable_sort(m.kept.begin(), m.kept.end(),
                     [](const F1Detection& a, const F1Detection& b) { return a.event_prob > b.event_prob; });
    if (m.kept.size() > static_cast<std::size_t>(opt.top_k)) m.kept.resize(static_cast<std::size_t>(opt.top_k));
    m.matched_truth.assign(m.kept.size(), -1);
    std::vector<bool> used(query.truths.size(), false);
    for (std::size_t d = 0; d < m.kept.size(); ++d) {
        const auto& det = m.kept[d];
        if (det.label.empty()) continue;
        double best = -1.0;
        int arg = -1;
        for (std::size_t g = 0; g < query.truths.size(); ++g) {
            const auto& t = query.truths[g];
            if (used[g] || t.label != det.label) continue;
            const double v = iou_seconds(det.start_s, det.end_s, t.start_s, t.end_s);
            if (v >= opt.iou_threshold && v > best) {
                best = v;
                arg = static_cast<int>(g);
            }
        }
        if (arg >= 0) {
            used[static_cast<std::size_t>(arg)] = true;
            m.matched_truth[d] = arg;
        }
    }
    return m;
}

F1Table f1_per_class(std::span<const F1Query> queries, const F1Options& opt) {
    std::map<std::string, ClassCounts> counts;
    std::map<std::string, int> truths;
    for (const auto& q : queries) {
        const QueryMatch m = match_query(q, opt);
        std::vector<bool> hit(q.truths.size(), false);
        for (std::size_t d = 0; d < m.kept.size(); ++d) {
            if (m.kept[d].label.empty()) continue;
            if (m.matched_truth[d] >= 0) {
                ++counts[m.kept[d].label].tp;
                hit[static_cast<std::size_t>(m.matched_truth[d])] = true;
            } else {
                ++counts[m.kept[d].label].fp;
            }
        }
        for (std::size_t g = 0; g < q.truths.size(); ++g) {
            ++truths[q.truths[g].label];
            if (!hit[g]) ++counts[q.truths[g].label].fn;
        }
    }
    return finish_table(std::move(counts), truths);
}

std::map<double, std::optional<F1Table>> ebr_breakdown(std::span<const F1Query> queries, std::span<const double> levels,
                                                      const F1Options& opt) {
    std::map<double, std::map<std::string, ClassCounts>> counts;
    std::map<double, std::map<std::string, int>> truths;
    auto level_of = [&](double ebr) {
        double best = levels.front();
        for (double l : levels) {
            if (std::abs(l - ebr) < std::abs(best - ebr)) best = l;
        }
        return best;
    };
    for (const auto& q : queries) {
        const QueryMatch m = match_query(q, opt);
        std::vector<bool> hit(q.truths.size(), false);
        for (std::size_t d = 0; d < m.kept.size(); ++d) {
            const auto& det = m.kept[d];
            if (det.label.empty()) continue;
            if (m.matched_truth[d] >= 0) {
                const auto g = static_cast<std::size_t>(m.matched_truth[d]);
                hit[g] = true;
                ++counts[level_of(q.truths[g].ebr_db)][det.label].tp;
                continue;
            }
            if (q.truths.empty()) continue;
            // Nearest truth: largest overlap, then smallest centre distance.
            std::size_t near = 0;
            double best_iou = -1.0;
            double best_dist = std::numeric_limits<double>::infinity();
            const double c = 0.5 * (det.start_s + det.end_s);
            for (std::size_t g = 0; g < q.truths.size(); ++g) {
                const double v = iou_seconds(det.start_s, det.end_s, q.truths[g].start_s, q.truths[g].end_s);
                const double dist = std::abs(c - 0.5 * (q.truths[g].start_s + q.truths[g].end_s));
                if (v > best_iou || (v == best_iou && dist < best_dist)) {
                    best_iou = v;
                    best_dist = dist;
                    near = g;
                }
            }
            ++counts[level_of(q.truths[near].ebr_db)][det.label].fp;
        }
        for (std::size_t g = 0; g < q.truths.size(); ++g) {
            const double l = level_of(q.truths[g].ebr_db);
            ++truths[l][q.truths[g].label];
            if (!hit[g]) ++counts[l][q.truths[g].label].fn;
        }
    }
    std::map<double, std::optional<F1Table>> out;
    for (double l : levels) {
        if (truths[l].empty()) {
            out[l] = std::nullopt;
        } else {
            out[l] = finish_table(counts[l], truths[l]);
        }
    }
    return out;
}

std::vector<std::vector<long long>> confusion_matrix(std::span<const LabeledUnit> units, int n_way) {
    const auto size = static_cast<std::size_t>(n_way + 1);
    std::vector<std::vector<long long>> m(size, std::vector<long long>(size, 0));
    for (const auto& u : units) {
        if (u.truth < 0 || u.truth > n_way || u.predicted < 0 || u.predicted > n_way) {
            throw Error("confusion_matrix: label out of range");
        }
        ++m[static_cast<std::size_t>(u.truth)][static_cast<std::size_t>(u.predicted)];
    }
    return m;
}

MeanStd mean_std(std::span<const std::optional<double>> values) {
    MeanStd m;
    double sum = 0.0;
    for (const auto& v : values) {
        if (!v) {
            ++m.undefined;
            continue;
        }
        sum += *v;
        ++m.count;
    }
    if (m.count == 0) return m;
    m.mean = sum / m.count;
    double var = 0.0;
    for (const auto& v : values) {
        if (v) var += (*v - m.mean) * (*v - m.mean);
    }
    m.std = std::sqrt(var / m.count);
    return m;
}

EpisodeEvaluation evaluate_episode(const EpisodeFeatures& ep, const EpisodePrediction& pred, bool proposal_model,
                                   const EvalOptions& opt) {
    if (pred.queries.size() != ep.queries.size()) throw Error("prediction does not match the episode's queries");
    const int n = ep.n_way();
    EpisodeEvaluation out;
    std::vector<ScoredUnit> ap_units;
    std::vector<ScoredUnit> ap1_units;
    for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
        const auto& q = ep.queries[qi];
        const auto& p = pred.queries[qi];
        F1Query fc;
        F1Query fs;
        for (std::size_t e = 0; e < q.events.size(); ++e) {
            const auto& g = q.events[e];
            fc.truths.push_back({g.start_s, g.end_s, ep.classes.at(static_cast<std::size_t>(g.slot)), g.ebr_db});
            fs.truths.push_back({g.start_s, g.end_s, slot_label(g.slot), g.ebr_db});
        }
        auto add_detection = [&](double s, double e, double prob, int label) {
            fc.detections.push_back({s, e, prob, label == n ? "" : ep.classes.at(static_cast<std::size_t>(label))});
            fs.detections.push_back({s, e, prob, label == n ? "" : slot_label(label)});
        };
        if (proposal_model) {
            for (const auto& s1 : p.stage1) {
                ap1_units.push_back({s1.score, interval_target(s1.interval, q.events, opt.unit_iou, n) != n});
            }
            for (const auto& f : p.final) {
                const int truth = interval_target(f.interval, q.events, opt.unit_iou, n);
                ap_units.push_back({f.event_score, truth != n});
                out.units.push_back({truth, f.predicted});
                add_detection(f.interval.start * kFeatureFrameSeconds, f.interval.end * kFeatureFrameSeconds,
                              f.event_score, f.predicted);
            }
        } else {
            std::vector<int> starts;
            for (const auto& w : p.windows) starts.push_back(w.start);
            const auto targets = window_targets(q.events, starts, n);
            for (std::size_t w = 0; w < p.windows.size(); ++w) {
                ap_units.push_back({1.0 - p.windows[w].class_probs.at(static_cast<std::size_t>(n)), targets[w] != n});
                out.units.push_back({targets[w], p.windows[w].predicted});
            }
            for (const auto& r : windows_to_proposals(p.windows, n)) add_detection(r.start_s, r.end_s, r.confidence, r.predicted);
        }
        out.by_class.push_back(std::move(fc));
        out.by_slot.push_back(std::move(fs));
    }
    out.ap = average_precision(std::move(ap_units));
    if (proposal_model) out.ap_stage1 = average_precision(std::move(ap1_units));
    out.accuracy = unit_accuracy(out.units);
    return out;
}

namespace {

json detections_json(const EpisodeFeatures& ep, std::size_t qi, const QueryPrediction& p) {
    json props = json::array();
    for (const auto& f : p.final) {
        props.push_back({{"start_s", f.interval.start * kFeatureFrameSeconds},
                         {"end_s", f.interval.end * kFeatureFrameSeconds},
                         {"start_frame", f.interval.start},
                         {"end_frame", f.interval.end},
                         {"event_score", f.event_score},
                         {"class_probs", f.class_probs},
                         {"predicted", f.predicted == ep.n_way() ? json(nullptr) : json(ep.classes[static_cast<std::size_t>(f.predicted)])}});
    }
    json s1 = json::array();
    for (const auto& s : p.stage1) s1.push_back(proposal_json(s));
    json wins = json::array();
    for (const auto& w : p.windows) {
        wins.push_back({{"start_s", w.start * kFrameSeconds},
                        {"end_s", (w.start + kWindowFrames) * kFrameSeconds},
                        {"class_probs", w.class_probs},
                        {"predicted", w.predicted == ep.n_way() ? json(nullptr) : json(ep.classes[static_cast<std::size_t>(w.predicted)])}});
    }
    json truth = json::array();
    for (const auto& e : ep.queries[qi].events) {
        truth.push_back({{"class", ep.classes[static_cast<std::size_t>(e.slot)]}, {"start_s", e.start_s}, {"end_s", e.end_s}, {"ebr_db", e.ebr_db}});
    }
    json j = {{"episode", ep.id}, {"query", qi}, {"classes", ep.classes}, {"truth", truth}};
    if (!p.final.empty() || !p.stage1.empty()) {
        j["proposals"] = props;
        j["stage1"] = s1;
    }
    if (!p.windows.empty()) j["windows"] = wins;
    return j;
}

}  // namespace

MetricsReport evaluate(const Model& model, EpisodeSource& data, Split split, const EvalOptions& opt,
                       std::ostream* detections) {
    const bool proposal = is_proposal_variant(model.config().variant);
    data.check_compatible(model.config().variant);
    int count = data.count(split);
    if (opt.limit > 0) count = std::min(count, opt.limit);
    if (count == 0) throw Error("split " + split_name(split) + " has no episodes");

    MetricsReport r;
    r.variant = variant_name(model.config().variant);
    r.split = split_name(split);
    r.episodes = count;
    std::vector<std::optional<double>> aps;
    std::vector<std::optional<double>> aps1;
    std::vector<std::optional<double>> accs;
    std::vector<F1Query> by_class;
    std::vector<F1Query> by_slot;
    std::vector<LabeledUnit> units;
    for (int i = 0; i < count; ++i) {
        const EpisodeFeatures& ep = data.features(split, i);
        if (r.n_way == 0) r.n_way = ep.n_way();
        if (ep.n_way() != r.n_way) throw Error("episodes disagree on n-way");
        const EpisodePrediction pred = model.predict(ep);
        EpisodeEvaluation e = evaluate_episode(ep, pred, proposal, opt);
        aps.push_back(e.ap);
        if (proposal) aps1.push_back(e.ap_stage1);
        accs.emplace_back(e.accuracy);
        by_class.insert(by_class.end(), e.by_class.begin(), e.by_class.end());
        by_slot.insert(by_slot.end(), e.by_slot.begin(), e.by_slot.end());
        units.insert(units.end(), e.units.begin(), e.units.end());
        if (detections) {
            for (std::size_t q = 0; q < pred.queries.size(); ++q) *detections << detections_json(ep, q, pred.queries[q]).dump() << '\n';
        }
    }
    r.ap = mean_std(aps);
    if (proposal) r.ap_stage1 = mean_std(aps1);
    r.accuracy = mean_std(accs);
    r.f1_class = f1_per_class(by_class, opt.f1);
    r.f1_slot = f1_per_class(by_slot, opt.f1);
    r.ebr_f1 = ebr_breakdown(by_class, kEbrLevels, opt.f1);
    r.confusion = confusion_matrix(units, r.n_way);
    return r;
}

json to_json(const MetricsReport& r) {
    json ebr = json::array();
    for (const auto& [level, t] : r.ebr_f1) {
        ebr.push_back({{"ebr_db", level}, {"f1", t ? json(t->macro) : json(nullptr)}, {"table", t ? table_json(*t) : json(nullptr)}});
    }
    json labels = json::array();
    for (int i = 0; i < r.n_way; ++i) labels.push_back(slot_label(i));
    labels.push_back("no-event");
    json j = {{"schema_version", MetricsReport::kSchemaVersion},
              {"variant", r.variant},
              {"split", r.split},
              {"episodes", r.episodes},
              {"ap", mean_std_json(r.ap)},
              {"accuracy", mean_std_json(r.accuracy)},
              {"f1", table_json(r.f1_class)},
              {"f1_slot", table_json(r.f1_slot)},
              {"ebr_f1", ebr},
              {"confusion", {{"labels", labels}, {"matrix", r.confusion}}}};
    if (is_proposal_variant(parse_variant(r.variant))) j["ap_stage1"] = mean_std_json(r.ap_stage1);
    return j;
}

MetricsReport report_from_json(const json& j) {
    if (j.value("schema_version", 0) != MetricsReport::kSchemaVersion) throw Error("unsupported report schema version");
    MetricsReport r;
    r.variant = j.at("variant").get<std::string>();
    r.split = j.value("split", "");
    r.episodes = j.value("episodes", 0);
    r.ap = mean_std_from_json(j.at("ap"));
    if (j.contains("ap_stage1")) r.ap_stage1 = mean_std_from_json(j.at("ap_stage1"));
    r.accuracy = mean_std_from_json(j.at("accuracy"));
    r.f1_class = table_from_json(j.at("f1"));
    r.f1_slot = table_from_json(j.at("f1_slot"));
    for (const auto& e : j.at("ebr_f1")) {
        const double level = e.at("ebr_db").get<double>();
        if (e.at("table").is_null()) {
            r.ebr_f1[level] = std::nullopt;
        } else {
            r.ebr_f1[level] = table_from_json(e.at("table"));
        }
    }
    r.confusion = j.at("confusion").at("matrix").get<std::vector<std::vector<long long>>>();
    r.n_way = static_cast<int>(r.confusion.size()) - 1;
    return r;
}

}  // namespace fsed
