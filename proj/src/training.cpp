#include "fsed/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fsed/backbones.hpp"
#include "fsed/nn/parameters.hpp"

namespace fsed {

namespace fs = std::filesystem;
using nlohmann::json;

double OptimConfig::effective_learning_rate(Variant v) const {
    if (learning_rate > 0.0) return learning_rate;
    return is_proposal_variant(v) ? kProposalLearningRate : kWindowLearningRate;
}

void to_json(json& j, const OptimConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"eval_every", c.eval_every},
         {"val_sample", c.val_sample},
         {"patience", c.patience},
         {"max_episodes", c.max_episodes},
         {"max_seconds", c.max_seconds},
         {"clip_norm", c.clip_norm},
         {"train_limit", c.train_limit},
         {"validation_split", c.validation_split},
         {"log_every", c.log_every},
         {"cache_features", c.cache_features}};
}

void from_json(const json& j, OptimConfig& c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.val_sample = j.value("val_sample", c.val_sample);
    c.patience = j.value("patience", c.patience);
    c.max_episodes = j.value("max_episodes", c.max_episodes);
    c.max_seconds = j.value("max_seconds", c.max_seconds);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.train_limit = j.value("train_limit", c.train_limit);
    c.validation_split = j.value("validation_split", c.validation_split);
    c.log_every = j.value("log_every", c.log_every);
    c.cache_features = j.value("cache_features", c.cache_features);
    if (c.learning_rate < 0.0) throw Error("learning_rate must be positive");
    if (c.eval_every < 1 || c.val_sample < 1) throw Error("eval_every and val_sample must be positive");
    if (c.patience < 1) throw Error("patience must be positive");
    parse_split(c.validation_split);
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"model", c.model}, {"optim", c.optim}, {"loss", c.loss}, {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("optim")) c.optim = j.at("optim").get<OptimConfig>();
    if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
    c.seed = j.value("seed", c.seed);
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("config not found: " + path.string());
    try {
        return json::parse(in).get<TrainConfig>();
    } catch (const json::exception& e) {
        throw Error("malformed training config " + path.string() + ": " + e.what());
    }
}

ManifestSource::ManifestSource(DatasetManifest manifest, fs::path root, bool cache)
    : manifest_(std::move(manifest)), root_(std::move(root)), cache_(cache) {
    for (Split s : {Split::Train, Split::Val, Split::Test}) splits_[static_cast<std::size_t>(s)] = manifest_.split(s);
}

int ManifestSource::count(Split split) const { return static_cast<int>(splits_[static_cast<std::size_t>(split)].size()); }

const EpisodeRecord& ManifestSource::record(Split split, int index) const {
    const auto& list = splits_[static_cast<std::size_t>(split)];
    if (index < 0 || static_cast<std::size_t>(index) >= list.size()) throw Error("episode index out of range");
    return *list[static_cast<std::size_t>(index)];
}

const EpisodeFeatures& ManifestSource::features(Split split, int index) {
    const auto key = std::make_pair(static_cast<int>(split), index);
    if (cache_) {
        if (auto it = cached_.find(key); it != cached_.end()) return it->second;
    }
    EpisodeFeatures f = extract_features(load_episode(record(split, index), root_));
    if (cache_) return cached_.emplace(key, std::move(f)).first->second;
    scratch_ = std::move(f);
    return scratch_;
}

void ManifestSource::check_compatible(Variant variant) const {
    if (manifest_.schema_version != DatasetManifest::kSchemaVersion) throw Error("unsupported manifest schema version");
    const double query_s = manifest_.config.value("query_seconds", kQuerySeconds);
    const int frames = frame_count(static_cast<std::size_t>(query_s * kSampleRate));
    if (is_proposal_variant(variant)) {
        if (frames < kBackboneStride) throw Error("manifest/model mismatch: queries too short for the backbone");
    } else if (frames < kWindowFrames) {
        throw Error("manifest/model mismatch: queries shorter than one 128-frame window");
    }
    for (const auto& e : manifest_.episodes) {
        if (e.classes.empty() || e.support.size() != e.classes.size()) {
            throw Error("manifest/model mismatch: episode " + e.id + " lacks support groups");
        }
    }
}

json to_json(const TrainState& s) {
    return {{"step", s.step},
            {"best_val_loss", s.has_best ? json(s.best_val_loss) : json(nullptr)},
            {"rounds_since_best", s.rounds_since_best},
            {"evaluations", s.evaluations},
            {"stopped_early", s.stopped_early},
            {"stop_reason", s.stop_reason},
            {"rng_state", s.rng_state}};
}

namespace {

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

FitResult fit(Model& model, EpisodeSource& data, const OptimConfig& optim, const LossConfig& loss, std::uint64_t seed,
              const fs::path& out_dir, const EvalHook& hook) {
    const Variant variant = model.config().variant;
    data.check_compatible(variant);
    int n_train = data.count(Split::Train);
    if (optim.train_limit > 0) n_train = std::min(n_train, optim.train_limit);
    const Split val_split = parse_split(optim.validation_split);
    int n_val = data.count(val_split);
    if (val_split == Split::Train) n_val = n_train;
    if (n_train == 0) throw Error("manifest/model mismatch: no training episodes");
    if (n_val == 0) throw Error("manifest/model mismatch: no validation episodes");

    fs::create_directories(out_dir);
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw Error("cannot write training log in " + out_dir.string());

    nn::AdamConfig acfg;
    acfg.learning_rate = optim.effective_learning_rate(variant);
    acfg.clip_norm = optim.clip_norm;
    nn::Adam adam(acfg);
    Rng rng(derive_seed({seed, 0x747261696eull}));

    FitResult result;
    TrainState& st = result.state;
    st.checkpoint = out_dir / "checkpoint";
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> order(static_cast<std::size_t>(n_train));
    std::size_t cursor = order.size();
    LossBreakdown interval_sum;
    int interval_count = 0;

    auto validate = [&]() {
        std::vector<int> pool(static_cast<std::size_t>(n_val));
        std::iota(pool.begin(), pool.end(), 0);
        Rng vrng(derive_seed({seed, 0x76616cull, static_cast<std::uint64_t>(st.evaluations)}));
        shuffle(pool.begin(), pool.end(), vrng);
        pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(optim.val_sample)));
        std::sort(pool.begin(), pool.end());
        double total = 0.0;
        for (int i : pool) total += model.evaluate_loss(data.features(val_split, i), loss).total;
        const double val = total / static_cast<double>(pool.size());
        ++st.evaluations;
        result.val_history.push_back(val);
        const bool improved = !st.has_best || val < st.best_val_loss;
        if (improved) {
            st.best_val_loss = val;
            st.has_best = true;
            st.rounds_since_best = 0;
        } else {
            ++st.rounds_since_best;
        }
        st.rng_state = rng_state(rng);
        if (improved) save_checkpoint(model, st.checkpoint, {{"train", to_json(st)}, {"optim", optim}, {"loss", loss}, {"seed", seed}});
        log << json{{"step", st.step}, {"val_loss", val}, {"best_val_loss", st.best_val_loss}, {"improved", improved},
                    {"validated", pool.size()}}
                   .dump()
            << '\n';
        log.flush();
        if (hook) hook(model, st);
    };

    bool evaluated_last = false;
    while (true) {
        if (optim.max_episodes > 0 && st.step >= optim.max_episodes) {
            st.stop_reason = "max_episodes";
            break;
        }
        if (optim.max_seconds > 0.0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= optim.max_seconds) {
            st.stop_reason = "max_seconds";
            break;
        }
        if (cursor >= order.size()) {
            std::iota(order.begin(), order.end(), 0);
            shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const int idx = order[cursor++];
        model.params().zero_grad();
        const LossBreakdown parts = model.accumulate_gradients(data.features(Split::Train, idx), loss);
        if (!std::isfinite(parts.total)) throw Error("training diverged: non-finite loss at step " + std::to_string(st.step));
        const double gnorm = adam.step(model.params());
        ++st.step;
        interval_sum += parts;
        ++interval_count;
        evaluated_last = false;
        if (st.step % optim.log_every == 0) {
            LossBreakdown mean = interval_sum;
            mean /= interval_count;
            result.train_history.push_back(mean.total);
            log << json{{"step", st.step}, {"train", to_json(mean)}, {"grad_norm", gnorm}}.dump() << '\n';
            interval_sum = {};
            interval_count = 0;
        }
        if (st.step % optim.eval_every == 0) {
            validate();
            evaluated_last = true;
            if (st.rounds_since_best >= optim.patience) {
                st.stopped_early = true;
                st.stop_reason = "patience";
                break;
            }
        }
    }
    if (!evaluated_last && st.step > 0) validate();
    log << json{{"step", st.step}, {"done", true}, {"stop_reason", st.stop_reason}}.dump() << '\n';
    return result;
}

}  // namespace fsed
