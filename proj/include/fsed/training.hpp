#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/dataset.hpp"
#include "fsed/losses.hpp"
#include "fsed/models.hpp"
#include "fsed/targets.hpp"

namespace fsed {

inline constexpr double kProposalLearningRate = 1e-7;
inline constexpr double kWindowLearningRate = 1e-4;

struct OptimConfig {
    /// Zero selects the variant default (1e-7 proposal models, 1e-4 window models).
    double learning_rate = 0.0;
    int eval_every = 1250;
    int val_sample = 750;
    int patience = 10;
    long long max_episodes = 0;  // 0: until early stopping
    double max_seconds = 0.0;    // 0: no wall-clock limit
    double clip_norm = 5.0;
    int train_limit = 0;                 // use only the first N training episodes (0: all)
    std::string validation_split = "val";  // "train" validates on the training pool
    int log_every = 25;
    bool cache_features = true;

    [[nodiscard]] double effective_learning_rate(Variant v) const;
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

/// Supplies episode features by split and index.
class EpisodeSource {
public:
    virtual ~EpisodeSource() = default;
    [[nodiscard]] virtual int count(Split split) const = 0;
    [[nodiscard]] virtual const EpisodeFeatures& features(Split split, int index) = 0;
    /// Throws when the episodes cannot feed `variant`.
    virtual void check_compatible(Variant variant) const = 0;
};

/// Episodes of a manifest on disk; log-mel features cached in memory on request.
class ManifestSource final : public EpisodeSource {
public:
    ManifestSource(DatasetManifest manifest, std::filesystem::path root, bool cache = true);

    [[nodiscard]] int count(Split split) const override;
    [[nodiscard]] const EpisodeFeatures& features(Split split, int index) override;
    void check_compatible(Variant variant) const override;
    [[nodiscard]] const DatasetManifest& manifest() const { return manifest_; }
    [[nodiscard]] const EpisodeRecord& record(Split split, int index) const;

private:
    DatasetManifest manifest_;
    std::filesystem::path root_;
    bool cache_;
    std::array<std::vector<const EpisodeRecord*>, 3> splits_;
    std::map<std::pair<int, int>, EpisodeFeatures> cached_;
    EpisodeFeatures scratch_;
};

struct TrainState {
    long long step = 0;
    double best_val_loss = 0.0;
    bool has_best = false;
    int rounds_since_best = 0;
    int evaluations = 0;
    bool stopped_early = false;
    std::string stop_reason;
    std::string rng_state;
    std::filesystem::path checkpoint;
};

nlohmann::json to_json(const TrainState& s);

struct FitResult {
    TrainState state;
    std::vector<double> val_history;
    std::vector<double> train_history;  // mean total loss per logging interval
};

/// Called after each validation round with the current state.
using EvalHook = std::function<void(const Model&, const TrainState&)>;

/// Episodic Adam training with periodic validation, checkpointing the best
/// model under `out_dir/checkpoint` and logging JSON lines to `out_dir/train_log.jsonl`.
FitResult fit(Model& model, EpisodeSource& data, const OptimConfig& optim, const LossConfig& loss, std::uint64_t seed,
              const std::filesystem::path& out_dir, const EvalHook& hook = {});

/// Training configuration file: {"model": ..., "optim": ..., "loss": ..., "seed": ...}.
struct TrainConfig {
    ModelConfig model;
    OptimConfig optim;
    LossConfig loss;
    std::uint64_t seed = 0;
};

TrainConfig load_train_config(const std::filesystem::path& path);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace fsed
