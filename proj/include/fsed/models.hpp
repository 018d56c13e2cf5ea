#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsed/backbones.hpp"
#include "fsed/dataset.hpp"
#include "fsed/heads.hpp"
#include "fsed/losses.hpp"
#include "fsed/proposals.hpp"
#include "fsed/targets.hpp"

namespace fsed {

enum class Variant { WindowCrnn, WindowPerceiver, ProtoRcrnn, ProtoRcrnnPerceiver };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
bool is_proposal_variant(Variant v);

struct ModelConfig {
    Variant variant = Variant::ProtoRcrnn;
    InputNorm norm;
    BackboneConfig backbone;
    RpnConfig rpn;
    PerceiverConfig perceiver;
    WindowCrnnConfig window_crnn;
    int stage2_width = 512;
    /// Ground-truth intervals join the stage-I proposals during training.
    bool train_with_gt_proposals = true;
    /// NMS over final (stage-II) proposals at inference.
    bool final_nms = false;
    std::uint64_t init_seed = 0;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct QueryFeatures {
    LogMelSpectrogram spec;
    std::vector<GtEvent> events;
    std::vector<std::string> event_classes;  // class id per event
};

/// Log-mel features of one episode; support groups follow `classes`.
struct EpisodeFeatures {
    std::string id;
    std::vector<std::string> classes;
    std::vector<std::vector<LogMelSpectrogram>> support;
    std::vector<QueryFeatures> queries;

    [[nodiscard]] int n_way() const { return static_cast<int>(classes.size()); }
};

EpisodeFeatures extract_features(const Episode& episode, const MelConfig& mel = {});

struct ClassifiedProposal {
    Interval interval;  // feature frames
    double event_score = 0.0;
    std::vector<double> class_probs;  // n slots + no-event
    int predicted = 0;                // argmax; n means no-event
};

struct WindowPrediction {
    int start = 0;  // spectrogram frame
    std::vector<double> class_probs;
    int predicted = 0;
};

struct QueryPrediction {
    std::vector<Proposal> stage1;           // proposal models
    std::vector<ClassifiedProposal> final;  // proposal models
    std::vector<WindowPrediction> windows;  // window models
};

struct EpisodePrediction {
    std::vector<QueryPrediction> queries;
};

class Model {
public:
    virtual ~Model() = default;

    /// Forward and backward over one episode; gradients accumulate into params().
    virtual LossBreakdown accumulate_gradients(const EpisodeFeatures& ep, const LossConfig& loss) = 0;
    /// Loss without building a graph.
    [[nodiscard]] virtual LossBreakdown evaluate_loss(const EpisodeFeatures& ep, const LossConfig& loss) const = 0;
    [[nodiscard]] virtual EpisodePrediction predict(const EpisodeFeatures& ep) const = 0;

    [[nodiscard]] nn::ParameterSet& params() { return params_; }
    [[nodiscard]] const nn::ParameterSet& params() const { return params_; }
    [[nodiscard]] const ModelConfig& config() const { return cfg_; }

protected:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {}
    ModelConfig cfg_;
    nn::ParameterSet params_;
};

std::unique_ptr<Model> make_model(const ModelConfig& cfg);

/// Backbone, RPN, region head, second stage and the prototype head with its no-event logit.
class ProtoRcrnn final : public Model {
public:
    explicit ProtoRcrnn(const ModelConfig& cfg);

    LossBreakdown accumulate_gradients(const EpisodeFeatures& ep, const LossConfig& loss) override;
    [[nodiscard]] LossBreakdown evaluate_loss(const EpisodeFeatures& ep, const LossConfig& loss) const override;
    [[nodiscard]] EpisodePrediction predict(const EpisodeFeatures& ep) const override;

    [[nodiscard]] const CrnnBackbone& backbone() const { return *backbone_; }
    [[nodiscard]] const Rpn& rpn() const { return *rpn_; }
    [[nodiscard]] const RegionHead& head() const { return *head_; }
    [[nodiscard]] const SecondStage& second_stage() const { return *second_; }
    [[nodiscard]] const nn::Tensor& no_event() const { return no_event_; }

    /// Full-clip region embedding of a support spectrogram -> (1 x D).
    [[nodiscard]] nn::Tensor embed_support(const LogMelSpectrogram& spec) const;
    /// (n x D) prototypes from the episode's supports.
    [[nodiscard]] nn::Tensor prototypes(const EpisodeFeatures& ep) const;
    /// Loss of one query against given prototypes; returns the weighted total tensor.
    [[nodiscard]] nn::Tensor query_loss(const QueryFeatures& q, const nn::Tensor& protos, int n_way,
                                        const LossConfig& loss, LossBreakdown& parts) const;
    [[nodiscard]] QueryPrediction predict_query(const QueryFeatures& q, const nn::Tensor& protos, int n_way) const;

private:
    std::unique_ptr<CrnnBackbone> backbone_;
    std::unique_ptr<Rpn> rpn_;
    std::unique_ptr<RegionHead> head_;
    std::unique_ptr<SecondStage> second_;
    nn::Tensor no_event_;
};

/// Window-level encoder with prototype classification of each 128-frame window.
class WindowModel final : public Model {
public:
    explicit WindowModel(const ModelConfig& cfg);

    LossBreakdown accumulate_gradients(const EpisodeFeatures& ep, const LossConfig& loss) override;
    [[nodiscard]] LossBreakdown evaluate_loss(const EpisodeFeatures& ep, const LossConfig& loss) const override;
    [[nodiscard]] EpisodePrediction predict(const EpisodeFeatures& ep) const override;

    [[nodiscard]] const WindowEncoder& encoder() const { return *encoder_; }
    [[nodiscard]] nn::Tensor prototypes(const EpisodeFeatures& ep) const;
    [[nodiscard]] nn::Tensor query_loss(const QueryFeatures& q, const nn::Tensor& protos, int n_way,
                                        const LossConfig& loss, LossBreakdown& parts) const;

private:
    [[nodiscard]] nn::Tensor window_probs(const QueryFeatures& q, const nn::Tensor& protos, std::vector<int>& starts) const;

    std::unique_ptr<WindowEncoder> encoder_;
    nn::Tensor no_event_;
};

/// Writes params.bin and checkpoint.json (config, step, extra state) into `dir`.
void save_checkpoint(const Model& model, const std::filesystem::path& dir, const nlohmann::json& state);

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    nlohmann::json state;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace fsed
