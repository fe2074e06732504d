#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hieremb/checkpoint.hpp"
#include "hieremb/engine.hpp"
#include "hieremb/hier_embedding.hpp"
#include "hieremb/trajectories.hpp"

namespace hieremb {

struct ModelConfig {
    std::string method = "hier";
    std::size_t d = 64;
    std::size_t hidden = 128;
    std::size_t layers = 2;
    std::size_t readout = 64;  // must equal d for weight tying
    std::size_t emb_dow = 4;
    std::size_t emb_tod = 8;
    std::size_t emb_dur = 4;
    std::size_t dow_vocab = 7;
    std::size_t tod_vocab = 24;
    std::size_t dur_vocab = 8;
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    std::size_t avg_interval = 10;  // optimizer steps between slice averagings
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip = 5.0;
    // averaging normally touches parameter values only; this extends it to
    // the Adam moment buffers (experimental)
    bool avg_moments = false;

    void validate() const;
};

/// Per-step input is the place embedding concatenated with the attribute
/// embeddings; two stacked LSTM layers feed a tanh readout over all layers'
/// hidden states, and logits share the embedding matrix (bias separate).
class NextPlaceModel {
public:
    NextPlaceModel(const HierarchicalVocabulary& vocab, ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const HierarchicalVocabulary& vocab() const { return *vocab_; }
    HierEmbeddingMatrix& embedding() { return emb_; }
    const HierEmbeddingMatrix& embedding() const { return emb_; }

    std::vector<Parameter*> parameters();
    std::size_t parameter_count() const;

    /// Sum of next-place cross entropies over the sequence; the number of
    /// predicted steps is steps() - 1.
    Graph::Var sequence_loss(Graph& g, const TokenizedTrajectory& seq);

    /// Mean per-step cross entropy without recording gradients.
    double mean_loss(std::span<const TokenizedTrajectory> sequences);

    std::vector<Tensor> snapshot_values() const;
    void restore_values(const std::vector<Tensor>& snapshot);
    void round_params_to_f32();

    Checkpoint to_checkpoint(const std::string& config_hash, std::uint64_t seed) const;

private:
    const HierarchicalVocabulary* vocab_;
    ModelConfig cfg_;
    HierEmbeddingMatrix emb_;
    Parameter dow_emb_;
    Parameter tod_emb_;
    Parameter dur_emb_;
    std::vector<LstmParams> lstm_;
    Parameter readout_w_;
    Parameter readout_b_;
    Parameter out_bias_;
};

struct RunMetrics {
    std::string run_id;
    std::string method;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::vector<double> train_loss;  // per epoch, per predicted step
    std::vector<double> val_loss;
    std::size_t selected_epoch = 0;  // argmin validation loss
    double test_loss = 0.0;
    double wall_seconds = 0.0;  // informational only, never serialized
};

/// Full training protocol: teacher-forced batches, Adam with global-norm
/// clipping, slice averaging at init and every avg_interval steps,
/// per-epoch validation, best-epoch selection, final averaging pass and f32
/// rounding so the in-memory test loss matches the saved checkpoint.
RunMetrics train_model(NextPlaceModel& model, const DatasetSplit& split,
                       const std::string& config_hash, std::uint64_t seed);

/// Everything a checkpoint needs to become a scoring model again.
struct LoadedModel {
    std::unique_ptr<HierarchicalVocabulary> vocab;
    std::unique_ptr<NextPlaceModel> model;
    std::string method;
    std::string config_hash;
    std::uint64_t seed = 0;
};

LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

/// Mean per-step test cross entropy of a restored checkpoint.
double evaluate_model(NextPlaceModel& model, std::span<const TokenizedTrajectory> test);

struct MethodSummary {
    std::string method;
    double mean_loss = 0.0;
    double stddev = 0.0;
    std::optional<double> p_vs_next;  // Welch p against the next method in order
    std::vector<double> losses;       // per seed
};

extern const std::vector<std::string> kCanonicalMethods;  // hier, hier1km, hier10km, nonhier

struct ExperimentResult {
    std::vector<RunMetrics> runs;  // method-major, seed-minor
    std::vector<MethodSummary> summary;
};

/// Trains every (method, seed) session over a worker pool; sessions are
/// independent and results are aggregated in deterministic order. The
/// callback (if any) runs under a lock as each session finishes.
ExperimentResult run_experiment(
    const std::vector<std::string>& methods, const std::vector<std::uint64_t>& seeds,
    const HierarchicalVocabulary& vocab, const DatasetSplit& split, const ModelConfig& base_cfg,
    const std::string& config_hash, std::size_t workers,
    const std::function<void(const RunMetrics&, NextPlaceModel&)>& on_run = nullptr);

std::string metrics_to_jsonl(const RunMetrics& metrics);
std::string summary_to_csv(const std::vector<MethodSummary>& summary);

}  // namespace hieremb
