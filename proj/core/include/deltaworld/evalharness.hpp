#pragma once

#include <span>
#include <string>
#include <vector>

#include "deltaworld/bom.hpp"
#include "deltaworld/predictor.hpp"
#include "deltaworld/synthworld.hpp"
#include "deltaworld/tokenizer.hpp"
#include "deltaworld/toyvfm.hpp"

namespace dw {

// Linear probe on frozen features: per-dimension standardization followed by
// a linear map, trained once on ground-truth features and then fixed.
struct TaskHead {
    int num_classes = 0;
    Tensor<float> mean;     // [D]
    Tensor<float> inv_std;  // [D]
    Tensor<float> w;        // [C, D]
    Tensor<float> b;        // [C]

    std::vector<int> predict(const Tensor<float>& tokens) const;
    Tensor<float> probabilities(const Tensor<float>& tokens) const;  // [N, C]
};

struct TaskHeadTrainConfig {
    int iters = 300;
    double lr = 0.05;
    int frame_stride = 2;  // training frames subsampling
    uint64_t seed = 0;
};

// majority pixel class per patch; ties break to the lowest class id
std::vector<int> patch_labels(const VideoSequence& seq, int t, int patch);

TaskHead train_task_head(const std::vector<FeatureSequence>& feats,
                         const std::vector<VideoSequence>& seqs, int num_classes,
                         const TaskHeadTrainConfig& cfg);

// mean over classes of intersection/union, ignoring classes absent from both
double compute_miou(std::span<const int> pred, std::span<const int> truth, int num_classes);

// ---- rollouts ----

struct EvalProtocol {
    int context_frames = 4;
    double stride_s = 0.25;  // spacing of context and target frames
    int k_eval = 20;
    double query_mu = 0.0;
    double query_sigma = 0.02;
    bool use_learned_query = false;  // discriminative models: one deterministic hypothesis
    uint64_t seed = 0;
};

struct PredictorRuntime {
    PredictorConfig cfg;
    ParamSet<float> params;
};

struct Trajectory {
    std::vector<Tensor<float>> queries;   // fresh query per step
    std::vector<Tensor<float>> tokens;    // predicted tokens per step (token variants)
    std::vector<FeatureGrid> grids;       // decoded feature grids per step
    double final_feature_loss = 0.0;      // smooth L1 to ground truth at the last step
};

struct RolloutSet {
    std::vector<Trajectory> trajectories;
    std::vector<int> target_frames;   // source frame index per predicted step
    std::vector<double> target_taus;
    int last_context_frame = 0;
};

// K independent trajectories from a shared context; trajectory i, step s
// draws its query from hash(seed, i, s), so a trajectory's outputs do not
// depend on which other trajectories exist.
RolloutSet rollout(const PredictorRuntime& model, const Tokenizer* tok, const ToyVfm& vfm,
                   const VideoSequence& seq, const FeatureSequence& feats, int steps,
                   const EvalProtocol& proto);

// ---- scores ----

// sample with the lowest final-step feature loss; reports its task metric
double score_best(const RolloutSet& rollouts, const Tensor<float>& gt_final_tokens,
                  std::span<const int> true_labels, const TaskHead& head);

// task head applied once to the feature average of all samples
double score_mean(const RolloutSet& rollouts, std::span<const int> true_labels, const TaskHead& head);

double copy_last_score(const FeatureGrid& last_context, std::span<const int> future_labels,
                       const TaskHead& head);
double present_score(const FeatureGrid& future, std::span<const int> future_labels,
                     const TaskHead& head);

// fraction of oracle branches matched by at least one sample; a sample
// matches its nearest branch when within half the minimum inter-branch
// feature distance
double mode_coverage(const RolloutSet& rollouts, const std::vector<Tensor<float>>& branch_tokens);

// probability-weighted centroid (pixels) of non-background classes under the
// head, used to probe where a predicted feature map places the object
std::array<double, 2> soft_centroid(const Tensor<float>& tokens, int gh, int gw, int patch,
                                    const TaskHead& head);

// ---- dataset-level evaluation ----

struct EvalRow {
    int seq_id = 0;
    std::string horizon;  // "short" | "mid"
    int k = 0;
    double best = 0, mean = 0, copy_last = 0, present = 0;
    double best_feature_loss = 0, mean_feature_loss = 0;
};

struct EvalSummary {
    std::vector<EvalRow> rows;  // one per sequence x horizon
    double best_miou = 0, mean_miou = 0, copy_last_miou = 0, present_miou = 0;     // mid horizon
    double best_feature_loss = 0, mean_feature_loss = 0;                            // mid horizon
    double short_best_miou = 0, short_mean_miou = 0;
};

EvalSummary evaluate(const PredictorRuntime& model, const Tokenizer* tok, const ToyVfm& vfm,
                     const std::vector<VideoSequence>& seqs,
                     const std::vector<FeatureSequence>& feats, const TaskHead& head,
                     const EvalProtocol& proto);

// ---- train-K x eval-K sweep ----

struct SweepCell {
    int train_k = 0, eval_k = 0;
    double best_miou = 0, mean_miou = 0;
    double best_feature_loss = 0;
};

struct SweepResult {
    std::vector<int> train_ks, eval_ks;
    std::vector<SweepCell> cells;  // row-major over (train_k, eval_k)
};

SweepResult sweep_k(const std::vector<int>& train_ks, const std::vector<int>& eval_ks,
                    const std::vector<FeatureSequence>& train_feats, TokenCache* cache,
                    const PredictorConfig& model_cfg, const PredictorTrainConfig& base_train,
                    const Tokenizer& tok, const ToyVfm& vfm,
                    const std::vector<VideoSequence>& eval_seqs,
                    const std::vector<FeatureSequence>& eval_feats, const TaskHead& head,
                    const EvalProtocol& proto);

}  // namespace dw
