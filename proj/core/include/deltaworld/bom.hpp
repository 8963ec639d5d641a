#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deltaworld/predictor.hpp"

namespace dw {

struct QueryBank {
    Tensor<float> queries;  // [K, D], rows i.i.d. N(mu, sigma^2 I)
    double mu = 0.0;
    double sigma = 0.02;
    uint64_t seed = 0;

    int k() const { return static_cast<int>(queries.rows()); }
    Tensor<float> row(int i) const {
        Tensor<float> q({queries.cols()});
        std::copy(queries.row_ptr(i), queries.row_ptr(i) + queries.cols(), q.v.begin());
        return q;
    }
};

QueryBank sample_queries(int k, int dim, double mu, double sigma, uint64_t seed);

// Lowest loss wins; ties break to the lowest index.
template <typename Candidate, typename Target, typename LossFn>
std::pair<int, double> bom_select(const std::vector<Candidate>& candidates, const Target& target,
                                  LossFn&& loss_fn) {
    if (candidates.empty()) throw ConfigError("bom_select: no candidates");
    int k_star = 0;
    double best = loss_fn(target, candidates[0]);
    for (size_t k = 1; k < candidates.size(); ++k) {
        double l = loss_fn(target, candidates[k]);
        if (l < best) {
            best = l;
            k_star = static_cast<int>(k);
        }
    }
    return {k_star, best};
}

enum class TrainMode { disc_spatial, bom_spatial, bom_frame, bom_delta, disc_delta };

std::string train_mode_name(TrainMode m);
TrainMode train_mode_from_name(const std::string& s);
PredictorVariant variant_of(TrainMode m);
bool is_bom_mode(TrainMode m);

// One training sequence in the representation the predictor consumes.
struct PreparedSeq {
    Tensor<float> tokens;  // token variants: [T, D]
    Tensor<float> grids;   // spatial: [T*HW, D]
    int gh = 0, gw = 0;
    std::vector<double> taus;  // T target timestamps

    int steps() const { return static_cast<int>(taus.size()); }
};

PreparedSeq prepare_training_sequence(PredictorVariant variant, const FeatureSequence& fs,
                                      const SampledWindow& win, TokenCache* cache, int seq_index);

struct StepOutcome {
    double loss_bom = 0.0;        // supervised loss over selected candidates
    double loss_mean_cand = 0.0;  // mean over all candidates (selection pass)
    std::vector<int64_t> hist;    // selection counts per query index

    double selected_entropy() const;
};

// Two passes: a no-grad selection pass scores all K candidates per target
// step and picks k* independently per step; the supervised pass re-runs only
// the selected queries with gradients. Non-selected candidates contribute
// exactly zero gradient.
StepOutcome bom_training_step(const ParamSet<float>& params, const PredictorConfig& cfg,
                              const std::vector<PreparedSeq>& batch, const QueryBank& bank,
                              std::vector<Tensor<float>>& grads);

// Discriminative step: the learned query ("pred.query") replaces sampling and
// is itself trained.
StepOutcome disc_training_step(const ParamSet<float>& params, const PredictorConfig& cfg,
                               const std::vector<PreparedSeq>& batch,
                               std::vector<Tensor<float>>& grads);

struct PredictorTrainConfig {
    int iters = 600;
    int batch = 2;
    int seq_len = 8;
    int k_train = 16;
    double lr_peak = 1e-4;
    double warmup_fraction = 0.1;
    double weight_decay = 0.4;
    double dt_min = 1.0 / 25.0;
    double dt_max = 1.0 / 3.0;
    double query_mu = 0.0;
    double query_sigma = 0.02;
    int finetune_iters = 0;            // optional second stage
    double finetune_lr_factor = 0.1;   // at a lower constant rate
    uint64_t seed = 0;
    std::string log_csv;      // per-step metrics; empty disables
    std::string log_header;   // prepended as a comment line
};

struct PredictorTrainResult {
    PredictorConfig model;
    ParamSet<float> params;
    TrainLog log;
};

// Trains any of the five modes. frame/delta modes need the frozen-tokenizer
// cache; spatial modes ignore it. init_params, when given, resumes from an
// existing parameter set instead of a fresh init.
PredictorTrainResult train_predictor(TrainMode mode, const std::vector<FeatureSequence>& feats,
                                     TokenCache* cache, PredictorConfig model_cfg,
                                     const PredictorTrainConfig& tcfg,
                                     const ParamSet<float>* init_params = nullptr);

}  // namespace dw
