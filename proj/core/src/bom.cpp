#include "deltaworld/bom.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <fstream>

namespace dw {

QueryBank sample_queries(int k, int dim, double mu, double sigma, uint64_t seed) {
    if (k < 1) throw ConfigError("sample_queries: K must be >= 1");
    QueryBank bank;
    bank.mu = mu;
    bank.sigma = sigma;
    bank.seed = seed;
    bank.queries = Tensor<float>({k, dim});
    Rng rng(hash_mix(seed, 0x9E41ULL));
    for (auto& x : bank.queries.v) x = static_cast<float>(rng.normal(mu, sigma));
    return bank;
}

std::string train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::disc_spatial: return "disc-spatial";
        case TrainMode::bom_spatial: return "bom-spatial";
        case TrainMode::bom_frame: return "bom-frame";
        case TrainMode::bom_delta: return "bom-delta";
        case TrainMode::disc_delta: return "disc-delta";
    }
    throw ConfigError("unknown train mode");
}

TrainMode train_mode_from_name(const std::string& s) {
    if (s == "disc-spatial") return TrainMode::disc_spatial;
    if (s == "bom-spatial") return TrainMode::bom_spatial;
    if (s == "bom-frame") return TrainMode::bom_frame;
    if (s == "bom-delta") return TrainMode::bom_delta;
    if (s == "disc-delta") return TrainMode::disc_delta;
    throw ConfigError("unknown train mode: " + s);
}

PredictorVariant variant_of(TrainMode m) {
    switch (m) {
        case TrainMode::disc_spatial:
        case TrainMode::bom_spatial: return PredictorVariant::spatial;
        case TrainMode::bom_frame: return PredictorVariant::frame;
        case TrainMode::bom_delta:
        case TrainMode::disc_delta: return PredictorVariant::delta;
    }
    throw ConfigError("unknown train mode");
}

bool is_bom_mode(TrainMode m) {
    return m == TrainMode::bom_spatial || m == TrainMode::bom_frame || m == TrainMode::bom_delta;
}

double StepOutcome::selected_entropy() const {
    int64_t total = 0;
    for (int64_t c : hist) total += c;
    if (total == 0) return 0.0;
    double e = 0.0;
    for (int64_t c : hist) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(total);
        e -= p * std::log(p);
    }
    return e;
}

PreparedSeq prepare_training_sequence(PredictorVariant variant, const FeatureSequence& fs,
                                      const SampledWindow& win, TokenCache* cache, int seq_index) {
    PreparedSeq out;
    out.taus = win.taus;
    int t_len = static_cast<int>(win.idx.size());
    if (variant == PredictorVariant::spatial) {
        const FeatureGrid& g0 = fs.grids[static_cast<size_t>(win.idx[0])];
        out.gh = g0.gh;
        out.gw = g0.gw;
        int64_t hw = static_cast<int64_t>(out.gh) * out.gw;
        out.grids = Tensor<float>({t_len * hw, g0.dim});
        for (int j = 0; j < t_len; ++j) {
            const auto& src = fs.grids[static_cast<size_t>(win.idx[static_cast<size_t>(j)])].tokens;
            std::copy(src.v.begin(), src.v.end(), out.grids.v.begin() + j * hw * g0.dim);
        }
        return out;
    }
    if (!cache) throw ConfigError("token variants need a tokenizer cache");
    int dim = static_cast<int>(cache->tokenizer().config().block.dim);
    out.tokens = Tensor<float>({t_len, dim});
    for (int j = 0; j < t_len; ++j) {
        const Tensor<float>& tok =
            (variant == PredictorVariant::frame)
                ? cache->frame(seq_index, win.idx[static_cast<size_t>(j)])
                : cache->delta(seq_index, j == 0 ? -1 : win.idx[static_cast<size_t>(j - 1)],
                               win.idx[static_cast<size_t>(j)]);
        std::copy(tok.v.begin(), tok.v.end(), out.tokens.v.begin() + j * dim);
    }
    return out;
}

namespace {

// per-step targets of a prepared sequence as tensors
Tensor<float> target_of(const PreparedSeq& s, const PredictorConfig& cfg, int t) {
    if (cfg.variant == PredictorVariant::spatial) {
        int64_t hw = static_cast<int64_t>(s.gh) * s.gw;
        Tensor<float> out({hw, cfg.block.dim});
        std::copy(s.grids.v.begin() + t * hw * cfg.block.dim,
                  s.grids.v.begin() + (t + 1) * hw * cfg.block.dim, out.v.begin());
        return out;
    }
    Tensor<float> out({1, cfg.block.dim});
    std::copy(s.tokens.v.begin() + t * cfg.block.dim, s.tokens.v.begin() + (t + 1) * cfg.block.dim,
              out.v.begin());
    return out;
}

// Forward the query rows for every (candidate, target step) combination of
// one sequence and return the per-row predictions. rows_per_target is 1 for
// token variants and HW for spatial.
Graph<float>::Var sequence_predictions(Graph<float>& g, ParamBinder<float>& bind,
                                       const PredictorConfig& cfg, const PreparedSeq& s,
                                       Graph<float>::Var query_rows,
                                       const std::vector<double>& query_taus,
                                       const std::vector<int>& query_ctx) {
    int t_len = s.steps();
    if (cfg.variant == PredictorVariant::spatial) {
        int64_t hw = static_cast<int64_t>(s.gh) * s.gw;
        Tensor<float> ctx({(t_len - 1) * hw, cfg.block.dim});
        std::copy(s.grids.v.begin(), s.grids.v.begin() + (t_len - 1) * hw * cfg.block.dim,
                  ctx.v.begin());
        std::vector<double> ctx_taus(s.taus.begin(), s.taus.end() - 1);
        return spatial_predict_rows(g, bind, cfg, ctx, ctx_taus, s.gh, s.gw, query_rows, query_taus,
                                    query_ctx);
    }
    Tensor<float> ctx({t_len - 1, cfg.block.dim});
    std::copy(s.tokens.v.begin(), s.tokens.v.begin() + (t_len - 1) * cfg.block.dim, ctx.v.begin());
    std::vector<double> ctx_taus(s.taus.begin(), s.taus.end() - 1);
    return token_predict_rows(g, bind, cfg, ctx, ctx_taus, query_rows, query_taus, query_ctx);
}

struct SelectionResult {
    std::vector<int> k_star;          // per target step
    std::vector<double> best_loss;    // per target step
    double sum_all = 0.0;             // sum of all candidate losses
    int count_all = 0;
};

// no-grad pass over all K candidates, k* per step, ties to the lowest index
SelectionResult selection_pass(const ParamSet<float>& params, const PredictorConfig& cfg,
                               const PreparedSeq& s, const QueryBank& bank) {
    int t_len = s.steps();
    int k = bank.k();
    int rpt = (cfg.variant == PredictorVariant::spatial) ? s.gh * s.gw : 1;

    Graph<float> g;
    g.grad_enabled = false;
    ParamBinder<float> bind(g, params, true);

    Tensor<float> qrows({static_cast<int64_t>(k) * t_len * rpt, cfg.block.dim});
    std::vector<double> qtaus(static_cast<size_t>(k) * t_len);
    std::vector<int> qctx(static_cast<size_t>(k) * t_len);
    for (int ki = 0; ki < k; ++ki)
        for (int t = 0; t < t_len; ++t) {
            size_t r = static_cast<size_t>(ki) * t_len + t;
            qtaus[r] = s.taus[static_cast<size_t>(t)];
            qctx[r] = t;
            for (int p = 0; p < rpt; ++p)
                std::copy(bank.queries.row_ptr(ki), bank.queries.row_ptr(ki) + cfg.block.dim,
                          qrows.row_ptr((static_cast<int64_t>(r)) * rpt + p));
        }
    auto preds = sequence_predictions(g, bind, cfg, s, g.constant(std::move(qrows)), qtaus, qctx);
    const Tensor<float>& pv = g.val(preds);

    SelectionResult sel;
    sel.k_star.assign(static_cast<size_t>(t_len), 0);
    sel.best_loss.assign(static_cast<size_t>(t_len), 0.0);
    std::vector<double> best(static_cast<size_t>(t_len), 0.0);
    for (int t = 0; t < t_len; ++t) {
        Tensor<float> target = target_of(s, cfg, t);
        for (int ki = 0; ki < k; ++ki) {
            int64_t row0 = (static_cast<int64_t>(ki) * t_len + t) * rpt;
            Tensor<float> cand({rpt, cfg.block.dim});
            std::copy(pv.v.begin() + row0 * cfg.block.dim, pv.v.begin() + (row0 + rpt) * cfg.block.dim,
                      cand.v.begin());
            double l = smooth_l1_value(cand, target, cfg.smooth_l1_beta);
            if (!std::isfinite(l))
                throw TrainError("non-finite candidate loss (query " + std::to_string(ki) + ")");
            sel.sum_all += l;
            ++sel.count_all;
            if (ki == 0 || l < best[static_cast<size_t>(t)]) {
                best[static_cast<size_t>(t)] = l;
                sel.k_star[static_cast<size_t>(t)] = ki;
            }
        }
        sel.best_loss[static_cast<size_t>(t)] = best[static_cast<size_t>(t)];
    }
    return sel;
}

// supervised pass over one query row set per target step; query_source picks
// learned-query (trainable) or explicit rows
double supervised_pass(const ParamSet<float>& params, const PredictorConfig& cfg,
                       const PreparedSeq& s, const Tensor<float>* query_rows_per_step,
                       std::vector<Tensor<float>>& grads) {
    int t_len = s.steps();
    int rpt = (cfg.variant == PredictorVariant::spatial) ? s.gh * s.gw : 1;

    Graph<float> g;
    ParamBinder<float> bind(g, params);

    Graph<float>::Var qrows;
    if (query_rows_per_step) {
        Tensor<float> qr({static_cast<int64_t>(t_len) * rpt, cfg.block.dim});
        for (int t = 0; t < t_len; ++t)
            for (int p = 0; p < rpt; ++p)
                std::copy(query_rows_per_step->row_ptr(t), query_rows_per_step->row_ptr(t) + cfg.block.dim,
                          qr.row_ptr(static_cast<int64_t>(t) * rpt + p));
        qrows = g.constant(std::move(qr));
    } else {
        qrows = g.broadcast_row(bind("pred.query"), static_cast<int64_t>(t_len) * rpt);
    }

    std::vector<double> qtaus(static_cast<size_t>(t_len));
    std::vector<int> qctx(static_cast<size_t>(t_len));
    for (int t = 0; t < t_len; ++t) {
        qtaus[static_cast<size_t>(t)] = s.taus[static_cast<size_t>(t)];
        qctx[static_cast<size_t>(t)] = t;
    }
    auto preds = sequence_predictions(g, bind, cfg, s, qrows, qtaus, qctx);

    std::vector<Graph<float>::Var> step_losses;
    for (int t = 0; t < t_len; ++t) {
        auto rows = g.slice_rows(preds, static_cast<int64_t>(t) * rpt, static_cast<int64_t>(t + 1) * rpt);
        step_losses.push_back(
            g.smooth_l1(rows, target_of(s, cfg, t), static_cast<float>(cfg.smooth_l1_beta)));
    }
    auto loss = g.scale(g.add_n(step_losses), 1.0f / static_cast<float>(t_len));
    double lv = g.val(loss).v[0];
    if (!std::isfinite(lv)) throw TrainError("non-finite training loss");
    g.backward(loss);
    bind.collect(grads);
    return lv;
}

}  // namespace

StepOutcome bom_training_step(const ParamSet<float>& params, const PredictorConfig& cfg,
                              const std::vector<PreparedSeq>& batch, const QueryBank& bank,
                              std::vector<Tensor<float>>& grads) {
    StepOutcome out;
    out.hist.assign(static_cast<size_t>(bank.k()), 0);
    double bom_sum = 0.0, cand_sum = 0.0;
    int cand_count = 0, steps = 0;
    for (const auto& s : batch) {
        SelectionResult sel = selection_pass(params, cfg, s, bank);
        cand_sum += sel.sum_all;
        cand_count += sel.count_all;
        for (int t = 0; t < s.steps(); ++t) {
            ++out.hist[static_cast<size_t>(sel.k_star[static_cast<size_t>(t)])];
            bom_sum += sel.best_loss[static_cast<size_t>(t)];
            ++steps;
        }
        Tensor<float> chosen({s.steps(), cfg.block.dim});
        for (int t = 0; t < s.steps(); ++t)
            std::copy(bank.queries.row_ptr(sel.k_star[static_cast<size_t>(t)]),
                      bank.queries.row_ptr(sel.k_star[static_cast<size_t>(t)]) + cfg.block.dim,
                      chosen.row_ptr(t));
        supervised_pass(params, cfg, s, &chosen, grads);
    }
    for (auto& t : grads)
        for (auto& x : t.v) x /= static_cast<float>(batch.size());
    // metrics from the selection pass in double, so min <= mean holds exactly
    out.loss_bom = bom_sum / static_cast<double>(steps);
    out.loss_mean_cand = cand_sum / static_cast<double>(cand_count);
    return out;
}

StepOutcome disc_training_step(const ParamSet<float>& params, const PredictorConfig& cfg,
                               const std::vector<PreparedSeq>& batch,
                               std::vector<Tensor<float>>& grads) {
    StepOutcome out;
    double sum = 0.0;
    for (const auto& s : batch) sum += supervised_pass(params, cfg, s, nullptr, grads);
    for (auto& t : grads)
        for (auto& x : t.v) x /= static_cast<float>(batch.size());
    out.loss_bom = sum / static_cast<double>(batch.size());
    out.loss_mean_cand = out.loss_bom;
    return out;
}

PredictorTrainResult train_predictor(TrainMode mode, const std::vector<FeatureSequence>& feats,
                                     TokenCache* cache, PredictorConfig model_cfg,
                                     const PredictorTrainConfig& tcfg,
                                     const ParamSet<float>* init_params) {
    if (feats.empty()) throw TrainError("empty training set");
    model_cfg.variant = variant_of(mode);
    bool bom = is_bom_mode(mode);
    if ((model_cfg.variant != PredictorVariant::spatial) && !cache)
        throw ConfigError("token-variant training needs a frozen tokenizer");

    PredictorTrainResult res;
    res.model = model_cfg;
    res.params = init_predictor_params<float>(model_cfg, hash_mix(tcfg.seed, 0x1417ULL));
    if (init_params) {
        for (auto& e : res.params.entries) {
            const Tensor<float>& src = init_params->get(e.name);
            if (!src.same_shape(e.value)) throw ConfigError("resume: shape mismatch for " + e.name);
            e.value = src;
        }
    }
    // the learned query is a parameter only in discriminative modes
    res.params.set_trainable("pred.query", !bom);

    AdamWConfig ocfg;
    ocfg.lr_peak = tcfg.lr_peak;
    ocfg.warmup_steps = static_cast<int64_t>(tcfg.iters * tcfg.warmup_fraction);
    ocfg.weight_decay = tcfg.weight_decay;
    std::optional<AdamW<float>> opt;
    opt.emplace(res.params, ocfg);

    std::ofstream log;
    if (!tcfg.log_csv.empty()) {
        log.open(tcfg.log_csv, std::ios::binary);
        if (!log) throw IoError("cannot write " + tcfg.log_csv);
        if (!tcfg.log_header.empty()) log << "# " << tcfg.log_header << "\n";
        log << "step,loss_bom,mean_candidate_loss,selected_entropy,hist\n";
    }

    Rng rng(hash_mix(tcfg.seed, 0x7EA0ULL));
    int total_iters = tcfg.iters + tcfg.finetune_iters;
    res.log.losses.reserve(static_cast<size_t>(total_iters));
    for (int step = 0; step < total_iters; ++step) {
        if (step == tcfg.iters) {
            // optional fine-tuning stage at a lower constant rate
            AdamWConfig fcfg = ocfg;
            fcfg.lr_peak = tcfg.lr_peak * tcfg.finetune_lr_factor;
            fcfg.warmup_steps = 0;
            opt.emplace(res.params, fcfg);
        }
        std::vector<PreparedSeq> batch;
        batch.reserve(static_cast<size_t>(tcfg.batch));
        for (int b = 0; b < tcfg.batch; ++b) {
            int si = static_cast<int>(rng.below(feats.size()));
            SampledWindow win = sample_training_timestamps(feats[static_cast<size_t>(si)],
                                                           tcfg.seq_len, tcfg.dt_min, tcfg.dt_max, rng);
            batch.push_back(prepare_training_sequence(model_cfg.variant, feats[static_cast<size_t>(si)],
                                                      win, cache, si));
        }
        std::vector<Tensor<float>> grads(res.params.entries.size());
        StepOutcome so;
        if (bom) {
            QueryBank bank = sample_queries(tcfg.k_train, model_cfg.block.dim, tcfg.query_mu,
                                            tcfg.query_sigma, rng.next_u64());
            so = bom_training_step(res.params, model_cfg, batch, bank, grads);
        } else {
            so = disc_training_step(res.params, model_cfg, batch, grads);
        }
        opt->step(grads);
        res.log.losses.push_back(so.loss_bom);
        if (log.is_open()) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,", step, so.loss_bom,
                          so.loss_mean_cand, so.selected_entropy());
            log << buf;
            for (size_t i = 0; i < so.hist.size(); ++i) log << (i ? ";" : "") << so.hist[i];
            log << "\n";
        }
    }
    res.log.initial_loss = res.log.losses.empty() ? 0.0 : res.log.losses.front();
    res.log.final_loss = res.log.losses.empty() ? 0.0 : res.log.losses.back();
    return res;
}

}  // namespace dw
