#include "deltaworld/evalharness.hpp"

#include <algorithm>
#include <cmath>

namespace dw {

std::vector<int> TaskHead::predict(const Tensor<float>& tokens) const {
    Tensor<float> p = probabilities(tokens);
    std::vector<int> out(static_cast<size_t>(tokens.rows()));
    for (int64_t i = 0; i < p.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < num_classes; ++c)
            if (p.at(i, c) > p.at(i, best)) best = c;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

Tensor<float> TaskHead::probabilities(const Tensor<float>& tokens) const {
    int64_t n = tokens.rows(), d = tokens.cols();
    Tensor<float> out({n, num_classes});
    std::vector<double> logits(static_cast<size_t>(num_classes));
    for (int64_t i = 0; i < n; ++i) {
        const float* row = tokens.row_ptr(i);
        for (int c = 0; c < num_classes; ++c) {
            double acc = b.at(c);
            const float* wr = w.row_ptr(c);
            for (int64_t j = 0; j < d; ++j)
                acc += static_cast<double>(wr[j]) * (row[j] - mean.at(j)) * inv_std.at(j);
            logits[static_cast<size_t>(c)] = acc;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0;
        for (int c = 0; c < num_classes; ++c) denom += std::exp(logits[static_cast<size_t>(c)] - mx);
        for (int c = 0; c < num_classes; ++c)
            out.at(i, c) = static_cast<float>(std::exp(logits[static_cast<size_t>(c)] - mx) / denom);
    }
    return out;
}

std::vector<int> patch_labels(const VideoSequence& seq, int t, int patch) {
    int s = seq.side();
    int g = s / patch;
    const uint8_t* lab = seq.label_ptr(t);
    std::vector<int> out(static_cast<size_t>(g) * g);
    std::vector<int> counts;
    for (int py = 0; py < g; ++py)
        for (int px = 0; px < g; ++px) {
            counts.assign(static_cast<size_t>(seq.config.num_objects) + 1, 0);
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    ++counts[lab[(py * patch + y) * s + px * patch + x]];
            int best = 0;
            for (size_t c = 1; c < counts.size(); ++c)
                if (counts[c] > counts[static_cast<size_t>(best)]) best = static_cast<int>(c);
            out[static_cast<size_t>(py * g + px)] = best;
        }
    return out;
}

TaskHead train_task_head(const std::vector<FeatureSequence>& feats,
                         const std::vector<VideoSequence>& seqs, int num_classes,
                         const TaskHeadTrainConfig& cfg) {
    if (feats.size() != seqs.size() || feats.empty()) throw ConfigError("task head: bad dataset");
    int d = feats[0].grids[0].dim;
    int patch = seqs[0].side() / feats[0].grids[0].gh;

    // gather standardization stats and training pairs
    std::vector<const float*> rows;
    std::vector<int> labels;
    for (size_t si = 0; si < seqs.size(); ++si) {
        for (size_t t = 0; t < feats[si].grids.size(); t += static_cast<size_t>(cfg.frame_stride)) {
            const auto& grid = feats[si].grids[t];
            auto pl = patch_labels(seqs[si], static_cast<int>(t), patch);
            for (int64_t p = 0; p < grid.tokens.rows(); ++p) {
                rows.push_back(grid.tokens.row_ptr(p));
                labels.push_back(pl[static_cast<size_t>(p)]);
            }
        }
    }
    int64_t n = static_cast<int64_t>(rows.size());

    TaskHead head;
    head.num_classes = num_classes;
    head.mean = Tensor<float>({d});
    head.inv_std = Tensor<float>({d});
    std::vector<double> sum(static_cast<size_t>(d), 0.0), sum2(static_cast<size_t>(d), 0.0);
    for (const float* r : rows)
        for (int j = 0; j < d; ++j) {
            sum[static_cast<size_t>(j)] += r[j];
            sum2[static_cast<size_t>(j)] += static_cast<double>(r[j]) * r[j];
        }
    for (int j = 0; j < d; ++j) {
        double m = sum[static_cast<size_t>(j)] / static_cast<double>(n);
        double var = sum2[static_cast<size_t>(j)] / static_cast<double>(n) - m * m;
        head.mean.at(j) = static_cast<float>(m);
        head.inv_std.at(j) = static_cast<float>(1.0 / std::sqrt(var + 1e-6));
    }

    // full-batch softmax regression with Adam
    head.w = Tensor<float>({num_classes, d});
    head.b = Tensor<float>({num_classes});
    std::vector<double> mw(static_cast<size_t>(num_classes * d), 0.0), vw(mw.size(), 0.0);
    std::vector<double> mb(static_cast<size_t>(num_classes), 0.0), vb(mb.size(), 0.0);
    std::vector<double> logits(static_cast<size_t>(num_classes));
    std::vector<double> gw(static_cast<size_t>(num_classes * d));
    std::vector<double> gb(static_cast<size_t>(num_classes));
    std::vector<float> xstd(static_cast<size_t>(d));

    for (int it = 1; it <= cfg.iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int64_t i = 0; i < n; ++i) {
            const float* r = rows[static_cast<size_t>(i)];
            for (int j = 0; j < d; ++j)
                xstd[static_cast<size_t>(j)] = (r[j] - head.mean.at(j)) * head.inv_std.at(j);
            for (int c = 0; c < num_classes; ++c) {
                double acc = head.b.at(c);
                const float* wr = head.w.row_ptr(c);
                for (int j = 0; j < d; ++j) acc += static_cast<double>(wr[j]) * xstd[static_cast<size_t>(j)];
                logits[static_cast<size_t>(c)] = acc;
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double denom = 0;
            for (int c = 0; c < num_classes; ++c) {
                logits[static_cast<size_t>(c)] = std::exp(logits[static_cast<size_t>(c)] - mx);
                denom += logits[static_cast<size_t>(c)];
            }
            for (int c = 0; c < num_classes; ++c) {
                double p = logits[static_cast<size_t>(c)] / denom;
                double err = p - (labels[static_cast<size_t>(i)] == c ? 1.0 : 0.0);
                gb[static_cast<size_t>(c)] += err;
                for (int j = 0; j < d; ++j)
                    gw[static_cast<size_t>(c * d + j)] += err * xstd[static_cast<size_t>(j)];
            }
        }
        double bc1 = 1.0 - std::pow(0.9, it), bc2 = 1.0 - std::pow(0.999, it);
        auto adam = [&](double& m, double& v, double g, float& p) {
            g /= static_cast<double>(n);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            p -= static_cast<float>(cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + 1e-8));
        };
        for (int c = 0; c < num_classes; ++c) {
            adam(mb[static_cast<size_t>(c)], vb[static_cast<size_t>(c)], gb[static_cast<size_t>(c)],
                 head.b.at(c));
            for (int j = 0; j < d; ++j)
                adam(mw[static_cast<size_t>(c * d + j)], vw[static_cast<size_t>(c * d + j)],
                     gw[static_cast<size_t>(c * d + j)], head.w.at(c, j));
        }
    }
    return head;
}

double compute_miou(std::span<const int> pred, std::span<const int> truth, int num_classes) {
    if (pred.size() != truth.size()) throw ShapeError("miou: size mismatch");
    std::vector<int64_t> inter(static_cast<size_t>(num_classes), 0);
    std::vector<int64_t> uni(static_cast<size_t>(num_classes), 0);
    std::vector<bool> present(static_cast<size_t>(num_classes), false);
    for (size_t i = 0; i < pred.size(); ++i) {
        int p = pred[i], t = truth[i];
        present[static_cast<size_t>(p)] = true;
        present[static_cast<size_t>(t)] = true;
        if (p == t) {
            ++inter[static_cast<size_t>(p)];
            ++uni[static_cast<size_t>(p)];
        } else {
            ++uni[static_cast<size_t>(p)];
            ++uni[static_cast<size_t>(t)];
        }
    }
    double sum = 0;
    int count = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (!present[static_cast<size_t>(c)]) continue;  // absent from both
        sum += static_cast<double>(inter[static_cast<size_t>(c)]) /
               static_cast<double>(uni[static_cast<size_t>(c)]);
        ++count;
    }
    return count == 0 ? 1.0 : sum / count;
}

// ---- rollout ----

namespace {

int stride_frames(const VideoSequence& seq, double stride_s) {
    int k = static_cast<int>(std::lround(stride_s * seq.config.fps));
    return k < 1 ? 1 : k;
}

Tensor<float> draw_query(const PredictorRuntime& model, const EvalProtocol& proto, int traj,
                         int step) {
    if (proto.use_learned_query) return model.params.get("pred.query");
    Rng rng(hash_mix(proto.seed, static_cast<uint64_t>(traj), static_cast<uint64_t>(step)));
    Tensor<float> q({model.cfg.block.dim});
    for (auto& x : q.v) x = static_cast<float>(rng.normal(proto.query_mu, proto.query_sigma));
    return q;
}

}  // namespace

RolloutSet rollout(const PredictorRuntime& model, const Tokenizer* tok, const ToyVfm& vfm,
                   const VideoSequence& seq, const FeatureSequence& feats, int steps,
                   const EvalProtocol& proto) {
    (void)vfm;
    int sf = stride_frames(seq, proto.stride_s);
    int dim = model.cfg.block.dim;
    PredictorVariant variant = model.cfg.variant;
    if (variant != PredictorVariant::spatial && !tok)
        throw ConfigError("token-variant rollout needs a tokenizer");

    RolloutSet out;
    out.last_context_frame = (proto.context_frames - 1) * sf;
    for (int j = 1; j <= steps; ++j) {
        int f = out.last_context_frame + j * sf;
        if (f >= seq.frame_count()) throw ConfigError("rollout horizon past the end of the sequence");
        out.target_frames.push_back(f);
        out.target_taus.push_back(seq.timestamps[static_cast<size_t>(f)]);
    }

    // shared context
    std::vector<int> ctx_frames;
    for (int j = 0; j < proto.context_frames; ++j) ctx_frames.push_back(j * sf);
    FeatureSequence ctx_fs;
    for (int f : ctx_frames) {
        ctx_fs.grids.push_back(feats.grids[static_cast<size_t>(f)]);
        ctx_fs.timestamps.push_back(feats.timestamps[static_cast<size_t>(f)]);
    }
    const FeatureGrid& last_ctx_grid = ctx_fs.grids.back();
    int gh = last_ctx_grid.gh, gw = last_ctx_grid.gw;
    int64_t hw = static_cast<int64_t>(gh) * gw;

    std::vector<DeltaToken> ctx_tokens;
    if (variant == PredictorVariant::delta)
        ctx_tokens = tok->encode_sequence(ctx_fs, tok->config().mode == TokenizerMode::delta
                                                      ? vfm.black_frame_grid(seq.side())
                                                      : FeatureGrid{});
    else if (variant == PredictorVariant::frame)
        for (const auto& g : ctx_fs.grids) ctx_tokens.push_back(tok->encode_frame(g));

    const Tensor<float>& gt_final = feats.grids[static_cast<size_t>(out.target_frames.back())].tokens;

    out.trajectories.resize(static_cast<size_t>(proto.k_eval));
    for (int k = 0; k < proto.k_eval; ++k) {
        Trajectory& tr = out.trajectories[static_cast<size_t>(k)];
        if (variant == PredictorVariant::spatial) {
            Tensor<float> ctx_grids({static_cast<int64_t>(ctx_fs.grids.size()) * hw, dim});
            for (size_t f = 0; f < ctx_fs.grids.size(); ++f)
                std::copy(ctx_fs.grids[f].tokens.v.begin(), ctx_fs.grids[f].tokens.v.end(),
                          ctx_grids.v.begin() + static_cast<int64_t>(f) * hw * dim);
            std::vector<double> taus = ctx_fs.timestamps;
            for (int s = 0; s < steps; ++s) {
                Tensor<float> q = draw_query(model, proto, k, s);
                Tensor<float> next = predict_spatial_step(model.params, model.cfg, ctx_grids, taus, gh,
                                                          gw, q, out.target_taus[static_cast<size_t>(s)]);
                for (float x : next.v)
                    if (!std::isfinite(x))
                        throw TrainError("non-finite rollout prediction, trajectory " + std::to_string(k));
                FeatureGrid fg;
                fg.gh = gh;
                fg.gw = gw;
                fg.dim = dim;
                fg.tokens = next;
                tr.grids.push_back(fg);
                tr.queries.push_back(std::move(q));
                // append to this trajectory's own context
                Tensor<float> grown({ctx_grids.rows() + hw, dim});
                std::copy(ctx_grids.v.begin(), ctx_grids.v.end(), grown.v.begin());
                std::copy(next.v.begin(), next.v.end(), grown.v.begin() + ctx_grids.numel());
                ctx_grids = std::move(grown);
                taus.push_back(out.target_taus[static_cast<size_t>(s)]);
            }
        } else {
            Tensor<float> toks({static_cast<int64_t>(ctx_tokens.size()), dim});
            for (size_t i = 0; i < ctx_tokens.size(); ++i)
                std::copy(ctx_tokens[i].value.v.begin(), ctx_tokens[i].value.v.end(),
                          toks.row_ptr(static_cast<int64_t>(i)));
            std::vector<double> taus = ctx_fs.timestamps;
            FeatureGrid base = last_ctx_grid;  // decode chain starts at the last ground-truth grid
            for (int s = 0; s < steps; ++s) {
                Tensor<float> q = draw_query(model, proto, k, s);
                Tensor<float> zhat = predict_token_step(model.params, model.cfg, toks, taus, q,
                                                        out.target_taus[static_cast<size_t>(s)]);
                for (float x : zhat.v)
                    if (!std::isfinite(x))
                        throw TrainError("non-finite rollout prediction, trajectory " + std::to_string(k));
                DeltaToken dt;
                dt.kind = (variant == PredictorVariant::frame) ? TokenKind::frame : TokenKind::delta;
                dt.value = zhat;
                FeatureGrid decoded = (variant == PredictorVariant::frame)
                                          ? tok->decode_frame(dt, gh, gw)
                                          : tok->decode_delta(base, dt);
                if (variant == PredictorVariant::delta) base = decoded;
                tr.grids.push_back(std::move(decoded));
                tr.tokens.push_back(zhat);
                tr.queries.push_back(std::move(q));
                Tensor<float> grown({toks.rows() + 1, dim});
                std::copy(toks.v.begin(), toks.v.end(), grown.v.begin());
                std::copy(zhat.v.begin(), zhat.v.end(), grown.v.begin() + toks.numel());
                toks = std::move(grown);
                taus.push_back(out.target_taus[static_cast<size_t>(s)]);
            }
        }
        tr.final_feature_loss =
            smooth_l1_value(tr.grids.back().tokens, gt_final, model.cfg.smooth_l1_beta);
    }
    return out;
}

// ---- scores ----

namespace {

int best_index(const RolloutSet& r) {
    int best = 0;
    for (size_t k = 1; k < r.trajectories.size(); ++k)
        if (r.trajectories[k].final_feature_loss < r.trajectories[static_cast<size_t>(best)].final_feature_loss)
            best = static_cast<int>(k);
    return best;
}

Tensor<float> mean_final_tokens(const RolloutSet& r) {
    Tensor<float> acc = r.trajectories[0].grids.back().tokens;
    for (size_t k = 1; k < r.trajectories.size(); ++k) {
        const auto& t = r.trajectories[k].grids.back().tokens;
        for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
    }
    for (auto& x : acc.v) x /= static_cast<float>(r.trajectories.size());
    return acc;
}

}  // namespace

double score_best(const RolloutSet& rollouts, const Tensor<float>& gt_final_tokens,
                  std::span<const int> true_labels, const TaskHead& head) {
    (void)gt_final_tokens;  // selection already uses the stored final feature loss
    const Trajectory& tr = rollouts.trajectories[static_cast<size_t>(best_index(rollouts))];
    auto pred = head.predict(tr.grids.back().tokens);
    return compute_miou(pred, true_labels, head.num_classes);
}

double score_mean(const RolloutSet& rollouts, std::span<const int> true_labels, const TaskHead& head) {
    auto pred = head.predict(mean_final_tokens(rollouts));
    return compute_miou(pred, true_labels, head.num_classes);
}

double copy_last_score(const FeatureGrid& last_context, std::span<const int> future_labels,
                       const TaskHead& head) {
    auto pred = head.predict(last_context.tokens);
    return compute_miou(pred, future_labels, head.num_classes);
}

double present_score(const FeatureGrid& future, std::span<const int> future_labels,
                     const TaskHead& head) {
    auto pred = head.predict(future.tokens);
    return compute_miou(pred, future_labels, head.num_classes);
}

double mode_coverage(const RolloutSet& rollouts, const std::vector<Tensor<float>>& branch_tokens) {
    if (branch_tokens.empty()) throw ConfigError("mode_coverage: no branches");
    size_t nb = branch_tokens.size();
    double threshold = std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < nb; ++a)
        for (size_t b = a + 1; b < nb; ++b)
            threshold = std::min(threshold,
                                 0.5 * smooth_l1_value(branch_tokens[a], branch_tokens[b], 0.1));

    std::vector<bool> hit(nb, false);
    for (const auto& tr : rollouts.trajectories) {
        const auto& tokens = tr.grids.back().tokens;
        size_t nearest = 0;
        double best = smooth_l1_value(tokens, branch_tokens[0], 0.1);
        for (size_t b = 1; b < nb; ++b) {
            double d = smooth_l1_value(tokens, branch_tokens[b], 0.1);
            if (d < best) {
                best = d;
                nearest = b;
            }
        }
        if (best <= threshold) hit[nearest] = true;
    }
    int covered = 0;
    for (bool h : hit) covered += h ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(nb);
}

std::array<double, 2> soft_centroid(const Tensor<float>& tokens, int gh, int gw, int patch,
                                    const TaskHead& head) {
    Tensor<float> p = head.probabilities(tokens);
    double sx = 0, sy = 0, sw = 0;
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            double pobj = 1.0 - p.at(static_cast<int64_t>(y) * gw + x, 0);
            sx += pobj * ((x + 0.5) * patch);
            sy += pobj * ((y + 0.5) * patch);
            sw += pobj;
        }
    if (sw <= 0) return {gw * patch / 2.0, gh * patch / 2.0};
    return {sx / sw, sy / sw};
}

EvalSummary evaluate(const PredictorRuntime& model, const Tokenizer* tok, const ToyVfm& vfm,
                     const std::vector<VideoSequence>& seqs,
                     const std::vector<FeatureSequence>& feats, const TaskHead& head,
                     const EvalProtocol& proto) {
    if (seqs.size() != feats.size() || seqs.empty()) throw ConfigError("evaluate: bad dataset");
    EvalSummary sum;
    int patch = seqs[0].side() / feats[0].grids[0].gh;

    struct Acc {
        double best = 0, mean = 0, cl = 0, pr = 0, bfl = 0, mfl = 0;
    } acc_short, acc_mid;

    for (size_t si = 0; si < seqs.size(); ++si) {
        for (int steps : {1, 3}) {
            RolloutSet rs = rollout(model, tok, vfm, seqs[si], feats[si], steps, proto);
            int target = rs.target_frames.back();
            auto labels = patch_labels(seqs[si], target, patch);
            const FeatureGrid& gt_grid = feats[si].grids[static_cast<size_t>(target)];
            const FeatureGrid& last_ctx =
                feats[si].grids[static_cast<size_t>(rs.last_context_frame)];

            EvalRow row;
            row.seq_id = seqs[si].id;
            row.horizon = (steps == 1) ? "short" : "mid";
            row.k = proto.k_eval;
            row.best = score_best(rs, gt_grid.tokens, labels, head);
            row.mean = score_mean(rs, labels, head);
            row.copy_last = copy_last_score(last_ctx, labels, head);
            row.present = present_score(gt_grid, labels, head);
            row.best_feature_loss =
                rs.trajectories[static_cast<size_t>(best_index(rs))].final_feature_loss;
            row.mean_feature_loss =
                smooth_l1_value(mean_final_tokens(rs), gt_grid.tokens, model.cfg.smooth_l1_beta);
            sum.rows.push_back(row);

            Acc& a = (steps == 1) ? acc_short : acc_mid;
            a.best += row.best;
            a.mean += row.mean;
            a.cl += row.copy_last;
            a.pr += row.present;
            a.bfl += row.best_feature_loss;
            a.mfl += row.mean_feature_loss;
        }
    }
    double n = static_cast<double>(seqs.size());
    sum.best_miou = acc_mid.best / n;
    sum.mean_miou = acc_mid.mean / n;
    sum.copy_last_miou = acc_mid.cl / n;
    sum.present_miou = acc_mid.pr / n;
    sum.best_feature_loss = acc_mid.bfl / n;
    sum.mean_feature_loss = acc_mid.mfl / n;
    sum.short_best_miou = acc_short.best / n;
    sum.short_mean_miou = acc_short.mean / n;
    return sum;
}

SweepResult sweep_k(const std::vector<int>& train_ks, const std::vector<int>& eval_ks,
                    const std::vector<FeatureSequence>& train_feats, TokenCache* cache,
                    const PredictorConfig& model_cfg, const PredictorTrainConfig& base_train,
                    const Tokenizer& tok, const ToyVfm& vfm,
                    const std::vector<VideoSequence>& eval_seqs,
                    const std::vector<FeatureSequence>& eval_feats, const TaskHead& head,
                    const EvalProtocol& proto) {
    SweepResult res;
    res.train_ks = train_ks;
    res.eval_ks = eval_ks;
    for (int tk : train_ks) {
        PredictorTrainConfig tcfg = base_train;
        tcfg.k_train = tk;
        auto trained = train_predictor(TrainMode::bom_delta, train_feats, cache, model_cfg, tcfg);
        PredictorRuntime rt{trained.model, std::move(trained.params)};
        for (int ek : eval_ks) {
            EvalProtocol p = proto;  // shared seed: trajectory sets are nested across eval-K
            p.k_eval = ek;
            EvalSummary s = evaluate(rt, &tok, vfm, eval_seqs, eval_feats, head, p);
            SweepCell cell;
            cell.train_k = tk;
            cell.eval_k = ek;
            cell.best_miou = s.best_miou;
            cell.mean_miou = s.mean_miou;
            cell.best_feature_loss = s.best_feature_loss;
            res.cells.push_back(cell);
        }
    }
    return res;
}

}  // namespace dw
