#include "nitp/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "nitp/checkpoint.hpp"
#include "nitp/data.hpp"
#include "nitp/graph.hpp"
#include "nitp/rng.hpp"

namespace nitp {

namespace {

using json = nlohmann::ordered_json;

constexpr int64_t kRegNumPairs = 1024;  // pair budget of the generic cosine regularizer

json record_to_json(const MetricsRecord& r) {
    json j;
    j["step"] = r.step;
    j["lr"] = r.lr;
    j["ntp_loss"] = r.ntp_loss;
    j["nitp_loss"] = r.nitp_loss;
    j["total_loss"] = r.total_loss;
    j["grad_norm"] = r.grad_norm;
    if (r.s) j["s"] = *r.s;
    if (r.router_entropy) j["router_entropy"] = *r.router_entropy;
    if (r.snapshot) {
        j["effective_rank"] = r.snapshot->effective_rank;
        j["avg_cosine"] = r.snapshot->avg_cosine;
        j["num_tokens"] = r.snapshot->num_tokens;
        j["num_pairs"] = r.snapshot->num_pairs;
    }
    return j;
}

std::string ckpt_stem_name(int64_t step, bool diagnostic = false) {
    std::ostringstream os;
    os << (diagnostic ? "ckpt_diag_" : "ckpt_") << std::setfill('0') << std::setw(6) << step;
    return os.str();
}

}  // namespace

MetricsRecord train(const RunConfig& run, const std::optional<std::filesystem::path>& resume_ckpt) {
    run.validate();
    const ObjectiveConfig& obj = run.objective;
    const TrainConfig& tc = run.train;
    bool nitp_enabled = obj.lambda > 0.0;
    bool is_reg_family = obj.loss_family == LossFamily::generic_cosine_reg;
    bool use_projector = nitp_enabled && !is_reg_family && obj.use_projector;

    std::filesystem::create_directories(run.out_dir);
    std::filesystem::path out_dir(run.out_dir);

    CorpusBatcher batcher(read_file_bytes(run.corpus_path), tc.seq_len, tc.batch_size, tc.seed);

    Model model(run.model);
    std::optional<Projector> projector;
    if (use_projector) {
        projector.emplace(run.model.hidden_dim, obj.projector_hidden_mult, run.model.seed);
    }

    std::vector<NamedParam> params = model.parameters();
    if (projector) {
        for (NamedParam p : projector->parameters()) params.push_back(p);
    }
    AdamW opt(tc);

    int64_t start_step = 0;
    if (resume_ckpt) {
        LoadedCheckpoint ckpt = load_checkpoint(*resume_ckpt);
        ModelConfig expect = run.model;
        if (ckpt.config.vocab_size != expect.vocab_size || ckpt.config.hidden_dim != expect.hidden_dim ||
            ckpt.config.num_layers != expect.num_layers || ckpt.config.ffn_kind != expect.ffn_kind) {
            throw std::runtime_error("resume: checkpoint model config does not match run config");
        }
        restore_model(model, ckpt);
        if (projector) {
            if (!ckpt.has_projector) throw std::runtime_error("resume: checkpoint has no projector state");
            restore_projector(*projector, ckpt);
        }
        restore_optimizer(opt, params, ckpt);
        start_step = ckpt.step;
        if (start_step >= tc.total_steps) throw std::runtime_error("resume: checkpoint is already at total_steps");
    }

    std::filesystem::path metrics_path = out_dir / "metrics.jsonl";
    std::ofstream log(metrics_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open metrics log: " + metrics_path.string());
    log << json{{"schema", "nitp-metrics-v1"}}.dump() << "\n";

    int64_t last_ckpt_step = -1;
    auto write_checkpoint = [&](int64_t step, bool diagnostic) {
        save_checkpoint(out_dir / ckpt_stem_name(step, diagnostic), model, projector ? &*projector : nullptr, &opt,
                        step);
        if (!diagnostic) {
            // continue from the stored f32 values so resuming reproduces this
            // run exactly
            round_through_f32(params, &opt);
            last_ckpt_step = step;
        }
    };

    MetricsRecord last;
    for (int64_t step = start_step + 1; step <= tc.total_steps; ++step) {
        double lr = wsd_lr(step, tc);
        std::vector<std::vector<int32_t>> batch = batcher.batch(step);
        int64_t T = tc.seq_len;
        bool want_snapshot = step % tc.snapshot_every == 0;

        MetricsRecord rec;
        rec.step = step;
        rec.lr = lr;
        try {
            Graph g;
            BoundModel bm(g, model);
            std::optional<BoundProjector> bp;
            if (projector) bp.emplace(g, *projector);

            Value batch_total;
            double ntp_sum = 0.0, nitp_sum = 0.0, align_sum = 0.0, entropy_sum = 0.0;
            bool have_align = false;
            std::vector<Value> h_finals;
            h_finals.reserve(batch.size());
            std::mt19937_64 reg_rng(derive_seed(tc.seed, "cosreg", static_cast<uint64_t>(step)));

            for (const std::vector<int32_t>& seq : batch) {
                ForwardOut fo = bm.forward(seq);
                Value ntp = ntp_loss(g, fo.logits, seq);
                ntp_sum += ntp.scalar();
                entropy_sum += fo.router_entropy;

                Value nitp;
                if (nitp_enabled) {
                    if (is_reg_family) {
                        Value valid = g.slice_rows(fo.trace.h_final, 0, T - 1);
                        nitp = generic_cosine_regularizer(g, valid, kRegNumPairs, reg_rng);
                    } else {
                        Value targets = extract_implicit_tokens(g, fo.trace, obj, run.model.num_layers);
                        Value pred_rows = obj.temporal_shift == TemporalShift::next_token
                                              ? g.slice_rows(fo.trace.h_final, 0, T - 1)
                                              : fo.trace.h_final;
                        Value pred = bp ? bp->apply(pred_rows) : pred_rows;
                        NitpLoss nl = nitp_loss(g, pred, targets, obj);
                        nitp = nl.loss;
                        align_sum += nl.alignment.scalar();
                        have_align = true;
                    }
                    nitp_sum += nitp.scalar();
                }
                Value total = total_loss(g, ntp, nitp, obj.lambda, step, obj.nitp_start_step);
                batch_total = batch_total ? g.add(batch_total, total) : total;
                h_finals.push_back(fo.trace.h_final);
            }
            double inv_b = 1.0 / static_cast<double>(batch.size());
            batch_total = g.scale(batch_total, inv_b);

            rec.ntp_loss = ntp_sum * inv_b;
            rec.nitp_loss = nitp_enabled ? nitp_sum * inv_b : 0.0;
            rec.total_loss = batch_total.scalar();
            if (have_align) rec.s = align_sum * inv_b;
            if (run.model.ffn_kind == FfnKind::moe) rec.router_entropy = entropy_sum * inv_b;

            if (!std::isfinite(rec.total_loss)) {
                throw std::runtime_error("non-finite loss");
            }
            if (rec.s && obj.loss_family == LossFamily::cosine && obj.lambda > 0.0) {
                if (std::abs((1.0 - rec.nitp_loss) - *rec.s) > 1e-12) {
                    throw std::logic_error("alignment/loss identity violated");
                }
            }

            zero_grads(params);
            g.backward(batch_total);
            rec.grad_norm = clip_grad_norm(params, tc.grad_clip);
            opt.step(params, lr);

            if (want_snapshot) {
                int64_t valid = T - 1;
                Tensor states = Tensor::zeros({static_cast<int64_t>(batch.size()) * valid, run.model.hidden_dim});
                int64_t row = 0;
                for (const Value& hf : h_finals) {
                    const Tensor& t = hf.tensor();
                    std::copy(t.values.begin(), t.values.begin() + valid * run.model.hidden_dim,
                              states.values.begin() + row * run.model.hidden_dim);
                    row += valid;
                }
                ProbeConfig pc;
                rec.snapshot =
                    snapshot_states(states, step, pc, derive_seed(tc.seed, "probe", static_cast<uint64_t>(step)));
            }
        } catch (const std::exception& e) {
            write_checkpoint(step, true);
            throw std::runtime_error("train: step " + std::to_string(step) + " aborted (" + e.what() +
                                     "); diagnostic checkpoint written");
        }

        if (step % tc.log_every == 0 || want_snapshot || step == tc.total_steps) {
            log << record_to_json(rec).dump() << "\n";
        }
        if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0) write_checkpoint(step, false);
        last = rec;
    }
    if (last_ckpt_step != tc.total_steps) write_checkpoint(tc.total_steps, false);
    log.close();
    if (!log) throw std::runtime_error("metrics log write failed: " + metrics_path.string());
    return last;
}

std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open metrics log: " + path.string());
    std::vector<MetricsRecord> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first) {
            first = false;
            if (j.contains("schema")) {
                if (j["schema"] != "nitp-metrics-v1") {
                    throw std::runtime_error("metrics log: unknown schema in " + path.string());
                }
                continue;
            }
        }
        MetricsRecord r;
        r.step = j.at("step").get<int64_t>();
        r.lr = j.at("lr").get<double>();
        r.ntp_loss = j.at("ntp_loss").get<double>();
        r.nitp_loss = j.at("nitp_loss").get<double>();
        r.total_loss = j.at("total_loss").get<double>();
        r.grad_norm = j.at("grad_norm").get<double>();
        if (j.contains("s")) r.s = j["s"].get<double>();
        if (j.contains("router_entropy")) r.router_entropy = j["router_entropy"].get<double>();
        if (j.contains("effective_rank")) {
            GeometrySnapshot snap;
            snap.step = r.step;
            snap.effective_rank = j["effective_rank"].get<double>();
            snap.avg_cosine = j["avg_cosine"].get<double>();
            snap.num_tokens = j.value("num_tokens", int64_t{0});
            snap.num_pairs = j.value("num_pairs", int64_t{0});
            r.snapshot = snap;
        }
        out.push_back(std::move(r));
    }
    return out;
}

CompareReport compare_runs(const std::filesystem::path& log_a, const std::filesystem::path& log_b) {
    std::vector<MetricsRecord> a = read_metrics_log(log_a);
    std::vector<MetricsRecord> b = read_metrics_log(log_b);
    std::map<int64_t, const MetricsRecord*> bmap;
    for (const auto& r : b) bmap[r.step] = &r;

    CompareReport rep;
    for (const auto& ra : a) {
        auto it = bmap.find(ra.step);
        if (it == bmap.end()) continue;
        const MetricsRecord& rb = *it->second;
        CompareRow row;
        row.step = ra.step;
        row.d_ntp_loss = rb.ntp_loss - ra.ntp_loss;
        if (ra.snapshot && rb.snapshot) {
            row.d_effective_rank = rb.snapshot->effective_rank - ra.snapshot->effective_rank;
            row.d_avg_cosine = rb.snapshot->avg_cosine - ra.snapshot->avg_cosine;
        } else if (ra.snapshot.has_value() != rb.snapshot.has_value()) {
            ++rep.skipped_snapshot_rows;
        }
        rep.rows.push_back(row);
    }
    if (rep.rows.empty()) {
        throw std::runtime_error("compare_runs: the two logs share no steps");
    }
    const CompareRow& fin = rep.rows.back();
    rep.final_step = fin.step;
    rep.final_d_ntp_loss = fin.d_ntp_loss;
    for (auto it = rep.rows.rbegin(); it != rep.rows.rend(); ++it) {
        if (it->d_effective_rank) {
            rep.final_d_effective_rank = it->d_effective_rank;
            rep.final_d_avg_cosine = it->d_avg_cosine;
            break;
        }
    }
    return rep;
}

std::string CompareReport::to_text() const {
    std::ostringstream os;
    os << std::setw(8) << "step" << std::setw(16) << "d_ntp_loss" << std::setw(16) << "d_eff_rank" << std::setw(16)
       << "d_avg_cosine" << "\n";
    for (const CompareRow& r : rows) {
        os << std::setw(8) << r.step << std::setw(16) << std::setprecision(6) << r.d_ntp_loss;
        if (r.d_effective_rank)
            os << std::setw(16) << *r.d_effective_rank << std::setw(16) << *r.d_avg_cosine;
        else
            os << std::setw(16) << "-" << std::setw(16) << "-";
        os << "\n";
    }
    os << "skipped snapshot rows: " << skipped_snapshot_rows << "\n";
    os << "final step " << final_step << ": d_ntp_loss=" << final_d_ntp_loss;
    if (final_d_effective_rank) {
        os << " d_eff_rank=" << *final_d_effective_rank << " d_avg_cosine=" << *final_d_avg_cosine;
    }
    os << "\n";
    return os.str();
}

}  // namespace nitp
