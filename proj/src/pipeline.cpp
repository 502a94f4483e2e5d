#include <algorithm>
#include <cmath>
#include <fstream>

#include "btdvar/io.hpp"

namespace btdvar {

std::string version_string() { return "btdvar 0.1.0"; }

namespace {

std::string tag(std::size_t i) {
    std::string n = std::to_string(i + 1);
    return n.size() < 2 ? "0" + n : n;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "NC"; }

std::vector<std::string> coefficient_names(Index k, Index lags) {
    std::vector<std::string> out;
    for (Index l = 0; l < lags; ++l) {
        for (Index s = 0; s < k; ++s) {
            out.push_back("lag" + std::to_string(l + 1) + "_" + std::to_string(s + 1));
        }
    }
    return out;
}

std::vector<std::string> labels(const std::vector<std::string>& names, Index k) {
    if (static_cast<Index>(names.size()) == k) {
        return names;
    }
    std::vector<std::string> out;
    for (Index c = 0; c < k; ++c) {
        out.push_back("y" + std::to_string(c + 1));
    }
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << text;
}

void write_truth_network(const fs::path& path, const EdgeSet& e) {
    InclusionTensor v(e.lags(), e.k());
    for (std::size_t i = 0; i < e.cell_count(); ++i) {
        v.flat()[i] = e.flat(i) ? 1.0 : 0.0;
    }
    write_network_csv(path, v, e);
}

double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

PanelData load_data(const RunConfig& cfg) { return read_panel(list_csv(cfg.data_dir), cfg.holdout); }

std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
    if (v.empty()) {
        return std::nullopt;
    }
    double s = 0.0;
    for (const auto& x : v) {
        if (!x) {
            return std::nullopt;
        }
        s += *x;
    }
    return s / static_cast<double>(v.size());
}

}  // namespace

void write_manifest(const fs::path& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
    std::string text = "version = " + version_string() + "\nmode = " + cfg.mode + "\n";
    for (const auto& [k, v] : cfg.resolved()) {
        text += k + " = " + v + "\n";
    }
    for (const auto& [k, v] : extra) {
        text += "result." + k + " = " + v + "\n";
    }
    write_text(path, text);
}

FitQuality posterior_fit_quality(const PosteriorDraws& draws, const PanelData& data) {
    if (draws.k != data.k() || (draws.random_effects && draws.subjects != data.subjects())) {
        throw DimensionError("draws and data do not match");
    }
    const Index lags = draws.lags;
    const Vector nu = draws.mean_nu();
    std::vector<std::optional<double>> in, out;
    for (std::size_t i = 0; i < data.subjects(); ++i) {
        const std::size_t si = draws.random_effects ? i : 0;
        const Matrix b = draws.random_effects ? draws.mean_b_subject(si) : draws.mean_b_fixed();
        const Vector alpha = draws.mean_alpha(si);
        const Matrix& y = data.y[i];
        const Index train = data.train_t();
        in.push_back(r_squared(predict_one_step(y, b, nu, alpha, lags, train), y.middleRows(lags, train - lags)));
        if (data.holdout > 0) {
            out.push_back(r_squared(predict_one_step(y, b, nu, alpha, train, y.rows()), y.bottomRows(data.holdout)));
        }
    }
    return {mean_of(in), mean_of(out)};
}

FitQuality ols_fit_quality(const PanelData& data, Index lags) {
    std::vector<std::optional<double>> in, out;
    for (const auto& y : data.y) {
        const Index train = data.train_t();
        const auto res = fit_ols(y.topRows(train), lags);
        const auto* p = std::get_if<VarParams>(&res);
        if (!p) {
            return {};
        }
        const Vector zero = Vector::Zero(y.cols());
        in.push_back(r_squared(predict_one_step(y, p->b, p->nu, zero, lags, train), y.middleRows(lags, train - lags)));
        if (data.holdout > 0) {
            out.push_back(r_squared(predict_one_step(y, p->b, p->nu, zero, train, y.rows()), y.bottomRows(data.holdout)));
        }
    }
    return {mean_of(in), mean_of(out)};
}

void run_simulate(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    Rng master(cfg.seed);
    const std::uint64_t truth_seed = master.next_u64();
    const std::uint64_t data_seed = master.next_u64();
    const TruthScenario truth = cfg.scenario == "block" ? make_block_diagonal_truth(cfg.k, cfg.lags_true, truth_seed)
                                                        : make_community_truth(cfg.k, cfg.lags_true, truth_seed);
    PanelSimOptions opts;
    opts.subjects = cfg.subjects;
    opts.t = cfg.t;
    opts.holdout = cfg.holdout;
    opts.burn_in = cfg.sim_burn_in;
    opts.random_scale = cfg.subjects > 1 ? cfg.random_scale : 0.0;
    opts.alpha_scale = cfg.subjects > 1 ? cfg.alpha_scale : 0.0;
    const PanelSimulation sim = simulate_panel(truth.params, opts, data_seed);

    write_panel(out / "data", sim.data);
    const auto names = coefficient_names(cfg.k, cfg.lags_true);
    write_matrix_csv(out / "truth_b_fixed.csv", truth.params.b, names);
    write_matrix_csv(out / "truth_nu.csv", truth.params.nu.transpose(), labels(sim.data.names, cfg.k));
    write_truth_network(out / "truth_fixed.csv", sim.truth.fixed);
    if (cfg.subjects > 1) {
        Matrix alpha(static_cast<Index>(cfg.subjects), cfg.k);
        for (std::size_t i = 0; i < cfg.subjects; ++i) {
            write_matrix_csv(out / ("truth_b_subject_" + tag(i) + ".csv"), sim.params.subject_b(i), names);
            write_truth_network(out / ("truth_subject_" + tag(i) + ".csv"), sim.truth.subjects[i]);
            alpha.row(static_cast<Index>(i)) = sim.params.alpha[i].transpose();
        }
        write_matrix_csv(out / "truth_alpha.csv", alpha, labels(sim.data.names, cfg.k));
    }
    write_manifest(out / "manifest.txt", cfg,
                   {{"spectral_radius", format_double(is_stable(truth.params).spectral_radius)},
                    {"rows_per_subject", std::to_string(sim.data.t())}});
}

namespace {

void write_fit_outputs(const fs::path& out, const RunConfig& cfg, const FitRunner& runner, const PanelData& data) {
    const auto& draws = runner.draws();
    save_draws(out / "draws.bin", draws);

    // Posterior summary of B_fixed.
    const auto samples = draws.b_fixed_samples();
    Table summary;
    summary.header = {"lag", "target", "source", "mean", "sd", "q025", "q50", "q975"};
    const Index k = draws.k;
    std::vector<double> vals(samples.size());
    for (Index l = 0; l < draws.lags; ++l) {
        for (Index s = 0; s < k; ++s) {
            for (Index g = 0; g < k; ++g) {
                double mean = 0.0;
                for (std::size_t d = 0; d < samples.size(); ++d) {
                    vals[d] = samples[d](g, l * k + s);
                    mean += vals[d];
                }
                mean /= static_cast<double>(vals.size());
                double var = 0.0;
                for (double v : vals) {
                    var += (v - mean) * (v - mean);
                }
                var /= static_cast<double>(std::max<std::size_t>(vals.size() - 1, 1));
                summary.rows.push_back({std::to_string(l + 1), std::to_string(g + 1), std::to_string(s + 1),
                                        format_double(mean), format_double(std::sqrt(var)),
                                        format_double(quantile(vals, 0.025)), format_double(quantile(vals, 0.5)),
                                        format_double(quantile(vals, 0.975))});
            }
        }
    }
    write_table(out / "posterior_summary.csv", summary);
    write_matrix_csv(out / "posterior_mean_b_fixed.csv", draws.mean_b_fixed(), coefficient_names(k, draws.lags));
    write_matrix_csv(out / "posterior_mean_nu.csv", draws.mean_nu().transpose(), labels(data.names, k));

    Table ranks;
    ranks.header = {"iteration", "r1", "r2", "r3"};
    for (std::size_t i = 0; i < draws.rank_trace.size(); ++i) {
        const auto& r = draws.rank_trace[i];
        ranks.rows.push_back({std::to_string(i + 1), std::to_string(r[0]), std::to_string(r[1]), std::to_string(r[2])});
    }
    write_table(out / "ranks.csv", ranks);

    Table lags;
    lags.header = {"lag", "active", "edges", "mean_row_norm", "median_row_norm"};
    const auto ls = select_lags(draws, cfg.decision);
    for (std::size_t l = 0; l < ls.active.size(); ++l) {
        lags.rows.push_back({std::to_string(l + 1), ls.active[l] ? "1" : "0", std::to_string(ls.edges[l]),
                             format_double(ls.mean_row_norm[l]), format_double(ls.median_row_norm[l])});
    }
    write_table(out / "lags.csv", lags);

    std::size_t unstable = 0;
    for (const auto& d : draws.draws) {
        unstable += !(d.spectral_radius < 1.0) ? 1 : 0;
    }
    const auto q = posterior_fit_quality(draws, data);
    const auto final_ranks = runner.state().ranks();
    write_manifest(out / "manifest.txt", cfg,
                   {{"subjects_read", std::to_string(data.subjects())},
                    {"draws_stored", std::to_string(draws.size())},
                    {"unstable_draws", std::to_string(unstable)},
                    {"final_ranks", std::to_string(final_ranks[0]) + "," + std::to_string(final_ranks[1]) + "," +
                                        std::to_string(final_ranks[2])},
                    {"rank_events", std::to_string(runner.rank_events().size())},
                    {"r2_in", opt_text(q.r2_in)},
                    {"r2_out", opt_text(q.r2_out)}});
}

}  // namespace

void run_fit(const RunConfig& cfg, const fs::path& out, const std::optional<fs::path>& resume) {
    cfg.validate();
    const PanelData data = load_data(cfg);
    try {
        cfg.sampler.validate(data.k());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    data.validate_for_lags(cfg.sampler.lags);

    std::optional<FitRunner> runner;
    if (resume) {
        runner.emplace(data, cfg.sampler, load_chain(*resume));
    } else {
        runner.emplace(data, cfg.sampler);
    }
    const fs::path checkpoint = out / "checkpoint.bin";
    fs::create_directories(out);
    while (!runner->done()) {
        const int next = (runner->iteration() / cfg.checkpoint_every + 1) * cfg.checkpoint_every;
        runner->run_until(next);
        save_chain(checkpoint, runner->chain());
    }
    write_fit_outputs(out, cfg, *runner, data);
}

void run_gc(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const PosteriorDraws draws = load_draws(cfg.draws);
    if (draws.size() == 0) {
        throw IoError(cfg.draws + ": no posterior draws stored");
    }
    const auto names = labels(draws.names, draws.k);

    auto emit = [&](const std::vector<Matrix>& samples, const std::string& stem, const std::string& title) {
        const auto v = inclusion_probabilities(samples, draws.lags, cfg.decision.delta);
        const auto net = decide_network(v, cfg.decision);
        write_network_csv(out / ("network_" + stem + ".csv"), v, net.edges);
        write_composite_csv(out / ("composite_" + stem + ".csv"), net.edges, names);
        write_text(out / (stem + ".dot"), to_dot(net.edges, names, title));
        return net.edges.edge_count();
    };
    std::vector<std::pair<std::string, std::string>> extra{{"t_star", format_double(cfg.decision.t_star())}};
    extra.emplace_back("edges_fixed", std::to_string(emit(draws.b_fixed_samples(), "fixed", "fixed effects")));
    if (draws.random_effects) {
        for (std::size_t i = 0; i < draws.subjects; ++i) {
            const auto n = emit(draws.b_subject_samples(i), "subject_" + tag(i), "subject " + tag(i));
            extra.emplace_back("edges_subject_" + tag(i), std::to_string(n));
        }
    }
    write_manifest(out / "manifest.txt", cfg, extra);
}

void run_metrics(const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const NetworkFile est = read_network_csv(cfg.network);
    const NetworkFile truth_file = read_network_csv(cfg.truth);
    if (truth_file.edges.k() != est.edges.k()) {
        throw DimensionError("estimated and true networks have different K");
    }
    EdgeSet truth = truth_file.edges;
    if (truth.lags() > est.edges.lags()) {
        const EdgeSet cut = truth.resized_lags(est.edges.lags());
        if (cut.edge_count() != truth.edge_count()) {
            throw DimensionError("true network has edges beyond the estimated lag order");
        }
    }
    truth = truth.resized_lags(est.edges.lags());
    const MetricsReport m = score_network(est.edges, truth);

    FitQuality model_fit;
    FitQuality ols_fit;
    std::string method = "BTDVAR";
    const bool have_fit = !cfg.draws.empty();
    if (have_fit) {
        const PosteriorDraws draws = load_draws(cfg.draws);
        const PanelData data = load_data(cfg);
        model_fit = posterior_fit_quality(draws, data);
        ols_fit = ols_fit_quality(data, draws.lags);
        if (draws.random_effects) {
            method = "BPTDVAR";
        }
    }
    Table t;
    t.header = {"method", "r2_in", "r2_out", "tpr", "tnr", "fpr", "fnr"};
    const std::string na = "-";
    t.rows.push_back({method, have_fit ? opt_text(model_fit.r2_in) : na, have_fit ? opt_text(model_fit.r2_out) : na,
                      opt_text(m.tpr), opt_text(m.tnr), opt_text(m.fpr), opt_text(m.fnr)});
    if (have_fit) {
        t.rows.push_back({"OLS", opt_text(ols_fit.r2_in), opt_text(ols_fit.r2_out), na, na, na, na});
    }
    write_table(out / "metrics.csv", t);
    write_manifest(out / "manifest.txt", cfg, {});
}

}  // namespace btdvar
