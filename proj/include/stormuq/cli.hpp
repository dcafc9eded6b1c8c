#ifndef STORMUQ_CLI_HPP
#define STORMUQ_CLI_HPP

#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "stormuq/bias.hpp"
#include "stormuq/hier.hpp"
#include "stormuq/manifest.hpp"
#include "stormuq/mle.hpp"
#include "stormuq/modelselect.hpp"
#include "stormuq/predict.hpp"
#include "stormuq/simstudy.hpp"

namespace stormuq::cli {

inline constexpr const char* kVersion = "1.0.0";

namespace fs = std::filesystem;

namespace detail {

inline std::vector<std::string> list_json_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw data_error("not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" &&
        e.path().filename() != "manifest.json" &&
        e.path().filename().string().find("config") == std::string::npos)
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw data_error("no .json files in " + dir);
  return out;
}

inline std::vector<StormSummary> load_summaries(const std::string& dir,
                                                std::vector<std::string>* paths = nullptr) {
  std::vector<StormSummary> out;
  for (const auto& p : list_json_files(dir)) {
    out.push_back(read_summary(p));
    if (paths) paths->push_back(p);
  }
  return out;
}

inline Eigen::VectorXd values_on_buffer(const RasterField& r, const BufferRegion& b,
                                        bool zero_for_nodata = false) {
  Eigen::VectorXd v(Eigen::Index(b.n_points()));
  for (std::size_t k = 0; k < b.n_points(); ++k) {
    const double x = r.values[b.member_indices[k]];
    if (r.is_nodata(x)) {
      if (!zero_for_nodata)
        throw data_error("nodata inside buffer at cell " + std::to_string(b.member_indices[k]));
      v[Eigen::Index(k)] = 0.0;
    } else {
      v[Eigen::Index(k)] = x;
    }
  }
  return v;
}

inline Coords buffer_locations(const RasterField& grid, const BufferRegion& b) {
  Coords locs(Eigen::Index(b.n_points()), 2);
  for (std::size_t k = 0; k < b.n_points(); ++k) {
    locs(Eigen::Index(k), 0) = grid.cell_x(b.member_indices[k]);
    locs(Eigen::Index(k), 1) = grid.cell_y(b.member_indices[k]);
  }
  return locs;
}

inline void append_score_row(const std::string& path, bool append, const std::string& storm_id,
                             int model_id, const std::string& basin, const std::string& metric,
                             double value) {
  const bool exists = fs::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw data_error("cannot open for writing: " + path);
  if (!append || !exists) out << "storm_id,model_id,basin,metric,value\n";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  out << storm_id << ',' << model_id << ',' << basin << ',' << metric << ',' << buf << "\n";
}

struct ScoreRowWriter {
  std::string path;
  bool wrote_header = false;
  bool append = false;

  void row(const std::string& storm_id, int model_id, const std::string& basin,
           const std::string& metric, double value) {
    append_score_row(path, append || wrote_header, storm_id, model_id, basin, metric, value);
    wrote_header = true;
  }
};

} // namespace detail

inline int run(const std::vector<std::string>& args) {
  CLI::App app{"stormuq: uncertainty quantification for gridded storm precipitation forecasts"};
  app.set_config("--config", "", "INI-style config file (flags override file values)");
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "print version and output schema versions");

  // ---- ingest ----
  auto* ingest = app.add_subcommand("ingest", "build an error field from rasters and a buffer spec");
  struct {
    std::string obs, fcst, mask, buffer, storm_id, out;
  } ing;
  ingest->add_option("--obs", ing.obs, "observed precipitation ASCII grid (mm)")->required();
  ingest->add_option("--fcst", ing.fcst, "forecast precipitation ASCII grid (mm)")->required();
  ingest->add_option("--mask", ing.mask, "land mask ASCII grid (1 = land)")->required();
  ingest->add_option("--buffer", ing.buffer, "buffer spec JSON")->required();
  ingest->add_option("--storm-id", ing.storm_id, "storm identifier")->required();
  ingest->add_option("--out", ing.out, "output directory for error fields")->required();
  ingest->callback([&] {
    const RasterField obs = sqrt_transform(load_raster(ing.obs));
    const RasterField fcst = sqrt_transform(load_raster(ing.fcst));
    const RasterField mask = load_raster(ing.mask);
    const BufferSpec spec = read_buffer_spec(ing.buffer);
    const BufferRegion buffer =
        build_buffer(obs, mask, spec.center1, spec.center2, spec.radius_km);
    const ErrorField ef = make_error_field(obs, fcst, buffer, spec.region, ing.storm_id);
    fs::create_directories(ing.out);
    const std::string out_file = (fs::path(ing.out) / (ing.storm_id + ".json")).string();
    write_error_field(ef, out_file);
    write_manifest(ing.out, "ingest", {ing.obs, ing.fcst, ing.mask, ing.buffer}, {out_file},
                   {{"storm_id", ing.storm_id}, {"schema", kSchemaErrorField}});
  });

  // ---- mle ----
  auto* mle_cmd = app.add_subcommand("mle", "per-storm profile MLE and information matrix");
  struct {
    std::string fields, out;
    int jobs = 1;
    double tol = 1e-8;
  } mle_o;
  mle_cmd->add_option("--fields", mle_o.fields, "directory of error-field JSON files")->required();
  mle_cmd->add_option("--out", mle_o.out, "output directory for summaries")->required();
  mle_cmd->add_option("--jobs", mle_o.jobs, "worker count")->check(CLI::PositiveNumber);
  mle_cmd->add_option("--tol", mle_o.tol, "profile search tolerance in log phi");
  mle_cmd->callback([&] {
    const auto files = detail::list_json_files(mle_o.fields);
    fs::create_directories(mle_o.out);
    ProfileOptions popts;
    popts.tol_log_phi = mle_o.tol;
    std::vector<std::string> outputs(files.size());
    std::vector<std::exception_ptr> errors(files.size());
    auto worker = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t i = lo; i < hi; ++i) {
        try {
          const ErrorField ef = read_error_field(files[i]);
          const StormSummary s = summarize_storm(ef, popts);
          const std::string out_file =
              (fs::path(mle_o.out) / (s.storm_id + ".json")).string();
          write_summary(s, out_file);
          outputs[i] = out_file;
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    if (mle_o.jobs <= 1) {
      worker(0, files.size());
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (files.size() + mle_o.jobs - 1) / std::size_t(mle_o.jobs);
      for (std::size_t j = 0; j * chunk < files.size(); ++j)
        pool.emplace_back(worker, j * chunk, std::min(files.size(), (j + 1) * chunk));
      for (auto& t : pool) t.join();
    }
    for (std::size_t i = 0; i < errors.size(); ++i)
      if (errors[i]) std::rethrow_exception(errors[i]);
    write_manifest(mle_o.out, "mle", files, outputs,
                   {{"jobs", mle_o.jobs}, {"tol", mle_o.tol}, {"schema", kSchemaSummary}});
  });

  // ---- gibbs ----
  auto* gibbs_cmd = app.add_subcommand("gibbs", "hierarchical Gibbs sampler over storm summaries");
  struct {
    std::string summaries, out;
    int model = 2, iters = 10000, burnin = 1000;
    std::uint64_t seed = 0;
    double nu0 = 3.0;
  } gb;
  gibbs_cmd->add_option("--summaries", gb.summaries, "directory of summary JSON files")->required();
  gibbs_cmd->add_option("--model", gb.model, "model regime (1, 2 or 3)")->required();
  gibbs_cmd->add_option("--iters", gb.iters, "retained iterations");
  gibbs_cmd->add_option("--burnin", gb.burnin, "burn-in iterations");
  gibbs_cmd->add_option("--seed", gb.seed, "RNG seed")->required();
  gibbs_cmd->add_option("--nu0", gb.nu0, "inverse-Wishart degrees of freedom");
  gibbs_cmd->add_option("--out", gb.out, "output directory for the chain")->required();
  gibbs_cmd->callback([&] {
    std::vector<std::string> inputs;
    const auto summaries = detail::load_summaries(gb.summaries, &inputs);
    const DesignSpec design = design_for_model(gb.model);
    const HyperPrior prior = empirical_bayes_s0(summaries, gb.nu0);
    const PosteriorChain chain =
        gibbs_run(summaries, design, prior, gb.iters, gb.burnin, gb.seed);
    fs::create_directories(gb.out);
    const std::string chain_file =
        (fs::path(gb.out) / ("chain_model" + std::to_string(gb.model) + ".csv")).string();
    const std::string config_file =
        (fs::path(gb.out) / ("chain_model" + std::to_string(gb.model) + "_config.json")).string();
    write_chain_csv(chain, chain_file);
    write_chain_config(chain, prior, gb.iters, config_file);
    write_manifest(gb.out, "gibbs", inputs, {chain_file, config_file},
                   {{"model", gb.model},
                    {"iters", gb.iters},
                    {"burnin", gb.burnin},
                    {"seed", gb.seed},
                    {"nu0", gb.nu0},
                    {"schema", kSchemaChain}});
  });

  // ---- bias ----
  auto* bias_cmd = app.add_subcommand("bias", "systematic bias field via the EM alternation");
  struct {
    std::string fields, grid, out;
    int max_iters = 20;
    double tol = 1e-10;
  } bi;
  bias_cmd->add_option("--fields", bi.fields, "directory of error-field JSON files")->required();
  bias_cmd->add_option("--domain-grid", bi.grid, "template ASCII grid for rasterization")->required();
  bias_cmd->add_option("--out", bi.out, "output directory")->required();
  bias_cmd->add_option("--max-iters", bi.max_iters, "EM iteration cap");
  bias_cmd->add_option("--tol", bi.tol, "max-norm convergence tolerance");
  bias_cmd->callback([&] {
    const auto files = detail::list_json_files(bi.fields);
    std::vector<ErrorField> fields;
    for (const auto& f : files) fields.push_back(read_error_field(f));
    const RasterField tmpl = load_raster(bi.grid);
    EmOptions opts;
    opts.max_iters = bi.max_iters;
    opts.tol = bi.tol;
    const EmResult res = em_bias_loop(fields, opts);
    if (!res.mean_field.converged)
      std::cerr << "warning: bias EM did not converge within " << bi.max_iters << " iterations\n";
    write_mean_field(res.mean_field, tmpl, bi.out);
    save_raster(standardized_error_map(res.mean_field, tmpl),
                (fs::path(bi.out) / "standardized.asc").string());
    const std::string sum_dir = (fs::path(bi.out) / "summaries").string();
    fs::create_directories(sum_dir);
    std::vector<std::string> outputs{(fs::path(bi.out) / "mean.asc").string(),
                                     (fs::path(bi.out) / "sd.asc").string(),
                                     (fs::path(bi.out) / "count.asc").string(),
                                     (fs::path(bi.out) / "standardized.asc").string()};
    for (const auto& s : res.summaries) {
      const std::string p = (fs::path(sum_dir) / (s.storm_id + ".json")).string();
      write_summary(s, p);
      outputs.push_back(p);
    }
    write_manifest(bi.out, "bias", files, outputs,
                   {{"max_iters", bi.max_iters},
                    {"tol", bi.tol},
                    {"iterations", res.mean_field.iterations},
                    {"converged", res.mean_field.converged}});
  });

  // ---- predict ----
  auto* pred_cmd = app.add_subcommand("predict", "prediction maps for an incoming storm");
  struct {
    std::string chain, fcst, mask, buffer, out, obs, bias, watersheds, storm_id = "storm";
    int ensemble = 1000, jobs = 1;
    std::uint64_t seed = 0;
    std::vector<double> levels{0.95, 0.99};
    std::vector<double> thresholds;
  } pr;
  pred_cmd->add_option("--chain", pr.chain, "posterior chain CSV")->required();
  pred_cmd->add_option("--fcst", pr.fcst, "forecast ASCII grid (mm)")->required();
  pred_cmd->add_option("--mask", pr.mask, "land mask ASCII grid")->required();
  pred_cmd->add_option("--buffer", pr.buffer, "buffer spec JSON")->required();
  pred_cmd->add_option("--out", pr.out, "output directory")->required();
  pred_cmd->add_option("--obs", pr.obs, "observed ASCII grid (mm), enables coverage output");
  pred_cmd->add_option("--bias", pr.bias, "bias mean.asc to add to the forecast (models 6-9)");
  pred_cmd->add_option("--watersheds", pr.watersheds,
                       "watershed mask JSON, enables density output");
  pred_cmd->add_option("--storm-id", pr.storm_id, "storm identifier for output rows");
  pred_cmd->add_option("--ensemble", pr.ensemble, "number of simulated error fields");
  pred_cmd->add_option("--seed", pr.seed, "RNG seed")->required();
  pred_cmd->add_option("--levels", pr.levels, "prediction map levels")->delimiter(',');
  pred_cmd->add_option("--thresholds", pr.thresholds, "threshold maps (mm)")->delimiter(',');
  pred_cmd->add_option("--jobs", pr.jobs, "worker count")->check(CLI::PositiveNumber);
  pred_cmd->callback([&] {
    const PosteriorChain chain = read_chain_csv(pr.chain);
    const RasterField fcst = sqrt_transform(load_raster(pr.fcst));
    const RasterField mask = load_raster(pr.mask);
    const BufferSpec spec = read_buffer_spec(pr.buffer);
    const BufferRegion buffer =
        build_buffer(fcst, mask, spec.center1, spec.center2, spec.radius_km);
    Eigen::VectorXd forecast = detail::values_on_buffer(fcst, buffer);
    if (!pr.bias.empty()) {
      const RasterField mean = load_raster(pr.bias);
      if (!mean.same_geometry(fcst)) throw data_error("bias grid geometry mismatch");
      forecast += detail::values_on_buffer(mean, buffer, /*zero_for_nodata=*/true);
    }
    const Coords locations = detail::buffer_locations(fcst, buffer);

    const DesignSpec design = design_for_model(chain.model_id);
    Rng theta_rng(pr.seed, {0x7072ULL});
    const auto thetas = sample_theta_new(chain, design.x_for(spec.region), theta_rng, pr.ensemble);
    const PredictiveEnsemble ens =
        simulate_ensemble(thetas, buffer, locations, forecast, pr.seed, pr.jobs);

    fs::create_directories(pr.out);
    std::vector<std::string> outputs;
    for (double level : pr.levels) {
      char name[64];
      std::snprintf(name, sizeof name, "pred_%g.asc", 100.0 * level);
      const std::string p = (fs::path(pr.out) / name).string();
      save_raster(prediction_map(ens, level, fcst), p);
      outputs.push_back(p);
    }
    for (double thr : pr.thresholds) {
      char name[64];
      std::snprintf(name, sizeof name, "thr_%gmm.asc", thr);
      const std::string p = (fs::path(pr.out) / name).string();
      save_raster(threshold_prob_map(ens, thr, fcst), p);
      outputs.push_back(p);
    }
    {
      const std::string p = (fs::path(pr.out) / "margins_inches.asc").string();
      save_raster(rasterize(fcst, buffer, margins_of_error(ens)), p);
      outputs.push_back(p);
    }
    if (!pr.obs.empty()) {
      const RasterField obs = sqrt_transform(load_raster(pr.obs));
      if (!obs.same_geometry(fcst)) throw data_error("observation grid geometry mismatch");
      const Eigen::VectorXd obs_buf = detail::values_on_buffer(obs, buffer);
      detail::ScoreRowWriter w{(fs::path(pr.out) / "coverage.csv").string()};
      for (double level : pr.levels) {
        const double c = coverage(prediction_map(ens, level, fcst), obs_buf, buffer);
        char metric[32];
        std::snprintf(metric, sizeof metric, "coverage%g", 100.0 * level);
        w.row(pr.storm_id, chain.model_id, "", metric, c);
      }
      outputs.push_back(w.path);
    }
    if (!pr.watersheds.empty()) {
      // kernel density of accumulated precipitation per basin: a CSV of
      // (evaluation point, density) pairs plus the quantile summary
      nlohmann::json quantiles;
      for (const auto& mask : read_watersheds(pr.watersheds)) {
        const WatershedDensity wd = watershed_density(ens, mask);
        const std::string p =
            (fs::path(pr.out) / ("watershed_" + mask.name + "_density.csv")).string();
        std::ofstream dout(p);
        dout << "total_mm,density\n";
        const double lo = wd.q025 - 4.0 * wd.bandwidth, hi = wd.q975 + 4.0 * wd.bandwidth;
        char buf[96];
        for (int k = 0; k < 256; ++k) {
          const double x = lo + (hi - lo) * k / 255.0;
          std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", x, wd(x));
          dout << buf;
        }
        outputs.push_back(p);
        quantiles[mask.name] = {{"q025_mm", wd.q025},
                                {"q500_mm", wd.q500},
                                {"q975_mm", wd.q975},
                                {"cell_area_km2", mask.cell_area_km2},
                                {"volume_q500_km2mm", wd.volume_of(wd.q500)}};
      }
      const std::string qp = (fs::path(pr.out) / "watershed_quantiles.json").string();
      std::ofstream(qp) << quantiles.dump(2) << "\n";
      outputs.push_back(qp);
    }
    std::vector<std::string> inputs{pr.chain, pr.fcst, pr.mask, pr.buffer};
    if (!pr.obs.empty()) inputs.push_back(pr.obs);
    if (!pr.bias.empty()) inputs.push_back(pr.bias);
    if (!pr.watersheds.empty()) inputs.push_back(pr.watersheds);
    write_manifest(pr.out, "predict", inputs, outputs,
                   {{"storm_id", pr.storm_id},
                    {"ensemble", pr.ensemble},
                    {"seed", pr.seed},
                    {"levels", pr.levels},
                    {"thresholds", pr.thresholds}});
  });

  // ---- score ----
  auto* score_cmd = app.add_subcommand("score", "log scores of watershed predictive densities");
  struct {
    std::string chain, field, watersheds, out, bias, train_summaries, train_fields;
    int model = 2, draws = 1000, iters = 2000, burnin = 500;
    std::uint64_t seed = 0;
    bool append = false;
  } sc;
  score_cmd->add_option("--field", sc.field, "test-storm error field JSON")->required();
  score_cmd->add_option("--watersheds", sc.watersheds, "watershed mask JSON")->required();
  score_cmd->add_option("--model", sc.model, "model id 1-9")->required();
  score_cmd->add_option("--out", sc.out, "scores CSV")->required();
  score_cmd->add_option("--seed", sc.seed, "RNG seed")->required();
  score_cmd->add_option("--chain", sc.chain, "posterior chain CSV (models 1-3, 6-8)");
  score_cmd->add_option("--bias", sc.bias, "bias mean.asc (required for models 6-9)");
  score_cmd->add_option("--train-summaries", sc.train_summaries,
                        "training summaries directory (models 4 and 9)");
  score_cmd->add_option("--train-fields", sc.train_fields,
                        "training error-field directory (model 5)");
  score_cmd->add_option("--draws", sc.draws, "number of theta draws in the mixture");
  score_cmd->add_option("--iters", sc.iters, "Gibbs iterations for the model-5 fit");
  score_cmd->add_option("--burnin", sc.burnin, "Gibbs burn-in for the model-5 fit");
  score_cmd->add_flag("--append", sc.append, "append to an existing scores CSV");
  score_cmd->callback([&] {
    if (sc.model < 1 || sc.model > 9) throw data_error("score: model must be 1-9");
    const bool biased = sc.model >= 6;
    if (biased && sc.bias.empty()) throw data_error("score: models 6-9 need --bias");
    if (!biased && !sc.bias.empty()) throw data_error("score: --bias only applies to models 6-9");
    const int base = biased ? sc.model - 5 : sc.model;

    const ErrorField ef = read_error_field(sc.field);
    const auto masks = read_watersheds(sc.watersheds);

    Rng rng(sc.seed, {0x7363ULL});
    std::vector<Eigen::VectorXd> thetas;
    if (base == 1 || base == 2 || base == 3) {
      if (sc.chain.empty()) throw data_error("score: models 1-3 (6-8) need --chain");
      const PosteriorChain chain = read_chain_csv(sc.chain);
      if (chain.model_id != base)
        throw data_error("score: chain is model " + std::to_string(chain.model_id) +
                         ", expected " + std::to_string(base));
      const DesignSpec design = design_for_model(base);
      thetas = sample_theta_new(chain, design.x_for(ef.region), rng, sc.draws);
    } else if (base == 4) {
      if (sc.train_summaries.empty()) throw data_error("score: model 4 (9) needs --train-summaries");
      const auto sums = to_summary_vecs(detail::load_summaries(sc.train_summaries));
      thetas = bootstrap_theta(sums, rng, sc.draws);
    } else { // base == 5
      if (sc.train_fields.empty()) throw data_error("score: model 5 needs --train-fields");
      std::vector<SummaryVec> sums;
      for (const auto& p : detail::list_json_files(sc.train_fields)) {
        const ErrorField tf = read_error_field(p);
        sums.push_back(nonspatial_summary(tf.storm_id, tf.region, tf.y));
      }
      const HyperPrior prior = empirical_bayes_s0(sums, 2.0); // p = 1, nu0 = p+1
      const PosteriorChain chain = gibbs_run(sums, design_for_model(2), prior, sc.iters,
                                             sc.burnin, sc.seed);
      thetas = sample_theta_new(chain, Eigen::VectorXd::Ones(1), rng, sc.draws);
    }

    Eigen::VectorXd bias_on_buffer;
    if (biased) {
      const RasterField mean = load_raster(sc.bias);
      bias_on_buffer = detail::values_on_buffer(mean, ef.buffer, /*zero_for_nodata=*/true);
    }

    detail::ScoreRowWriter w{sc.out, false, sc.append};
    for (const auto& mask : masks) {
      validate_mask(mask, ef.buffer.n_points());
      const Eigen::Index m = Eigen::Index(mask.member.size());
      Eigen::VectorXd y_mask(m);
      Coords locs(m, 2);
      Eigen::VectorXd bias_mask = Eigen::VectorXd::Zero(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto idx = Eigen::Index(mask.member[std::size_t(k)]);
        y_mask[k] = ef.y[idx];
        locs.row(k) = ef.locations.row(idx);
        if (biased) bias_mask[k] = bias_on_buffer[idx];
      }
      const Eigen::MatrixXd D = pairwise_distances(locs);
      int skipped = 0;
      const double s = log_score(thetas, y_mask, D, biased ? &bias_mask : nullptr, &skipped);
      if (skipped > 0)
        std::cerr << "warning: " << skipped << " theta draws skipped for basin " << mask.name
                  << "\n";
      w.row(ef.storm_id, sc.model, mask.name, "log_score", s);
    }
  });

  // ---- evidence ----
  auto* ev_cmd = app.add_subcommand("evidence", "Laplace-Metropolis integrated likelihoods");
  struct {
    std::string summaries, chain1, chain2, chain3, out;
    double nu0 = 3.0;
  } ev;
  ev_cmd->add_option("--summaries", ev.summaries, "directory of summary JSON files")->required();
  ev_cmd->add_option("--chain1", ev.chain1, "Model 1 chain CSV");
  ev_cmd->add_option("--chain2", ev.chain2, "Model 2 chain CSV");
  ev_cmd->add_option("--chain3", ev.chain3, "Model 3 chain CSV");
  ev_cmd->add_option("--nu0", ev.nu0, "inverse-Wishart degrees of freedom");
  ev_cmd->add_option("--out", ev.out, "evidence CSV")->required();
  ev_cmd->callback([&] {
    std::vector<std::string> inputs;
    const auto sums = to_summary_vecs(detail::load_summaries(ev.summaries, &inputs));
    const HyperPrior prior = empirical_bayes_s0(sums, ev.nu0);
    std::vector<ModelEvidence> rows;
    for (const auto& [path, model] :
         {std::pair{ev.chain1, 1}, std::pair{ev.chain2, 2}, std::pair{ev.chain3, 3}}) {
      if (path.empty()) continue;
      inputs.push_back(path);
      const PosteriorChain chain = read_chain_csv(path);
      rows.push_back(model_evidence(chain, sums, design_for_model(model), prior));
    }
    if (rows.empty()) throw data_error("evidence: provide at least one --chain<k>");
    write_evidence_csv(rows, ev.out);
    write_manifest(fs::path(ev.out).parent_path().string(), "evidence", inputs, {ev.out},
                   {{"nu0", ev.nu0}, {"schema", kSchemaEvidence}});
  });

  // ---- simstudy ----
  auto* ss_cmd = app.add_subcommand("simstudy", "verification study on synthetic storm geometry");
  struct {
    std::string geometry, out;
    int reps = 10, iters = 2000, burnin = 500, model = 1;
    std::uint64_t seed = 20250808;
    double fixed_sigma2 = 0.0, fixed_phi = 0.0;
    bool full_scale = false;
  } ss;
  ss_cmd->add_option("--geometry", ss.geometry, "geometry bundle directory")->required();
  ss_cmd->add_option("--out", ss.out, "output directory")->required();
  ss_cmd->add_option("--reps", ss.reps, "replications per buffer");
  ss_cmd->add_option("--seed", ss.seed, "RNG seed");
  ss_cmd->add_option("--iters", ss.iters, "Gibbs iterations");
  ss_cmd->add_option("--burnin", ss.burnin, "Gibbs burn-in");
  ss_cmd->add_option("--model", ss.model, "Gibbs model regime");
  ss_cmd->add_option("--fixed-sigma2", ss.fixed_sigma2, "fixed-theta mode: sigma2 truth");
  ss_cmd->add_option("--fixed-phi", ss.fixed_phi, "fixed-theta mode: phi truth");
  ss_cmd->add_flag("--full-scale", ss.full_scale, "full 2,350-field configuration");
  ss_cmd->callback([&] {
    const StudyGeometry geom = load_geometry(ss.geometry);
    SimStudyConfig cfg;
    cfg.reps = ss.reps;
    if (ss.full_scale)
      cfg.reps = int((2350 + geom.buffers.size() - 1) / geom.buffers.size());
    cfg.seed = ss.seed;
    cfg.gibbs_iters = ss.iters;
    cfg.gibbs_burnin = ss.burnin;
    cfg.gibbs_model = ss.model;
    if (ss.fixed_sigma2 > 0.0 || ss.fixed_phi > 0.0) {
      if (!(ss.fixed_sigma2 > 0.0) || !(ss.fixed_phi > 0.0))
        throw data_error("simstudy: set both --fixed-sigma2 and --fixed-phi");
      cfg.fixed_theta = true;
      cfg.theta_fixed = theta_from_lambda({ss.fixed_sigma2, ss.fixed_phi});
    }
    const auto fields = simulate_training_set(geom, cfg);
    const SimReport rep = coverage_report(geom, fields, cfg);
    rep.print_table(std::cout);
    fs::create_directories(ss.out);
    const std::string report_file = (fs::path(ss.out) / "report.json").string();
    std::ofstream out(report_file);
    out << rep.to_json().dump(2) << "\n";
    write_manifest(ss.out, "simstudy",
                   {(fs::path(ss.geometry) / "domain.asc").string(),
                    (fs::path(ss.geometry) / "buffers.json").string()},
                   {report_file},
                   {{"reps", cfg.reps},
                    {"seed", ss.seed},
                    {"iters", ss.iters},
                    {"burnin", ss.burnin},
                    {"model", ss.model},
                    {"fixed_theta", cfg.fixed_theta},
                    {"schema", kSchemaReport}});
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const numeric_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (show_version) {
    std::cout << "stormuq " << kVersion << "\n";
    for (const char* s : {kSchemaGrid, kSchemaErrorField, kSchemaSummary, kSchemaChain,
                          kSchemaScores, kSchemaEvidence, kSchemaReport, kSchemaManifest})
      std::cout << "  " << s << "\n";
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }
  return 0;
}

} // namespace stormuq::cli

#endif
