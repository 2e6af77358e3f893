#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heavyrush.hpp"

namespace hr = heavyrush;

namespace {

struct ChainFlags {
  std::size_t iterations = 0, burn_in = 0, thin = 0, chains = 0, leapfrog = 0, max_rank = 0;
  std::uint64_t seed = 0;
  double jitter = 0.0, target = 0.0;
  std::string metric, latents;
  std::vector<CLI::Option*> options;

  void add(CLI::App* app) {
    options = {
        app->add_option("--iters", iterations, "total iterations per chain"),
        app->add_option("--burnin", burn_in, "warm-up iterations"),
        app->add_option("--thin", thin, "thinning factor"),
        app->add_option("--chains", chains, "number of chains"),
        app->add_option("--seed", seed, "64-bit master seed"),
        app->add_option("--leapfrog", leapfrog, "leapfrog steps per iteration"),
        app->add_option("--jitter", jitter, "relative jitter of the path length, in [0,1)"),
        app->add_option("--target-accept", target, "target acceptance during warm-up"),
        app->add_option("--metric", metric, "unit, diagonal or low_rank")
            ->check(CLI::IsMember({"unit", "diagonal", "low_rank"})),
        app->add_option("--max-metric-rank", max_rank, "cap on low-rank metric directions"),
        app->add_option("--latents", latents, "centred or scale_noncentred")
            ->check(CLI::IsMember({"centred", "scale_noncentred"})),
    };
  }

  /// Only the flags actually given, as config keys.
  hr::Json given() const {
    hr::Json j = hr::Json::object();
    const char* keys[] = {"iterations", "burn_in", "thin", "chains", "seed", "leapfrog_steps",
                          "path_jitter", "target_acceptance", "metric", "max_metric_rank", "latents"};
    for (std::size_t k = 0; k < options.size(); ++k) {
      if (options[k]->count() == 0) continue;
      switch (k) {
        case 0: j[keys[k]] = iterations; break;
        case 1: j[keys[k]] = burn_in; break;
        case 2: j[keys[k]] = thin; break;
        case 3: j[keys[k]] = chains; break;
        case 4: j[keys[k]] = seed; break;
        case 5: j[keys[k]] = leapfrog; break;
        case 6: j[keys[k]] = jitter; break;
        case 7: j[keys[k]] = target; break;
        case 8: j[keys[k]] = metric; break;
        case 9: j[keys[k]] = max_rank; break;
        case 10: j[keys[k]] = latents; break;
        default: break;
      }
    }
    return j;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal disease mapping with heavy-tailed latent effects"};
  app.require_subcommand(1);

  // fit
  auto* fit = app.add_subcommand("fit", "fit one model variant to a counts panel");
  std::string config, counts, adjacency, covariates, population, model, fit_out;
  bool one_based = false, no_standardize = false;
  std::size_t fit_threads = 1;
  ChainFlags fit_chain;
  fit->add_option("--config", config, "JSON run configuration; flags override its values")->check(CLI::ExistingFile);
  auto* o_counts = fit->add_option("--counts", counts, "counts CSV: area,time,count[,offset]");
  auto* o_adj = fit->add_option("--adjacency", adjacency, "adjacency CSV: i,j");
  auto* o_cov = fit->add_option("--covariates", covariates, "covariates CSV: area,<name>,...");
  auto* o_pop = fit->add_option("--population", population, "population CSV: area,population");
  auto* o_one = fit->add_flag("--one-based", one_based, "adjacency indices start at 1");
  auto* o_nostd = fit->add_flag("--no-standardize", no_standardize, "use covariates as given");
  auto* o_model = fit->add_option("--model", model, "R1, Ralpha, HR1, HRalpha, HRLPC1 or HRLPCalpha");
  auto* o_out = fit->add_option("--out", fit_out, "output directory");
  auto* o_threads = fit->add_option("--threads", fit_threads, "chains run in parallel up to this many");
  fit_chain.add(fit);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate replicate datasets from a scenario");
  std::string sim_scenario, sim_out = ".";
  sim->add_option("--scenario", sim_scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "output directory");

  // study
  auto* study = app.add_subcommand("study", "simulate, fit several models and score them");
  std::string study_scenario, study_models, study_out = ".";
  std::size_t study_threads = 1;
  bool quiet = false;
  ChainFlags study_chain;
  study->add_option("--scenario", study_scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  study->add_option("--models", study_models, "comma-separated model tags");
  study->add_option("--out", study_out, "output directory");
  study->add_option("--threads", study_threads, "fits run in parallel up to this many");
  study->add_flag("--quiet", quiet, "no per-fit progress on stderr");
  study_chain.add(study);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "recompute R-hat, ESS and WAIC from stored draws");
  std::string draws_dir;
  diag->add_option("--draws", draws_dir, "directory holding draws.csv (and loglik.csv)")
      ->required()
      ->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(hr::ExitCode::InputError);
  }

  try {
    if (*fit) {
      hr::FitOptions opts;
      if (!config.empty()) {
        const std::filesystem::path cp(config);
        hr::apply_run_config(hr::read_json_file(cp), cp.parent_path(), opts);
      }
      if (o_counts->count()) opts.inputs.counts = counts;
      if (o_adj->count()) opts.inputs.adjacency = adjacency;
      if (o_cov->count()) opts.inputs.covariates = covariates;
      if (o_pop->count()) opts.inputs.population = population;
      if (o_one->count()) opts.inputs.one_based = one_based;
      if (o_nostd->count()) opts.inputs.standardize = !no_standardize;
      if (o_model->count()) opts.model = model;
      if (o_out->count()) opts.out = fit_out;
      hr::apply_chain_settings(fit_chain.given(), opts.chain);
      if (o_threads->count()) opts.chain.threads = fit_threads;
      const hr::FitOutcome res = hr::cmd_fit(opts);
      const auto& st = res.report["status"];
      std::cout << "model " << res.report["model"]["tag"].get<std::string>() << "  WAIC "
                << res.report["waic"]["waic"].get<double>() << "  max R-hat " << st["max_rhat"].get<double>()
                << "  divergences " << st["divergences"].get<std::size_t>() << '\n';
      if (!res.converged) std::cerr << "warning: max split R-hat exceeds " << hr::kRhatThreshold << '\n';
      return static_cast<int>(res.exit_code());
    }
    if (*sim) {
      const auto files = hr::cmd_simulate(sim_scenario, sim_out);
      std::cout << "wrote " << files.size() << " replicate(s) to " << sim_out << '\n';
      return 0;
    }
    if (*study) {
      hr::StudyOptions opts;
      opts.scenario = study_scenario;
      opts.models = split_list(study_models);
      opts.out = study_out;
      opts.threads = study_threads;
      opts.chain_overrides = study_chain.given();
      hr::StudyProgress progress;
      if (!quiet) {
        progress = [](const hr::StudyRun& r) {
          std::cerr << "replicate " << r.replicate << ' ' << r.model
                    << (r.failed ? "  FAILED: " + r.failure : "  WAIC " + hr::format_number(r.waic)) << '\n';
        };
      }
      const hr::StudyOutcome res = hr::cmd_study(opts, progress);
      bool any_failed = false;
      for (const auto& a : res.report.aggregates) {
        std::cout << a.model << "  fits " << a.fits << "  failed " << a.failed;
        if (a.fits) std::cout << "  mean WAIC " << a.waic;
        if (a.detection) {
          if (auto s = a.detection->sensitivity()) std::cout << "  sensitivity " << *s;
          if (auto s = a.detection->specificity()) std::cout << "  specificity " << *s;
        }
        std::cout << '\n';
        any_failed = any_failed || a.failed > 0;
      }
      return static_cast<int>(any_failed ? hr::ExitCode::ConvergenceWarning : hr::ExitCode::Success);
    }
    if (*diag) {
      const hr::DiagnoseOutcome res = hr::cmd_diagnose(draws_dir);
      hr::write_summary_csv(std::cout, res.summary);
      if (res.waic) {
        std::cout << "\nwaic,p_w,lppd\n"
                  << hr::format_number(res.waic->waic) << ',' << hr::format_number(res.waic->p_w) << ','
                  << hr::format_number(res.waic->lppd) << '\n';
      }
      return static_cast<int>(res.converged() ? hr::ExitCode::Success : hr::ExitCode::ConvergenceWarning);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(hr::ExitCode::InputError);
  }
  return 0;
}
