use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pairweight::design::{draw_sample, monte_carlo_design_tensor, DesignNode, SampleDraw};
use pairweight::diagnostics::{check_conditions, check_conditions_cross_group, unit_groups, ConditionThresholds};
use pairweight::harness::{run_experiment, CurveSetup, ExperimentConfig};
use pairweight::popgen::{generate_population, Population};
use pairweight::weights::{compute_weights, WeightScheme};
use pairweight::{Error, Result};

#[derive(Parser)]
#[command(name = "pairweight", version, about = "Pairwise sampling weights and weighted quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the command's random stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic population (population.csv, population.json).
    GenPop(Common),
    /// Draw one multistage sample (sample.csv).
    DrawSample(Common),
    /// Compute weights for one sample (weights_<scheme>.csv).
    Weights {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes; defaults to the config's list.
        #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
        schemes: Vec<WeightScheme>,
    },
    /// Fit the weighted quantile model to one sample (draws.csv, diagnostics.json, curve.csv).
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "marginal", value_parser = parse_scheme)]
        scheme: WeightScheme,
    },
    /// Condition constants of a small design (conditions.json).
    CheckDesign(CheckDesign),
    /// Full repeated-sampling experiment (report.csv, summary.json, reference.csv).
    RunExperiment(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignKind {
    Srswor,
    Census,
    Brewer,
    /// One household pair per household, households chosen by SRSWOR.
    Pairs,
}

#[derive(Args)]
struct CheckDesign {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    design: DesignKind,
    /// Population size (srswor, census).
    #[arg(long = "N")]
    big_n: Option<usize>,
    /// Sample size (srswor, brewer).
    #[arg(long = "n")]
    n: Option<usize>,
    /// Comma-separated size measures (brewer).
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<f64>,
    /// Household rosters as size lists separated by ';' (pairs), e.g. "1,2,3;1,1".
    #[arg(long)]
    households: Option<String>,
    /// Largest number of samples to enumerate before giving up.
    #[arg(long, default_value_t = 1_000_000)]
    cap: u128,
    /// Estimate the tensor from this many draws instead of enumerating.
    #[arg(long)]
    mc_reps: Option<usize>,
    /// Restrict the fourth-order constant to cross-cluster quadruples.
    #[arg(long)]
    cross_group: bool,
}

fn parse_scheme(s: &str) -> std::result::Result<WeightScheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Experiment config with an optional `[thresholds]` table for check-design.
fn load_config(path: Option<&Path>) -> Result<(ExperimentConfig, ConditionThresholds)> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
    };
    let thresholds = match value.as_object_mut().and_then(|m| m.remove("thresholds")) {
        Some(t) => serde_json::from_value(t).map_err(|e| Error::InvalidConfig(format!("thresholds: {e}")))?,
        None => ConditionThresholds::default(),
    };
    let cfg = serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok((cfg, thresholds))
}

struct Output {
    dir: PathBuf,
    force: bool,
}

impl Output {
    fn new(common: &Common) -> Result<Self> {
        std::fs::create_dir_all(&common.out)?;
        Ok(Self { dir: common.out.clone(), force: common.force })
    }

    /// Paths for the given names, refusing to clobber existing files.
    fn claim<const K: usize>(&self, names: [&str; K]) -> Result<[PathBuf; K]> {
        let paths = names.map(|n| self.dir.join(n));
        if !self.force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(Error::OutputExists(p.display().to_string()));
            }
        }
        Ok(paths)
    }
}

fn write_with<F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>>(path: &Path, f: F) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    f(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn sample_for(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<(Population, SampleDraw)> {
    let pop = generate_population(&cfg.population)?;
    let mut design = cfg.design.clone();
    if let Some(s) = seed {
        design.seed = s;
    }
    let sample = draw_sample(&pop, &design)?;
    Ok((pop, sample))
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::GenPop(c) | Command::DrawSample(c) | Command::RunExperiment(c) => c,
        Command::Weights { common, .. } | Command::Fit { common, .. } => common,
        Command::CheckDesign(c) => &c.common,
    };
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let (mut cfg, thresholds) = load_config(common.config.as_deref())?;
    let out = Output::new(common)?;

    match &cli.command {
        Command::GenPop(c) => {
            if let Some(s) = c.seed {
                cfg.population.seed = s;
            }
            out.claim(["population.csv", "population.json"])?;
            generate_population(&cfg.population)?.save(&out.dir)?;
        }
        Command::DrawSample(c) => {
            let [path] = out.claim(["sample.csv"])?;
            sample_for(&cfg, c.seed)?.1.save(&path)?;
        }
        Command::Weights { common, schemes } => {
            let schemes = if schemes.is_empty() { cfg.schemes.clone() } else { schemes.clone() };
            let names: Vec<String> = schemes.iter().map(|s| format!("weights_{s}.csv")).collect();
            for n in &names {
                out.claim([n.as_str()])?;
            }
            let (pop, sample) = sample_for(&cfg, common.seed)?;
            let mask = cfg.scenario.sample_mask(&pop, &sample);
            let opts = cfg.weight_options(&pop);
            for (scheme, name) in schemes.iter().zip(&names) {
                let w = compute_weights(&sample, *scheme, Some(&mask), &opts)?;
                write_with(&out.dir.join(name), |f| w.write_csv(f))?;
            }
        }
        Command::Fit { common, scheme } => {
            if let Some(s) = common.seed {
                cfg.model.sampler.seed = s;
            }
            let [_, _, curve_path] = out.claim(["draws.csv", "diagnostics.json", "curve.csv"])?;
            let (pop, sample) = sample_for(&cfg, common.seed)?;
            let mask = cfg.scenario.sample_mask(&pop, &sample);
            let w = compute_weights(&sample, *scheme, Some(&mask), &cfg.weight_options(&pop))?;
            let idx: Vec<usize> = (0..sample.len()).filter(|&i| mask[i]).collect();
            if idx.is_empty() {
                return Err(Error::EmptyDomain(format!("no sampled persons in domain {}", cfg.scenario.label())));
            }
            let person = |i: usize| &pop.persons[sample.persons[i].person];
            let x: Vec<f64> = idx.iter().map(|&i| person(i).x1).collect();
            let y: Vec<f64> = idx.iter().map(|&i| person(i).y).collect();
            let wts: Vec<f64> = idx.iter().map(|&i| w.normalized[i]).collect();
            let setup = CurveSetup::new(&pop, &cfg.scenario, &cfg.model, &cfg.grid)?;
            let (draws, curve) = setup.fit_draws(&x, &y, &wts, &cfg.model, &cfg.model.sampler)?;
            draws.save(&out.dir)?;
            write_with(&curve_path, |f| curve.write_csv(f))?;
        }
        Command::CheckDesign(c) => {
            let [path] = out.claim(["conditions.json"])?;
            let design = build_design(c)?;
            let tensor = match c.mc_reps {
                Some(reps) => monte_carlo_design_tensor(&design, 4, reps, c.common.seed.unwrap_or(cfg.seed))?,
                None => pairweight::design::enumerate_design(&design, c.cap)?,
            };
            let n = tensor.expected_sample_size;
            let big_n = tensor.population_size;
            let report = if c.cross_group {
                check_conditions_cross_group(&tensor, n, big_n, &thresholds, &unit_groups(&design))?
            } else {
                check_conditions(&tensor, n, big_n, &thresholds)?
            };
            let json = report.to_json()?;
            std::fs::write(&path, &json)?;
            print!("{json}");
        }
        Command::RunExperiment(c) => {
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let [report_path, summary_path, reference_path] =
                out.claim(["report.csv", "summary.json", "reference.csv"])?;
            let run = run_experiment(&cfg)?;
            let report = run.report();
            write_with(&report_path, |f| report.write_csv(f))?;
            write_with(&reference_path, |f| report.write_reference_csv(f))?;
            std::fs::write(&summary_path, report.summary_json()?)?;
            if cfg.save_curves {
                run.write_curves(&out.dir.join("curves"))?;
            }
        }
    }
    Ok(())
}

fn build_design(c: &CheckDesign) -> Result<DesignNode> {
    let need = |v: Option<usize>, flag: &str| {
        v.ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required for this design")))
    };
    let design = match c.design {
        DesignKind::Srswor => DesignNode::srswor(need(c.big_n, "N")?, need(c.n, "n")?),
        DesignKind::Census => DesignNode::census(need(c.big_n, "N")?),
        DesignKind::Brewer => DesignNode::brewer(&c.sizes, need(c.n, "n")?)?,
        DesignKind::Pairs => {
            let spec = c.households.as_deref().ok_or_else(|| Error::InvalidConfig("--households is required".into()))?;
            let households = spec
                .split(';')
                .map(|h| {
                    h.split(',')
                        .map(|x| x.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::InvalidConfig(format!("--households: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            DesignNode::households_with_pairs(&households)
        }
    };
    design.validate()?;
    Ok(design)
}

fn error_record(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            error_record("usage", e.to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_record(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
