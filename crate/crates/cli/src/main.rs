//! `mpple` command-line front end.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpple::bands::{band_cif, band_cumhaz, BandRequest, BandTarget, BandWeight};
use mpple::report::{
    fit_report, write_band_csv, write_baseline_csv, write_cif_csv, write_gof_csv, write_replicates_csv,
    write_study_csv,
};
use mpple::study::StudyBands;
use mpple::{
    analyze, cif_influence, cif_with_uncertainty, fit_cause_probability, gof_test, load_dataset, run_study,
    write_dataset, Analysis, Band, Dataset, ErrorKind, Exec, ScenarioConfig, StudyConfig, TermGrammar,
};

use config::{parse_weight, RunConfig};
use output::Outputs;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(mpple::Error),
}

impl From<mpple::Error> for CliError {
    fn from(e: mpple::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Fit => 4,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mpple", version, about = "Cause-specific hazards with missing causes of failure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the cause-probability model and all cause-specific hazards.
    Fit(Common),
    /// Cumulative incidence curves at covariate values z0, with SEs and optional bands.
    Predict(Common),
    /// Simultaneous confidence band for a cumulative hazard or incidence curve.
    Band(Common),
    /// Goodness-of-fit test for the cause-probability model.
    Gof(Common),
    /// Monte Carlo study under one of the built-in scenarios.
    Simulate(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Input CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// JSON configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Multiplier replications.
    #[arg(long = "B")]
    b: Option<usize>,
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    n: Option<usize>,
    /// Four comma-separated missingness coefficients.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Band weight(s): ep, hw, or ep,hw.
    #[arg(long, value_delimiter = ',', num_args = 1, value_parser = parse_weight)]
    weight: Option<Vec<BandWeight>>,
    /// Domain clip levels c1,c2.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    clip: Option<Vec<f64>>,
    /// Band target: cumhaz, cumhaz_at_z0 or cif.
    #[arg(long)]
    target: Option<String>,
    /// One-based cause label (default: every cause).
    #[arg(long)]
    cause: Option<usize>,
    /// Covariate vector z0 (comma-separated); replaces the config list.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_negative_numbers = true)]
    z0: Option<Vec<f64>>,
    /// simulate: also track simultaneous band coverage.
    #[arg(long)]
    bands: bool,
    /// simulate: write per-replicate results.
    #[arg(long)]
    keep_replicates: bool,
    /// simulate: write the first replicate's dataset instead of running the study.
    #[arg(long)]
    emit_dataset: bool,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn merged(&self) -> CliResult<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(d) = &self.data {
            c.data = Some(d.display().to_string());
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = Some(v); } )* };
        }
        set!(seed, alpha, b, scenario, n, replicates, target, cause, weight);
        if let Some(t) = &self.theta {
            c.theta = Some(t.as_slice().try_into().map_err(|_| CliError::Config(format!("--theta needs 4 values, got {}", t.len())))?);
        }
        if let Some(v) = &self.clip {
            let [c1, c2] = v.as_slice() else {
                return Err(CliError::Config(format!("--clip needs 2 values, got {}", v.len())));
            };
            c.clip = Some([*c1, *c2]);
        }
        if let Some(z) = &self.z0 {
            c.z0 = Some(vec![z.clone()]);
        }
        if self.bands {
            c.bands = Some(true);
        }
        if self.keep_replicates {
            c.keep_replicates = Some(true);
        }
        Ok(c)
    }
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        #[cfg(feature = "parallel")]
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}"))),
        _ => Ok(()),
    }
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Config("--data is required".into()))?;
    let schema = cfg.schema.clone().unwrap_or(mpple::Schema {
        time: "time".into(),
        event: "event".into(),
        cause: "cause".into(),
        covariates: Vec::new(),
        auxiliaries: Vec::new(),
        k: None,
        tau: None,
    });
    Ok(load_dataset(path, &schema)?)
}

fn grammar(cfg: &RunConfig, ds: &Dataset) -> CliResult<TermGrammar> {
    let specs = cfg.grammar.clone().unwrap_or_else(|| {
        let mut g = vec!["1".to_string(), "t".to_string()];
        g.extend(ds.covariate_names().iter().cloned());
        g.extend(ds.auxiliary_names().iter().cloned());
        g
    });
    Ok(TermGrammar::parse(&specs, ds.covariate_names(), ds.auxiliary_names())?)
}

fn z0_list(cfg: &RunConfig, ds: &Dataset) -> Vec<Vec<f64>> {
    cfg.z0.clone().unwrap_or_else(|| vec![ds.covariate_means()])
}

fn causes(cfg: &RunConfig, k: usize) -> CliResult<Vec<usize>> {
    Ok(match cfg.cause_index(k)? {
        Some(j) => vec![j],
        None => (0..k).collect(),
    })
}

fn cmd_fit(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let ds = load(cfg)?;
    let an = analyze(&ds, &grammar(cfg, &ds)?, Exec::default())?;
    let report = fit_report(&ds, &an, cfg.alpha());
    let miss = an.missingness.report()?;
    out.claim(&["missingness.json", "fit.json", "baseline.csv"])?;
    out.json("missingness.json", &miss)?;
    out.json("fit.json", &report)?;
    out.csv("baseline.csv", |p| write_baseline_csv(p, &an))?;
    Ok(())
}

fn band_request(cfg: &RunConfig, target: BandTarget, cause: usize, weight: BandWeight) -> BandRequest {
    let mut req = BandRequest::new(target, cause);
    req.alpha = cfg.alpha();
    req.weight = weight;
    req.b = cfg.b();
    req.domain = cfg.domain();
    req.seed = cfg.seed();
    req
}

fn cmd_predict(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let ds = load(cfg)?;
    let an = analyze(&ds, &grammar(cfg, &ds)?, Exec::default())?;
    let weights = cfg.weight.clone().unwrap_or_default();
    let z0s = z0_list(cfg, &ds);
    let mut files = Vec::new();
    for (m, z0) in z0s.iter().enumerate() {
        let ci = cif_influence(&an.influence, z0)?;
        let curves = cif_with_uncertainty(&ci, cfg.alpha())?;
        let mut bands: Vec<(&str, Vec<Option<Band>>)> = Vec::new();
        for &w in &weights {
            let per_cause = (0..an.fit.k())
                .map(|j| band_cif(&ci, &band_request(cfg, BandTarget::Cif(z0.clone()), j, w), Exec::default()).map(Some))
                .collect::<mpple::Result<Vec<_>>>()?;
            for (c, b) in curves.iter().zip(&per_cause) {
                warn_pointwise_outside(c, b.as_ref(), w);
            }
            bands.push((w.label(), per_cause));
        }
        files.push((format!("cif_z0_{}.csv", m + 1), curves, bands));
    }
    let names: Vec<String> = files.iter().map(|f| f.0.clone()).collect();
    out.claim(&names)?;
    for (name, curves, bands) in &files {
        out.csv(name, |p| write_cif_csv(p, curves, bands))?;
    }
    Ok(())
}

fn warn_pointwise_outside(curve: &mpple::CifCurve, band: Option<&Band>, w: BandWeight) {
    let (Some(band), Some(pt)) = (band, &curve.pointwise) else { return };
    let mut inside = 0usize;
    let mut violated = 0usize;
    for (m, &t) in curve.grid.iter().enumerate() {
        if let (Some((_, bu)), Some((_, pu))) = (band.at(t), pt[m]) {
            inside += 1;
            if pu > bu {
                violated += 1;
            }
        }
    }
    if violated > 0 {
        eprintln!(
            "warning: cause {} ({}): pointwise upper limit exceeds the band at {violated} of {inside} grid points",
            curve.cause + 1,
            w.label()
        );
    }
}

fn cmd_band(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let ds = load(cfg)?;
    let an: Analysis = analyze(&ds, &grammar(cfg, &ds)?, Exec::default())?;
    let weights = cfg.weight.clone().unwrap_or_else(|| vec![BandWeight::EqualPrecision]);
    let target = cfg.target.as_deref().unwrap_or("cumhaz");
    let z0 = || -> CliResult<Vec<f64>> {
        let list = z0_list(cfg, &ds);
        match list.as_slice() {
            [z] => Ok(z.clone()),
            _ => Err(CliError::Config(format!("band needs exactly one z0, got {}", list.len()))),
        }
    };
    let mut bands = Vec::new();
    for j in causes(cfg, an.fit.k())? {
        for &w in &weights {
            let band = match target {
                "cumhaz" => band_cumhaz(&an.influence, &band_request(cfg, BandTarget::Cumhaz, j, w), Exec::default())?,
                "cumhaz_at_z0" => band_cumhaz(
                    &an.influence,
                    &band_request(cfg, BandTarget::CumhazAtZ0(z0()?), j, w),
                    Exec::default(),
                )?,
                "cif" => {
                    let z = z0()?;
                    let ci = cif_influence(&an.influence, &z)?;
                    band_cif(&ci, &band_request(cfg, BandTarget::Cif(z), j, w), Exec::default())?
                }
                other => return Err(CliError::Config(format!("unknown band target `{other}`"))),
            };
            bands.push((format!("band_{target}_cause{}_{}.csv", j + 1, w.label()), j, band));
        }
    }
    let mut names: Vec<String> = bands.iter().map(|b| b.0.clone()).collect();
    names.push("band.json".into());
    out.claim(&names)?;
    for (name, j, band) in &bands {
        out.csv(name, |p| write_band_csv(p, *j, band))?;
    }
    let summary: Vec<serde_json::Value> = bands
        .iter()
        .map(|(name, j, b)| {
            serde_json::json!({
                "file": name, "cause": j + 1, "target": target, "weight": b.weight.label(),
                "alpha": b.alpha, "B": b.b_used, "c_alpha": b.c_alpha, "domain": [b.domain.0, b.domain.1],
                "seed": b.seed, "degenerate": b.degenerate,
            })
        })
        .collect();
    out.json("band.json", &summary)?;
    Ok(())
}

fn cmd_gof(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let ds = load(cfg)?;
    let mf = fit_cause_probability(&ds, &grammar(cfg, &ds)?)?;
    let results = causes(cfg, ds.k())?
        .into_iter()
        .map(|j| gof_test(&ds, &mf, j, cfg.b(), cfg.alpha(), cfg.seed(), Exec::default()))
        .collect::<mpple::Result<Vec<_>>>()?;
    let mut names: Vec<String> = results.iter().map(|r| format!("gof_cause{}.csv", r.cause + 1)).collect();
    names.push("gof.json".into());
    out.claim(&names)?;
    for r in &results {
        out.csv(&format!("gof_cause{}.csv", r.cause + 1), |p| write_gof_csv(p, r))?;
    }
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "cause": r.cause + 1, "p_value": r.p_value, "sup_obs": r.sup_obs, "c_alpha": r.c_alpha,
                "half_width": r.half_width, "alpha": r.alpha, "B": r.b, "seed": r.seed,
            })
        })
        .collect();
    out.json("gof.json", &summary)?;
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, emit_dataset: bool, out: &mut Outputs) -> CliResult<()> {
    let scenario = cfg.scenario.ok_or_else(|| CliError::Config("--scenario is required".into()))?;
    let theta = cfg.theta.unwrap_or(mpple::simulation::THETAS[0]);
    let mut sc = ScenarioConfig::new(scenario, cfg.n.unwrap_or(400), theta)?;
    sc.replicates = cfg.replicates.unwrap_or(1000);
    sc.seed = cfg.seed();
    sc.validate()?;
    if emit_dataset {
        let ds = mpple::generate_dataset(&sc, 0)?;
        out.claim(&["dataset.csv"])?;
        return out.csv("dataset.csv", |p| write_dataset(p, &ds));
    }
    let mut study = StudyConfig::new(sc);
    if let Some(g) = &cfg.grammar {
        study.grammar = g.clone();
    }
    if let Some(t) = &cfg.time_points {
        study.time_points = t.clone();
    }
    if let Some(z) = &cfg.z0 {
        study.z0 = z.clone();
    }
    study.alpha = cfg.alpha();
    study.keep_replicates = cfg.keep_replicates.unwrap_or(false);
    if cfg.bands.unwrap_or(false) {
        let d = StudyBands::default();
        let [c1, c2] = cfg.clip.unwrap_or([d.c1, d.c2]);
        let weight = match cfg.weight.as_deref() {
            None => d.weight,
            Some([w]) => *w,
            Some(_) => return Err(CliError::Config("simulate takes a single band weight".into())),
        };
        study.bands = Some(StudyBands { b: cfg.b(), weight, c1, c2 });
    }
    study.validate()?;
    let summary = run_study(&study, Exec::default())?;
    let mut names = vec!["study.csv".to_string(), "study.json".to_string()];
    if study.keep_replicates {
        names.push("replicates.csv".into());
    }
    out.claim(&names)?;
    out.csv("study.csv", |p| write_study_csv(p, &summary))?;
    out.json("study.json", &summary)?;
    if study.keep_replicates {
        let est: Vec<String> = study.estimands().into_iter().map(|e| e.0).collect();
        out.csv("replicates.csv", |p| write_replicates_csv(p, &summary, &est))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (name, common) = match &cli.command {
        Command::Fit(c) => ("fit", c),
        Command::Predict(c) => ("predict", c),
        Command::Band(c) => ("band", c),
        Command::Gof(c) => ("gof", c),
        Command::Simulate(c) => ("simulate", c),
    };
    set_threads(common.threads)?;
    let cfg = common.merged()?;
    if let Some(a) = cfg.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config(format!("alpha must lie in (0, 1), got {a}")));
        }
    }
    let mut out = Outputs::new(&common.out, common.force, name, &cfg)?;
    match cli.command {
        Command::Fit(_) => cmd_fit(&cfg, &mut out),
        Command::Predict(_) => cmd_predict(&cfg, &mut out),
        Command::Band(_) => cmd_band(&cfg, &mut out),
        Command::Gof(_) => cmd_gof(&cfg, &mut out),
        Command::Simulate(c) => cmd_simulate(&cfg, c.emit_dataset, &mut out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"alpha": 0.1, "seed": 5, "B": 300, "weight": ["hw"], "clip": [0.2, 0.8]}"#).unwrap();
        let cli = Cli::parse_from(["mpple", "band", "--config", path.to_str().unwrap(), "--seed", "7", "--weight", "ep,hw"]);
        let Command::Band(c) = cli.command else { unreachable!() };
        let cfg = c.merged().unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.alpha(), 0.1);
        assert_eq!(cfg.b(), 300);
        assert_eq!(cfg.weight, Some(vec![BandWeight::EqualPrecision, BandWeight::HallWellner]));
        assert_eq!(cfg.clip, Some([0.2, 0.8]));
        let mut other = cfg.clone();
        other.seed = Some(8);
        assert_ne!(cfg.hash(), other.hash());
    }
}
