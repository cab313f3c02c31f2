//! Runs CLI commands over seeds and writes reports to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::classifier::write_manifest;
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiments::{for_seeds, prepare, prepare_base, IclReport, SmallDataReport};
use crate::icl::FewShotPrompt;
use crate::report::GapReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Gap,
    Ood,
    Icl,
    SmallData,
    All,
}

impl Command {
    fn runs(self, other: Command) -> bool {
        self == other || (self == Command::All && other != Command::Gen)
    }
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub seed: u64,
    pub gamma: Option<f64>,
    pub delta: f64,
    pub delta_star: Option<f64>,
    pub e_kn: usize,
    pub e_unk: usize,
    pub acc_kn: Option<f64>,
    pub acc_unk: Option<f64>,
}

impl From<&GapReport> for AggregateRow {
    fn from(r: &GapReport) -> Self {
        Self {
            experiment: r.experiment.clone(),
            seed: r.seed,
            gamma: r.target_gamma,
            delta: r.delta,
            delta_star: r.delta_star,
            e_kn: r.e_kn,
            e_unk: r.e_unk,
            acc_kn: r.acc_kn,
            acc_unk: r.acc_unk,
        }
    }
}

/// Mean over seeds of one γ tier; rows of `ood_curve.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodCurvePoint {
    pub gamma_target: f64,
    pub gamma_measured: f64,
    pub delta_mean: f64,
    pub delta_sd: f64,
    pub implant_rate: f64,
    pub markov_bound: f64,
    pub n_seeds: usize,
    pub n_triples: usize,
}

/// Aggregates per-seed tier lists (each in config tier order) into curve points.
pub fn ood_curve(per_seed: &[Vec<GapReport>]) -> Vec<OodCurvePoint> {
    let Some(first) = per_seed.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| {
            let tier: Vec<&GapReport> = per_seed.iter().map(|v| &v[i]).collect();
            let n = tier.len() as f64;
            let mean = |f: &dyn Fn(&GapReport) -> f64| tier.iter().map(|r| f(r)).sum::<f64>() / n;
            let delta_mean = mean(&|r| r.delta);
            let var = tier
                .iter()
                .map(|r| (r.delta - delta_mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            let n_triples: usize = tier.iter().map(|r| r.n_test).sum();
            let covered: usize = tier.iter().map(|r| r.covered_kn).sum();
            OodCurvePoint {
                gamma_target: tier[0].target_gamma.unwrap_or(f64::NAN),
                gamma_measured: mean(&|r| r.gamma.unwrap_or(0.0)),
                delta_mean,
                delta_sd: var.sqrt(),
                implant_rate: crate::report::fraction(covered, n_triples),
                markov_bound: mean(&|r| r.markov_bound.unwrap_or(0.0)),
                n_seeds: tier.len(),
                n_triples,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct SmallDataRow {
    seed: u64,
    fraction: f64,
    n_subset: usize,
    n_full: usize,
    acc_full: Option<f64>,
    acc_full_prompted: Option<f64>,
    acc_subset: Option<f64>,
    acc_subset_prompted: Option<f64>,
    prompted_difference: f64,
    bare_difference: f64,
}

#[derive(Default)]
struct SeedOutput {
    files: Vec<(PathBuf, String)>,
    rows: Vec<AggregateRow>,
    ood: Option<Vec<GapReport>>,
    small: Option<SmallDataReport>,
}

fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn prompt_csv(p: &FewShotPrompt) -> Result<String> {
    let mut buf = Vec::new();
    crate::icl::write_prompt_csv(&mut buf, p)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn run_seed(cmd: Command, config: &ExperimentConfig, seed: u64) -> Result<SeedOutput> {
    let mut out = SeedOutput::default();
    if cmd == Command::Gen {
        let (space, dataset, base) = prepare_base(config, seed)?;
        let dir = PathBuf::from(format!("gen_seed{seed}"));
        out.files.push((dir.join("space.txt"), space.to_text()));
        out.files
            .push((dir.join("base_params.txt"), base.to_text()));
        let mut buf = Vec::new();
        dataset.write_csv(&mut buf)?;
        out.files.push((
            dir.join("dataset.csv"),
            String::from_utf8(buf).expect("utf-8"),
        ));
        let mut buf = Vec::new();
        write_manifest(
            &mut buf,
            &dataset.labeled_triples(),
            dataset.labels.as_deref().unwrap_or(&[]),
        )?;
        out.files.push((
            dir.join("base_partition.csv"),
            String::from_utf8(buf).expect("utf-8"),
        ));
        return Ok(out);
    }

    let prep = prepare(config, seed)?;
    if cmd.runs(Command::Gap) {
        let rep = prep.gap_report()?;
        let (g_kn, g_unk) = prep.graphs()?;
        out.files
            .push((format!("gap_seed{seed}.json").into(), json(&rep)?));
        out.files
            .push((format!("gap_seed{seed}_kn.graph").into(), g_kn.to_text()));
        out.files
            .push((format!("gap_seed{seed}_unk.graph").into(), g_unk.to_text()));
        for (name, tr) in [("kn", &prep.known_train), ("unk", &prep.unknown_train)] {
            let mut buf = Vec::new();
            tr.write_csv(&mut buf)?;
            out.files.push((
                format!("train_seed{seed}_{name}.csv").into(),
                String::from_utf8(buf).expect("utf-8"),
            ));
        }
        out.rows.push((&rep).into());
    }
    if cmd.runs(Command::Ood) {
        let reps = prep.ood_reports()?;
        out.files
            .push((format!("ood_seed{seed}.json").into(), json(&reps)?));
        out.rows.extend(reps.iter().map(AggregateRow::from));
        out.ood = Some(reps);
    }
    if cmd.runs(Command::Icl) {
        let rep: IclReport = prep.icl_report()?;
        out.files
            .push((format!("icl_seed{seed}.json").into(), json(&rep)?));
        let prompt = FewShotPrompt::new(rep.demos.clone())?;
        out.files.push((
            format!("prompt_seed{seed}.csv").into(),
            prompt_csv(&prompt)?,
        ));
        out.rows.push((&rep.fewshot).into());
        out.rows.push((&rep.cot).into());
    }
    if cmd.runs(Command::SmallData) {
        let rep = prep.small_data(config.icl.smalldata_fraction)?;
        out.files
            .push((format!("smalldata_seed{seed}.json").into(), json(&rep)?));
        out.rows.push((&rep.full).into());
        out.rows.push((&rep.subset).into());
        out.small = Some(rep);
    }
    Ok(out)
}

/// Runs `cmd` for every seed and writes all outputs under `out_dir`.
/// Returns the written paths in write order.
pub fn run_command(
    cmd: Command,
    config: &ExperimentConfig,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let results = for_seeds(seeds, |s| run_seed(cmd, config, s))?;
    let mut files: Vec<(PathBuf, String)> = vec![("config.toml".into(), config.to_toml_string())];
    let mut rows = Vec::new();
    let mut ood = Vec::new();
    let mut small = Vec::new();
    for r in results {
        files.extend(r.files);
        rows.extend(r.rows);
        ood.extend(r.ood);
        small.extend(r.small);
    }
    if !rows.is_empty() {
        files.push(("aggregate.csv".into(), csv_string(&rows)?));
    }
    if !ood.is_empty() {
        files.push(("ood_curve.csv".into(), csv_string(&ood_curve(&ood))?));
    }
    if !small.is_empty() {
        let table: Vec<SmallDataRow> = small
            .iter()
            .map(|s| SmallDataRow {
                seed: s.seed,
                fraction: s.fraction,
                n_subset: s.n_subset,
                n_full: s.n_full,
                acc_full: s.full.acc_kn,
                acc_full_prompted: s.full.acc_kn_star,
                acc_subset: s.subset.acc_kn,
                acc_subset_prompted: s.subset.acc_kn_star,
                prompted_difference: s.prompted_difference,
                bare_difference: s.bare_difference,
            })
            .collect();
        files.push(("smalldata.csv".into(), csv_string(&table)?));
    }

    let mut written = Vec::with_capacity(files.len());
    for (rel, content) in files {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}
