use std::path::Path;

use proposal_scorer::bench::{bench_attention, fit_kind, BenchKind, BenchSpec};
use proposal_scorer::correlate::correlation_matrix;
use proposal_scorer::labels::{export_labels, mapping_labels, prediction_targets, ProposalLabels};
use proposal_scorer::losses::{map_loss, pred_loss, LossWeights};
use proposal_scorer::metrics::{best_index, SceneScorer, ScoreCard};
use proposal_scorer::scene::{save_scene, Mode};
use proposal_scorer::simulator::Rollout;
use proposal_scorer::synth::{gen_synthetic, GenConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{ensure_dir, write_file, SceneJob};
use crate::{BenchArgs, CliError, CorrelateArgs, GenArgs, LabelsArgs, RunManifest, ScoreArgs};

/// Shortest round-trip decimal, always with a fractional part.
pub(crate) fn fmt_f64(v: f64) -> String {
    let s = v.to_string();
    if v.is_finite() && !s.contains('.') {
        format!("{s}.0")
    } else {
        s
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{}: {e}", path.display()))
}

type Scored = (ScoreCard, Option<Rollout>);

/// Scores every (scene, proposal) pair on the manifest's pool. Results are
/// grouped per scene in input order regardless of scheduling.
fn score_all(m: &RunManifest, jobs: &[SceneJob], keep_rollouts: bool) -> Result<Vec<Vec<Scored>>, CliError> {
    let scorers = jobs
        .iter()
        .map(|j| SceneScorer::new(&j.scene, &j.cfg).map_err(|e| CliError::Input(format!("{}: {e}", j.label))))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(usize, usize)> = jobs.iter().enumerate().flat_map(|(s, j)| (0..j.proposals.len()).map(move |p| (s, p))).collect();
    let results: Vec<Result<Scored, CliError>> = m.pool()?.install(|| {
        pairs
            .par_iter()
            .map(|&(s, p)| {
                scorers[s]
                    .score(jobs[s].proposals.get(p))
                    .map(|(card, rollout)| (card, keep_rollouts.then_some(rollout)))
                    .map_err(|e| CliError::Input(format!("{}: proposal {p}: {e}", jobs[s].label)))
            })
            .collect()
    });
    let mut grouped: Vec<Vec<Scored>> = jobs.iter().map(|j| Vec::with_capacity(j.proposals.len())).collect();
    for (&(s, _), r) in pairs.iter().zip(results) {
        grouped[s].push(r?);
    }
    Ok(grouped)
}

#[derive(Serialize)]
struct SceneSummary<'a> {
    scene: &'a str,
    mode: Mode,
    proposals: usize,
    best_proposal: Option<usize>,
    best_pdms: Option<f64>,
    mean_pdms: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    rows: usize,
    mean_pdms: f64,
    scenes: Vec<SceneSummary<'a>>,
}

pub(crate) fn score(args: &ScoreArgs) -> Result<(), CliError> {
    let m = RunManifest::resolve(&args.input)?;
    ensure_dir(&m.out)?;
    let jobs = m.load()?;
    let scored = score_all(&m, &jobs, false)?;

    let path = m.out.join("scores.csv");
    let mut w = csv_writer(&path)?;
    let err = csv_err(&path);
    w.write_record([
        "scene",
        "proposal",
        "nc",
        "dac",
        "ttc",
        "comfort",
        "ep",
        "ep_discarded",
        "pdms",
        "first_at_fault_id",
        "first_ttc_id",
    ])
    .map_err(&err)?;
    let mut scenes = Vec::with_capacity(jobs.len());
    let (mut rows, mut total) = (0usize, 0.0);
    for (job, cards) in jobs.iter().zip(&scored) {
        for (p, (card, _)) in cards.iter().enumerate() {
            let s = &card.sub;
            let id = |a: Option<proposal_scorer::metrics::Attribution>| a.map_or(String::new(), |a| a.agent_id.to_string());
            w.write_record([
                job.label.clone(),
                p.to_string(),
                fmt_f64(s.nc),
                fmt_f64(s.dac),
                fmt_f64(s.ttc),
                fmt_f64(s.comfort),
                fmt_f64(s.ep),
                (s.ep_discarded as u8).to_string(),
                fmt_f64(card.pdms),
                id(card.first_at_fault),
                id(card.first_ttc),
            ])
            .map_err(&err)?;
        }
        let pdms: Vec<f64> = cards.iter().map(|(c, _)| c.pdms).collect();
        let best = best_index(pdms.iter().copied());
        rows += pdms.len();
        total += pdms.iter().sum::<f64>();
        scenes.push(SceneSummary {
            scene: &job.label,
            mode: job.scene.mode,
            proposals: pdms.len(),
            best_proposal: best,
            best_pdms: best.map(|b| pdms[b]),
            mean_pdms: pdms.iter().sum::<f64>() / pdms.len().max(1) as f64,
        });
    }
    w.flush().map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    let summary = Summary { rows, mean_pdms: total / rows.max(1) as f64, scenes };
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_file(&m.out.join("summary.json"), text.as_bytes())?;
    println!("scored {rows} proposals over {} scenes, mean pdms {:.4}", jobs.len(), summary.mean_pdms);
    Ok(())
}

#[derive(Serialize)]
struct LossCheck {
    map: f64,
    pred: f64,
}

#[derive(Serialize)]
struct SceneLabels<'a> {
    scene: &'a str,
    mode: Mode,
    proposals: Vec<ProposalLabels>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_check: Option<LossCheck>,
}

const LOSS_CHECK_TOLERANCE: f64 = 1e-6;

pub(crate) fn labels(args: &LabelsArgs) -> Result<(), CliError> {
    let m = RunManifest::resolve(&args.input)?;
    ensure_dir(&m.out)?;
    let jobs = m.load()?;
    let scored = score_all(&m, &jobs, true)?;
    let weights = LossWeights::default();
    for (i, (job, results)) in jobs.iter().zip(scored).enumerate() {
        let (cards, rollouts): (Vec<ScoreCard>, Vec<Rollout>) =
            results.into_iter().map(|(c, r)| (c, r.expect("rollouts kept"))).unzip();
        let fail = |e: proposal_scorer::labels::LabelError| CliError::Internal(format!("{}: {e}", job.label));
        let map = mapping_labels(&job.proposals, &job.scene, &rollouts).map_err(fail)?;
        let pred = prediction_targets(&job.proposals, &job.scene, &cards).map_err(fail)?;
        let loss_check = if args.with_loss_check {
            let lfail = |e: proposal_scorer::losses::LossError| CliError::Internal(format!("{}: {e}", job.label));
            let valid: Vec<f64> = pred.validity_flat().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            let check = LossCheck {
                map: map_loss(&map.as_f64(), &map).map_err(lfail)?,
                pred: pred_loss(&pred.corners_flat(), &valid, &pred, weights.w_bce).map_err(lfail)?,
            };
            println!("{}: map_loss={:e} pred_loss={:e}", job.label, check.map, check.pred);
            if !(check.map < LOSS_CHECK_TOLERANCE && check.pred < LOSS_CHECK_TOLERANCE) {
                return Err(CliError::Internal(format!("{}: perfect-prediction losses exceed {LOSS_CHECK_TOLERANCE}", job.label)));
            }
            Some(check)
        } else {
            None
        };
        let doc = SceneLabels { scene: &job.label, mode: job.scene.mode, proposals: export_labels(&map, &pred), loss_check };
        let mut text = serde_json::to_string(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        write_file(&m.out.join(format!("scene_{i:04}.labels.json")), text.as_bytes())?;
    }
    println!("wrote labels for {} scenes", jobs.len());
    Ok(())
}

pub(crate) fn correlate(args: &CorrelateArgs) -> Result<(), CliError> {
    let mut header: Option<Vec<String>> = None;
    let mut records: Vec<Vec<String>> = Vec::new();
    for path in &args.inputs {
        let input_err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
        let mut r = csv::Reader::from_path(path).map_err(input_err)?;
        let h: Vec<String> = r.headers().map_err(input_err)?.iter().map(str::to_string).collect();
        match &header {
            Some(prev) if *prev != h => return Err(CliError::Input(format!("{}: header differs from the first input", path.display()))),
            Some(_) => {}
            None => header = Some(h),
        }
        for rec in r.records() {
            records.push(rec.map_err(input_err)?.iter().map(|s| s.trim().to_string()).collect());
        }
    }
    let header = header.expect("at least one input");
    let parse = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    let selected: Vec<usize> = if args.columns.is_empty() {
        (0..header.len()).filter(|&c| !records.is_empty() && records.iter().all(|r| parse(&r[c]).is_some())).collect()
    } else {
        args.columns
            .iter()
            .map(|name| header.iter().position(|h| h == name).ok_or_else(|| CliError::Input(format!("unknown column `{name}`"))))
            .collect::<Result<_, _>>()?
    };
    let mut rows = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = selected
            .iter()
            .map(|&c| parse(&rec[c]).ok_or_else(|| CliError::Input(format!("row {}: column `{}`: `{}` is not numeric", i + 1, header[c], rec[c]))))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let names: Vec<String> = selected.iter().map(|&c| header[c].clone()).collect();
    let matrix = correlation_matrix(&names, &rows).map_err(|e| CliError::Input(e.to_string()))?;

    ensure_dir(&args.out)?;
    let path = args.out.join("correlation.csv");
    let mut w = csv_writer(&path)?;
    let err = csv_err(&path);
    w.write_record(std::iter::once("column".to_string()).chain(names.iter().cloned())).map_err(&err)?;
    for (name, row) in names.iter().zip(&matrix.values) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(|v| v.map_or(String::new(), fmt_f64)))).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    println!("correlated {} columns over {} rows", names.len(), rows.len());
    Ok(())
}

pub(crate) fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.reps < 1 {
        return Err(CliError::Input(format!("--reps must be at least 1, got {}", args.reps)));
    }
    let spec = BenchSpec {
        n_sweep: args.n_sweep.clone(),
        grid_sweep: args.grid_sweep.clone(),
        reps: args.reps as usize,
        seed: args.seed,
        ..BenchSpec::default()
    };
    ensure_dir(&args.out)?;
    let rows = bench_attention(&spec).map_err(|e| CliError::Input(e.to_string()))?;
    let path = args.out.join("bench.csv");
    let mut w = csv_writer(&path)?;
    let err = csv_err(&path);
    w.write_record(["kind", "size_param", "median_ms", "p10_ms", "p90_ms", "reps"]).map_err(&err)?;
    for r in &rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.size_param.to_string(),
            fmt_f64(r.median_ms),
            fmt_f64(r.p10_ms),
            fmt_f64(r.p90_ms),
            r.reps.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    if let Some(f) = fit_kind(&rows, BenchKind::ProformerIteration, |n| n) {
        println!("proformer_iteration: {:.4} ms + {:.5} ms/proposal, r2 {:.4}", f.intercept, f.slope, f.r2);
    }
    if let Some(f) = fit_kind(&rows, BenchKind::DenseGridSca, |s| s * s) {
        println!("dense_grid_sca: {:.4} ms + {:.6} ms/cell, r2 {:.4}", f.intercept, f.slope, f.r2);
    }
    Ok(())
}

pub(crate) fn gen(args: &GenArgs) -> Result<(), CliError> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<GenConfig>(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
        }
        None => GenConfig::default(),
    };
    spec.mode = args.mode;
    spec.validate().map_err(|e| CliError::Input(e.to_string()))?;
    ensure_dir(&args.out)?;
    for seed in args.seed..args.seed.saturating_add(args.count) {
        let scene = gen_synthetic(seed, &spec).map_err(|e| CliError::Input(format!("seed {seed}: {e}")))?;
        let path = args.out.join(format!("scene_{seed:06}.json"));
        save_scene(&scene, &path).map_err(|e| CliError::Input(e.to_string()))?;
    }
    println!("wrote {} scenes to {}", args.count, args.out.display());
    Ok(())
}
