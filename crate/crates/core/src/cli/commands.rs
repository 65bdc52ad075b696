use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::files::{read_mask_csv, render_heatmap, write_mask_csv, write_pgm};
use super::{AblateFlag, AttributeArgs, EstimatorArgs, EvaluateArgs, ExplainerArg, FitArgs, HeatmapArgs, SweepArgs};
use crate::datasets::{DataKind, Dataset};
use crate::error::{FansError, Result, Side};
use crate::metrics::{
    fidelity_minus, fidelity_plus, infidelity, irof, max_sensitivity, recall_at_n, sparseness_with, MetricReport,
    Segmentation, SortOrder,
};
use crate::model::{accuracy, fit_mlp, load_model, saliency, save_model, ArchSpec, Mlp, ScalarReadout, TrainConfig};
use crate::optimize::{optimize_mask, OptimizeConfig, TrainTrace};
use crate::perturb::{Baseline, DimSubset};
use crate::pns::{
    attribution_for_subset, sweep, Ablation, AttributionConfig, AttributionResult, Heuristics, Problem, SweepRow,
};
use crate::sir::SampleSet;

struct Setup {
    ds: Dataset,
    model: Mlp,
    target: Vec<f64>,
    samples: SampleSet,
    baseline: Baseline,
    readout: ScalarReadout,
}

impl Setup {
    fn load(est: &EstimatorArgs) -> Result<Self> {
        let model = load_model(&est.model)?;
        let ds = est.data.load()?;
        if model.input_dim() != ds.dim() {
            return Err(FansError::config(format!(
                "--model expects {} features but --data has {}",
                model.input_dim(),
                ds.dim()
            )));
        }
        let target = est.target.resolve(&ds)?;
        let n = est.samples.unwrap_or(ds.len()).min(ds.len());
        if n == 0 {
            return Err(FansError::config("--samples must be at least 1"));
        }
        let samples = SampleSet::new(ds.inputs[..n].to_vec())?;
        let baseline = est.baseline.build(ds.kind, ds.dim(), est.seed)?;
        let readout = ScalarReadout::argmax(&model, &target)?;
        Ok(Self {
            ds,
            model,
            target,
            samples,
            baseline,
            readout,
        })
    }

    fn problem(&self) -> Result<Problem<'_>> {
        Problem::new(&self.model, &self.target, &self.samples, &self.baseline, self.readout)
    }
}

use crate::model::Predictor;

/// The `(b, c)` actually used and where each came from.
#[derive(Debug, Clone, Serialize)]
pub struct HeuristicsUsed {
    pub b: f64,
    pub c: f64,
    pub b_source: &'static str,
    pub c_source: &'static str,
    pub sigma: f64,
    pub n_noise: usize,
}

fn heuristics(est: &EstimatorArgs, problem: &Problem<'_>) -> Result<HeuristicsUsed> {
    let source = |o: Option<f64>| if o.is_some() { "override" } else { "heuristic" };
    let (b, c) = match (est.b, est.c) {
        (Some(b), Some(c)) => (b, c),
        (b, c) => {
            let h = Heuristics::estimate(problem, est.sigma, est.n_noise, est.seed)?;
            (b.unwrap_or(h.b), c.unwrap_or(h.c))
        }
    };
    Ok(HeuristicsUsed {
        b,
        c,
        b_source: source(est.b),
        c_source: source(est.c),
        sigma: est.sigma,
        n_noise: est.n_noise,
    })
}

fn ablation(est: &EstimatorArgs) -> Ablation {
    Ablation {
        disable_sufficiency: est.ablate.contains(&AblateFlag::Sf),
        disable_necessity: est.ablate.contains(&AblateFlag::Nc),
        disable_sir: est.ablate.contains(&AblateFlag::Sir),
    }
}

fn attribution_config(est: &EstimatorArgs, h: &HeuristicsUsed) -> AttributionConfig {
    AttributionConfig {
        phi: est.phi,
        n_inner: est.n_inner,
        t_sf: est.t,
        t_nc: est.t,
        resample_size: est.resample,
        ablation: ablation(est),
        seed: est.seed,
        ..AttributionConfig::new(h.b, h.c)
    }
}

fn optimize_config(est: &EstimatorArgs, kind: DataKind, epochs: Option<usize>, lr: Option<f64>) -> OptimizeConfig {
    let base = OptimizeConfig::for_kind(kind);
    OptimizeConfig {
        learning_rate: lr.unwrap_or(base.learning_rate),
        epochs: epochs.unwrap_or(base.epochs),
        t: est.t,
        resample_size: est.resample,
        n_inner: est.n_inner,
        phi: est.phi,
        ablation: ablation(est),
        seed: est.seed,
        ..base
    }
}

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| FansError::io(out, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FansError::numeric(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FansError::io(path, e))
}

fn echo(args: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

pub fn cmd_fit(args: &FitArgs) -> Result<PathBuf> {
    let ds = args.data.load()?;
    let arch: ArchSpec = args.arch.parse()?;
    let hyper = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        batch_size: args.batch,
    };
    let model = fit_mlp(&ds, &arch, &hyper, args.seed)?;
    create_dir(&args.out)?;
    let path = args.out.join("model.json");
    save_model(&model, &path)?;
    println!(
        "wrote {} (training accuracy {:.4})",
        path.display(),
        accuracy(&model, &ds)?
    );
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

const TOOL: Tool = Tool {
    name: env!("CARGO_PKG_NAME"),
    version: env!("CARGO_PKG_VERSION"),
};

/// Everything `attribute` computed, plus the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: Tool,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub heuristics: HeuristicsUsed,
    pub readout_class: usize,
    pub target: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribution: Option<AttributionResult>,
    pub mask: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TrainTrace>,
}

pub fn cmd_attribute(args: &AttributeArgs) -> Result<Report> {
    let est = &args.est;
    let setup = Setup::load(est)?;
    let problem = setup.problem()?;
    let d = problem.dim();
    if let Some(shape) = args.heatmap {
        if shape.h * shape.w != d {
            return Err(FansError::config(format!(
                "--heatmap {shape} does not match {d} features"
            )));
        }
    }
    let heur = heuristics(est, &problem)?;
    create_dir(&args.out)?;

    let mut report = Report {
        tool: TOOL,
        command: "attribute",
        config: echo(args),
        heuristics: heur.clone(),
        readout_class: setup.readout.class,
        target: setup.target.clone(),
        pns: None,
        attribution: None,
        mask: Vec::new(),
        trace: None,
    };
    let mut failure = None;
    if let Some(subset) = &args.subset {
        let s = DimSubset::from_one_based(subset, d)?;
        let result = attribution_for_subset(&problem, &s, &attribution_config(est, &heur))?;
        if result.empty_support.len() == 2 {
            return Err(FansError::EmptySupport { side: Side::Necessity });
        }
        println!(
            "pns {} (pn {}, ps {}, p_ab {}, p_nanb {})",
            result.pns, result.pn, result.ps, result.p_ab, result.p_nanb
        );
        report.pns = Some(result.pns);
        report.mask = s.to_mask().into_inner();
        report.attribution = Some(result);
    } else {
        let mut cfg = optimize_config(est, setup.ds.kind, args.epochs, args.lr);
        cfg.relaxation = args.relaxation.into();
        let trace = optimize_mask(&problem, heur.b, heur.c, &cfg)?;
        trace.write_csv(args.out.join("trace.csv"))?;
        println!(
            "objective {} -> {} over {} epochs",
            trace.initial_objective,
            trace.final_objective,
            trace.objectives.len()
        );
        failure = trace.divergence();
        report.mask = trace.mask.values().to_vec();
        report.trace = Some(trace);
    }
    write_mask_csv(&args.out.join("mask.csv"), &report.mask)?;
    if let Some(shape) = args.heatmap {
        write_pgm(
            &args.out.join("heatmap.pgm"),
            &render_heatmap(&report.mask, shape.h, shape.w)?,
            shape.h,
            shape.w,
        )?;
    }
    write_json(&args.out.join("report.json"), &report)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn segmentation(args: &EvaluateArgs, kind: DataKind, d: usize) -> Result<Segmentation> {
    let shape = match (args.shape, kind) {
        (Some(s), _) => Some((s.h, s.w)),
        (None, DataKind::Image) => {
            let side = (d as f64).sqrt().round() as usize;
            (side * side == d).then_some((side, side))
        }
        (None, DataKind::Tabular) => None,
    };
    match shape {
        Some((h, w)) if h * w == d => Segmentation::tiles(h, w, args.tile),
        Some((h, w)) => Err(FansError::config(format!(
            "--shape {h}x{w} does not match {d} features"
        ))),
        None => Ok(Segmentation::features(d)),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricReport> {
    let est = &args.est;
    let setup = Setup::load(est)?;
    let a = read_mask_csv(&args.attribution)?;
    let d = setup.target.len();
    if a.len() != d {
        return Err(FansError::config(format!(
            "--attribution has {} scores but the data has {d} features",
            a.len()
        )));
    }
    let model: &dyn Predictor = &setup.model;
    let x = &setup.target;
    let mut report = MetricReport::default();
    report.note("tool_version", TOOL.version);
    report.note("args", echo(args));
    report.note("readout_class", setup.readout.class);
    for name in &args.metrics {
        let value = match name.as_str() {
            "inf" => infidelity(&a, x, model, setup.readout, args.n_inf, est.seed)?,
            "irof" => {
                let seg = segmentation(args, setup.ds.kind, d)?;
                report.note("irof_segments", seg.len());
                irof(
                    std::slice::from_ref(&a),
                    std::slice::from_ref(x),
                    model,
                    Some(setup.readout),
                    &seg,
                    &setup.baseline,
                )?
            }
            "fid+" => fidelity_plus(std::slice::from_ref(&a), std::slice::from_ref(x), model, args.keep)?,
            "fid-" => fidelity_minus(std::slice::from_ref(&a), std::slice::from_ref(x), model, args.keep)?,
            "spa" => {
                let order = if args.paper_literal_sort {
                    SortOrder::Descending
                } else {
                    SortOrder::Ascending
                };
                sparseness_with(&a, order)?
            }
            "sens" => sensitivity(args, &setup)?,
            other => match other.strip_prefix("recall@").map(str::parse::<usize>) {
                Some(Ok(n)) => {
                    let truth = setup.ds.ground_truth.as_ref().ok_or_else(|| {
                        FansError::config("recall needs --data from a generator with known ground truth")
                    })?;
                    recall_at_n(&a, truth, n)?
                }
                _ => return Err(FansError::config(format!("--metrics: unknown metric `{other}`"))),
            },
        };
        report.insert(name.clone(), value);
    }
    create_dir(&args.out)?;
    write_json(&args.out.join("metrics.json"), &report)?;
    for (k, v) in &report.metrics {
        println!("{k} {v}");
    }
    Ok(report)
}

fn sensitivity(args: &EvaluateArgs, setup: &Setup) -> Result<f64> {
    let est = &args.est;
    let x = &setup.target;
    match args.explainer {
        ExplainerArg::Saliency => max_sensitivity(
            |z| saliency(&setup.model, z, setup.readout),
            x,
            args.radius,
            args.n_sens,
            est.seed,
        ),
        ExplainerArg::Fans => {
            let problem = setup.problem()?;
            let heur = heuristics(est, &problem)?;
            let cfg = optimize_config(est, setup.ds.kind, args.epochs, args.lr);
            max_sensitivity(
                |z| {
                    let p = Problem::new(&setup.model, z, &setup.samples, &setup.baseline, setup.readout)?;
                    Ok(optimize_mask(&p, heur.b, heur.c, &cfg)?.mask.into_inner())
                },
                x,
                args.radius,
                args.n_sens,
                est.seed,
            )
        }
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let est = &args.est;
    let setup = Setup::load(est)?;
    let problem = setup.problem()?;
    let s = DimSubset::from_one_based(&args.subset, problem.dim())?;
    let heur = heuristics(est, &problem)?;
    let rows = sweep(
        &problem,
        &s,
        &args.b_grid,
        &args.c_grid,
        (heur.b, heur.c),
        &attribution_config(est, &heur),
    )?;
    create_dir(&args.out)?;
    let path = args.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| FansError::config(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| FansError::config(format!("{}: {e}", path.display()));
    w.write_record(["b", "c", "pns", "heuristic"]).map_err(io)?;
    for r in &rows {
        w.write_record([
            r.b.to_string(),
            r.c.to_string(),
            r.pns.to_string(),
            r.heuristic.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| FansError::io(&path, e))?;
    let best = rows.iter().map(|r| r.pns).fold(0.0, f64::max);
    println!("{} grid points, max pns {best}", rows.len());
    Ok(rows)
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> Result<()> {
    let mask = read_mask_csv(&args.mask)?;
    let pixels = render_heatmap(&mask, args.shape.h, args.shape.w)?;
    write_pgm(&args.out, &pixels, args.shape.h, args.shape.w)
}
