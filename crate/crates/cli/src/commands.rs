use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use gqst::analysis::{
    self, BootstrapOptions, CurveOptions, CurvePoint, Levels, PseudoExperiment, SelectionResult,
};
use gqst::dataset::{DatasetFile, DatasetHeader, DatasetWriter};
use gqst::direct::{DirectEstimator, Weighting};
use gqst::gaussian::{db_to_r, diagonalize};
use gqst::homodyne::{
    derive_seed, generate_sequence, read_sequence_csv, DatasetGenerator, DatasetRanges,
    PhaseScheme, Range,
};
use gqst::nn::{
    load_model, save_model, ModelWeights, NetworkConfig, Schedule, TrainConfig, TrainingSource,
};
use gqst::{CovarianceEstimator, QuadratureSequence, StateParams};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::{ensure_finite, sibling, tagged, write_atomic, write_json};
use crate::settings::Resolver;
use crate::{
    BenchmarkArgs, BootstrapArgs, Common, CurvesArgs, EstimateArgs, EstimatorArgs, GenerateArgs,
    RangeArgs, RecordArgs, SelectArgs, TrainArgs,
};

/// Loads the config file and applies `--threads`.
fn start(command: &'static str, common: &Common) -> CliResult<Resolver> {
    let mut r = Resolver::new(command, common.config.as_deref())?;
    if let Some(t) = r.optional::<usize>("threads", common.threads)? {
        if t == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    Ok(r)
}

fn out_path(r: &mut Resolver, common: &Common) -> CliResult<PathBuf> {
    Ok(PathBuf::from(r.required::<String>(
        "out",
        common.out.as_ref().map(|p| p.display().to_string()),
    )?))
}

fn optional_out(r: &mut Resolver, common: &Common) -> CliResult<Option<PathBuf>> {
    r.path("out", common.out.clone())
}

fn ranges(r: &mut Resolver, a: &RangeArgs) -> CliResult<DatasetRanges> {
    let d = DatasetRanges::default();
    let ranges = DatasetRanges {
        r_db: Range::new(
            r.get("r-db-min", a.r_db_min, d.r_db.min)?,
            r.get("r-db-max", a.r_db_max, d.r_db.max)?,
        ),
        n: Range::new(
            r.get("n-min", a.n_min, d.n.min)?,
            r.get("n-max", a.n_max, d.n.max)?,
        ),
        phi: Range::new(
            r.get("phi-min", a.phi_min, d.phi.min)?,
            r.get("phi-max", a.phi_max, d.phi.max)?,
        ),
        epsilon: Range::new(
            r.get("eps-min", a.eps_min, d.epsilon.min)?,
            r.get("eps-max", a.eps_max, d.epsilon.max)?,
        ),
    };
    ranges.validate()?;
    Ok(ranges)
}

fn parse_list(key: &str, text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| CliError::usage(format!("--{key}: {v:?}: {e}")))
        })
        .collect()
}

fn estimator(r: &mut Resolver, a: &EstimatorArgs) -> CliResult<Box<dyn CovarianceEstimator>> {
    let method = r.get("method", a.method.clone(), "direct".to_string())?;
    let model = r.path("model", a.model.clone())?;
    match method.as_str() {
        "direct" => {
            if model.is_some() {
                return Err(CliError::usage("--model is only valid with --method nn"));
            }
            let d = DirectEstimator::default();
            let n_bins = r.get("bins", a.bins, d.n_bins)?;
            let weighting = match r
                .get(
                    "weighting",
                    a.weighting.clone(),
                    "inverse-variance".to_string(),
                )?
                .as_str()
            {
                "count" => Weighting::Count,
                "inverse-variance" => Weighting::InverseVariance,
                other => return Err(CliError::usage(format!("unknown weighting {other:?}"))),
            };
            Ok(Box::new(DirectEstimator { n_bins, weighting }))
        }
        "nn" => {
            if a.bins.is_some() || a.weighting.is_some() {
                return Err(CliError::usage(
                    "--bins and --weighting apply to --method direct only",
                ));
            }
            let path = model.ok_or_else(|| CliError::usage("--method nn requires --model"))?;
            Ok(Box::new(load_model(&path)?))
        }
        other => Err(CliError::usage(format!(
            "unknown method {other:?} (expected direct or nn)"
        ))),
    }
}

fn read_record(r: &mut Resolver, a: &RecordArgs) -> CliResult<Option<QuadratureSequence>> {
    let input = r.path("input", a.input.clone())?;
    let dataset = r.path("dataset", a.dataset.clone())?;
    match (input, dataset) {
        (Some(_), Some(_)) => Err(CliError::usage(
            "--input and --dataset are mutually exclusive",
        )),
        (Some(path), None) => {
            if a.index.is_some() {
                return Err(CliError::usage("--index requires --dataset"));
            }
            let f = std::fs::File::open(&path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(Some(read_sequence_csv(BufReader::new(f))?))
        }
        (None, Some(path)) => {
            let index = r.get("index", a.index, 0)?;
            let mut f = DatasetFile::open(&path)?;
            Ok(Some(f.read_state(index)?.sequence))
        }
        (None, None) => {
            if a.index.is_some() {
                return Err(CliError::usage("--index requires --dataset"));
            }
            Ok(None)
        }
    }
}

pub fn generate(a: GenerateArgs) -> CliResult<()> {
    let mut r = start("generate", &a.common)?;
    let out = out_path(&mut r, &a.common)?;
    let seed = r.seed(a.common.seed)?;
    let count = r.get("count", a.count, 1000)?;
    let points = r.get("points", a.points, 2048)?;
    let scheme = match r
        .get("scheme", a.scheme.clone(), "uniform".to_string())?
        .as_str()
    {
        "uniform" => PhaseScheme::UniformRandom,
        "sweep" => PhaseScheme::LinearSweep,
        other => return Err(CliError::usage(format!("unknown scheme {other:?}"))),
    };
    let ranges = ranges(&mut r, &a.ranges)?;
    r.finish()?;

    let gen = DatasetGenerator {
        scheme,
        ..DatasetGenerator::new(ranges, count, points, seed)?
    };
    let header = DatasetHeader::for_generator(&gen)?;
    let mut w = DatasetWriter::create(&out, header)?;
    let chunk = 1024u64;
    for start in (0..count).step_by(chunk as usize) {
        let states: Vec<_> = (start..(start + chunk).min(count))
            .into_par_iter()
            .map(|i| gen.state(i))
            .collect();
        for s in &states {
            w.write_state(s)?;
        }
    }
    w.finish()?;
    r.write_sidecar(&out)?;
    eprintln!(
        "wrote {count} states x {points} points to {} ({} bytes)",
        out.display(),
        header.file_size()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut r = start("train", &a.common)?;
    let out = out_path(&mut r, &a.common)?;
    let seed = r.seed(a.common.seed)?;
    let data = r.path("data", a.data.clone())?;
    let states = r.optional::<u64>("states", a.states)?;

    let mut source: Box<dyn TrainingSource> = match (data, states) {
        (Some(_), Some(_)) => {
            return Err(CliError::usage(
                "--data and --states are mutually exclusive",
            ))
        }
        (None, None) => return Err(CliError::usage("one of --data or --states is required")),
        (Some(path), None) => {
            if a.points.is_some() {
                return Err(CliError::usage("--points applies to --states only"));
            }
            Box::new(DatasetFile::open(&path)?)
        }
        (None, Some(count)) => {
            let points = r.get("points", a.points, 2048)?;
            let ranges = ranges(&mut r, &a.ranges)?;
            let gen = DatasetGenerator::new(ranges, count, points, derive_seed(seed, 0))?;
            Box::new(gen.generate_parallel())
        }
    };
    if source.is_empty() {
        return Err(CliError::Io("training source is empty".into()));
    }
    let input_length = source.get(0)?.sequence.len();

    let d = NetworkConfig::default();
    let default_blocks = d
        .blocks
        .iter()
        .map(|b| b.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let blocks = r.get("blocks", a.blocks.clone(), default_blocks)?;
    let network = NetworkConfig {
        input_length,
        stem_filters: r.get("stem-filters", a.stem_filters, d.stem_filters)?,
        kernel_size: r.get("kernel-size", a.kernel_size, d.kernel_size)?,
        stride: r.get("stride", a.stride, d.stride)?,
        blocks: blocks
            .split(',')
            .map(|b| {
                b.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::usage(format!("--blocks: {b:?}: {e}")))
            })
            .collect::<CliResult<_>>()?,
        ..d
    };
    let t = TrainConfig::default();
    let config = TrainConfig {
        epochs: r.get("epochs", a.epochs, t.epochs)?,
        batch_size: r.get("batch-size", a.batch_size, t.batch_size)?,
        learning_rate: r.get("lr", a.lr, t.learning_rate)?,
        schedule: match r
            .get("schedule", a.schedule.clone(), "cosine".to_string())?
            .as_str()
        {
            "cosine" => Schedule::Cosine,
            "constant" => Schedule::Constant,
            other => return Err(CliError::usage(format!("unknown schedule {other:?}"))),
        },
        warmup_epochs: r.get("warmup", a.warmup, t.warmup_epochs)?,
        beta1: r.get("beta1", a.beta1, t.beta1)?,
        beta2: r.get("beta2", a.beta2, t.beta2)?,
        seed: derive_seed(seed, 2),
        ..t
    };
    let loss_csv = r
        .path("loss-csv", a.loss_csv.clone())?
        .unwrap_or_else(|| sibling(&out, "loss.csv"));
    r.finish()?;

    let mut model = ModelWeights::init(network, derive_seed(seed, 1))?;
    let every = (config.epochs / 20).max(1);
    let epochs = config.epochs;
    let run = gqst::nn::train(&mut model, &mut *source, &config, |e, loss| {
        if e % every == 0 || e == epochs {
            eprintln!("epoch {e}/{epochs}: mean loss {loss:.6e}");
        }
    })?;
    ensure_finite("loss history", run.loss_history.iter().copied())?;
    write_atomic(&loss_csv, |w| Ok(run.write_loss_csv(w)?))?;
    save_model(&out, &model)?;
    r.write_sidecar(&out)?;
    eprintln!(
        "final loss {:.6e}; model {} ({} parameters), loss history {}",
        run.final_loss().unwrap_or(f64::NAN),
        out.display(),
        model.parameter_count(),
        loss_csv.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    method: String,
    points: usize,
    xx: f64,
    pp: f64,
    xp: f64,
    #[serde(rename = "SQ")]
    sq: f64,
    #[serde(rename = "ASQ")]
    asq: f64,
    theta0: f64,
    purity: f64,
}

pub fn estimate(a: EstimateArgs) -> CliResult<()> {
    let mut r = start("estimate", &a.common)?;
    let out = optional_out(&mut r, &a.common)?;
    if let Some(s) = a.common.seed {
        r.get("seed", Some(s), s)?;
    }
    let seq = read_record(&mut r, &a.record)?
        .ok_or_else(|| CliError::usage("one of --input or --dataset is required"))?;
    let est = estimator(&mut r, &a.estimator)?;
    r.finish()?;

    let sigma = est.estimate_covariance(&seq)?;
    let levels = Levels::of(&sigma);
    let report = EstimateReport {
        method: est.name().to_string(),
        points: seq.len(),
        xx: sigma.xx,
        pp: sigma.pp,
        xp: sigma.xp,
        sq: levels.sq,
        asq: levels.asq,
        theta0: diagonalize(&sigma).theta0,
        purity: levels.purity,
    };
    ensure_finite(
        "estimate",
        [
            report.xx,
            report.pp,
            report.xp,
            report.sq,
            report.asq,
            report.theta0,
            report.purity,
        ],
    )?;
    match out {
        Some(out) => {
            write_atomic(&out, |w| {
                writeln!(w, "method,points,xx,pp,xp,SQ,ASQ,theta0,purity")?;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    report.method,
                    report.points,
                    report.xx,
                    report.pp,
                    report.xp,
                    report.sq,
                    report.asq,
                    report.theta0,
                    report.purity
                )?;
                Ok(())
            })?;
            write_json(&sibling(&out, "json"), &report)?;
            r.write_sidecar(&out)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct LevelsRow {
    #[serde(rename = "SQ")]
    sq: f64,
    #[serde(rename = "ASQ")]
    asq: f64,
    purity: f64,
}

impl From<&Levels> for LevelsRow {
    fn from(l: &Levels) -> Self {
        Self {
            sq: l.sq,
            asq: l.asq,
            purity: l.purity,
        }
    }
}

#[derive(Serialize)]
struct BootstrapJson {
    replicate_count: usize,
    points_per_replicate: usize,
    mean: LevelsRow,
    std: LevelsRow,
    replicates: Vec<LevelsRow>,
}

pub fn bootstrap(a: BootstrapArgs) -> CliResult<()> {
    let mut r = start("bootstrap", &a.common)?;
    let out = out_path(&mut r, &a.common)?;
    let seed = r.seed(a.common.seed)?;
    let record = match read_record(&mut r, &a.record)? {
        Some(seq) => {
            let s = &a.state;
            if s.r_db.is_some()
                || s.n.is_some()
                || s.phi.is_some()
                || s.epsilon.is_some()
                || a.record_length.is_some()
            {
                return Err(CliError::usage(
                    "state flags only apply when no input record is given",
                ));
            }
            seq
        }
        None => {
            let p = StateParams::new(
                db_to_r(r.get("r-db", a.state.r_db, 10.0)?),
                r.get("n", a.state.n, 0.0)?,
                r.get("phi", a.state.phi, 0.0)?,
                r.get("epsilon", a.state.epsilon, 0.0)?,
            )?;
            let len = r.get("record-length", a.record_length, 3_000_000)?;
            generate_sequence(&p, len, PhaseScheme::UniformRandom, derive_seed(seed, 0))?
        }
    };
    let opts = BootstrapOptions {
        replicates: r.get("replicates", a.replicates, 1000)?,
        points: r.get("points", a.points, 2048)?,
        seed: derive_seed(seed, 1),
        with_replacement: r.switch("with-replacement", a.with_replacement)?,
    };
    let est = estimator(&mut r, &a.estimator)?;
    r.finish()?;

    let report = analysis::bootstrap(&record, &opts, &*est)?;
    ensure_finite(
        "bootstrap replicates",
        report
            .replicates
            .iter()
            .flat_map(|l| [l.sq, l.asq, l.purity]),
    )?;
    write_atomic(&out, |w| {
        writeln!(w, "replicate,SQ,ASQ,purity")?;
        for (i, l) in report.replicates.iter().enumerate() {
            writeln!(w, "{i},{},{},{}", l.sq, l.asq, l.purity)?;
        }
        Ok(())
    })?;
    let json = BootstrapJson {
        replicate_count: report.replicate_count,
        points_per_replicate: report.points_per_replicate,
        mean: (&report.mean).into(),
        std: (&report.std).into(),
        replicates: report.replicates.iter().map(Into::into).collect(),
    };
    write_json(&sibling(&out, "json"), &json)?;
    r.write_sidecar(&out)?;
    println!(
        "SQ {:.3} +- {:.3} dB, ASQ {:.3} +- {:.3} dB, purity {:.4} +- {:.4} ({} replicates x {} points)",
        report.mean.sq,
        report.std.sq,
        report.mean.asq,
        report.std.asq,
        report.mean.purity,
        report.std.purity,
        report.replicate_count,
        report.points_per_replicate
    );
    Ok(())
}

pub fn curves(a: CurvesArgs) -> CliResult<()> {
    let mut r = start("curves", &a.common)?;
    let out = out_path(&mut r, &a.common)?;
    let seed = r.seed(a.common.seed)?;
    let kind = r.get("kind", a.kind.clone(), "degradation".to_string())?;
    if kind != "degradation" && kind != "purity" {
        return Err(CliError::usage(format!("unknown curve kind {kind:?}")));
    }
    let levels = parse_list(
        "r-db-list",
        &r.get(
            "r-db-list",
            a.r_db_list.clone(),
            "1,3,5,7,9,11,13,15".to_string(),
        )?,
    )?;
    let n = r.get("n", a.n, 0.0)?;
    let phi = r.get("phi", a.phi, 0.0)?;
    let epsilon = r.get("epsilon", a.epsilon, 0.0)?;
    let states = levels
        .iter()
        .map(|&db| {
            if db < 0.0 {
                return Err(CliError::usage("squeezing levels must be >= 0 dB"));
            }
            Ok(StateParams::new(db_to_r(db), n, phi, epsilon)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let opts = CurveOptions {
        samples_per_state: r.get("samples-per-state", a.samples_per_state, 65_536)?,
        replicates: r.get("replicates", a.replicates, 20)?,
        points_per_replicate: r.get("points", a.points, 2048)?,
        seed,
    };
    let est = estimator(&mut r, &a.estimator)?;
    r.finish()?;

    let points: Vec<CurvePoint> = if kind == "purity" {
        analysis::purity_curve(&*est, &states, &opts)?
    } else {
        analysis::degradation_curve(&*est, &states, &opts)?
    };
    ensure_finite(
        "curve",
        points
            .iter()
            .flat_map(|p| [p.asq, p.sq, p.sq_std, p.asq_std, p.purity, p.purity_std]),
    )?;
    write_atomic(&out, |w| {
        if kind == "purity" {
            analysis::write_purity_csv(&points, w)?;
        } else {
            analysis::write_degradation_csv(&points, w)?;
        }
        Ok(())
    })?;
    write_json(&sibling(&out, "json"), &points)?;
    r.write_sidecar(&out)?;
    eprintln!("wrote {} {kind} points to {}", points.len(), out.display());
    Ok(())
}

fn read_mse_table(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let f =
        std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (mut grid, mut mse) = (Vec::new(), Vec::new());
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("epsilon")) {
            continue;
        }
        let bad = || {
            CliError::Io(format!(
                "{}: line {}: expected `epsilon,mse`",
                path.display(),
                i + 1
            ))
        };
        let (e, m) = line.split_once(',').ok_or_else(bad)?;
        grid.push(e.trim().parse::<f64>().map_err(|_| bad())?);
        mse.push(m.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok((grid, mse))
}

fn print_selection(s: &SelectionResult) {
    println!("epsilon,mse");
    for (e, m) in s.epsilon_grid.iter().zip(&s.mse_values) {
        println!("{e},{m}");
    }
    println!("best epsilon: {}", s.best_epsilon);
}

pub fn select(a: SelectArgs) -> CliResult<()> {
    let mut r = start("select", &a.common)?;
    let out = optional_out(&mut r, &a.common)?;
    let input = r.path("input", a.input.clone())?;

    let (result, trials) = match input {
        Some(path) => {
            if a.common.seed.is_some()
                || a.trials.is_some()
                || a.r_list.is_some()
                || a.estimator.method.is_some()
            {
                return Err(CliError::usage(
                    "pseudo-experiment flags do not apply with --input",
                ));
            }
            r.finish()?;
            let (grid, mse) = read_mse_table(&path)?;
            (analysis::select_from_mse(&grid, &mse)?, Vec::new())
        }
        None => {
            let seed = r.seed(a.common.seed)?;
            let grid = parse_list(
                "grid",
                &r.get(
                    "grid",
                    a.grid.clone(),
                    "0,0.01,0.02,0.03,0.04,0.05".to_string(),
                )?,
            )?;
            let experiment = PseudoExperiment {
                r_values: parse_list(
                    "r-list",
                    &r.get(
                        "r-list",
                        a.r_list.clone(),
                        "0.2,0.4,0.6,0.8,1,1.2,1.4,1.6".to_string(),
                    )?,
                )?,
                n: r.get("n", a.n, 0.1)?,
                epsilon: r.get("true-epsilon", a.true_epsilon, 0.01)?,
                points_per_state: r.get("record-points", a.record_points, 1 << 20)?,
            };
            let trials = r.get("trials", a.trials, 1)?;
            if trials == 0 {
                return Err(CliError::usage("--trials must be >= 1"));
            }
            let est = estimator(&mut r, &a.estimator)?;
            r.finish()?;
            let results = (0..trials)
                .map(|t| {
                    analysis::model_selection_trial(&experiment, &grid, &*est, derive_seed(seed, t))
                })
                .collect::<gqst::Result<Vec<_>>>()?;
            let bests: Vec<f64> = results.iter().map(|s| s.best_epsilon).collect();
            (results.into_iter().next().expect("trials >= 1"), bests)
        }
    };
    ensure_finite("MSE table", result.mse_values.iter().copied())?;
    print_selection(&result);
    if trials.len() > 1 {
        let target = a.true_epsilon.unwrap_or(0.01);
        let hits = trials.iter().filter(|&&b| b == target).count();
        println!("trials selecting {target}: {hits}/{}", trials.len());
    }
    if let Some(out) = out {
        write_atomic(&out, |w| Ok(result.write_csv(w)?))?;
        write_json(&sibling(&out, "json"), &result)?;
        if trials.len() > 1 {
            write_atomic(&tagged(&out, "trials"), |w| {
                writeln!(w, "trial,best_epsilon")?;
                for (t, b) in trials.iter().enumerate() {
                    writeln!(w, "{t},{b}")?;
                }
                Ok(())
            })?;
        }
        r.write_sidecar(&out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkJson<'a> {
    #[serde(rename = "mean_F")]
    mean_f: f64,
    #[serde(rename = "var_F")]
    var_f: f64,
    #[serde(rename = "SQ_MAE")]
    sq_mae: f64,
    count: usize,
    histogram: &'a [analysis::HistogramBin],
}

pub fn benchmark(a: BenchmarkArgs) -> CliResult<()> {
    let mut r = start("benchmark", &a.common)?;
    let out = out_path(&mut r, &a.common)?;
    let seed = r.seed(a.common.seed)?;
    let count = r.get("count", a.count, 6000)?;
    let points = r.get("points", a.points, 2048)?;
    let ranges = ranges(&mut r, &a.ranges)?;
    let est = estimator(&mut r, &a.estimator)?;
    r.finish()?;

    let report = analysis::fidelity_benchmark(&*est, count, ranges, points, seed)?;
    ensure_finite(
        "benchmark rows",
        report
            .rows
            .iter()
            .flat_map(|row| [row.fidelity, row.sq, row.asq]),
    )?;
    write_atomic(&out, |w| Ok(report.write_summary_csv(w)?))?;
    write_atomic(&tagged(&out, "rows"), |w| Ok(report.write_rows_csv(w)?))?;
    write_json(
        &sibling(&out, "json"),
        &BenchmarkJson {
            mean_f: report.mean_fidelity,
            var_f: report.var_fidelity,
            sq_mae: report.sq_mae(),
            count: report.rows.len(),
            histogram: &report.histogram,
        },
    )?;
    r.write_sidecar(&out)?;
    println!(
        "mean F {:.5}, var F {:.3e}, SQ MAE {:.3} dB over {} states",
        report.mean_fidelity,
        report.var_fidelity,
        report.sq_mae(),
        report.rows.len()
    );
    Ok(())
}
