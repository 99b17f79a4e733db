use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::result::Result;

use lovasz_core::experiments::{DataSource, ModelSelection, TestLoss};
use lovasz_core::model::GapRecord;
use lovasz_core::surrogates::EXACT_LIMIT;
use lovasz_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::*;
use crate::CliError;

/// Rescaling extension checks enumerate `2^p` vertices times `2^p` labelings.
const RESCALING_CHECK_LIMIT: usize = 12;
/// Label-dependent losses are checked on every labeling up to this size.
const ALL_LABELINGS_LIMIT: usize = 6;
const SAMPLED_LABELINGS: usize = 16;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Vec<Bag>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn finish(mut w: BufWriter<File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

enum Status {
    Pass,
    Fail,
    Info,
    Skip,
}

struct Report {
    rows: Vec<(String, Status, String)>,
}

impl Report {
    fn push(&mut self, property: &str, status: Status, detail: impl Into<String>) {
        self.rows.push((property.to_string(), status, detail.into()));
    }

    fn failed(&self) -> bool {
        self.rows.iter().any(|(_, s, _)| matches!(s, Status::Fail))
    }

    fn print(&self) {
        println!("{:<22} {:<6} detail", "property", "status");
        for (property, status, detail) in &self.rows {
            let s = match status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Info => "INFO",
                Status::Skip => "SKIP",
            };
            println!("{}", format!("{property:<22} {s:<6} {detail}").trim_end());
        }
    }
}

fn labelings(spec: &LossSpec, p: usize, seed: u64) -> Vec<LabelVector> {
    let full = if p == 0 { 0 } else { u64::MAX >> (64 - p) };
    let from_bits = |bits: u64| LabelVector::from_positive_mask(SubsetMask::new(bits, p).expect("bits within p"));
    if !spec.depends_on_labels() {
        return vec![LabelVector::all_positive(p)];
    }
    if p <= ALL_LABELINGS_LIMIT {
        return (1..=full).map(from_bits).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![LabelVector::all_positive(p)];
    while out.len() < SAMPLED_LABELINGS {
        let bits = rng.random::<u64>() & full;
        if bits != 0 {
            out.push(from_bits(bits));
        }
    }
    out
}

fn describe(y: &LabelVector) -> String {
    format!("P_y={}", y.positives())
}

/// Runs `check` for every labeling and reports the first failure.
fn across<W>(
    ys: &[(LabelVector, SetFunction)],
    mut f: impl FnMut(&LabelVector, &SetFunction) -> lovasz_core::Result<Verdict<W>>,
    show: impl Fn(&W) -> String,
) -> Result<(Status, String), CliError> {
    for (y, l) in ys {
        if let Verdict::Fails(w) = f(y, l)? {
            let at = if ys.len() > 1 { format!("{}: ", describe(y)) } else { String::new() };
            return Ok((Status::Fail, format!("{at}{}", show(&w))));
        }
    }
    let detail = if ys.len() > 1 { format!("{} labelings", ys.len()) } else { String::new() };
    Ok((Status::Pass, detail))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
    format!("({})", parts.join(","))
}

fn fmt_mismatch(m: &[surrogates::VertexMismatch]) -> String {
    let first = &m[0];
    format!(
        "vertex {}: surrogate {:.9} vs loss {:.9} ({} vertices)",
        first.vertex,
        first.surrogate,
        first.loss,
        m.len()
    )
}

pub fn check(args: &CheckArgs) -> Result<bool, CliError> {
    let spec = args.loss.spec(LossName::Hamming)?;
    let p = base_size(&spec, args.p, 4)?;
    if p > lovasz_core::setfn::BRUTE_FORCE_LIMIT {
        return Err(CliError::Usage(format!("check needs p <= {}, got {p}", lovasz_core::setfn::BRUTE_FORCE_LIMIT)));
    }
    let ys: Vec<(LabelVector, SetFunction)> = labelings(&spec, p, args.seed)
        .into_iter()
        .map(|y| build_loss(&spec, &y).map(|l| (y, l)))
        .collect::<lovasz_core::Result<_>>()?;
    let mut report = Report { rows: Vec::new() };
    println!("loss {} p={p}", spec.name());

    let normalized = ys.iter().all(|(_, l)| l.is_normalized());
    if normalized {
        report.push("normalized", Status::Pass, "");
    } else {
        report.push("normalized", Status::Fail, format!("l(empty) = {:.9}", ys[0].1.value_of_empty()));
    }

    let (status, detail) = across(&ys, |_, l| is_submodular(l), |(a, b)| {
        let l = &ys[0].1;
        format!(
            "A={a}, B={b}: l(A)+l(B)={:.9} < l(A|B)+l(A&B)={:.9}",
            l.value(a.bits()) + l.value(b.bits()),
            l.value(a.bits() | b.bits()) + l.value(a.bits() & b.bits())
        )
    })?;
    let submodular = matches!(status, Status::Pass);
    report.push("submodular", status, detail);

    let modular = ys.iter().map(|(_, l)| is_modular(l)).collect::<lovasz_core::Result<Vec<_>>>()?;
    report.push("modular", Status::Info, if modular.iter().all(|&m| m) { "yes" } else { "no" });

    let declared = ys[0].1.declared_monotonicity() == Monotonicity::Increasing;
    let (status, detail) = across(&ys, |_, l| is_increasing(l), |(a, x)| {
        format!("A={a}, x={}: l(A + x) < l(A)", x + 1)
    })?;
    let increasing = matches!(status, Status::Pass);
    match (declared, increasing) {
        (true, _) => report.push("increasing", status, detail),
        (false, true) => report.push("increasing", Status::Info, "yes"),
        (false, false) => report.push("increasing", Status::Info, format!("no, {detail}")),
    }

    if normalized && submodular {
        let (s, d) = across(&ys, |y, l| is_extension(&SurrogateKind::LovaszHinge, l, y), |m| fmt_mismatch(m))?;
        report.push("lovasz extension", s, d);
        let (s, d) = across(
            &ys,
            |y, l| convexity_probe(&SurrogateKind::LovaszHinge, l, y, args.trials, args.seed),
            |v| format!("a={} b={} lambda={:.9}: {:.9} > {:.9}", fmt_vec(&v.a), fmt_vec(&v.b), v.lambda, v.at_mix, v.chord),
        )?;
        report.push("lovasz convexity", s, d);
    } else {
        report.push("lovasz extension", Status::Skip, "needs a normalized submodular loss");
        report.push("lovasz convexity", Status::Skip, "needs a normalized submodular loss");
    }

    if !(normalized && increasing) {
        for name in ["slack extension", "margin extension", "dominance"] {
            report.push(name, Status::Skip, "needs a normalized increasing loss");
        }
    } else if p > RESCALING_CHECK_LIMIT {
        for name in ["slack extension", "margin extension", "dominance"] {
            report.push(name, Status::Skip, format!("exact inference capped at p = {RESCALING_CHECK_LIMIT} here"));
        }
    } else {
        let (s, d) = across(&ys, |y, l| is_extension(&SurrogateKind::slack(), l, y), |m| fmt_mismatch(m))?;
        report.push("slack extension", s, d);
        let (s, d) = across(
            &ys,
            |y, l| is_extension(&SurrogateKind::margin(auto_gamma(l)?), l, y),
            |m| fmt_mismatch(m),
        )?;
        report.push("margin extension", s, d);
        if submodular {
            let (s, d) = across(&ys, |y, l| dominance_check(l, y, args.trials, args.seed), |v| {
                format!("s={}: lovasz {:.9} < {} {:.9}", fmt_vec(&v.margins), v.lovasz, v.rival, v.other)
            })?;
            report.push("dominance", s, d);
        } else {
            report.push("dominance", Status::Skip, "needs a submodular loss");
        }
    }

    report.print();
    Ok(!report.failed())
}

/// Largest margin-rescaling scale that keeps the surrogate an extension.
fn auto_gamma(l: &SetFunction) -> lovasz_core::Result<f64> {
    let g = margin_extension_gamma(l)?;
    Ok(if g.is_finite() { g } else { 1.0 })
}

fn resolve_gamma(gamma: Gamma, l: &SetFunction) -> Result<f64, CliError> {
    Ok(match gamma {
        Gamma::Auto => auto_gamma(l)?,
        Gamma::Fixed(v) => v,
    })
}

pub fn surface(args: &SurfaceArgs) -> Result<(), CliError> {
    let spec = match args.surrogate {
        SurrogateName::Zeroone => LossSpec::Hamming,
        _ => args.loss.spec(LossName::Hamming)?,
    };
    let p = base_size(&spec, args.p, 2)?;
    if p != 2 {
        return Err(CliError::Usage(format!("surface needs p = 2, got {p}")));
    }
    let l = build_loss(&spec, &LabelVector::all_positive(2))?;
    let kind = match args.surrogate {
        SurrogateName::Lovasz | SurrogateName::Zeroone => SurrogateKind::LovaszHinge,
        SurrogateName::Margin => {
            SurrogateKind::MarginRescale { gamma: resolve_gamma(args.gamma, &l)?, inference: args.inference.into() }
        }
        SurrogateName::Slack => SurrogateKind::SlackRescale { inference: args.inference.into() },
    };
    let grid = surface_grid(&kind, &l, args.min, args.max, args.res)?;
    let mut out = create(&args.out)?;
    write_surface_csv(&grid, &mut out)?;
    finish(out)?;
    println!("wrote {} rows to {}", grid.len(), args.out.display());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec { n_bags: args.n, p: args.p, seed: args.seed, bias: !args.no_bias, ..SyntheticSpec::default() };
    let bags = gen_early_detection(&spec)?;
    let mut out = create(&args.out)?;
    write_dataset(&bags, &mut out)?;
    finish(out)?;
    println!("wrote {} bags (p={}, d={}) to {}", bags.len(), spec.p, spec.feature_dim(), args.out.display());
    Ok(())
}

fn train_config(
    surrogate: SurrogateName,
    loss: &LossSpec,
    t: &TrainingArgs,
) -> TrainConfig {
    let (surrogate, loss) = match surrogate {
        SurrogateName::Lovasz => (Surrogate::LovaszHinge, loss.clone()),
        SurrogateName::Zeroone => (Surrogate::LovaszHinge, LossSpec::Hamming),
        SurrogateName::Margin => (Surrogate::MarginRescale, loss.clone()),
        SurrogateName::Slack => (Surrogate::SlackRescale, loss.clone()),
    };
    TrainConfig {
        c: t.c,
        epsilon: t.epsilon,
        max_iterations: t.max_iterations,
        surrogate,
        inference: t.inference.into(),
        gamma: t.gamma,
        loss,
        seed: t.seed,
        ..TrainConfig::default()
    }
}

fn surrogate_label(s: SurrogateName) -> &'static str {
    match s {
        SurrogateName::Lovasz => "lovasz",
        SurrogateName::Margin => "margin",
        SurrogateName::Slack => "slack",
        SurrogateName::Zeroone => "zeroone",
    }
}

fn trace_rows(name: &str, trace: &[GapRecord]) -> Vec<TraceRow> {
    trace
        .iter()
        .map(|r| TraceRow { surrogate: name.to_string(), iteration: r.iteration, primal: r.primal, dual: r.dual, gap: r.gap })
        .collect()
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let loss = args.loss.spec(LossName::Early)?;
    let config = train_config(args.surrogate, &loss, &args.training);
    let (model, state) = train_cutting_plane(&data, &config)?;
    let mut out = create(&args.out)?;
    out.write_all(model.to_text().as_bytes()).map_err(|e| CliError::Data(e.to_string()))?;
    finish(out)?;
    let gap_path = args.gap_out.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".gap.csv");
        PathBuf::from(s)
    });
    let mut gap = create(&gap_path)?;
    write_traces_csv(&trace_rows(surrogate_label(args.surrogate), &state.gap_trace), &mut gap)?;
    finish(gap)?;
    let last = state.gap_trace.last();
    println!("iterations {}", state.gap_trace.len());
    println!("converged {}", state.converged);
    println!("primal {:.9}", last.map_or(f64::NAN, |r| r.primal));
    println!("gap {:.9}", last.map_or(f64::NAN, |r| r.gap));
    println!("train_risk {:.9}", empirical_risk(&model, &data, &config.loss)?);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data)?;
    let text = std::fs::read_to_string(&args.model).map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let model = LinearModel::from_text(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.model.display())))?;
    let loss = args.loss.spec(LossName::Hamming)?;
    println!("{} {:.9}", loss.name(), empirical_risk(&model, &data, &loss)?);
    if loss != LossSpec::Hamming {
        println!("hamming {:.9}", empirical_risk(&model, &data, &LossSpec::Hamming)?);
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let loss = args.loss.spec(LossName::Early)?;
    let source = match (&args.train_data, &args.test_data) {
        (Some(train), Some(test)) => DataSource::Fixed { train: load_dataset(train)?, test: load_dataset(test)? },
        _ => DataSource::Synthetic {
            train: SyntheticSpec { n_bags: args.n_train, p: args.p, ..SyntheticSpec::default() },
            n_test: args.n_test,
        },
    };
    let rows: Vec<TrainSpec> = [
        ("L", SurrogateName::Lovasz),
        ("0-1", SurrogateName::Zeroone),
        ("S", SurrogateName::Slack),
        ("M", SurrogateName::Margin),
    ]
    .into_iter()
    .map(|(name, s)| TrainSpec { name: name.into(), config: train_config(s, &loss, &args.training) })
    .collect();
    let mut columns = vec![TestLoss { name: loss.name().into(), loss: loss.clone() }];
    if loss != LossSpec::Hamming {
        columns.push(TestLoss { name: "hamming".into(), loss: LossSpec::Hamming });
    }
    let selection = args
        .c_grid
        .as_ref()
        .map(|grid| ModelSelection { c_grid: grid.clone(), validation_fraction: args.validation_fraction });
    let table = run_cross_comparison(&source, &rows, &columns, args.repeats, args.training.seed, selection.as_ref())?;
    let mut out = create(&args.out)?;
    table.write_csv(&mut out)?;
    finish(out)?;
    for (r, name) in table.rows.iter().enumerate() {
        let cells: Vec<String> = table.cells[r]
            .iter()
            .zip(&table.columns)
            .map(|(c, col)| format!("{col} {:.9} +- {:.9}", c.mean, c.standard_error))
            .collect();
        println!("{name:<4} {}", cells.join("  "));
    }
    Ok(())
}

pub fn gap(args: &GapArgs) -> Result<(), CliError> {
    let loss = args.loss.spec(LossName::Early)?;
    let data = match &args.data {
        Some(path) => load_dataset(path)?,
        None => gen_early_detection(&SyntheticSpec {
            n_bags: args.n,
            p: args.p,
            seed: args.training.seed,
            ..SyntheticSpec::default()
        })?,
    };
    if data.first().is_some_and(|b| b.p() > EXACT_LIMIT) && args.training.inference == InferenceName::Exact {
        return Err(CliError::Usage(format!("exact inference needs p <= {EXACT_LIMIT}")));
    }
    let configs: Vec<TrainSpec> = args
        .surrogates
        .iter()
        .map(|&s| TrainSpec { name: surrogate_label(s).into(), config: train_config(s, &loss, &args.training) })
        .collect();
    let rows = capture_gap_traces(&data, &configs)?;
    let mut out = create(&args.out)?;
    write_traces_csv(&rows, &mut out)?;
    finish(out)?;
    for spec in &configs {
        if let Some(last) = rows.iter().rev().find(|r| r.surrogate == spec.name) {
            println!("{} iterations {} gap {:.9}", spec.name, last.iteration, last.gap);
        }
    }
    Ok(())
}
