//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use lovasz_core::experiments::{DataSource, TestLoss, TrainSpec};
use lovasz_core::families::{random_set_function, Family};
use lovasz_core::model::Objective;
use lovasz_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(id: &'static str, title: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (ok, mut detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    if !in_time {
        detail.push_str(&format!("; over time budget {budget:?}"));
    }
    let outcome = Outcome { id, title, pass: ok && in_time, detail, elapsed };
    println!(
        "[{}] {:>3} {} ({:.2?}): {}",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.id,
        outcome.title,
        outcome.elapsed,
        outcome.detail
    );
    outcome
}

fn signs<R: Rng>(p: usize, rng: &mut R) -> LabelVector {
    LabelVector::new((0..p).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()).unwrap()
}

fn uniform<R: Rng>(p: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    (0..p).map(|_| rng.random_range(lo..hi)).collect()
}

/// The 100 random submodular instances shared by criteria 2 and 3.
fn submodular_instances() -> Vec<SetFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..100)
        .map(|k| {
            let family = if k % 2 == 0 { Family::IncreasingSubmodular } else { Family::Submodular };
            random_set_function(family, 2 + k % 5, &mut rng)
        })
        .collect()
}

fn c1_extension() -> (bool, String) {
    let y = LabelVector::all_positive(2);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut expect = |label: &str, holds: bool, want: bool| {
        if holds != want {
            ok = false;
            notes.push(format!("{label} expected {want}"));
        }
    };
    for (name, l) in [("1.2", increasing_2()), ("0.4", non_monotone_2())] {
        let v = is_extension(&SurrogateKind::LovaszHinge, &l, &y).unwrap();
        expect(&format!("lovasz on {name}"), v.holds(), true);
    }
    expect("slack on 1.2", is_extension(&SurrogateKind::slack(), &increasing_2(), &y).unwrap().holds(), true);
    let slack_nm = is_extension(&SurrogateKind::slack(), &non_monotone_2(), &y).unwrap();
    match slack_nm.witness() {
        Some(w) if w.len() == 1 && w[0].vertex == SubsetMask::full(2) && w[0].surrogate == 1.0 && w[0].loss == 0.4 => {
            notes.push(format!("slack on 0.4 fails at {} ({} vs {})", w[0].vertex, w[0].surrogate, w[0].loss));
        }
        other => {
            ok = false;
            notes.push(format!("slack on 0.4 witness {other:?}"));
        }
    }
    for (name, l) in [("1.2", increasing_2()), ("2.8", supermodular_2())] {
        let gamma = margin_extension_gamma(&l).unwrap();
        let v = is_extension(&SurrogateKind::margin(gamma), &l, &y).unwrap();
        if v.holds() {
            notes.push(format!("margin auto on {name} (gamma {gamma:.6}) holds"));
        } else {
            ok = false;
            notes.push(format!("margin auto on {name} failed"));
        }
    }
    (ok, notes.join("; "))
}

fn c2_greedy_optimality(instances: &[SetFunction]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut mismatches = 0;
    for l in instances {
        let s = uniform(l.p(), -2.0, 2.0, &mut rng);
        let greedy = greedy_subgradient(l, &s).unwrap().dot(&s);
        if greedy != max_over_permutations(l, &s) {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches} of {} instances differ from the permutation maximum", instances.len()))
}

fn c3_base_polyhedron(instances: &[SetFunction]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let outside = instances
        .iter()
        .filter(|l| {
            let s = uniform(l.p(), -2.0, 2.0, &mut rng);
            !base_polyhedron_check(l, &greedy_subgradient(l, &s).unwrap().mu).unwrap()
        })
        .count();
    (outside == 0, format!("{outside} of {} greedy vectors outside B(l)", instances.len()))
}

fn c4_svm() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let y = signs(8, &mut rng);
        let g = uniform(8, -3.0, 3.0, &mut rng);
        let l = build_loss(&LossSpec::Hamming, &y).unwrap();
        worst = worst.max((lovasz_hinge(&l, &y, &g).unwrap() - hinge_sum(&y, &g)).abs());
    }
    let data = toy_separable();
    let config = TrainConfig { c: 1.0, epsilon: 1e-6, max_iterations: 1000, ..TrainConfig::default() };
    let (model, _) = train_cutting_plane(&data, &config).unwrap();
    let objective = Objective::new(&data, &config).unwrap();
    let ours = objective.regularized(model.weights(), config.c).unwrap();
    let reference = per_element_objective(&data, &per_element_svm(&data, config.c), config.c);
    let rel = (ours - reference).abs() / reference;
    (
        worst <= 1e-12 && rel <= 0.01,
        format!("max |L - hinge sum| {worst:.2e}; objective {ours:.9} vs per-element SVM {reference:.9} (rel {rel:.2e})"),
    )
}

fn c5_jaccard() -> (bool, String) {
    let mut checked = 0;
    let mut failures = Vec::new();
    for p in 1..=8 {
        for positives in 1u64..1 << p {
            let y = LabelVector::from_positive_mask(SubsetMask::new(positives, p).unwrap());
            let l = build_loss(&LossSpec::Jaccard, &y).unwrap();
            checked += 1;
            if !is_submodular(&l).unwrap().holds() || !is_increasing(&l).unwrap().holds() {
                failures.push(format!("p={p} y={y}"));
            }
        }
    }
    (failures.is_empty(), format!("{checked} label vectors checked; failures {failures:?}"))
}

fn c6_dominance() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut failures = Vec::new();
    for k in 0..20 {
        let p = 2 + k % 4;
        let l = random_set_function(Family::IncreasingSubmodular, p, &mut rng);
        let y = signs(p, &mut rng);
        if let Verdict::Fails(w) = dominance_check(&l, &y, 1000, 600 + k as u64).unwrap() {
            failures.push(format!("instance {k}: {w:?}"));
        }
    }
    (failures.is_empty(), format!("20 instances x 1000 points; failures {failures:?}"))
}

fn c7_convexity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut cases: Vec<(String, SetFunction)> = vec![
        ("1.2 table".into(), increasing_2()),
        ("0.4 table".into(), non_monotone_2()),
    ];
    for k in 0..4 {
        cases.push((format!("increasing #{k}"), random_set_function(Family::IncreasingSubmodular, 4, &mut rng)));
        cases.push((format!("submodular #{k}"), random_set_function(Family::Submodular, 4, &mut rng)));
    }
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, l) in &cases {
        let y = signs(l.p(), &mut rng);
        let verdict = convexity_probe(&SurrogateKind::LovaszHinge, l, &y, 1000, 7).unwrap();
        if !verdict.holds() {
            ok = false;
            notes.push(format!("{name} ({:?}) violates convexity", hinge_case(l).unwrap()));
        }
    }
    let cases_seen: Vec<HingeCase> = cases.iter().map(|(_, l)| hinge_case(l).unwrap()).collect();
    if !cases_seen.contains(&HingeCase::PerComponent) || !cases_seen.contains(&HingeCase::Outer) {
        ok = false;
        notes.push("both hinge cases must be exercised".into());
    }
    let y = LabelVector::all_positive(2);
    match convexity_probe(&SurrogateKind::PerComponentHinge, &non_monotone_2(), &y, 10_000, 71).unwrap() {
        Verdict::Fails(w) => notes.push(format!(
            "per-component variant on 0.4 violated at lambda {:.3}: {:.6} > {:.6}",
            w.lambda, w.at_mix, w.chord
        )),
        Verdict::Holds => {
            ok = false;
            notes.push("per-component variant on 0.4 showed no violation".into());
        }
    }
    notes.insert(0, format!("{} submodular losses x 1000 triples", cases.len()));
    (ok, notes.join("; "))
}

fn c8a_gamma_value() -> (bool, String) {
    let g = max_margin_gamma(&increasing_2()).unwrap();
    ((g - 10.0).abs() < 1e-9, format!("max_margin_gamma = {g}"))
}

fn c8b_gamma_extension() -> (bool, String) {
    let l = increasing_2();
    let y = LabelVector::all_positive(2);
    match is_extension(&SurrogateKind::margin(10.0), &l, &y).unwrap() {
        Verdict::Holds => (true, "margin rescaling at gamma 10 is an extension".into()),
        Verdict::Fails(w) => (
            false,
            format!(
                "margin rescaling at gamma 10 is not an extension: {}",
                w.iter()
                    .map(|m| format!("vertex {} gives {:.6} vs {:.6}", m.vertex, m.surrogate, m.loss))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
    }
}

fn c8c_gamma_overshoot() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut finite = 0;
    let mut failing = 0;
    let mut safe_ok = 0;
    while finite < 50 {
        let p = 2 + finite % 4;
        let l = random_set_function(Family::IncreasingSubmodular, p, &mut rng);
        let bound = max_margin_gamma(&l).unwrap();
        if !bound.is_finite() {
            continue;
        }
        finite += 1;
        let y = signs(p, &mut rng);
        if !is_extension(&SurrogateKind::margin(2.0 * bound), &l, &y).unwrap().holds() {
            failing += 1;
        }
        let safe = margin_extension_gamma(&l).unwrap();
        if is_extension(&SurrogateKind::margin(safe), &l, &y).unwrap().holds() {
            safe_ok += 1;
        }
    }
    (
        failing >= 1,
        format!(
            "twice the bound breaks the extension on {failing} of {finite} instances; \
             margin_extension_gamma keeps it on {safe_ok} of {finite}"
        ),
    )
}

fn c9_subgradients() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let cases = [
        (HingeCase::PerComponent, random_set_function(Family::IncreasingSubmodular, 5, &mut rng)),
        (HingeCase::Outer, random_set_function(Family::Submodular, 5, &mut rng)),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for (case, l) in &cases {
        if hinge_case(l).unwrap() != *case {
            ok = false;
            notes.push(format!("instance for {case:?} dispatches elsewhere"));
            continue;
        }
        let mut tested = 0;
        let mut worst: f64 = 0.0;
        while tested < 200 {
            let y = signs(5, &mut rng);
            let g = uniform(5, -2.0, 2.0, &mut rng);
            let s = margins(&y, &g).unwrap();
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let separated = sorted.windows(2).all(|w| w[1] - w[0] > 1e-3);
            let off_zero = s.iter().all(|v| v.abs() > 1e-3);
            let inner = lovasz_extension(l, &s).unwrap();
            if !separated || !off_zero || (*case == HingeCase::Outer && inner.abs() < 1e-3) {
                continue;
            }
            tested += 1;
            let analytic = lovasz_hinge_subgradient(l, &y, &g).unwrap();
            let numeric = central_gradient(|x| lovasz_hinge(l, &y, x).unwrap(), &g, 1e-6);
            for (a, n) in analytic.iter().zip(&numeric) {
                worst = worst.max((a - n).abs());
            }
        }
        if worst > 1e-5 {
            ok = false;
        }
        notes.push(format!("{case:?}: 200 points, max deviation {worst:.2e}"));
    }
    (ok, notes.join("; "))
}

fn c10_convergence() -> (bool, String) {
    let data = gen_early_detection(&SyntheticSpec::default()).unwrap();
    let config = TrainConfig { loss: LossSpec::EarlyDetection, max_iterations: 200, ..TrainConfig::default() };
    let (_, state) = train_cutting_plane(&data, &config).unwrap();
    let last = state.gap_trace.last().unwrap();
    let sandwich = state.gap_trace.iter().all(|r| r.dual <= r.primal + 1e-8);
    (
        state.converged && last.gap <= 0.01 && sandwich,
        format!(
            "gap {:.6} after {} iterations; dual <= primal throughout: {sandwich}",
            last.gap, last.iteration
        ),
    )
}

fn c11_cross_comparison() -> (bool, String) {
    let row = |name: &str, surrogate, loss| TrainSpec {
        name: name.into(),
        config: TrainConfig { surrogate, loss, gamma: Gamma::Auto, max_iterations: 200, ..TrainConfig::default() },
    };
    let rows = vec![
        row("L", Surrogate::LovaszHinge, LossSpec::EarlyDetection),
        row("0-1", Surrogate::LovaszHinge, LossSpec::Hamming),
        row("S", Surrogate::SlackRescale, LossSpec::EarlyDetection),
        row("M", Surrogate::MarginRescale, LossSpec::EarlyDetection),
    ];
    let columns = vec![
        TestLoss { name: "delta1".into(), loss: LossSpec::EarlyDetection },
        TestLoss { name: "hamming".into(), loss: LossSpec::Hamming },
    ];
    let source = DataSource::Synthetic { train: SyntheticSpec::default(), n_test: 500 };
    let table = run_cross_comparison(&source, &rows, &columns, 10, 0, None).unwrap();
    let l_wins = table.wins(0, 0);
    let zero_one_wins = table.wins(1, 1);
    let cells: Vec<String> = table
        .rows
        .iter()
        .zip(&table.cells)
        .map(|(r, c)| format!("{r}: {:.4}±{:.4} / {:.3}±{:.3}", c[0].mean, c[0].standard_error, c[1].mean, c[1].standard_error))
        .collect();
    (
        l_wins >= 8 && zero_one_wins >= 8,
        format!(
            "L best on delta1 in {l_wins}/10, 0-1 best on hamming in {zero_one_wins}/10; {}",
            cells.join("; ")
        ),
    )
}

fn c12_surface() -> (bool, String) {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, l) in [("1.2", increasing_2()), ("0.4", non_monotone_2()), ("2.8", supermodular_2())] {
        let kind = if hinge_case(&l).is_ok() { SurrogateKind::LovaszHinge } else { SurrogateKind::slack() };
        let render = || {
            let mut buf = Vec::new();
            write_surface_csv(&surface_grid(&kind, &l, 0.0, 1.0, 101).unwrap(), &mut buf).unwrap();
            buf
        };
        let first = render();
        let stable = first == render();
        let text = String::from_utf8(first).unwrap();
        let rows: Vec<Vec<f64>> =
            text.lines().skip(1).map(|r| r.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        let corners_match = rows.iter().filter(|r| (r[0] == 0.0 || r[0] == 1.0) && (r[1] == 0.0 || r[1] == 1.0)).all(|r| {
            let mask = u64::from(r[0] == 1.0) | u64::from(r[1] == 1.0) << 1;
            r[2] == l.value(mask)
        });
        ok &= stable && corners_match && rows.len() == 101 * 101;
        notes.push(format!("{name} via {}: {} rows, stable {stable}, corners {corners_match}", kind.name(), rows.len()));
    }
    (ok, notes.join("; "))
}

fn main() {
    let instances = submodular_instances();
    let s = Duration::from_secs;
    let outcomes = vec![
        run("1", "extension suite", s(1), c1_extension),
        run("2", "greedy optimality", s(10), || c2_greedy_optimality(&instances)),
        run("3", "base polyhedron", s(10), || c3_base_polyhedron(&instances)),
        run("4", "SVM coincidence", s(60), c4_svm),
        run("5", "Jaccard structure", s(30), c5_jaccard),
        run("6", "dominance", s(60), c6_dominance),
        run("7", "convexity", s(60), c7_convexity),
        run("8a", "gamma bound value", s(10), c8a_gamma_value),
        run("8b", "gamma bound gives an extension", s(10), c8b_gamma_extension),
        run("8c", "doubled gamma breaks the extension", s(60), c8c_gamma_overshoot),
        run("9", "subgradient correctness", s(60), c9_subgradients),
        run("10", "trainer convergence", s(120), c10_convergence),
        run("11", "cross-comparison ordering", s(1200), c11_cross_comparison),
        run("12", "surface golden output", s(60), c12_surface),
    ];
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        outcomes.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
