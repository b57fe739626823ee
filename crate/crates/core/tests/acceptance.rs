//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every stochastic check uses base seed 0.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qcs::applications::{federated_init, scheduling_init, Client, FederatedInstance, SchedulingInstance, Server};
use qcs::applications::SchedulingRecovery;
use qcs::async_engine::{run_async_with, AsyncEngine};
use qcs::bounds::{lemma1_bound, token_walk_oracle};
use qcs::experiment::{
    presets, run_experiment, run_sweep, write_artifacts, ExperimentConfig, ExperimentReport, GraphSpec, InitSpec, Mode,
    OutputFormat,
};
use qcs::sync_engine::{run_sync_with, SyncEngine};
use qcs::{
    generate_random_digraph, run_async, run_sync, AsyncRunConfig, DelayModel, Digraph, EngineError, RunOutcome,
    SyncRunConfig,
};

const SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Instance {
    graph: Digraph,
    initial: Vec<(i64, i64)>,
    seed: u64,
}

/// Randomized sync workload: n in [5, 50], p in [0.3, 0.8], y0 in [0, 100],
/// z0 in [1, 10].
fn random_instances(count: usize) -> Vec<Instance> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(SEED + i as u64);
            let n = rng.gen_range(5..=50);
            let p = rng.gen_range(0.3..=0.8);
            let graph = generate_random_digraph(n, p, rng.gen(), 1_000_000).expect("strongly connected graph");
            let initial = (0..n).map(|_| (rng.gen_range(0..=100), rng.gen_range(1..=10))).collect();
            Instance { graph, initial, seed: rng.gen() }
        })
        .collect()
}

fn quotient_band(initial: &[(i64, i64)]) -> (i64, i64) {
    let y: i64 = initial.iter().map(|p| 2 * p.0).sum();
    let z: i64 = initial.iter().map(|p| 2 * p.1).sum();
    (y.div_euclid(z), y.div_euclid(z) + i64::from(y.rem_euclid(z) != 0))
}

fn sync_config(inst: &Instance, audit: bool) -> SyncRunConfig<'_> {
    SyncRunConfig { audit, ..SyncRunConfig::new(&inst.graph, inst.initial.clone(), inst.seed) }
}

fn in_band(out: &RunOutcome, band: (i64, i64)) -> bool {
    let first = out.final_q_s[0];
    out.final_q_s.iter().all(|&q| q == first) && (first == band.0 || first == band.1)
}

fn criterion_1(instances: &[Instance]) -> Verdict {
    let start = Instant::now();
    let mut converged = 0;
    let mut failures = 0;
    for inst in instances {
        let out = run_sync(&sync_config(inst, false)).expect("valid run");
        if out.converged {
            converged += 1;
            if !in_band(&out, quotient_band(&inst.initial)) {
                failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        converged > 0 && failures == 0 && secs < 60.0,
        format!("{} trials, {converged} converged, {failures} outside band, {secs:.2}s", instances.len()),
    )
}

fn criterion_2(instances: &[Instance]) -> Verdict {
    let mut breaches = 0;
    let mut other = 0;
    let mut tally = |r: Result<RunOutcome, EngineError>| match r {
        Ok(_) => {}
        Err(EngineError::ConservationBreach { .. }) => breaches += 1,
        Err(_) => other += 1,
    };
    for inst in instances {
        tally(run_sync(&sync_config(inst, true)));
        tally(run_async(&AsyncRunConfig::new(sync_config(inst, true), DelayModel::uniform(5))));
    }
    verdict(
        breaches == 0 && other == 0,
        format!("{} audited sync+async runs, {breaches} conservation breaches, {other} other audit errors", 2 * instances.len()),
    )
}

fn within(report: &ExperimentReport, limit: u64) -> f64 {
    let ok = report.trials.iter().filter(|t| t.converged && t.steps <= limit).count();
    ok as f64 / report.trials.len() as f64
}

fn criterion_3() -> Verdict {
    let report = run_experiment(&presets::fig1(SEED, 100), None).expect("fig1 runs");
    let frac = within(&report, 40);
    verdict(
        frac >= 0.95 && report.agreement_failures == 0,
        format!("{:.0}% of 100 within 40 steps, mean {:.2}, max {}", 100.0 * frac, report.stats.mean, report.stats.max),
    )
}

fn criterion_4() -> Verdict {
    let (sync, asy) = presets::fig3(SEED, 100);
    let sync = run_experiment(&sync, None).expect("fig3 sync runs");
    let asy = run_experiment(&asy, None).expect("fig3 async runs");
    let (fs, fa) = (within(&sync, 40), within(&asy, 200));
    verdict(
        fs >= 0.95 && fa >= 0.95 && asy.stats.mean > sync.stats.mean,
        format!(
            "sync {:.0}% within 40 (mean {:.2}), async {:.0}% within 200 (mean {:.2})",
            100.0 * fs,
            sync.stats.mean,
            100.0 * fa,
            asy.stats.mean
        ),
    )
}

fn criterion_5() -> Verdict {
    let sweep = run_sweep(&presets::fig2_desk(SEED, 50, false), None).expect("sweep runs");
    let mut under = true;
    let mut monotone = true;
    let mut rows = Vec::new();
    for n in presets::FIG2_SIZES {
        let means: Vec<f64> = presets::FIG2_DELAYS
            .iter()
            .map(|&b| sweep.cell(n, b).expect("cell present").report.stats.mean)
            .collect();
        under &= means[0] < 250.0;
        let m = means.windows(2).all(|w| w[0] <= w[1]);
        monotone &= m;
        rows.push(format!(
            "n={n}: {}{}",
            means.iter().map(|m| format!("{m:.1}")).collect::<Vec<_>>().join("/"),
            if m { "" } else { " (not monotone)" }
        ));
    }
    verdict(
        under && monotone,
        format!("B=5 under 250: {under}, monotone in B: {monotone}; means for B=5/10/15: {}", rows.join(", ")),
    )
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pairs = 0;
    let mut counterexamples = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=8);
        let g = generate_random_digraph(n, rng.gen_range(0.3..=0.9), rng.gen(), 1_000_000).expect("graph");
        let bound = lemma1_bound(g.diameter(), g.max_out_degree() as u32).expect("bound");
        for s in 0..n {
            for t in 0..n {
                pairs += 1;
                if token_walk_oracle(&g, s, t, g.diameter()).expect("oracle") < bound {
                    counterexamples += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        counterexamples == 0 && secs < 30.0,
        format!("100 graphs, {pairs} ordered pairs, {counterexamples} counterexamples, {secs:.2}s"),
    )
}

fn criterion_7() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for mode in [Mode::Sync, Mode::Async] {
        let mut cfg = ExperimentConfig::new(
            mode,
            GraphSpec::Random { n: 8, edge_prob: 0.4 },
            InitSpec::Uniform { y: (0, 30), z: (1, 4) },
        );
        if mode == Mode::Async {
            cfg.delay = Some(DelayModel::uniform(3));
        }
        cfg.trials = 100;
        cfg.seed = SEED;
        cfg.epsilon = Some(0.05);
        let report = run_experiment(&cfg, None).expect("bounded run");
        let b = report.bounds.expect("bounds summary");
        pass &= b.passes;
        parts.push(format!(
            "{mode:?}: {:.2} within bound vs required {:.3e}",
            b.fraction_within_bound, b.required_confidence
        ));
    }
    verdict(pass, parts.join("; "))
}

fn criterion_8() -> Verdict {
    let pair = Digraph::from_edges(2, &[(0, 1), (1, 0)]).expect("pair");
    let sched = SchedulingInstance {
        nodes: vec![Server { l: 40, u: 0, pi_max: 100 }, Server { l: 40, u: 0, pi_max: 300 }],
    };
    let init = scheduling_init(&sched).expect("init");
    let cfg = SyncRunConfig::new(&pair, init.initial.clone(), SEED);
    let w_sync = run_sync_with(&cfg, SchedulingRecovery(&sched)).expect("run").recovered;
    let w_async = run_async_with(&AsyncRunConfig::new(cfg, DelayModel::uniform(5)), SchedulingRecovery(&sched))
        .expect("run")
        .recovered;
    let sched_ok = w_sync == [Some(20), Some(60)] && w_async == w_sync;

    let fed = FederatedInstance {
        nodes: vec![Client { r_size: 10, w_local: 100 }, Client { r_size: 30, w_local: 200 }],
    };
    let init = federated_init(&fed, false).expect("init");
    let q = run_sync(&SyncRunConfig::new(&pair, init.initial, SEED)).expect("run").agreement();
    let fed_ok = q.is_some_and(|q| (q - 175).abs() < 1);

    let (mut random, _) = presets::fig3(SEED, 200);
    random.trials = 200;
    let report = run_experiment(&random, None).expect("random federated");
    let close = report
        .trials
        .iter()
        .filter(|t| t.solution_error.is_some_and(|e| e < 1.0))
        .count();
    verdict(
        sched_ok && fed_ok && close == 200,
        format!(
            "schedule {:?}, aggregate {}, random federated within 1: {close}/200",
            w_sync.iter().map(|w| w.unwrap_or(-1)).collect::<Vec<_>>(),
            q.map_or_else(|| "none".into(), |q| q.to_string())
        ),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("artifact dir")
        .map(|e| e.expect("entry").path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).expect("artifact")))
        .collect();
    files.sort();
    files
}

fn criterion_9(instances: &[Instance]) -> Verdict {
    let matched = instances
        .iter()
        .take(50)
        .filter(|inst| {
            let sync = run_sync(&sync_config(inst, false)).expect("sync");
            let asy = run_async(&AsyncRunConfig::new(sync_config(inst, false), DelayModel::unit())).expect("async");
            sync.final_q_s == asy.final_q_s && sync == asy
        })
        .count();

    let tmp = tempfile::tempdir().expect("tempdir");
    let mut identical = true;
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        let cfg = presets::fig1(SEED, 20);
        let dirs = [tmp.path().join(format!("{format:?}-a")), tmp.path().join(format!("{format:?}-b"))];
        for (dir, workers) in dirs.iter().zip([1, 3]) {
            let report = run_experiment(&cfg, Some(workers)).expect("run");
            write_artifacts(&report, dir, format).expect("write");
        }
        let (a, b) = (dir_bytes(&dirs[0]), dir_bytes(&dirs[1]));
        identical &= !a.is_empty() && a == b;
    }
    verdict(
        matched == 50 && identical,
        format!("unit-delay async equals sync on {matched}/50 instances, artifacts byte-identical: {identical}"),
    )
}

fn criterion_10(instances: &[Instance]) -> Verdict {
    let mut runs = 0;
    let mut bad = 0;
    for inst in instances.iter().take(200) {
        let base = sync_config(inst, false);
        let window = base.window;
        let mut sync = SyncEngine::new(&base).expect("engine");
        let acfg = AsyncRunConfig::new(base.clone(), DelayModel::uniform(4));
        let async_window = acfg.window();
        let mut asy = AsyncEngine::new(&acfg).expect("engine");

        macro_rules! check {
            ($engine:expr, $window:expr) => {{
                while !$engine.all_flagged() && $engine.current_step() < base.max_steps {
                    $engine.step().expect("step");
                }
                runs += 1;
                let k = $engine.current_step();
                let simultaneous = $engine.all_flagged() && $engine.nodes().iter().all(|s| s.flag) && k % $window == 0;
                let sent = $engine.messages_emitted();
                let states = $engine.nodes().to_vec();
                for _ in 0..3 * $window {
                    $engine.step().expect("step");
                }
                let quiet = $engine.messages_emitted() == sent && $engine.nodes() == &states[..];
                let out = $engine.into_outcome();
                let single = out.flag_steps.iter().all(|s| *s == Some(k));
                if !(simultaneous && quiet && single) {
                    bad += 1;
                }
            }};
        }
        check!(sync, window);
        check!(asy, async_window);
    }
    verdict(bad == 0, format!("{runs} runs, {bad} with a split flag step or post-termination traffic"))
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn main() {
    let instances = random_instances(500);
    let criteria: Vec<Criterion> = vec![
        ("exact-quotient agreement", Box::new(|| criterion_1(&instances))),
        ("mass conservation", Box::new(|| criterion_2(&instances))),
        ("data-center sync band", Box::new(criterion_3)),
        ("federated sync/async band", Box::new(criterion_4)),
        ("delay sweep at desk scale", Box::new(criterion_5)),
        ("walk lower bound", Box::new(criterion_6)),
        ("step-bound confidence", Box::new(criterion_7)),
        ("application exactness", Box::new(criterion_8)),
        ("unit-delay degeneracy and determinism", Box::new(|| criterion_9(&instances))),
        ("quiescence and simultaneity", Box::new(|| criterion_10(&instances))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
