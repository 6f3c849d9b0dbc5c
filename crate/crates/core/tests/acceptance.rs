//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs all nine; `-- 3 4` runs a subset.

mod common;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use avwake::corpus::{FeatureSet, Snr, Split};
use avwake::features::FbankStats;
use avwake::harness::{
    build_report, cmd_calibrate, cmd_eval, cmd_flops, cmd_prune, cmd_synth, cmd_train, evaluate,
    evaluate_model, threshold_for, train_model, EvalReport, Experiment, ExperimentConfig, Regime,
    RunDir, ThresholdPolicy,
};
use avwake::models::{
    bce_loss, wws_loss, Modality, Topology, TrainConfig, WwsModel, ENCODER_PREFIX,
};
use avwake::nn::{global_avg_pool, temporal_mean, Bottleneck, Conv2d, Fc, Lstm, ParamRegistry};
use avwake::pruning::{
    lth_if_run, lth_oneshot_run, schedule, scoped_counts, sequential_av_prune, sparsity_report,
    PruneConfig, PruneHooks, PruneScope, SequentialConfig,
};
use avwake::tensor::{ConvGeom, PoolGeom};

use common::*;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn layer_cases(case: u64) -> (String, f64, usize, usize) {
    let mut r = rng(1000 + case);
    let mut reg = ParamRegistry::new();
    let kind = case % 7;
    let report = match kind {
        0 => {
            let (n, i, o) = (
                r.random_range(1..4),
                r.random_range(1..6),
                r.random_range(1..6),
            );
            let fc = Fc::new(&mut reg, &mut r, "fc", i, o).unwrap();
            with_input(&mut reg, random_tensor(&mut r, &[n, i], 1.0));
            check_all(&reg, case, |g, b| fc.forward(g, b, b.get("input")?))
        }
        1 | 2 => {
            let depthwise = kind == 2;
            let c_in = r.random_range(1..4);
            let c_out = if depthwise {
                c_in
            } else {
                r.random_range(1..4)
            };
            let k = (r.random_range(1..4), r.random_range(1..4));
            let stride = (r.random_range(1..3), r.random_range(1..3));
            let pad = (r.random_range(0..k.0.min(2)), r.random_range(0..k.1.min(2)));
            let geom = ConvGeom::new(stride, pad);
            let (h, w) = (r.random_range(3..7), r.random_range(3..7));
            let conv =
                Conv2d::new(&mut reg, &mut r, "conv", c_in, c_out, k, geom, depthwise).unwrap();
            let n = r.random_range(1..3);
            with_input(&mut reg, random_tensor(&mut r, &[n, c_in, h, w], 1.0));
            check_all(&reg, case, |g, b| conv.forward(g, b, b.get("input")?))
        }
        3 => {
            let c_in = r.random_range(1..4);
            let c_out = if r.random_bool(0.5) {
                c_in
            } else {
                r.random_range(1..4)
            };
            let stride = r.random_range(1..3);
            let expand = r.random_range(1..4);
            let block =
                Bottleneck::new(&mut reg, &mut r, "block", c_in, c_out, expand, stride).unwrap();
            let side = r.random_range(3..6);
            with_input(&mut reg, random_tensor(&mut r, &[1, c_in, side, side], 1.0));
            check_all(&reg, case, |g, b| block.forward(g, b, b.get("input")?))
        }
        4 => {
            let (n, t, i, h) = (
                r.random_range(1..3),
                r.random_range(1..5),
                r.random_range(1..4),
                r.random_range(1..4),
            );
            let lstm = Lstm::new(&mut reg, &mut r, "lstm", i, h).unwrap();
            with_input(&mut reg, random_tensor(&mut r, &[n, t, i], 1.0));
            check_all(&reg, case, |g, b| {
                Ok(lstm.run(g, b, b.get("input")?, None)?.outputs)
            })
        }
        5 => {
            let shape = [
                r.random_range(1..3),
                r.random_range(1..4),
                r.random_range(1..5),
                r.random_range(1..5),
            ];
            with_input(&mut reg, random_tensor(&mut r, &shape, 1.0));
            if case % 2 == 0 {
                check_all(&reg, case, |g, b| global_avg_pool(g, b.get("input")?))
            } else {
                check_all(&reg, case, |g, b| {
                    let x = b.get("input")?;
                    let s = g.shape(x).to_vec();
                    let x = g.reshape(x, &[s[0], s[1], s[2] * s[3]])?;
                    temporal_mean(g, x)
                })
            }
        }
        _ => {
            let k = r.random_range(1..3);
            let side = k * r.random_range(1..4);
            with_input(&mut reg, random_tensor(&mut r, &[1, 2, side, side], 1.0));
            check_all(&reg, case, |g, b| {
                g.avg_pool(b.get("input")?, PoolGeom::window(k, k))
            })
        }
    };
    let names = [
        "fc",
        "conv2d",
        "depthwise",
        "bottleneck",
        "lstm",
        "mean-pool",
        "avg-pool",
    ];
    (
        names[kind as usize].to_string(),
        report.max_rel_error,
        report.checked,
        report.straddled,
    )
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let cases = 700;
    let (mut checked, mut straddled) = (0, 0);
    for case in 0..cases {
        let (kind, e, c, s) = layer_cases(case);
        let w = worst.entry(kind).or_insert(0.0);
        *w = w.max(e);
        checked += c;
        straddled += s;
    }
    let mut models = Vec::new();
    let (mut m_checked, mut m_straddled) = (0, 0);
    for (k, m) in [Modality::Audio, Modality::Video, Modality::Av]
        .into_iter()
        .enumerate()
    {
        let r = model_gradcheck(m, 7 + k as u64, 60);
        models.push((m.as_str(), r.max_rel_error));
        m_checked += r.checked;
        m_straddled += r.straddled;
    }
    let elapsed = start.elapsed();
    let layer_max = worst.values().copied().fold(0.0, f64::max);
    let model_max = models.iter().map(|m| m.1).fold(0.0, f64::max);
    let detail = format!(
        "{cases} layer cases ({checked} coordinates, {straddled} kink-straddling skipped), worst per kind {:?}; \
         full models ({m_checked} coordinates, {m_straddled} skipped) {:?}; {:.0}s",
        worst.iter().map(|(k, v)| format!("{k}={v:.1e}")).collect::<Vec<_>>(),
        models.iter().map(|(k, v)| format!("{k}={v:.1e}")).collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    ensure(
        layer_max < 1e-6,
        format!("layer error {layer_max:.2e} >= 1e-6: {detail}"),
    )?;
    ensure(
        model_max < 1e-4,
        format!("model error {model_max:.2e} >= 1e-4: {detail}"),
    )?;
    ensure(
        elapsed < Duration::from_secs(300),
        format!("took over 5 min: {detail}"),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let ln2 = std::f64::consts::LN_2;
    let closed = [
        (0.5, 1.0, ln2),
        (0.5, 0.0, ln2),
        ((-1.0f64).exp(), 1.0, 1.0),
        (1.0 - (-2.0f64).exp(), 0.0, 2.0),
        (0.25, 1.0, 4.0f64.ln()),
        (0.75, 0.0, 4.0f64.ln()),
    ];
    let mut max_dev: f64 = 0.0;
    for (p, y, want) in closed {
        max_dev = max_dev.max((wws_loss(p, y).map_err(err)? - want).abs());
    }
    ensure(max_dev <= 1e-12, format!("loss deviates by {max_dev:e}"))?;
    let mut g = avwake::tensor::Graph::new();
    let s = g
        .constant(avwake::tensor::Tensor::new(vec![2, 1], vec![0.5, 0.5]).unwrap())
        .map_err(err)?;
    let l = bce_loss(&mut g, s, &[1.0, 0.0]).map_err(err)?;
    let graph_dev = (g.value(l).map_err(err)?.item().map_err(err)? - ln2).abs();
    ensure(
        graph_dev <= 1e-12,
        format!("graph loss deviates by {graph_dev:e}"),
    )?;

    let grid = [Snr::Clean, Snr::Db(-5), Snr::Db(0), Snr::Db(5)];
    let mut r = rng(2);
    let sets = 10_000;
    for set in 0..sets {
        let n = r.random_range(0..40);
        let threshold = r.random_range(0.01..0.99);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        let snrs: Vec<Snr> = (0..n)
            .map(|_| grid[r.random_range(0..grid.len())])
            .collect();
        let report = evaluate(&scores, &labels, &snrs, &grid, threshold).map_err(err)?;
        let recount = |keep: &dyn Fn(usize) -> bool| {
            let (mut w, mut nw, mut fr, mut fa) = (0usize, 0usize, 0usize, 0usize);
            for i in 0..n {
                if !keep(i) {
                    continue;
                }
                let accept = scores[i] >= threshold;
                if labels[i] == 1 {
                    w += 1;
                    if !accept {
                        fr += 1;
                    }
                } else {
                    nw += 1;
                    if accept {
                        fa += 1;
                    }
                }
            }
            (w, nw, fr, fa)
        };
        let check = |c: &avwake::harness::EvalCounts,
                     (w, nw, fr, fa): (usize, usize, usize, usize)| {
            let frr_ok = if w == 0 {
                c.frr().is_none()
            } else {
                c.frr() == Some(fr as f64 / w as f64)
            };
            let far_ok = if nw == 0 {
                c.far().is_none()
            } else {
                c.far() == Some(fa as f64 / nw as f64)
            };
            (c.n_wake, c.n_non_wake, c.n_fr, c.n_fa) == (w, nw, fr, fa) && frr_ok && far_ok
        };
        ensure(
            check(&report.overall, recount(&|_| true)),
            format!("set {set}: overall counts differ"),
        )?;
        for snr in grid {
            let c = report
                .stratum(snr)
                .ok_or(format!("set {set}: stratum {snr} missing"))?;
            ensure(
                check(c, recount(&|i| snrs[i] == snr)),
                format!("set {set}: stratum {snr} differs"),
            )?;
        }
    }
    Ok(format!(
        "loss closed forms within {max_dev:.1e}; graph loss within {graph_dev:.1e}; {sets} decision sets recounted exactly"
    ))
}

// ---------------------------------------------------------------- 3

#[derive(Default)]
struct StepAudit {
    steps: usize,
    violations: Vec<String>,
    masks: BTreeMap<String, Vec<bool>>,
}

impl StepAudit {
    fn audit(&mut self, reg: &ParamRegistry) {
        self.steps += 1;
        for (name, p) in reg.iter() {
            let Some(mask) = &p.mask else {
                continue;
            };
            let zero: Vec<bool> = mask.data().iter().map(|&m| m == 0.0).collect();
            for (i, (&z, &w)) in zero.iter().zip(p.value.data()).enumerate() {
                if z && w != 0.0 && self.violations.len() < 5 {
                    self.violations.push(format!(
                        "step {}: {name}[{i}] = {w} under a zero mask",
                        self.steps
                    ));
                }
            }
            if let Some(prev) = self.masks.get(name) {
                if prev.iter().zip(&zero).any(|(&was, &now)| was && !now)
                    && self.violations.len() < 5
                {
                    self.violations
                        .push(format!("step {}: {name} mask regrew", self.steps));
                }
            }
            self.masks.insert(name.to_string(), zero);
        }
    }
}

fn criterion_3() -> Check {
    let corpus = small_corpus(3, 96, 8, 8);
    let train = features(&corpus, Split::Train, Modality::Audio);
    let mut details = Vec::new();
    for (p, t) in [(0.05, 21usize), (0.2, 5)] {
        let mut model = WwsModel::new(Modality::Audio, Topology::default(), 3).map_err(err)?;
        let cfg = PruneConfig {
            iterations: t,
            rate: p,
            ..PruneConfig::default()
        };
        let train_cfg = TrainConfig {
            batch_size: 32,
            ..TrainConfig::for_modality(Modality::Audio)
        };
        let audit = RefCell::new(StepAudit::default());
        let mut hooks = PruneHooks {
            evaluate: None,
            on_step: Some(Box::new(|reg: &ParamRegistry| {
                audit.borrow_mut().audit(reg);
                Ok(())
            })),
        };
        let state = lth_if_run(&mut model, &train, &cfg, &train_cfg, &mut hooks).map_err(err)?;
        drop(hooks);
        let audit = audit.into_inner();
        ensure(
            state.epochs_in(1) == 5,
            format!("(p={p}, T={t}): {} epochs at t=1", state.epochs_in(1)),
        )?;
        for it in 2..=t {
            ensure(
                state.epochs_in(it) == 1,
                format!("(p={p}, T={t}): {} epochs at t={it}", state.epochs_in(it)),
            )?;
        }
        ensure(
            state.history.len() == t,
            format!("(p={p}, T={t}): {} history rows", state.history.len()),
        )?;
        let expected = schedule(state.scoped_total, p, t - 1);
        ensure(
            state.pruned_counts == expected,
            format!(
                "(p={p}, T={t}): counts {:?} vs schedule {:?}",
                state.pruned_counts, expected
            ),
        )?;
        for (row, want) in state.history.iter().zip(&expected) {
            let s = *want as f64 / state.scoped_total as f64;
            ensure(
                row.scoped_sparsity == s,
                format!(
                    "(p={p}, T={t}): t={} sparsity {} vs {s}",
                    row.t, row.scoped_sparsity
                ),
            )?;
        }
        ensure(audit.violations.is_empty(), audit.violations.join("; "))?;
        details.push(format!(
            "(p={p}, T={t}) {} steps audited, final {}/{} pruned",
            audit.steps,
            expected.last().unwrap(),
            state.scoped_total
        ));
    }
    Ok(details.join("; "))
}

// ---------------------------------------------------------------- 4

fn encoder_bytes(reg: &ParamRegistry) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, p) in reg
        .iter()
        .filter(|(n, _)| n.starts_with(&format!("{ENCODER_PREFIX}.")))
    {
        out.extend_from_slice(name.as_bytes());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        if let Some(m) = &p.mask {
            for v in m.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
    }
    out
}

fn criterion_4() -> Check {
    let corpus = small_corpus(4, 32, 8, 8);
    let train = features(&corpus, Split::Train, Modality::Av);
    let mut model = WwsModel::new(Modality::Av, Topology::default(), 4).map_err(err)?;
    let cfg = SequentialConfig {
        encoder: PruneConfig {
            iterations: 3,
            initial_epochs: 1,
            rate: 0.2,
            scope: PruneScope::prefix(ENCODER_PREFIX),
            ..PruneConfig::default()
        },
        backend: PruneConfig {
            iterations: 3,
            initial_epochs: 1,
            rate: 0.2,
            scope: PruneScope::prefix("fusion"),
            ..PruneConfig::default()
        },
    };
    let train_cfg = TrainConfig::for_modality(Modality::Av);
    let snapshots = RefCell::new(Vec::new());
    let mut hooks = PruneHooks {
        evaluate: None,
        on_step: Some(Box::new(|reg: &ParamRegistry| {
            snapshots.borrow_mut().push(encoder_bytes(reg));
            Ok(())
        })),
    };
    let outcome =
        sequential_av_prune(&mut model, &train, &cfg, &train_cfg, &mut hooks).map_err(err)?;
    drop(hooks);
    let snapshots = snapshots.into_inner();
    let per_epoch = train.len().div_ceil(train_cfg.batch_size);
    let phase1 = outcome.encoder.epochs.len() * per_epoch;
    ensure(snapshots.len() > phase1, "no phase-2 steps observed")?;
    let frozen = &snapshots[phase1 - 1];
    let moved = snapshots[phase1..].iter().filter(|s| *s != frozen).count();
    ensure(
        moved == 0,
        format!("encoder changed on {moved} phase-2 steps"),
    )?;
    ensure(
        &encoder_bytes(&model.registry) == frozen,
        "final encoder differs from the end of phase 1",
    )?;
    let phase1_changed = snapshots[..phase1 - 1].iter().any(|s| s != frozen);
    ensure(phase1_changed, "encoder never changed in phase 1")?;

    let (pe, ne) = scoped_counts(&model.registry, &cfg.encoder.scope);
    let (pf, nf) = scoped_counts(&model.registry, &cfg.backend.scope);
    let whole = sparsity_report(&model.registry).total();
    ensure(
        whole.pruned == pe + pf && whole.total == ne + nf,
        format!(
            "whole model {}/{} vs encoder {pe}/{ne} + fusion {pf}/{nf}",
            whole.pruned, whole.total
        ),
    )?;
    let (se, sf) = (pe as f64 / ne as f64, pf as f64 / nf as f64);
    let weighted = (se * ne as f64 + sf * nf as f64) / (ne + nf) as f64;
    let direct = whole.pruned as f64 / whole.total as f64;
    ensure(
        weighted == direct,
        format!("weighted {weighted} vs whole {direct}"),
    )?;
    Ok(format!(
        "encoder bytes fixed over {} phase-2 steps; encoder {pe}/{ne} ({:.2}%), fusion {pf}/{nf} ({:.2}%), whole {}/{} = {:.4}%",
        snapshots.len() - phase1,
        100.0 * se,
        100.0 * sf,
        whole.pruned,
        whole.total,
        100.0 * direct
    ))
}

// ---------------------------------------------------------------- 5, 6, 7

struct DefaultData {
    train: FeatureSet,
    dev: FeatureSet,
    test: FeatureSet,
    stats: FbankStats,
    strata: Vec<Snr>,
    seconds: f64,
}

struct Evaluated {
    model: WwsModel,
    threshold: f64,
    dev_one_minus_frr: f64,
    test: EvalReport,
}

#[derive(Default)]
struct Shared {
    data: Option<DefaultData>,
    dense: BTreeMap<Modality, Evaluated>,
    lth: Option<Evaluated>,
}

const TARGET: f64 = 0.97;

fn experiment(m: Modality) -> Experiment {
    Experiment::new(ExperimentConfig::new(m)).expect("default config is valid")
}

impl Shared {
    fn data(&mut self) -> &DefaultData {
        self.data.get_or_insert_with(|| {
            let t = Instant::now();
            let exp = experiment(Modality::Av);
            let opts = exp.feature_options(Modality::Av);
            let mut train = exp.features(Split::Train, opts).expect("train features");
            let stats = train.fbank_stats().expect("stats");
            train.normalize(&stats).expect("normalize");
            let mut dev = exp.features(Split::Dev, opts).expect("dev features");
            dev.normalize(&stats).expect("normalize");
            let mut test = exp.features(Split::Test, opts).expect("test features");
            test.normalize(&stats).expect("normalize");
            DefaultData {
                train,
                dev,
                test,
                stats,
                strata: exp.strata(Split::Test),
                seconds: t.elapsed().as_secs_f64(),
            }
        })
    }

    fn assess(&mut self, model: WwsModel) -> Result<Evaluated, String> {
        let d = self.data();
        let policy = ThresholdPolicy::Calibrate { target: TARGET };
        let threshold = threshold_for(&model, &d.dev, policy).map_err(err)?;
        let dev = evaluate_model(&model, &d.dev, &[], threshold).map_err(err)?;
        let test = evaluate_model(&model, &d.test, &d.strata, threshold).map_err(err)?;
        Ok(Evaluated {
            model,
            threshold,
            dev_one_minus_frr: 1.0 - dev.overall.frr().unwrap_or(1.0),
            test,
        })
    }

    fn dense(&mut self, m: Modality) -> Result<&Evaluated, String> {
        if !self.dense.contains_key(&m) {
            let d = self.data();
            let (model, _) = train_model(&experiment(m), &d.train, d.stats.clone()).map_err(err)?;
            let e = self.assess(model)?;
            self.dense.insert(m, e);
        }
        Ok(&self.dense[&m])
    }

    fn lth(&mut self) -> Result<&Evaluated, String> {
        if self.lth.is_none() {
            let exp = experiment(Modality::Audio);
            let mut model = exp.init_model().map_err(err)?;
            let d = self.data();
            model.stats = d.stats.clone();
            lth_if_run(
                &mut model,
                &d.train,
                &PruneConfig::default(),
                &exp.config.train_config(),
                &mut PruneHooks::default(),
            )
            .map_err(err)?;
            self.lth = Some(self.assess(model)?);
        }
        Ok(self.lth.as_ref().expect("just set"))
    }
}

fn far_at(e: &Evaluated, snr: Snr) -> Result<f64, String> {
    e.test
        .stratum(snr)
        .and_then(|c| c.far())
        .ok_or(format!("no test FAR at {snr} dB"))
}

fn criterion_5(shared: &mut Shared) -> Check {
    let features = shared.data().seconds;
    let start = Instant::now();
    let mut rows = Vec::new();
    for m in [Modality::Audio, Modality::Video, Modality::Av] {
        let e = shared.dense(m)?;
        ensure(
            e.dev_one_minus_frr >= TARGET,
            format!(
                "{} dev 1-FRR {:.4} below {TARGET}",
                m.as_str(),
                e.dev_one_minus_frr
            ),
        )?;
        rows.push(format!(
            "{} thr {:.4} dev 1-FRR {:.2}% test 1-FRR {:.2}% FAR -5/0/5 dB {:.2}/{:.2}/{:.2}%",
            m.as_str(),
            e.threshold,
            100.0 * e.dev_one_minus_frr,
            100.0 * (1.0 - e.test.overall.frr().unwrap_or(1.0)),
            100.0 * far_at(e, Snr::Db(-5))?,
            100.0 * far_at(e, Snr::Db(0))?,
            100.0 * far_at(e, Snr::Db(5))?
        ));
    }
    let total = features + start.elapsed().as_secs_f64();
    let d = &shared.dense;
    let (a, v, av) = (
        &d[&Modality::Audio],
        &d[&Modality::Video],
        &d[&Modality::Av],
    );
    let detail = format!("{}; {:.0}s", rows.join(" | "), total);
    ensure(
        far_at(av, Snr::Db(-5))? <= far_at(a, Snr::Db(-5))?,
        format!("FAR(av) > FAR(audio) at -5 dB: {detail}"),
    )?;
    ensure(
        far_at(av, Snr::Db(5))? <= far_at(v, Snr::Db(5))?,
        format!("FAR(av) > FAR(video) at +5 dB: {detail}"),
    )?;
    ensure(
        total < 1800.0,
        format!("pipeline took over 30 min: {detail}"),
    )?;
    Ok(detail)
}

fn criterion_6(shared: &mut Shared) -> Check {
    let dense_far = shared
        .dense(Modality::Audio)?
        .test
        .overall
        .far()
        .ok_or("no dense FAR")?;
    let (lth_far, sparsity) = {
        let l = shared.lth()?;
        let s = sparsity_report(&l.model.registry).total();
        (
            l.test.overall.far().ok_or("no LTH-IF FAR")?,
            s.pruned as f64 / s.total as f64,
        )
    };
    let exp = experiment(Modality::Audio);
    let mut model = exp.init_model().map_err(err)?;
    let d = shared.data();
    model.stats = d.stats.clone();
    lth_oneshot_run(
        &mut model,
        &d.train,
        sparsity,
        &PruneScope::all(),
        &exp.config.train_config(),
    )
    .map_err(err)?;
    let one = shared.assess(model)?;
    let one_far = one.test.overall.far().ok_or("no one-shot FAR")?;
    let detail = format!(
        "sparsity {:.2}%; test FAR dense {:.2}%, LTH-IF {:.2}%, one-shot {:.2}%",
        100.0 * sparsity,
        100.0 * dense_far,
        100.0 * lth_far,
        100.0 * one_far
    );
    ensure(sparsity >= 0.5, format!("sparsity below 50%: {detail}"))?;
    ensure(
        lth_far <= dense_far + 0.01,
        format!("LTH-IF FAR more than 1 pp above dense: {detail}"),
    )?;
    ensure(
        one_far > lth_far,
        format!("one-shot not worse than LTH-IF: {detail}"),
    )?;
    Ok(detail)
}

fn criterion_7(shared: &mut Shared) -> Check {
    let l = shared.lth()?;
    let r = sparsity_report(&l.model.registry);
    let detail = format!(
        "t=20 pruned conv {:.2}% / LSTM {:.2}% / FC {:.2}% / total {:.2}%, spread {:.2} pp",
        r.conv.percent(),
        r.lstm.percent(),
        r.fc.percent(),
        r.total().percent(),
        r.spread()
    );
    ensure(r.spread() < 5.0, format!("spread not below 5 pp: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Check {
    let mut r = rng(8);
    let mut reg = ParamRegistry::new();
    let mut rows = Vec::new();
    let fc1 = Fc::new(&mut reg, &mut r, "fc1", 40, 64).map_err(err)?;
    rows.push((fc1.cost(&reg).map_err(err)?, 40 * 64 + 64, 2 * 40 * 64));
    let fc2 = Fc::new(&mut reg, &mut r, "fc2", 64, 32).map_err(err)?;
    rows.push((fc2.cost(&reg).map_err(err)?, 64 * 32 + 32, 2 * 64 * 32));
    let fc3 = Fc::new(&mut reg, &mut r, "fc3", 32, 1).map_err(err)?;
    rows.push((fc3.cost(&reg).map_err(err)?, 33, 64));
    let pw = Conv2d::new(
        &mut reg,
        &mut r,
        "pw",
        8,
        16,
        (1, 1),
        ConvGeom::unit(),
        false,
    )
    .map_err(err)?;
    rows.push((pw.cost(&reg, 10, 10).map_err(err)?, 8 * 16 + 16, 25_600));
    let stem = Conv2d::new(
        &mut reg,
        &mut r,
        "stem",
        1,
        8,
        (3, 3),
        ConvGeom::new((2, 2), (1, 1)),
        false,
    )
    .map_err(err)?;
    rows.push((
        stem.cost(&reg, 22, 22).map_err(err)?,
        9 * 8 + 8,
        2 * 9 * 8 * 11 * 11,
    ));
    let dw = Conv2d::new(
        &mut reg,
        &mut r,
        "dw",
        16,
        16,
        (3, 3),
        ConvGeom::new((1, 1), (1, 1)),
        true,
    )
    .map_err(err)?;
    rows.push((
        dw.cost(&reg, 6, 6).map_err(err)?,
        16 * 9 + 16,
        2 * 9 * 16 * 6 * 6,
    ));
    let dws = Conv2d::new(
        &mut reg,
        &mut r,
        "dws",
        24,
        24,
        (3, 3),
        ConvGeom::new((2, 2), (1, 1)),
        true,
    )
    .map_err(err)?;
    rows.push((
        dws.cost(&reg, 11, 11).map_err(err)?,
        24 * 9 + 24,
        2 * 9 * 24 * 6 * 6,
    ));
    let back = Conv2d::new(
        &mut reg,
        &mut r,
        "back",
        8,
        8,
        (3, 3),
        ConvGeom::new((2, 2), (1, 1)),
        false,
    )
    .map_err(err)?;
    rows.push((
        back.cost(&reg, 64, 20).map_err(err)?,
        8 * 8 * 9 + 8,
        2 * 9 * 8 * 8 * 32 * 10,
    ));
    let rect = Conv2d::new(
        &mut reg,
        &mut r,
        "rect",
        3,
        5,
        (3, 1),
        ConvGeom::new((1, 1), (0, 0)),
        false,
    )
    .map_err(err)?;
    rows.push((
        rect.cost(&reg, 7, 4).map_err(err)?,
        3 * 5 * 3 + 5,
        2 * 3 * 3 * 5 * 5 * 4,
    ));
    let lstm = Lstm::new(&mut reg, &mut r, "lstm", 80, 64).map_err(err)?;
    rows.push((
        lstm.cost(&reg, 64).map_err(err)?,
        80 * 256 + 64 * 256 + 256,
        64 * 2 * 4 * 64 * (80 + 64),
    ));
    for (cost, params, flops) in &rows {
        ensure(
            cost.params == *params && cost.flops == *flops && cost.pruned == 0,
            format!(
                "{}: got {}/{} want {params}/{flops}",
                cost.name, cost.params, cost.flops
            ),
        )?;
    }
    let mut mask = avwake::tensor::Tensor::ones(&[40, 64]);
    for i in 0..100 {
        mask.data_mut()[i * 7] = 0.0;
    }
    reg.set_mask("fc1.weight", mask).map_err(err)?;
    let c = fc1.cost(&reg).map_err(err)?;
    ensure(
        c.params == 2624 && c.pruned == 100,
        format!("masked fc1: {}/{}", c.params, c.pruned),
    )?;

    let csv = |m: Modality| {
        WwsModel::new(m, Topology::default(), 1)
            .and_then(|w| w.cost_report())
            .map(|c| c.to_csv())
    };
    let mut stable = 0;
    for m in [Modality::Audio, Modality::Video, Modality::Av] {
        let (a, b) = (csv(m).map_err(err)?, csv(m).map_err(err)?);
        ensure(
            a == b,
            format!("{} cost CSV differs between runs", m.as_str()),
        )?;
        ensure(
            a.lines().nth(1) == Some("layer,kind,params,pruned,flops"),
            "cost CSV header changed",
        )?;
        stable += 1;
    }
    Ok(format!(
        "{} layers match closed forms; masked count exact; {stable} model CSVs byte-stable",
        rows.len()
    ))
}

// ---------------------------------------------------------------- 9

fn pipeline(dir: &Path) -> Result<(), String> {
    let corpus_dir = dir.join("corpus");
    let mut audio = ExperimentConfig::new(Modality::Audio);
    audio.corpus = small_corpus(9, 48, 24, 24);
    audio.corpus_dir = Some(corpus_dir.clone());
    audio.train.epochs = Some(2);
    audio.prune.iterations = 3;
    audio.prune.initial_epochs = 1;
    let corpus_out = RunDir::create(&corpus_dir, false).map_err(err)?;
    cmd_synth(&audio, &corpus_out).map_err(err)?;
    let run = RunDir::create(&dir.join("run"), false).map_err(err)?;
    let mut oneshot = audio.clone();
    oneshot.prune.regime = Regime::OneShot;
    let mut av = audio.clone();
    av.modality = Modality::Av;
    av.train.epochs = Some(1);
    av.prune.regime = Regime::Sequential;
    av.prune.encoder_iterations = 2;
    av.prune.iterations = 2;
    for cfg in [&audio, &av] {
        cmd_train(cfg, &run).map_err(err)?;
        cmd_prune(cfg, &run).map_err(err)?;
    }
    cmd_prune(&oneshot, &run).map_err(err)?;
    for cfg in [&audio, &av] {
        cmd_calibrate(cfg, &run).map_err(err)?;
        cmd_eval(cfg, &run).map_err(err)?;
        cmd_flops(cfg, &run).map_err(err)?;
    }
    build_report(&run).map_err(err)?;
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .expect("inside")
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&p).expect("readable file"));
            }
        }
    }
    out
}

fn criterion_9() -> Check {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    ensure(ta.keys().eq(tb.keys()), "runs produced different file sets")?;
    let differing: Vec<&String> = ta
        .iter()
        .filter(|(k, v)| tb[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    ensure(differing.is_empty(), format!("files differ: {differing:?}"))?;
    for must in [
        "run/dense_far.csv",
        "run/sparsity_far.csv",
        "run/layer_sparsity.csv",
        "run/report.csv",
        "run/audio-lth-if.far_curve.svg",
    ] {
        ensure(ta.contains_key(must), format!("{must} not produced"))?;
    }
    let bytes: usize = ta.values().map(Vec::len).sum();
    Ok(format!(
        "{} artifacts ({} bytes) identical across two runs",
        ta.len(),
        bytes
    ))
}

// ---------------------------------------------------------------- runner

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut shared = Shared::default();
    let titles = [
        "gradient correctness",
        "loss and metric oracles",
        "LTH-IF fidelity",
        "sequential AV pruning isolation",
        "modality comparison",
        "iterative against one-shot pruning",
        "balanced per-layer-type sparsity",
        "cost accounting",
        "determinism",
    ];
    let mut failed = 0;
    for (i, title) in titles.iter().enumerate() {
        let id = i as u32 + 1;
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(&mut shared),
            6 => criterion_6(&mut shared),
            7 => criterion_7(&mut shared),
            8 => criterion_8(),
            _ => criterion_9(),
        }))
        .unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {id} PASS {title} [{secs:.1}s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} FAIL {title} [{secs:.1}s]: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
