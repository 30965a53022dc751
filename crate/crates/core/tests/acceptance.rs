//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! A3 to A5 train 15 small networks and take roughly 20 minutes on one core.
//! Setting `SACC_ACCEPTANCE_SKIP_TRAINING=1` reports them as `SKIP` instead.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sacc_core::aug::{apply_strong, apply_weak, sample_views, Image, StrongAugSpec, StrongOp, WeakAugSpec};
use sacc_core::checkpoint::Checkpoint;
use sacc_core::data::{make_synthetic, Dataset, SyntheticSpec};
use sacc_core::loss::{
    cluster_loss, cluster_pair_loss, instance_loss, instance_pair_loss, total_loss, total_loss_with_grad,
    ClusterLossConfig, InstanceLossConfig, LossError, ViewOutputs,
};
use sacc_core::metrics::{accuracy, ari, nmi, LabelPair};
use sacc_core::model::ModelConfig;
use sacc_core::train::{train, train_dataset, AblationMode, RunConfig, TrainOptions};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// ---------------------------------------------------------------------------
// Scalar reference implementations, written from the definitions with plain
// loops and no shared code with the library.

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
    }
    dot / (norm(u) * norm(v))
}

/// NT-Xent style loss over the rows of `a` and `b`, averaged over 2n anchors.
fn ref_contrast(a: &[Vec<f64>], b: &[Vec<f64>], tau: f64, include_self: bool) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for (p, q) in [(a, b), (b, a)] {
        for i in 0..n {
            let num = (cos(&p[i], &q[i]) / tau).exp();
            let mut den = 0.0;
            for j in 0..n {
                if j != i || include_self {
                    den += (cos(&p[i], &p[j]) / tau).exp();
                }
                den += (cos(&p[i], &q[j]) / tau).exp();
            }
            total += -(num / den).ln();
        }
    }
    total / (2 * n) as f64
}

fn rows(x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn cols(x: ArrayView2<f64>) -> Vec<Vec<f64>> {
    x.columns().into_iter().map(|c| c.to_vec()).collect()
}

fn ref_instance_pair(ya: ArrayView2<f64>, yb: ArrayView2<f64>, tau: f64, include_self: bool) -> f64 {
    ref_contrast(&rows(ya), &rows(yb), tau, include_self)
}

fn ref_entropy(c: ArrayView2<f64>) -> f64 {
    let (n, m) = c.dim();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += c[[i, j]];
        }
    }
    let mut h = 0.0;
    for j in 0..m {
        let mut s = 0.0;
        for i in 0..n {
            s += c[[i, j]];
        }
        let p = s / total;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

fn ref_cluster_pair(ca: ArrayView2<f64>, cb: ArrayView2<f64>, tau: f64, include_self: bool) -> f64 {
    ref_contrast(&cols(ca), &cols(cb), tau, include_self) - ref_entropy(ca) - ref_entropy(cb)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

fn simplex(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    let mut c = gaussian(rng, n, m) * 2.0;
    for mut r in c.rows_mut() {
        let mx = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - mx).exp());
        let s = r.sum();
        r /= s;
    }
    c
}

// ---------------------------------------------------------------------------

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(2..=5);
        let d = rng.random_range(2..=6);
        let include_self = case % 4 == 3;
        let tau_g = [0.5, 0.2, 1.0][case % 3];
        let tau_h = [1.0, 0.5, 2.0][case % 3];
        let icfg = InstanceLossConfig { tau_g, include_self_term: include_self };
        let ccfg = ClusterLossConfig { tau_h, include_self_term: include_self };
        let y: Vec<_> = (0..3).map(|_| gaussian(&mut rng, n, d)).collect();
        let c: Vec<_> = (0..3).map(|_| simplex(&mut rng, n, m)).collect();

        let pairs = [
            (
                instance_pair_loss(y[0].view(), y[1].view(), &icfg).map_err(|e| e.to_string())?,
                ref_instance_pair(y[0].view(), y[1].view(), tau_g, include_self),
            ),
            (
                cluster_pair_loss(c[0].view(), c[1].view(), &ccfg).map_err(|e| e.to_string())?,
                ref_cluster_pair(c[0].view(), c[1].view(), tau_h, include_self),
            ),
            (
                instance_loss(y[0].view(), y[1].view(), y[2].view(), &icfg).map_err(|e| e.to_string())?,
                ref_instance_pair(y[0].view(), y[1].view(), tau_g, include_self)
                    + ref_instance_pair(y[1].view(), y[2].view(), tau_g, include_self),
            ),
            (
                cluster_loss(c[0].view(), c[1].view(), c[2].view(), &ccfg).map_err(|e| e.to_string())?,
                ref_cluster_pair(c[0].view(), c[1].view(), tau_h, include_self)
                    + ref_cluster_pair(c[0].view(), c[2].view(), tau_h, include_self)
                    + ref_cluster_pair(c[1].view(), c[2].view(), tau_h, include_self),
            ),
        ];
        for (got, want) in pairs {
            let err = (got - want).abs();
            worst = worst.max(err);
            check(err <= 1e-6, format!("case {case} (N={n}, M={m}): {got} vs reference {want}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1}s"))?;
    Ok(format!("200 instances, max abs error {worst:.2e}, {secs:.2}s"))
}

fn a2() -> Outcome {
    let start = Instant::now();
    let h = 1e-4;
    let icfg = InstanceLossConfig::default();
    let ccfg = ClusterLossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..5 {
        let (n, m, d) = (6, 3, 4);
        let y: Vec<_> = (0..3).map(|_| gaussian(&mut rng, n, d)).collect();
        let c: Vec<_> = (0..3).map(|_| simplex(&mut rng, n, m)).collect();
        let eval = |y: &[Array2<f64>], c: &[Array2<f64>]| -> Result<f64, LossError> {
            let v = |k: usize| ViewOutputs { y: y[k].view(), c: c[k].view() };
            total_loss(&[v(0), v(1), v(2)], &icfg, &ccfg).map(|r| r.total)
        };
        let views: Vec<ViewOutputs> = (0..3).map(|k| ViewOutputs { y: y[k].view(), c: c[k].view() }).collect();
        let (_, grads) =
            total_loss_with_grad(&[views[0], views[1], views[2]], &icfg, &ccfg).map_err(|e| e.to_string())?;
        for k in 0..3 {
            for is_c in [false, true] {
                let shape = if is_c { (n, m) } else { (n, d) };
                for i in 0..shape.0 {
                    for j in 0..shape.1 {
                        let bump = |delta: f64| -> Result<f64, String> {
                            let (mut yy, mut cc) = (y.clone(), c.clone());
                            if is_c {
                                cc[k][[i, j]] += delta;
                            } else {
                                yy[k][[i, j]] += delta;
                            }
                            eval(&yy, &cc).map_err(|e| e.to_string())
                        };
                        let numeric = (bump(h)? - bump(-h)?) / (2.0 * h);
                        let analytic = if is_c { grads[k].c[[i, j]] } else { grads[k].y[[i, j]] };
                        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                        worst = worst.max(rel);
                        checked += 1;
                        check(
                            rel <= 1e-4,
                            format!("view {} {} [{i},{j}]: analytic {analytic} vs numeric {numeric}", k + 1, if is_c { "c" } else { "y" }),
                        )?;
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"))?;
    Ok(format!("{checked} partial derivatives, max relative error {worst:.2e}, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// A3 to A5 share one set of training runs.

fn desk_config() -> (RunConfig, Dataset) {
    let data = make_synthetic(&SyntheticSpec::default()).expect("synthetic data");
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::small(4);
    cfg.aug.weak.output_size = 32;
    cfg.train.batch_size = 32;
    cfg.train.epochs = 200;
    (cfg, data)
}

struct Run {
    mode: AblationMode,
    seed: u64,
    nmi: f64,
    acc: f64,
    secs: f64,
}

const SEEDS: [u64; 3] = [0, 1, 2];
const MODES: [AblationMode; 5] = [
    AblationMode::WeakWeakStrong,
    AblationMode::WeakWeak,
    AblationMode::WeakStrong,
    AblationMode::WithInstanceOnly,
    AblationMode::WithClusterOnly,
];

fn desk_runs() -> Result<Vec<Run>, String> {
    let (base, data) = desk_config();
    let mut runs = Vec::new();
    for mode in MODES {
        for seed in SEEDS {
            let mut cfg = base.clone();
            cfg.train.mode = mode;
            cfg.train.seed = seed;
            let start = Instant::now();
            let out = train_dataset(&cfg, &data, &TrainOptions::default()).map_err(|e| format!("{mode} seed {seed}: {e}"))?;
            let secs = start.elapsed().as_secs_f64();
            let s = out.final_eval.scores().ok_or("labelled data gave no scores")?;
            eprintln!("  {mode:<20} seed {seed}: nmi {:.4} acc {:.4} ari {:.4} ({secs:.0}s)", s.nmi, s.acc, s.ari);
            runs.push(Run { mode, seed, nmi: s.nmi, acc: s.acc, secs });
        }
    }
    Ok(runs)
}

fn median_nmi(runs: &[Run], mode: AblationMode) -> f64 {
    let mut v: Vec<f64> = runs.iter().filter(|r| r.mode == mode).map(|r| r.nmi).collect();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn a3(runs: &[Run]) -> Outcome {
    let main: Vec<&Run> = runs.iter().filter(|r| r.mode == AblationMode::WeakWeakStrong).collect();
    let good = main.iter().filter(|r| r.acc >= 0.90 && r.nmi >= 0.75).count();
    let secs: f64 = main.iter().map(|r| r.secs).sum();
    let mut detail = String::new();
    for r in &main {
        write!(detail, "seed {} acc {:.3} nmi {:.3}; ", r.seed, r.acc, r.nmi).unwrap();
    }
    check(good >= 2, format!("{detail}only {good} of 3 seeds reached ACC >= 0.90 and NMI >= 0.75"))?;
    check(secs < 900.0, format!("{detail}took {secs:.0}s"))?;
    Ok(format!("{detail}{good}/3 seeds pass, {secs:.0}s"))
}

fn a4(runs: &[Run]) -> Outcome {
    let ww = median_nmi(runs, AblationMode::WeakWeak);
    let ws = median_nmi(runs, AblationMode::WeakStrong);
    let wws = median_nmi(runs, AblationMode::WeakWeakStrong);
    let detail = format!("median NMI weak_weak {ww:.4}, weak_strong {ws:.4}, weak_weak_strong {wws:.4}");
    check(ww <= wws && ws <= wws, detail.clone())?;
    Ok(detail)
}

fn a5(runs: &[Run]) -> Outcome {
    let both = median_nmi(runs, AblationMode::WeakWeakStrong);
    let inst = median_nmi(runs, AblationMode::WithInstanceOnly);
    let clu = median_nmi(runs, AblationMode::WithClusterOnly);
    let detail = format!("median NMI both {both:.4}, instance_only {inst:.4}, cluster_only {clu:.4}");
    check(both >= inst && both >= clu, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn brute_force_accuracy(t: &[usize], p: &[usize]) -> f64 {
    let k = t.iter().chain(p).max().unwrap() + 1;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    // Heap's algorithm over all k! cluster-to-class maps
    fn heap(len: usize, perm: &mut Vec<usize>, t: &[usize], p: &[usize], best: &mut usize) {
        if len == 1 {
            let hits = t.iter().zip(p).filter(|(a, b)| perm[**b] == **a).count();
            *best = (*best).max(hits);
            return;
        }
        for i in 0..len {
            heap(len - 1, perm, t, p, best);
            if len % 2 == 0 {
                perm.swap(i, len - 1);
            } else {
                perm.swap(0, len - 1);
            }
        }
    }
    heap(k, &mut perm, t, p, &mut best);
    best as f64 / t.len() as f64
}

fn naive_nmi(t: &[usize], p: &[usize]) -> f64 {
    let n = t.len() as f64;
    let kt = t.iter().max().unwrap() + 1;
    let kp = p.iter().max().unwrap() + 1;
    let mut table = vec![vec![0.0; kp]; kt];
    for i in 0..t.len() {
        table[t[i]][p[i]] += 1.0;
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..kp).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let h = |v: &[f64]| -> f64 { v.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum() };
    let (ht, hp) = (h(&row), h(&col));
    if ht == 0.0 || hp == 0.0 {
        return if ht == 0.0 && hp == 0.0 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for i in 0..kt {
        for j in 0..kp {
            let c = table[i][j];
            if c > 0.0 {
                mi += (c / n) * ((c / n) / ((row[i] / n) * (col[j] / n))).ln();
            }
        }
    }
    mi / (ht * hp).sqrt()
}

fn pair_enumeration_ari(t: &[usize], p: &[usize]) -> f64 {
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..t.len() {
        for j in i + 1..t.len() {
            match (t[i] == t[j], p[i] == p[j]) {
                (true, true) => a += 1.0,
                (true, false) => b += 1.0,
                (false, true) => c += 1.0,
                (false, false) => d += 1.0,
            }
        }
    }
    let den = (a + b) * (b + d) + (a + c) * (c + d);
    if den == 0.0 {
        1.0
    } else {
        2.0 * (a * d - b * c) / den
    }
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA6);
    let (mut worst_nmi, mut worst_ari): (f64, f64) = (0.0, 0.0);
    for case in 0..500 {
        let n = rng.random_range(2..=40);
        let kt = rng.random_range(1..=6);
        let kp = rng.random_range(1..=6);
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..kt)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..kp)).collect();
        let pair = LabelPair::new(t.clone(), p.clone()).map_err(|e| e.to_string())?;
        let acc = accuracy(&pair);
        let want = brute_force_accuracy(&t, &p);
        check(acc == want, format!("case {case}: accuracy {acc} vs brute force {want}"))?;
        let e = (nmi(&pair) - naive_nmi(&t, &p)).abs();
        worst_nmi = worst_nmi.max(e);
        check(e <= 1e-10, format!("case {case}: nmi off by {e:e}"))?;
        let e = (ari(&pair).map_err(|e| e.to_string())? - pair_enumeration_ari(&t, &p)).abs();
        worst_ari = worst_ari.max(e);
        check(e <= 1e-10, format!("case {case}: ari off by {e:e}"))?;
    }
    let indep = LabelPair::new(vec![0, 0, 1, 1], vec![0, 1, 0, 1]).map_err(|e| e.to_string())?;
    let v = ari(&indep).map_err(|e| e.to_string())?;
    check(v == -0.5, format!("independent partition ari {v:?}"))?;
    Ok(format!(
        "500 instances; max nmi error {worst_nmi:.1e}, max ari error {worst_ari:.1e}; independent ari = {v}"
    ))
}

fn a7() -> Outcome {
    let cfg = ClusterLossConfig::default();
    let balanced = ndarray::array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
    let got = cluster_pair_loss(balanced.view(), balanced.view(), &cfg).map_err(|e| e.to_string())?;
    // direct summation: columns (1,1,0,0) and (0,0,1,1) are orthogonal, so each
    // of the 2M anchors has positive logit e and denominator e + 2
    let e1 = 1f64.exp();
    let oracle = -(e1 / (e1 + 2.0)).ln() - 2.0 * 2f64.ln();
    check((got - oracle).abs() <= 1e-4, format!("balanced loss {got} vs oracle {oracle}"))?;
    check((oracle - -0.8348496).abs() < 1e-7, format!("oracle drifted: {oracle}"))?;

    // an exactly empty cluster has an undefined cosine, so collapse is
    // approached with a vanishing second column
    let one_hot = ndarray::array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
    check(
        matches!(cluster_pair_loss(one_hot.view(), one_hot.view(), &cfg), Err(LossError::ZeroNorm { .. })),
        "exact one-hot collapse should report a zero-norm column",
    )?;
    let mut collapsed = Vec::new();
    for eps in [1e-2, 1e-4, 1e-6, 1e-9] {
        let c = Array2::from_shape_fn((4, 2), |(_, j)| if j == 0 { 1.0 - eps } else { eps });
        let v = cluster_pair_loss(c.view(), c.view(), &cfg).map_err(|e| e.to_string())?;
        check(v > got, format!("collapsed (eps {eps}) loss {v} not above balanced {got}"))?;
        collapsed.push(v);
    }
    Ok(format!(
        "balanced {got:.7} (oracle {oracle:.7}); collapsed {:.4}..{:.4}",
        collapsed.iter().cloned().fold(f64::INFINITY, f64::min),
        collapsed.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    ))
}

fn a8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    let icfg = InstanceLossConfig::default();
    let ccfg = ClusterLossConfig::default();
    let mut worst: f64 = 0.0;
    let mut cmp = |a: f64, b: f64, what: &str| -> Result<(), String> {
        let e = (a - b).abs();
        worst = worst.max(e);
        check(e <= 1e-6, format!("{what}: {a} vs {b}"))
    };
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(2..=5);
        let ya = gaussian(&mut rng, n, 5);
        let yb = gaussian(&mut rng, n, 5);
        let base = instance_pair_loss(ya.view(), yb.view(), &icfg).map_err(|e| e.to_string())?;
        for lambda in [0.1, 1.0, 10.0] {
            let v = instance_pair_loss((&ya * lambda).view(), (&yb * lambda).view(), &icfg).map_err(|e| e.to_string())?;
            cmp(v, base, "global scale")?;
            let mut per = ya.clone();
            for (i, mut r) in per.rows_mut().into_iter().enumerate() {
                r *= lambda * (1.0 + i as f64);
            }
            let v = instance_pair_loss(per.view(), yb.view(), &icfg).map_err(|e| e.to_string())?;
            cmp(v, base, "per-vector scale")?;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pa = ya.select(ndarray::Axis(0), &order);
        let pb = yb.select(ndarray::Axis(0), &order);
        cmp(instance_pair_loss(pa.view(), pb.view(), &icfg).map_err(|e| e.to_string())?, base, "batch permutation")?;

        let c: Vec<_> = (0..3).map(|_| simplex(&mut rng, n, m)).collect();
        let base = cluster_loss(c[0].view(), c[1].view(), c[2].view(), &ccfg).map_err(|e| e.to_string())?;
        let mut relabel: Vec<usize> = (0..m).collect();
        relabel.shuffle(&mut rng);
        let r: Vec<_> = c.iter().map(|x| x.select(ndarray::Axis(1), &relabel)).collect();
        cmp(cluster_loss(r[0].view(), r[1].view(), r[2].view(), &ccfg).map_err(|e| e.to_string())?, base, "cluster relabel")?;
        let p: Vec<_> = c.iter().map(|x| x.select(ndarray::Axis(0), &order)).collect();
        cmp(cluster_loss(p[0].view(), p[1].view(), p[2].view(), &ccfg).map_err(|e| e.to_string())?, base, "cluster batch permutation")?;
    }
    Ok(format!("50 instances, max deviation {worst:.1e}"))
}

fn tiny_config() -> (RunConfig, Dataset) {
    let data = make_synthetic(&SyntheticSpec {
        num_classes: 2,
        per_class: 8,
        image_size: (16, 16),
        ..SyntheticSpec::default()
    })
    .expect("synthetic data");
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::small(2);
    cfg.aug.weak.output_size = 16;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 3;
    cfg.train.eval_every = 1;
    cfg.train.seed = 11;
    (cfg, data)
}

fn a9() -> Outcome {
    let (cfg, data) = tiny_config();
    let err = |e: sacc_core::train::TrainError| e.to_string();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let mut outs = Vec::new();
    for d in &dirs {
        let opts = TrainOptions { out_dir: Some(d.path().to_path_buf()), resume: None };
        outs.push(train_dataset(&cfg, &data, &opts).map_err(err)?);
    }
    let logs: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| std::fs::read(d.path().join("metrics.jsonl")).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    check(!logs[0].is_empty() && logs[0] == logs[1], "metric logs of identical runs differ")?;
    let ckpt_a = outs[0].trainer.checkpoint().map_err(err)?.to_bytes();
    check(ckpt_a == outs[1].trainer.checkpoint().map_err(err)?.to_bytes(), "final weights of identical runs differ")?;

    // stop after 2 of 3 epochs, round-trip the checkpoint through bytes, resume
    let mut short = cfg.clone();
    short.train.epochs = 2;
    let first = train_dataset(&short, &data, &TrainOptions::default()).map_err(err)?;
    let ckpt = Checkpoint::from_bytes(&first.trainer.checkpoint().map_err(err)?.to_bytes()).map_err(|e| e.to_string())?;
    let resumed = train_dataset(&cfg, &data, &TrainOptions { out_dir: None, resume: Some(ckpt) }).map_err(err)?;
    let full = &outs[0].record.steps;
    let mut stitched = first.record.steps.clone();
    stitched.extend(resumed.record.steps.iter().cloned());
    check(stitched == *full, "resumed loss trajectory differs from the uninterrupted run")?;
    check(resumed.trainer.checkpoint().map_err(err)?.to_bytes() == ckpt_a, "resumed final weights differ")?;

    // labels are only read by evaluation
    let unlabeled = train(&cfg, data.images(), None, &TrainOptions::default()).map_err(err)?;
    check(
        unlabeled.trainer.checkpoint().map_err(err)?.to_bytes() == ckpt_a,
        "training without labels changed the weights",
    )?;
    Ok(format!(
        "{} log bytes identical; resume after epoch 2 matches {} steps bitwise",
        logs[0].len(),
        full.len()
    ))
}

fn natural(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let (a, b, c): (f32, f32, f32) = (rng.random(), rng.random(), rng.random());
    let f = rng.random_range(2.0f32..9.0);
    Image::from_fn(w, h, |x, y| {
        let u = x as f32 / w as f32;
        let v = y as f32 / h as f32;
        [
            (0.5 + 0.45 * (f * u + a * 6.0).sin() * v).clamp(0.0, 1.0),
            (b * 0.6 + 0.4 * u * v).clamp(0.0, 1.0),
            (0.5 + 0.45 * (f * (u - v) + c * 6.0).cos()).clamp(0.0, 1.0),
        ]
    })
}

fn a10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA10);
    let weak = WeakAugSpec::default();
    let strong = StrongAugSpec::default();
    let in_range = |img: &Image| img.as_slice().iter().all(|v| (0.0..=1.0).contains(v));
    let (mut dw, mut ds) = (0.0, 0.0);
    for i in 0..100 {
        let (w, h) = [(224, 224), (96, 64), (300, 250), (32, 32)][i % 4];
        let img = natural(&mut rng, w, h);
        let views = sample_views(&img, &weak, &strong, &mut rng).map_err(|e| e.to_string())?;
        for v in [&views.strong, &views.weak_a, &views.weak_b] {
            check(v.width() == 224 && v.height() == 224, format!("view is {}x{}", v.width(), v.height()))?;
            check(in_range(v), "view left [0, 1]")?;
        }
        let base = img.resize(224, 224);
        dw += base.mean_abs_diff(&views.weak_a);
        ds += base.mean_abs_diff(&views.strong);
        for op in StrongOp::ALL {
            let out = apply_strong(&base, &StrongAugSpec::only(op), &mut rng).map_err(|e| e.to_string())?;
            check(in_range(&out), format!("{op} left [0, 1]"))?;
        }
    }
    dw /= 100.0;
    ds /= 100.0;

    let img = natural(&mut rng, 224, 224);
    let same = apply_weak(&img, &WeakAugSpec::identity(224), &mut rng).map_err(|e| e.to_string())?;
    check(same == img, "identity weak spec changed the image")?;
    let same = apply_strong(&img, &StrongAugSpec::only(StrongOp::Identity), &mut rng).map_err(|e| e.to_string())?;
    check(same == img, "identity-only strong spec changed the image")?;

    check(ds > dw, format!("strong distortion {ds:.4} not above weak {dw:.4}"))?;
    Ok(format!("mean L1 distortion strong {ds:.4} > weak {dw:.4}"))
}

fn main() {
    let mut results: Vec<(&str, &str, Outcome)> = vec![
        ("A1", "loss oracle equivalence", a1()),
        ("A2", "gradient check", a2()),
        ("A6", "metric oracles", a6()),
        ("A7", "anti-collapse", a7()),
        ("A8", "invariances", a8()),
        ("A9", "determinism and resume", a9()),
        ("A10", "augmentation contracts", a10()),
    ];
    let skip = std::env::var_os("SACC_ACCEPTANCE_SKIP_TRAINING").is_some();
    let desk = if skip {
        None
    } else {
        eprintln!("training desk-scale runs for A3-A5 ...");
        Some(desk_runs())
    };
    match desk {
        None => {}
        Some(Ok(runs)) => {
            results.push(("A3", "desk-scale training", a3(&runs)));
            results.push(("A4", "view ablation ordering", a4(&runs)));
            results.push(("A5", "projector ablation ordering", a5(&runs)));
        }
        Some(Err(e)) => {
            for (id, name) in [("A3", "desk-scale training"), ("A4", "view ablation ordering"), ("A5", "projector ablation ordering")] {
                results.push((id, name, Err(e.clone())));
            }
        }
    }
    results.sort_by_key(|(id, _, _)| id[1..].parse::<u32>().unwrap());
    let mut failed = 0;
    for (id, name, r) in &results {
        match r {
            Ok(d) => println!("{id:<4} PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("{id:<4} FAIL  {name}: {d}");
            }
        }
    }
    if skip {
        for (id, name) in [("A3", "desk-scale training"), ("A4", "view ablation ordering"), ("A5", "projector ablation ordering")] {
            println!("{id:<4} SKIP  {name}");
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
