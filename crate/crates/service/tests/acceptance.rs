//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Every check carries its own oracle rather than reusing library helpers
//! for the quantity under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use comixify_core::aesthetics::{emd_loss, popularity_label, train_svr, RatingDistribution, SvrConfig, BINS};
use comixify_core::features::FeatureMatrix;
use comixify_core::kts::{kernel_matrix, optimal_m_segmentation, KernelMatrix, SegmentCost};
use comixify_core::kts::Segmentation;
use comixify_core::selector::select_keyframes;
use comixify_core::styletransfer::*;
use comixify_core::summarizer::{dsn_logits, episode_reward, log_prob_surrogate, train_dsn, DsnPolicy, DsnTrainConfig, SelectionMask};
use comixify_core::synthetic::{toy_comics, toy_photos, two_cluster_corpus};
use comixify_core::Frame;
use comixify_nn::{init, BoundParams, ParamStore, Tape, Var};
use nalgebra::DMatrix;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// --- KTS --------------------------------------------------------------------

/// Within-segment scatter straight from the kernel: Σ K_ii − (1/len) Σ K_ij.
fn direct_scatter(k: &KernelMatrix, a: usize, b: usize) -> f64 {
    let diag: f64 = (a..b).map(|i| k.k[[i, i]]).sum();
    let block: f64 = (a..b).flat_map(|i| (a..b).map(move |j| (i, j))).map(|(i, j)| k.k[[i, j]]).sum();
    diag - block / (b - a) as f64
}

/// Lowest-cost change points over every `(m−1)`-subset of `1..t`; costs are
/// accumulated right to left and ties keep the lexicographically first list.
fn exhaustive(cost: &SegmentCost, t: usize, m: usize) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    let mut stack: Vec<usize> = Vec::new();
    fn go(cost: &SegmentCost, t: usize, left: usize, from: usize, stack: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if left == 0 {
            let mut b = vec![0];
            b.extend_from_slice(stack);
            b.push(t);
            let c = b.windows(2).rev().fold(0.0, |acc, w| cost.scatter(w[0], w[1]) + acc);
            if c < best.0 {
                *best = (c, stack.clone());
            }
            return;
        }
        for p in from..t {
            stack.push(p);
            go(cost, t, left - 1, p + 1, stack, best);
            stack.pop();
        }
    }
    go(cost, t, m - 1, 1, &mut stack, &mut best);
    best
}

fn kts_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9001);
    let mut checks = 0;
    for case in 0..200 {
        let t = rng.random_range(1..=12);
        let d = rng.random_range(1..=4);
        let x = if case % 2 == 0 {
            Array2::from_shape_fn((t, d), |_| rng.random_range(-2..=2) as f32 * 0.5)
        } else {
            Array2::from_shape_fn((t, d), |_| rng.random_range(-1.0f32..1.0))
        };
        let k = kernel_matrix(&FeatureMatrix::new(x, "acceptance")).map_err(|e| e.to_string())?;
        let cost = SegmentCost::new(&k);
        for a in 0..t {
            for b in a + 1..=t {
                let (fast, slow) = (cost.scatter(a, b), direct_scatter(&k, a, b));
                ensure!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()), "scatter({a},{b}) {fast} vs {slow}");
            }
        }
        for m in 1..=t {
            let dp = optimal_m_segmentation(&k, m).map_err(|e| e.to_string())?;
            let (c, cps) = exhaustive(&cost, t, m);
            ensure!(dp.cost == c, "case {case} m={m}: dp {} vs exhaustive {c}", dp.cost);
            ensure!(dp.change_points == cps, "case {case} m={m}: {:?} vs {cps:?}", dp.change_points);
            checks += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2} s");
    Ok(format!("{checks} (matrix, m) pairs equal, {secs:.2} s"))
}

// --- selector ---------------------------------------------------------------

fn selector_oracle_keyframes(t: usize, cps: &[usize], hl: &[f64], aes: &[f64], n: usize, k: usize) -> Vec<usize> {
    let mut b = vec![0];
    b.extend_from_slice(cps);
    b.push(t);
    let segs: Vec<(usize, usize)> = b.windows(2).map(|w| (w[0], w[1])).collect();
    let mean = |&(a, e): &(usize, usize)| hl[a..e].iter().sum::<f64>() / (e - a) as f64;
    // rank segments by (mean desc, index asc) with a stable sort
    let mut order: Vec<usize> = (0..segs.len()).collect();
    order.sort_by(|&i, &j| mean(&segs[j]).partial_cmp(&mean(&segs[i])).unwrap().then(i.cmp(&j)));
    let mut chosen: Vec<usize> = order[..n].to_vec();
    chosen.sort();
    let peaks: Vec<usize> = chosen
        .iter()
        .map(|&s| {
            let (a, e) = segs[s];
            let mut best = a;
            for f in a..e {
                if hl[f] > hl[best] {
                    best = f;
                }
            }
            best
        })
        .collect();
    peaks
        .chunks(n / k)
        .map(|g| {
            let mut best = g[0];
            for &f in g {
                if aes[f] > aes[best] {
                    best = f;
                }
            }
            best
        })
        .collect()
}

fn selector_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for case in 0..100 {
        let t = rng.random_range(1..=10);
        let cps: Vec<usize> = (1..t).filter(|_| rng.random_bool(0.4)).collect();
        let m = cps.len() + 1;
        let hl: Vec<f64> = (0..t).map(|_| rng.random_range(0..4) as f64 / 4.0).collect();
        let aes: Vec<f64> = (0..t).map(|_| rng.random_range(0..3) as f64).collect();
        let n = rng.random_range(1..=m);
        let divisors: Vec<usize> = (1..=n).filter(|d| n % d == 0).collect();
        let k = divisors[rng.random_range(0..divisors.len())];
        let seg = Segmentation { change_points: cps.clone(), cost: 0.0, m, t };
        let got = select_keyframes(&seg, &hl, n, k, |f| Ok(aes[f])).map_err(|e| e.to_string())?;
        let want = selector_oracle_keyframes(t, &cps, &hl, &aes, n, k);
        ensure!(got.frame_indices == want, "case {case}: {:?} vs {want:?}", got.frame_indices);
        for (name, warp) in [("exp", 0usize), ("cube", 1), ("affine", 2)] {
            let g = |v: f64| match warp {
                0 => (1.3 * v).exp(),
                1 => v * v * v + v,
                _ => 4.0 * v - 7.0,
            };
            let w = select_keyframes(&seg, &hl, n, k, |f| Ok(g(aes[f]))).map_err(|e| e.to_string())?;
            ensure!(w.frame_indices == got.frame_indices, "case {case}: {name} transform changed the selection");
        }
    }
    Ok("100 instances equal the brute-force rules; 3 monotone transforms leave all selections unchanged".into())
}

// --- loss units ---------------------------------------------------------------

fn loss_units() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let fm = |v: f64| FeatureMap::from_rows(&[vec![v]], "l").unwrap();
    let c = content_loss(&fm(1.0), &fm(0.0)).map_err(|e| e.to_string())?;
    ensure!((c - 0.5).abs() < 1e-9, "content loss {c}");
    let g = |v: f64| GramMatrix { g: DMatrix::from_element(1, 1, v), source_layer: "l".into(), positions: 1 };
    let cfg = StyleLossConfig { layer_weights: vec![1.0], content_weight: 1.0, style_weight: 1.0 };
    let s = style_loss(&[g(2.0)], &[g(0.0)], &cfg).map_err(|e| e.to_string())?;
    ensure!((s - 0.5).abs() < 1e-9, "style loss {s}");
    let f = ArrayD::from_elem(IxDyn(&[1, 4]), 0.3);
    let gl = generator_loss(&[0.5], f.view(), f.view(), 10.0).map_err(|e| e.to_string())?;
    ensure!((gl - ln2).abs() < 1e-9, "generator term {gl}");
    let dl = discriminator_loss(&[0.5; 3], &[0.5; 2], &[0.5; 4]).map_err(|e| e.to_string())?;
    ensure!((dl - 3.0 * ln2).abs() < 1e-9, "discriminator loss {dl}");
    Ok(format!("content {c}, style {s}, generator {gl:.12}, discriminator {dl:.12}"))
}

// --- EMD ----------------------------------------------------------------------

/// `sqrt(mean_k (CDF_p(k) − CDF_q(k))²)` with the CDFs summed from scratch.
fn emd_oracle(p: &[f64; BINS], q: &[f64; BINS]) -> f64 {
    let mut acc = 0.0;
    for k in 0..BINS {
        let cp: f64 = p[..=k].iter().sum();
        let cq: f64 = q[..=k].iter().sum();
        acc += (cp - cq) * (cp - cq);
    }
    (acc / BINS as f64).sqrt()
}

fn emd() -> Outcome {
    let e = |a: &RatingDistribution, b: &RatingDistribution| emd_loss(a, b, 2.0).map_err(|e| e.to_string());
    let v = e(&RatingDistribution::one_hot(1), &RatingDistribution::one_hot(10))?;
    ensure!((v - 0.94868).abs() < 1e-5, "one-hot(1) vs one-hot(10) = {v}");
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut draw = || {
        let mut p = [0.0; BINS];
        p.iter_mut().for_each(|x| *x = rng.random_range(0.0..1.0f64).powi(2));
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        RatingDistribution { p }
    };
    let mut worst_slack = f64::INFINITY;
    for i in 0..1000 {
        let (p, q, r) = (draw(), draw(), draw());
        let pq = e(&p, &q)?;
        ensure!((pq - emd_oracle(&p.p, &q.p)).abs() < 1e-12, "pair {i} disagrees with the oracle");
        ensure!(e(&p, &p)? == 0.0, "pair {i}: d(p,p) != 0");
        ensure!(pq > 0.0, "pair {i}: distinct distributions at distance 0");
        ensure!(pq == e(&q, &p)?, "pair {i}: asymmetric");
        let slack = e(&p, &r)? + e(&r, &q)? - pq;
        ensure!(slack >= -1e-9, "triple {i}: triangle inequality violated by {slack}");
        worst_slack = worst_slack.min(slack);
    }
    Ok(format!("one-hot distance {v:.6}; 1000 pairs/triples satisfy the axioms (min triangle slack {worst_slack:.2e})"))
}

// --- statistic matching -------------------------------------------------------

fn row_stats(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    (0..m.nrows())
        .map(|r| {
            let row: Vec<f64> = m.row(r).iter().copied().collect();
            let mu = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / row.len() as f64;
            (mu, var.sqrt())
        })
        .collect()
}

fn sample_cov(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, cols) = (m.nrows(), m.ncols());
    let means: Vec<f64> = (0..n).map(|r| m.row(r).sum() / cols as f64).collect();
    DMatrix::from_fn(n, n, |i, j| {
        (0..cols).map(|c| (m[(i, c)] - means[i]) * (m[(j, c)] - means[j])).sum::<f64>() / (cols - 1) as f64
    })
}

fn condition(c: &DMatrix<f64>) -> f64 {
    let e = c.clone().symmetric_eigenvalues();
    if e.min() <= 0.0 {
        f64::INFINITY
    } else {
        e.max() / e.min()
    }
}

fn statistic_matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let (mut worst_adain, mut worst_wct) = (0.0f64, 0.0f64);
    let mut maps = 0;
    while maps < 100 {
        let n = rng.random_range(1..6);
        let (mc, ms) = (rng.random_range(n + 8..64), rng.random_range(n + 8..64));
        let c = DMatrix::from_fn(n, mc, |_, _| rng.random_range(-2.0..2.0));
        let s = DMatrix::from_fn(n, ms, |_, _| rng.random_range(-2.0..2.0) * 1.5 + 0.7);
        if condition(&sample_cov(&c)) > 1e4 || condition(&sample_cov(&s)) > 1e4 {
            continue;
        }
        maps += 1;
        let cf = FeatureMap::new(c, "l").map_err(|e| e.to_string())?;
        let sf = FeatureMap::new(s.clone(), "l").map_err(|e| e.to_string())?;
        let a = adain(&cf, &sf).map_err(|e| e.to_string())?;
        for ((mo, so), (mt, st)) in row_stats(&a.values).into_iter().zip(row_stats(&s)) {
            worst_adain = worst_adain.max((mo - mt).abs()).max((so - st).abs());
        }
        let w = wct(&cf, &sf).map_err(|e| e.to_string())?;
        let target = sample_cov(&s);
        worst_wct = worst_wct.max((sample_cov(&w.values) - &target).norm() / target.norm());
    }
    ensure!(worst_adain < 1e-4, "AdaIN statistic error {worst_adain:e}");
    ensure!(worst_wct < 1e-4, "WCT relative covariance error {worst_wct:e}");
    Ok(format!("100 maps; AdaIN max error {worst_adain:.1e}, WCT max relative error {worst_wct:.1e}"))
}

// --- gradient checks ----------------------------------------------------------

fn masks(t: usize) -> Vec<Vec<bool>> {
    (0..1u32 << t).map(|b| (0..t).map(|i| b >> i & 1 == 1).collect()).collect()
}

fn mask_prob(mask: &[bool], probs: &[f64]) -> f64 {
    mask.iter().zip(probs).map(|(&a, &p)| if a { p } else { 1.0 - p }).product()
}

fn expected_reward(params: &ParamStore<f64>, x: &Array2<f32>, hidden: usize) -> f64 {
    let mut tape = Tape::new();
    let p = params.bind_const(&mut tape);
    let z = dsn_logits(&mut tape, &p, x.mapv(f64::from).into_dyn(), hidden);
    let probs: Vec<f64> = tape.value(z).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    masks(x.nrows())
        .iter()
        .map(|m| mask_prob(m, &probs) * episode_reward(&x.view(), &SelectionMask::from_bools(m)).unwrap())
        .sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn policy_gradient_check() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0f32..1.0));
    let hidden = 3;
    let params: ParamStore<f64> = DsnPolicy::new(2, hidden, 5).params.cast();
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let z = dsn_logits(&mut tape, &p, x.mapv(f64::from).into_dyn(), hidden);
    let probs: Vec<f64> = tape.value(z).iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    let all = masks(3);
    ensure!(all.len() == 8, "expected 8 masks");
    let coeffs: Vec<f64> = all
        .iter()
        .map(|m| mask_prob(m, &probs) * episode_reward(&x.view(), &SelectionMask::from_bools(m)).unwrap())
        .collect();
    let surrogate = log_prob_surrogate(&mut tape, z, &all, &coeffs);
    let mut g = tape.backward(surrogate);
    let analytic = p.collect_grads(&tape, &mut g);
    let (mut a, mut nmr) = (Vec::new(), Vec::new());
    let h = 1e-6;
    for (name, grad) in &analytic {
        for i in 0..grad.len() {
            let shift = |d: f64| {
                let mut q = params.clone();
                q.get_mut(name).unwrap().as_slice_mut().unwrap()[i] += d;
                expected_reward(&q, &x, hidden)
            };
            a.push(grad.as_slice().unwrap()[i]);
            nmr.push((shift(h) - shift(-h)) / (2.0 * h));
        }
    }
    Ok(rel_err(&a, &nmr))
}

fn toy_layer(rng: &mut ChaCha8Rng, p: &mut ParamStore<f64>, name: &str, co: usize, ci: usize, k: usize) {
    p.insert(format!("{name}.w"), init::normal(rng, &[co, ci, k, k], 0.4));
    p.insert(format!("{name}.b"), init::normal(rng, &[co], 0.1));
}

fn conv(t: &mut Tape<f64>, p: &BoundParams, name: &str, x: Var, stride: usize) -> Var {
    let w = p.var(&format!("{name}.w"));
    let pad = t.shape(w)[2] / 2;
    t.conv2d(x, w, Some(p.var(&format!("{name}.b"))), stride, pad)
}

struct ToyGan {
    g: ParamStore<f64>,
    d: ParamStore<f64>,
    phi: ParamStore<f64>,
    photos: ArrayD<f64>,
    comics: ArrayD<f64>,
    edges: ArrayD<f64>,
}

impl ToyGan {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut g, mut d, mut phi) = (ParamStore::new(), ParamStore::new(), ParamStore::new());
        toy_layer(&mut rng, &mut g, "g1", 3, 3, 3);
        toy_layer(&mut rng, &mut g, "g2", 3, 3, 3);
        toy_layer(&mut rng, &mut g, "g3", 3, 3, 3);
        toy_layer(&mut rng, &mut d, "d1", 3, 3, 3);
        toy_layer(&mut rng, &mut d, "d2", 3, 3, 3);
        toy_layer(&mut rng, &mut d, "d3", 1, 3, 1);
        toy_layer(&mut rng, &mut phi, "phi", 3, 3, 3);
        let mut img = || init::uniform::<f64, _>(&mut rng, &[2, 3, 4, 4], 1.0);
        let (photos, comics, edges) = (img(), img(), img());
        ToyGan { g, d, phi, photos, comics, edges }
    }

    fn loss(&self, g: &ParamStore<f64>, d: &ParamStore<f64>, generator: bool, grads: bool) -> (f64, Vec<f64>) {
        let mut t = Tape::new();
        let (gp, dp) = if generator { (g.bind(&mut t), d.bind_const(&mut t)) } else { (g.bind_const(&mut t), d.bind(&mut t)) };
        let pp = self.phi.bind_const(&mut t);
        let gen = |t: &mut Tape<f64>, x: Var| {
            let h = conv(t, &gp, "g1", x, 1);
            let h = t.relu(h);
            let h = conv(t, &gp, "g2", h, 1);
            let h = t.relu(h);
            let h = conv(t, &gp, "g3", h, 1);
            t.tanh(h)
        };
        let disc = |t: &mut Tape<f64>, x: Var| {
            let h = conv(t, &dp, "d1", x, 1);
            let h = t.leaky_relu(h, 0.2);
            let h = conv(t, &dp, "d2", h, 2);
            let h = t.leaky_relu(h, 0.2);
            conv(t, &dp, "d3", h, 1)
        };
        let x = t.constant(self.photos.clone());
        let y = gen(&mut t, x);
        let loss = if generator {
            let z = disc(&mut t, y);
            let h = conv(&mut t, &pp, "phi", x, 1);
            let fx = t.relu(h);
            let h = conv(&mut t, &pp, "phi", y, 1);
            let fy = t.relu(h);
            generator_loss_logits(&mut t, z, fx, fy, 10.0)
        } else {
            let c = t.constant(self.comics.clone());
            let e = t.constant(self.edges.clone());
            let (zc, zg, ze) = (disc(&mut t, c), disc(&mut t, y), disc(&mut t, e));
            discriminator_loss_logits(&mut t, zc, zg, ze)
        };
        let value = t.item(loss);
        if !grads {
            return (value, Vec::new());
        }
        let mut back = t.backward(loss);
        let bound = if generator { &gp } else { &dp };
        let flat = bound.collect_grads(&t, &mut back).into_iter().flat_map(|(_, v)| v.into_iter().collect::<Vec<_>>()).collect();
        (value, flat)
    }

    fn check(&self, generator: bool) -> f64 {
        let (_, analytic) = self.loss(&self.g, &self.d, generator, true);
        let target = if generator { &self.g } else { &self.d };
        let h = 1e-6;
        let mut numeric = Vec::new();
        for name in target.names() {
            let len = target.get(&name).unwrap().len();
            for i in 0..len {
                let shift = |dlt: f64| {
                    let mut p = target.clone();
                    p.get_mut(&name).unwrap().as_slice_mut().unwrap()[i] += dlt;
                    if generator { self.loss(&p, &self.d, true, false).0 } else { self.loss(&self.g, &p, false, false).0 }
                };
                numeric.push((shift(h) - shift(-h)) / (2.0 * h));
            }
        }
        rel_err(&analytic, &numeric)
    }
}

fn gradient_checks() -> Outcome {
    let pg = policy_gradient_check()?;
    let toy = ToyGan::new();
    let (g, d) = (toy.check(true), toy.check(false));
    ensure!(pg < 1e-3, "policy gradient relative error {pg:e}");
    ensure!(g < 1e-3, "generator loss relative error {g:e}");
    ensure!(d < 1e-3, "discriminator loss relative error {d:e}");
    Ok(format!("relative errors: policy {pg:.1e}, generator {g:.1e}, discriminator {d:.1e}"))
}

// --- training smoke ----------------------------------------------------------

const TEN_MINUTES: f64 = 600.0;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_d(frames: &[Frame], d: &DiscriminatorWeights) -> f64 {
    let refs: Vec<&Frame> = frames.iter().collect();
    mean(&discriminate(&refs, d))
}

fn training_smoke() -> Outcome {
    let t = Instant::now();
    let corpus = two_cluster_corpus(4, 20, 14, 8, 3);
    let cfg = DsnTrainConfig { hidden_dim: 32, epochs: 50, episodes: 5, lr: 3e-3, seed: 5, ..Default::default() };
    let (_, log) = train_dsn(&corpus, &cfg, None).map_err(|e| e.to_string())?;
    let (r1, r50) = (log[0].mean_reward, log[49].mean_reward);
    let dsn_s = t.elapsed().as_secs_f64();
    ensure!(r50 > r1, "DSN reward epoch 1 {r1} vs epoch 50 {r50}");

    let gan = GanTrainConfig {
        generator: GeneratorConfig { base: 8, res_blocks: 2 },
        discriminator: DiscriminatorConfig { base: 8 },
        lr_generator: 2e-3,
        lr_discriminator: 3e-3,
        seed: 1,
        ..Default::default()
    };
    let content = ContentNet::random(8, 7);
    let t = Instant::now();
    let photos = toy_photos(8, 64, 1);
    let (g, glog) = pretrain_generator(&photos, 200, &content, &gan, None).map_err(|e| e.to_string())?;
    let g_s = t.elapsed().as_secs_f64();
    let (g0, g200) = (glog[0].loss, glog[199].loss);
    ensure!(g200 <= 0.5 * g0, "generator pretraining {g0} -> {g200}");

    let t = Instant::now();
    let triplet = TrainingTriplet::new(toy_photos(16, 64, 2), toy_comics(16, 64, 3)).map_err(|e| e.to_string())?;
    let (d, _) = pretrain_discriminator(&triplet, 200, &gan, None).map_err(|e| e.to_string())?;
    let d_s = t.elapsed().as_secs_f64();
    let (dc, dp) = (mean_d(&triplet.comics_images, &d), mean_d(&triplet.real_photos, &d));
    ensure!(dc > 0.8 && dp < 0.2, "D(comics) {dc}, D(photos) {dp}");

    let t = Instant::now();
    let run = train_comixgan(&triplet, &content, &gan, Some((g, d))).map_err(|e| e.to_string())?;
    let adv_s = t.elapsed().as_secs_f64();
    ensure!(run.generator_steps == gan.steps, "generator steps {}", run.generator_steps);
    ensure!(run.log.iter().all(|r| r.loss.is_finite()), "non-finite adversarial loss");
    let gan_total = g_s + d_s + adv_s;
    for (what, s) in [("DSN", dsn_s), ("ComixGAN", gan_total)] {
        ensure!(s < TEN_MINUTES, "{what} desk-scale run took {s:.0} s");
    }
    Ok(format!(
        "DSN reward {r1:.4} -> {r50:.4} ({dsn_s:.1} s); G content loss {g0:.4} -> {g200:.4}; \
         D(comics) {dc:.3}, D(photos) {dp:.3}; ComixGAN pretrain+{} steps {gan_total:.1} s",
        gan.steps
    ))
}

// --- end to end ----------------------------------------------------------------

fn pngs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let mut runs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_comixify"))
            .args(["run", "--sample", "four_seasons", "--k", "8", "--style", "comixgan", "--out"])
            .arg(&out)
            .env_remove("COMIXIFY_MODELS_DIR")
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "run failed: {}", String::from_utf8_lossy(&o.stderr));
        runs.push(pngs(&out));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(!runs[0].is_empty(), "no pages written");
    ensure!(runs[0] == runs[1], "pages differ between runs");
    ensure!(secs < 60.0, "two runs took {secs:.1} s");
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} page(s), {bytes} bytes identical across runs, {secs:.1} s for both", runs[0].len()))
}

// --- popularity ----------------------------------------------------------------

/// Spearman's rho from average ranks.
fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ranks = |v: &[f64]| {
        let mut r = vec![0.0; v.len()];
        for i in 0..v.len() {
            let less = v.iter().filter(|&&x| x < v[i]).count() as f64;
            let equal = v.iter().filter(|&&x| x == v[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn popularity() -> Outcome {
    for (views, followers, want) in [(999, 1000, 0.0), (0, 1, 0.0), (9999, 100, 100f64.ln())] {
        let v = popularity_label(views, followers).map_err(|e| e.to_string())?;
        ensure!((v - want).abs() < 1e-9, "label({views}, {followers}) = {v}, want {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let (n, split) = (500, 400);
    let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0f64..1.0));
    let y: Vec<f64> = x.rows().into_iter().map(|r| r[0].powi(3) + 0.5 * r[0] + 0.1 * r[1]).collect();
    let train_x = x.slice(ndarray::s![..split, ..]).to_owned();
    let model = train_svr(&train_x, &y[..split], &SvrConfig::default()).map_err(|e| e.to_string())?;
    let pred: Vec<f64> = (split..n).map(|i| model.predict(x.row(i))).collect();
    let rho = spearman_oracle(&pred, &y[split..]);
    ensure!(rho >= 0.9, "held-out Spearman {rho}");
    Ok(format!("labels exact; held-out Spearman {rho:.4} on {} samples", n - split))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("KTS oracle equivalence", kts_oracle),
        ("Selector oracle and monotone invariance", selector_oracle),
        ("Loss unit values", loss_units),
        ("EMD value and metric axioms", emd),
        ("AdaIN / WCT statistic matching", statistic_matching),
        ("Gradient checks", gradient_checks),
        ("Training smoke properties", training_smoke),
        ("End-to-end CLI determinism", end_to_end),
        ("Popularity labels and SVR Spearman", popularity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS  {name} [{secs:.1} s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.1} s]: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
