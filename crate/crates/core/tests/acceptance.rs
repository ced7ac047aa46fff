//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the terminal; exits nonzero if
//! any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{coded_state, front_camera};
use grdo::codec::{arithmetic_code, decode, encode, rearrange, remove_pruned, EncodeOptions, FrequencyTable, HEADER_BYTES, PROB_TOTAL};
use grdo::ecvq::{select, AttributeTag, Codebook, EntropyModel};
use grdo::gaussian::{inverse_sigmoid, sigmoid, GaussianCloud};
use grdo::pruning::{gaussian_prune_loss, mask_forward, sh_prune_loss, MaskSet, SH_DEGREE_WEIGHTS};
use grdo::render::{render, render_backward, RenderOptions};
use grdo::train::{evaluate, pretrain, scene, train_rate_point, Dataset, TrainConfig};
use grdo::{ply, ModelState};
use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// 1. Gradients -----------------------------------------------------------

/// Five large, semi-transparent Gaussians that cover the whole 16x16 image,
/// so no perturbation crosses the contribution cutoff or the early stop.
fn gradient_scene() -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cloud = GaussianCloud::with_len(5);
    for i in 0..5 {
        cloud.positions[i] = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            -0.4 + 0.2 * i as f64 + rng.random_range(-0.05..0.05),
        ];
        cloud.log_scales[i] = std::array::from_fn(|_| rng.random_range(1.0f64..1.6).ln());
        cloud.rotations[i] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        cloud.opacity_logits[i] = inverse_sigmoid(rng.random_range(0.2..0.6));
        for c in cloud.sh_coeffs[i].iter_mut() {
            *c = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        }
    }
    cloud
}

fn image(cloud: &GaussianCloud) -> Vec<f64> {
    render(cloud, &front_camera(16), None, None, &RenderOptions::default()).unwrap().0.data
}

/// `sum w * (a - b)`, differencing per pixel first to limit cancellation.
fn weighted_difference(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((a, b), w)| (a - b) * w).sum()
}

fn gradients() -> Outcome {
    let cloud = gradient_scene();
    let cam = front_camera(16);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, tape) = render(&cloud, &cam, None, None, &RenderOptions::default()).unwrap();
    let g = render_backward(&tape, &w).map_err(|e| e.to_string())?;

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    let mut fd = |name: String, analytic: f64, poke: &dyn Fn(&mut GaussianCloud, f64)| {
        let mut p = cloud.clone();
        poke(&mut p, h);
        let mut m = cloud.clone();
        poke(&mut m, -h);
        let numeric = weighted_difference(&image(&p), &image(&m), &w) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, format!("{name}: analytic {analytic:.6e}, numeric {numeric:.6e}"));
        }
    };
    let mut checked = 0;
    for i in 0..5 {
        for k in 0..3 {
            fd(format!("position[{i}][{k}]"), g.positions[i][k], &|c, d| c.positions[i][k] += d);
            fd(format!("log_scale[{i}][{k}]"), g.log_scales[i][k], &|c, d| c.log_scales[i][k] += d);
        }
        for k in 0..4 {
            fd(format!("rotation[{i}][{k}]"), g.rotations[i][k], &|c, d| c.rotations[i][k] += d);
        }
        fd(format!("opacity[{i}]"), g.opacity_logits[i], &|c, d| c.opacity_logits[i] += d);
        for j in 0..16 {
            for ch in 0..3 {
                fd(format!("sh[{i}][{j}][{ch}]"), g.sh_coeffs[i][j][ch], &|c, d| c.sh_coeffs[i][j][ch] += d);
            }
        }
        checked += 3 + 3 + 4 + 1 + 48;
    }
    check(worst.0 < 1e-3, format!("worst relative error {:.2e} at {}", worst.0, worst.1))?;

    // Straight-through mask gradients: the surrogate is the sigmoid
    // derivative, and the render gradient with respect to a hard mask equals
    // what scaling the masked quantity predicts.
    let mut mask_err = 0.0f64;
    for raw in [-6.0, -2.5, -0.3, 0.0, 0.7, 2.197, 5.0] {
        let s = mask_forward(raw, 0.1);
        let numeric = (sigmoid(raw + 1e-6) - sigmoid(raw - 1e-6)) / 2e-6;
        let exact = sigmoid(raw) * (1.0 - sigmoid(raw));
        mask_err = mask_err.max((s.ste_grad - exact).abs()).max((s.ste_grad - numeric).abs());
    }
    for i in 0..5 {
        let a = sigmoid(cloud.opacity_logits[i]);
        // The hard mask scales opacity and the activated scales, so at
        // m = 1 its gradient is dL/do / (1 - a) + sum_k dL/d(log s_k).
        let expect = g.opacity_logits[i] / (1.0 - a) + g.log_scales[i].iter().sum::<f64>();
        mask_err = mask_err.max((g.gaussian_mask[i] - expect).abs());
        for l in 1..=3 {
            let (lo, hi) = grdo::gaussian::sh_degree_range(l);
            let expect: f64 = (lo..hi).flat_map(|j| (0..3).map(move |c| (j, c))).map(|(j, c)| cloud.sh_coeffs[i][j][c] * g.sh_coeffs[i][j][c]).sum();
            mask_err = mask_err.max((g.sh_mask[i][l - 1] - expect).abs());
        }
    }
    check(mask_err < 1e-9, format!("mask gradient error {mask_err:.2e}"))?;
    Ok(format!("{checked} attribute gradients, worst relative error {:.2e} ({}); mask error {mask_err:.1e}", worst.0, worst.1))
}

// 2. ECVQ selection ----------------------------------------------------------

/// Independent RD scan: softmax evaluated directly, first minimum wins.
fn naive_select(x: &[f64], codewords: &[f64], logits: &[f64], lambda: f64) -> usize {
    let d = x.len();
    let z: f64 = logits.iter().map(|w| (-w).exp()).sum();
    let mut best = (0, f64::INFINITY);
    for (m, w) in logits.iter().enumerate() {
        let rate = -((-w).exp() / z).ln();
        let dist: f64 = (0..d).map(|k| (x[k] - codewords[m * d + k]).powi(2)).sum();
        let cost = rate / lambda + dist;
        if cost < best.1 {
            best = (m, cost);
        }
    }
    best.0
}

fn ecvq_oracle() -> Outcome {
    let trials = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut disagree = 0;
    let mut ties = 0;
    for _ in 0..trials {
        let tag = AttributeTag::ALL[rng.random_range(0..6)];
        let d = tag.dim();
        let m = rng.random_range(1..=24);
        let mut cw: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut logits: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        if m > 1 && rng.random_bool(0.05) {
            // Exact duplicate codeword and logit: the tie rule decides.
            let (a, b) = (rng.random_range(0..m), rng.random_range(0..m));
            let copy = cw[a * d..(a + 1) * d].to_vec();
            cw[b * d..(b + 1) * d].copy_from_slice(&copy);
            logits[b] = logits[a];
            ties += 1;
        }
        let lambda = match rng.random_range(0..4) {
            0 => f64::INFINITY,
            1 => 256.0,
            _ => 10f64.powf(rng.random_range(-3.0..4.0)),
        };
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let cb = Codebook::new(tag, cw.clone()).map_err(|e| e.to_string())?;
        let got = select(&x, &cb, &EntropyModel { logits: logits.clone() }, lambda).map_err(|e| e.to_string())?;
        if got.index != naive_select(&x, &cw, &logits, lambda) {
            disagree += 1;
        }
    }
    check(disagree == 0, format!("{disagree} of {trials} trials disagree"))?;
    Ok(format!("{trials} trials ({ties} with forced ties), 100% agreement"))
}

// 3. Entropy coding ----------------------------------------------------------

fn coding_tightness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sources: Vec<(&str, Vec<usize>, usize)> = Vec::new();
    sources.push(("uniform-256", (0..200_000).map(|_| rng.random_range(0..256)).collect(), 256));
    sources.push(("uniform-3", (0..50_000).map(|_| rng.random_range(0..3)).collect(), 3));
    let geometric = |rng: &mut ChaCha8Rng, p: f64, cap: usize| {
        let mut k = 0;
        while k + 1 < cap && rng.random_bool(1.0 - p) {
            k += 1;
        }
        k
    };
    sources.push(("geometric-0.3", (0..200_000).map(|_| geometric(&mut rng, 0.3, 64)).collect(), 64));
    sources.push(("skewed-0.999", (0..100_000).map(|_| usize::from(rng.random_bool(0.001))).collect(), 2));
    sources.push(("short-17", (0..17).map(|_| geometric(&mut rng, 0.5, 8)).collect(), 8));

    let mut lines = Vec::new();
    for (name, symbols, alphabet) in sources {
        let mut hist = vec![0.0; alphabet];
        for &s in &symbols {
            hist[s] += 1.0;
        }
        let table = FrequencyTable::from_weights(&hist).map_err(|e| e.to_string())?;
        let ideal: f64 = symbols
            .iter()
            .map(|&s| -(table.probability(s)).log2())
            .sum();
        let bits = arithmetic_code(&symbols, &table).map_err(|e| e.to_string())?.len() as f64 * 8.0;
        let bound = ideal + 64.0 + 0.001 * ideal;
        check(bits <= bound, format!("{name}: {bits} bits > bound {bound:.1}"))?;
        lines.push(format!("{name} {:.0}/{:.0}", bits, ideal));
        check((table.counts_u16().iter().map(|&c| c as u32).sum::<u32>()) == PROB_TOTAL, "table total")?;
    }
    Ok(format!("coded/ideal bits: {}", lines.join(", ")))
}

// 4. Roundtrip -----------------------------------------------------------------

fn roundtrip() -> Outcome {
    let opts = EncodeOptions::default();
    let mut total = 0;
    for seed in 0..6 {
        let state = coded_state(2000, seed);
        let enc = encode(&state, &opts).map_err(|e| e.to_string())?;
        let dec = decode(&enc.bytes).map_err(|e| e.to_string())?;
        check(dec == enc.committed, format!("seed {seed}: decoded model differs from the encoder's"))?;

        // Positions: the survivors' f16-rounded coordinates, as a multiset.
        let mut want: Vec<[u64; 3]> = state
            .masks
            .survivors()
            .iter()
            .map(|&i| state.cloud.positions[i].map(|x| f16::from_f64(x).to_f64().to_bits()))
            .collect();
        let mut got: Vec<[u64; 3]> = dec.cloud.positions.iter().map(|p| p.map(f64::to_bits)).collect();
        want.sort();
        got.sort();
        check(want == got, format!("seed {seed}: positions differ after f16 rounding"))?;

        let again = encode(&coded_state(2000, seed), &opts).map_err(|e| e.to_string())?;
        check(again.bytes == enc.bytes, format!("seed {seed}: encode not deterministic"))?;
        let re = encode(&ModelState::from_decoded(&dec), &opts).map_err(|e| e.to_string())?;
        check(re.bytes == enc.bytes, format!("seed {seed}: re-encoding a decoded model changed the bytes"))?;
        total += enc.bytes.len();
    }
    Ok(format!("6 scenes of 2000 Gaussians ({total} bytes), exact and deterministic"))
}

// 5. Rearrangement -------------------------------------------------------------

fn rearrangement() -> Outcome {
    let cam = front_camera(64);
    let opts = RenderOptions::default();
    for seed in 0..20 {
        let state = coded_state(300, 100 + seed);
        let (before, _) = render(&state.cloud, &cam, Some(&state.masks), None, &opts).map_err(|e| e.to_string())?;
        let kept = remove_pruned(&state.cloud, &state.masks).map_err(|e| e.to_string())?;
        let grouped = rearrange(&kept.cloud, &kept.sh_bits).map_err(|e| e.to_string())?;
        check(
            grouped.order.iter().map(|&k| kept.sh_bits[k]).collect::<Vec<_>>() == grouped.sh_bits,
            "cluster order does not match the SH bits",
        )?;
        let (after, _) = render(&grouped.cloud, &cam, None, None, &opts).map_err(|e| e.to_string())?;
        check(before.data == after.data, format!("scene {seed}: pixels differ after rearrangement"))?;
    }
    Ok("20 scenes of 300 Gaussians, pixel-identical".into())
}

// 6. Prune losses --------------------------------------------------------------

fn prune_losses() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    check(SH_DEGREE_WEIGHTS == [3.0 / 15.0, 5.0 / 15.0, 7.0 / 15.0], "degree weights")?;

    let mut m = MaskSet::new(3);
    m.gaussian_mask_raw = vec![0.0; 3];
    check(close(gaussian_prune_loss(&m), 0.5), "all raw 0")?;
    let mut m = MaskSet::new(2);
    m.gaussian_mask_raw = vec![0.0, -3.0];
    let expect = (0.5 + 1.0 / (1.0 + 3f64.exp())) / 2.0;
    check(close(gaussian_prune_loss(&m), expect), "N=2, raw (0, -3)")?;
    check(close(expect, 0.273_712_936_588_783_4), "hand value for (0, -3)")?;
    m.gaussian_mask_raw = vec![-800.0; 2];
    check(close(gaussian_prune_loss(&m), 0.0), "raw -> -inf")?;
    check(gaussian_prune_loss(&MaskSet::new(0)) == 0.0, "empty set")?;

    let mut m = MaskSet::new(4);
    m.sh_mask_raw = vec![[800.0; 3]; 4];
    check(close(sh_prune_loss(&m), 1.0), "all soft 1")?;
    m.sh_mask_raw = vec![[-800.0, -800.0, 800.0]; 4];
    check(close(sh_prune_loss(&m), 7.0 / 15.0), "only degree 3")?;
    let mut m = MaskSet::new(1);
    m.sh_mask_raw = vec![[0.0; 3]];
    check(close(sh_prune_loss(&m), 0.5), "soft (0.5, 0.5, 0.5)")?;
    m.sh_mask_raw = vec![[0.0, -3.0, 1.0]];
    let s = |x: f64| 1.0 / (1.0 + (-x).exp());
    check(close(sh_prune_loss(&m), (3.0 * 0.5 + 5.0 * s(-3.0) + 7.0 * s(1.0)) / 15.0), "mixed degrees")?;
    Ok("hand-computed values match to 1e-12; weights 3/15, 5/15, 7/15".into())
}

// 7. Desk-scale RD sweep ---------------------------------------------------------

struct SweepRow {
    lambdas: (f64, f64),
    bytes: usize,
    psnr: f64,
    survivors: usize,
    mean_sh_degree: f64,
}

fn rd_sweep(files: &mut Vec<Vec<u8>>) -> Outcome {
    let config = TrainConfig {
        log_every: 0,
        rd_iters: RD_ITERS,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let target = scene::synthetic_scene(config.scene_clusters, config.scene_gaussians, &mut rng);
    let dataset = Dataset::from_scene(&target, &config).map_err(|e| e.to_string())?;
    let init = scene::random_init(config.init_gaussians, config.init_radius, &mut rng);
    let pretrained = pretrain(init, &dataset, &config, None).map_err(|e| e.to_string())?;
    let raw_bytes = ply::encode_ply(&pretrained).map_err(|e| e.to_string())?.len();
    let base = evaluate(&pretrained, None, None, &dataset.test(), config.background).map_err(|e| e.to_string())?;

    let mut rows = Vec::new();
    for (gs, sh) in SWEEP_GRID {
        let p = train_rate_point(&pretrained, &dataset, &config, gs, sh, None).map_err(|e| e.to_string())?;
        rows.push(SweepRow {
            lambdas: (gs, sh),
            bytes: p.encoded.bytes.len(),
            psnr: p.eval.psnr,
            survivors: p.survivors(),
            mean_sh_degree: p.state.masks.mean_sh_degree(),
        });
        files.push(p.encoded.bytes);
    }
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{}:{} {}B {:.2}dB {}G deg {:.2}",
                r.lambdas.0, r.lambdas.1, r.bytes, r.psnr, r.survivors, r.mean_sh_degree
            )
        })
        .collect();
    let summary = format!("pretrained {:.2}dB {}B; {}", base.psnr, raw_bytes, table.join(" | "));
    let pairs = || rows.windows(2);
    check(pairs().all(|p| p[1].bytes < p[0].bytes), format!("sizes not strictly decreasing: {summary}"))?;
    check(pairs().all(|p| p[1].survivors <= p[0].survivors), format!("survivors increase: {summary}"))?;
    check(
        pairs().all(|p| p[1].mean_sh_degree <= p[0].mean_sh_degree),
        format!("mean SH degree increases: {summary}"),
    )?;
    check(rows[0].psnr > base.psnr - 1.0, format!("highest-rate point loses >= 1 dB: {summary}"))?;
    let ratio = raw_bytes as f64 / rows[1].bytes as f64;
    check(ratio >= 10.0, format!("mid-rate ratio {ratio:.1}x < 10x: {summary}"))?;
    Ok(format!("{summary}; mid-rate ratio {ratio:.1}x"))
}

/// Three consecutive rows of the published grid, spaced by a factor of 10.
const SWEEP_GRID: [(f64, f64); 3] = [(0.0005, 0.005), (0.005, 0.05), (0.05, 0.5)];
const RD_ITERS: usize = 1500;

// 8. Composition ---------------------------------------------------------------

/// Section sizes found by walking the documented layout directly:
/// (header, index streams incl. length prefixes, codebooks, tables,
/// positions).
fn walk(bytes: &[u8]) -> [usize; 5] {
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    let n = u32_at(5);
    let sizes: Vec<usize> = (0..6).map(|t| u32_at(HEADER_BYTES - 24 + 4 * t)).collect();
    let mut pos = HEADER_BYTES;
    let mut sections = [HEADER_BYTES, 0, 0, 0, 0];
    for (tag, &m) in AttributeTag::ALL.iter().zip(&sizes) {
        sections[2] += m * tag.dim() * 4;
        pos += m * tag.dim() * 4;
        sections[3] += m * 2;
        pos += m * 2;
        let len = u32_at(pos);
        sections[1] += 4 + len;
        pos += 4 + len;
    }
    sections[3] += 512;
    pos += 512;
    let len = u32_at(pos);
    sections[1] += 4 + len;
    pos += 4 + len;
    sections[4] = n * 6;
    pos += n * 6;
    assert_eq!(pos, bytes.len(), "layout walk ended early");
    sections
}

fn composition(files: &[Vec<u8>]) -> Outcome {
    let mut all: Vec<Vec<u8>> = (0..4)
        .map(|s| encode(&coded_state(500, 50 + s), &EncodeOptions::default()).map(|e| e.bytes))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    all.extend(files.iter().cloned());
    for bytes in &all {
        let comp = decode(bytes).map_err(|e| e.to_string())?.composition;
        let five: usize = comp.rows().iter().map(|r| r.1).sum();
        let seven: usize = comp.indexes.rows().iter().map(|r| r.1).sum();
        check(five == bytes.len(), format!("categories sum to {five}, file has {}", bytes.len()))?;
        check(seven == comp.indexes.total(), "index subcategories do not sum to the index total")?;
        let walked = walk(bytes);
        let reported = [comp.header, comp.indexes.total(), comp.codebooks, comp.logits, comp.positions];
        check(walked == reported, format!("report {reported:?} vs layout {walked:?}"))?;
    }
    Ok(format!("{} files tie out byte for byte", all.len()))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, budget: Duration, run: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took > budget {
                Err(format!("{msg}; took {took:.1?}, budget {budget:?}"))
            } else {
                Ok(msg)
            }
        });
        match outcome {
            Ok(msg) => println!("criterion {id} {name}: PASS ({took:.1?}) {msg}"),
            Err(msg) => {
                failures += 1;
                println!("criterion {id} {name}: FAIL ({took:.1?}) {msg}");
            }
        }
    };
    let secs = Duration::from_secs;
    let mut files = Vec::new();
    report(1, "gradient correctness", secs(10), &mut gradients);
    report(2, "ECVQ oracle equivalence", secs(60), &mut ecvq_oracle);
    report(3, "entropy-coding tightness", secs(10), &mut coding_tightness);
    report(4, "bit-exact roundtrip", secs(30), &mut roundtrip);
    report(5, "rearrangement invariance", secs(60), &mut rearrangement);
    report(6, "prune-loss values", secs(1), &mut prune_losses);
    report(7, "desk-scale RD behavior", secs(15 * 60), &mut || rd_sweep(&mut files));
    report(8, "composition tie-out", secs(30), &mut || composition(&files));
    if failures == 0 {
        println!("acceptance: 8 of 8 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 8 criteria fail");
        ExitCode::FAILURE
    }
}
