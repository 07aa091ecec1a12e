//! Acceptance suite. Prints one PASS/FAIL line per criterion. A failed
//! criterion is reported, not fatal, unless `ACCEPTANCE_STRICT=1` is set;
//! panics always fail the target. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --test acceptance -- 2 6`.

use std::process::ExitCode;
use std::time::Instant;

use curvetrack::filter::{systematic_resample, FilterConfig};
use curvetrack::flow::{horn_schunck, warp_backward, FlowParams};
use curvetrack::grid::{LabelMap, ScalarField, VectorField};
use curvetrack::levelset::{
    advect, reinitialize, sdf_from_mask, Correspondence, SignedDistance,
};
use curvetrack::noise::NoiseStream;
use curvetrack::pipeline::{compare_modes, track_sequence, TrackOptions};
use curvetrack::sde::{chan_vese_force, drift_speed, normals, propagate, SdeParams};
use curvetrack::synth::{generate_sequence, layered_mask, ClassModel, Deformation, DeformationSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

// ---------------------------------------------------------------------------
// 1. fast-marching SDF against brute force

fn random_blob(rng: &mut ChaCha8Rng, n: usize) -> LabelMap {
    let k = rng.gen_range(1..=4);
    let blobs: Vec<(f64, f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(16.0..48.0),
                rng.gen_range(16.0..48.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(4.0..12.0),
                rng.gen_range(0.0..std::f64::consts::PI),
            )
        })
        .collect();
    LabelMap::from_fn(n, n, 2, |x, y| {
        let inside = blobs.iter().any(|&(cx, cy, a, b, th)| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let (u, v) = (dx * th.cos() + dy * th.sin(), -dx * th.sin() + dy * th.cos());
            (u / a).powi(2) + (v / b).powi(2) <= 1.0
        });
        u8::from(inside)
    })
    .unwrap()
}

/// Signed distance from each pixel centre to the nearest midpoint between
/// two 4-adjacent pixels of different class.
fn brute_sdf(mask: &LabelMap) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut mids = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w && mask.get(x, y) != mask.get(x + 1, y) {
                mids.push((x as f64 + 0.5, y as f64));
            }
            if y + 1 < h && mask.get(x, y) != mask.get(x, y + 1) {
                mids.push((x as f64, y as f64 + 0.5));
            }
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d = mids.iter().map(|&(mx, my)| (x as f64 - mx).hypot(y as f64 - my)).fold(f64::INFINITY, f64::min);
            out.push(if mask.get(x, y) == 1 { -d } else { d });
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mask = random_blob(&mut rng, 64);
        let fmm = sdf_from_mask(&mask, 1).unwrap();
        let brute = brute_sdf(&mask);
        for (a, b) in fmm.field.values().iter().zip(&brute) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1.0, format!("max |FMM - brute force| = {worst:.3} px over 20 masks (limit 1)"))
}

// ---------------------------------------------------------------------------
// 2. Horn-Schunck on a translated blob

fn criterion_2() -> Outcome {
    let n = 64;
    let blob = |shift: f64| {
        ScalarField::from_fn(n, n, move |x, y| {
            let r2 = (x as f64 - 31.5 - shift).powi(2) + (y as f64 - 31.5).powi(2);
            0.2 + 0.6 * (-r2 / (2.0 * 8.0f64.powi(2))).exp()
        })
        .unwrap()
    };
    let (a, b) = (blob(0.0), blob(1.0));
    let params = FlowParams { alpha: 7.0, ..FlowParams::default() };
    let flow = horn_schunck(&a, &b, &params).unwrap();
    // mean over a blob-centred disk of radius 2 sigma
    let (mut su, mut sv, mut count) = (0.0, 0.0, 0usize);
    for y in 0..n {
        for x in 0..n {
            if (x as f64 - 32.0).hypot(y as f64 - 31.5) <= 16.0 {
                let (u, v) = flow.get(x, y);
                su += u;
                sv += v;
                count += 1;
            }
        }
    }
    let (mu, mv) = (su / count as f64, sv / count as f64);
    let warped = warp_backward(&a, &flow);
    let rms = (warped.values().iter().zip(b.values()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / (n * n) as f64).sqrt();
    let pass = (mu - 1.0).abs() <= 0.25 && mv.abs() <= 0.25 && rms < 0.02;
    outcome(pass, format!("mean flow over r = 16 disk ({mu:.3}, {mv:.3}) vs (1, 0), tolerance 0.25; warp residual RMS {rms:.4} (limit 0.02)"))
}

// ---------------------------------------------------------------------------
// 3. zero-noise single-particle filter against plain advection

fn reference_advection(
    phi: &SignedDistance,
    psi: &Correspondence,
    w: &VectorField,
    image: &ScalarField,
    params: &SdeParams,
) -> (SignedDistance, Correspondence) {
    let dt = 1.0 / params.substeps as f64;
    let (width, height) = phi.dims();
    let (mut p, mut q) = (phi.clone(), psi.clone());
    for _ in 0..params.substeps {
        let force = if params.beta < 1.0 {
            chan_vese_force(&p, image).unwrap()
        } else {
            ScalarField::new(width, height, 0.0).unwrap()
        };
        let s = drift_speed(&p, w, &force, params.beta);
        let (n, _) = normals(&p);
        let v = VectorField::new(s.zip_map(&n.u, |a, b| a * b), s.zip_map(&n.v, |a, b| a * b)).unwrap();
        (p, q) = advect(&p, &q, &v, dt).unwrap();
    }
    (reinitialize(&p).unwrap(), q)
}

fn criterion_3() -> Outcome {
    let init = curvetrack::synth::disk_mask(96, 96, 44.0, 48.0, 16.0).unwrap();
    let spec = DeformationSpec { kind: Deformation::Rotate { cx: 48.0, cy: 48.0, degrees_per_frame: 1.0 }, frames: 10 };
    let spec_t = DeformationSpec { kind: Deformation::Translate { dx: 0.8, dy: 0.3 }, frames: 10 };
    let mut mismatches = 0;
    let mut frames = 0;
    for (k, s) in [spec, spec_t].iter().enumerate() {
        let seq = generate_sequence(&init, s, &ClassModel::default(), 2.0, 11 + k as u64).unwrap();
        let opts = TrackOptions {
            filter: FilterConfig {
                n_particles: 1,
                sde: SdeParams::default().deterministic(),
                master_seed: 5,
                ..FilterConfig::default()
            },
            ..TrackOptions::default()
        };
        let run = track_sequence(&seq.images, &seq.truth[0], &opts).unwrap();
        let mut phi = sdf_from_mask(&seq.truth[0], 1).unwrap();
        let mut psi = Correspondence::identity(96, 96).unwrap();
        for t in 1..seq.images.len() {
            let w = horn_schunck(&seq.images[t - 1], &seq.images[t], &opts.flow).unwrap();
            (phi, psi) = reference_advection(&phi, &psi, &w, &seq.images[t], &opts.filter.sde);
            frames += 1;
            if run.phi[t] != phi || run.psi[t] != psi {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of {frames} frames differ bitwise from plain advection (two 10-frame sequences)"))
}

// ---------------------------------------------------------------------------
// 4 and 5. diapir benchmark

fn diapir_sequence(seed: u64) -> curvetrack::synth::Sequence {
    let init = layered_mask(128, 128, 90.0).unwrap();
    let spec = DeformationSpec {
        kind: Deformation::DiapirRise { cx: 64.0, width: 12.0, rate: 0.5, top: 30.0 },
        frames: 60,
    };
    generate_sequence(&init, &spec, &ClassModel::sediment_salt(0.06), 2.0, seed).unwrap()
}

struct BenchmarkRun {
    det_acc: f64,
    sto_acc: f64,
    sto_max_h: f64,
    sto_mean_rmse: f64,
}

fn diapir_runs() -> Vec<BenchmarkRun> {
    (1..=5u64)
        .map(|seed| {
            let start = Instant::now();
            let seq = diapir_sequence(seed);
            let opts = TrackOptions {
                filter: FilterConfig {
                    n_particles: 200,
                    resample_threshold: 1.0,
                    master_seed: seed,
                    sde: SdeParams { sigma_n: 2.0, sigma_t: 2.0, substeps: 20, ..SdeParams::default() },
                    ..FilterConfig::default()
                },
                workers: workers(),
                ..TrackOptions::default()
            };
            let (report, _, sto) = compare_modes(&seq.images, &seq.truth, &opts, 3.0).unwrap();
            let run = BenchmarkRun {
                det_acc: report.deterministic_accumulated,
                sto_acc: report.stochastic_accumulated,
                sto_max_h: sto.max_hausdorff(),
                sto_mean_rmse: sto.mean_rmse(),
            };
            println!(
                "    seed {seed}: accumulated RMSE deterministic {:.2}, stochastic {:.2} (ratio {:.2}); stochastic max Hausdorff {:.2} px, mean RMSE {:.3} px [{:.0} s]",
                run.det_acc,
                run.sto_acc,
                report.ratio,
                run.sto_max_h,
                run.sto_mean_rmse,
                start.elapsed().as_secs_f64()
            );
            run
        })
        .collect()
}

fn criterion_4(runs: &[BenchmarkRun]) -> Outcome {
    let wins = runs.iter().filter(|r| r.sto_acc <= 0.5 * r.det_acc).count();
    outcome(wins >= 4, format!("stochastic <= 0.5 x deterministic accumulated RMSE in {wins} of 5 seeds (need 4)"))
}

fn criterion_5(runs: &[BenchmarkRun]) -> Outcome {
    let ok = runs.iter().filter(|r| r.sto_max_h <= 5.0 && r.sto_mean_rmse <= 2.0).count();
    outcome(ok >= 4, format!("max Hausdorff <= 5 px and mean RMSE <= 2 px in {ok} of 5 seeds (need 4)"))
}

// ---------------------------------------------------------------------------
// 6. systematic resampling counts

fn criterion_6() -> Outcome {
    let n = 8;
    let mut vectors: Vec<Vec<f64>> = vec![
        vec![1.0 / 8.0; 8],
        vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05],
        vec![0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.93],
        vec![0.124, 0.126, 0.124, 0.126, 0.124, 0.126, 0.124, 0.126],
        vec![0.375, 0.0, 0.25, 0.0, 0.125, 0.0, 0.25, 0.0],
    ];
    let geometric: Vec<f64> = (0..8).map(|i| 0.5f64.powi(i + 1)).collect();
    vectors.push(geometric);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln() * f64::from(rng.gen_bool(0.8) as u8)).collect();
        vectors.push(raw);
    }
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for v in &vectors {
        let total: f64 = v.iter().sum();
        if total == 0.0 {
            continue;
        }
        let w: Vec<f64> = v.iter().map(|x| x / total).collect();
        // every u0 on a fine grid plus both sides of each breakpoint
        let mut draws: Vec<f64> = (0..2000).map(|k| k as f64 / 2000.0).collect();
        let mut c = 0.0;
        for wi in &w {
            c += wi * n as f64;
            let frac = c - c.floor();
            for d in [frac - 1e-9, frac, frac + 1e-9] {
                if (0.0..1.0).contains(&d) {
                    draws.push(d);
                }
            }
        }
        for u0 in draws {
            let picks = systematic_resample(&w, u0);
            let mut counts = vec![0usize; n];
            picks.iter().for_each(|&i| counts[i] += 1);
            for (cnt, wi) in counts.iter().zip(&w) {
                worst = worst.max((*cnt as f64 - n as f64 * wi).abs());
            }
            checked += 1;
        }
    }
    outcome(worst < 1.0, format!("max |count - N w_i| = {worst:.6} over {checked} draws on {} weight vectors (limit < 1)", vectors.len()))
}

// ---------------------------------------------------------------------------
// 7. driftless noise statistics

fn criterion_7() -> Outcome {
    let n = 64;
    let (cx, cy, r) = (31.7, 32.3, 14.0);
    let phi = SignedDistance::from_field(ScalarField::from_fn(n, n, |x, y| (x as f64 - cx).hypot(y as f64 - cy) - r).unwrap());
    let psi = Correspondence::identity(n, n).unwrap();
    let w = VectorField::zeros(n, n).unwrap();
    let image = ScalarField::new(n, n, 0.5).unwrap();
    let params = SdeParams { beta: 1.0, sigma_n: 2.0, sigma_t: 2.0, ..SdeParams::default() };
    let rays = 64;
    let members = 500;
    let mut disp = vec![vec![0.0; members]; rays];
    for m in 0..members {
        let (p, _) = propagate(&phi, &psi, &w, &image, &params, NoiseStream::new(77, m as u64, 1)).unwrap();
        for (k, row) in disp.iter_mut().enumerate() {
            let th = k as f64 / rays as f64 * std::f64::consts::TAU;
            let (dx, dy) = (th.cos(), th.sin());
            // first sign change outward along the ray, linearly refined
            let mut s = 0.0;
            let mut prev = p.field.sample(cx, cy);
            let step = 0.05;
            let mut hit = f64::NAN;
            while s < 30.0 {
                let next = p.field.sample(cx + (s + step) * dx, cy + (s + step) * dy);
                if prev <= 0.0 && next > 0.0 {
                    hit = s + step * prev / (prev - next);
                    break;
                }
                prev = next;
                s += step;
            }
            row[m] = hit - r;
        }
    }
    let all: Vec<f64> = disp.iter().flatten().copied().collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let spread = disp
        .iter()
        .map(|row| {
            let m = row.iter().sum::<f64>() / members as f64;
            (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (members - 1) as f64).sqrt()
        })
        .sum::<f64>()
        / rays as f64;
    let rel = (spread - params.sigma_n).abs() / params.sigma_n;
    let pass = mean.abs() < 0.3 && rel <= 0.35 && all.iter().all(|v| v.is_finite());
    outcome(
        pass,
        format!("ensemble-mean displacement {mean:.3} px (limit 0.3); mean per-point spread {spread:.3} px vs sigma_n 2 ({:.0}% off, limit 35%)", rel * 100.0),
    )
}

// ---------------------------------------------------------------------------
// 8. determinism across worker counts and scaling

fn criterion_8() -> Outcome {
    let init = curvetrack::synth::disk_mask(64, 64, 30.0, 32.0, 12.0).unwrap();
    let spec = DeformationSpec { kind: Deformation::Translate { dx: 0.7, dy: -0.2 }, frames: 3 };
    let seq = generate_sequence(&init, &spec, &ClassModel::default(), 2.0, 8).unwrap();
    let run = |w: usize| {
        let opts = TrackOptions {
            filter: FilterConfig { n_particles: 200, master_seed: 42, ..FilterConfig::default() },
            workers: w,
            ..TrackOptions::default()
        };
        track_sequence(&seq.images, &init, &opts).unwrap()
    };
    let base = run(1);
    let mut identical = true;
    for w in [2, 4] {
        let other = run(w);
        identical &= other.phi == base.phi && other.psi == base.psi && other.contours == base.contours;
    }
    let cores = workers();
    if cores < 4 {
        return outcome(
            identical,
            format!(
                "outputs identical for 1, 2, 4 workers: {identical}; scaling NOT MEASURED: host exposes {cores} core(s), the 4-worker timing needs >= 4"
            ),
        );
    }
    let filter_ms = |r: &curvetrack::pipeline::TrackResult| r.diagnostics.iter().map(|d| d.wall_ms).sum::<f64>();
    let t1 = filter_ms(&run(1));
    let t4 = filter_ms(&run(4));
    let ratio = t4 / t1;
    outcome(
        identical && ratio <= 0.6,
        format!("outputs identical across worker counts: {identical}; filter-step time 4 workers / 1 worker = {ratio:.2} (limit 0.6)"),
    )
}

// ---------------------------------------------------------------------------
// 9. marker trajectories on the translate benchmark

/// Worst marker distance from its analytic path over a 20-frame translate
/// of a vertical salt stripe. Markers sit on both flanks, where the normal
/// is along the motion.
fn stripe_marker_error(model: &ClassModel, sde: SdeParams, n_particles: usize) -> f64 {
    let init = LabelMap::from_fn(128, 128, 2, |x, _| u8::from((30..=60).contains(&x))).unwrap();
    let spec = DeformationSpec { kind: Deformation::Translate { dx: 1.0, dy: 0.0 }, frames: 20 };
    let seq = generate_sequence(&init, &spec, model, 2.0, 9).unwrap();
    let markers: Vec<[f64; 2]> = [20.0, 45.0, 70.0, 95.0].iter().flat_map(|&y| [[29.5, y], [60.5, y]]).collect();
    let opts = TrackOptions {
        filter: FilterConfig { n_particles, sde, master_seed: 9, ..FilterConfig::default() },
        markers: markers.clone(),
        workers: workers(),
        ..TrackOptions::default()
    };
    let run = track_sequence(&seq.images, &init, &opts).unwrap();
    let mut worst = 0.0f64;
    for (t, found) in run.markers.iter().enumerate() {
        for (m, f) in markers.iter().zip(found) {
            worst = worst.max((f[0] - m[0] - t as f64).hypot(f[1] - m[1]));
        }
    }
    worst
}

fn criterion_9() -> Outcome {
    let det = SdeParams::default().deterministic();
    let worst = stripe_marker_error(&ClassModel::default(), det, 1);
    let clean = stripe_marker_error(&ClassModel::sediment_salt(0.0), det, 1);
    println!("    noise-free frames, same tracker: max marker deviation {clean:.3} px");
    outcome(
        worst <= 1.0,
        format!("max marker deviation from analytic trajectory {worst:.3} px over 20 frames, 8 markers, class noise 0.06 (limit 1)"),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |k: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(k) {
            let start = Instant::now();
            let o = f();
            println!(
                "[criterion {k}] {} {name}: {} ({:.1} s)",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail,
                start.elapsed().as_secs_f64()
            );
            results.push((k, name, o));
        }
    };
    run(1, "SDF oracle", &criterion_1);
    run(2, "optical flow accuracy", &criterion_2);
    run(3, "deterministic degeneracy", &criterion_3);
    if wanted(4) || wanted(5) {
        let runs = diapir_runs();
        run(4, "stochastic vs deterministic", &|| criterion_4(&runs));
        run(5, "absolute accuracy", &|| criterion_5(&runs));
    }
    run(6, "resampling counts", &criterion_6);
    run(7, "driftless noise statistics", &criterion_7);
    run(8, "determinism and scaling", &criterion_8);
    run(9, "correspondence soundness", &criterion_9);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} run, {} failed {:?}", results.len(), failed.len(), failed);
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed.is_empty() || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
