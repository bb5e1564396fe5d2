//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! ```text
//! cargo test --release --test acceptance
//! ```

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mcsde::metrics::{
    mc_vs_gaussian_gap, mmd_rbf_raw, residual_variance, spectral_distance, GapConfig, MetricConfig, SampleSet,
};
use mcsde::pathtracer::io::LinearImage;
use mcsde::pathtracer::{clt_scaling, render, Material, PixelStats, RenderOptions, Rgb, Scene};
use mcsde::rng::CounterRng;
use mcsde::schedule::{
    min_samples_for_accuracy, reverse_steps_until_recoverable, stabilization_time, BandwidthModel, NoiseSchedule,
    TauMapper,
};
use mcsde::sde::{marginal_summary, simulate_ensemble, simulate_reverse, GridSpacing, InitMode, SdeParams, TauGrid};
use mcsde::variance::{crosscheck_renderer, integrate_i_j_adaptive, mc_integrate_i_j, ratio_sweep, view_direction};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scene(name: &str) -> Scene {
    Scene::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes").join(name)).expect("bundled scene")
}

fn clt() -> Outcome {
    let r = clt_scaling(&scene("glossy.toml"), &[16, 64, 256, 1024, 4096], 16, 0, 2).map_err(|e| e.to_string())?;
    check((-1.1..=-0.9).contains(&r.slope), format!("slope {:.4}", r.slope))
}

fn ve_marginal() -> Outcome {
    let params = SdeParams::standard(1.0, 1.0).unwrap();
    let grid = TauGrid::new(1.0, 0.01, 1000, GridSpacing::Geometric).unwrap();
    let n = 10_000;
    let ens = simulate_ensemble(&params, &grid, n, InitMode::ForwardMarginal, 0);
    let rows = marginal_summary(&params, &ens, &grid.checkpoint_indices(5));
    let mut worst_z: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    for r in &rows {
        worst_z = worst_z.max((r.mean - params.mu).abs() / r.standard_error(n));
        worst_rel = worst_rel.max((r.var / r.expected_var - 1.0).abs());
    }
    check(
        rows.len() == 5 && worst_z <= 3.0 && worst_rel <= 0.05,
        format!("{} checkpoints, max |mean−μ|/SE {worst_z:.2}, max var rel err {:.2}%", rows.len(), 100.0 * worst_rel),
    )
}

fn deterministic_flow() -> Outcome {
    let mut worst: f64 = 0.0;
    for p in [1.5, 2.0, 3.0] {
        let params = SdeParams::new(0.5, 0.0, p).unwrap();
        let grid = TauGrid::new(1.0, 0.01, 10_000, GridSpacing::Geometric).unwrap();
        let y0 = 2.0;
        let traj = simulate_reverse(&params, &grid, y0, &mut CounterRng::new(0, &[]));
        for (&tau, y) in grid.taus().iter().zip(traj.scalar_values()) {
            let exact = params.mu + (y0 - params.mu) * tau.powf(p);
            worst = worst.max((y - exact).abs());
        }
    }
    check(worst <= 1e-3, format!("max |Y − exact| {worst:.2e} over p ∈ {{1.5, 2, 3}}"))
}

fn mapper() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, s) in [("linear", NoiseSchedule::default_linear()), ("cosine", NoiseSchedule::default_cosine())] {
        let gap = s.max_adjacent_gap();
        let m = TauMapper::new(s, 0.001, 5000.0).unwrap();
        let (lo, hi) = m.tau_range();
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let tau = lo * (hi / lo).powf(k as f64 / 99.0);
            worst = worst.max(m.map_tau(tau).unwrap().residual.abs());
        }
        let mut rng = CounterRng::new(0, &[name.len() as u64]);
        let mut violations = 0;
        for _ in 0..100 {
            let draw = |r: &mut CounterRng| 0.001 * (5000.0f64 / 0.001).powf(r.uniform());
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let (small, large) = if a < b { (a, b) } else { (b, a) };
            if m.map_samples(large).unwrap().t_star > m.map_samples(small).unwrap().t_star {
                violations += 1;
            }
        }
        ok &= worst <= gap && violations == 0;
        notes.push(format!("{name}: max residual {worst:.4} ≤ gap {gap:.4}, {violations} violations"));
    }
    check(ok, notes.join("; "))
}

fn stabilization() -> Outcome {
    let (mu, eps, sigma_d) = (2.0, 0.25, 0.5);
    let base = min_samples_for_accuracy(mu, sigma_d, eps).unwrap().n_star;
    let exact = [2.0f64, 10.0, 100.0]
        .iter()
        .all(|&r| min_samples_for_accuracy(mu, sigma_d * r, eps).unwrap().n_star / base == r * r);
    let freqs: Vec<f64> = (0..120).map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / 119.0)).collect();
    let mut counter = 0;
    let mut pairs = 0;
    for s in [NoiseSchedule::default_linear(), NoiseSchedule::default_cosine()] {
        for p in [1.0, 2.0, 3.0] {
            let model = BandwidthModel::new(p, 1.0).unwrap();
            let lit: Vec<_> = freqs.iter().map(|&f| stabilization_time(&s, &model, f).unwrap()).collect();
            let rev: Vec<_> = freqs
                .iter()
                .map(|&f| reverse_steps_until_recoverable(&s, &model, f).unwrap().unwrap_or(usize::MAX))
                .collect();
            for d in 0..freqs.len() {
                for sp in d + 1..freqs.len() {
                    pairs += 1;
                    if lit[sp] < lit[d] || rev[sp] < rev[d] {
                        counter += 1;
                    }
                }
            }
        }
    }
    check(
        exact && counter == 0,
        format!("N* ratios exact: {exact}; {counter} counterexamples in {pairs} (f_d < f_s) pairs × 2 forms"),
    )
}

fn ratio_divergence() -> Outcome {
    let alphas = [0.4, 0.2, 0.1, 0.05];
    let by_alpha: Vec<f64> = ratio_sweep(&alphas, &[0.5], &[1.0], 0.04, 0.8, 1.0)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| r.ratio_lower_bound)
        .collect();
    let alpha_ok = by_alpha.windows(2).all(|w| w[1] > w[0]) && by_alpha[3] / by_alpha[0] >= 10.0;
    let ms = [0.5, 0.9, 0.99];
    let by_m: Vec<f64> =
        ratio_sweep(&[0.2], &ms, &[1.0], 0.04, 0.8, 1.0).map_err(|e| e.to_string())?.iter().map(|r| r.ratio_lower_bound).collect();
    let mut worst_factor: f64 = 0.0;
    for (k, &m) in ms.iter().enumerate().skip(1) {
        let want = (1.0 - ms[0]) / (1.0 - m);
        worst_factor = worst_factor.max((by_m[k] / by_m[0] / want - 1.0).abs());
    }
    let m_ok = by_m.windows(2).all(|w| w[1] > w[0]) && worst_factor <= 0.2;
    let grid = ratio_sweep(&alphas, &[0.0, 0.5, 0.9, 0.99], &[1.0, 0.75, 0.5, 0.25], 0.04, 0.8, 1.0)
        .map_err(|e| e.to_string())?;
    let cs_min = grid
        .iter()
        .map(|r| 2.0 * std::f64::consts::PI * r.integral_j - r.integral_i * r.integral_i)
        .fold(f64::INFINITY, f64::min);
    let converged = grid.iter().filter(|r| r.converged()).count();
    check(
        alpha_ok && m_ok && cs_min >= 0.0,
        format!(
            "α sweep {:.3?} (×{:.1}); m sweep {:.3?}, 1/(1−m) err {:.2}%; min 2πJ−I² {cs_min:.3e} on {} points ({converged} converged)",
            by_alpha,
            by_alpha[3] / by_alpha[0],
            by_m,
            100.0 * worst_factor,
            grid.len()
        ),
    )
}

fn dominance() -> Outcome {
    let r = crosscheck_renderer(&scene("mirror_sphere.toml"), 256, 0, |_, m| m.metallic >= 0.5).map_err(|e| e.to_string())?;
    check(
        r.fraction_specular_dominant >= 0.9,
        format!("{:.1}% of {} sphere pixels", 100.0 * r.fraction_specular_dominant, r.pixels.len()),
    )
}

fn quadrature_vs_mc() -> Outcome {
    let configs = [(0.3, 0.0, 1.0), (0.5, 0.5, 0.7), (0.8, 0.9, 0.4), (0.2, 0.0, 0.5), (0.4, 0.99, 0.9), (0.6, 0.3, 0.3)];
    let mut worst: f64 = 0.0;
    for (k, &(r, m, c)) in configs.iter().enumerate() {
        let mat = Material::new(Rgb::splat(0.8), r, m, Rgb::splat(0.04)).unwrap();
        let q = integrate_i_j_adaptive(&mat, view_direction(c));
        let mc = mc_integrate_i_j(&mat, c, 10_000_000, k as u64);
        worst = worst.max((q.i / mc.i - 1.0).abs()).max((q.j / mc.j - 1.0).abs());
    }
    check(worst <= 0.02, format!("max relative difference {:.3}% over 6 configurations", 100.0 * worst))
}

fn distribution_gap() -> Outcome {
    let seed = 0;
    let ref_spp = 4096;
    let mut sc = scene("glossy.toml");
    sc.camera.width = 64;
    sc.camera.height = 64;
    let e = |e: &dyn std::fmt::Display| e.to_string();
    let rr = render(&sc, &RenderOptions::new(ref_spp, seed + 1)).map_err(|x| e(&x))?;
    let sample_var: Vec<Rgb> = rr.stats.iter().map(|s| s.variance_total().unwrap_or_default()).collect();
    let reference = LinearImage::from_render(&rr);
    let mapper = TauMapper::new(NoiseSchedule::default_linear(), 0.001, 5000.0).map_err(|x| e(&x))?;
    let config = GapConfig { seed, ..GapConfig::default() };
    let mut mmd = Vec::new();
    let mut ratios = Vec::new();
    for spp in [4u32, 16, 64, 256] {
        let low = render(&sc, &RenderOptions::new(spp, seed)).map_err(|x| e(&x))?;
        let var = residual_variance(&sample_var, spp as u64, ref_spp as u64);
        let t = mapper.map_samples(spp as f64).map_err(|x| e(&x))?.t_star;
        let g = mc_vs_gaussian_gap(&LinearImage::from_render(&low), Some(&var), &reference, spp as u64, &mapper.schedule, t, &config)
            .map_err(|x| e(&x))?;
        mmd.push(g.mmd);
        ratios.push(g.mmd_ratio());
    }
    let inversions = mmd.windows(2).filter(|w| w[1] > w[0]).count();
    check(
        ratios[0] >= 3.0 && inversions <= 1,
        format!(
            "mmd/baseline {:.2?} at spp 4/16/64/256; mmd [{}]; {inversions} inversions",
            ratios,
            mmd.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = CounterRng::new(7, &[]);
    let mut set = |n: usize, shift: f64| -> SampleSet {
        let items = (0..n).map(|_| (0..3 * 2 * 2).map(|_| rng.uniform() + shift).collect()).collect();
        SampleSet::new(3, 2, 2, items).unwrap()
    };
    let (x, y) = (set(512, 0.0), set(512, 0.1));
    let bw = [0.3, 1.0, 2.5];
    let cfg = MetricConfig::default().with_fixed_bandwidths(bw.to_vec());
    let fast = mmd_rbf_raw(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let k = |a: &[f64], b: &[f64], s: f64| (-a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / (2.0 * s * s)).exp();
    let mut naive = 0.0;
    let (xi, yi) = (x.items(), y.items());
    let n = 512.0;
    for &s in &bw {
        let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
        for i in 0..512 {
            for j in 0..512 {
                if i != j {
                    kxx += k(&xi[i], &xi[j], s);
                    kyy += k(&yi[i], &yi[j], s);
                }
                kxy += k(&xi[i], &yi[j], s);
            }
        }
        naive += kxx / (n * (n - 1.0)) + kyy / (n * (n - 1.0)) - 2.0 * kxy / (n * n);
    }
    let mmd_err = (fast - naive).abs();

    let (h, w) = (8, 6);
    let img = |r: &mut CounterRng| (0..3 * h * w).map(|_| r.uniform()).collect::<Vec<f64>>();
    let mut rng = CounterRng::new(8, &[]);
    let a_items: Vec<Vec<f64>> = (0..4).map(|_| img(&mut rng)).collect();
    let b_items: Vec<Vec<f64>> = (0..4).map(|_| img(&mut rng)).collect();
    let roll = |v: &Vec<f64>| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for c in 0..3 {
            for yy in 0..h {
                for xx in 0..w {
                    out[c * h * w + ((yy + 3) % h) * w + (xx + 5) % w] = v[c * h * w + yy * w + xx];
                }
            }
        }
        out
    };
    let a = SampleSet::new(3, h, w, a_items.clone()).unwrap();
    let b = SampleSet::new(3, h, w, b_items).unwrap();
    let a_rolled = SampleSet::new(3, h, w, a_items.iter().map(roll).collect()).unwrap();
    let mc = MetricConfig::default();
    let shift_err = (spectral_distance(&a, &b, &mc).map_err(|e| e.to_string())?
        - spectral_distance(&a_rolled, &b, &mc).map_err(|e| e.to_string())?)
    .abs();

    let mut worst_stream: f64 = 0.0;
    for stream in 0..4u64 {
        let mut rng = CounterRng::new(9, &[stream]);
        let offset = 10f64.powi(stream as i32);
        let samples: Vec<(Rgb, Rgb)> = (0..10_000)
            .map(|_| {
                let d = Rgb::new(offset + rng.uniform(), rng.uniform(), 3.0 * rng.uniform());
                let s = Rgb::new(rng.uniform().powi(4) * 50.0, offset * rng.uniform(), d.x * rng.uniform());
                (d, s)
            })
            .collect();
        let mut st = PixelStats::new();
        for &(d, s) in &samples {
            st.push_pair(d, s);
        }
        let nn = samples.len() as f64;
        let mean = |f: &dyn Fn(&(Rgb, Rgb)) -> f64| samples.iter().map(f).sum::<f64>() / nn;
        let rel = |got: f64, want: f64| ((got - want) / want.abs().max(f64::MIN_POSITIVE)).abs();
        let (vd, vs, cds, m) = (st.variance_d().unwrap(), st.variance_s().unwrap(), st.covariance_ds().unwrap(), st.mean());
        for ch in 0..3 {
            let g = |v: Rgb| [v.x, v.y, v.z][ch];
            let md = mean(&|p| g(p.0));
            let ms = mean(&|p| g(p.1));
            let two_vd = samples.iter().map(|p| (g(p.0) - md).powi(2)).sum::<f64>() / (nn - 1.0);
            let two_vs = samples.iter().map(|p| (g(p.1) - ms).powi(2)).sum::<f64>() / (nn - 1.0);
            let two_c = samples.iter().map(|p| (g(p.0) - md) * (g(p.1) - ms)).sum::<f64>() / (nn - 1.0);
            for (got, want) in [(g(vd), two_vd), (g(vs), two_vs), (g(cds), two_c), (g(m), md + ms)] {
                worst_stream = worst_stream.max(rel(got, want));
            }
        }
    }
    check(
        mmd_err <= 1e-12 && shift_err <= 1e-8 && worst_stream <= 1e-10,
        format!("mmd |Δ| {mmd_err:.1e}; shift |Δ| {shift_err:.1e}; streaming rel {worst_stream:.1e}"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scene_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/scenes/minimal.toml");
    let scene_arg = scene_path.to_str().unwrap().to_string();
    let run = |tag: &str, threads: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let d = dir.path().join(tag);
        std::fs::create_dir_all(&d).map_err(|e| e.to_string())?;
        let cmds: Vec<Vec<&str>> = vec![
            vec!["render", "--scene", &scene_arg, "--spp", "8", "--seed", "4", "--out-image", "r.ppm"],
            vec!["render", "--scene", &scene_arg, "--spp", "64", "--seed", "5", "--out-image", "ref.ppm"],
            vec!["sde-sim", "--trajectories", "300", "--steps", "200", "--seed", "2", "--out", "s.csv"],
            vec!["map", "--n", "16", "--schedule", "cosine", "--out", "m.csv"],
            vec!["ratio", "--alpha", "0.4,0.1", "--metallic", "0,0.9", "--cos-theta-o", "1,0.5", "--out", "q.csv"],
            vec!["compare-noise", "--low", "r.stats.csv", "--reference", "ref.stats.csv", "--patches", "64", "--seed", "3", "--out", "g.csv"],
        ];
        for c in &cmds {
            let o = Command::new(env!("CARGO_BIN_EXE_mcsde"))
                .current_dir(&d)
                .env_remove("MCSDE_THREADS")
                .arg("--threads")
                .arg(threads)
                .args(c)
                .output()
                .map_err(|e| e.to_string())?;
            if !o.status.success() {
                return Err(format!("{} failed: {}", c[0], String::from_utf8_lossy(&o.stderr)));
            }
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        files.sort();
        Ok(files
            .iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
            .collect())
    };
    let a = run("a", "1")?;
    let b = run("b", "1")?;
    let c = run("c", "3")?;
    let differing: Vec<String> =
        a.iter().zip(&b).chain(a.iter().zip(&c)).filter(|(x, y)| x != y).map(|(x, _)| x.0.clone()).collect();
    check(
        a.len() == b.len() && a.len() == c.len() && differing.is_empty(),
        format!("{} files over 6 subcommand runs, 2 runs × threads 1 and 3; differing: {differing:?}", a.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("clt_scaling", clt),
        ("ve_marginal_equivalence", ve_marginal),
        ("deterministic_flow", deterministic_flow),
        ("mapper_alignment", mapper),
        ("stabilization_ordering", stabilization),
        ("variance_ratio_divergence", ratio_divergence),
        ("specular_dominance", dominance),
        ("quadrature_mc_agreement", quadrature_vs_mc),
        ("distribution_gap", distribution_gap),
        ("metric_oracles", metric_oracles),
        ("cli_determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
