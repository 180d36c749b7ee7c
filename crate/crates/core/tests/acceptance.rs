//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p tailweight --test acceptance`.

use std::time::Instant;

use rand::Rng;
use tailweight::bma::{hom_weights, run_hom, HomConfig, LikelihoodMatrix, PosteriorMixture};
use tailweight::dist::{fit_gev, fit_gpd_mle, fit_lognormal_naive, sample, Continuous};
use tailweight::metrics::{
    bulk_tail_report_on, evaluation_edges, forward_stop, forward_stop_statistics, hellinger_sq, kl_divergence,
    log_spaced_edges, model_masses, mrl_curve, BinnedDensityPair, Region, DEFAULT_BINS, KL_FLOOR,
};
use tailweight::mixture::fit_mixture;
use tailweight::quantile_boot::{quantile_sorted, skew_normal_from_moments, stream_rng};
use tailweight::sim::{generate, run_study, Metric, ScenarioSpec, StudyResult, HOM_METHODS};
use tailweight::special::{norm_cdf, norm_pdf};
use tailweight::{GevParams, GpdParams, LognormalParams, LossSample, MixtureModel, SkewNormalParams};

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        Self { pass: Some(pass), detail }
    }

    fn skip(detail: &str) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

fn report(n: usize, o: &Outcome, failed: &mut Vec<usize>) {
    let tag = match o.pass {
        Some(true) => "PASS",
        Some(false) => {
            failed.push(n);
            "FAIL"
        }
        None => "SKIP",
    };
    println!("criterion {n}: {tag} {}", o.detail);
}

fn c1(study: &StudyResult) -> Outcome {
    let s = study.u_star_summary("type1");
    Outcome::check(
        (680.0..=720.0).contains(&s.mean),
        format!(
            "mean u* = {:.1} (sd {:.1}, {} identified, {} none) over {} replications; target [680, 720]",
            s.mean, s.sd, s.identified, s.none, study.replications
        ),
    )
}

fn c2() -> Outcome {
    let spec = ScenarioSpec::homogeneous();
    let data = match generate(&spec, spec.seed) {
        Ok(d) => d,
        Err(e) => return Outcome::check(false, format!("generation failed: {e}")),
    };
    let config = HomConfig::with_seed(spec.seed);
    let mut found = Vec::new();
    for lo in [200.0, 400.0, 600.0] {
        let grid: Vec<f64> = (0..7).map(|k| lo + 100.0 * k as f64).collect();
        let u = run_hom(data.train.values(), data.calibration.values(), &grid, &config).ok().and_then(|r| r.report.u_star);
        found.push(u);
    }
    let near = found.iter().all(|u| matches!(u, Some(v) if [600.0, 700.0, 800.0].contains(v)));
    let exact = found.iter().filter(|u| **u == Some(700.0)).count();
    let shown: Vec<String> = found.iter().map(|u| u.map_or("none".into(), |v| v.to_string())).collect();
    Outcome::check(
        near && exact >= 2,
        format!("u* for grids 200-800, 400-1000, 600-1200 = [{}]; need all in {{600,700,800}} and 700 at least twice", shown.join(", ")),
    )
}

fn c3(study: &StudyResult) -> Outcome {
    let w = study.outperformance("type1", HOM_METHODS[1], Region::Bulk, Metric::Kl).unwrap_or(0.0);
    let h = study.outperformance("type1", HOM_METHODS[0], Region::Bulk, Metric::Kl).unwrap_or(0.0);
    Outcome::check(
        w >= 0.95 && h >= 0.80,
        format!("bulk KL beats u=700: w-hom-EI {:.1}% (need >= 95%), hom-EI {:.1}% (need >= 80%)", 100.0 * w, 100.0 * h),
    )
}

fn c4(study: &StudyResult) -> Outcome {
    let w = study.outperformance("type1", HOM_METHODS[1], Region::Tail, Metric::Kl).unwrap_or(1.0);
    let h = study.outperformance("type1", HOM_METHODS[0], Region::Tail, Metric::Kl).unwrap_or(1.0);
    Outcome::check(
        w <= 0.15 && h <= 0.15,
        format!("tail KL beats u=700: w-hom-EI {:.1}%, hom-EI {:.1}% (need <= 15%)", 100.0 * w, 100.0 * h),
    )
}

fn c5() -> Outcome {
    let spec = ScenarioSpec::heterogeneous();
    let study = match run_study(&spec) {
        Ok(s) => s,
        Err(e) => return Outcome::check(false, format!("study failed: {e}")),
    };
    let (a, b) = (study.u_star_summary("type1"), study.u_star_summary("type2"));
    Outcome::check(
        (620.0..=730.0).contains(&a.mean) && (900.0..=1060.0).contains(&b.mean),
        format!(
            "mean u* type1 = {:.1} (sd {:.1}, none {}), need [620, 730]; type2 = {:.1} (sd {:.1}, none {}), need [900, 1060]; {} replications",
            a.mean, a.sd, a.none, b.mean, b.sd, b.none, study.replications
        ),
    )
}

fn read_losses(path: &str) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    let values: Vec<f64> = text
        .lines()
        .filter_map(|l| l.split(',').next_back()?.trim().trim_matches('"').parse::<f64>().ok())
        .filter(|v| *v > 0.0)
        .collect();
    if values.is_empty() {
        return Err(format!("{path}: no positive values"));
    }
    Ok(values)
}

fn c6() -> Outcome {
    let Ok(path) = std::env::var("TAILWEIGHT_DANISH") else {
        return Outcome::skip("TAILWEIGHT_DANISH not set; Danish fire losses not available");
    };
    let x = match read_losses(&path) {
        Ok(x) => x,
        Err(e) => return Outcome::check(false, e),
    };
    let grid: Vec<f64> = (6..=15).map(f64::from).collect();
    let hom = match run_hom(&x, &x, &grid, &HomConfig::with_seed(1)) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("hom-EI failed: {e}")),
    };
    let u_star = hom.report.u_star;
    let s: Vec<f64> = {
        let mut s = x.clone();
        s.sort_by(f64::total_cmp);
        s
    };
    let fs_grid: Vec<f64> = (85..=99).map(|p| quantile_sorted(&s, p as f64 / 100.0)).collect();
    let fs = forward_stop(&x, &fs_grid, 0.05, 999, 1).ok().and_then(|r| r.threshold);
    let mut ordered = true;
    if let Some(u) = u_star {
        let models = hom.candidates.models().to_vec();
        let post = PosteriorMixture::new(models.clone(), hom.report.weights.w_star.clone()).unwrap();
        if let Ok(edges) = evaluation_edges(&x, u, DEFAULT_BINS) {
            let combo = bulk_tail_report_on(&x, &post, u, "w-hom-EI", &edges);
            for m in models.iter().filter(|m| m.threshold() != u) {
                let single = bulk_tail_report_on(&x, m, u, "single", &edges);
                if let (Ok(cr), Ok(sr)) = (&combo, single) {
                    for r in [Region::Bulk, Region::Tail] {
                        ordered &= cr.get("w-hom-EI", r).unwrap().kl <= sr.get("single", r).unwrap().kl;
                    }
                } else {
                    ordered = false;
                }
            }
        } else {
            ordered = false;
        }
    }
    let fs_ok = fs.is_some_and(|u| (u - 16.55).abs() <= 1.0);
    Outcome::check(
        u_star == Some(10.0) && fs_ok && ordered,
        format!(
            "n = {}; hom-EI u* = {:?} (need 10); ForwardStop = {:?} (need 16.55 +- 1); combination KL ordering {}",
            x.len(),
            u_star,
            fs,
            if ordered { "holds" } else { "violated" }
        ),
    )
}

fn round_trip<D: Continuous<f64>>(d: &D) -> f64 {
    (1..1000)
        .map(|i| {
            let q = i as f64 / 1000.0;
            (d.cdf(d.quantile(q).unwrap()) - q).abs()
        })
        .fold(0.0, f64::max)
}

fn c7() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let mut rng = stream_rng(7, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(2..10);
        let log_l: Vec<Vec<f64>> = (0..m).map(|_| (0..20).map(|_| rng.random_range(-900.0..0.0)).collect()).collect();
        let preds: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..1e4)).collect();
        let w = hom_weights(&LikelihoodMatrix { log_l }, &vec![preds; m], &vec![1.0 / m as f64; m]).unwrap();
        worst = worst.max((w.w.iter().sum::<f64>() - 1.0).abs()).max((w.w_star.iter().sum::<f64>() - 1.0).abs());
    }
    checks.push(("weight normalization 1e-12", worst < 1e-12));

    let mix = MixtureModel::new(700.0, 0.05, LognormalParams::new(5.0, 1.0).unwrap(), GpdParams::new(700.0, 600.0, 0.2).unwrap()).unwrap();
    let rt = [
        round_trip(&GpdParams::new(0.0, 600.0, 0.2).unwrap()),
        round_trip(&GpdParams::new(0.0, 10.0, -0.3).unwrap()),
        round_trip(&LognormalParams::new(5.0, 1.0).unwrap()),
        round_trip(&GevParams::new(1.0, 2.0, 0.3).unwrap()),
        round_trip(&mix),
    ];
    checks.push(("cdf/quantile round trips 1e-9", rt.iter().all(|&e| e < 1e-9)));

    let sn = SkewNormalParams::new(0.0, 1.0, 0.0).unwrap();
    let sn_err = (-800..=800)
        .map(|i| {
            let z = i as f64 / 100.0;
            (sn.pdf(z) - norm_pdf(z)).abs().max((sn.cdf(z) - norm_cdf(z)).abs())
        })
        .fold(0.0, f64::max);
    checks.push(("skew-normal alpha=0 is normal 1e-12", sn_err < 1e-12));

    let inv_ok = (0..=180).all(|i| {
        let g = -0.9 + i as f64 * 0.01;
        let p = skew_normal_from_moments(3.0, 2.0, g).unwrap();
        (p.mean() - 3.0).abs() < 1e-8 && (p.variance().sqrt() - 2.0).abs() < 1e-8 && (p.skewness() - g).abs() < 1e-8
    });
    checks.push(("moment inversion |gamma| <= 0.9 to 1e-8", inv_ok));

    let edges: Vec<f64> = (0..=4000).map(|i| -10.0 + 21.0 * i as f64 / 4000.0).collect();
    let (a, b) = (SkewNormalParams::new(0.0, 1.0, 0.0).unwrap(), SkewNormalParams::new(1.0, 1.0, 0.0).unwrap());
    let pair = BinnedDensityPair::new(edges.clone(), model_masses(&a, &edges), model_masses(&b, &edges)).unwrap();
    let same = BinnedDensityPair::new(edges.clone(), model_masses(&a, &edges), model_masses(&a, &edges)).unwrap();
    // flooring near-empty bins at KL_FLOOR bounds KL(p || p) by bins * KL_FLOOR
    let axioms = hellinger_sq(&same) < 1e-14
        && kl_divergence(&same) <= KL_FLOOR * (edges.len() - 1) as f64
        && (hellinger_sq(&pair) - hellinger_sq(&pair.swapped())).abs() < 1e-14
        && kl_divergence(&pair) >= 0.0
        && (0.0..=1.0).contains(&hellinger_sq(&pair));
    checks.push(("Hellinger/KL axioms", axioms));
    checks.push(("Gaussian Hellinger 1-exp(-1/8)", (hellinger_sq(&pair) - (1.0 - (-0.125f64).exp())).abs() < 1e-3));

    let ln_edges = log_spaced_edges(0.01, 1e6, 2000).unwrap();
    let (la, lb) = (LognormalParams::new(5.0, 1.0).unwrap(), LognormalParams::new(5.1, 1.0).unwrap());
    let kl = kl_divergence(&BinnedDensityPair::new(ln_edges.clone(), model_masses(&la, &ln_edges), model_masses(&lb, &ln_edges)).unwrap());
    checks.push(("lognormal KL (dmu)^2/2sigma^2", (kl / 0.005 - 1.0).abs() < 0.1));

    let expo = sample(&GpdParams::new(0.0, 100.0, 0.0).unwrap(), 200_000, 3);
    let mrl = mrl_curve(&expo, &[0.0, 100.0, 200.0]);
    checks.push(("exponential MRL flat", mrl.mean_excess.iter().all(|e| (e.unwrap() / 100.0 - 1.0).abs() < 0.03)));

    let g = fit_gpd_mle(0.0, &sample(&GpdParams::new(0.0, 600.0, 0.2).unwrap(), 100_000, 4)).unwrap().params;
    checks.push(("GPD recovery n=1e5", (g.scale / 600.0 - 1.0).abs() < 0.03 && (g.shape - 0.2).abs() < 0.03));
    let l = fit_lognormal_naive(&sample(&la, 100_000, 5)).unwrap().params;
    checks.push(("lognormal recovery n=1e5", (l.mu - 5.0).abs() < 0.02 && (l.sigma_log - 1.0).abs() < 0.02));
    let v = fit_gev(&sample(&GevParams::new(10.0, 2.0, 0.1).unwrap(), 100_000, 6)).unwrap().params;
    checks.push((
        "GEV recovery n=1e5",
        (v.location - 10.0).abs() < 0.05 && (v.scale / 2.0 - 1.0).abs() < 0.03 && (v.shape - 0.1).abs() < 0.03,
    ));
    let train = LossSample::new(sample(&mix, 100_000, 8)).unwrap();
    let fitted = fit_mixture(&train, 700.0).unwrap();
    checks.push((
        "mixture recovery n=1e5",
        (fitted.bulk().mu - 5.0).abs() < 0.03 && (fitted.tail().shape - 0.2).abs() < 0.06 && (fitted.phi_u() - 0.05).abs() < 0.003,
    ));

    let fs = forward_stop_statistics(&[0.04f64]);
    checks.push(("ForwardStop -log(0.96) = 0.0408", (fs[0] - 0.0408).abs() < 5e-5));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let detail = if failed.is_empty() {
        format!("{} property checks hold", checks.len())
    } else {
        format!("{} of {} property checks fail: {}", failed.len(), checks.len(), failed.join("; "))
    };
    Outcome::check(failed.is_empty(), detail)
}

fn main() {
    // libtest-style flags from `cargo test` are accepted and ignored
    let _ = std::env::args();
    let start = Instant::now();
    let mut failed = Vec::new();

    report(7, &c7(), &mut failed);
    report(6, &c6(), &mut failed);
    report(2, &c2(), &mut failed);

    let hom = run_study(&ScenarioSpec::homogeneous());
    match &hom {
        Ok(study) => {
            report(1, &c1(study), &mut failed);
            report(3, &c3(study), &mut failed);
            report(4, &c4(study), &mut failed);
        }
        Err(e) => {
            for n in [1, 3, 4] {
                report(n, &Outcome::check(false, format!("homogeneous study failed: {e}")), &mut failed);
            }
        }
    }
    report(5, &c5(), &mut failed);

    failed.sort_unstable();
    println!("acceptance: {} failing criteria {:?} ({:.0} s)", failed.len(), failed, start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
