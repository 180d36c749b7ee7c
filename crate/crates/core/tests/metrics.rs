use tailweight::dist::{sample, Continuous};
use tailweight::metrics::{
    anderson_darling, bulk_tail_report, evaluation_edges, forward_stop, forward_stop_rule, forward_stop_statistics,
    hellinger_sq, kl_divergence, log_spaced_edges, model_masses, mrl_curve, BinnedDensityPair, Region,
};
use tailweight::{GpdParams, LognormalParams, MixtureModel, SkewNormalParams};

fn linear_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
}

fn pair_of<A: Continuous<f64>, B: Continuous<f64>>(edges: Vec<f64>, a: &A, b: &B) -> BinnedDensityPair<f64> {
    let p = model_masses(a, &edges);
    let q = model_masses(b, &edges);
    BinnedDensityPair::new(edges, p, q).unwrap()
}

fn truth() -> MixtureModel {
    MixtureModel::new(700.0, 0.05, LognormalParams::new(5.0, 1.0).unwrap(), GpdParams::new(700.0, 600.0, 0.2).unwrap())
        .unwrap()
}

#[test]
fn identical_and_disjoint_masses() {
    let edges = linear_edges(0.0, 4.0, 4);
    let same = BinnedDensityPair::new(edges.clone(), vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
    assert!(hellinger_sq(&same).abs() < 1e-15);
    assert!(kl_divergence(&same).abs() < 1e-15);
    let disjoint = BinnedDensityPair::new(edges, vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    assert_eq!(hellinger_sq(&disjoint), 1.0);
    assert!(kl_divergence(&disjoint) > 20.0);
}

#[test]
fn gaussian_shift_hellinger_closed_form() {
    let a = SkewNormalParams::new(0.0, 1.0, 0.0).unwrap();
    let b = SkewNormalParams::new(1.0, 1.0, 0.0).unwrap();
    let pair = pair_of(linear_edges(-10.0, 11.0, 4000), &a, &b);
    let expected = 1.0 - (-1.0f64 / 8.0).exp();
    assert!((hellinger_sq(&pair) - expected).abs() < 1e-3, "{}", hellinger_sq(&pair));
    assert!((kl_divergence(&pair) - 0.5).abs() < 1e-3);
}

#[test]
fn lognormal_shift_kl_closed_form() {
    let a = LognormalParams::new(5.0, 1.0).unwrap();
    let b = LognormalParams::new(5.1, 1.0).unwrap();
    let pair = pair_of(log_spaced_edges(0.01, 1e6, 2000).unwrap(), &a, &b);
    let kl = kl_divergence(&pair);
    assert!((kl / 0.005 - 1.0).abs() < 0.1, "{kl}");
}

#[test]
fn kl_is_asymmetric_hellinger_is_not() {
    let a = SkewNormalParams::new(0.0, 1.0, 4.0).unwrap();
    let b = SkewNormalParams::new(0.3, 1.5, 0.0).unwrap();
    let pair = pair_of(linear_edges(-8.0, 10.0, 800), &a, &b);
    let back = pair.swapped();
    assert!((kl_divergence(&pair) - kl_divergence(&back)).abs() > 1e-3);
    assert!((hellinger_sq(&pair) - hellinger_sq(&back)).abs() < 1e-14);
    assert!(hellinger_sq(&pair) > 0.0 && hellinger_sq(&pair) < 1.0);
}

#[test]
fn kl_floor_keeps_empty_candidate_bins_finite() {
    let edges = linear_edges(0.0, 3.0, 3);
    let pair = BinnedDensityPair::new(edges, vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 0.0]).unwrap();
    let kl = kl_divergence(&pair);
    assert!(kl.is_finite() && kl > 5.0);
}

#[test]
fn pair_validation() {
    assert!(BinnedDensityPair::new(vec![0.0, 1.0], vec![1.0], vec![0.0]).is_err());
    assert!(BinnedDensityPair::new(vec![0.0, 1.0], vec![1.0, 2.0], vec![1.0]).is_err());
    assert!(BinnedDensityPair::new(vec![1.0, 0.0], vec![1.0], vec![1.0]).is_err());
    assert!(BinnedDensityPair::new(vec![0.0, 1.0], vec![-1.0], vec![1.0]).is_err());
    assert!(log_spaced_edges(0.0, 1.0, 10).is_err());
}

#[test]
fn edges_include_split() {
    let test = sample(&truth(), 3000, 1);
    let edges = evaluation_edges(&test, 700.0, 200).unwrap();
    assert_eq!(edges.len(), 202);
    assert!(edges.contains(&700.0));
    assert!(edges.windows(2).all(|w| w[0] < w[1]));
    assert!(evaluation_edges(&test, 1e9, 200).is_err());
}

#[test]
fn true_model_scores_better_than_misspecified() {
    let test = sample(&truth(), 30_000, 2);
    let good = bulk_tail_report(&test, &truth(), 700.0, "truth").unwrap();
    let off = MixtureModel::new(700.0, 0.05, LognormalParams::new(5.3, 0.8).unwrap(), GpdParams::new(700.0, 300.0, 0.0).unwrap())
        .unwrap();
    let bad = bulk_tail_report(&test, &off, 700.0, "off").unwrap();
    for region in [Region::Bulk, Region::Tail] {
        let (g, b) = (good.get("truth", region).unwrap(), bad.get("off", region).unwrap());
        assert!(g.hellinger < b.hellinger && g.kl < b.kl, "{region:?}");
    }
    let n: usize = good.rows.iter().map(|r| r.n_obs).sum();
    assert_eq!(n, test.len());
    assert!(good.to_csv().starts_with("method,region,hellinger,kl,n_obs\n"));
}

#[test]
fn bin_refinement_is_stable() {
    let test = sample(&truth(), 1_000_000, 3);
    let off = MixtureModel::new(700.0, 0.05, LognormalParams::new(5.2, 0.9).unwrap(), GpdParams::new(700.0, 400.0, 0.1).unwrap())
        .unwrap();
    let at = |bins: usize| {
        let edges = evaluation_edges(&test, 700.0, bins).unwrap();
        let cut = edges.iter().position(|&e| e == 700.0).unwrap();
        let p = tailweight::metrics::empirical_masses(&test, &edges);
        let q = model_masses(&off, &edges);
        hellinger_sq(&BinnedDensityPair::new(edges[..=cut].to_vec(), p[..cut].to_vec(), q[..cut].to_vec()).unwrap())
    };
    let (coarse, fine) = (at(200), at(400));
    assert!((fine / coarse - 1.0).abs() < 0.05, "{coarse} vs {fine}");
}

#[test]
fn empty_region_is_an_error() {
    let test = vec![10.0, 20.0, 30.0];
    assert!(bulk_tail_report(&test, &truth(), 30.0, "x").is_err());
}

#[test]
fn mrl_of_exponential_is_flat() {
    let exp = GpdParams::new(0.0, 100.0, 0.0).unwrap();
    let x = sample(&exp, 200_000, 4);
    let grid: Vec<f64> = (0..=5).map(|i| i as f64 * 50.0).collect();
    let curve = mrl_curve(&x, &grid);
    for e in &curve.mean_excess {
        assert!((e.unwrap() / 100.0 - 1.0).abs() < 0.03, "{e:?}");
    }
}

#[test]
fn mrl_of_gpd_has_linear_slope() {
    let g = GpdParams::new(0.0, 600.0, 0.2).unwrap();
    let x = sample(&g, 1_000_000, 5);
    let curve = mrl_curve(&x, &[0.0, 500.0, 1000.0]);
    let e: Vec<f64> = curve.mean_excess.iter().map(|v| v.unwrap()).collect();
    assert!((e[0] / 750.0 - 1.0).abs() < 0.03);
    let slope = (e[2] - e[0]) / 1000.0;
    assert!((slope - 0.25).abs() < 0.05, "{slope}");
}

#[test]
fn mrl_reports_empty_points() {
    let curve = mrl_curve(&[1.0, 2.0, 3.0], &[0.0, 2.5, 3.0, 10.0]);
    assert_eq!(curve.mean_excess, vec![Some(2.0), Some(0.5), None, None]);
    assert_eq!(curve.counts, vec![3, 1, 0, 0]);
    assert_eq!(curve.empty_points(), vec![3.0, 10.0]);
    assert!(curve.to_csv().starts_with("v,mean_excess,count\n0,2e0,3\n"));
}

#[test]
fn pooled_mrl_lies_between_group_curves() {
    let a = sample(&GpdParams::new(0.0, 100.0, 0.0).unwrap(), 20_000, 6);
    let b = sample(&GpdParams::new(0.0, 500.0, 0.1).unwrap(), 20_000, 7);
    let mut pooled = a.clone();
    pooled.extend(&b);
    let grid = [0.0, 100.0, 200.0];
    let (ca, cb, cp) = (mrl_curve(&a, &grid), mrl_curve(&b, &grid), mrl_curve(&pooled, &grid));
    for i in 0..grid.len() {
        let (ea, eb, ep) = (ca.mean_excess[i].unwrap(), cb.mean_excess[i].unwrap(), cp.mean_excess[i].unwrap());
        assert!(ep > ea.min(eb) && ep < ea.max(eb));
        let weighted = (ea * ca.counts[i] as f64 + eb * cb.counts[i] as f64) / cp.counts[i] as f64;
        assert!((weighted - ep).abs() < 1e-9 * ep);
    }
}

#[test]
fn forward_stop_hand_examples() {
    let p = [0.04f64; 5];
    let s = forward_stop_statistics(&p);
    assert!(s.iter().all(|&v| (v - 0.040822).abs() < 1e-6));
    assert_eq!(forward_stop_rule(&p, 0.05), Some(5));
    assert_eq!(forward_stop_rule(&[0.999, 0.01, 0.01, 0.01], 0.05), None);
    assert_eq!(forward_stop_rule(&[0.01, 0.02, 0.9, 0.9], 0.05), Some(2));
    let s = forward_stop_statistics(&[0.5, 0.0]);
    assert!((s[1] - 2f64.ln() / 2.0).abs() < 1e-15);
}

#[test]
fn anderson_darling_sanity() {
    let n = 500;
    let ideal: Vec<f64> = (1..=n).map(|i| (i as f64 - 0.5) / n as f64).collect();
    assert!(anderson_darling(&ideal) < 0.01);
    let skewed: Vec<f64> = ideal.iter().map(|u| u * u).collect();
    assert!(anderson_darling(&skewed) > 20.0);
}

#[test]
fn forward_stop_rejects_nothing_on_a_pure_gpd_sample() {
    let g = GpdParams::new(0.0, 100.0, 0.2).unwrap();
    let x = sample(&g, 3000, 8);
    let r = forward_stop(&x, &[0.0, 50.0, 100.0, 1e7], 0.1, 99, 3).unwrap();
    assert_eq!(r.dropped, vec![1e7]);
    assert_eq!(r.thresholds.len(), 3);
    assert!(r.p_values.iter().all(|&p| p > 0.0 && p <= 1.0));
    // no leading threshold is rejected
    assert_eq!(r.k_hat, None, "{:?}", r.p_values);
    assert_eq!(r.threshold, None);
    assert_eq!(forward_stop(&x, &[0.0, 50.0, 100.0, 1e7], 0.1, 99, 3).unwrap(), r);
}

#[test]
fn forward_stop_rejects_poor_low_thresholds() {
    let x = sample(&truth(), 5000, 9);
    let r = forward_stop(&x, &[50.0, 100.0, 700.0], 0.1, 99, 4).unwrap();
    assert!(r.p_values[0] < 0.05, "{:?}", r.p_values);
    assert_eq!(r.k_hat, Some(2), "{:?}", r.p_values);
    assert_eq!(r.threshold, Some(100.0));
    assert!(forward_stop(&x, &[100.0, 50.0], 0.1, 99, 4).is_err());
    assert!(forward_stop(&x, &[50.0], 1.5, 99, 4).is_err());
}
