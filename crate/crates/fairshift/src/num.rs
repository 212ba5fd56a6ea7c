//! Deterministic numeric primitives shared across the crate.
//!
//! Reductions here use pairwise summation with a fixed tree shape that
//! depends only on the input length, never on thread count or chunking, so
//! every aggregate the library reports is bit-reproducible run to run. The
//! module also carries a small Cholesky solver for the ridge systems the
//! nuisance fits produce, and an inverse normal CDF for confidence limits.

use ndarray::{Array1, Array2};

/// Below this length a sum is accumulated sequentially in index order.
const PAIRWISE_LEAF: usize = 32;

/// Pairwise (cascade) summation over a slice with a fixed split tree.
///
/// Error grows O(log n) in ulps instead of O(n) for naive accumulation, and
/// the association order is a pure function of `xs.len()`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Pairwise summation of `f(i)` for `i in 0..n` without materialising the
/// terms. Same fixed tree as [`pairwise_sum`].
pub fn pairwise_map_sum<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= PAIRWISE_LEAF {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, &f)
}

/// Arithmetic mean via pairwise summation. Empty input returns 0.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Column means of an `n x d` matrix, each column reduced pairwise.
pub fn column_means(m: &Array2<f64>) -> Array1<f64> {
    let n = m.nrows();
    let d = m.ncols();
    let mut out = Array1::zeros(d);
    for j in 0..d {
        out[j] = pairwise_map_sum(n, |i| m[[i, j]]) / n.max(1) as f64;
    }
    out
}

/// Empirical covariance of the columns of an `n x d` matrix, denominator `n`
/// (the moment convention used for influence-function variances).
pub fn column_covariance(m: &Array2<f64>) -> Array2<f64> {
    let n = m.nrows();
    let d = m.ncols();
    let means = column_means(m);
    let mut cov = Array2::zeros((d, d));
    for a in 0..d {
        for b in a..d {
            let s = pairwise_map_sum(n, |i| (m[[i, a]] - means[a]) * (m[[i, b]] - means[b]));
            let v = s / n.max(1) as f64;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    cov
}

/// Sample skewness (population form `m3 / m2^{3/2}`); 0 for degenerate input.
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let m2 = pairwise_map_sum(n, |i| (xs[i] - m).powi(2)) / n as f64;
    if m2 <= 0.0 {
        return 0.0;
    }
    let m3 = pairwise_map_sum(n, |i| (xs[i] - m).powi(3)) / n as f64;
    m3 / m2.powf(1.5)
}

/// Least-squares line `y = intercept + slope * x`; returns `(intercept, slope)`.
/// Used for log-log rate fits. Requires at least two distinct x values.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len(), "line_fit: length mismatch");
    let n = xs.len();
    let mx = mean(xs);
    let my = mean(ys);
    let sxx = pairwise_map_sum(n, |i| (xs[i] - mx) * (xs[i] - mx));
    let sxy = pairwise_map_sum(n, |i| (xs[i] - mx) * (ys[i] - my));
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Solve `A x = b` for symmetric positive-definite `A` by Cholesky
/// factorisation. Returns `None` when a pivot is not strictly positive.
/// Intended for the small (p+1)-dimensional ridge systems of the linear fits.
pub fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "cholesky_solve: matrix not square");
    assert_eq!(b.len(), n, "cholesky_solve: rhs length mismatch");
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k] ] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    // Forward substitution L y = b, then back substitution L^T x = y.
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Some(x)
}

/// True when the symmetric matrix is positive semidefinite up to `tol`,
/// checked by attempting a Cholesky factorisation of `A + tol * I`.
pub fn is_psd_within(a: &Array2<f64>, tol: f64) -> bool {
    let n = a.nrows();
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[[i, i]] += tol;
    }
    let rhs = Array1::zeros(n);
    cholesky_solve(&shifted, &rhs).is_some()
}

/// `log(sum_i exp(x_i))` with max shift for overflow safety.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s = pairwise_map_sum(xs.len(), |i| (xs[i] - m).exp());
    m + s.ln()
}

/// Inverse standard normal CDF via Wichura's rational approximation
/// (Algorithm AS 241, PPND16 coefficient set), accurate to roughly 1e-16
/// relative error over (0, 1) — comfortably inside the 1e-9 contract the
/// confidence intervals rely on.
///
/// Panics when `p` lies outside the open interval (0, 1); callers validate
/// confidence levels before quantiles are requested.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "normal_quantile: p must lie in (0, 1), got {p}"
    );

    const A: [f64; 8] = [
        3.387_132_872_796_366_608e0,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 7] = [
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_3e0,
        4.630_337_846_156_545_295_9e0,
        5.769_497_221_460_691_405_5e0,
        3.647_848_324_763_204_605e0,
        1.270_458_252_452_368_382_6e0,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_3e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 7] = [
        2.053_191_626_637_758_821_9e0,
        1.676_384_830_183_803_849_4e0,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_7e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_2e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2e0,
        5.463_784_911_164_114_369_9e0,
        1.784_826_539_917_291_335_8e0,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 7] = [
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    fn ratio(num: &[f64; 8], den: &[f64; 7], r: f64) -> f64 {
        let mut p = num[7];
        for k in (0..7).rev() {
            p = p * r + num[k];
        }
        let mut q = den[6];
        for k in (0..6).rev() {
            q = q * r + den[k];
        }
        p / (q * r + 1.0)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * ratio(&A, &B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        ratio(&C, &D, r - 1.6)
    } else {
        ratio(&E, &F, r - 5.0)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pairwise_sum_matches_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_map_sum(xs.len(), |i| xs[i]), 500_500.0);
    }

    #[test]
    fn pairwise_sum_tree_is_length_determined() {
        // Same values, same order: identical bits regardless of how the
        // caller chunks work elsewhere. This is the contract the thread-count
        // reproducibility of downstream reports rests on.
        let xs: Vec<f64> = (0..10_000u64)
            .map(|i| ((i * 2654435761) % 997) as f64 * 1e-3)
            .collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_map_sum(xs.len(), |i| xs[i]);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let x = cholesky_solve(&a, &b).expect("SPD system must solve");
        // Residual check.
        for i in 0..3 {
            let mut r = -b[i];
            for j in 0..3 {
                r += a[[i, j]] * x[j];
            }
            assert!(r.abs() < 1e-12, "residual {r} too large at row {i}");
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]]; // eigenvalues 3, -1
        let b = array![1.0, 1.0];
        assert!(cholesky_solve(&a, &b).is_none());
    }

    #[test]
    fn psd_check_accepts_and_rejects() {
        let cov = array![[2.0, 0.5], [0.5, 1.0]];
        assert!(is_psd_within(&cov, 1e-10));
        let neg = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(!is_psd_within(&neg, 1e-10));
    }

    #[test]
    fn normal_quantile_matches_reference_values() {
        // Reference quantiles, accurate to the printed digits.
        let cases = [
            (0.975, 1.959_963_984_540_054),
            (0.95, 1.644_853_626_951_472_2),
            (0.99, 2.326_347_874_040_840_8),
            (0.9, 1.281_551_565_544_600_4),
            (0.5, 0.0),
        ];
        for (p, want) in cases {
            let got = normal_quantile(p);
            assert!(
                (got - want).abs() <= 1e-9,
                "quantile({p}) = {got}, want {want}"
            );
        }
    }

    #[test]
    fn normal_quantile_is_antisymmetric_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let z = normal_quantile(p);
            assert!(z > prev, "quantile must increase");
            prev = z;
            let z_mirror = normal_quantile(1.0 - p);
            assert!((z + z_mirror).abs() < 1e-11, "antisymmetry at p={p}");
        }
    }

    #[test]
    #[should_panic(expected = "normal_quantile")]
    fn normal_quantile_rejects_out_of_range() {
        normal_quantile(1.0);
    }

    #[test]
    fn skewness_zero_for_symmetric_sample() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!(skewness(&xs).abs() < 1e-14);
        assert_eq!(skewness(&[3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (b0, b1) = line_fit(&xs, &ys);
        assert!((b0 - 2.0).abs() < 1e-12 && (b1 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_offsets() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }
}
