//! Quantitative evaluation: spine-distance masking, L1/MSE/PSNR/SSIM/VIFp,
//! Dice aggregation and the paired t-test.

use crate::error::{Error, Result};
use crate::stats::student_t_two_sided_p;
use crate::volume::{check_same_grid, LabelVolume, SUBREGION_POSTERIOR};
use ndarray::{Array2, ArrayView2};

// ---------------------------------------------------------------------------
// Spine-distance masking
// ---------------------------------------------------------------------------

const EDT_INF: f64 = 1e12;

/// 1D squared-distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -EDT_INF;
    z[1] = EDT_INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2 * q - 2 * p) as f64;
            if s <= z[k] {
                if k == 0 {
                    // Parabola q dominates everything so far.
                    v[0] = q;
                    z[0] = -EDT_INF;
                    z[1] = EDT_INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = EDT_INF;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = (q as f64 - p as f64).powi(2) + f[p];
    }
    d
}

/// Exact Euclidean squared-distance map to the nearest nonzero label pixel.
fn squared_distance_map(seg: &ArrayView2<u16>) -> Array2<f64> {
    let (h, w) = seg.dim();
    let mut dist = Array2::from_elem((h, w), EDT_INF);
    for ((i, j), &s) in seg.indexed_iter() {
        if s != 0 {
            dist[[i, j]] = 0.0;
        }
    }
    // Columns, then rows.
    for j in 0..w {
        let col: Vec<f64> = (0..h).map(|i| dist[[i, j]]).collect();
        for (i, v) in dt1d(&col).into_iter().enumerate() {
            dist[[i, j]] = v;
        }
    }
    for i in 0..h {
        let row: Vec<f64> = (0..w).map(|j| dist[[i, j]]).collect();
        for (j, v) in dt1d(&row).into_iter().enumerate() {
            dist[[i, j]] = v;
        }
    }
    dist
}

/// Zero out pixels farther than `radius` (Euclidean, pixels) from the
/// nearest segmented spine pixel. Applied identically to reference and
/// synthesized images before computing metrics.
pub fn spine_mask(img: &Array2<f32>, seg: &Array2<u16>, radius: f64) -> Result<Array2<f32>> {
    if img.dim() != seg.dim() {
        return Err(Error::ShapeMismatch {
            a: vec![img.dim().0, img.dim().1],
            b: vec![seg.dim().0, seg.dim().1],
        });
    }
    let dist2 = squared_distance_map(&seg.view());
    let r2 = radius * radius;
    let mut out = img.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if dist2[[i, j]] > r2 {
            *v = 0.0;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pixel metrics
// ---------------------------------------------------------------------------

fn check_pair(a: &Array2<f32>, b: &Array2<f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            a: vec![a.dim().0, a.dim().1],
            b: vec![b.dim().0, b.dim().1],
        });
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len().max(1) as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / n)
}

/// Mean squared difference.
pub fn mse(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len().max(1) as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; identical images report +infinity.
pub fn psnr(a: &Array2<f32>, b: &Array2<f32>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Unsupported {
            what: format!("PSNR peak {peak} must be > 0"),
        });
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

const SSIM_RADIUS: usize = 5; // 11x11 window
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable windowed correlation, valid mode (output shrinks by 2*radius).
fn filter_valid_sep(img: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let r = taps.len() / 2;
    let (h, w) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, w - 2 * r));
    for i in 0..h {
        for j in 0..w - 2 * r {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * img[[i, j + t]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h - 2 * r, w - 2 * r));
    for i in 0..h - 2 * r {
        for j in 0..w - 2 * r {
            let mut acc = 0.0;
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * tmp[[i + t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), stability constants
/// `(0.01 peak)^2` and `(0.03 peak)^2`, averaged over valid window positions.
pub fn ssim(a: &Array2<f32>, b: &Array2<f32>, peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = a.dim();
    let win = 2 * SSIM_RADIUS + 1;
    if h < win || w < win {
        return Err(Error::ImageTooSmall {
            dims: [h, w],
            what: "an 11x11 SSIM window",
        });
    }
    let taps = gaussian_taps(SSIM_RADIUS, SSIM_SIGMA);
    let af = a.mapv(|v| v as f64);
    let bf = b.mapv(|v| v as f64);
    let ux = filter_valid_sep(&af, &taps);
    let uy = filter_valid_sep(&bf, &taps);
    let uxx = filter_valid_sep(&(&af * &af), &taps);
    let uyy = filter_valid_sep(&(&bf * &bf), &taps);
    let uxy = filter_valid_sep(&(&af * &bf), &taps);

    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((i, j), &mx) in ux.indexed_iter() {
        let my = uy[[i, j]];
        let vx = uxx[[i, j]] - mx * mx;
        let vy = uyy[[i, j]] - my * my;
        let vxy = uxy[[i, j]] - mx * my;
        let s = ((2.0 * mx * my + c1) * (2.0 * vxy + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2));
        acc += s;
        n += 1;
    }
    Ok(acc / n as f64)
}

const VIF_EPS: f64 = 1e-10;
const VIF_SIGMA_NSQ: f64 = 2.0;

/// Normalized 1D Gaussian taps over the centered odd grid
/// -(n-1)/2 ..= (n-1)/2; the 2D window is their outer product.
fn vif_taps(n: usize, sigma: f64) -> Vec<f64> {
    let half = ((n - 1) / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

fn decimate2(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    Array2::from_shape_fn((oh, ow), |(i, j)| img[[2 * i, 2 * j]])
}

/// Pixel-domain Visual Information Fidelity: 4-scale Gaussian pyramid,
/// per-scale GSM information ratio with noise variance 2.0, ratios summed
/// over scales. Reference-first and deliberately asymmetric.
pub fn vifp(reference: &Array2<f32>, distorted: &Array2<f32>) -> Result<f64> {
    check_pair(reference, distorted)?;
    let mut gt = reference.mapv(|v| v as f64);
    let mut p = distorted.mapv(|v| v as f64);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for scale in 1..=4u32 {
        let n = 2usize.pow(4 - scale + 1) + 1;
        let taps = vif_taps(n, n as f64 / 5.0);
        if scale > 1 {
            if gt.dim().0 < n || gt.dim().1 < n {
                return Err(Error::ImageTooSmall {
                    dims: [reference.dim().0, reference.dim().1],
                    what: "a 4-scale VIF pyramid",
                });
            }
            gt = decimate2(&filter_valid_sep(&gt, &taps));
            p = decimate2(&filter_valid_sep(&p, &taps));
        }
        if gt.dim().0 < n || gt.dim().1 < n {
            return Err(Error::ImageTooSmall {
                dims: [reference.dim().0, reference.dim().1],
                what: "a 4-scale VIF pyramid",
            });
        }
        let mu1 = filter_valid_sep(&gt, &taps);
        let mu2 = filter_valid_sep(&p, &taps);
        let gt_sq = filter_valid_sep(&(&gt * &gt), &taps);
        let p_sq = filter_valid_sep(&(&p * &p), &taps);
        let gt_p = filter_valid_sep(&(&gt * &p), &taps);
        for ((i, j), &m1) in mu1.indexed_iter() {
            let m2 = mu2[[i, j]];
            let mut s1 = (gt_sq[[i, j]] - m1 * m1).max(0.0);
            let s2 = (p_sq[[i, j]] - m2 * m2).max(0.0);
            let s12 = gt_p[[i, j]] - m1 * m2;
            let mut g = s12 / (s1 + VIF_EPS);
            let mut sv = s2 - g * s12;
            if s1 < VIF_EPS {
                g = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if s2 < VIF_EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s2;
                g = 0.0;
            }
            if sv <= VIF_EPS {
                sv = VIF_EPS;
            }
            num += (1.0 + g * g * s1 / (sv + VIF_SIGMA_NSQ)).log10();
            den += (1.0 + s1 / VIF_SIGMA_NSQ).log10();
        }
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

/// Which voxels enter the Dice computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiceSubset {
    All,
    /// Intersect each side with its posterior subregion mask first.
    Posterior,
}

impl DiceSubset {
    pub fn name(self) -> &'static str {
        match self {
            DiceSubset::All => "all",
            DiceSubset::Posterior => "posterior",
        }
    }
}

/// Per-vertebra Dice overlap.
#[derive(Debug, Clone)]
pub struct DiceRow {
    pub vertebra: u16,
    pub dice: f64,
    pub voxels_a: usize,
    pub voxels_b: usize,
}

/// Dice per vertebra id (union of ids across both volumes, matched by id).
/// For the posterior subset both sides need subregion volumes.
pub fn dice_rows(
    a: &LabelVolume,
    b: &LabelVolume,
    subset: DiceSubset,
    a_sub: Option<&LabelVolume>,
    b_sub: Option<&LabelVolume>,
) -> Result<Vec<DiceRow>> {
    check_same_grid(&a.grid(), &b.grid(), "dice")?;
    if subset == DiceSubset::Posterior {
        if a_sub.is_none() || b_sub.is_none() {
            return Err(Error::Unsupported {
                what: "posterior Dice needs subregion volumes on both sides".to_string(),
            });
        }
        check_same_grid(&a.grid(), &a_sub.unwrap().grid(), "dice subregions a")?;
        check_same_grid(&b.grid(), &b_sub.unwrap().grid(), "dice subregions b")?;
    }
    let mut ids: Vec<u16> = a.labels();
    for id in b.labels() {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids.sort_unstable();

    let posterior = subset == DiceSubset::Posterior;
    let sub_a: Option<Vec<u16>> = a_sub.filter(|_| posterior).map(|s| s.data.iter().copied().collect());
    let sub_b: Option<Vec<u16>> = b_sub.filter(|_| posterior).map(|s| s.data.iter().copied().collect());

    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let mut na = 0usize;
        let mut nb = 0usize;
        let mut ni = 0usize;
        for (idx, (&va, &vb)) in a.data.iter().zip(b.data.iter()).enumerate() {
            let in_a = va == id
                && sub_a
                    .as_ref()
                    .map(|s| s[idx] == SUBREGION_POSTERIOR)
                    .unwrap_or(true);
            let in_b = vb == id
                && sub_b
                    .as_ref()
                    .map(|s| s[idx] == SUBREGION_POSTERIOR)
                    .unwrap_or(true);
            na += in_a as usize;
            nb += in_b as usize;
            ni += (in_a && in_b) as usize;
        }
        if na + nb == 0 {
            // Label exists only outside the chosen subset.
            continue;
        }
        rows.push(DiceRow {
            vertebra: id,
            dice: 2.0 * ni as f64 / (na + nb) as f64,
            voxels_a: na,
            voxels_b: nb,
        });
    }
    Ok(rows)
}

/// Mean of per-vertebra Dice values; the per-volume aggregate.
pub fn dice_per_volume(rows: &[DiceRow]) -> Option<f64> {
    if rows.is_empty() {
        return None;
    }
    Some(rows.iter().map(|r| r.dice).sum::<f64>() / rows.len() as f64)
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

/// Result of a paired two-sided t-test.
#[derive(Debug, Clone, Copy)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Paired two-sided Student t-test on matched samples. Zero-variance
/// differences degenerate to `t = 0, p = 1` (all differences zero) or the
/// `p = 0` sentinel (constant nonzero difference).
pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::SampleLengthMismatch {
            a: x.len(),
            b: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n });
    }
    let d: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, n }
        } else {
            TTest {
                t: if mean > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                p: 0.0,
                n,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, (n - 1) as f64),
        n,
    })
}

/// The worst (highest) p-value of a set of comparisons.
pub fn worst_p(ps: &[f64]) -> Result<f64> {
    if ps.is_empty() {
        return Err(Error::EmptyInput { what: "p-values" });
    }
    Ok(ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64, h: usize, w: usize) -> (Array2<f32>, Array2<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0f32));
        let b = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0f32));
        (a, b)
    }

    #[test]
    fn l1_mse_closed_forms() {
        let a = Array2::from_elem((8, 8), 0.5f32);
        let b = Array2::from_elem((8, 8), 0.4f32);
        assert!((l1(&a, &b).unwrap() - 0.1).abs() < 1e-7);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-8);
        assert_eq!(l1(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn l1_mse_match_naive_loops() {
        let (a, b) = random_pair(3, 17, 23);
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for i in 0..17 {
            for j in 0..23 {
                let d = a[[i, j]] as f64 - b[[i, j]] as f64;
                s1 += d.abs();
                s2 += d * d;
            }
        }
        let n = (17 * 23) as f64;
        assert!((l1(&a, &b).unwrap() - s1 / n).abs() < 1e-12);
        assert!((mse(&a, &b).unwrap() - s2 / n).abs() < 1e-12);
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Array2::from_elem((4, 4), 0.0f32);
        let b = Array2::from_elem((4, 4), 0.1f32);
        // mse = 0.01, peak 1 -> 20 dB (0.1 is not exact in f32)
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);
        assert!(psnr(&a, &a, 1.0).unwrap().is_infinite());
        // Table-1 scale check: mse 0.0023 at peak 1 is 26.38 dB.
        let v = 10.0 * (1.0f64 / 0.0023).log10();
        assert!((v - 26.38).abs() < 5e-3);
    }

    #[test]
    fn metric_symmetry_and_vif_asymmetry() {
        let (a, b) = random_pair(11, 40, 40);
        assert_eq!(l1(&a, &b).unwrap(), l1(&b, &a).unwrap());
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s_ab = ssim(&a, &b, 1.0).unwrap();
        let s_ba = ssim(&b, &a, 1.0).unwrap();
        assert!((s_ab - s_ba).abs() < 1e-12);
        // VIFp is reference-first: swap the arguments on a smooth/noisy pair
        // and the score changes.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let smooth = Array2::from_shape_fn((64, 64), |(i, j)| {
            ((i as f32 / 9.0).sin() + (j as f32 / 7.0).cos()) * 0.4
        });
        let noisy = smooth.mapv(|v| v + rng.random_range(-0.2..0.2));
        let v_ab = vifp(&smooth, &noisy).unwrap();
        let v_ba = vifp(&noisy, &smooth).unwrap();
        assert!((v_ab - v_ba).abs() > 1e-3, "{v_ab} vs {v_ba}");
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let (a, _) = random_pair(7, 32, 32);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // Zero-mean pattern against its negation.
        let pattern = Array2::from_shape_fn((32, 32), |(i, j)| {
            if (i + j) % 2 == 0 {
                0.5f32
            } else {
                -0.5
            }
        });
        let neg = pattern.mapv(|v| -v);
        assert!(ssim(&pattern, &neg, 1.0).unwrap() <= 0.0);
    }

    #[test]
    fn ssim_window_too_small() {
        let a = Array2::<f32>::zeros((8, 8));
        assert!(matches!(
            ssim(&a, &a, 1.0),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn vif_identity_and_noise() {
        let smooth = Array2::from_shape_fn((72, 72), |(i, j)| {
            ((i as f32 / 11.0).sin() * (j as f32 / 5.0).cos()) * 0.5
        });
        let v = vifp(&smooth, &smooth).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "self-VIF {v}");
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let noise = Array2::from_shape_fn((72, 72), |_| rng.random_range(-0.5..0.5f32));
        let v = vifp(&smooth, &noise).unwrap();
        assert!(v < 0.05, "uncorrelated noise carries no information: {v}");
    }

    #[test]
    fn vif_too_small() {
        let a = Array2::<f32>::zeros((20, 20));
        assert!(matches!(vifp(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    fn label_cube(
        dims: [usize; 3],
        lo: [usize; 3],
        hi: [usize; 3],
        id: u16,
    ) -> LabelVolume {
        let mut data = Array3::<u16>::zeros((dims[0], dims[1], dims[2]));
        for i in lo[0]..hi[0] {
            for j in lo[1]..hi[1] {
                for k in lo[2]..hi[2] {
                    data[[i, j, k]] = id;
                }
            }
        }
        LabelVolume::new(data, Geometry::isotropic(1.0)).unwrap()
    }

    #[test]
    fn dice_trivial_cases() {
        let a = label_cube([10, 10, 10], [2, 2, 2], [6, 6, 6], 1);
        let rows = dice_rows(&a, &a, DiceSubset::All, None, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].dice, 1.0);

        let b = label_cube([10, 10, 10], [7, 7, 7], [9, 9, 9], 1);
        let rows = dice_rows(&a, &b, DiceSubset::All, None, None).unwrap();
        assert_eq!(rows[0].dice, 0.0);
    }

    #[test]
    fn dice_half_overlap_matches_count() {
        // Two 4x4x4 cubes sharing half their volume.
        let a = label_cube([12, 12, 12], [2, 2, 2], [6, 6, 6], 1);
        let b = label_cube([12, 12, 12], [4, 2, 2], [8, 6, 6], 1);
        let rows = dice_rows(&a, &b, DiceSubset::All, None, None).unwrap();
        let expect = 2.0 * 32.0 / (64.0 + 64.0);
        assert_eq!(rows[0].dice, expect);
        assert_eq!(rows[0].voxels_a, 64);
    }

    #[test]
    fn dice_relabeling_invariance() {
        let a = label_cube([10, 10, 10], [1, 1, 1], [5, 5, 5], 2);
        let b = label_cube([10, 10, 10], [3, 1, 1], [7, 5, 5], 2);
        let rows = dice_rows(&a, &b, DiceSubset::All, None, None).unwrap();
        // Bijection 2 -> 9 on both sides.
        let a9 = LabelVolume::new(a.data.mapv(|v| if v == 2 { 9 } else { 0 }), a.geom.clone())
            .unwrap();
        let b9 = LabelVolume::new(b.data.mapv(|v| if v == 2 { 9 } else { 0 }), b.geom.clone())
            .unwrap();
        let rows9 = dice_rows(&a9, &b9, DiceSubset::All, None, None).unwrap();
        assert_eq!(rows[0].dice, rows9[0].dice);
    }

    #[test]
    fn dice_posterior_subset() {
        let a = label_cube([10, 10, 10], [2, 2, 2], [6, 6, 6], 1);
        // Posterior = the j >= 4 half on both sides.
        let mut sub = Array3::<u16>::zeros((10, 10, 10));
        for ((_, j, _), v) in sub.indexed_iter_mut() {
            *v = if j >= 4 { SUBREGION_POSTERIOR } else { 1 };
        }
        let sub = LabelVolume::new(sub, Geometry::isotropic(1.0)).unwrap();
        let rows =
            dice_rows(&a, &a, DiceSubset::Posterior, Some(&sub), Some(&sub)).unwrap();
        assert_eq!(rows[0].dice, 1.0);
        assert_eq!(rows[0].voxels_a, 4 * 4 * 2);
        // Missing subregions -> error.
        assert!(dice_rows(&a, &a, DiceSubset::Posterior, None, None).is_err());
    }

    #[test]
    fn spine_mask_cases() {
        let img = Array2::from_elem((32, 32), 0.7f32);
        // Everything labeled: identity.
        let seg_all = Array2::from_elem((32, 32), 1u16);
        assert_eq!(spine_mask(&img, &seg_all, 10.0).unwrap(), img);
        // Nothing labeled: all zero.
        let seg_none = Array2::zeros((32, 32));
        assert!(spine_mask(&img, &seg_none, 10.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        // Single pixel: surviving region is the radius-10 disc.
        let mut seg_one = Array2::zeros((32, 32));
        seg_one[[16, 16]] = 1;
        let out = spine_mask(&img, &seg_one, 10.0).unwrap();
        let mut survivors = 0usize;
        let mut brute = 0usize;
        for i in 0..32usize {
            for j in 0..32usize {
                let d2 = (i as f64 - 16.0).powi(2) + (j as f64 - 16.0).powi(2);
                let inside = d2 <= 100.0;
                brute += inside as usize;
                let kept = out[[i, j]] != 0.0;
                survivors += kept as usize;
                assert_eq!(kept, inside, "pixel ({i},{j}) dist2 {d2}");
            }
        }
        assert_eq!(survivors, brute);
    }

    #[test]
    fn spine_mask_matches_brute_force_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let img = Array2::from_elem((24, 40), 1.0f32);
        let mut seg = Array2::<u16>::zeros((24, 40));
        for _ in 0..15 {
            seg[[rng.random_range(0..24), rng.random_range(0..40)]] = 1;
        }
        let out = spine_mask(&img, &seg, 4.5).unwrap();
        for i in 0..24usize {
            for j in 0..40usize {
                let mut best = f64::INFINITY;
                for ((si, sj), &s) in seg.indexed_iter() {
                    if s != 0 {
                        let d2 =
                            (i as f64 - si as f64).powi(2) + (j as f64 - sj as f64).powi(2);
                        best = best.min(d2);
                    }
                }
                let inside = best <= 4.5 * 4.5;
                assert_eq!(out[[i, j]] != 0.0, inside, "({i},{j})");
            }
        }
    }

    #[test]
    fn masking_hides_far_field_differences() {
        let mut seg = Array2::<u16>::zeros((40, 40));
        seg[[20, 20]] = 1;
        let (a, _) = random_pair(1, 40, 40);
        let mut b = a.clone();
        // Perturb only far pixels (>10 from the seed).
        for ((i, j), v) in b.indexed_iter_mut() {
            let d2 = (i as f64 - 20.0).powi(2) + (j as f64 - 20.0).powi(2);
            if d2 > 100.0 {
                *v += 0.3;
            }
        }
        let ma = spine_mask(&a, &seg, 10.0).unwrap();
        let mb = spine_mask(&b, &seg, 10.0).unwrap();
        assert_eq!(l1(&ma, &mb).unwrap(), 0.0);
        assert_eq!(mse(&ma, &mb).unwrap(), 0.0);
        assert!(psnr(&ma, &mb, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn ttest_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = paired_ttest(&x, &x).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);

        // Degenerate variance with nonzero mean difference.
        let y = [0.0, 1.0, 2.0];
        let x3 = [1.0, 2.0, 3.0];
        let r = paired_ttest(&x3, &y).unwrap();
        assert_eq!(r.p, 0.0);
        assert!(r.t.is_infinite() && r.t > 0.0);

        assert!(matches!(
            paired_ttest(&[1.0], &[2.0]),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(matches!(
            paired_ttest(&[1.0, 2.0], &[2.0]),
            Err(Error::SampleLengthMismatch { .. })
        ));
    }

    #[test]
    fn ttest_antisymmetry() {
        let x = [5.0, 7.0, 5.5, 8.0, 6.2, 7.7];
        let y = [4.8, 7.5, 5.0, 7.2, 6.6, 7.0];
        let ab = paired_ttest(&x, &y).unwrap();
        let ba = paired_ttest(&y, &x).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p - ba.p).abs() < 1e-12);
    }

    #[test]
    fn ttest_n10_critical_value() {
        // Construct 10 paired samples with |t| = 2.262 -> p = 0.05.
        // d has mean m and sd s with t = m / (s / sqrt(10)).
        // Use d = m + s*z for a fixed zero-mean unit-sd z pattern.
        let z = [
            1.0, -1.0, 0.5, -0.5, 1.5, -1.5, 0.8, -0.8, 0.2, -0.2f64,
        ];
        let zm = z.iter().sum::<f64>() / 10.0;
        let zv = z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / 9.0;
        let target_t = 2.262;
        let s = 1.0;
        let m = target_t * s / 10.0f64.sqrt();
        let d: Vec<f64> = z.iter().map(|v| m + s * (v - zm) / zv.sqrt()).collect();
        let y = vec![0.0; 10];
        let r = paired_ttest(&d, &y).unwrap();
        assert!((r.t - target_t).abs() < 1e-12);
        assert!((r.p - 0.05).abs() < 1e-3, "p = {}", r.p);
    }

    #[test]
    fn worst_p_is_max() {
        assert_eq!(worst_p(&[0.01]).unwrap(), 0.01);
        assert_eq!(worst_p(&[0.01, 0.04, 0.002]).unwrap(), 0.04);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let brute = ps.iter().cloned().fold(0.0f64, f64::max);
        assert_eq!(worst_p(&ps).unwrap(), brute);
        assert!(worst_p(&[]).is_err());
    }
}
