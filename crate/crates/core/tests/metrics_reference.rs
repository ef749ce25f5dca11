//! SSIM and VIFp against frozen reference values computed by independent
//! implementations (scikit-image SSIM; NumPy pixel-domain VIF). The image
//! pairs live next to the expected values as raw little-endian f32 dumps.
//!
//! Regenerate with `python3 tools/make_fixtures.py`.

use ndarray::Array2;
use serde_json::Value;
use spinesynth::metrics::{ssim, vifp};
use std::path::{Path, PathBuf};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn load_image(path: &Path, shape: (usize, usize)) -> Array2<f32> {
    let bytes = std::fs::read(path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
    assert_eq!(bytes.len(), shape.0 * shape.1 * 4, "{path:?} size");
    let mut values = Vec::with_capacity(shape.0 * shape.1);
    for chunk in bytes.chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Array2::from_shape_vec(shape, values).unwrap()
}

#[test]
fn ssim_and_vifp_match_reference_fixtures() {
    let dir = fixtures_dir();
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics_reference.json")).unwrap())
            .unwrap();
    let peak = meta["peak"].as_f64().unwrap();
    let pairs = meta["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 10);
    for pair in pairs {
        let i = pair["index"].as_u64().unwrap();
        let shape = (
            pair["shape"][0].as_u64().unwrap() as usize,
            pair["shape"][1].as_u64().unwrap() as usize,
        );
        let a = load_image(&dir.join(format!("pair_{i:02}_a.bin")), shape);
        let b = load_image(&dir.join(format!("pair_{i:02}_b.bin")), shape);

        let want_ssim = pair["ssim"].as_f64().unwrap();
        let got_ssim = ssim(&a, &b, peak).unwrap();
        assert!(
            (got_ssim - want_ssim).abs() < 1e-4,
            "pair {i} ssim: got {got_ssim}, reference {want_ssim}"
        );

        let want_vif = pair["vifp"].as_f64().unwrap();
        let got_vif = vifp(&a, &b).unwrap();
        assert!(
            (got_vif - want_vif).abs() < 1e-3,
            "pair {i} vifp: got {got_vif}, reference {want_vif}"
        );
    }
}

#[test]
fn psnr_reference_consistency_on_fixtures() {
    // PSNR has a closed form; cross-check against mse on the fixture pairs
    // to 0.01 dB.
    let dir = fixtures_dir();
    for i in 0..10 {
        let a = load_image(&dir.join(format!("pair_{i:02}_a.bin")), (64, 64));
        let b = load_image(&dir.join(format!("pair_{i:02}_b.bin")), (64, 64));
        let m = spinesynth::metrics::mse(&a, &b).unwrap();
        let p = spinesynth::metrics::psnr(&a, &b, 1.0).unwrap();
        if m > 0.0 {
            let expect = 10.0 * (1.0 / m).log10();
            assert!((p - expect).abs() < 0.01, "pair {i}");
        }
    }
}
