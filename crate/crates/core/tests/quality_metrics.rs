use morphbench::loss::MsSsimParams;
use morphbench::quality::{morph_quality, psnr, ssim_global, summarize_ci, summarize_quality, write_quality_csv};
use morphbench::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * 32 * 32).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    Tensor::new(vec![3, 32, 32], data).unwrap()
}

fn noisy(base: &Tensor, sigma: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let data = base.data().iter().map(|v| v + n.sample(&mut rng)).collect();
    Tensor::new(base.shape().to_vec(), data).unwrap()
}

#[test]
fn psnr_falls_as_noise_grows() {
    let base = image(1);
    let ladder: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
        .iter()
        .map(|&s| psnr(&noisy(&base, s, 2), &base, 1.0).unwrap())
        .collect();
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
    // Gaussian noise at σ=0.01 sits near 40 dB
    assert!((ladder[0] - 40.0).abs() < 0.2);
}

#[test]
fn psnr_of_uniform_offset() {
    let base = image(3);
    for d in [0.5, 0.1, 0.003] {
        let shifted = base.map(|v| v + d);
        let got = psnr(&shifted, &base, 1.0).unwrap();
        assert!((got - 20.0 * (1.0 / d).log10()).abs() < 1e-9);
    }
}

#[test]
fn ssim_tracks_noise() {
    let params = MsSsimParams::default();
    let base = image(4);
    assert!((ssim_global(&base, &base, &params).unwrap() - 1.0).abs() < 1e-12);
    let a = ssim_global(&noisy(&base, 0.05, 5), &base, &params).unwrap();
    let b = ssim_global(&noisy(&base, 0.2, 5), &base, &params).unwrap();
    assert!(1.0 > a && a > b);
}

#[test]
fn ci_closed_form() {
    let ci = summarize_ci(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(ci.mean, 2.5);
    assert!((ci.halfwidth - 1.96 * (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    assert_eq!(summarize_ci(&[7.0, 7.0, 7.0]).unwrap().halfwidth, 0.0);
    assert!(summarize_ci(&[1.0]).is_err());
    assert!(summarize_ci(&[1.0, f64::INFINITY]).is_err());
}

#[test]
fn identical_morph_reports_inf() {
    let params = MsSsimParams::default();
    let a = image(6);
    let rec = morph_quality("same", &a, &a, &a, &params).unwrap();
    assert_eq!(rec.psnr_avg, f64::INFINITY);
    let other = morph_quality("other", &noisy(&a, 0.05, 7), &a, &image(8), &params).unwrap();
    let third = morph_quality("third", &noisy(&a, 0.1, 9), &a, &image(8), &params).unwrap();
    assert!(other.psnr_avg.is_finite());

    let summary = summarize_quality(&[rec.clone(), other.clone(), third.clone()]);
    assert_eq!(summary.psnr_inf_excluded, 1);
    assert_eq!(summary.psnr.unwrap().n, 2);
    assert_eq!(summary.ssim.unwrap().n, 3);
    let json = serde_json::to_string(&rec).unwrap();
    assert!(json.contains("\"psnr_avg\":\"INF\""));

    let mut buf = Vec::new();
    write_quality_csv(&[Ok(rec), Err(("bad".into(), "missing file".into()))], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "morph_id,psnr_avg,ssim_avg,error");
    assert!(lines[1].starts_with("same,INF,1,"));
    assert_eq!(lines[2], "bad,,,missing file");
}

#[test]
fn shape_mismatch_rejected() {
    let params = MsSsimParams::default();
    let a = image(10);
    let small = Tensor::zeros(vec![3, 16, 16]).unwrap();
    assert!(psnr(&a, &small, 1.0).is_err());
    assert!(morph_quality("x", &a, &small, &a, &params).is_err());
}
