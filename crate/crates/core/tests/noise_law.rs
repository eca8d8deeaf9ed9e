use kinlab::harness::NoiseSkeleton;
use kinlab::kernels::free_sigmas;
use kinlab::noise::{sample_free_endpoint, sample_step, step_cholesky, step_covariance};
use kinlab::{PhaseState, RngStream};

/// Entrywise second moments of zero-mean pairs with the standard error of
/// each entry.
fn second_moments(pairs: &[(f64, f64)]) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
    let m = pairs.len() as f64;
    let mut mean = [[0.0; 2]; 2];
    let mut sq = [[0.0; 2]; 2];
    for &(a, b) in pairs {
        let z = [a, b];
        for i in 0..2 {
            for j in 0..2 {
                let p = z[i] * z[j];
                mean[i][j] += p;
                sq[i][j] += p * p;
            }
        }
    }
    let mut se = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            mean[i][j] /= m;
            let var = sq[i][j] / m - mean[i][j] * mean[i][j];
            se[i][j] = (var / m).sqrt();
        }
    }
    (mean, se)
}

#[test]
fn step_noise_covariance_within_five_stderr() {
    let h = 0.01;
    let mut rng = RngStream::new(2024, 0);
    let pairs: Vec<(f64, f64)> = (0..1_000_000)
        .map(|_| {
            let xi = sample_step(&mut rng, h, 1).unwrap();
            (xi.integral_part[0], xi.increment_part[0])
        })
        .collect();
    let (cov, se) = second_moments(&pairs);
    let want = step_covariance(h).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((cov[i][j] - want[i][j]).abs() <= 5.0 * se[i][j], "{i}{j}: {} vs {}", cov[i][j], want[i][j]);
        }
    }
}

#[test]
fn cholesky_multiplies_back() {
    for h in [1e-4, 1e-2, 1.0] {
        let l = step_cholesky(h).unwrap();
        let c = step_covariance(h).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let llt = l[i][0] * l[j][0] + l[i][1] * l[j][1];
                assert!((llt - c[i][j]).abs() <= 1e-14 * c[i][j].abs(), "h={h} entry {i}{j}");
            }
        }
    }
}

#[test]
fn free_endpoint_moments() {
    let z0 = PhaseState::scalar(0.5, -1.0).unwrap();
    let t = 0.7;
    let mut rng = RngStream::new(11, 3);
    let m = 200_000;
    let mut sx = 0.0;
    let mut sv = 0.0;
    let mut pairs = Vec::with_capacity(m);
    for _ in 0..m {
        let z = sample_free_endpoint(&z0, t, &mut rng).unwrap();
        sx += z.x()[0];
        sv += z.v()[0];
        pairs.push((z.x()[0] - (0.5 - t), z.v()[0] + 1.0));
    }
    let (sig_x, sig_v) = free_sigmas(t);
    let mf = m as f64;
    assert!((sx / mf - (0.5 - t)).abs() <= 5.0 * sig_x / mf.sqrt());
    assert!((sv / mf + 1.0).abs() <= 5.0 * sig_v / mf.sqrt());
    let (cov, se) = second_moments(&pairs);
    let want = step_covariance(t).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((cov[i][j] - want[i][j]).abs() <= 5.0 * se[i][j]);
        }
    }
}

#[test]
fn refined_half_steps_follow_the_half_step_law() {
    let mut rng = RngStream::new(99, 0);
    let mut first = Vec::with_capacity(1_000_000);
    let mut cross = 0.0;
    for _ in 0..1_000_000 {
        let s = NoiseSkeleton::sample(4, 0.25, 1, &mut rng).unwrap();
        let r = s.refine(8, &mut rng).unwrap();
        first.push((r.integral()[0], r.increment()[0]));
        cross += r.increment()[0] * r.increment()[1];
    }
    let (cov, se) = second_moments(&first);
    let want = step_covariance(0.125).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert!((cov[i][j] - want[i][j]).abs() <= 5.0 * se[i][j], "{i}{j}");
        }
    }
    // Consecutive half-step increments are independent.
    let c = cross / 1e6;
    assert!(c.abs() <= 5.0 * 0.125 / 1e3);
}

#[test]
fn refinement_keeps_coarse_sums() {
    let mut rng = RngStream::new(5, 1);
    let s = NoiseSkeleton::sample(16, 1.0, 2, &mut rng).unwrap();
    let r = s.refine(32, &mut rng).unwrap();
    for (k, w) in s.increment().iter().enumerate() {
        let (step, a) = (k / 2, k % 2);
        let sum = r.increment()[2 * step * 2 + a] + r.increment()[(2 * step + 1) * 2 + a];
        assert!((sum - w).abs() <= 1e-14);
    }
}
