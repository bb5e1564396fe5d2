use std::f64::consts::PI;

use super::vec3::Vec3;
use crate::rng::CounterRng;

/// Density of the uniform hemisphere distribution with respect to solid angle.
pub const UNIFORM_HEMISPHERE_PDF: f64 = 1.0 / (2.0 * PI);

/// Draws a direction uniformly over the hemisphere around `normal`.
///
/// `cos θ` is uniform on `[0, 1)` and the azimuth uniform on `[0, 2π)`, which
/// makes the density exactly `1 / 2π` over the hemisphere.
pub fn sample_hemisphere_uniform(rng: &mut CounterRng, normal: Vec3) -> (Vec3, f64) {
    let u1 = rng.uniform();
    let u2 = rng.uniform();
    (hemisphere_direction(normal, u1, u2), UNIFORM_HEMISPHERE_PDF)
}

/// Maps `(u1, u2) ∈ [0,1)²` to the hemisphere around `normal`.
pub fn hemisphere_direction(normal: Vec3, u1: f64, u2: f64) -> Vec3 {
    let cos_theta = u1;
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = 2.0 * PI * u2;
    let (t, b) = normal.orthonormal_basis();
    t * (sin_theta * phi.cos()) + b * (sin_theta * phi.sin()) + normal * cos_theta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_is_one_over_two_pi() {
        let mut rng = CounterRng::new(0, &[]);
        let (_, pdf) = sample_hemisphere_uniform(&mut rng, Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(pdf, 1.0 / (2.0 * PI));
        assert!((pdf - 0.159154).abs() < 1e-6);
    }

    #[test]
    fn directions_stay_in_hemisphere() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalized();
        let mut rng = CounterRng::new(3, &[1]);
        for _ in 0..10_000 {
            let (d, _) = sample_hemisphere_uniform(&mut rng, n);
            assert!(d.dot(n) >= -1e-12);
            assert!((d.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_cosine_is_one_half() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let mut rng = CounterRng::new(11, &[]);
        let draws = 1_000_000;
        let sum: f64 = (0..draws).map(|_| sample_hemisphere_uniform(&mut rng, n).0.z).sum();
        assert!((sum / draws as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn azimuth_is_uniform_ks() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let mut rng = CounterRng::new(5, &[]);
        let draws = 1_000_000;
        let mut phis: Vec<f64> = (0..draws)
            .map(|_| {
                let (d, _) = sample_hemisphere_uniform(&mut rng, n);
                d.y.atan2(d.x).rem_euclid(2.0 * PI)
            })
            .collect();
        phis.sort_by(f64::total_cmp);
        let nf = draws as f64;
        let ks = phis
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let cdf = p / (2.0 * PI);
                (cdf - i as f64 / nf).abs().max(((i + 1) as f64 / nf - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.005, "KS statistic {ks}");
    }
}
