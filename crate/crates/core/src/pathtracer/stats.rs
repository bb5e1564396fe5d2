use super::trace::PathSample;
use super::vec3::Rgb;

/// Streaming first and second moments of the diffuse and specular path
/// contributions for one pixel, channel-wise.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelStats {
    pub n: u64,
    pub mean_d: Rgb,
    pub mean_s: Rgb,
    pub m2_d: Rgb,
    pub m2_s: Rgb,
    /// Running `Σ (d - mean_d)(s - mean_s)`.
    pub c_ds: Rgb,
}

impl PixelStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: &PathSample) {
        self.push_pair(sample.f_diffuse, sample.f_specular);
    }

    /// Welford update with the cross co-moment.
    pub fn push_pair(&mut self, d: Rgb, s: Rgb) {
        self.n += 1;
        let n = self.n as f64;
        let delta_d = d - self.mean_d;
        let delta_s = s - self.mean_s;
        self.mean_d += delta_d / n;
        self.mean_s += delta_s / n;
        self.m2_d += delta_d.mul_elem(d - self.mean_d);
        self.m2_s += delta_s.mul_elem(s - self.mean_s);
        self.c_ds += delta_d.mul_elem(s - self.mean_s);
    }

    /// Parallel combine; `a.merge(&b)` equals pushing every sample of `b` after `a`.
    pub fn merge(&self, other: &PixelStats) -> PixelStats {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let dd = other.mean_d - self.mean_d;
        let ds = other.mean_s - self.mean_s;
        let w = na * nb / n;
        PixelStats {
            n: self.n + other.n,
            mean_d: self.mean_d + dd * (nb / n),
            mean_s: self.mean_s + ds * (nb / n),
            m2_d: self.m2_d + other.m2_d + dd.mul_elem(dd) * w,
            m2_s: self.m2_s + other.m2_s + ds.mul_elem(ds) * w,
            c_ds: self.c_ds + other.c_ds + dd.mul_elem(ds) * w,
        }
    }

    /// Pixel estimate `X_N = mean_d + mean_s`.
    pub fn mean(&self) -> Rgb {
        self.mean_d + self.mean_s
    }

    fn unbiased(&self, m: Rgb) -> Option<Rgb> {
        (self.n >= 2).then(|| m / (self.n - 1) as f64)
    }

    pub fn variance_d(&self) -> Option<Rgb> {
        self.unbiased(self.m2_d)
    }

    pub fn variance_s(&self) -> Option<Rgb> {
        self.unbiased(self.m2_s)
    }

    pub fn covariance_ds(&self) -> Option<Rgb> {
        self.unbiased(self.c_ds)
    }

    /// Per-sample variance of the total `F_S = F_d + F_s`.
    pub fn variance_total(&self) -> Option<Rgb> {
        self.unbiased(self.m2_d + self.m2_s + self.c_ds * 2.0)
    }

    /// Channel-wise correlation; channels with zero variance report 0.
    pub fn correlation(&self) -> Rgb {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let denom = (self.m2_d[c] * self.m2_s[c]).sqrt();
            if denom > 0.0 {
                *o = self.c_ds[c] / denom;
            }
        }
        out.into()
    }

    /// Variances collapsed to one scalar with Rec. 709 channel weights.
    pub fn luminance_variances(&self) -> Option<(f64, f64)> {
        Some((self.variance_d()?.luminance(), self.variance_s()?.luminance()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    struct TwoPass {
        mean_d: Vec<f64>,
        mean_s: Vec<f64>,
        var_d: Vec<f64>,
        var_s: Vec<f64>,
        cov: Vec<f64>,
    }

    fn two_pass(samples: &[(Rgb, Rgb)]) -> TwoPass {
        let n = samples.len() as f64;
        let mut out = TwoPass {
            mean_d: vec![],
            mean_s: vec![],
            var_d: vec![],
            var_s: vec![],
            cov: vec![],
        };
        for c in 0..3 {
            let md = samples.iter().map(|(d, _)| d[c]).sum::<f64>() / n;
            let ms = samples.iter().map(|(_, s)| s[c]).sum::<f64>() / n;
            let vd = samples.iter().map(|(d, _)| (d[c] - md).powi(2)).sum::<f64>() / (n - 1.0);
            let vs = samples.iter().map(|(_, s)| (s[c] - ms).powi(2)).sum::<f64>() / (n - 1.0);
            let cv = samples.iter().map(|(d, s)| (d[c] - md) * (s[c] - ms)).sum::<f64>() / (n - 1.0);
            out.mean_d.push(md);
            out.mean_s.push(ms);
            out.var_d.push(vd);
            out.var_s.push(vs);
            out.cov.push(cv);
        }
        out
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn single_sample_has_no_variance() {
        let mut s = PixelStats::new();
        s.push_pair(Rgb::new(1.0, 2.0, 3.0), Rgb::splat(0.5));
        assert_eq!(s.mean_d, Rgb::new(1.0, 2.0, 3.0));
        assert!(s.variance_d().is_none());
    }

    #[test]
    fn two_samples_hand_computed() {
        let mut s = PixelStats::new();
        s.push_pair(Rgb::splat(1.0), Rgb::ZERO);
        s.push_pair(Rgb::splat(3.0), Rgb::ZERO);
        assert_eq!(s.mean_d.x, 2.0);
        assert_eq!(s.variance_d().unwrap().x, 2.0);
    }

    #[test]
    fn matches_two_pass_on_ten_thousand_samples() {
        let mut rng = CounterRng::new(42, &[]);
        let samples: Vec<(Rgb, Rgb)> = (0..10_000)
            .map(|_| {
                let d = Rgb::new(rng.uniform(), rng.uniform() * 2.0, rng.uniform() + 5.0);
                let heavy = rng.uniform();
                let s = Rgb::new(heavy * heavy * 40.0, d.x * 0.3 + rng.uniform(), rng.uniform());
                (d, s)
            })
            .collect();
        let mut st = PixelStats::new();
        for (d, s) in &samples {
            st.push_pair(*d, *s);
        }
        let tp = two_pass(&samples);
        let (vd, vs, cv) = (st.variance_d().unwrap(), st.variance_s().unwrap(), st.covariance_ds().unwrap());
        for c in 0..3 {
            assert!(close(st.mean_d[c], tp.mean_d[c], 1e-10));
            assert!(close(st.mean_s[c], tp.mean_s[c], 1e-10));
            assert!(close(vd[c], tp.var_d[c], 1e-10));
            assert!(close(vs[c], tp.var_s[c], 1e-10));
            assert!(close(cv[c], tp.cov[c], 1e-10));
        }
    }

    fn rgb() -> impl Strategy<Value = Rgb> {
        (0.0f64..100.0, 0.0f64..100.0, 0.0f64..100.0).prop_map(|(a, b, c)| Rgb::new(a, b, c))
    }

    proptest! {
        #[test]
        fn streaming_equals_two_pass(samples in prop::collection::vec((rgb(), rgb()), 2..200)) {
            let mut st = PixelStats::new();
            for (d, s) in &samples {
                st.push_pair(*d, *s);
            }
            let tp = two_pass(&samples);
            let vd = st.variance_d().unwrap();
            let cv = st.covariance_ds().unwrap();
            for c in 0..3 {
                prop_assert!((st.mean_d[c] - tp.mean_d[c]).abs() <= 1e-9 * (1.0 + tp.mean_d[c].abs()));
                prop_assert!((vd[c] - tp.var_d[c]).abs() <= 1e-9 * (1.0 + tp.var_d[c].abs()));
                prop_assert!((cv[c] - tp.cov[c]).abs() <= 1e-9 * (1.0 + tp.var_d[c].max(tp.var_s[c])));
                prop_assert!(st.correlation()[c].abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn merge_equals_sequential(a in prop::collection::vec((rgb(), rgb()), 0..50),
                                   b in prop::collection::vec((rgb(), rgb()), 0..50)) {
            let mut sa = PixelStats::new();
            let mut sb = PixelStats::new();
            let mut all = PixelStats::new();
            for (d, s) in &a { sa.push_pair(*d, *s); all.push_pair(*d, *s); }
            for (d, s) in &b { sb.push_pair(*d, *s); all.push_pair(*d, *s); }
            let m = sa.merge(&sb);
            prop_assert_eq!(m.n, all.n);
            for c in 0..3 {
                prop_assert!((m.mean_s[c] - all.mean_s[c]).abs() <= 1e-9 * (1.0 + all.mean_s[c].abs()));
                prop_assert!((m.m2_s[c] - all.m2_s[c]).abs() <= 1e-8 * (1.0 + all.m2_s[c].abs()));
                prop_assert!((m.c_ds[c] - all.c_ds[c]).abs() <= 1e-8 * (1.0 + all.m2_s[c].abs() + all.m2_d[c].abs()));
            }
        }
    }
}
