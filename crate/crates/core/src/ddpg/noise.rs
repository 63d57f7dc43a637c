use rand::Rng;
use rand_distr::StandardNormal;

/// Discrete Ornstein-Uhlenbeck process, one independent coordinate per
/// action dimension: `x <- x + theta * (mu - x) + sigma * N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub mu: f64,
    pub theta: f64,
    pub sigma: f64,
    current: Vec<f64>,
}

impl OuNoise {
    pub fn new(dim: usize, mu: f64, theta: f64, sigma: f64) -> Self {
        Self {
            mu,
            theta,
            sigma,
            current: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.current.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn set_current(&mut self, values: &[f64]) {
        self.current.copy_from_slice(values);
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        for x in &mut self.current {
            let xi: f64 = rng.sample(StandardNormal);
            *x += self.theta * (self.mu - *x) + self.sigma * xi;
        }
        &self.current
    }

    /// Long-run standard deviation of each coordinate.
    pub fn stationary_std(&self) -> f64 {
        self.sigma / (2.0 * self.theta - self.theta * self.theta).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    #[test]
    fn noiseless_decay() {
        let mut ou = OuNoise::new(1, 0.0, 0.1, 0.0);
        ou.set_current(&[1.0]);
        let mut rng = SimRng::seed_from_u64(0);
        assert!((ou.step(&mut rng)[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn mean_is_a_fixed_point() {
        let mut ou = OuNoise::new(3, 0.5, 0.1, 0.0);
        ou.set_current(&[0.5; 3]);
        let mut rng = SimRng::seed_from_u64(0);
        for _ in 0..100 {
            ou.step(&mut rng);
        }
        assert_eq!(ou.current(), &[0.5; 3]);
    }

    #[test]
    fn stationary_spread() {
        let mut ou = OuNoise::new(1, 0.0, 0.1, 0.15);
        let mut rng = SimRng::seed_from_u64(17);
        for _ in 0..1_000 {
            ou.step(&mut rng);
        }
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| ou.step(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sigma / sqrt(2 theta - theta^2) for (0.1, 0.15)
        let expected = 0.344_123_600_805_842_6;
        assert!((ou.stationary_std() - expected).abs() < 1e-12);
        assert!((var.sqrt() / expected - 1.0).abs() < 0.05, "{}", var.sqrt());
    }

    #[test]
    fn reset_zeroes() {
        let mut ou = OuNoise::new(2, 0.0, 0.1, 0.15);
        let mut rng = SimRng::seed_from_u64(3);
        ou.step(&mut rng);
        ou.reset();
        assert_eq!(ou.current(), &[0.0, 0.0]);
    }
}
