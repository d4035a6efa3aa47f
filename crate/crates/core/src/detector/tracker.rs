//! Constant-velocity particle filter over LED image positions.
//!
//! State is `(u, v, du, dv)` with velocity in pixels per batch. Noise
//! parameters are per batch and scale with `sqrt(dt / batch)`.

use nalgebra::{Matrix2, Point2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::rig::LedId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub particles: usize,
    /// Position process noise, px per batch.
    pub q_pos: f64,
    /// Velocity process noise, px/batch per batch.
    pub q_vel: f64,
    /// Observation noise, px.
    pub sigma_meas: f64,
    /// Mahalanobis gate in standard deviations.
    pub gate_sigma: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: 200,
            q_pos: 0.5,
            q_vel: 0.2,
            sigma_meas: 0.5,
            gate_sigma: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Particle {
    u: f64,
    v: f64,
    du: f64,
    dv: f64,
}

#[derive(Clone, Debug)]
pub struct LedTrack {
    pub id: LedId,
    particles: Vec<Particle>,
    weights: Vec<f64>,
    scratch: Vec<Particle>,
    bounds: (f64, f64),
    pub last_update_us: u64,
    pub last_observed_us: u64,
    pub centroid: Point2<f64>,
    pub covariance: Matrix2<f64>,
    /// Set when the last update had to reinitialize the filter.
    pub reinitialized: bool,
    observations: u32,
    last_observation: Point2<f64>,
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

impl LedTrack {
    /// Starts a track at an observation. `width`/`height` bound the centroid.
    pub fn new<R: Rng + ?Sized>(
        id: LedId,
        obs: Point2<f64>,
        t_us: u64,
        width: u16,
        height: u16,
        cfg: &FilterConfig,
        rng: &mut R,
    ) -> Self {
        let n = cfg.particles.max(1);
        let mut track = Self {
            id,
            particles: Vec::with_capacity(n),
            weights: vec![1.0 / n as f64; n],
            scratch: Vec::with_capacity(n),
            bounds: ((width.max(1) - 1) as f64, (height.max(1) - 1) as f64),
            last_update_us: t_us,
            last_observed_us: t_us,
            centroid: obs,
            covariance: Matrix2::zeros(),
            reinitialized: false,
            observations: 0,
            last_observation: obs,
        };
        track.reset(obs, Vector2::zeros(), cfg, rng);
        track
    }

    fn reset<R: Rng + ?Sized>(
        &mut self,
        obs: Point2<f64>,
        vel: Vector2<f64>,
        cfg: &FilterConfig,
        rng: &mut R,
    ) {
        let n = self.weights.len();
        self.particles.clear();
        for _ in 0..n {
            self.particles.push(Particle {
                u: obs.x + gauss(rng, cfg.sigma_meas),
                v: obs.y + gauss(rng, cfg.sigma_meas),
                du: vel.x + gauss(rng, cfg.q_vel),
                dv: vel.y + gauss(rng, cfg.q_vel),
            });
        }
        self.weights.fill(1.0 / n as f64);
        self.clamp();
        self.summarize();
        self.observations = 1;
        self.last_observation = obs;
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean particle velocity, px per batch.
    pub fn velocity(&self) -> Vector2<f64> {
        let mut v = Vector2::zeros();
        for (p, w) in self.particles.iter().zip(&self.weights) {
            v += Vector2::new(p.du, p.dv) * *w;
        }
        v
    }

    fn clamp(&mut self) {
        let (mx, my) = self.bounds;
        for p in &mut self.particles {
            p.u = p.u.clamp(0.0, mx);
            p.v = p.v.clamp(0.0, my);
        }
    }

    fn summarize(&mut self) {
        let mut m = Vector2::zeros();
        for (p, w) in self.particles.iter().zip(&self.weights) {
            m += Vector2::new(p.u, p.v) * *w;
        }
        let mut c = Matrix2::zeros();
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let d = Vector2::new(p.u, p.v) - m;
            c += d * d.transpose() * *w;
        }
        self.centroid = Point2::from(m);
        self.covariance = c;
    }

    /// Advances the filter to `t_us`. `batch_us` is the unit the noise and
    /// velocity are expressed in.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        obs: Option<Point2<f64>>,
        t_us: u64,
        batch_us: u64,
        cfg: &FilterConfig,
        rng: &mut R,
    ) {
        let dt = t_us.saturating_sub(self.last_update_us).max(1) as f64 / batch_us.max(1) as f64;
        let since_obs = t_us.saturating_sub(self.last_observed_us) as f64 / batch_us.max(1) as f64;
        self.last_update_us = t_us;
        self.reinitialized = false;

        let (sp, sv) = (cfg.q_pos * dt.sqrt(), cfg.q_vel * dt.sqrt());
        for p in &mut self.particles {
            p.u += p.du * dt + gauss(rng, sp);
            p.v += p.dv * dt + gauss(rng, sp);
            p.du += gauss(rng, sv);
            p.dv += gauss(rng, sv);
        }
        self.clamp();
        self.summarize();

        let Some(z) = obs else { return };

        if self.observations == 1 {
            // Second sighting fixes the velocity directly.
            let vel = (z - self.last_observation) / since_obs.max(f64::MIN_POSITIVE);
            self.reset(z, vel, cfg, rng);
            self.observations = 2;
            self.last_observed_us = t_us;
            return;
        }

        let r = z - self.centroid;
        let s = self.covariance + Matrix2::identity() * (cfg.sigma_meas * cfg.sigma_meas + 1e-9);
        let d2 = s
            .try_inverse()
            .map(|si| (r.transpose() * si * r)[(0, 0)])
            .unwrap_or(f64::INFINITY);
        if !(d2 <= cfg.gate_sigma * cfg.gate_sigma) || !self.weigh(z, cfg.sigma_meas) {
            self.reset(z, Vector2::zeros(), cfg, rng);
            self.reinitialized = true;
            self.last_observed_us = t_us;
            return;
        }
        self.summarize();
        self.resample(rng);
        self.observations = self.observations.saturating_add(1);
        self.last_observation = z;
        self.last_observed_us = t_us;
    }

    /// Multiplies weights by the observation likelihood. Returns false on
    /// degenerate weights.
    fn weigh(&mut self, z: Point2<f64>, sigma: f64) -> bool {
        let d2: Vec<f64> = self
            .particles
            .iter()
            .map(|p| (p.u - z.x).powi(2) + (p.v - z.y).powi(2))
            .collect();
        if sigma == 0.0 {
            let best = d2.iter().copied().fold(f64::INFINITY, f64::min);
            for (w, d) in self.weights.iter_mut().zip(&d2) {
                *w = if *d == best { 1.0 } else { 0.0 };
            }
        } else {
            // Shift by the minimum exponent so distant but consistent clouds
            // do not underflow.
            let k = 0.5 / (sigma * sigma);
            let best = d2.iter().copied().fold(f64::INFINITY, f64::min);
            for (w, d) in self.weights.iter_mut().zip(&d2) {
                *w *= (-(d - best) * k).exp();
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if !(sum.is_finite() && sum > 1e-300) {
            return false;
        }
        for w in &mut self.weights {
            *w /= sum;
        }
        true
    }

    fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.particles.len();
        let step = 1.0 / n as f64;
        let mut u = rng.random::<f64>() * step;
        let mut cum = self.weights[0];
        let mut i = 0;
        self.scratch.clear();
        for _ in 0..n {
            while u > cum && i + 1 < n {
                i += 1;
                cum += self.weights[i];
            }
            self.scratch.push(self.particles[i]);
            u += step;
        }
        std::mem::swap(&mut self.particles, &mut self.scratch);
        self.weights.fill(step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_target_converges() {
        let cfg = FilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tr = LedTrack::new(
            LedId(0),
            Point2::new(104.0, 97.0),
            0,
            640,
            480,
            &cfg,
            &mut rng,
        );
        for k in 1..=10 {
            tr.update(
                Some(Point2::new(100.0, 100.0)),
                k * 2500,
                2500,
                &cfg,
                &mut rng,
            );
            let s: f64 = tr.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(
            (tr.centroid - Point2::new(100.0, 100.0)).norm() < 1.0,
            "{}",
            tr.centroid
        );
    }

    #[test]
    fn noiseless_line_recovers_velocity() {
        let cfg = FilterConfig {
            particles: 50,
            q_pos: 0.0,
            q_vel: 0.0,
            sigma_meas: 0.0,
            gate_sigma: 4.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let at = |k: u64| Point2::new(50.0 + 1.5 * k as f64, 60.0 - 0.25 * k as f64);
        let mut tr = LedTrack::new(LedId(0), at(0), 0, 640, 480, &cfg, &mut rng);
        for k in 1..8 {
            tr.update(Some(at(k)), k * 1000, 1000, &cfg, &mut rng);
            assert!(!tr.reinitialized);
        }
        let v = tr.velocity();
        assert!((v.x - 1.5).abs() < 1e-9 && (v.y + 0.25).abs() < 1e-9, "{v}");
        assert!((tr.centroid - at(7)).norm() < 1e-9);
    }

    #[test]
    fn survives_missed_batches() {
        let cfg = FilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tr = LedTrack::new(
            LedId(0),
            Point2::new(200.0, 200.0),
            0,
            640,
            480,
            &cfg,
            &mut rng,
        );
        for k in 1..=10 {
            tr.update(
                Some(Point2::new(200.0, 200.0)),
                k * 2500,
                2500,
                &cfg,
                &mut rng,
            );
        }
        for k in 11..=15 {
            tr.update(None, k * 2500, 2500, &cfg, &mut rng);
        }
        let grown = tr.covariance.trace();
        tr.update(
            Some(Point2::new(201.0, 200.5)),
            16 * 2500,
            2500,
            &cfg,
            &mut rng,
        );
        assert!(!tr.reinitialized);
        assert!(tr.covariance.trace() < grown);
    }

    #[test]
    fn far_observation_reinitializes() {
        let cfg = FilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = LedTrack::new(
            LedId(0),
            Point2::new(100.0, 100.0),
            0,
            640,
            480,
            &cfg,
            &mut rng,
        );
        for k in 1..=5 {
            tr.update(
                Some(Point2::new(100.0, 100.0)),
                k * 2500,
                2500,
                &cfg,
                &mut rng,
            );
        }
        tr.update(
            Some(Point2::new(400.0, 300.0)),
            6 * 2500,
            2500,
            &cfg,
            &mut rng,
        );
        assert!(tr.reinitialized);
        assert!((tr.centroid - Point2::new(400.0, 300.0)).norm() < 1.0);
    }

    #[test]
    fn centroid_stays_in_image() {
        let cfg = FilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tr = LedTrack::new(
            LedId(0),
            Point2::new(0.0, 479.0),
            0,
            640,
            480,
            &cfg,
            &mut rng,
        );
        for k in 1..=20 {
            tr.update(None, k * 2500, 2500, &cfg, &mut rng);
            assert!(tr.centroid.x >= 0.0 && tr.centroid.y <= 479.0);
        }
    }
}
