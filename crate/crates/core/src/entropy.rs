//! Particle-based entropy bonus over a minibatch of encoded states.
//!
//! Each encoded next state `h` is a particle; its reward is
//! `log(1 + mean distance to its k nearest neighbours)` with Euclidean distance.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleBatch {
    particles: Vec<Vec<f64>>,
    k: usize,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl ParticleBatch {
    pub fn new(particles: Vec<Vec<f64>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if particles.len() < k + 1 {
            return Err(Error::BatchTooSmall {
                size: particles.len(),
                k,
            });
        }
        let d = particles[0].len();
        if let Some(p) = particles.iter().find(|p| p.len() != d) {
            return Err(Error::shape("particle dimension", d, p.len()));
        }
        Ok(Self { particles, k })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i]
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.particles.len() {
            return Err(Error::InvalidArgument(format!(
                "particle index {i} out of range for batch of {}",
                self.particles.len()
            )));
        }
        Ok(())
    }

    /// The `k` particles closest to `query`, skipping index `exclude`.
    /// Ties go to the lower index.
    fn nearest(&self, query: &[f64], exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = self
            .particles
            .iter()
            .enumerate()
            .filter(|&(j, _)| Some(j) != exclude)
            .map(|(j, p)| Neighbor {
                index: j,
                distance: euclidean(query, p),
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index));
        if all.len() > self.k {
            all.select_nth_unstable_by(self.k - 1, order);
            all.truncate(self.k);
        }
        all.sort_by(order);
        all
    }

    /// k nearest particles to particle `i`, excluding `i` itself.
    pub fn knn_neighbors(&self, i: usize) -> Result<Vec<Neighbor>> {
        self.check_index(i)?;
        Ok(self.nearest(&self.particles[i], Some(i)))
    }

    pub fn entropy_reward(&self, i: usize) -> Result<f64> {
        Ok(reward_from_neighbors(&self.knn_neighbors(i)?))
    }

    /// Reward of an outside point measured against this batch (nothing excluded).
    /// Used for states inside an n-step window that are not themselves particles.
    pub fn entropy_reward_of(&self, query: &[f64]) -> Result<f64> {
        if query.len() != self.particles[0].len() {
            return Err(Error::shape("query dimension", self.particles[0].len(), query.len()));
        }
        Ok(reward_from_neighbors(&self.nearest(query, None)))
    }

    pub fn all_rewards(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| reward_from_neighbors(&self.nearest(&self.particles[i], Some(i))))
            .collect()
    }
}

fn reward_from_neighbors(neighbors: &[Neighbor]) -> f64 {
    let mean = neighbors.iter().map(|n| n.distance).sum::<f64>() / neighbors.len() as f64;
    mean.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64], k: usize) -> ParticleBatch {
        ParticleBatch::new(points.iter().map(|&p| vec![p]).collect(), k).unwrap()
    }

    #[test]
    fn nearest_in_one_dimension() {
        let b = line(&[0.0, 1.0, 2.0, 10.0], 2);
        let idx: Vec<usize> = b.knn_neighbors(0).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn identical_particles() {
        let b = ParticleBatch::new(vec![vec![0.3, -0.2]; 6], 3).unwrap();
        let n = b.knn_neighbors(4).unwrap();
        assert_eq!(n.len(), 3);
        assert!(n.iter().all(|x| x.distance == 0.0));
        assert_eq!(n.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(b.entropy_reward(4).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_rewards() {
        let b = ParticleBatch::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![-3.0, 0.0], vec![9.0, 9.0]],
            3,
        )
        .unwrap();
        assert!((b.entropy_reward(0).unwrap() - 3f64.ln()).abs() < 1e-12);

        let b = line(&[0.0, 1.0, 2.0, 10.0], 2);
        assert!((b.entropy_reward(0).unwrap() - 2.5f64.ln()).abs() < 1e-12);
        assert!((b.entropy_reward(3).unwrap() - 9.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_small_batches_are_rejected() {
        assert!(matches!(
            ParticleBatch::new(vec![vec![0.0]; 3], 3),
            Err(Error::BatchTooSmall { size: 3, k: 3 })
        ));
        assert!(ParticleBatch::new(vec![vec![0.0], vec![0.0, 1.0]], 1).is_err());
    }

    #[test]
    fn outside_query_counts_every_particle() {
        let b = line(&[0.0, 1.0, 2.0, 10.0], 2);
        // query at 0 sees the particle at 0 (distance 0) and at 1
        assert!((b.entropy_reward_of(&[0.0]).unwrap() - 1.5f64.ln()).abs() < 1e-12);
    }
}
