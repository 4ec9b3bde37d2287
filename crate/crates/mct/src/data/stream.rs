//! Label-free patch batches for center-mask pretraining.
//!
//! Positions are drawn uniformly (with replacement) from every pixel of the
//! scene, including unlabeled and test pixels. The draw sequence for an epoch
//! is a function of `(seed, epoch)` only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cube::HsiCube;
use super::patch::{extract_patch, Patch};
use crate::error::{Error, Result};

pub struct PretrainStream<'a> {
    cube: &'a HsiCube,
    patch: usize,
    batch: usize,
    seed: u64,
    batches_per_epoch: usize,
}

impl<'a> PretrainStream<'a> {
    pub fn new(
        cube: &'a HsiCube,
        patch: usize,
        batch: usize,
        batches_per_epoch: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch == 0 || batches_per_epoch == 0 {
            return Err(Error::Config("pretrain stream needs batch > 0 and batches > 0".into()));
        }
        // validate the patch size once up front
        extract_patch(cube, 0, 0, patch)?;
        Ok(PretrainStream {
            cube,
            patch,
            batch,
            seed,
            batches_per_epoch,
        })
    }

    fn rng(&self, epoch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        rng
    }

    /// The `(row, col)` sequence an epoch will visit.
    pub fn positions(&self, epoch: u64) -> Vec<(usize, usize)> {
        let mut rng = self.rng(epoch);
        let total = self.batch * self.batches_per_epoch;
        (0..total)
            .map(|_| {
                let i = rng.random_range(0..self.cube.pixels());
                (i / self.cube.width, i % self.cube.width)
            })
            .collect()
    }

    pub fn epoch(&self, epoch: u64) -> impl Iterator<Item = Result<Vec<Patch>>> + '_ {
        let positions = self.positions(epoch);
        let batch = self.batch;
        (0..self.batches_per_epoch).map(move |b| {
            positions[b * batch..(b + 1) * batch]
                .iter()
                .map(|&(r, c)| extract_patch(self.cube, r, c, self.patch))
                .collect()
        })
    }
}
