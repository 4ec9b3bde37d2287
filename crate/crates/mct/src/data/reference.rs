//! Class inventories of the two benchmark scenes.
//!
//! Counts are the published per-class training/testing figures. The scenes
//! themselves are not bundled; [`reference_ground_truth`] lays out a label map
//! with exactly these per-class totals so split logic can be checked against
//! the published protocol without the imagery.

use super::cube::GroundTruth;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassEntry {
    pub name: &'static str,
    pub train: usize,
    pub test: usize,
}

impl ClassEntry {
    pub fn total(&self) -> usize {
        self.train + self.test
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReferenceDataset {
    pub name: &'static str,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: &'static [ClassEntry],
    /// Totals printed beneath the class table: (train, test).
    pub table_totals: (usize, usize),
}

const fn e(name: &'static str, train: usize, test: usize) -> ClassEntry {
    ClassEntry { name, train, test }
}

pub const SALINAS: ReferenceDataset = ReferenceDataset {
    name: "salinas",
    height: 512,
    width: 217,
    bands: 204,
    classes: &[
        e("Brocoli green weeds 1", 5, 2004),
        e("Brocoli green weeds 2", 5, 3721),
        e("Fallow", 5, 1971),
        e("Fallow rough plow", 5, 1389),
        e("Fallow smooth", 5, 2673),
        e("Stubble", 5, 3954),
        e("Celery", 5, 3574),
        e("Grapes untrained", 5, 11266),
        e("Soil vinyard develop", 5, 6198),
        e("Corn senesced green weeds", 5, 3273),
        e("Lettuce romaine 4wk", 5, 1063),
        e("Lettuce romaine 5wk", 5, 1922),
        e("Lettuce romaine 6wk", 5, 911),
        e("Lettuce romaine 7wk", 5, 1065),
        e("Vinyard untrained", 5, 7263),
        e("Vinyard vertical trellis", 5, 1802),
    ],
    table_totals: (80, 54129),
};

pub const YRE: ReferenceDataset = ReferenceDataset {
    name: "yre",
    height: 1400,
    width: 1400,
    bands: 180,
    classes: &[
        e("Building", 10, 523),
        e("River", 10, 5366),
        e("Salt Marsh", 10, 4985),
        e("Shallow Sea", 10, 17540),
        e("Deep Sea", 10, 18667),
        e("Intertidal Saltwater Marsh", 10, 2333),
        e("Tidal Flat", 10, 1782),
        e("Pond", 10, 1777),
        e("Sorghum", 10, 636),
        e("Corn", 10, 1499),
        e("Lotus Root", 10, 2709),
        e("Aquaculture", 10, 8009),
        e("Rice", 10, 5498),
        e("Tamarix Chinensis", 10, 1210),
        e("Freshwater Herbaceous Marsh", 10, 1407),
        e("Suaeda Salsa", 10, 864),
        e("Spartina Alterniflora", 10, 570),
        e("Reed", 10, 1960),
        e("Floodplain", 10, 337),
        e("Locus", 10, 65),
    ],
    table_totals: (200, 77737),
};

impl ReferenceDataset {
    pub fn per_class_train(&self) -> usize {
        self.classes[0].train
    }

    pub fn labeled_total(&self) -> usize {
        self.classes.iter().map(ClassEntry::total).sum()
    }

    pub fn test_total(&self) -> usize {
        self.classes.iter().map(|c| c.test).sum()
    }
}

/// Label map of the dataset's dimensions holding `train + test` pixels of each
/// class. Class blocks are laid out in row-major order; remaining pixels are 0.
pub fn reference_ground_truth(ds: &ReferenceDataset) -> Result<GroundTruth> {
    let mut labels = vec![0u16; ds.height * ds.width];
    let mut at = 0;
    for (k, class) in ds.classes.iter().enumerate() {
        labels[at..at + class.total()].fill(k as u16 + 1);
        at += class.total();
    }
    GroundTruth::new(
        ds.height,
        ds.width,
        ds.classes.len() as u16,
        ds.classes.iter().map(|c| c.name.to_string()).collect(),
        labels,
    )
}
