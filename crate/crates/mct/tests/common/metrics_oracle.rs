//! Independent metric recount straight from `(truth, pred)` pairs, without a
//! confusion matrix.

use rand::Rng;

pub struct Recount {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

pub fn recount(pairs: &[(u16, u16)], classes: u16) -> Recount {
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    let mut recalls = Vec::new();
    let mut chance = 0.0;
    for c in 1..=classes {
        let truth = pairs.iter().filter(|(t, _)| *t == c).count() as f64;
        let pred = pairs.iter().filter(|(_, p)| *p == c).count() as f64;
        if truth > 0.0 {
            let hit = pairs.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
            recalls.push(hit / truth);
        }
        chance += (truth / n) * (pred / n);
    }
    let oa = agree / n;
    Recount {
        oa,
        aa: recalls.iter().sum::<f64>() / recalls.len() as f64,
        kappa: if chance >= 1.0 { 0.0 } else { (oa - chance) / (1.0 - chance) },
    }
}

/// Random labelled pairs with a bias towards the diagonal.
pub fn random_pairs(rng: &mut impl Rng, classes: u16, n: usize) -> Vec<(u16, u16)> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(1..=classes);
            let p = if rng.random_bool(0.6) { t } else { rng.random_range(1..=classes) };
            (t, p)
        })
        .collect()
}
