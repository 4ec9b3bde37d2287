//! Full Salinas run at the reference configuration: center-mask pretraining,
//! full transfer, fine-tuning on 5 labels per class, over 5 seeds.
//!
//! Needs the converted scene (see `convert_cube`). This takes hours on one
//! core.
//!
//! ```text
//! cargo run --release --example salinas_reproduction -- salinas.hsic salinas.hsig [out_dir]
//! ```

use std::path::PathBuf;

use mct::experiment::{cmd_pretrain, cmd_train, ExperimentConfig, PRETRAIN_CHECKPOINT};

/// Published figures (percent) this run is compared against.
const REFERENCE: [(&str, f64); 3] = [("OA", 92.04), ("AA", 96.26), ("kappa", 91.13)];
const TOLERANCE: f64 = 5.0;

fn main() -> mct::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (cube, gt) = match args.as_slice() {
        [c, g, ..] => (PathBuf::from(c), PathBuf::from(g)),
        _ => {
            eprintln!("usage: salinas_reproduction <cube.hsic> <gt.hsig> [out_dir]");
            std::process::exit(2);
        }
    };
    let root = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "runs/salinas".into()));

    let mut runs = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = ExperimentConfig::new(&cube);
        cfg.ground_truth = Some(gt.clone());
        cfg.per_class = 5;
        cfg.seed = seed;
        cfg.out_dir = root.join(format!("seed{seed}"));
        let pre = cmd_pretrain(&cfg)?;
        println!("seed {seed}: pretraining final loss {:.4}", pre.epoch_losses.last().unwrap_or(&f64::NAN));
        cfg.init_checkpoint = Some(cfg.out_dir.join(PRETRAIN_CHECKPOINT));
        let m = cmd_train(&cfg)?.metrics;
        println!("seed {seed}: OA {:.2}  AA {:.2}  kappa {:.2}", 100.0 * m.oa, 100.0 * m.aa, 100.0 * m.kappa);
        runs.push([m.oa, m.aa, m.kappa]);
    }

    let mut deviates = false;
    for (i, (name, want)) in REFERENCE.iter().enumerate() {
        let v: Vec<f64> = runs.iter().map(|r| 100.0 * r[i]).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        let flag = (mean - want).abs() > TOLERANCE;
        deviates |= flag;
        println!(
            "{name:>5}: {mean:.2} ± {sd:.2}  (reference {want:.2}){}",
            if flag { "  DEVIATION > 5 points" } else { "" }
        );
    }
    if deviates {
        println!("at least one metric differs from the reference by more than {TOLERANCE} points");
    }
    Ok(())
}
