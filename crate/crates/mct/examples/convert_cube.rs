//! Converts raw interleaved rasters into the crate's cube / ground-truth
//! containers.
//!
//! With arguments, converts one file: `<raw> <sidecar.json> <out>`.
//! Without, writes a tiny BSQ cube and its sidecar to a temp directory and
//! converts those.
//!
//! ```text
//! cargo run --release --example convert_cube -- scene.raw scene.json scene.hsic
//! ```

use std::fs;

use mct::data::{convert_file, Converted};

fn describe(c: &Converted) {
    match c {
        Converted::Cube(cube) => {
            let v = cube.values.data();
            let (lo, hi) = v.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            println!("cube {}×{}×{} values in [{lo}, {hi}]", cube.height, cube.width, cube.bands);
        }
        Converted::Gt(gt) => {
            println!("ground truth {}×{}, {} classes, {} labeled", gt.height, gt.width, gt.classes, gt.labeled());
            for (k, n) in gt.class_counts().iter().enumerate() {
                println!("  class {:>2}: {n}", k + 1);
            }
        }
    }
}

fn main() -> mct::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [raw, sidecar, out] = args.as_slice() {
        describe(&convert_file(raw, sidecar, out)?);
        return Ok(());
    }

    let dir = std::env::temp_dir().join("mct_convert_demo");
    fs::create_dir_all(&dir)?;
    let (h, w, b) = (3usize, 4usize, 5usize);
    // BSQ: band-major, big-endian u16
    let raw: Vec<u8> = (0..b * h * w).flat_map(|i| (100 * (i / (h * w)) as u16 + i as u16).to_be_bytes()).collect();
    fs::write(dir.join("demo.raw"), raw)?;
    fs::write(
        dir.join("demo.json"),
        format!(r#"{{"kind":"cube","height":{h},"width":{w},"bands":{b},"dtype":"u16","byte_order":"big","interleave":"bsq"}}"#),
    )?;
    let gt: Vec<u8> = (0..h * w).map(|i| (i % 3) as u8).collect();
    fs::write(dir.join("demo_gt.raw"), gt)?;
    fs::write(
        dir.join("demo_gt.json"),
        format!(r#"{{"kind":"gt","height":{h},"width":{w},"dtype":"u8","classes":2,"class_names":["soil","water"]}}"#),
    )?;

    describe(&convert_file(dir.join("demo.raw"), dir.join("demo.json"), dir.join("demo.hsic"))?);
    describe(&convert_file(dir.join("demo_gt.raw"), dir.join("demo_gt.json"), dir.join("demo.hsig"))?);
    println!("outputs in {}", dir.display());
    Ok(())
}
