//! Loss-parity fixtures: image triples on disk plus the losses this crate
//! computes for them, so another implementation can check its numbers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skywarp::metrics::{
    gradient_loss, intensity_loss, motion_loss, read_loss_fixtures, write_loss_fixtures, LossFixtureRow,
};
use skywarp::{estimate_flow, FlowParams, LossTerms, LossWeights, SkyImage};

use crate::{GlobalArgs, Status};

pub const FIXTURE_CSV: &str = "loss_fixtures.csv";

#[derive(Debug, clap::Args)]
pub struct Args {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2002)]
    pub seed: u64,
    /// Number of random 5x5 pairs.
    #[arg(long, default_value_t = 8)]
    pub random_pairs: usize,
    /// Recompute the losses of an existing fixture directory and compare
    /// with its CSV instead of writing.
    #[arg(long)]
    pub check: bool,
}

/// Paths of the three images of fixture `id`.
pub fn fixture_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    ["pred", "truth", "current"].map(|r| dir.join(format!("{id}_{r}.png")))
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SkyImage<f32> {
    SkyImage::from_fn(w, h, |_, _| [0; 3].map(|_| rng.gen_range(0u8..=255) as f32 / 255.0))
}

fn wave(w: usize, h: usize, shift: f64) -> SkyImage<f32> {
    SkyImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64 - shift, y as f64);
        let v = 0.5 + 0.25 * (0.4 * x).sin() * (0.3 * y).cos() + 0.15 * (0.17 * x + 0.23 * y).sin();
        [v as f32, (0.9 * v) as f32, (0.8 * v + 0.1) as f32]
    })
}

fn triples(args: &Args) -> Vec<(String, [SkyImage<f32>; 3])> {
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let same = random_image(&mut rng, 16, 16);
    let mut out = vec![
        ("identical".to_string(), [same.clone(), same.clone(), same]),
        (
            // 0.5 is not representable in 8 bits; 128/255 is the closest level
            "offset".to_string(),
            [SkyImage::filled(8, 8, [0.0; 3]), SkyImage::filled(8, 8, [128.0 / 255.0; 3]), SkyImage::filled(8, 8, [0.0; 3])],
        ),
        ("shifted".to_string(), [wave(32, 32, 1.0), wave(32, 32, 2.0), wave(32, 32, 0.0)]),
    ];
    for i in 0..args.random_pairs {
        let t = [random_image(&mut rng, 5, 5), random_image(&mut rng, 5, 5), random_image(&mut rng, 5, 5)];
        out.push((format!("random5x5_{i:02}"), t));
    }
    out
}

/// Losses of the fixture `id` as stored on disk.
pub fn compute_row(dir: &Path, id: &str) -> Result<LossFixtureRow> {
    let [p, t, c] = fixture_paths(dir, id);
    let (pred, truth, current) = (SkyImage::<f64>::load(&p)?, SkyImage::<f64>::load(&t)?, SkyImage::<f64>::load(&c)?);
    let terms = LossTerms {
        l_int: intensity_loss(&pred, &truth)?,
        l_gd: gradient_loss(&pred, &truth)?,
        l_op: motion_loss(&pred, &truth, &current, &FlowParams::default())?,
    };
    Ok(LossFixtureRow {
        pair_id: id.to_string(),
        l_int: terms.l_int,
        l_gd: terms.l_gd,
        l_op: terms.l_op,
        l_total: terms.combine(&LossWeights::default()),
    })
}

fn write_flow(path: &Path, from: &SkyImage<f64>, to: &SkyImage<f64>) -> Result<()> {
    let flow = estimate_flow(from, to, &FlowParams::default())?.cast::<f32>();
    flow.write_to(BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn write_fixtures(args: &Args) -> Result<Vec<LossFixtureRow>> {
    std::fs::create_dir_all(&args.out_dir)?;
    let mut rows = Vec::new();
    for (id, images) in triples(args) {
        for (img, path) in images.iter().zip(fixture_paths(&args.out_dir, &id)) {
            img.save(&path)?;
        }
        // flows the motion loss compares, for implementations without one
        let [p, t, c] = fixture_paths(&args.out_dir, &id).map(|p| SkyImage::<f64>::load(p));
        let (p, t, c) = (p?, t?, c?);
        write_flow(&args.out_dir.join(format!("{id}_flow_pred.swfl")), &p, &c)?;
        write_flow(&args.out_dir.join(format!("{id}_flow_truth.swfl")), &t, &c)?;
        rows.push(compute_row(&args.out_dir, &id)?);
    }
    let path = args.out_dir.join(FIXTURE_CSV);
    write_loss_fixtures(BufWriter::new(File::create(&path)?), &rows)?;
    Ok(rows)
}

/// Recompute every row of `dir/loss_fixtures.csv`; returns the ids whose
/// formatted values differ.
pub fn check_fixtures(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(FIXTURE_CSV);
    let stored = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = read_loss_fixtures(BufReader::new(stored.as_slice()))?;
    let recomputed: Vec<LossFixtureRow> = rows.iter().map(|r| compute_row(dir, &r.pair_id)).collect::<Result<_>>()?;
    let mut text = Vec::new();
    write_loss_fixtures(&mut text, &recomputed)?;
    let stored_lines: Vec<&[u8]> = stored.split(|&b| b == b'\n').collect();
    let new_lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
    if stored_lines.len() != new_lines.len() {
        bail!("fixture CSV has {} lines, recomputed {}", stored_lines.len(), new_lines.len());
    }
    Ok(rows
        .iter()
        .zip(stored_lines.iter().skip(1).zip(new_lines.iter().skip(1)))
        .filter(|(_, (a, b))| a != b)
        .map(|(r, _)| r.pair_id.clone())
        .collect())
}

pub fn run(_g: &GlobalArgs, args: &Args) -> Result<Status> {
    if args.check {
        let bad = check_fixtures(&args.out_dir)?;
        if bad.is_empty() {
            println!("all fixtures reproduce");
            return Ok(Status::Success);
        }
        eprintln!("fixtures differ: {}", bad.join(", "));
        return Ok(Status::PartialFailure);
    }
    let rows = write_fixtures(args)?;
    println!("wrote {} fixture(s) to {}", rows.len(), args.out_dir.display());
    Ok(Status::Success)
}
