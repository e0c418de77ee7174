use std::path::PathBuf;

use clap::Args;
use gridtalk_core::grid::oracle_path;
use gridtalk_core::scenegen::{
    build_dataset, manifest_path, read_scenes, write_manifest, write_scenes, GenConfig, Strictness,
};

use crate::{usage, CmdResult};

#[derive(Args)]
pub struct GenArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 130_000)]
    count: usize,
    #[arg(long, env = "GRIDTALK_SEED", default_value_t = 0)]
    seed: u64,
    /// Scene file to write (JSON lines); the manifest goes beside it.
    #[arg(long)]
    out: PathBuf,
    /// Grid size as WIDTHxHEIGHT.
    #[arg(long, default_value = "6x6", value_parser = parse_grid)]
    grid: (usize, usize),
    #[arg(long, default_value_t = 10)]
    max_obstacles: usize,
    #[arg(long, default_value_t = 10)]
    max_traps: usize,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let dim = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad dimension {v:?}: {e}"))
    };
    Ok((dim(w)?, dim(h)?))
}

pub fn gen_data(a: GenArgs) -> CmdResult {
    let config = GenConfig {
        width: a.grid.0,
        height: a.grid.1,
        max_obstacles: a.max_obstacles,
        max_traps: a.max_traps,
        ..GenConfig::default()
    };
    config.validate()?;
    if a.count < 10 {
        return Err(usage(format!(
            "--count must be at least 10, got {}",
            a.count
        )));
    }
    let (records, manifest) = build_dataset(a.count, a.seed, &config)?;
    write_scenes(&records, &a.out)?;
    let mpath = manifest_path(&a.out);
    write_manifest(&manifest, &mpath)?;
    let d = &manifest.difficulties;
    eprintln!(
        "wrote {} scenes to {} (train {}, test {}, validation {}; short {}, medium {}, long {})",
        manifest.total,
        a.out.display(),
        manifest.splits.train,
        manifest.splits.test,
        manifest.splits.validation,
        d.short,
        d.medium,
        d.long,
    );
    Ok(())
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene_id: String,
}

pub fn oracle(a: OracleArgs) -> CmdResult {
    let records = read_scenes(&a.data, Strictness::Lenient)?;
    let rec = records
        .iter()
        .find(|r| r.id == a.scene_id)
        .ok_or_else(|| anyhow::anyhow!("no scene {:?} in {}", a.scene_id, a.data.display()))?;
    let (len, path) = oracle_path(&rec.scene)?;
    let moves: Vec<&str> = path.iter().map(|d| d.name()).collect();
    println!("solve length: {len}");
    println!("moves: {}", moves.join(" "));
    print!("{}", rec.scene.to_ascii());
    Ok(())
}
