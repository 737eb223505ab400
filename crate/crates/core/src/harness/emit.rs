//! Writing run artifacts to disk.
//!
//! File names carry the config hash and the seed, so runs of different
//! configs can share a directory without clobbering each other.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{summarize_ablation, summarize_subsets, RankTable, RunResult, SweepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmitOptions {
    /// Overwrite a directory that already holds files.
    pub force: bool,
}

fn prepare_dir(dir: &Path, opts: EmitOptions) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !opts.force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

fn csv_row<W: Write>(w: &mut csv::Writer<W>, path: &Path, row: Vec<String>) -> Result<()> {
    w.write_record(&row).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

fn csv_flush<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Name of the per-seed report file.
pub fn report_file_name(hash: &str, seed: u64) -> String {
    format!("report-{hash}-seed{seed}.csv")
}

/// Name of the JSON sidecar.
pub fn sidecar_file_name(hash: &str, base_seed: u64) -> String {
    format!("run-{hash}-seed{base_seed}.json")
}

/// Read a sidecar back into a run (trained artifacts are not part of it).
pub fn read_sidecar(path: impl AsRef<Path>) -> Result<RunResult> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

/// Write reports, summary, sidecar, bundles and any study tables. Returns
/// the written paths.
pub fn emit(run: &RunResult, dir: impl AsRef<Path>, opts: EmitOptions) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare_dir(dir, opts)?;
    write_run(run, dir)
}

fn write_run(run: &RunResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let hash = run.config.hash();
    let mut written = Vec::new();

    for report in &run.reports {
        let path = dir.join(report_file_name(&hash, report.metadata.seed));
        let w = create(&path)?;
        report.write_csv(w)?;
        written.push(path);
    }

    let path = dir.join(format!("summary-{hash}.csv"));
    write_summary(run, &path)?;
    written.push(path);

    for a in &run.artifacts {
        let path = dir.join(format!("strategies-{hash}-seed{}.cbor", a.seed));
        let mut w = create(&path)?;
        a.strategies.write_bundle(&mut w)?;
        finish(&path, w)?;
        written.push(path);
        for (name, sel) in &a.selectors {
            let path = dir.join(format!("selector-{name}-{hash}-seed{}.cbor", a.seed));
            let mut w = create(&path)?;
            sel.write_bundle(a.strategies.fingerprint(), &mut w)?;
            finish(&path, w)?;
            written.push(path);
        }
    }

    if !run.ablation.is_empty() {
        let path = dir.join(format!("ablation-{hash}.csv"));
        write_ablation(run, &path)?;
        written.push(path);
    }
    if !run.subset_samples.is_empty() {
        let path = dir.join(format!("subsets-{hash}.csv"));
        write_subsets(run, &path)?;
        written.push(path);
    }

    let path = dir.join(sidecar_file_name(&hash, run.config.base_seed));
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, run).map_err(|e| Error::Serialization(e.to_string()))?;
    finish(&path, w)?;
    written.push(path);
    Ok(written)
}

fn write_summary(run: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["column".to_string(), "relative_mean".into(), "relative_std".into()];
    for m in &run.config.metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.extend(
        ["task_rank_mean", "task_rank_std", "top1_share_mean", "top1_share_std", "repeats"].map(String::from),
    );
    csv_row(&mut w, path, header)?;
    for c in &run.aggregate {
        let (rm, rs) = match c.relative {
            Some(r) => (r.mean.to_string(), r.std.to_string()),
            None => (String::new(), String::new()),
        };
        let mut row = vec![c.name.clone(), rm, rs];
        for m in &c.mean_loss {
            row.push(m.mean.to_string());
            row.push(m.std.to_string());
        }
        row.push(c.task_rank.mean.to_string());
        row.push(c.task_rank.std.to_string());
        row.push(c.top1_share.mean.to_string());
        row.push(c.top1_share.std.to_string());
        row.push(c.task_rank.count.to_string());
        csv_row(&mut w, path, row)?;
    }
    csv_flush(w, path)
}

fn write_ablation(run: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        ["seed", "classifier", "g_star", "g_star_relative", "ablated_relative", "full_relative"]
            .map(String::from)
            .to_vec(),
    )?;
    for r in &run.ablation {
        csv_row(
            &mut w,
            path,
            vec![
                r.seed.to_string(),
                r.classifier.clone(),
                r.g_star.clone(),
                r.g_star_relative.to_string(),
                r.ablated_relative.to_string(),
                r.full_relative.to_string(),
            ],
        )?;
    }
    for s in summarize_ablation(&run.ablation) {
        csv_row(
            &mut w,
            path,
            vec![
                "mean".into(),
                s.classifier.clone(),
                String::new(),
                s.g_star.mean.to_string(),
                s.ablated.mean.to_string(),
                s.full.mean.to_string(),
            ],
        )?;
        csv_row(
            &mut w,
            path,
            vec![
                "std".into(),
                s.classifier,
                String::new(),
                s.g_star.std.to_string(),
                s.ablated.std.to_string(),
                s.full.std.to_string(),
            ],
        )?;
    }
    csv_flush(w, path)
}

fn write_subsets(run: &RunResult, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        ["seed", "pool", "size", "samples", "median", "q1", "q3"].map(String::from).to_vec(),
    )?;
    for p in summarize_subsets(&run.subset_samples) {
        csv_row(
            &mut w,
            path,
            vec![
                p.seed.to_string(),
                p.pool,
                p.size.to_string(),
                p.samples.to_string(),
                p.median.to_string(),
                p.q1.to_string(),
                p.q3.to_string(),
            ],
        )?;
    }
    csv_flush(w, path)?;

    let raw = path.with_file_name(format!(
        "{}-samples.csv",
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let mut w = csv_writer(&raw)?;
    csv_row(
        &mut w,
        &raw,
        ["seed", "pool", "size", "members", "relative", "subset_oracle_relative"]
            .map(String::from)
            .to_vec(),
    )?;
    for s in &run.subset_samples {
        csv_row(
            &mut w,
            &raw,
            vec![
                s.seed.to_string(),
                s.pool.clone(),
                s.size.to_string(),
                s.members.join(" "),
                s.relative.to_string(),
                s.subset_oracle_relative.to_string(),
            ],
        )?;
    }
    csv_flush(w, &raw)
}

fn write_rank_table(table: &RankTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["task".to_string()];
    header.extend(table.columns.iter().cloned());
    csv_row(&mut w, path, header)?;
    for (task, losses) in table.tasks.iter().zip(&table.losses) {
        let mut row = vec![task.clone()];
        row.extend(losses.iter().map(|v| v.to_string()));
        csv_row(&mut w, path, row)?;
    }
    let mut row = vec!["mean_rank".to_string()];
    row.extend(table.mean_rank.iter().map(|v| v.to_string()));
    csv_row(&mut w, path, row)?;
    csv_flush(w, path)
}

/// One subdirectory per run plus the cross-task rank table.
pub fn emit_sweep(sweep: &SweepResult, dir: impl AsRef<Path>, opts: EmitOptions) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    prepare_dir(dir, opts)?;
    let mut written = Vec::new();
    for (i, run) in sweep.runs.iter().enumerate() {
        let sub = dir.join(format!("task{i:02}-{}", run.config.hash()));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        written.extend(write_run(run, &sub)?);
    }
    if let Some(table) = &sweep.rank_table {
        let path = dir.join("rank-table.csv");
        write_rank_table(table, &path)?;
        written.push(path);
    }
    if !sweep.failures.is_empty() {
        let path = dir.join("failures.txt");
        let mut w = create(&path)?;
        for (cfg, message) in &sweep.failures {
            writeln!(w, "{}: {message}", cfg.hash()).map_err(|e| Error::io(&path, e))?;
        }
        finish(&path, w)?;
        written.push(path);
    }
    Ok(written)
}
