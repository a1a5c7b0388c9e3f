use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalReport;

/// CMC table: header `k,part1,...,partN,mean,std`, one row per rank.
pub fn cmc_csv(report: &EvalReport) -> Result<String> {
    let n = report.gallery_size();
    if report.partitions.iter().any(|p| p.cmc.len() != n) || n == 0 {
        return Err(Error::Gallery("partitions have different gallery sizes".into()));
    }
    let mut s = String::from("k");
    for p in 1..=report.partitions.len() {
        write!(s, ",part{p}").expect("string write");
    }
    s.push_str(",mean,std\n");
    for k in 1..=n {
        write!(s, "{k}").expect("string write");
        for p in 0..report.partitions.len() {
            write!(s, ",{:.6}", report.rank_k(p, k)).expect("string write");
        }
        writeln!(s, ",{:.6},{:.6}", report.mean(k), report.std(k)).expect("string write");
    }
    Ok(s)
}

/// Fixed-width rank-k accuracy table in percent.
pub fn summary_text(report: &EvalReport) -> String {
    let parts = report.partitions.len();
    let mut s = String::new();
    writeln!(
        s,
        "Recognition accuracy (%) over {parts} partition(s), gallery size {}",
        report.gallery_size()
    )
    .expect("string write");
    write!(s, "{:>8}", "rank").expect("string write");
    for p in 1..=parts {
        write!(s, "{:>9}", format!("part{p}")).expect("string write");
    }
    writeln!(s, "{:>9}{:>9}", "mean", "std").expect("string write");
    for &k in &report.ranks {
        write!(s, "{k:>8}").expect("string write");
        for p in 0..parts {
            write!(s, "{:>9.2}", 100.0 * report.rank_k(p, k)).expect("string write");
        }
        writeln!(s, "{:>9.2}{:>9.2}", 100.0 * report.mean(k), 100.0 * report.std(k))
            .expect("string write");
    }
    let excluded: usize = report.partitions.iter().map(|p| p.excluded).sum();
    if excluded > 0 {
        writeln!(s, "probes without a gallery mate (excluded): {excluded}").expect("string write");
    }
    s
}

/// Writes `cmc.csv`, `summary.txt` and `config.toml` into `dir`.
pub fn export_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (dir.join("cmc.csv"), cmc_csv(report)?),
        (dir.join("summary.txt"), summary_text(report)),
        (dir.join("config.toml"), report.config.clone()),
    ];
    for (path, body) in &files {
        std::fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
