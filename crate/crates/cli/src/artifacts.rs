//! Reading and writing run artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ganvert_core::grid::{read_all, write_record};
use ganvert_core::{Grid2, ObservationSeries};
use serde::Serialize;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        ensure_dir(p)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// One GGRD record per entry of `records`.
pub fn write_ggrd(path: &Path, records: &[Vec<&Grid2>]) -> Result<()> {
    if let Some(p) = path.parent() {
        ensure_dir(p)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        write_record(&mut w, r).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ggrd(path: &Path) -> Result<Vec<Vec<Grid2>>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_all(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn read_observations(path: &Path) -> Result<ObservationSeries> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let obs: ObservationSeries = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    obs.validate()?;
    Ok(obs)
}

pub fn series_csv(obs: &ObservationSeries) -> String {
    let mut s = String::from("time_days,p_inj_bar,q_o_m3d,q_w_m3d\n");
    for t in 0..obs.len() {
        s.push_str(&format!("{},{},{},{}\n", obs.times[t], obs.p_inj[t], obs.q_o[t], obs.q_w[t]));
    }
    s
}

/// Minimal CSV table: a header row and numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines.next().context("empty CSV")?.split(',').map(|s| s.trim().to_string()).collect();
        let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(|s| s.trim().to_string()).collect()).collect();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != header.len()) {
            anyhow::bail!("CSV row {} has {} fields, header has {}", i + 2, r.len(), header.len());
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name).with_context(|| format!("no column {name:?}"))?;
        self.rows
            .iter()
            .map(|r| r[i].parse::<f64>().with_context(|| format!("column {name:?}: {:?} is not a number", r[i])))
            .collect()
    }
}

pub fn member_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed{seed:04}"))
}
