//! Artifact formats: archive and evaluation JSON-lines, metrics CSV, content hashes.
//!
//! Archive line: `{skill, iteration, return, collisions, mean_features, observations,
//! actions, rewards, features, next_observations, dones}`, with the matrices stored as
//! arrays of rows (one row per step). Evaluation line: `{skill, episode, return,
//! collisions, mean_features, features}`. Floats use shortest round-trip notation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cns::{ArchiveEntry, CnsArchive, CnsTrace};
use crate::distill::{EvalResult, MetricsRow};
use crate::envs::{Origin, Rollout, Transition};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveRecord {
    pub skill: usize,
    pub iteration: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub collisions: usize,
    pub mean_features: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub next_observations: Vec<Vec<f64>>,
    pub dones: Vec<bool>,
}

impl ArchiveRecord {
    pub fn from_entry(e: &ArchiveEntry) -> Self {
        let t = &e.transitions;
        Self {
            skill: e.skill,
            iteration: e.iteration,
            ret: e.ret,
            collisions: e.collisions,
            mean_features: e.mean_features.clone(),
            observations: t.iter().map(|t| t.s.clone()).collect(),
            actions: t.iter().map(|t| t.a.clone()).collect(),
            rewards: t.iter().map(|t| t.r_ext).collect(),
            features: t.iter().map(|t| t.features.clone()).collect(),
            next_observations: t.iter().map(|t| t.s_next.clone()).collect(),
            dones: t.iter().map(|t| t.done).collect(),
        }
    }

    pub fn into_entry(self) -> Result<ArchiveEntry> {
        let n = self.rewards.len();
        if [
            self.observations.len(),
            self.actions.len(),
            self.features.len(),
            self.next_observations.len(),
            self.dones.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "archive record for skill {} has ragged step arrays",
                self.skill
            )));
        }
        let skill = self.skill;
        let transitions = self
            .observations
            .into_iter()
            .zip(self.actions)
            .zip(self.rewards)
            .zip(self.features)
            .zip(self.next_observations)
            .zip(self.dones)
            .map(|(((((s, a), r_ext), features), s_next), done)| Transition {
                s,
                a,
                r_ext,
                features,
                s_next,
                z: skill,
                done,
                origin: Origin::Offline,
            })
            .collect();
        Ok(ArchiveEntry {
            skill,
            iteration: self.iteration,
            ret: self.ret,
            mean_features: self.mean_features,
            collisions: self.collisions,
            transitions,
        })
    }
}

fn write_lines<W: Write, T: Serialize>(w: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(w);
    for it in items {
        serde_json::to_writer(&mut w, &it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<R: Read, T: serde::de::DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| invalid(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_archive<W: Write>(w: W, archive: &CnsArchive) -> Result<()> {
    write_lines(w, archive.entries.iter().map(ArchiveRecord::from_entry))
}

/// Reads an archive; all transitions are tagged offline.
pub fn read_archive<R: Read>(r: R, skills: usize) -> Result<CnsArchive> {
    let mut archive = CnsArchive::new(skills);
    for rec in read_lines::<_, ArchiveRecord>(r)? {
        if rec.skill >= skills {
            return Err(invalid(format!("archive skill {} out of range for {skills} skills", rec.skill)));
        }
        archive.entries.push(rec.into_entry()?);
    }
    Ok(archive)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub skill: usize,
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub collisions: usize,
    pub mean_features: Vec<f64>,
    pub features: Vec<Vec<f64>>,
}

impl EvalRecord {
    pub fn from_rollout(r: &Rollout, episode: usize) -> Self {
        Self {
            skill: r.transitions.first().map_or(0, |t| t.z),
            episode,
            ret: r.ret,
            collisions: r.collisions,
            mean_features: r.mean_features.clone(),
            features: r.feature_seq(),
        }
    }
}

/// Evaluation rollouts are grouped by skill, `episodes` consecutive entries each.
pub fn eval_records(result: &EvalResult, episodes: usize) -> Vec<EvalRecord> {
    result.rollouts.iter().enumerate().map(|(k, r)| EvalRecord::from_rollout(r, k % episodes.max(1))).collect()
}

pub fn write_eval<W: Write>(w: W, records: &[EvalRecord]) -> Result<()> {
    write_lines(w, records)
}

pub fn read_eval<R: Read>(r: R) -> Result<Vec<EvalRecord>> {
    read_lines(r)
}

fn csv_err(e: csv::Error) -> Error {
    invalid(format!("csv: {e}"))
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Header of the metrics CSV for `n` skills.
pub fn metrics_header(n: usize) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    h.extend(indexed("v_", n));
    h.extend(indexed("w_", n));
    h.extend(indexed("eval_return_", n));
    for c in
        ["v_star", "diversity", "eval_return", "eval_diversity", "temperature", "critic_ext_loss", "critic_int_loss"]
    {
        h.push(c.to_string());
    }
    h
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow], skills: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(metrics_header(skills)).map_err(csv_err)?;
    for r in rows {
        if r.v.len() != skills || r.weights.len() != skills || r.eval_returns.len() != skills {
            return Err(Error::ShapeMismatch(format!("metrics row at step {} does not have {skills} skills", r.step)));
        }
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.v.iter().chain(&r.weights).chain(&r.eval_returns).map(f64::to_string));
        rec.extend(
            [
                r.v_star,
                r.diversity,
                r.eval_return,
                r.eval_diversity,
                r.temperature,
                r.critic_ext_loss,
                r.critic_int_loss,
            ]
            .iter()
            .map(f64::to_string),
        );
        wr.write_record(rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    let skills = header.iter().filter(|h| h.starts_with("v_") && h[2..].parse::<usize>().is_ok()).count();
    if header.iter().map(str::to_string).collect::<Vec<_>>() != metrics_header(skills) {
        return Err(invalid("metrics header does not match the expected layout"));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let step = rec[0].parse::<usize>().map_err(|e| invalid(format!("step: {e}")))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("metrics value: {e}")))?;
        let (v, rest) = vals.split_at(skills);
        let (w, rest) = rest.split_at(skills);
        let (er, rest) = rest.split_at(skills);
        out.push(MetricsRow {
            step,
            v: v.to_vec(),
            weights: w.to_vec(),
            eval_returns: er.to_vec(),
            v_star: rest[0],
            diversity: rest[1],
            eval_return: rest[2],
            eval_diversity: rest[3],
            temperature: rest[4],
            critic_ext_loss: rest[5],
            critic_int_loss: rest[6],
        });
    }
    Ok(out)
}

/// CNS trace CSV: `iteration, v_star, v_i..., w_i..., mean_return_i...`.
pub fn write_cns_trace<W: Write>(w: W, trace: &[CnsTrace], skills: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut h = vec!["iteration".to_string(), "v_star".to_string()];
    h.extend(indexed("v_", skills));
    h.extend(indexed("w_", skills));
    h.extend(indexed("mean_return_", skills));
    wr.write_record(&h).map_err(csv_err)?;
    for t in trace {
        let mut rec = vec![t.iteration.to_string(), t.v_star.to_string()];
        rec.extend(t.v.iter().chain(&t.weights).chain(&t.mean_return).map(f64::to_string));
        wr.write_record(rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a CSV with the given header and rows of numbers.
pub fn write_table<W: Write>(w: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::ShapeMismatch(format!("row of {} values for {} columns", r.len(), header.len())));
        }
        wr.write_record(r.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a numeric CSV written by [`write_table`].
pub fn read_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(
            rec.iter()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("table value: {e}")))?,
        );
    }
    Ok((header, rows))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(File::create(path)?)
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
