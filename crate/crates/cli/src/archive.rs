//! Timestamped solution archive.
//!
//! Solutions live in one directory as `<instance>.<makespan>.<unix-ts>.json`
//! next to a copy of their instance (`<instance>.instance.json`), so every
//! entry can be re-validated. Files are written to a temporary name and
//! renamed into place, so concurrent writers never expose partial files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use cmp_core::io::{read_instance, read_solution_with_meta, write_instance, write_solution};
use cmp_core::validate::validate;
use cmp_core::{Instance, Solution};
use serde::Serialize;

const INSTANCE_SUFFIX: &str = ".instance.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArchiveEntry {
    pub instance: String,
    pub makespan: usize,
    pub distance_sum: usize,
    pub solver: String,
    pub timestamp: u64,
    pub path: PathBuf,
}

#[derive(Debug, Default, Serialize)]
pub struct Scan {
    pub entries: Vec<ArchiveEntry>,
    /// Files that failed to parse or validate, with the reason.
    pub quarantined: Vec<(PathBuf, String)>,
}

pub struct Archive {
    dir: PathBuf,
}

fn write_atomic(dir: &Path, target: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist_noclobber(target).map_err(|e| e.error)?;
    Ok(())
}

/// Splits `<instance>.<makespan>.<ts>[-k].json`; instance names may contain dots.
fn parse_name(file: &str) -> Option<(String, usize, u64)> {
    let stem = file.strip_suffix(".json")?;
    let mut parts = stem.rsplitn(3, '.');
    let ts = parts.next()?;
    let makespan = parts.next()?.parse().ok()?;
    let instance = parts.next()?.to_string();
    let ts = ts.split('-').next()?.parse().ok()?;
    Some((instance, makespan, ts))
}

impl Archive {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn instance_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}{INSTANCE_SUFFIX}"))
    }

    /// Stores a solution (and its instance, once). The caller validates first.
    pub fn save(&self, inst: &Instance, s: &Solution, solver: &str, timestamp: u64) -> std::io::Result<PathBuf> {
        let ipath = self.instance_path(inst.name());
        if !ipath.exists() {
            match write_atomic(&self.dir, &ipath, &write_instance(inst)) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {}
                Err(e) => return Err(e),
            }
        }
        let bytes = write_solution(s, solver, timestamp);
        let base = format!("{}.{}.{}", inst.name(), s.makespan(), timestamp);
        for k in 0.. {
            let name = if k == 0 { format!("{base}.json") } else { format!("{base}-{k}.json") };
            let target = self.dir.join(name);
            match write_atomic(&self.dir, &target, &bytes) {
                Ok(()) => return Ok(target),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if std::fs::read(&target).is_ok_and(|b| b == bytes) {
                        return Ok(target);
                    }
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!()
    }

    pub fn scan(&self) -> std::io::Result<Scan> {
        let mut scan = Scan::default();
        let mut names: Vec<String> = std::fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".json") && !n.ends_with(INSTANCE_SUFFIX))
            .collect();
        names.sort();
        let mut instances: BTreeMap<String, Result<Instance, String>> = BTreeMap::new();
        for name in names {
            let path = self.dir.join(&name);
            match self.check(&name, &path, &mut instances) {
                Ok(entry) => scan.entries.push(entry),
                Err(reason) => scan.quarantined.push((path, reason)),
            }
        }
        Ok(scan)
    }

    fn check(
        &self,
        name: &str,
        path: &Path,
        instances: &mut BTreeMap<String, Result<Instance, String>>,
    ) -> Result<ArchiveEntry, String> {
        let (instance, makespan, ts) = parse_name(name).ok_or("unrecognized file name")?;
        let inst = instances
            .entry(instance.clone())
            .or_insert_with(|| {
                let p = self.instance_path(&instance);
                let bytes = std::fs::read(&p).map_err(|e| format!("instance copy: {e}"))?;
                read_instance(&bytes).map_err(|e| format!("instance copy: {e}"))
            })
            .clone()?;
        let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
        let (s, meta) = read_solution_with_meta(&bytes, &inst).map_err(|e| e.to_string())?;
        let report = validate(&inst, &s).map_err(|e| e.to_string())?;
        if !report.feasible {
            return Err(format!("infeasible: {}", report.violations[0]));
        }
        if report.makespan != makespan {
            return Err(format!("file name says makespan {makespan}, solution has {}", report.makespan));
        }
        let (solver, timestamp) = meta.map(|m| (m.solver, m.timestamp)).unwrap_or_else(|| (String::new(), ts));
        Ok(ArchiveEntry {
            instance,
            makespan,
            distance_sum: report.distance_sum,
            solver,
            timestamp,
            path: path.to_path_buf(),
        })
    }

    /// Minimum-makespan entry per instance (then smaller distance sum, then older).
    pub fn best(&self) -> std::io::Result<BTreeMap<String, ArchiveEntry>> {
        let mut out: BTreeMap<String, ArchiveEntry> = BTreeMap::new();
        for e in self.scan()?.entries {
            let key = |x: &ArchiveEntry| (x.makespan, x.distance_sum, x.timestamp);
            match out.get(&e.instance) {
                Some(cur) if key(cur) <= key(&e) => {}
                _ => {
                    out.insert(e.instance.clone(), e);
                }
            }
        }
        Ok(out)
    }

    /// Deletes entries dominated in (makespan, distance sum) by another entry
    /// of the same instance. Quarantined files are never touched.
    pub fn gc(&self) -> std::io::Result<Vec<PathBuf>> {
        let scan = self.scan()?;
        let mut removed = Vec::new();
        for e in &scan.entries {
            let dominated = scan.entries.iter().any(|o| {
                o.instance == e.instance
                    && o.makespan <= e.makespan
                    && o.distance_sum <= e.distance_sum
                    && (o.makespan, o.distance_sum) != (e.makespan, e.distance_sum)
            });
            if dominated {
                std::fs::remove_file(&e.path)?;
                removed.push(e.path.clone());
            }
        }
        Ok(removed)
    }
}
