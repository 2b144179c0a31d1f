use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::StudentExpert;
use crate::inference::{ClassSlice, GlobalClassSpace};
use crate::nn::{derive_seed, DenseNet};
use crate::routers::{CalibrationStats, Router, RouterKind};

pub const MANIFEST_VERSION: u32 = 1;

/// One committed task: frozen student, frozen router, threshold, class slice.
#[derive(Debug, Clone)]
pub struct ExpertRecord {
    pub student: StudentExpert,
    pub router: Router,
    pub stats: CalibrationStats,
    pub slice: ClassSlice,
}

impl ExpertRecord {
    pub fn id(&self) -> usize {
        self.student.id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Familiar(usize),
    Novel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// Minimum batch-mean error over the routers; `+inf` for an empty library.
    pub s_fam: f64,
    /// Batch-mean error of every router, in library order.
    pub errors: Vec<f64>,
    pub verdict: Verdict,
}

/// Append-only collection of frozen expert records.
#[derive(Debug, Default)]
pub struct ExpertLibrary {
    records: Vec<ExpertRecord>,
    router_evals: AtomicUsize,
}

impl Clone for ExpertLibrary {
    fn clone(&self) -> Self {
        Self { records: self.records.clone(), router_evals: AtomicUsize::new(self.router_evals()) }
    }
}

impl ExpertLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ExpertRecord] {
        &self.records
    }

    pub fn global_classes(&self) -> usize {
        self.records.iter().map(|r| r.slice.width).sum()
    }

    pub fn class_space(&self) -> GlobalClassSpace {
        GlobalClassSpace::new(self.records.iter().map(|r| r.slice.width))
    }

    /// Total router evaluations since construction.
    pub fn router_evals(&self) -> usize {
        self.router_evals.load(Ordering::Relaxed)
    }

    pub(crate) fn append(&mut self, record: ExpertRecord) -> Result<()> {
        if !record.student.is_frozen() || !record.router.is_frozen() {
            return Err(Error::Usage("only frozen experts can join the library".into()));
        }
        let expected = ClassSlice { offset: self.global_classes(), width: record.student.classes() };
        if record.slice != expected || record.id() != self.records.len() {
            return Err(Error::Integrity(format!(
                "record {} with slice {:?} cannot follow {} experts",
                record.id(),
                record.slice,
                self.records.len()
            )));
        }
        self.records.push(record);
        Ok(())
    }

    /// Per-row error of every router: `rows × N`.
    pub fn router_errors(&self, h: &ArrayView2<f32>, noise_seed: u64) -> Result<Array2<f32>> {
        let cols: Vec<_> = self
            .records
            .par_iter()
            .enumerate()
            .map(|(j, r)| {
                self.router_evals.fetch_add(1, Ordering::Relaxed);
                r.router.errors(h, derive_seed(noise_seed, j as u64))
            })
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((h.nrows(), cols.len()));
        for (j, col) in cols.into_iter().enumerate() {
            out.column_mut(j).assign(&col);
        }
        Ok(out)
    }

    /// Batch-mean familiarity probe: the best router claims the batch when
    /// its mean error does not exceed its threshold for a mean over that
    /// many samples.
    pub fn probe_familiarity(&self, h: &ArrayView2<f32>, noise_seed: u64) -> Result<ProbeResult> {
        let errs = self.router_errors(h, noise_seed)?;
        let rows = errs.nrows().max(1) as f64;
        let errors: Vec<f64> = errs.columns().into_iter().map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / rows).collect();
        let best = errors
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, &e)| (j, e));
        let (s_fam, verdict) = match best {
            None => (f64::INFINITY, Verdict::Novel),
            Some((j, e)) if !self.records[j].stats.is_novel_batch(e, h.nrows()) => (e, Verdict::Familiar(j)),
            Some((_, e)) => (e, Verdict::Novel),
        };
        Ok(ProbeResult { s_fam, errors, verdict })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    expert_count: usize,
    global_classes: usize,
    experts: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    id: usize,
    classes: usize,
    slice_offset: usize,
    router_kind: RouterKind,
    k: usize,
    mu_cal: f64,
    sigma_cal: f64,
    margin: f64,
    tau: f64,
    expert_digest: String,
    router_digest: String,
}

fn expert_file(id: usize) -> String {
    format!("expert_{id}.mbnn")
}

fn router_file(id: usize) -> String {
    format!("router_{id}.mbnn")
}

/// Writes `manifest.json` plus one `MBNN` file per student and router.
pub fn save_library(library: &ExpertLibrary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut experts = Vec::with_capacity(library.len());
    for r in library.records() {
        let id = r.id();
        let expert_bytes = r.student.adapter().to_mbnn_bytes();
        let router_bytes = r.router.to_bytes();
        let p = dir.join(expert_file(id));
        fs::write(&p, &expert_bytes).map_err(|e| Error::io(&p, e))?;
        let p = dir.join(router_file(id));
        fs::write(&p, &router_bytes).map_err(|e| Error::io(&p, e))?;
        experts.push(ManifestEntry {
            id,
            classes: r.slice.width,
            slice_offset: r.slice.offset,
            router_kind: r.router.kind(),
            k: r.router.k(),
            mu_cal: r.stats.mu_cal,
            sigma_cal: r.stats.sigma_cal,
            margin: r.stats.margin,
            tau: r.stats.tau,
            expert_digest: r.student.digest(),
            router_digest: r.router.digest(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        expert_count: library.len(),
        global_classes: library.global_classes(),
        experts,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let p = dir.join("manifest.json");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads a library written by [`save_library`], verifying every digest.
pub fn load_library(dir: &Path) -> Result<ExpertLibrary> {
    let text = read_file(&dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| Error::Format(format!("manifest.json: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", manifest.version)));
    }
    if manifest.expert_count != manifest.experts.len() {
        return Err(Error::Integrity("manifest expert count disagrees with its entries".into()));
    }
    let mut library = ExpertLibrary::new();
    for e in &manifest.experts {
        let adapter = DenseNet::from_mbnn_bytes(&read_file(&dir.join(expert_file(e.id)))?)?;
        let student = StudentExpert::from_frozen(e.id, adapter, Some(&e.expert_digest))?;
        let router = Router::from_bytes(e.router_kind, &read_file(&dir.join(router_file(e.id)))?)?;
        if router.digest() != e.router_digest {
            return Err(Error::Integrity(format!("router {}: digest mismatch", e.id)));
        }
        if router.k() != e.k || student.classes() != e.classes {
            return Err(Error::Integrity(format!("expert {}: shape disagrees with manifest", e.id)));
        }
        let stats = CalibrationStats { mu_cal: e.mu_cal, sigma_cal: e.sigma_cal, margin: e.margin, tau: e.tau };
        let slice = ClassSlice { offset: e.slice_offset, width: e.classes };
        library.append(ExpertRecord { student, router, stats, slice })?;
    }
    if library.global_classes() != manifest.global_classes {
        return Err(Error::Integrity("manifest global class count disagrees with its entries".into()));
    }
    Ok(library)
}
