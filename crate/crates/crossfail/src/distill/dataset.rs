//! Teacher dataset construction and the binary dataset format.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::traffic::{TrafficCase, TrafficSystem};
use crate::diffusion::{Conditioning, DenoiserModel, DiffusionError};
use crate::rng::stream;
use crate::sim::{Scenario, FLAT_DIM};

pub const DATASET_MAGIC: &[u8; 4] = b"CFTD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("generator diverged at iteration {0} (loss {1:.3} above 10x moving median)")]
    Diverged(usize, f64),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// One distillation example: an error sequence drawn from the teacher at
/// threshold zero, the robustness it achieved, and the initial state.
/// Values are f32-representable so records survive the file format exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub eps: Vec<f64>,
    pub rho: f64,
    pub s0: [f64; 8],
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Draws `n` records from the teacher at `rho_threshold = 0`: sample an
/// initial state, sample an error sequence, simulate, record the achieved
/// robustness. Sequences and states are rounded through f32 before the
/// simulation so a record re-simulates bit-exactly after a file round trip.
/// The case stream is derived from `(seed, index)`; [`record_case`] rebuilds
/// it for integrity checks.
pub fn build_teacher_dataset(
    teacher: &DenoiserModel,
    system: &TrafficSystem,
    n: usize,
    seed: u64,
) -> Result<Vec<TeacherRecord>, DistillError> {
    use crate::diffusion::FailureSystem;
    let mut rounded: Vec<(TrafficCase, Vec<f64>, [f64; 8])> = Vec::with_capacity(n);
    let chunk = 256usize;
    let mut i = 0usize;
    while i < n {
        let hi = (i + chunk).min(n);
        let cases: Vec<TrafficCase> = (i..hi).map(|j| record_case(system, seed, j as u64)).collect();
        let conds: Vec<Conditioning> = cases
            .iter()
            .map(|c| Conditioning {
                rho_threshold: 0.0,
                s0: system.s0_of(c),
            })
            .collect();
        let mut rngs: Vec<ChaCha12Rng> = (i..hi)
            .map(|j| stream(seed, "dataset-eps", j as u64))
            .collect();
        let eps_list = teacher.sample_batch(&conds, &mut rngs)?;
        for (case, eps) in cases.into_iter().zip(eps_list) {
            let eps32: Vec<f64> = eps.into_iter().map(round_f32).collect();
            let mut s0 = [0.0f64; 8];
            for (dst, src) in s0.iter_mut().zip(case.s0.as_vector()) {
                *dst = round_f32(src);
            }
            let rebuilt = system.case_from_vector(case.scenario, &s0);
            rounded.push((rebuilt, eps32, s0));
        }
        i = hi;
    }
    let rhos: Vec<f64> = rounded
        .par_iter()
        .map(|(case, eps, _)| system.rho(case, eps))
        .collect();
    Ok(rounded
        .into_iter()
        .zip(rhos)
        .map(|((_, eps, s0), rho)| TeacherRecord {
            eps,
            rho: round_f32(rho),
            s0,
        })
        .collect())
}

/// The case used for record `index` of a dataset built with `seed`
/// (scenario instance plus pre-rounding initial state).
pub fn record_case(system: &TrafficSystem, seed: u64, index: u64) -> TrafficCase {
    use crate::diffusion::FailureSystem;
    let mut rng = stream(seed, "dataset-case", index);
    system.draw_case(&mut rng)
}

/// Re-simulates record `index` from its stored fields and checks the stored
/// robustness reproduces bit-exactly (after the f32 rounding of the store).
pub fn verify_record(
    system: &TrafficSystem,
    seed: u64,
    index: u64,
    record: &TeacherRecord,
) -> bool {
    use crate::diffusion::FailureSystem;
    let scenario = record_case(system, seed, index).scenario;
    let case = system.case_from_vector(scenario, &record.s0);
    let rho = system.rho(&case, &record.eps);
    (rho as f32).to_bits() == (record.rho as f32).to_bits()
}

pub fn write_dataset(path: &Path, records: &[TeacherRecord]) -> Result<(), DistillError> {
    let mut buf = Vec::with_capacity(12 + records.len() * (FLAT_DIM + 9) * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        if r.eps.len() != FLAT_DIM {
            return Err(DistillError::Format(format!(
                "record has {} values, expected {FLAT_DIM}",
                r.eps.len()
            )));
        }
        for v in &r.eps {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend_from_slice(&(r.rho as f32).to_le_bytes());
        for v in &r.s0 {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<TeacherRecord>, DistillError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], DistillError> {
        if pos + n > bytes.len() {
            return Err(DistillError::Format("truncated dataset".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != DATASET_MAGIC {
        return Err(DistillError::Format("bad magic, expected CFTD".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(DistillError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut eps = Vec::with_capacity(FLAT_DIM);
        for _ in 0..FLAT_DIM {
            eps.push(f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64);
        }
        let rho = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        let mut s0 = [0.0f64; 8];
        for v in s0.iter_mut() {
            *v = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
        }
        out.push(TeacherRecord { eps, rho, s0 });
    }
    Ok(out)
}

/// Scenario instance bound to a dataset index (exposed so callers can log
/// which destinations/exponent a record used).
pub fn record_scenario(system: &TrafficSystem, seed: u64, index: u64) -> Scenario {
    record_case(system, seed, index).scenario
}
