use std::collections::BTreeMap;
use std::sync::Mutex;

use fluoro_core::{FluorescenceLobe, FluorescentMaterial};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// A stored material at a given revision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRecord {
    pub id: u64,
    pub revision: u64,
    pub material: FluorescentMaterial,
}

/// Partial update of one Gaussian; absent fields keep their value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LobePatch {
    pub alpha_bar: Option<f64>,
    pub mu_a_nm: Option<f64>,
    pub sigma_a_nm: Option<f64>,
    pub mu_e_nm: Option<f64>,
    pub sigma_e_nm: Option<f64>,
}

/// Body of `PATCH /materials/{id}`. `gaussians[i]` patches Gaussian `i`; an
/// entry past the current count appends a Gaussian and must be complete.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialPatch {
    pub albedo_xyz: Option<[f64; 3]>,
    pub notes: Option<String>,
    pub gaussians: Option<Vec<LobePatch>>,
    /// Alternative to an `If-Match` header.
    pub expected_revision: Option<u64>,
}

impl MaterialPatch {
    pub fn apply(&self, m: &FluorescentMaterial) -> Result<FluorescentMaterial, ApiError> {
        let mut out = m.clone();
        if let Some(a) = self.albedo_xyz {
            out.albedo_xyz = a;
        }
        if let Some(n) = &self.notes {
            out.notes = Some(n.clone());
        }
        for (i, p) in self.gaussians.iter().flatten().enumerate() {
            if let Some(g) = out.gaussians.get_mut(i) {
                g.alpha_bar = p.alpha_bar.unwrap_or(g.alpha_bar);
                g.mu_a = p.mu_a_nm.unwrap_or(g.mu_a);
                g.sigma_a = p.sigma_a_nm.unwrap_or(g.sigma_a);
                g.mu_e = p.mu_e_nm.unwrap_or(g.mu_e);
                g.sigma_e = p.sigma_e_nm.unwrap_or(g.sigma_e);
            } else {
                let need = |v: Option<f64>, name: &str| v.ok_or_else(|| ApiError::invalid(&format!("gaussians[{i}].{name}"), "required for a new Gaussian"));
                out.gaussians.push(FluorescenceLobe {
                    alpha_bar: need(p.alpha_bar, "alpha_bar")?,
                    mu_a: need(p.mu_a_nm, "mu_a_nm")?,
                    sigma_a: need(p.sigma_a_nm, "sigma_a_nm")?,
                    mu_e: need(p.mu_e_nm, "mu_e_nm")?,
                    sigma_e: need(p.sigma_e_nm, "sigma_e_nm")?,
                });
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// In-memory material store. Every mutation happens under one lock, so
/// concurrent patches serialize in arrival order.
#[derive(Debug, Default)]
pub struct MaterialStore {
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    next_id: u64,
    items: BTreeMap<u64, MaterialRecord>,
}

impl MaterialStore {
    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create(&self, material: FluorescentMaterial) -> Result<MaterialRecord, ApiError> {
        material.validate()?;
        let mut inner = self.lock();
        inner.next_id += 1;
        let rec = MaterialRecord {
            id: inner.next_id,
            revision: 1,
            material,
        };
        inner.items.insert(rec.id, rec.clone());
        Ok(rec)
    }

    pub fn get(&self, id: u64) -> Result<MaterialRecord, ApiError> {
        self.lock().items.get(&id).cloned().ok_or_else(|| not_found(id))
    }

    /// Applies `patch` if `expected` (when given) matches the current
    /// revision; returns the new record.
    pub fn patch(&self, id: u64, patch: &MaterialPatch, expected: Option<u64>) -> Result<MaterialRecord, ApiError> {
        let mut inner = self.lock();
        let rec = inner.items.get_mut(&id).ok_or_else(|| not_found(id))?;
        if let Some(e) = expected {
            if e != rec.revision {
                return Err(ApiError::Conflict {
                    expected: e,
                    current: rec.revision,
                });
            }
        }
        rec.material = patch.apply(&rec.material)?;
        rec.revision += 1;
        Ok(rec.clone())
    }
}

fn not_found(id: u64) -> ApiError {
    ApiError::NotFound(format!("no material with id {id}"))
}
