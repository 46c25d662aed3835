//! End-to-end runs: standardize, find or take clusters, fit the measurement
//! model, then learn the structure among factors (or among shared factors of
//! interest when several domains are given).

use crate::data::{augment, standardize, DomainDataset, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::lina::{LinaData, StructureModel};
use crate::mdlina::{default_q_tilde, factor_domains, fit_md, MdStructureModel};
use crate::measurement::{fit_cfa, fit_cfa_augmented, MeasurementModel};
use crate::params::Hyperparams;
use crate::triad::{locate_clusters, ClusterSpec, IndependenceTestConfig};

/// Where the clusters of observed variables come from.
#[derive(Debug, Clone)]
pub enum ClusterSource {
    /// One spec per domain.
    Given(Vec<ClusterSpec>),
    Locate(IndependenceTestConfig),
}

#[derive(Debug, Clone)]
pub struct SingleDomainFit {
    pub clusters: ClusterSpec,
    pub measurement: MeasurementModel,
    pub structure: StructureModel,
}

#[derive(Debug, Clone)]
pub enum StructureFit {
    Single(StructureModel),
    Multi(MdStructureModel),
}

#[derive(Debug, Clone)]
pub struct MultiDomainFit {
    pub clusters: Vec<ClusterSpec>,
    /// Block-diagonal model over all domains.
    pub measurement: MeasurementModel,
    pub structure: StructureFit,
}

fn domain_clusters(d: &DomainDataset, source: &ClusterSource, m: usize) -> Result<ClusterSpec> {
    match source {
        ClusterSource::Given(specs) => specs
            .get(m)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no clusters given for domain {}", m + 1))),
        ClusterSource::Locate(cfg) => locate_clusters(d, cfg),
    }
}

/// Single-domain run.
pub fn fit_single(data: &DomainDataset, source: &ClusterSource, hp: &Hyperparams) -> Result<SingleDomainFit> {
    hp.validate()?;
    let data = standardize(data)?;
    let clusters = domain_clusters(&data, source, 0)?;
    let measurement = fit_cfa(data.data(), &clusters)?;
    let structure = LinaData::new(&measurement, data.data())?.fit(hp, clusters.names().to_vec())?;
    Ok(SingleDomainFit {
        clusters,
        measurement,
        structure,
    })
}

/// Multi-domain run; a single domain falls back to the single-domain fit.
pub fn fit_multi(md: &MultiDomainDataset, source: &ClusterSource, q_tilde: Option<usize>, hp: &Hyperparams) -> Result<MultiDomainFit> {
    hp.validate()?;
    if md.n_domains() == 1 {
        let single = fit_single(&md.domains()[0], source, hp)?;
        return Ok(MultiDomainFit {
            clusters: vec![single.clusters],
            measurement: single.measurement,
            structure: StructureFit::Single(single.structure),
        });
    }
    let md = md.standardized()?;
    let clusters = md
        .domains()
        .iter()
        .enumerate()
        .map(|(m, d)| domain_clusters(d, source, m))
        .collect::<Result<Vec<_>>>()?;
    let aug = augment(&md)?;
    let measurement = fit_cfa_augmented(&aug, &clusters)?;
    let q_tilde = match q_tilde {
        Some(q) => q,
        None => default_q_tilde(&factor_domains(&measurement, &aug)?),
    };
    let structure = fit_md(&measurement, &aug, q_tilde, hp)?;
    Ok(MultiDomainFit {
        clusters,
        measurement,
        structure: StructureFit::Multi(structure),
    })
}
