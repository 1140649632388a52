//! Score transforms, the weighted geometric-mean composite, the shape score
//! pipeline, the scaffold diversity filter and generation metrics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligner::Aligner;
use crate::chem::{
    canonical_smiles, embed_3d, extract_extended_linker, linker_length_ratio, murcko_scaffold, parse_smiles, rot_bond_ratio,
    LinkerAnnotation, MolGraph,
};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::surface::{sample_surface, AtomSet, SurfaceParams};

/// `1 / (1 + 10^(10·k·(x − m)/(high − low)))` with `m` the band midpoint.
pub fn reverse_sigmoid(x: f64, low: f64, high: f64, k: f64) -> Result<f64> {
    if !(high > low) {
        return Err(Error::InvalidInput(format!("sigmoid bounds need high > low, got [{low}, {high}]")));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidInput(format!("sigmoid steepness must be positive, got {k}")));
    }
    let mid = (high + low) / 2.0;
    Ok(1.0 / (1.0 + 10f64.powf(10.0 * k * (x - mid) / (high - low))))
}

/// 1 inside the closed band `[low, high]`, else 0.
pub fn step_score(x: f64, low: f64, high: f64) -> f64 {
    if low <= x && x <= high {
        1.0
    } else {
        0.0
    }
}

/// `(Π C_i^{w_i})^{1/Σ w_i}` over `(C_i, w_i)` pairs.
pub fn composite_score(components: &[(f64, f64)]) -> Result<f64> {
    if components.is_empty() {
        return Err(Error::InvalidInput("no score components".into()));
    }
    for &(c, w) in components {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidInput(format!("component score {c} outside [0, 1]")));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidInput(format!("component weight {w} must be positive")));
        }
    }
    let total: f64 = components.iter().map(|&(_, w)| w).sum();
    Ok(components.iter().map(|&(c, w)| c.powf(w)).product::<f64>().powf(1.0 / total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SigmoidParams {
    pub low: f64,
    pub high: f64,
    pub k: f64,
}

impl Default for SigmoidParams {
    fn default() -> Self {
        SigmoidParams {
            low: 0.0,
            high: 3.5,
            k: 0.25,
        }
    }
}

impl SigmoidParams {
    pub fn apply(&self, x: f64) -> Result<f64> {
        reverse_sigmoid(x, self.low, self.high, self.k)
    }
}

/// Composite weights; 0 leaves a term out of the composite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreWeights {
    pub shape: f64,
    pub rot: f64,
    pub length: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            shape: 3.0,
            rot: 1.0,
            length: 1.0,
        }
    }
}

/// Composite scoring setup, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    pub weights: ScoreWeights,
    pub sigmoid: SigmoidParams,
    pub rot_band: [f64; 2],
    pub length_band: [f64; 2],
    pub bucket_capacity: usize,
    /// Conformers embedded per linker for the shape score.
    pub conformers: usize,
    pub embed_seed: u64,
    pub surface: SurfaceParams,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            weights: ScoreWeights::default(),
            sigmoid: SigmoidParams::default(),
            rot_band: [0.0, 30.0],
            length_band: [100.0, 100.0],
            bucket_capacity: DEFAULT_BUCKET_CAPACITY,
            conformers: 16,
            embed_seed: 0,
            surface: SurfaceParams::default(),
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigmoid.apply(0.0)?;
        let w = &self.weights;
        let all = [w.shape, w.rot, w.length];
        if all.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || all.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidInput(
                "score weights must be non-negative with at least one positive".into(),
            ));
        }
        if self.rot_band[0] > self.rot_band[1] || self.length_band[0] > self.length_band[1] {
            return Err(Error::InvalidInput("score bands need low <= high".into()));
        }
        if self.bucket_capacity == 0 {
            return Err(Error::InvalidInput("bucket capacity must be at least 1".into()));
        }
        if self.conformers == 0 {
            return Err(Error::InvalidInput("at least one conformer is needed".into()));
        }
        Ok(())
    }
}

/// One named term of the composite. `raw` is `None` when the term failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponent {
    pub name: String,
    pub raw: Option<f64>,
    pub value: f64,
    pub weight: f64,
}

/// Everything known about one scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub smiles: String,
    pub components: Vec<ScoreComponent>,
    /// Weighted geometric mean of the component values, before filtering.
    pub composite: f64,
    pub scaffold: String,
    pub filtered: bool,
    pub note: Option<String>,
}

impl ScoreRecord {
    /// Record for a sample that could not be processed at all.
    pub fn failed(smiles: impl Into<String>, note: impl Into<String>) -> Self {
        ScoreRecord {
            smiles: smiles.into(),
            components: Vec::new(),
            composite: 0.0,
            scaffold: String::new(),
            filtered: false,
            note: Some(note.into()),
        }
    }

    /// Score after the diversity filter.
    pub fn reward(&self) -> f64 {
        if self.filtered {
            0.0
        } else {
            self.composite
        }
    }

    pub fn component(&self, name: &str) -> Option<&ScoreComponent> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn is_valid(&self) -> bool {
        self.note.as_deref() != Some(PARSE_ERROR)
    }
}

/// Note attached to samples whose SMILES does not parse.
pub const PARSE_ERROR: &str = "parse error";

/// Bond hops into each flanking fragment kept for shape scoring.
pub const EXTENDED_LINKER_HOPS: usize = 2;

/// Raw minimum Chamfer over conformers and its transformed score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeScore {
    pub raw: Option<f64>,
    pub score: f64,
}

/// Samples a surface for every conformer, aligns it onto `reference` and
/// keeps the smallest Chamfer distance. Conformers whose surface or
/// alignment fails are skipped; if all fail the score is 0.
pub fn shape_score<A: Aligner + Sync>(
    aligner: &A,
    conformers: &[AtomSet],
    reference: &PointCloud,
    surface: &SurfaceParams,
    sigmoid: &SigmoidParams,
) -> ShapeScore {
    let best = conformers
        .iter()
        .filter_map(|c| {
            let cloud = sample_surface(c, surface).ok()?;
            let result = aligner.align(&cloud, reference).ok()?;
            result.chamfer.is_finite().then_some(result.chamfer)
        })
        .min_by(f64::total_cmp);
    match best {
        Some(raw) => ShapeScore {
            raw: Some(raw),
            score: sigmoid.apply(raw).unwrap_or(0.0),
        },
        None => ShapeScore { raw: None, score: 0.0 },
    }
}

pub const DEFAULT_BUCKET_CAPACITY: usize = 25;

/// Scaffold buckets. Once a bucket holds `capacity` samples, later samples
/// with that scaffold score 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityFilterState {
    pub buckets: BTreeMap<String, usize>,
    pub capacity: usize,
}

impl Default for DiversityFilterState {
    fn default() -> Self {
        Self::new(DEFAULT_BUCKET_CAPACITY)
    }
}

impl DiversityFilterState {
    pub fn new(capacity: usize) -> Self {
        DiversityFilterState {
            buckets: BTreeMap::new(),
            capacity: capacity.max(1),
        }
    }

    /// Counts the sample and returns its adjusted score.
    pub fn apply(&mut self, scaffold: &str, score: f64) -> f64 {
        let count = self.buckets.entry(scaffold.to_string()).or_insert(0);
        let full = *count >= self.capacity;
        *count += 1;
        if full {
            0.0
        } else {
            score
        }
    }

    /// Runs the filter over records in order, setting `filtered` where the
    /// bucket was already full. Unprocessable samples are not counted.
    pub fn apply_records(&mut self, records: &mut [ScoreRecord]) {
        for r in records.iter_mut().filter(|r| r.is_valid()) {
            let count = self.buckets.entry(r.scaffold.clone()).or_insert(0);
            r.filtered = *count >= self.capacity;
            *count += 1;
        }
    }
}

/// Functional form of [`DiversityFilterState::apply`].
pub fn diversity_filter(mut state: DiversityFilterState, scaffold: &str, score: f64) -> (f64, DiversityFilterState) {
    let s = state.apply(scaffold, score);
    (s, state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeNovelty {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// `SN_i = (max cd − cd_i)/(max cd − min cd) · (1 − sim_i)`, min-max over
/// this batch; all scaled values are 1 when every CD is equal.
pub fn shape_novelty(cd: &[f64], similarity: &[f64]) -> Result<ShapeNovelty> {
    if cd.len() != similarity.len() {
        return Err(Error::SizeMismatch(cd.len(), similarity.len()));
    }
    if cd.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if cd.iter().chain(similarity).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shape novelty input".into()));
    }
    let max = cd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = cd.iter().copied().fold(f64::INFINITY, f64::min);
    let per_sample: Vec<f64> = cd
        .iter()
        .zip(similarity)
        .map(|(&c, &s)| {
            let scaled = if max > min { (max - c) / (max - min) } else { 1.0 };
            scaled * (1.0 - s)
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(ShapeNovelty { per_sample, mean })
}

/// Validity, uniqueness and novelty of generated SMILES. A ratio is `None`
/// when its denominator is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub samples: usize,
    pub valid: usize,
    pub unique: usize,
    pub novel: usize,
    pub validity: Option<f64>,
    pub uniqueness: Option<f64>,
    pub novelty: Option<f64>,
}

pub fn eval_generation(samples: &[String], reference: &HashSet<String>) -> GenerationMetrics {
    let canon: Vec<String> = samples
        .iter()
        .filter_map(|s| parse_smiles(s).ok().map(|m| canonical_smiles(&m)))
        .collect();
    let unique: HashSet<&String> = canon.iter().collect();
    let novel = unique.iter().filter(|s| !reference.contains(**s)).count();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    GenerationMetrics {
        samples: samples.len(),
        valid: canon.len(),
        unique: unique.len(),
        novel,
        validity: ratio(canon.len(), samples.len()),
        uniqueness: ratio(unique.len(), canon.len()),
        novelty: ratio(novel, unique.len()),
    }
}

/// Diversity-filter key: the Murcko scaffold, or the canonical SMILES when
/// the molecule has no rings.
pub fn scaffold_key(mol: &MolGraph) -> String {
    let s = murcko_scaffold(mol);
    if s.is_empty() {
        canonical_smiles(mol)
    } else {
        s
    }
}

/// Composite scorer for linker SMILES with two `*` attachment points:
/// shape against a reference cloud, rotatable-bond ratio and linker-length
/// ratio. Results are memoised by canonical SMILES.
pub struct LinkerScorer<A> {
    pub config: ScoringConfig,
    pub aligner: A,
    pub reference: PointCloud,
    cache: Mutex<HashMap<String, ScoreRecord>>,
}

impl<A: Aligner + Sync> LinkerScorer<A> {
    pub fn new(config: ScoringConfig, aligner: A, reference: PointCloud) -> Result<Self> {
        config.validate()?;
        Ok(LinkerScorer {
            config,
            aligner,
            reference,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Unfiltered record for one SMILES. Never fails: problems become zero
    /// scores with a note.
    pub fn score(&self, smiles: &str) -> ScoreRecord {
        let mol = match parse_smiles(smiles) {
            Ok(m) => m,
            Err(_) => return ScoreRecord::failed(smiles, PARSE_ERROR),
        };
        let canon = canonical_smiles(&mol);
        if let Some(hit) = self.cache.lock().expect("score cache poisoned").get(&canon) {
            return ScoreRecord {
                smiles: smiles.to_string(),
                ..hit.clone()
            };
        }
        // embed from the canonical form so the score depends only on the graph
        let mol = parse_smiles(&canon).unwrap_or(mol);
        let linker = LinkerAnnotation::from_dummies(&mol);
        let record = self.score_graph(smiles, &mol, linker, &mol);
        self.cache
            .lock()
            .expect("score cache poisoned")
            .insert(canon, record.clone());
        record
    }

    /// Record for a full molecule with an explicit linker annotation (atom
    /// indices in SMILES order). Shape is scored on the extended linker.
    /// Not cached, since indices are tied to the input atom order.
    pub fn score_annotated(&self, smiles: &str, annotation: &LinkerAnnotation) -> ScoreRecord {
        let mol = match parse_smiles(smiles) {
            Ok(m) => m,
            Err(_) => return ScoreRecord::failed(smiles, PARSE_ERROR),
        };
        match extract_extended_linker(&mol, annotation, EXTENDED_LINKER_HOPS) {
            Ok(ext) => self.score_graph(smiles, &mol, Ok(annotation.clone()), &ext.mol),
            Err(e) => {
                let mut r = self.score_graph(smiles, &mol, Err(e), &mol);
                for c in r.components.iter_mut().filter(|c| c.name == "shape") {
                    c.raw = None;
                    c.value = 0.0;
                }
                r.composite = 0.0;
                r
            }
        }
    }

    fn score_graph(&self, smiles: &str, mol: &MolGraph, linker: Result<LinkerAnnotation>, shape_mol: &MolGraph) -> ScoreRecord {
        let cfg = &self.config;
        let scaffold = scaffold_key(mol);
        let mut notes = Vec::new();
        let linker = match linker {
            Ok(l) => Some(l),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        };

        let shape = match embed_3d(shape_mol, cfg.conformers, cfg.embed_seed) {
            Ok(confs) => {
                let sets: Vec<AtomSet> = confs.into_iter().map(|c| c.atoms).collect();
                let s = shape_score(&self.aligner, &sets, &self.reference, &cfg.surface, &cfg.sigmoid);
                if s.raw.is_none() {
                    notes.push("shape alignment failed".into());
                }
                s
            }
            Err(e) => {
                notes.push(e.to_string());
                ShapeScore { raw: None, score: 0.0 }
            }
        };
        let rot = linker.as_ref().map(|l| rot_bond_ratio(mol, l));
        let length = linker.as_ref().and_then(|l| linker_length_ratio(mol, l).ok());
        let band = |x: Option<f64>, b: [f64; 2]| x.map_or(0.0, |v| step_score(v, b[0], b[1]));
        let components = vec![
            ScoreComponent {
                name: "shape".into(),
                raw: shape.raw,
                value: shape.score,
                weight: cfg.weights.shape,
            },
            ScoreComponent {
                name: "rot".into(),
                raw: rot,
                value: band(rot, cfg.rot_band),
                weight: cfg.weights.rot,
            },
            ScoreComponent {
                name: "length".into(),
                raw: length,
                value: band(length, cfg.length_band),
                weight: cfg.weights.length,
            },
        ];
        // a zero weight switches the term off
        let pairs: Vec<(f64, f64)> = components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| (c.value, c.weight))
            .collect();
        ScoreRecord {
            smiles: smiles.to_string(),
            composite: composite_score(&pairs).unwrap_or(0.0),
            components,
            scaffold,
            filtered: false,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        }
    }

    /// Scores a batch in parallel, then applies the diversity filter in
    /// sample order.
    pub fn score_batch(&self, smiles: &[String], filter: Option<&mut DiversityFilterState>) -> Vec<ScoreRecord> {
        let mut records: Vec<ScoreRecord> = smiles.par_iter().map(|s| self.score(s)).collect();
        if let Some(f) = filter {
            f.apply_records(&mut records);
        }
        records
    }
}
