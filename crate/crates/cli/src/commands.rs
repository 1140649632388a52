//! Subcommand implementations.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use shapelinker::aligner::synthetic::self_alignment_pairs;
use shapelinker::aligner::{ransac_align, train, AlignerModel, AlignmentResult, EpochLoss};
use shapelinker::chem::{canonical_smiles, fingerprint, parse_smiles, read_smiles_list, tanimoto, LinkerAnnotation};
use shapelinker::data;
use shapelinker::rl::{pretrain_prior, rl_run_with, sample_batch, SequenceModel, StepDiagnostics};
use shapelinker::scoring::{
    eval_generation, shape_novelty, DiversityFilterState, LinkerScorer, ScoreRecord,
};
use shapelinker::surface::{level_residuals, sample_surface, AtomSet};
use shapelinker::{Error, PointCloud};

use crate::config::{stream, RunConfig};
use crate::io::{self, ManifestEntry, Split};
use crate::Common;

fn load_config(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), common.seed)
}

fn display_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn surface(input: &Path, out: &Path, common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let atoms = io::read_atoms(input)?;
    let cloud = sample_surface(&atoms, &config.surface)?;
    let (max, mean) = level_residuals(&cloud, &atoms, &config.surface);
    io::create_dir(out)?;
    io::write_text(&out.join("surface.xyz"), &cloud.to_xyz(&display_name(input)))?;
    config.echo(out)?;
    println!(
        "{} points from {} atoms; level residual mean {mean:.3e} max {max:.3e}",
        cloud.len(),
        atoms.len()
    );
    Ok(())
}

pub fn make_synthetic(out: &Path, val: usize, common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let pairs = self_alignment_pairs(&config.synthetic);
    if val > pairs.len() {
        bail!(Error::InvalidInput(format!("{val} validation pairs requested, only {} generated", pairs.len())));
    }
    let dir = out.join("pairs");
    io::create_dir(&dir)?;
    let mut manifest = Vec::with_capacity(pairs.len());
    for (i, (q, r)) in pairs.iter().enumerate() {
        let qp = PathBuf::from("pairs").join(format!("query_{i:04}.xyz"));
        let rp = PathBuf::from("pairs").join(format!("reference_{i:04}.xyz"));
        io::write_text(&out.join(&qp), &q.to_xyz(&format!("query {i}")))?;
        io::write_text(&out.join(&rp), &r.to_xyz(&format!("reference {i}")))?;
        let split = (val > 0).then(|| if i + val >= pairs.len() { Split::Val } else { Split::Train });
        manifest.push(ManifestEntry {
            query_xyz_path: qp,
            reference_xyz_path: rp,
            split,
        });
    }
    io::write_json(&out.join("manifest.json"), &manifest)?;
    config.echo(out)?;
    println!("{} pairs written to {}", pairs.len(), out.display());
    Ok(())
}

fn write_loss_csv(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for row in trace {
        w.write_record([row.epoch.to_string(), row.train_loss.to_string(), opt(row.val_loss)])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn fresh_aligner(config: &RunConfig) -> Result<AlignerModel> {
    Ok(AlignerModel::new(config.aligner.embed_dim, config.aligner.heads, config.seed(stream::INIT))?)
}

fn train_on(
    config: &RunConfig,
    train_pairs: &[io::Pair],
    val_pairs: &[io::Pair],
    out: &Path,
    loss_file: &str,
) -> Result<AlignerModel> {
    let mut model = fresh_aligner(config)?;
    let trace = train(&mut model, train_pairs, val_pairs, &config.train)?;
    write_loss_csv(&out.join(loss_file), &trace)?;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    eprintln!(
        "aligner: {} train / {} val pairs, epoch 0 val {} -> epoch {} val {}",
        train_pairs.len(),
        val_pairs.len(),
        opt(first.val_loss),
        last.epoch,
        opt(last.val_loss)
    );
    Ok(model)
}

pub fn train_aligner(manifest: &Path, out: &Path, common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let (train_pairs, val_pairs) = io::read_manifest(manifest, config.aligner.val_fraction)?;
    io::create_dir(out)?;
    let model = train_on(&config, &train_pairs, &val_pairs, out, "loss.csv")?;
    io::write_aligner(&out.join("aligner.json"), &model)?;
    config.echo(out)
}

#[derive(Serialize)]
struct AlignReport {
    method: &'static str,
    chamfer: f64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl AlignReport {
    fn new(method: &'static str, r: &AlignmentResult) -> Self {
        let t = r.world_transform();
        AlignReport {
            method,
            chamfer: r.chamfer,
            rotation: t.rotation.0,
            translation: t.translation.0,
        }
    }
}

pub fn align(
    checkpoint: &Path,
    query: &Path,
    reference: &Path,
    ransac: bool,
    iters: Option<usize>,
    out: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let config = load_config(common)?;
    let model = io::read_aligner(checkpoint)?;
    let q = io::read_cloud(query)?;
    let r = io::read_cloud(reference)?;
    let learned = model.align(&q, &r)?;
    let mut report = serde_json::to_value(AlignReport::new("aligner", &learned))?;
    if ransac {
        let iterations = iters.unwrap_or(config.ransac.iterations);
        let base = ransac_align(&q, &r, iterations, config.ransac.inlier_threshold, config.seed(stream::RANSAC))?;
        let mut b = serde_json::to_value(AlignReport::new("ransac", &base))?;
        b["iterations"] = json!(iterations);
        report["ransac"] = b;
    }
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        io::create_dir(dir)?;
        io::write_text(&dir.join("alignment.json"), &format!("{text}\n"))?;
        config.echo(dir)?;
    }
    println!("{text}");
    Ok(())
}

const SCORE_COMPONENTS: [&str; 3] = ["shape", "rot", "length"];

fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header = vec!["sample_id".to_string(), "smiles".to_string()];
    for c in SCORE_COMPONENTS {
        header.push(format!("{c}_raw"));
        header.push(c.to_string());
    }
    header.extend(["composite", "scaffold", "filtered", "note"].map(String::from));
    w.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![i.to_string(), r.smiles.clone()];
        for c in SCORE_COMPONENTS {
            let comp = r.component(c);
            row.push(opt(comp.and_then(|c| c.raw)));
            row.push(opt(comp.map(|c| c.value)));
        }
        row.push(r.composite.to_string());
        row.push(r.scaffold.clone());
        row.push(r.filtered.to_string());
        row.push(r.note.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn score(
    smiles: &Path,
    annotations: Option<&Path>,
    reference: &Path,
    checkpoint: &Path,
    out: &Path,
    common: &Common,
) -> Result<()> {
    let config = load_config(common)?;
    let lines = read_smiles_list(&io::read_text(smiles)?);
    let annotations: Vec<Option<LinkerAnnotation>> = match annotations {
        Some(p) => {
            let a: Vec<Option<LinkerAnnotation>> = serde_json::from_str(&io::read_text(p)?)
                .with_context(|| format!("parsing annotations {}", p.display()))?;
            if a.len() != lines.len() {
                bail!(Error::InvalidInput(format!(
                    "{} annotations for {} SMILES in {}",
                    a.len(),
                    lines.len(),
                    p.display()
                )));
            }
            a
        }
        None => vec![None; lines.len()],
    };
    let scorer = LinkerScorer::new(config.scoring.clone(), io::read_aligner(checkpoint)?, io::read_cloud(reference)?)?;
    let mut records: Vec<ScoreRecord> = lines
        .par_iter()
        .zip(&annotations)
        .map(|(s, a)| match a {
            Some(a) => scorer.score_annotated(s, a),
            None => scorer.score(s),
        })
        .collect();
    DiversityFilterState::new(config.scoring.bucket_capacity).apply_records(&mut records);
    io::create_dir(out)?;
    write_scores(&out.join("scores.csv"), &records)?;
    config.echo(out)?;
    let mean = records.iter().map(|r| r.composite).sum::<f64>() / records.len().max(1) as f64;
    println!("{} records, mean composite {mean:.4}", records.len());
    Ok(())
}

fn write_curve(path: &Path, curve: &[StepDiagnostics]) -> Result<()> {
    let mut names: Vec<&String> = curve.iter().flat_map(|d| d.components.keys()).collect();
    names.sort();
    names.dedup();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header: Vec<String> = ["epoch", "mean_score", "mean_reward", "mean_loss", "valid_frac", "unique_frac"]
        .map(String::from)
        .to_vec();
    for n in &names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_raw_mean"));
    }
    w.write_record(&header)?;
    for d in curve {
        let mut row = vec![
            d.epoch.to_string(),
            d.mean_score.to_string(),
            d.mean_reward.to_string(),
            d.mean_loss.to_string(),
            d.valid_frac.to_string(),
            d.unique_frac.to_string(),
        ];
        for n in &names {
            let c = d.components.get(*n);
            row.push(opt(c.map(|c| c.value)));
            row.push(opt(c.and_then(|c| c.raw)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn window_mean(curve: &[StepDiagnostics], last: bool) -> Option<f64> {
    let k = curve.len().min(50);
    let w = if last { &curve[curve.len() - k..] } else { &curve[..k] };
    (k > 0).then(|| w.iter().map(|d| d.mean_score).sum::<f64>() / k as f64)
}

fn canonical_set(smiles: &[String]) -> HashSet<String> {
    smiles
        .iter()
        .filter_map(|s| parse_smiles(s).ok().map(|m| canonical_smiles(&m)))
        .collect()
}

fn load_prior(config: &RunConfig, corpus: &[String], out: &Path) -> Result<SequenceModel> {
    if let Some(p) = &config.inputs.prior {
        return io::read_sequence_model(p);
    }
    let outcome = pretrain_prior(corpus, &config.pretrain)?;
    let path = out.join("pretrain.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["epoch", "perplexity"])?;
    for (i, p) in outcome.perplexity.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    eprintln!(
        "prior: perplexity {:.3} -> {:.3}",
        outcome.perplexity[0],
        outcome.perplexity[outcome.perplexity.len() - 1]
    );
    io::write_sequence_model(&out.join("prior.json"), &outcome.model)?;
    Ok(outcome.model)
}

fn load_reference(config: &RunConfig) -> Result<PointCloud> {
    if let Some(p) = &config.inputs.reference_cloud {
        return io::read_cloud(p);
    }
    let atoms = match &config.inputs.reference_atoms {
        Some(p) => io::read_atoms(p)?,
        None => AtomSet::from_xyz(data::REFERENCE_LIGAND_XYZ)?,
    };
    Ok(sample_surface(&atoms, &config.scoring.surface)?)
}

pub fn rl(out: &Path, common: &Common) -> Result<()> {
    let config = load_config(common)?;
    io::create_dir(out)?;
    config.echo(out)?;
    let corpus = match &config.inputs.corpus {
        Some(p) => read_smiles_list(&io::read_text(p)?),
        None => data::linker_corpus(),
    };
    let known = match &config.inputs.reference_smiles {
        Some(p) => canonical_set(&read_smiles_list(&io::read_text(p)?)),
        None => canonical_set(&corpus),
    };
    let prior = load_prior(&config, &corpus, out)?;
    let aligner = match &config.inputs.aligner {
        Some(p) => io::read_aligner(p)?,
        None => {
            let pairs = self_alignment_pairs(&config.synthetic);
            let n_val = ((pairs.len() as f64) * config.aligner.val_fraction).round() as usize;
            let (tr, va) = pairs.split_at(pairs.len() - n_val.min(pairs.len().saturating_sub(1)));
            let model = train_on(&config, tr, va, out, "aligner_loss.csv")?;
            io::write_aligner(&out.join("aligner.json"), &model)?;
            model
        }
    };
    let reference = load_reference(&config)?;
    io::write_text(&out.join("reference.xyz"), &reference.to_xyz("reference surface"))?;
    let scorer = LinkerScorer::new(config.scoring.clone(), aligner, reference)?;

    let (agent, curve) = rl_run_with(&config.rl, &prior, &scorer, |d, _| {
        if d.epoch % 10 == 0 || d.epoch == config.rl.epochs {
            eprintln!(
                "epoch {:>4}  score {:.4}  loss {:.3}  valid {:.2}",
                d.epoch, d.mean_score, d.mean_loss, d.valid_frac
            );
        }
        Ok(())
    })?;
    write_curve(&out.join("learning_curve.csv"), &curve)?;
    io::write_sequence_model(&out.join("agent.json"), &agent)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed(stream::SAMPLE));
    let samples: Vec<String> = sample_batch(&agent, &mut rng, config.samples, config.rl.temperature)?
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    let mut text = samples.join("\n");
    if !samples.is_empty() {
        text.push('\n');
    }
    io::write_text(&out.join("samples.smi"), &text)?;
    let metrics = eval_generation(&samples, &known);
    let summary = json!({
        "epochs": curve.len(),
        "first_window_mean_score": window_mean(&curve, false),
        "last_window_mean_score": window_mean(&curve, true),
        "temperature": config.rl.temperature,
        "generation": metrics,
    });
    io::write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// `cd` and similarity columns of the eval CSV.
fn read_cd_csv(path: &Path, linker: Option<&str>) -> Result<(Vec<f64>, Vec<f64>)> {
    let malformed = |msg: String| Error::InvalidInput(format!("{}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let cd_col = col("cd").ok_or_else(|| malformed("missing `cd` column".into()))?;
    let sim_col = col("similarity");
    let smiles_col = col("smiles");
    let linker_fp = match (sim_col, linker) {
        (Some(_), _) => None,
        (None, Some(l)) => Some(fingerprint(&parse_smiles(l).with_context(|| format!("parsing linker {l}"))?)),
        (None, None) => bail!(malformed("no `similarity` column and no --linker given".into())),
    };
    if linker_fp.is_some() && smiles_col.is_none() {
        bail!(malformed("computing similarity needs a `smiles` column".into()));
    }
    let (mut cd, mut sim) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let number = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| malformed(format!("row {}: {:?} is not a number", line + 1, field(i))).into())
        };
        cd.push(number(cd_col)?);
        sim.push(match (sim_col, &linker_fp) {
            (Some(c), _) => number(c)?,
            (None, Some(fp)) => {
                let s = field(smiles_col.expect("checked above"));
                let mol = parse_smiles(s).map_err(|e| malformed(format!("row {}: {e}", line + 1)))?;
                tanimoto(&fingerprint(&mol), fp)
            }
            (None, None) => unreachable!(),
        });
    }
    Ok((cd, sim))
}

pub fn eval(
    smiles: &Path,
    reference_smiles: &Path,
    cd: Option<&Path>,
    linker: Option<&str>,
    out: Option<&Path>,
    common: &Common,
) -> Result<()> {
    let config = load_config(common)?;
    let samples = read_smiles_list(&io::read_text(smiles)?);
    let known = canonical_set(&read_smiles_list(&io::read_text(reference_smiles)?));
    let metrics = eval_generation(&samples, &known);
    let (mean_cd, mean_sn) = match cd {
        Some(p) => {
            let (cd, sim) = read_cd_csv(p, linker)?;
            if cd.is_empty() {
                (None, None)
            } else {
                let sn = shape_novelty(&cd, &sim)?;
                (Some(cd.iter().sum::<f64>() / cd.len() as f64), Some(sn.mean))
            }
        }
        None => (None, None),
    };
    let report = json!({
        "validity": metrics.validity,
        "uniqueness": metrics.uniqueness,
        "novelty": metrics.novelty,
        "mean_cd": mean_cd,
        "mean_sn": mean_sn,
        "samples": metrics.samples,
        "valid": metrics.valid,
        "unique": metrics.unique,
        "novel": metrics.novel,
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        io::create_dir(dir)?;
        io::write_text(&dir.join("metrics.json"), &format!("{text}\n"))?;
        config.echo(dir)?;
    }
    println!("{text}");
    Ok(())
}
