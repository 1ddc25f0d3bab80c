//! The four commands behind the `hcdnn` binary.

mod phantom;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use phantom::{case_id, case_paths, cmd_phantom, generate_phantom, Phantom, PhantomConfig};

use crate::cascade::{run_cascade, CascadeModels, CascadeOutput};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate_case, write_report, CaseMetrics};
use crate::train::{build_stage_dataset, train_ensemble, write_ensemble, Case, Manifest, Stage, TrainEvent, TrainFile};
use crate::volio::{read_labels, read_volume, write_labels};

const VOLUME_SUFFIX: &str = "_volume.mhd";
const LABELS_SUFFIX: &str = "_labels.mhd";

fn list_dir(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Reads every `{id}_volume.mhd` / `{id}_labels.mhd` pair in `dir`, sorted by
/// id. Volumes without labels are rejected, naming every such case.
pub fn load_cases(dir: impl AsRef<Path>) -> Result<Vec<Case>> {
    let dir = dir.as_ref();
    let names = list_dir(dir)?;
    let ids: Vec<&str> = names.iter().filter_map(|n| n.strip_suffix(VOLUME_SUFFIX)).collect();
    if ids.is_empty() {
        return Err(Error::Dataset(format!("no *{VOLUME_SUFFIX} files in {}", dir.display())));
    }
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !names.contains(&format!("{id}{LABELS_SUFFIX}"))).collect();
    if !missing.is_empty() {
        return Err(Error::Dataset(format!("missing labels for cases: {}", missing.join(", "))));
    }
    ids.iter()
        .map(|&id| {
            let (v, l) = case_paths(dir, id);
            let volume = read_volume(&v)?;
            let labels = read_labels(&l)?;
            volume.check_same_grid(&labels)?;
            Ok(Case { id: id.to_string(), volume, labels })
        })
        .collect()
}

/// Arguments of `train`. `epochs` and `seed` override the config file.
#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub stage: Stage,
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

/// Trains one stage ensemble and writes its checkpoints, histories and
/// manifest into `out`.
pub fn cmd_train(args: &TrainArgs) -> Result<Manifest> {
    let mut file = TrainFile::load(&args.config, args.stage)?;
    if file.stage.stage != args.stage {
        return Err(invalid!("config describes stage {} but --stage is {}", file.stage.stage, args.stage));
    }
    if let Some(e) = args.epochs {
        file.train.epochs = e;
    }
    if let Some(s) = args.seed {
        file.train.seed = s;
    }
    let cases = load_cases(&args.data)?;
    let samples = build_stage_dataset(&cases, &file.stage)?;
    let ids: Vec<String> = cases.iter().map(|c| c.id.clone()).collect();
    log::info!("stage {}: {} samples from {} cases", args.stage, samples.len(), ids.len());
    let members = train_ensemble(&samples, &ids, &file.model, &file.train, |m, e| {
        if let TrainEvent::Epoch { epoch, loss, val_dice } = e {
            log::debug!("member {m} epoch {epoch}: loss {loss:.4}, dice {val_dice:.4}");
        }
    })?;
    write_ensemble(&args.out, &file.stage, &members)
}

/// Case id of a volume or label file: the file stem without its
/// `_volume` / `_labels` suffix.
pub fn case_of(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("case");
    stem.strip_suffix("_volume").or_else(|| stem.strip_suffix("_labels")).unwrap_or(stem).to_string()
}

/// Path of the text summary written next to a predicted label file.
pub fn summary_path(output: &Path) -> PathBuf {
    output.with_extension("summary.txt")
}

/// Runs the cascade on one volume, writing labels and a text summary.
pub fn cmd_predict(models: &CascadeModels, input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<CascadeOutput> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let hu = read_volume(input)?;
    let out = run_cascade(&hu, models)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_labels(&out.labels, output)?;
    let summary = summary_path(output);
    std::fs::write(&summary, out.summary(&case_of(input))).map_err(|e| Error::io(&summary, e))?;
    Ok(out)
}

/// Label files of a directory keyed by case id. Volumes are skipped.
fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter(|n| n.ends_with(".mhd") && !n.ends_with(VOLUME_SUFFIX))
        .map(|n| {
            let p = dir.join(&n);
            (case_of(&p), p)
        })
        .collect())
}

/// Scores every predicted case against its ground truth and writes the
/// report plus its CSV companion.
pub fn cmd_evaluate(pred: impl AsRef<Path>, gt: impl AsRef<Path>, report: impl AsRef<Path>) -> Result<Vec<CaseMetrics>> {
    let (p, g) = (label_files(pred.as_ref())?, label_files(gt.as_ref())?);
    let unmatched: Vec<&str> =
        p.keys().filter(|k| !g.contains_key(*k)).chain(g.keys().filter(|k| !p.contains_key(*k))).map(String::as_str).collect();
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!("unmatched cases: {}", unmatched.join(", "))));
    }
    let rows = p
        .iter()
        .map(|(id, path)| evaluate_case(id, &read_labels(path)?, &read_labels(&g[id])?))
        .collect::<Result<Vec<_>>>()?;
    write_report(&rows, report)?;
    Ok(rows)
}
