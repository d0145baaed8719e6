use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use super::options::*;
use super::{usage, CliError};
use crate::agglo::{self, LogisticModel, MergeTree, Rag, Scorer};
use crate::malis;
use crate::metrics::{self, threshold_grid};
use crate::stitch::{self as blocks, ManifestEntry, StitchParams};
use crate::synth::{self as gen, NoiseParams, SynthParams};
use crate::volume::{
    read_affinities, read_labels, write_volume, AffinityVolume, LabelVolume, Shape3, VolumeFile,
};
use crate::zwatershed::{self as ws, WatershedParams};

type CmdResult = Result<(), CliError>;

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| usage(format!("missing required option --{flag}")))
}

fn parse_dims(text: &str, flag: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<&str> = text.split(['x', 'X', ',']).map(str::trim).collect();
    let bad = || usage(format!("--{flag} expects ZxYxX, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.parse().map_err(|_| bad())?;
    }
    Ok(dims)
}

fn unit_interval(value: f64, flag: &str) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(usage(format!("--{flag} = {value} is outside [0, 1]")))
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Refuses to run when an output path names one of the inputs.
fn keep_inputs(inputs: &[&Path], outputs: &[&Path]) -> CmdResult {
    for o in outputs {
        if let Some(i) = inputs.iter().find(|i| same_file(i, o)) {
            return Err(usage(format!("output {} would overwrite input {}", o.display(), i.display())));
        }
    }
    Ok(())
}

fn load_labels(path: &Path) -> Result<LabelVolume, CliError> {
    Ok(read_labels(path).with_context(|| format!("reading labels {}", path.display()))?)
}

fn load_affinities(path: &Path) -> Result<AffinityVolume, CliError> {
    Ok(read_affinities(path).with_context(|| format!("reading affinities {}", path.display()))?)
}

fn save<V: VolumeFile + ?Sized>(vol: &V, path: &Path) -> CmdResult {
    write_volume(vol, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn save_text(text: &str, path: &Path) -> CmdResult {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn watershed_params(
    t_high: Option<f32>,
    t_low: Option<f32>,
    size_min: Option<usize>,
    t_merge: Option<f32>,
) -> Result<WatershedParams, CliError> {
    let d = WatershedParams::default();
    let p = WatershedParams {
        t_high: t_high.unwrap_or(d.t_high),
        t_low: t_low.unwrap_or(d.t_low),
        size_min: size_min.unwrap_or(d.size_min),
        t_merge: t_merge.unwrap_or(d.t_merge),
    };
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

fn scorer(name: Option<String>, model: Option<&Path>) -> Result<Scorer, CliError> {
    match name.as_deref().unwrap_or("mean") {
        "mean" => Ok(Scorer::MeanAffinity),
        "logistic" => {
            let path = model.ok_or_else(|| usage("--scorer logistic requires --model"))?;
            let model = LogisticModel::read(path).with_context(|| format!("reading model {}", path.display()))?;
            Ok(Scorer::Logistic(model))
        }
        other => Err(usage(format!("unknown scorer {other:?}; expected mean or logistic"))),
    }
}

fn theta(value: Option<f64>) -> Result<f64, CliError> {
    let t = value.unwrap_or(0.5);
    unit_interval(t, "theta")?;
    Ok(t)
}

fn vi_line(vi: &metrics::ViScore) -> String {
    format!("{:.6},{:.6}", vi.vi_under, vi.vi_over)
}

pub fn synth(o: SynthOpts, out: &mut dyn Write) -> CmdResult {
    let shape = Shape3::from_dims(parse_dims(&required(o.shape, "shape")?, "shape")?)
        .map_err(|e| usage(e.to_string()))?;
    let rng_seed = o.rng_seed.unwrap_or(0);
    let p = SynthParams {
        n_seeds: required(o.seeds, "seeds")?,
        anisotropy: o.anisotropy.unwrap_or(4.0),
        rng_seed,
    };
    p.validate(shape).map_err(|e| usage(e.to_string()))?;
    let n = NoiseParams {
        flip_sigma: o.sigma.unwrap_or(0.0),
        jitter_prob: o.jitter.unwrap_or(0.0),
        rng_seed,
    };
    n.validate().map_err(|e| usage(e.to_string()))?;
    let gt_out = required(o.gt_out, "gt-out")?;
    let aff_out = required(o.aff_out, "aff-out")?;
    let gt = gen::synth_labels(shape, &p)?;
    let aff = gen::synth_affinities(&gt, &n)?;
    save(&gt, &gt_out)?;
    save(&aff, &aff_out)?;
    writeln!(out, "segments\n{}", gt.count_segments())?;
    Ok(())
}

pub fn malis_grad(o: MalisGradOpts, out: &mut dyn Write) -> CmdResult {
    let aff_path = required(o.aff, "aff")?;
    let gt_path = required(o.gt, "gt")?;
    let step = o.step.unwrap_or(0.5);
    if !(step.is_finite() && step >= 0.0) {
        return Err(usage(format!("--step {step} must be a non-negative number")));
    }
    let outputs: Vec<&Path> = o.grad_out.iter().chain(&o.corrected_out).map(PathBuf::as_path).collect();
    keep_inputs(&[&aff_path, &gt_path], &outputs)?;
    let aff = load_affinities(&aff_path)?;
    let gt = load_labels(&gt_path)?;
    let normalize = o.normalize.unwrap_or(false);
    let counts = malis::malis_edge_counts(&aff, &gt)?;
    let result = malis::loss_from_counts(&aff, &counts, normalize);
    if let Some(path) = &o.grad_out {
        save(&result.gradient, path)?;
    }
    if let Some(path) = &o.corrected_out {
        save(&malis::gradient_step(&aff, &result.gradient, step), path)?;
    }
    writeln!(
        out,
        "loss,pos_pairs,neg_pairs\n{},{},{}",
        result.loss,
        counts.total_pos(),
        counts.total_neg()
    )?;
    Ok(())
}

pub fn watershed(o: WatershedOpts, out: &mut dyn Write) -> CmdResult {
    let params = watershed_params(o.t_high, o.t_low, o.size_min, o.t_merge)?;
    let aff_path = required(o.aff, "aff")?;
    let out_path = required(o.out, "out")?;
    keep_inputs(&[&aff_path], &[&out_path])?;
    let aff = load_affinities(&aff_path)?;
    let (labels, stats) = ws::zwatershed(&aff, &params)?;
    save(&labels, &out_path)?;
    writeln!(out, "segments,background_voxels\n{},{}", stats.sizes.len(), stats.background)?;
    Ok(())
}

pub fn size_filter(o: SizeFilterOpts, out: &mut dyn Write) -> CmdResult {
    let labels_path = required(o.labels, "labels")?;
    let aff_path = required(o.aff, "aff")?;
    let out_path = required(o.out, "out")?;
    let size_min = o.size_min.unwrap_or(WatershedParams::default().size_min);
    let t_merge = o.t_merge.unwrap_or(WatershedParams::default().t_merge);
    unit_interval(f64::from(t_merge), "t-merge")?;
    keep_inputs(&[&labels_path, &aff_path], &[&out_path])?;
    let labels = load_labels(&labels_path)?;
    let aff = load_affinities(&aff_path)?;
    let filtered = ws::size_filter(&labels, &aff, size_min, t_merge)?;
    save(&filtered, &out_path)?;
    writeln!(out, "segments\n{}", filtered.count_segments())?;
    Ok(())
}

pub fn build_rag(o: BuildRagOpts, out: &mut dyn Write) -> CmdResult {
    let labels_path = required(o.labels, "labels")?;
    let aff_path = required(o.aff, "aff")?;
    let outputs: Vec<&Path> = o.out.iter().map(PathBuf::as_path).collect();
    keep_inputs(&[&labels_path, &aff_path], &outputs)?;
    let rag = Rag::build(&load_labels(&labels_path)?, &load_affinities(&aff_path)?)?;
    let mut csv = String::from("a,b,boundary_edges,mean_affinity,size_a,size_b\n");
    for (a, b) in rag.edge_keys() {
        let acc = rag.edge(a, b).ok_or(agglo::AggloError::MissingEdge(a, b))?;
        let size = |l| rag.node(l).map_or(0, |n| n.size);
        csv.push_str(&format!("{a},{b},{},{},{},{}\n", acc.count(), acc.mean(), size(a), size(b)));
    }
    match &o.out {
        Some(path) => save_text(&csv, path)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

pub fn train(o: TrainOpts, out: &mut dyn Write) -> CmdResult {
    let labels_path = required(o.labels, "labels")?;
    let aff_path = required(o.aff, "aff")?;
    let gt_path = required(o.gt, "gt")?;
    let model_out = required(o.model_out, "model-out")?;
    keep_inputs(&[&labels_path, &aff_path, &gt_path], &[&model_out])?;
    let seg = load_labels(&labels_path)?;
    let gt = load_labels(&gt_path)?;
    let rag = Rag::build(&seg, &load_affinities(&aff_path)?)?;
    let outcome = agglo::train_scorer(&rag, &seg, &gt)?;
    outcome
        .model
        .write(&model_out)
        .with_context(|| format!("writing {}", model_out.display()))?;
    let positives = outcome.targets.iter().filter(|&&t| t).count();
    writeln!(
        out,
        "examples,positives,rounds,accuracy\n{},{},{},{:.6}",
        outcome.targets.len(),
        positives,
        outcome.rounds,
        outcome.accuracy()
    )?;
    Ok(())
}

pub fn agglomerate(o: AgglomerateOpts, out: &mut dyn Write) -> CmdResult {
    let theta = theta(o.theta)?;
    let labels_path = required(o.labels, "labels")?;
    let aff_path = required(o.aff, "aff")?;
    let out_path = required(o.out, "out")?;
    let scorer = scorer(o.scorer, o.model.as_deref())?;
    let mut outputs = vec![out_path.as_path()];
    outputs.extend(o.tree.as_deref());
    keep_inputs(&[&labels_path, &aff_path], &outputs)?;
    let labels = load_labels(&labels_path)?;
    let (merged, tree) = agglo::agglomerate(&labels, &load_affinities(&aff_path)?, &scorer, theta)?;
    save(&merged, &out_path)?;
    if let Some(path) = &o.tree {
        save_text(&tree.to_text(), path)?;
    }
    writeln!(
        out,
        "segments_before,segments_after,merges\n{},{},{}",
        labels.count_segments(),
        merged.count_segments(),
        tree.merges.len()
    )?;
    Ok(())
}

pub fn apply_threshold(o: ApplyThresholdOpts, out: &mut dyn Write) -> CmdResult {
    let theta = theta(o.theta)?;
    let tree_path = required(o.tree, "tree")?;
    let labels_path = required(o.labels, "labels")?;
    let out_path = required(o.out, "out")?;
    keep_inputs(&[&tree_path, &labels_path], &[&out_path])?;
    let tree = MergeTree::read(&tree_path).with_context(|| format!("reading tree {}", tree_path.display()))?;
    let seg = agglo::apply_threshold(&tree, &load_labels(&labels_path)?, theta)?;
    save(&seg, &out_path)?;
    writeln!(out, "segments\n{}", seg.count_segments())?;
    Ok(())
}

pub fn eval(o: EvalOpts, out: &mut dyn Write) -> CmdResult {
    let seg = load_labels(&required(o.seg, "seg")?)?;
    let gt = load_labels(&required(o.gt, "gt")?)?;
    writeln!(out, "{}", vi_line(&metrics::split_vi(&seg, &gt)?))?;
    Ok(())
}

pub fn curve(o: CurveOpts, out: &mut dyn Write) -> CmdResult {
    let steps = o.steps.unwrap_or(21);
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let tree_path = required(o.tree, "tree")?;
    let labels_path = required(o.labels, "labels")?;
    let gt_path = required(o.gt, "gt")?;
    let outputs: Vec<&Path> = o.out.iter().map(PathBuf::as_path).collect();
    keep_inputs(&[&tree_path, &labels_path, &gt_path], &outputs)?;
    let tree = MergeTree::read(&tree_path).with_context(|| format!("reading tree {}", tree_path.display()))?;
    let curve = metrics::vi_curve(&tree, &load_labels(&labels_path)?, &load_labels(&gt_path)?, &threshold_grid(steps))?;
    match &o.out {
        Some(path) => save_text(&curve.to_csv(), path)?,
        None => out.write_all(curve.to_csv().as_bytes())?,
    }
    Ok(())
}

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn partition(o: PartitionOpts, out: &mut dyn Write) -> CmdResult {
    let block = parse_dims(&required(o.block, "block")?, "block")?;
    let halo = parse_dims(&required(o.halo, "halo")?, "halo")?;
    let out_dir = required(o.out_dir, "out-dir")?;
    let aff = o.aff.as_deref().map(load_affinities).transpose()?;
    let shape = match (&o.shape, &aff) {
        (Some(s), _) => Shape3::from_dims(parse_dims(s, "shape")?).map_err(|e| usage(e.to_string()))?,
        (None, Some(a)) => a.shape(),
        (None, None) => return Err(usage("partition needs --shape or --aff")),
    };
    if let Some(a) = &aff {
        if a.shape() != shape {
            return Err(usage(format!("--shape {shape} disagrees with affinities of shape {}", a.shape())));
        }
    }
    let specs = blocks::partition_blocks(shape, block, halo).map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut entries = Vec::with_capacity(specs.len());
    for (i, spec) in specs.into_iter().enumerate() {
        if let Some(a) = &aff {
            let crop = a.crop(spec.halo_lo(), spec.halo_hi())?;
            save(&crop, &out_dir.join(format!("block_{i:04}.aff.volb")))?;
        }
        entries.push(ManifestEntry {
            spec,
            path: PathBuf::from(format!("block_{i:04}.labels.volb")),
        });
    }
    save_text(&blocks::manifest_to_text(&entries), &out_dir.join(MANIFEST_NAME))?;
    writeln!(out, "blocks\n{}", entries.len())?;
    Ok(())
}

pub fn stitch(o: StitchOpts, out: &mut dyn Write) -> CmdResult {
    let d = StitchParams::default();
    let params = StitchParams {
        min_ratio: o.min_ratio.unwrap_or(d.min_ratio),
        min_voxels: o.min_voxels.unwrap_or(d.min_voxels),
    };
    params.validate().map_err(|e| usage(e.to_string()))?;
    let manifest = required(o.manifest, "manifest")?;
    let out_path = required(o.out, "out")?;
    let text = fs::read_to_string(&manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = blocks::parse_manifest(&text, base)?;
    let mut inputs: Vec<&Path> = entries.iter().map(|e| e.path.as_path()).collect();
    inputs.push(&manifest);
    keep_inputs(&inputs, &[&out_path])?;
    let labelings = entries
        .iter()
        .map(|e| load_labels(&e.path))
        .collect::<Result<Vec<_>, _>>()?;
    let specs: Vec<_> = entries.into_iter().map(|e| e.spec).collect();
    let global = blocks::stitch(&specs, &labelings, &params)?;
    save(&global, &out_path)?;
    writeln!(out, "segments\n{}", global.count_segments())?;
    Ok(())
}

pub fn pipeline(o: PipelineOpts, out: &mut dyn Write) -> CmdResult {
    let params = watershed_params(o.t_high, o.t_low, o.size_min, o.t_merge)?;
    let theta = theta(o.theta)?;
    let aff_path = required(o.aff, "aff")?;
    let out_dir = required(o.out_dir, "out-dir")?;
    let scorer = scorer(o.scorer, o.model.as_deref())?;
    let aff = load_affinities(&aff_path)?;
    let gt = o.gt.as_deref().map(load_labels).transpose()?;
    if let Some(g) = &gt {
        if g.shape() != aff.shape() {
            return Err(usage(format!("ground truth {} does not match affinities {}", g.shape(), aff.shape())));
        }
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let ws_path = out_dir.join("watershed.volb");
    let seg_path = out_dir.join("segmentation.volb");
    let tree_path = out_dir.join("tree.txt");
    let mut inputs = vec![aff_path.as_path()];
    inputs.extend(o.gt.as_deref());
    keep_inputs(&inputs, &[&ws_path, &seg_path, &tree_path])?;

    let (base, _) = ws::zwatershed(&aff, &params)?;
    save(&base, &ws_path)?;
    let (seg, tree) = agglo::agglomerate(&base, &aff, &scorer, theta)?;
    save(&seg, &seg_path)?;
    save_text(&tree.to_text(), &tree_path)?;
    match &gt {
        Some(gt) => {
            let before = metrics::split_vi(&base, gt)?;
            let after = metrics::split_vi(&seg, gt)?;
            let report = format!(
                "stage,segments,vi_under,vi_over\nwatershed,{},{}\nagglomerated,{},{}\n",
                base.count_segments(),
                vi_line(&before),
                seg.count_segments(),
                vi_line(&after)
            );
            save_text(&report, &out_dir.join("eval.csv"))?;
            writeln!(out, "{}", vi_line(&after))?;
        }
        None => writeln!(out, "segments\n{}", seg.count_segments())?,
    }
    Ok(())
}
