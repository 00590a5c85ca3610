//! One function per subcommand. Each reads its stage inputs from the
//! configured paths and writes its outputs under `paths.output_dir`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tad_core::augment::augment_samples;
use tad_core::ingest::{
    annotations_to_json, classification_to_json, load_annotations, load_classification, write_features,
    ClassificationScores, FeatureSequence,
};
use tad_core::metrics::{average_map, evaluate_proposals, VideoProposals};
use tad_core::postproc::{
    ensemble, ensemble_maps, fuse_classification, soft_nms, validate_submission, Submission, VideoDetections,
};
use tad_core::propgen::{decode_proposals, forward_head, oracle_confidence_maps, ConfidenceMaps, HeadWeights};
use tad_core::relation::{proposal_features, rescore_proposals, train_relation, RelationSample, RelationWeights};
use tad_core::synth::{self, tiou_targets};
use tad_core::GroundTruthDB;

use crate::config::{EnsembleMode, PipelineConfig};
use crate::failure::Failure;
use crate::files::{by_id, ensure_dir, load_feature_dir, read_json, read_proposals, write_json, write_text};

pub struct Context {
    pub cfg: PipelineConfig,
    /// Decode proposals from annotation-derived maps instead of the learned head.
    pub oracle: bool,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn features(&self) -> Result<Vec<FeatureSequence>, Failure> {
        load_feature_dir(&self.cfg.paths.features_dir, Some(self.cfg.propgen.t))
    }

    fn ground_truth(&self) -> Result<GroundTruthDB, Failure> {
        Ok(load_annotations(&self.cfg.paths.annotations)?)
    }

    fn head(&self, path: &Path) -> Result<HeadWeights, Failure> {
        let head = HeadWeights::load(path)?;
        let p = &self.cfg.propgen;
        if head.t != p.t || head.d_max != p.d_max {
            return Err(Failure::Invalid(format!(
                "{} was built for t={}, d_max={} but the configuration has t={}, d_max={}",
                path.display(),
                head.t,
                head.d_max,
                p.t,
                p.d_max
            )));
        }
        Ok(head)
    }
}

fn par_map<T: Sync, K: Ord + Send, V: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<(K, V), Failure> + Sync + Send,
) -> Result<BTreeMap<K, V>, Failure> {
    items
        .par_iter()
        .map(f)
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().collect())
}

fn count<V>(map: &BTreeMap<String, Vec<V>>) -> usize {
    map.values().map(Vec::len).sum()
}

fn missing(what: &str, vid: &str) -> Failure {
    Failure::Invalid(format!("no {what} for video `{vid}`"))
}

pub fn synth(ctx: &Context) -> Result<(), Failure> {
    let paths = &ctx.cfg.paths;
    let ds = synth::generate(&ctx.cfg.synth, ctx.cfg.seed);
    ensure_dir(&paths.features_dir)?;
    for seq in &ds.features {
        write_features(paths.features_dir.join(format!("{}.bin", seq.video_id)), seq)?;
    }
    write_json(&paths.annotations, &annotations_to_json(&ds.gt))?;
    write_json(&paths.classification, &classification_to_json(&ds.classification))?;
    println!(
        "wrote {} videos ({} instances) to {}",
        ds.features.len(),
        ds.gt.instance_count(),
        paths.features_dir.display()
    );
    Ok(())
}

pub fn augment(ctx: &Context) -> Result<(), Failure> {
    let seqs = load_feature_dir(&ctx.cfg.paths.features_dir, None)?;
    let out = augment_samples(&seqs, &ctx.cfg.shift(), ctx.cfg.augment.mode)?;
    let dir = ctx.out("features_augmented");
    ensure_dir(&dir)?;
    for seq in &out {
        write_features(dir.join(format!("{}.bin", seq.video_id)), seq)?;
    }
    println!("wrote {} feature sequences to {}", out.len(), dir.display());
    Ok(())
}

pub fn propose(ctx: &Context) -> Result<(), Failure> {
    let (t, d_max, decode) = (ctx.cfg.propgen.t, ctx.cfg.propgen.d_max, ctx.cfg.decode());
    let proposals: VideoProposals = if ctx.oracle {
        let gt = ctx.ground_truth()?;
        let videos: Vec<_> = gt.videos.keys().cloned().collect();
        par_map(&videos, |vid| {
            let maps = oracle_confidence_maps(&gt.segments(vid), t, d_max);
            Ok((vid.clone(), decode_proposals(&maps, &decode)))
        })?
    } else {
        let head = ctx.head(&ctx.cfg.paths.head_weights)?;
        let seqs = ctx.features()?;
        par_map(&seqs, |seq| {
            let maps = forward_head(seq, &head)?;
            Ok((seq.video_id.clone(), decode_proposals(&maps, &decode)))
        })?
    };
    let path = ctx.out("proposals.json");
    write_json(&path, &proposals)?;
    println!(
        "wrote {} proposals for {} videos to {}",
        count(&proposals),
        proposals.len(),
        path.display()
    );
    Ok(())
}

pub fn relate(ctx: &Context) -> Result<(), Failure> {
    let proposals = read_proposals(&ctx.cfg.paths.proposals)?;
    let weights = RelationWeights::load(&ctx.cfg.paths.relation_weights)?;
    let pool = ctx.cfg.pool();
    if pool.dim() != weights.d_in() {
        return Err(Failure::Invalid(format!(
            "relation weights expect {} input features but relation.bins={} pools {}",
            weights.d_in(),
            ctx.cfg.relation.bins,
            pool.dim()
        )));
    }
    let seqs = ctx.features()?;
    let seqs = by_id(&seqs);
    let videos: Vec<_> = proposals.iter().collect();
    let rescored: VideoProposals = par_map(&videos, |(vid, props)| {
        let seq = seqs.get(vid.as_str()).ok_or_else(|| missing("features", vid))?;
        let out = rescore_proposals(props, seq, &weights, &pool, ctx.cfg.relation.combine_mode)?;
        Ok(((*vid).clone(), out))
    })?;
    let path = ctx.out("proposals_rescored.json");
    write_json(&path, &rescored)?;
    println!(
        "rescored {} proposals for {} videos into {}",
        count(&rescored),
        rescored.len(),
        path.display()
    );
    Ok(())
}

pub fn train_relation_cmd(ctx: &Context) -> Result<(), Failure> {
    let proposals = read_proposals(&ctx.cfg.paths.proposals)?;
    let gt = ctx.ground_truth()?;
    let seqs = ctx.features()?;
    let pool = ctx.cfg.pool();
    let mut samples = Vec::new();
    for seq in &seqs {
        let Some(props) = proposals.get(&seq.video_id).filter(|p| !p.is_empty()) else {
            continue;
        };
        if !gt.videos.contains_key(&seq.video_id) {
            continue;
        }
        samples.push(RelationSample {
            x: proposal_features(seq, props, &pool),
            target: tiou_targets(props, &gt.segments(&seq.video_id)),
        });
    }
    if samples.is_empty() {
        return Err(Failure::Invalid(
            "no video has features, annotations and proposals".into(),
        ));
    }
    let outcome = train_relation(&samples, &ctx.cfg.train())?;
    let weights_path = ctx.out("relation.json");
    ensure_dir(&ctx.cfg.paths.output_dir)?;
    outcome.weights.save(&weights_path)?;
    let mut csv = String::from("epoch,mse\n");
    for (epoch, mse) in outcome.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{epoch},{mse}\n"));
    }
    write_text(&ctx.out("loss.csv"), &csv)?;
    let trace = &outcome.loss_trace;
    println!(
        "trained on {} videos for {} epochs: mse {:.6} -> {:.6}; weights in {}",
        samples.len(),
        trace.len() - 1,
        trace[0],
        trace[trace.len() - 1],
        weights_path.display()
    );
    Ok(())
}

pub fn detect(ctx: &Context) -> Result<(), Failure> {
    let proposals = read_proposals(&ctx.cfg.paths.proposals)?;
    let cls: BTreeMap<String, ClassificationScores> = load_classification(&ctx.cfg.paths.classification)?;
    let gt = ctx.ground_truth()?;
    let nms = ctx.cfg.nms();
    let videos: Vec<_> = proposals.iter().collect();
    let dets: VideoDetections = par_map(&videos, |(vid, props)| {
        let scores = cls
            .get(vid.as_str())
            .ok_or_else(|| missing("classification scores", vid))?;
        let kept = soft_nms(props, &nms);
        Ok((
            (*vid).clone(),
            fuse_classification(&kept, scores, ctx.cfg.postproc.top_k_classes)?,
        ))
    })?;
    let path = ctx.out("detections.json");
    write_json(&path, &Submission::from_detections(&dets, &gt)?)?;
    println!(
        "wrote {} detections for {} videos to {}",
        count(&dets),
        dets.len(),
        path.display()
    );
    Ok(())
}

fn ensemble_weights(ctx: &Context) -> Result<Vec<f64>, Failure> {
    let pp = &ctx.cfg.postproc;
    if pp.ensemble_inputs.is_empty() {
        return Err(Failure::Config("postproc.ensemble_inputs is empty".into()));
    }
    if pp.ensemble_weights.is_empty() {
        return Ok(vec![1.0; pp.ensemble_inputs.len()]);
    }
    if pp.ensemble_weights.len() != pp.ensemble_inputs.len() {
        return Err(Failure::Config(format!(
            "{} ensemble inputs but {} ensemble weights",
            pp.ensemble_inputs.len(),
            pp.ensemble_weights.len()
        )));
    }
    Ok(pp.ensemble_weights.clone())
}

pub fn ensemble_cmd(ctx: &Context) -> Result<(), Failure> {
    let weights = ensemble_weights(ctx)?;
    let inputs = &ctx.cfg.postproc.ensemble_inputs;
    match ctx.cfg.postproc.ensemble_mode {
        EnsembleMode::Detections => {
            let gt = ctx.ground_truth()?;
            let runs = inputs
                .iter()
                .map(|p| Ok(validate_submission(&read_json(p)?)?.to_detections(&gt)?))
                .collect::<Result<Vec<_>, Failure>>()?;
            let merged = ensemble(&runs, &weights, &ctx.cfg.nms())?;
            let path = ctx.out("detections_ensemble.json");
            write_json(&path, &Submission::from_detections(&merged, &gt)?)?;
            println!(
                "merged {} runs into {} detections in {}",
                runs.len(),
                count(&merged),
                path.display()
            );
        }
        EnsembleMode::Maps => {
            let heads = inputs.iter().map(|p| ctx.head(p)).collect::<Result<Vec<_>, _>>()?;
            let seqs = ctx.features()?;
            let decode = ctx.cfg.decode();
            let proposals: VideoProposals = par_map(&seqs, |seq| {
                let maps = heads
                    .iter()
                    .map(|h| forward_head(seq, h))
                    .collect::<Result<Vec<ConfidenceMaps>, _>>()?;
                let merged = ensemble_maps(&maps, &weights)?;
                Ok((seq.video_id.clone(), decode_proposals(&merged, &decode)))
            })?;
            let path = ctx.out("proposals_ensemble.json");
            write_json(&path, &proposals)?;
            println!(
                "decoded {} proposals from {} heads into {}",
                count(&proposals),
                heads.len(),
                path.display()
            );
        }
    }
    Ok(())
}

pub fn eval_proposals(ctx: &Context) -> Result<(), Failure> {
    let proposals = read_proposals(&ctx.cfg.paths.proposals)?;
    let gt = ctx.ground_truth()?;
    let report = evaluate_proposals(&proposals, &gt, &ctx.cfg.eval())?;
    write_json(&ctx.out("proposal_eval.json"), &report.to_json())?;
    write_text(&ctx.out("ar_an.csv"), &report.curve_csv())?;
    println!("{:<8} {:>8}", "metric", "value");
    for (an, v) in &report.ar_at {
        println!("{:<8} {v:>8.4}", format!("AR@{an}"));
    }
    println!("{:<8} {:>8.4}", "AUC", report.auc);
    Ok(())
}

pub fn eval_detections(ctx: &Context) -> Result<(), Failure> {
    let gt = ctx.ground_truth()?;
    let sub = validate_submission(&read_json(&ctx.cfg.paths.detections)?)?;
    let report = average_map(&sub.to_detections(&gt)?, &gt, &ctx.cfg.eval())?;
    write_json(&ctx.out("detection_eval.json"), &report.to_json())?;
    println!("{:<6} {:>8}", "tIoU", "mAP");
    for (tau, m) in &report.per_threshold {
        println!("{tau:<6.2} {m:>8.4}");
    }
    println!("average mAP {:.4}", report.average_map);
    Ok(())
}
