use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use mpvqa::eval::{
    align, annotator_kappa, hashed_prompt_embedding, metrics_report, routing_heatmap, template_prompts,
    PredictionRecord,
};
use mpvqa::fixtures::{block_atlas, synthetic_label_names, synthetic_studies, stub_descriptors};
use mpvqa::moe::{
    gradcheck, high_route, load_checkpoint, save_checkpoint, smooth, train_toy, evaluate, Model, ModalityTokens,
    MoeConfig, Sample, TaskTargets, ToyFixture, TrainConfig, OOS_CLASSES, REGION_OUTPUTS, SHAPE_CLASSES,
    SPREAD_CLASSES, VOLUME_CLASSES,
};
use mpvqa::qagen::{
    compute_descriptors, generate_records, predicted_unspecified, split_dataset, stats as frequency_table,
    DatasetRecord, LabelConfig, Split, Task, TaskDescriptors, TemplateBank,
};
use mpvqa::regions::{format_region_map, Atlas};
use mpvqa::shape::marching_cubes;
use mpvqa::volume::write_nifti;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{self, StudyFiles};
use crate::exit::{data as data_error, numeric, require, usage};
use crate::output::{jsonl, pretty_json, read_jsonl, sidecar, Run, SCHEMA_VERSION};
use crate::{
    DescribeArgs, EvalArgs, FixtureArgs, GenerateArgs, HeatmapArgs, MoeCheckArgs, MoeDemoArgs, MoeShape, SplitArgs,
    StatsArgs, VolumeInputs,
};

pub fn fixture(a: &FixtureArgs) -> Result<u8> {
    let mut run = Run::start("fixture", Some(a.seed), a)?;
    let studies = synthetic_studies(a.studies, a.seed);
    for s in &studies {
        let dir = a.out.join(&s.study_id);
        run.write(&dir.join(format!("{}_seg.nii", s.study_id)), &write_nifti(&s.labels)?)?;
        run.write(&dir.join(format!("{}_t1.nii", s.study_id)), &write_nifti(&s.brain)?)?;
    }
    let atlas = block_atlas(mpvqa::fixtures::STUDY_DIMS, [1.0; 3]);
    run.write(&a.out.join("atlas.nii"), &write_nifti(&atlas.labels)?)?;
    run.write(&a.out.join("region_map.txt"), format_region_map(&atlas.region_map).as_bytes())?;
    let labels: String = synthetic_label_names()
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    run.write(&a.out.join("labels.txt"), labels.as_bytes())?;
    run.finish(&a.out.join("fixture.manifest.json"))?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize)]
struct Failure {
    study_id: String,
    error: String,
}

#[derive(Debug, Serialize)]
struct FailureReport {
    schema_version: u32,
    failures: Vec<Failure>,
}

/// Resolved volume inputs, validated before any study is read.
struct Prepared {
    studies: Vec<Result<StudyFiles, (String, String)>>,
    config: LabelConfig,
    atlas: Atlas,
    spacing: [f64; 3],
}

fn prepare(inputs: &VolumeInputs) -> Result<Prepared> {
    let need = |p: &Option<std::path::PathBuf>, flag: &str| {
        p.clone().ok_or_else(|| usage(format!("--{flag} is required")))
    };
    let data_dir = need(&inputs.data_dir, "data-dir (or MPVQA_DATA_DIR)")?;
    let labels = need(&inputs.labels_config, "labels-config")?;
    let atlas = need(&inputs.atlas, "atlas")?;
    let region_map = need(&inputs.region_map, "region-map")?;
    for (p, what) in [(&data_dir, "data directory"), (&labels, "labels config"), (&atlas, "atlas"), (&region_map, "region map")] {
        require(p, what)?;
    }
    let spacing = data::parse_spacing(&inputs.spacing)?;
    let config = data::load_labels_config(&labels, inputs.min_overlap)?;
    let atlas = data::load_atlas(&atlas, &region_map, spacing)?;
    let studies = data::discover(&data_dir)?;
    Ok(Prepared {
        studies,
        config,
        atlas,
        spacing,
    })
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

struct Described {
    descriptors: Vec<TaskDescriptors>,
    meshes: Vec<(String, Vec<u8>)>,
}

fn describe_study(files: &StudyFiles, p: &Prepared, meshes: bool) -> Result<Described> {
    let study = data::load_study(files, &p.config, p.spacing)?;
    let descriptors = compute_descriptors(&study, &p.atlas, &p.config)?;
    let mut out = Vec::new();
    if meshes {
        for (value, name) in &p.config.labels {
            let voxels = study.labels.binary(*value).voxels();
            if voxels.is_empty() {
                continue;
            }
            let mesh = marching_cubes(&voxels, p.spacing)?;
            let mut bytes = Vec::new();
            mesh.write_off(&mut bytes)?;
            out.push((format!("{}/{}.off", study.study_id, slug(name)), bytes));
        }
    }
    Ok(Described {
        descriptors,
        meshes: out,
    })
}

/// Describes every study in parallel; results come back in study order.
fn describe_all(p: &Prepared, meshes: bool) -> (Vec<Described>, Vec<Failure>) {
    let results: Vec<Result<Described, Failure>> = p
        .studies
        .par_iter()
        .map(|entry| match entry {
            Ok(files) => describe_study(files, p, meshes).map_err(|e| Failure {
                study_id: files.study_id.clone(),
                error: format!("{e:#}"),
            }),
            Err((study_id, error)) => Err(Failure {
                study_id: study_id.clone(),
                error: error.clone(),
            }),
        })
        .collect();
    let mut done = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(d) => done.push(d),
            Err(f) => failures.push(f),
        }
    }
    (done, failures)
}

fn report_failures(failures: &[Failure]) {
    for f in failures {
        eprintln!("failed: {}: {}", f.study_id, f.error);
    }
}

pub fn describe(a: &DescribeArgs) -> Result<u8> {
    let mut run = Run::start("describe", None, a)?;
    let prepared = prepare(&a.inputs)?;
    let (done, failures) = describe_all(&prepared, a.mesh_out.is_some());
    let descriptors: Vec<&TaskDescriptors> = done.iter().flat_map(|d| &d.descriptors).collect();
    run.write(&a.out, &jsonl(&descriptors)?)?;
    if let Some(dir) = &a.mesh_out {
        for (rel, bytes) in done.iter().flat_map(|d| &d.meshes) {
            run.write(&dir.join(rel), bytes)?;
        }
    }
    let failure_path = a.failures.clone().unwrap_or_else(|| sidecar(&a.out, "failures.json"));
    run.write(
        &failure_path,
        &pretty_json(&FailureReport {
            schema_version: SCHEMA_VERSION,
            failures: failures.clone(),
        })?,
    )?;
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    report_failures(&failures);
    Ok(if failures.is_empty() { 0 } else { 3 })
}

fn load_bank(path: &Option<std::path::PathBuf>) -> Result<TemplateBank> {
    match path {
        Some(p) => {
            require(p, "template bank")?;
            Ok(TemplateBank::load(p)?)
        }
        None => Ok(TemplateBank::canonical()),
    }
}

fn split_names(list: &str) -> Vec<String> {
    list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

pub fn generate(a: &GenerateArgs) -> Result<u8> {
    let mut run = Run::start("generate", Some(a.seed), a)?;
    let bank = load_bank(&a.bank)?;
    let mut failures = Vec::new();
    let descriptors: Vec<TaskDescriptors> = if let Some(path) = &a.descriptors {
        require(path, "descriptor file")?;
        read_jsonl(path)?
    } else if let Some(n) = a.stub_studies {
        let labels = split_names(&a.stub_labels);
        if labels.is_empty() {
            return Err(usage("--stub-labels names no labels"));
        }
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        stub_descriptors(n, &refs, a.seed)
    } else {
        let prepared = prepare(&a.inputs)?;
        let (done, f) = describe_all(&prepared, false);
        failures = f;
        done.into_iter().flat_map(|d| d.descriptors).collect()
    };
    if descriptors.is_empty() {
        return Err(data_error("no descriptors to generate from"));
    }
    let splits = if a.no_split {
        None
    } else {
        let mut ids: Vec<String> = descriptors.iter().map(|d| d.study_id.clone()).collect();
        ids.dedup();
        Some(split_dataset(&ids, a.seed))
    };
    let records = generate_records(&descriptors, &bank, a.seed, splits.as_ref())?;
    run.write(&a.out, &jsonl(&records)?)?;
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    eprintln!("records: {}", records.len());
    report_failures(&failures);
    Ok(if failures.is_empty() { 0 } else { 3 })
}

#[derive(Serialize)]
struct StatsSummary {
    schema_version: u32,
    questions: usize,
    studies: usize,
    unique_questions: usize,
    unique_answers: usize,
    unspecified: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicted_unspecified: Option<BTreeMap<String, f64>>,
}

pub fn stats(a: &StatsArgs) -> Result<u8> {
    let mut run = Run::start("stats", Some(a.seed), a)?;
    require(&a.input, "record file")?;
    let records: Vec<DatasetRecord> = read_jsonl(&a.input)?;
    let table = frequency_table(&records);
    let unspecified = Task::ALL
        .iter()
        .map(|t| {
            let freq = table
                .rows
                .iter()
                .find(|r| r.task.eq_ignore_ascii_case(t.as_str()) && r.label == mpvqa::qagen::UNSPECIFIED)
                .map_or(0.0, |r| r.frequency);
            (t.as_str().to_string(), freq)
        })
        .collect();
    let predicted = if a.predict_trials > 0 {
        let bank = load_bank(&a.bank)?;
        let p = predicted_unspecified(&bank, a.predict_trials, a.seed)?;
        Some(
            Task::ALL
                .iter()
                .zip(p)
                .map(|(t, v)| (t.as_str().to_string(), 100.0 * v))
                .collect(),
        )
    } else {
        None
    };
    let summary = StatsSummary {
        schema_version: SCHEMA_VERSION,
        questions: table.questions,
        studies: table.studies,
        unique_questions: table.unique_questions,
        unique_answers: table.unique_answers,
        unspecified,
        predicted_unspecified: predicted,
    };
    run.write(&a.out, table.to_csv().as_bytes())?;
    let summary_bytes = pretty_json(&summary)?;
    run.write(&sidecar(&a.out, "summary.json"), &summary_bytes)?;
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    print!("{}", String::from_utf8_lossy(&summary_bytes));
    Ok(0)
}

pub fn split(a: &SplitArgs) -> Result<u8> {
    let mut run = Run::start("split", Some(a.seed), a)?;
    require(&a.input, "record file")?;
    let mut records: Vec<DatasetRecord> = read_jsonl(&a.input)?;
    let ids: Vec<String> = records.iter().map(|r| r.study_id.clone()).collect();
    let map = split_dataset(&ids, a.seed);
    for r in &mut records {
        r.split = map.get(&r.study_id).copied();
    }
    for (split, name) in [(Split::Train, "train"), (Split::Val, "val"), (Split::Test, "test")] {
        let part: Vec<&DatasetRecord> = records.iter().filter(|r| r.split == Some(split)).collect();
        run.write(&a.out_dir.join(format!("{name}.jsonl")), &jsonl(&part)?)?;
        eprintln!("{name}: {} records", part.len());
    }
    run.finish(&a.out_dir.join("split.manifest.json"))?;
    Ok(0)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let mut run = Run::start("eval", Some(a.seed), a)?;
    require(&a.gold, "gold file")?;
    require(&a.pred, "prediction file")?;
    if let Some(k) = &a.kappa {
        require(k, "second prediction file")?;
    }
    if a.resamples == 0 {
        return Err(usage("--resamples must be positive"));
    }
    let gold: Vec<DatasetRecord> = read_jsonl(&a.gold)?;
    let pred: Vec<PredictionRecord> = read_jsonl(&a.pred)?;
    let items = align(&gold, &pred)?;
    let mut report = metrics_report(&items, a.resamples, a.seed);
    if let Some(path) = &a.kappa {
        let other: Vec<PredictionRecord> = read_jsonl(path)?;
        let other_items = align(&gold, &other)?;
        report.kappa = annotator_kappa(&items, &other_items)?;
    }
    let bytes = pretty_json(&report)?;
    run.write(&a.out, &bytes)?;
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    for t in &report.tasks {
        match (t.accuracy, t.bootstrap_std) {
            (Some(acc), Some(std)) => eprintln!("{:<13} {acc:6.2} ± {std:.2}  (n={})", t.task.as_str(), t.included),
            _ => eprintln!("{:<13}    n/a  (n=0)", t.task.as_str()),
        }
    }
    Ok(0)
}

fn moe_config(s: &MoeShape) -> MoeConfig {
    MoeConfig {
        n_experts: s.experts,
        n_modalities: s.modalities,
        d_i: s.d_i,
        d_t: s.d_t,
        ..MoeConfig::default()
    }
}

/// A random sample with every loss term active.
fn random_sample(config: &MoeConfig, n_i: usize, vocab: usize, rng: &mut impl Rng) -> Sample {
    let mut regions = [false; REGION_OUTPUTS];
    regions.iter_mut().for_each(|r| *r = rng.gen_bool(0.5));
    Sample {
        tokens: ModalityTokens::random(n_i, config.n_modalities, config.d_i, rng),
        prompt: (0..config.d_t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        targets: TaskTargets {
            next_token: Some(rng.gen_range(0..vocab)),
            volume: Some(rng.gen_range(0..VOLUME_CLASSES)),
            region: Some(regions),
            shape: Some(rng.gen_range(0..SHAPE_CLASSES)),
            spread: Some(rng.gen_range(0..SPREAD_CLASSES)),
            oos: Some(rng.gen_range(0..OOS_CLASSES)),
        },
    }
}

pub fn moe_check(a: &MoeCheckArgs) -> Result<u8> {
    let mut run = Run::start("moe-check", Some(a.seed), a)?;
    if a.tokens == 0 || a.vocab == 0 {
        return Err(usage("--tokens and --vocab must be positive"));
    }
    let config = moe_config(&a.shape);
    config.validate()?;
    let mut rng = mpvqa::rng::stream(a.seed, &["moe-check"]);
    let model = Model::init(&config, a.vocab, &mut rng)?;
    let sample = random_sample(&config, a.tokens, a.vocab, &mut rng);
    let report = gradcheck(&model, &sample, (a.per_group > 0).then_some(a.per_group))?;
    print!("{}", report.table());
    println!("max relative error: {:.3e} (tolerance {:.0e})", report.max_rel_error(), a.tol);
    if let Some(out) = &a.out {
        run.write(out, &pretty_json(&report)?)?;
        run.finish(&sidecar(out, "manifest.json"))?;
    }
    if report.passes(a.tol) {
        Ok(0)
    } else {
        Err(numeric(format!(
            "gradient check failed: max relative error {:.3e} ≥ {:.0e}",
            report.max_rel_error(),
            a.tol
        )))
    }
}

#[derive(Serialize)]
struct DemoSummary {
    schema_version: u32,
    steps: usize,
    final_loss: mpvqa::moe::LossBreakdown,
    train_accuracy: BTreeMap<String, f64>,
    test_accuracy: BTreeMap<String, f64>,
}

pub fn moe_demo(a: &MoeDemoArgs) -> Result<u8> {
    let mut run = Run::start("moe-demo", Some(a.seed), a)?;
    if a.smooth == 0 {
        return Err(usage("--smooth must be positive"));
    }
    let fixture = ToyFixture::standard(a.seed);
    let mut rng = mpvqa::rng::stream(a.seed, &["moe-demo", "init"]);
    let model = Model::init(&fixture.config, fixture.vocab, &mut rng)?;
    let train = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        target_loss: (a.target_loss > 0.0).then_some(a.target_loss),
    };
    let report = train_toy(&fixture.train, model, &train)?;
    let smoothed = smooth(&report.loss_curve, a.smooth);
    let mut csv = String::from("step,loss,smoothed\n");
    // A smoothed value belongs to the last step of its window.
    let lag = a.smooth - 1;
    for (k, l) in report.loss_curve.iter().enumerate() {
        match k.checked_sub(lag).and_then(|j| smoothed.get(j)) {
            Some(s) => csv += &format!("{k},{l:.10},{s:.10}\n"),
            None => csv += &format!("{k},{l:.10},\n"),
        }
    }
    run.write(&a.out, csv.as_bytes())?;
    let to_map = |acc: mpvqa::moe::Accuracy| -> BTreeMap<String, f64> {
        acc.tasks().iter().map(|(k, v)| (k.to_string(), *v)).collect()
    };
    let summary = DemoSummary {
        schema_version: SCHEMA_VERSION,
        steps: report.steps,
        final_loss: report.final_loss,
        train_accuracy: to_map(evaluate(&report.model, &fixture.train)?),
        test_accuracy: to_map(evaluate(&report.model, &fixture.test)?),
    };
    let bytes = pretty_json(&summary)?;
    run.write(&sidecar(&a.out, "summary.json"), &bytes)?;
    if let Some(path) = &a.checkpoint {
        save_checkpoint(&report.model, Some(a.seed), path)
            .with_context(|| format!("saving {}", path.display()))?;
    }
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(0)
}

pub fn heatmap(a: &HeatmapArgs) -> Result<u8> {
    let mut run = Run::start("heatmap", Some(a.seed), a)?;
    let bank = load_bank(&a.bank)?;
    let model = match &a.checkpoint {
        Some(path) => {
            require(path, "checkpoint")?;
            load_checkpoint(Path::new(path))?.0
        }
        None => {
            let config = moe_config(&a.shape);
            let mut rng = mpvqa::rng::stream(a.seed, &["heatmap", "init"]);
            Model::init(&config, 8, &mut rng)?
        }
    };
    let labels = split_names(&a.labels);
    if labels.is_empty() {
        return Err(usage("--labels names no labels"));
    }
    let prompts = template_prompts(&bank, &labels);
    let d_t = model.moe.d_t();
    let vectors: Vec<Vec<f64>> = prompts
        .iter()
        .map(|(_, text)| high_route(&hashed_prompt_embedding(text, d_t), &model.moe).to_vec())
        .collect();
    let names: Vec<String> = prompts.into_iter().map(|(l, _)| l).collect();
    let heatmap = routing_heatmap(&names, &vectors)?;
    if !heatmap.zero_variance.is_empty() {
        eprintln!("warning: {} prompts have constant routing weights", heatmap.zero_variance.len());
    }
    run.write(&a.out, heatmap.to_csv().as_bytes())?;
    run.finish(&sidecar(&a.out, "manifest.json"))?;
    Ok(0)
}
