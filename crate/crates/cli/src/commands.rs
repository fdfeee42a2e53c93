use std::path::Path;
use std::time::Instant;

use rand::Rng;
use stcnet::check::{gradient_suite, GRAD_TOLERANCE};
use stcnet::explain::{export_heatmap, grad_cam, FrameRef};
use stcnet::model::{build_model, BackboneConfig, Checkpoint, FusionVariant, PathKind};
use stcnet::nn::params::records_to_bytes;
use stcnet::nn::Mode;
use stcnet::tensor::{Tape, Tensor};
use stcnet::train::{clip_inputs, evaluate, fit, fmt_opt, run_ablation, METRICS_HEADER};
use stcnet::video::{synth_generate, ClipDataset, ResidualSpec, SampleMode, SamplerSpec, SyntheticSpec};

use crate::config::{load_clips, RunConfig};
use crate::{
    AblateArgs, BenchArgs, CliError, EvalArgs, GradcamArgs, GradcheckArgs, PreprocessArgs, SynthArgs, TrainArgs,
};

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::file(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::file(path, e))
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        n_clips: a.clips,
        frames_per_clip: a.frames,
        resolution: a.resolution,
        class_mix: a.class_mix,
        seed: a.seed,
    };
    let ds = synth_generate(&spec)?;
    ds.save(&a.out)?;
    println!(
        "wrote {} clips ({} smoke) of {}x{}x{} to {}",
        ds.len(),
        spec.n_positive(),
        a.frames,
        a.resolution,
        a.resolution,
        a.out.display()
    );
    Ok(())
}

/// Records `{source_id}/rgb` and `{source_id}/residual` (`[T, 3, H, W]`,
/// scaled to [0, 1]) and `{source_id}/label` per clip, centre-sampled.
pub fn preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let sampler = SamplerSpec { n_segments: a.segments };
    let residual = ResidualSpec {
        alpha: a.alpha,
        beta: a.beta,
    };
    residual.validate()?;
    let ds = ClipDataset::load(&a.input)?;
    let mut records = Vec::with_capacity(3 * ds.len());
    for clip in &ds.clips {
        let (rgb, res) = clip_inputs(clip, sampler, SampleMode::Center, &residual)?;
        let id = &clip.source_id;
        records.push((format!("{id}/rgb"), rgb));
        records.push((format!("{id}/residual"), res));
        records.push((format!("{id}/label"), Tensor::scalar(clip.label.index() as f64)));
    }
    write(&a.out, records_to_bytes(&records)?)?;
    println!(
        "wrote {} records for {} clips to {}",
        records.len(),
        ds.len(),
        a.out.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let train = cfg.train_set()?;
    let test = cfg.test_set()?;
    create_dir(&a.out)?;
    let model = build_model(&cfg.backbone, cfg.variant, cfg.sgd.seed)?;
    log::info!(
        "{} model, {} parameters, {} training clips",
        cfg.variant,
        model.param_count(),
        train.len()
    );
    let pre = cfg.preprocess();
    let state = fit(model, &train, test.as_ref(), &pre, &cfg.sgd)?;
    if state.rejected_steps > 0 {
        log::warn!("{} steps rejected for non-finite gradients", state.rejected_steps);
    }
    Checkpoint::write(&state.model, state.epoch, a.out.join("model.ckpt"))?;
    write(&a.out.join("train_log.csv"), state.log())?;
    if let Some(test) = &test {
        let ev = evaluate(&state.model, test, &pre)?;
        let csv = format!("{METRICS_HEADER}\n{}", ev.csv_rows(cfg.variant, cfg.sgd.seed));
        write(&a.out.join("metrics.csv"), &csv)?;
        println!("test F {}", fmt_opt(ev.pooled.fscore));
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    let model = ck.model;
    if model.config.n_frames != cfg.sampler.n_segments {
        return Err(CliError::invalid(
            a.checkpoint.display().to_string(),
            format!(
                "checkpoint takes {} frames but the config samples {}",
                model.config.n_frames, cfg.sampler.n_segments
            ),
        ));
    }
    let r = model.config.input_resolution;
    let ds = match (&a.data, &cfg.test_data) {
        (Some(p), _) | (None, Some(p)) => load_clips(p, r)?,
        (None, None) => {
            return Err(CliError::invalid(
                "data",
                "no --data given and the config has no test_data",
            ))
        }
    };
    let ev = evaluate(&model, &ds, &cfg.preprocess())?;
    let csv = format!("{METRICS_HEADER}\n{}", ev.csv_rows(model.variant, ck.header.seed));
    print!("{csv}");
    if let Some(out) = &a.out {
        write(out, &csv)?;
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&a.config)?;
    let variants = a
        .variants
        .iter()
        .map(|v| FusionVariant::parse(v))
        .collect::<stcnet::Result<Vec<_>>>()?;
    let train = cfg.train_set()?;
    let test = cfg
        .test_set()?
        .ok_or_else(|| CliError::invalid("test_data", "ablation needs a test set"))?;
    create_dir(&a.out)?;
    let report = run_ablation(
        &cfg.backbone,
        &train,
        &test,
        &variants,
        &a.seeds,
        &cfg.preprocess(),
        &cfg.sgd,
        Some(&a.out),
    )?;
    write(&a.out.join("metrics.csv"), report.metrics_csv())?;
    let summary = report.summary_csv();
    write(&a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(CliError::invalid("seeds", "must be positive"));
    }
    let start = Instant::now();
    let report = gradient_suite(a.seeds, !a.ops_only)?;
    println!("{:<28} {:>6} {:>12}  status", "op", "checks", "max_rel_err");
    for r in &report.rows {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<28} {:>6} {:>12.3e}  {status}", r.name, r.checks, r.max_rel_err);
    }
    if report.skipped > 0 {
        println!(
            "{} network coordinates skipped (kink inside every step)",
            report.skipped
        );
    }
    println!("tolerance {GRAD_TOLERANCE:e}, {:.1}s", start.elapsed().as_secs_f64());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

pub fn gradcam(a: GradcamArgs) -> Result<(), CliError> {
    let path = PathKind::parse(&a.path)?;
    let residual = ResidualSpec {
        alpha: a.alpha,
        beta: a.beta,
    };
    let model = Checkpoint::read(&a.checkpoint)?.model;
    let r = model.config.input_resolution;
    let ds = load_clips(&a.data, r)?;
    let clip = ds
        .clips
        .iter()
        .find(|c| c.source_id == a.clip)
        .or_else(|| a.clip.parse::<usize>().ok().and_then(|i| ds.clips.get(i)))
        .ok_or_else(|| CliError::invalid("clip", format!("no clip `{}` in {}", a.clip, a.data.display())))?;
    let sampler = SamplerSpec {
        n_segments: model.config.n_frames,
    };
    let (rgb, res) = clip_inputs(clip, sampler, SampleMode::Center, &residual)?;
    let cam = grad_cam(&model, &rgb, &res, a.class, path)?;
    create_dir(&a.out)?;
    let p = path.name();
    for h in cam.frames.iter().chain([&cam.aggregate]) {
        let stem = match h.frame {
            FrameRef::Frame(i) => format!("{p}_frame{i}"),
            FrameRef::Aggregate => format!("{p}_aggregate"),
        };
        export_heatmap(h, &a.out, &stem, r)?;
    }
    let (y, x) = cam.aggregate.argmax();
    println!(
        "{} heatmaps for {} (class {}); aggregate peak at cell ({y}, {x}) of {}x{}",
        cam.frames.len() + 1,
        clip.source_id,
        a.class,
        cam.aggregate.height,
        cam.aggregate.width
    );
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    if a.iters < 50 {
        return Err(CliError::invalid("iters", format!("{} < 50 timed iterations", a.iters)));
    }
    if a.batch == 0 {
        return Err(CliError::invalid("batch", "must be positive"));
    }
    let (config, variant) = match &a.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            (cfg.backbone, cfg.variant)
        }
        None => {
            let config = match a.preset.as_str() {
                "micro" => BackboneConfig::micro(),
                "full" => BackboneConfig::full(),
                other => return Err(CliError::invalid("preset", format!("`{other}` is not micro or full"))),
            };
            (config, FusionVariant::parse(&a.variant)?)
        }
    };
    let model = build_model(&config, variant, 0)?;
    let r = config.input_resolution;
    let dims = vec![a.batch * config.n_frames, 3, r, r];
    let mut rng = stcnet::rng::stream(0, &[0xbe]);
    let n: usize = dims.iter().product();
    let rgb = Tensor::new(dims.clone(), (0..n).map(|_| rng.random::<f64>()).collect())?;
    let res = Tensor::new(dims, (0..n).map(|_| rng.random::<f64>()).collect())?;
    let once = || {
        model
            .forward(&mut Tape::inference(), Mode::Eval, false, &rgb, &res)
            .map(|_| ())
    };
    for _ in 0..a.warmup {
        once()?;
    }
    let start = Instant::now();
    for _ in 0..a.iters {
        once()?;
    }
    let latency_ms = start.elapsed().as_secs_f64() * 1000.0 / a.iters as f64;
    let throughput = a.batch as f64 * 1000.0 / latency_ms;
    println!("variant,params,frames,resolution,batch,iters,latency_ms,throughput_clips_per_s");
    println!(
        "{variant},{},{},{r},{},{},{latency_ms:.3},{throughput:.3}",
        model.param_count(),
        config.n_frames,
        a.batch,
        a.iters
    );
    Ok(())
}
