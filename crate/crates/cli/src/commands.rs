use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dualx_core::degrade::degrade_clip;
use dualx_core::io::{read_dataset, write_clip};
use dualx_core::metrics::{clip_luma, evaluate, motion_amplitude};
use dualx_core::model::{load_checkpoint, save_checkpoint};
use dualx_core::profile::{profile, ProfileReport, REFERENCE_INPUT};
use dualx_core::synth::scene;
use dualx_core::tiling::{plan_tiles, tiled_forward, ModelUpscaler, Upscaler};
use dualx_core::train::run_stage;
use dualx_core::{ModelConfig, ModelWeights, VideoClip};
use serde_json::{json, Value};

use crate::config::{self, RunConfig};
use crate::provenance::{read_sidecar, record, write_json, write_sidecar};
use crate::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.globals.then(cli.command.globals());
    let cfg = config::load(g.config.as_deref(), &g.overrides, g.seed)?;
    let out = g.out;
    match cli.command {
        Command::Synth { .. } => synth(&cfg, out),
        Command::Degrade { input, .. } => degrade(&cfg, input, out),
        Command::Train { input, init, .. } => train(&cfg, input, init, out),
        Command::Infer { input, checkpoint, plan, .. } => infer(&cfg, input, checkpoint, plan, out),
        Command::Eval { reference, test, motion, .. } => eval(&cfg, reference, test, motion, out),
        Command::Profile { shape, json, .. } => profile_cmd(&cfg, shape, json, out),
        Command::Ablate { suite, input, json, .. } => crate::ablate::run(&cfg, suite, input, json, out),
        Command::Motion { input, .. } => motion(&cfg, input, out),
    }
}

/// The command-line path, else the configured one.
pub fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| anyhow!("no {what} path; pass it on the command line or set it under [paths]"))
}

/// Clips under `dir`: the directory itself, or one per subdirectory.
pub fn load_clips(dir: &Path) -> Result<Vec<(String, VideoClip<f32>)>> {
    read_dataset(dir).with_context(|| format!("reading clips from {}", dir.display()))
}

fn clip_dir(root: &Path, name: &str) -> PathBuf {
    if name.is_empty() {
        root.to_path_buf()
    } else {
        root.join(name)
    }
}

fn source_hash(dir: &Path) -> Value {
    read_sidecar(dir).and_then(|v| v.get("config_hash").cloned()).unwrap_or(Value::Null)
}

/// Emit a JSON report to `out` (or `reports/<name>`) and to stdout.
fn emit(cfg: &RunConfig, out: Option<PathBuf>, name: &str, report: &Value, print: bool) -> Result<()> {
    let target = out.or_else(|| cfg.paths.reports.as_ref().map(|d| d.join(name)));
    if let Some(p) = &target {
        write_json(p, report)?;
    }
    if print {
        say!("{}", serde_json::to_string_pretty(report)?);
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = pick(out, &cfg.paths.hq, "output")?;
    let clip = scene::<f32>(&cfg.synth)?;
    write_clip(&dir, &clip, cfg.format)?;
    write_sidecar(&dir, &record(cfg, "synth", json!({ "frames": clip.frames_len() })))?;
    say!("wrote {} frames of {}×{} to {}", clip.frames_len(), clip.height(), clip.width(), dir.display());
    Ok(())
}

fn degrade(cfg: &RunConfig, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let src = pick(input, &cfg.paths.hq, "input")?;
    let dst = pick(out, &cfg.paths.lq, "output")?;
    for (i, (name, clip)) in load_clips(&src)?.into_iter().enumerate() {
        let (lq, params) = degrade_clip(clip.tensor(), &cfg.degrade, i as u64).with_context(|| format!("clip {name:?}"))?;
        let dir = clip_dir(&dst, &name);
        write_clip(&dir, &VideoClip::new(lq)?.clamped(), cfg.format)?;
        let details = json!({
            "source": clip_dir(&src, &name),
            "source_hash": source_hash(&clip_dir(&src, &name)),
            "params": params,
        });
        write_sidecar(&dir, &record(cfg, "degrade", details))?;
    }
    say!("degraded clips from {} into {}", src.display(), dst.display());
    Ok(())
}

/// Trace file written next to a checkpoint.
pub fn trace_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("trace.jsonl")
}

fn train(cfg: &RunConfig, input: Option<PathBuf>, init: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let src = pick(input, &cfg.paths.hq, "input")?;
    let ckpt = pick(out, &cfg.paths.checkpoint, "checkpoint")?;
    let clips = load_clips(&src)?;
    let data: Vec<_> = clips.iter().map(|(_, c)| c.tensor().clone()).collect();
    let (weights, start) = match &init {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            if ck.config != cfg.model {
                bail!("{} holds a different model configuration", p.display());
            }
            (ck.weights, json!(p))
        }
        None => (ModelWeights::init(&cfg.model, cfg.seed)?, json!({ "init_seed": cfg.seed })),
    };
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let hash = cfg.hash();
    let mut trace = BufWriter::new(File::create(trace_path(&ckpt))?);
    let meta = |iteration: usize, loss: f64| {
        record(
            cfg,
            "train",
            json!({
                "stage": cfg.train.stage,
                "iteration": iteration,
                "loss": loss,
                "start": start,
                "clips": clips.iter().map(|c| &c.0).collect::<Vec<_>>(),
            }),
        )
    };
    let every = cfg.train.checkpoint_every;
    let outcome = run_stage(&data, &cfg.model, weights, &cfg.train, &cfg.degrade, &mut |r, w| {
        let mut line = serde_json::to_value(r).expect("record serializes");
        line["config_hash"] = json!(hash);
        writeln!(trace, "{line}")?;
        if every > 0 && (r.iteration + 1) % every == 0 {
            save_checkpoint(&ckpt, &cfg.model, w, meta(r.iteration + 1, r.loss))?;
        }
        Ok(())
    })?;
    trace.flush()?;
    let last = outcome.trace.last().map_or(f64::NAN, |r| r.loss);
    save_checkpoint(&ckpt, &cfg.model, &outcome.weights, meta(outcome.trace.len(), last))?;
    match (outcome.trace.first(), outcome.trace.last()) {
        (Some(a), Some(b)) => say!(
            "stage {} trained {} iterations, loss {:.6} → {:.6}; wrote {}",
            cfg.train.stage,
            outcome.trace.len(),
            a.loss,
            b.loss,
            ckpt.display()
        ),
        _ => say!("no iterations; wrote {}", ckpt.display()),
    }
    Ok(())
}

fn infer(
    cfg: &RunConfig,
    input: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    plan: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let src = pick(input, &cfg.paths.lq, "input")?;
    let dst = pick(out, &cfg.paths.sr, "output")?;
    let (model, weights, origin): (ModelConfig, ModelWeights<f32>, Value) = match checkpoint.or_else(|| cfg.paths.checkpoint.clone()) {
        Some(p) => {
            let ck = load_checkpoint(&p).with_context(|| format!("loading {}", p.display()))?;
            let hash = ck.metadata.get("config_hash").cloned().unwrap_or(Value::Null);
            (ck.config, ck.weights, json!({ "checkpoint": p, "checkpoint_hash": hash }))
        }
        None => (
            cfg.model.clone(),
            ModelWeights::init(&cfg.model, cfg.seed)?,
            json!({ "init_seed": cfg.seed }),
        ),
    };
    let upscaler = ModelUpscaler { config: &model, weights: &weights };
    let mut plans = Vec::new();
    for (name, clip) in load_clips(&src)? {
        let (gn, gh, gw) = upscaler.granularity();
        let up = |v: usize, g: usize| v.div_ceil(g) * g;
        let extent = (up(clip.frames_len(), gn), up(clip.height(), gh), up(clip.width(), gw));
        plans.push(json!({
            "clip": name,
            "padded_extent": extent,
            "plan": plan_tiles(extent.0, extent.1, extent.2, &cfg.tiling, (gn, gh, gw))?,
        }));
        let sr = tiled_forward(clip.tensor(), &upscaler, &cfg.tiling).with_context(|| format!("clip {name:?}"))?;
        let dir = clip_dir(&dst, &name);
        write_clip(&dir, &VideoClip::new(sr)?.clamped(), cfg.format)?;
        let details = json!({
            "source": clip_dir(&src, &name),
            "source_hash": source_hash(&clip_dir(&src, &name)),
            "model": origin,
        });
        write_sidecar(&dir, &record(cfg, "infer", details))?;
    }
    if let Some(p) = plan {
        write_json(&p, &json!({ "config_hash": cfg.hash(), "tiling": cfg.tiling, "clips": plans }))?;
    }
    say!("upscaled clips from {} into {}", src.display(), dst.display());
    Ok(())
}

fn motion_of(cfg: &RunConfig, clip: &VideoClip<f32>) -> Result<(f64, f64)> {
    Ok(motion_amplitude(&clip_luma(clip, 0)?, cfg.eval.motion_block, cfg.eval.motion_search)?)
}

fn eval(cfg: &RunConfig, reference: Option<PathBuf>, test: Option<PathBuf>, motion: bool, out: Option<PathBuf>) -> Result<()> {
    let ref_dir = pick(reference, &cfg.paths.hq, "reference")?;
    let test_dir = pick(test, &cfg.paths.sr, "test")?;
    let refs = load_clips(&ref_dir)?;
    let tests = load_clips(&test_dir)?;
    let ref_names: Vec<&String> = refs.iter().map(|c| &c.0).collect();
    let test_names: Vec<&String> = tests.iter().map(|c| &c.0).collect();
    if ref_names != test_names {
        bail!("reference clips {ref_names:?} do not match test clips {test_names:?}");
    }
    let mut rows = Vec::new();
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for ((name, r), (_, t)) in refs.iter().zip(&tests) {
        let mut m = evaluate(t, r).with_context(|| format!("clip {name:?}"))?;
        if motion {
            let (u, v) = motion_of(cfg, r)?;
            m.motion_u = Some(u);
            m.motion_v = Some(v);
        }
        psnr += m.psnr;
        ssim += m.ssim;
        let mut row = serde_json::to_value(&m)?;
        row["clip"] = json!(name);
        row.as_object_mut().expect("report is an object").remove("metadata");
        rows.push(row);
    }
    let n = rows.len() as f64;
    let report = json!({
        "config_hash": cfg.hash(),
        "reference": ref_dir,
        "test": test_dir,
        "test_hash": source_hash(&clip_dir(&test_dir, &refs[0].0)),
        "psnr": psnr / n,
        "ssim": ssim / n,
        "clips": rows,
    });
    emit(cfg, out, "eval.json", &report, true)
}

fn motion(cfg: &RunConfig, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let src = pick(input, &cfg.paths.hq, "input")?;
    let mut rows = Vec::new();
    for (name, clip) in load_clips(&src)? {
        let (u, v) = motion_of(cfg, &clip).with_context(|| format!("clip {name:?}"))?;
        rows.push(json!({ "clip": name, "u": u, "v": v }));
    }
    let report = json!({
        "config_hash": cfg.hash(),
        "block": cfg.eval.motion_block,
        "search": cfg.eval.motion_search,
        "clips": rows,
    });
    emit(cfg, out, "motion.json", &report, true)
}

fn giga(v: f64) -> String {
    if v >= 1e9 {
        format!("{:.2} G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2} M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2} K", v / 1e3)
    } else {
        format!("{v}")
    }
}

pub fn profile_table(r: &ProfileReport) -> String {
    let mut s = format!("input {:?}\n{:<18} {:>12} {:>12}\n", r.input_shape, "module", "params", "MACs");
    for m in &r.modules {
        s += &format!("{:<18} {:>12} {:>12}\n", m.module, giga(m.params as f64), giga(m.macs as f64));
    }
    s += &format!("{:<18} {:>12} {:>12}\n", "total", giga(r.total_params as f64), giga(r.total_macs as f64));
    if let Some(c) = &r.comparison {
        s += &format!(
            "{:<18} {:>12} {:>12}\n{:<18} {:>11.2}% {:>11.2}%\n",
            "reference",
            giga(c.reference_params),
            giga(c.reference_macs),
            "delta",
            c.params_delta_pct,
            c.macs_delta_pct
        );
    }
    s + &format!("convention: {}", r.convention)
}

fn profile_cmd(cfg: &RunConfig, shape: Option<Vec<usize>>, as_json: bool, out: Option<PathBuf>) -> Result<()> {
    let shape: [usize; 5] = match shape {
        Some(v) => v.try_into().map_err(|v| anyhow!("shape needs 5 extents, got {v:?}"))?,
        None => REFERENCE_INPUT,
    };
    let report = profile(&cfg.model, shape)?.with_reference();
    let value = json!({ "config_hash": cfg.hash(), "profile": report });
    emit(cfg, out, "profile.json", &value, as_json)?;
    if !as_json {
        say!("{}", profile_table(&report));
    }
    Ok(())
}
