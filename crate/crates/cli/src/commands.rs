use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pulsenet_core::data::{load_split, prepare_first, Dataset, Split, CLASS_DIGITS};
use pulsenet_core::eval::{
    ablation_suite, evaluate, evaluate_with_shots, noise_sweep, write_ablation_csv, write_sweep_csv, Evaluation,
};
use pulsenet_core::grad::GradMethod;
use pulsenet_core::model::{Checkpoint, CheckpointMetadata, Model, ModelConfig, ModelParams};
use pulsenet_core::train::{measurement_budget, train_from, TrainConfig, TrainRun};
use pulsenet_core::{seed, RealMatrix};
use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;

pub const TRAIN_CHECKPOINT: &str = "model.json";

fn class_names() -> Vec<String> {
    CLASS_DIGITS.iter().map(|d| d.to_string()).collect()
}

fn load_set(cfg: &RunConfig, split: Split, cap: Option<usize>) -> Result<Dataset> {
    let raw = load_split(&cfg.data_dir, split)
        .with_context(|| format!("loading the {} split from {}", split.name(), cfg.data_dir.display()))?;
    Ok(prepare_first(&raw, split.name(), cap.unwrap_or(usize::MAX)))
}

fn load_train_val(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    Ok((
        load_set(cfg, Split::Train, cfg.subset)?,
        load_set(cfg, Split::Test, cfg.val_subset)?,
    ))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg
        .checkpoint
        .as_ref()
        .context("this command needs --checkpoint (or `checkpoint` in the config)")?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_evaluation(eval: &Evaluation) {
    println!("loss {:.4}  error {:.2}%", eval.loss, 100.0 * eval.error_rate);
    let precision = eval.confusion.precision();
    let recall = eval.confusion.recall();
    println!("digit  precision  recall");
    for (i, d) in CLASS_DIGITS.iter().enumerate() {
        println!("{d:>5}  {:>8.1}%  {:>5.1}%", precision[i], recall[i]);
    }
}

fn train_model(
    cfg: &RunConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    checkpoint_dir: &Path,
) -> Result<TrainRun> {
    let model = Model::new(mcfg.clone())?;
    let init = ModelParams::init(mcfg, tcfg.encoder_mode, cfg.seed)?;
    train_from(&model, tcfg, init, train_set, val_set, Some(checkpoint_dir)).map_err(|e| {
        anyhow::Error::new(e).context(format!(
            "training aborted; last finite state in {}",
            checkpoint_dir.display()
        ))
    })
}

fn save_model(
    path: &Path,
    mcfg: &ModelConfig,
    params: &ModelParams,
    cfg: &RunConfig,
    run: &TrainRun,
    note: &str,
) -> Result<()> {
    let meta = CheckpointMetadata {
        seed: cfg.seed,
        epoch: run.report.epochs.len().saturating_sub(1),
        iteration: run.report.iterations.len(),
        class_digits: CLASS_DIGITS.to_vec(),
        note: note.to_string(),
    };
    Checkpoint::new(mcfg.clone(), params.clone(), meta).save(path)?;
    Ok(())
}

pub fn prepare_data(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out;
    let mut w = BufWriter::new(File::create(out.join("data_summary.csv"))?);
    writeln!(w, "split,digit,label,count")?;
    for split in [Split::Train, Split::Test] {
        let raw = load_split(&cfg.data_dir, split)?;
        let mut counts = [0usize; 10];
        for &d in &raw.labels {
            counts[usize::from(d)] += 1;
        }
        let kept: usize = CLASS_DIGITS.iter().map(|&d| counts[usize::from(d)]).sum();
        println!(
            "{}: {} images of {}x{}, {} kept after dropping digits 1 and 7",
            split.name(),
            raw.labels.len(),
            raw.images.rows,
            raw.images.cols,
            kept
        );
        for (label, &d) in CLASS_DIGITS.iter().enumerate() {
            writeln!(w, "{},{d},{label},{}", split.name(), counts[usize::from(d)])?;
        }
        if split == Split::Train {
            if let Some(n) = cfg.subset {
                let ds = prepare_first(&raw, split.name(), n);
                ds.write_csv(&out.join("train_subset.csv"))?;
                println!(
                    "wrote the first {} filtered training samples to train_subset.csv",
                    ds.len()
                );
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    train_samples: usize,
    val_samples: usize,
    iterations: usize,
    final_smoothed_loss: Option<f64>,
    val_loss: f64,
    val_error: f64,
    gradient_evaluations: u64,
    forward_evaluations: u64,
    forward_evaluations_per_gradient: u64,
    wall_clock_secs: f64,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let mcfg = cfg.model_config()?;
    let (train_set, val_set) = load_train_val(cfg)?;
    println!(
        "training on {} samples, validating on {} ({} encoding + {} inference periods, {} qubits)",
        train_set.len(),
        val_set.len(),
        mcfg.encode_periods,
        mcfg.infer_periods(),
        mcfg.spec.n_qubits()
    );
    let run = train_model(
        cfg,
        &mcfg,
        &cfg.train,
        &train_set,
        &val_set,
        &cfg.out.join("checkpoints"),
    )?;
    run.report.write_iterations_csv(&cfg.out.join("iterations.csv"))?;
    run.report.write_epochs_csv(&cfg.out.join("epochs.csv"))?;
    for e in &run.report.epochs {
        println!(
            "epoch {}: smoothed loss {:.4}, val loss {:.4}, val error {:.2}%",
            e.epoch,
            e.smoothed_loss,
            e.val_loss,
            100.0 * e.val_error
        );
    }
    let model = Model::new(mcfg.clone())?;
    let eval = evaluate(&model, &run.params, &val_set)?;
    eval.confusion
        .write_csv(&cfg.out.join("confusion.csv"), &class_names())?;
    save_model(&cfg.out.join(TRAIN_CHECKPOINT), &mcfg, &run.params, cfg, &run, "train")?;
    write_json(
        &cfg.out.join("summary.json"),
        &TrainSummary {
            train_samples: train_set.len(),
            val_samples: val_set.len(),
            iterations: run.report.iterations.len(),
            final_smoothed_loss: run.report.final_smoothed_loss(),
            val_loss: eval.loss,
            val_error: eval.error_rate,
            gradient_evaluations: run.report.gradient_evaluations,
            forward_evaluations: run.report.forward_evaluations,
            forward_evaluations_per_gradient: measurement_budget(&mcfg, cfg.train.method),
            wall_clock_secs: run.report.wall_clock_secs,
        },
    )?;
    print_evaluation(&eval);
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let ck = load_checkpoint(cfg)?;
    let val_set = load_set(cfg, Split::Test, cfg.val_subset)?;
    let model = Model::new(ck.config.clone())?;
    let eval = match cfg.model.shots.or(ck.config.shots) {
        Some(shots) => evaluate_with_shots(&model, &ck.params, &val_set, shots, cfg.seed)?,
        None => evaluate(&model, &ck.params, &val_set)?,
    };
    eval.confusion
        .write_csv(&cfg.out.join("confusion.csv"), &class_names())?;
    write_json(&cfg.out.join("eval.json"), &eval)?;
    println!("{} validation samples", val_set.len());
    print_evaluation(&eval);
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let mcfg = cfg.model_config()?;
    let (train_set, val_set) = load_train_val(cfg)?;
    let rows = ablation_suite(
        &mcfg,
        &cfg.train,
        &train_set,
        &val_set,
        &cfg.ablation.variants,
        &cfg.ablation.seeds,
    )?;
    write_ablation_csv(&rows, &cfg.out.join("ablation.csv"))?;
    for &v in &cfg.ablation.variants {
        let errs: Vec<f64> = rows.iter().filter(|r| r.variant == v).map(|r| r.val_error).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let each: Vec<String> = errs.iter().map(|e| format!("{:.1}", 100.0 * e)).collect();
        println!(
            "{:<15} mean error {:>5.1}%  ({})",
            v.name(),
            100.0 * mean,
            each.join(", ")
        );
    }
    Ok(())
}

pub fn noise_sweep_cmd(cfg: &RunConfig) -> Result<()> {
    let delta = cfg.train.noise_delta;
    if delta <= 0.0 {
        bail!("noise-sweep needs a positive training noise level (--delta)");
    }
    let (train_set, val_set) = load_train_val(cfg)?;
    let (mcfg, clean) = match &cfg.checkpoint {
        Some(_) => {
            let ck = load_checkpoint(cfg)?;
            (ck.config, ck.params)
        }
        None => {
            let mcfg = cfg.model_config()?;
            let tcfg = TrainConfig {
                noise_delta: 0.0,
                ..cfg.train.clone()
            };
            println!("training the clean model");
            let run = train_model(
                cfg,
                &mcfg,
                &tcfg,
                &train_set,
                &val_set,
                &cfg.out.join("checkpoints-clean"),
            )?;
            save_model(&cfg.out.join("clean.json"), &mcfg, &run.params, cfg, &run, "clean")?;
            (mcfg, run.params)
        }
    };
    println!("training with {delta} MHz noise");
    let run = train_model(
        cfg,
        &mcfg,
        &cfg.train,
        &train_set,
        &val_set,
        &cfg.out.join("checkpoints-noisy"),
    )?;
    save_model(
        &cfg.out.join("noisy.json"),
        &mcfg,
        &run.params,
        cfg,
        &run,
        "noise-trained",
    )?;

    let model = Model::new(mcfg)?;
    let pts = noise_sweep(
        &model,
        &clean,
        &run.params,
        &val_set,
        &cfg.noise.eval_deltas,
        cfg.noise.repetitions,
        cfg.seed,
    )?;
    write_sweep_csv(&pts, &cfg.out.join("noise_sweep.csv"))?;
    println!("delta_mhz  clean-trained  noise-trained");
    for p in &pts {
        println!(
            "{:>9}  {:>12.2}%  {:>12.2}%",
            p.delta,
            100.0 * p.clean_trained.error_rate,
            100.0 * p.noise_trained.error_rate
        );
    }
    Ok(())
}

/// Returns whether every instance was within tolerance.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let gc = &cfg.gradcheck;
    let mut mcfg = cfg.model_config()?;
    mcfg.input_dim = gc.input_dim;
    let model = Model::new(mcfg.clone())?;
    let mut rng = seed::rng(cfg.seed, &[seed::GRADCHECK_DOMAIN]);
    let bound = mcfg.bound_mhz;
    let mut w = BufWriter::new(File::create(cfg.out.join("gradcheck.csv"))?);
    writeln!(w, "instance,label,max_abs_central,max_abs_forward")?;
    let mut worst = 0.0f64;
    for i in 0..gc.instances {
        let mut params = ModelParams::init(&mcfg, cfg.train.encoder_mode, seed::derive(cfg.seed, &[i as u64]))?;
        params
            .w_infer
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
        let mut x: Vec<f64> = (0..gc.input_dim - 1).map(|_| rng.random::<f64>()).collect();
        x.push(1.0);
        let label = rng.random_range(0..mcfg.n_classes);
        let exact = model.control_gradient(&params, &x, label, GradMethod::Analytic, gc.step_mhz, None)?;
        let central = model.control_gradient(&params, &x, label, GradMethod::CentralDifference, gc.step_mhz, None)?;
        let forward = model.control_gradient(&params, &x, label, GradMethod::ForwardDifference, gc.step_mhz, None)?;
        let diff = |a: &[f64], ai: &RealMatrix, b: &[f64], bi: &RealMatrix| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q).abs())
                .fold(ai.max_abs_diff(bi), f64::max)
        };
        let dc = diff(&exact.code, &exact.infer, &central.code, &central.infer);
        let df = diff(&exact.code, &exact.infer, &forward.code, &forward.infer);
        writeln!(w, "{i},{label},{dc:e},{df:e}")?;
        worst = worst.max(dc);
    }
    w.flush()?;
    let ok = worst <= gc.tolerance;
    println!(
        "{} instances: max |analytic - central difference| = {worst:.3e} (tolerance {:e}) {}",
        gc.instances,
        gc.tolerance,
        if ok { "ok" } else { "FAILED" }
    );
    Ok(ok)
}

pub fn inspect_pulse(cfg: &RunConfig, sample: usize) -> Result<PathBuf> {
    let ck = load_checkpoint(cfg)?;
    let val_set = load_set(cfg, Split::Test, Some(sample + 1))?;
    if sample >= val_set.len() {
        bail!(
            "sample {sample} out of range: the validation set has {} samples",
            val_set.len()
        );
    }
    let model = Model::new(ck.config.clone())?;
    let s = val_set.sample(sample);
    let schedule = model.assemble_schedule(&ck.params, s.x)?;
    let probs = model.probabilities(&schedule)?;

    let path = cfg.out.join(format!("pulse-{sample}.csv"));
    let mut w = BufWriter::new(File::create(&path)?);
    write!(w, "period,t_start_ns,encoding")?;
    for q in 1..=ck.config.spec.n_qubits() {
        write!(w, ",x{q},y{q}")?;
    }
    writeln!(w)?;
    for k in 0..schedule.periods() {
        write!(
            w,
            "{k},{},{}",
            k as f64 * schedule.dt_ns,
            u8::from(k < ck.config.encode_periods)
        )?;
        for a in schedule.amplitudes.row(k) {
            write!(w, ",{a}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    println!("sample {sample}: digit {}", CLASS_DIGITS[s.label]);
    for (label, p) in probs.iter().enumerate().take(ck.config.n_classes) {
        println!("  P({}) = {p:.4}", CLASS_DIGITS[label]);
    }
    println!("wrote {} periods to {}", schedule.periods(), path.display());
    Ok(path)
}
