use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deepwarp_bench::record::{best_by_ssim, summarize, write_csv};
use deepwarp_bench::{
    bench_demons_sweep, bench_inference, eval_pairs, progression, render_report, run_loss_ablation,
    snapshot_progression, speed_ratio, DemonsGrid, EvalPair,
};
use deepwarp_core::dataset::{
    build_dataset, build_dataset_from_images, default_max_amplitude, gen_field, gen_phantom, load_dataset,
    load_image_dir, write_dataset, Dataset, DatasetConfig, Split, WarpKind, WarpSpec,
};
use deepwarp_core::demons::{register_demons, DemonsConfig};
use deepwarp_core::metrics::{mse, ssim};
use deepwarp_core::netpbm::{atomic_write, load_pgm, save_pgm, write_overlay};
use deepwarp_core::rigid::{phase_correlate, PhaseCorrelationOptions};
use deepwarp_core::rng::{substream, substream_seed};
use deepwarp_core::{Error, Image, SsimParams, WarpField};
use deepwarp_nn::checkpoint::{load_model, read_header, save_model, CHANNELS_PHI_I_FIRST};
use deepwarp_nn::probe::dump_activations;
use deepwarp_nn::train::train_with;
use deepwarp_nn::{TrainConfig, UNetConfig, UNetModel};

use crate::args::*;
use crate::CliError;

type Res<T = ()> = Result<T, CliError>;

/// Precondition failures found before any work starts are usage errors.
fn pre<T>(r: deepwarp_core::Result<T>) -> Res<T> {
    r.map_err(|e| CliError::Usage(e.to_string()))
}

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(CliError::Usage(msg.into()))
}

fn mkdir(dir: &Path) -> Res {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::io(dir, e)))
}

pub fn dispatch(cli: Cli) -> Res {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Runtime(Error::Config(format!("thread pool: {e}"))))?;
    }
    match cli.command {
        Command::MakeDataset(a) => make_dataset(a),
        Command::Warp(w) => warp(w),
        Command::Register(r) => register(r),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Inspect(a) => inspect(a),
        Command::Bench(b) => bench(b),
    }
}

fn dataset_config(gen: &GenArgs, size: usize, seed: u64) -> Res<DatasetConfig> {
    let mut cfg = DatasetConfig::new(gen.n_images as usize, gen.warps as usize, size, seed);
    cfg.validation_fraction = gen.validation_fraction;
    if let Some(m) = gen.max_amplitude {
        cfg.max_amplitude = m;
        cfg.min_amplitude = 0.75 * m;
    }
    if let Some(m) = gen.min_amplitude {
        cfg.min_amplitude = m;
    }
    if cfg.min_amplitude > cfg.max_amplitude {
        return usage(format!(
            "--min-amplitude {} exceeds --max-amplitude {}",
            cfg.min_amplitude, cfg.max_amplitude
        ));
    }
    pre(cfg.validate())?;
    Ok(cfg)
}

fn describe(ds: &Dataset<f32>) -> String {
    format!(
        "{} pairs ({} train, {} validation) at {}x{}",
        ds.entries.len(),
        ds.count(Split::Train),
        ds.count(Split::Validation),
        ds.size,
        ds.size
    )
}

fn make_dataset(a: MakeDatasetArgs) -> Res {
    let cfg = dataset_config(&a.gen, a.size as usize, a.seed)?;
    let ds: Dataset<f32> = match &a.images {
        Some(dir) => build_dataset_from_images(load_image_dir(dir)?, &cfg)?,
        None => build_dataset(&cfg)?,
    };
    let manifest = write_dataset(&ds, &a.out)?;
    println!("{}", describe(&ds));
    println!("{}", manifest.display());
    Ok(())
}

fn warp(cmd: WarpCommand) -> Res {
    match cmd {
        WarpCommand::Apply { image, field, out } => {
            let img: Image<f32> = load_pgm(&image)?;
            let f = WarpField::<f32>::load(&field)?;
            save_pgm(&f.apply(&img)?, &out)?;
        }
        WarpCommand::Random {
            size,
            kind,
            amplitude,
            seed,
            out,
        } => {
            if !(amplitude >= 0.0 && amplitude.is_finite()) {
                return usage(format!("--amplitude must be finite and >= 0, got {amplitude}"));
            }
            let spec = WarpSpec::random(WarpKind::from(kind), size as usize, amplitude, amplitude, seed);
            let f: WarpField<f32> = gen_field(&spec, size as usize)?;
            f.save(&out)?;
            println!(
                "{} amplitude {:.4} max_gradient {:.4}",
                spec.kind(),
                spec.amplitude,
                f.max_gradient()
            );
        }
        WarpCommand::Invert { field, iterations, out } => {
            let f = WarpField::<f32>::load(&field)?;
            f.invert(iterations as usize).save(&out)?;
        }
    }
    Ok(())
}

fn metrics_line(s: &Image<f32>, t: &Image<f32>, w: &Image<f32>) -> Res<String> {
    let p = SsimParams::default().fitted(t.height(), t.width());
    Ok(format!(
        "ssim_before {:.6} ssim_after {:.6} mse_before {:.8} mse_after {:.8}",
        ssim(s, t, &p)?,
        ssim(w, t, &p)?,
        mse(s, t)?,
        mse(w, t)?
    ))
}

fn register(cmd: RegisterCommand) -> Res {
    match cmd {
        RegisterCommand::Phase {
            subject,
            template,
            hann,
        } => {
            let s: Image<f64> = load_pgm(&subject)?;
            let t: Image<f64> = load_pgm(&template)?;
            let shift = phase_correlate(&s, &t, PhaseCorrelationOptions { hann_window: hann })?;
            println!("{} {} {:.6}", shift.di, shift.dj, shift.peak_response);
        }
        RegisterCommand::Demons(a) => {
            let cfg = DemonsConfig {
                levels: a.levels as usize,
                iterations_per_level: a.iterations as usize,
                smoothing_sigma: a.smoothing_sigma,
                update_sigma: a.update_sigma,
                max_step: a.max_step,
                squarings: None,
                record_trace: a.trace.is_some(),
            };
            pre(cfg.validate())?;
            let s: Image<f32> = load_pgm(&a.subject)?;
            let t: Image<f32> = load_pgm(&a.template)?;
            let res = register_demons(&s, &t, &cfg)?;
            save_pgm(&res.warped, &a.out_warped)?;
            if let Some(p) = &a.out_field {
                res.field.save(p)?;
            }
            if let Some(p) = &a.trace {
                let mut csv = String::from("iter,level,mse,ssim\n");
                for r in &res.trace {
                    let _ = writeln!(csv, "{},{},{:.9},{:.9}", r.iter, r.level, r.mse, r.ssim);
                }
                atomic_write(p, csv.as_bytes())?;
            }
            println!("{}", metrics_line(&s, &t, &res.warped)?);
        }
    }
    Ok(())
}

fn preset_bundle(p: Preset) -> (UNetConfig, TrainConfig) {
    // Both lookups are infallible for the enum's names.
    (
        UNetConfig::preset(p.name()).expect("known preset"),
        TrainConfig::preset(p.name()).expect("known preset"),
    )
}

fn train(a: TrainArgs) -> Res {
    let (mut mc, mut tc) = preset_bundle(a.preset);
    a.arch.apply(&mut mc);
    if let Some(v) = a.epochs {
        tc.epochs = v as usize;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    tc.loss_mode = a.loss.into();
    tc.alpha = a.alpha;
    tc.beta = a.beta;
    tc.seed = a.seed;
    tc.validation_fraction = a.gen.validation_fraction;
    tc.snapshot_epochs = a.snapshot_epochs.clone();
    pre(mc.validate())?;
    pre(tc.validate())?;
    let ds: Dataset<f32> = match &a.dataset {
        Some(path) => {
            let ds = load_dataset(path)?;
            if ds.size != mc.input_size {
                return Err(CliError::Runtime(Error::Dimension(format!(
                    "dataset images are {}x{}, model input is {}",
                    ds.size, ds.size, mc.input_size
                ))));
            }
            ds
        }
        None => build_dataset(&dataset_config(&a.gen, mc.input_size, a.seed)?)?,
    };
    eprintln!("dataset: {}", describe(&ds));
    eprintln!(
        "model: input {} depth {} width {} ({} parameters)",
        mc.input_size,
        mc.depth,
        mc.base_width,
        mc.param_count()
    );
    let model = UNetModel::<f32>::build(mc, &mut substream(a.seed, "init"))?;
    let out = train_with(model, &ds, &tc, |r| {
        eprintln!(
            "epoch {:>4} train_loss {:.5} val_loss {:.5} val_ssim {:.4} val_mse {:.6}",
            r.epoch, r.train_loss, r.val_loss, r.val_ssim, r.val_mse
        )
    })?;
    save_model(&out.model, &a.out)?;
    if let Some(p) = &a.history {
        atomic_write(p, out.history.to_csv().as_bytes())?;
    }
    if !out.snapshots.is_empty() {
        let dir = match &a.snapshot_dir {
            Some(d) => d.clone(),
            None => a.out.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        if !dir.as_os_str().is_empty() {
            mkdir(&dir)?;
        }
        for (e, m) in &out.snapshots {
            save_model(m, dir.join(format!("epoch{e}.unt1")))?;
        }
    }
    if let Some(r) = out.history.last() {
        println!(
            "epochs {} val_ssim {:.6} val_mse {:.8} model {}",
            r.epoch,
            r.val_ssim,
            r.val_mse,
            a.out.display()
        );
    }
    Ok(())
}

fn infer(a: InferArgs) -> Res {
    let model = load_model::<f32>(&a.model)?;
    let s: Image<f32> = load_pgm(&a.subject)?;
    let t: Image<f32> = load_pgm(&a.template)?;
    let (field, warped) = model.forward_register(&s, &t, None)?;
    if let Some(p) = &a.out_warped {
        save_pgm(&warped, p)?;
    }
    if let Some(p) = &a.out_field {
        field.save(p)?;
    }
    if let Some(p) = &a.overlay {
        write_overlay(&warped, &t, p)?;
    }
    println!("{}", metrics_line(&s, &t, &warped)?);
    Ok(())
}

/// A phantom template and a warped copy, both drawn from `seed`.
fn probe_pair(size: usize, seed: u64) -> Res<(Image<f32>, Image<f32>)> {
    let t: Image<f32> = gen_phantom(size, substream_seed(seed, "probe-template"))?;
    let max = default_max_amplitude(size);
    let spec = WarpSpec::random(WarpKind::Mixed, size, 0.75 * max, max, substream_seed(seed, "probe-warp"));
    let f: WarpField<f32> = gen_field(&spec, size)?;
    Ok((f.apply(&t)?, t))
}

fn inspect(a: InspectArgs) -> Res {
    let h = read_header(&a.model)?;
    let c = h.config;
    println!("format UNT1 version {}", h.version);
    println!("input_size {}", c.input_size);
    println!("depth {}", c.depth);
    println!("base_width {}", c.base_width);
    println!("bottleneck_width {}", c.bottleneck_width());
    println!(
        "channel_order {}",
        if h.channel_order == CHANNELS_PHI_I_FIRST {
            "phi_i,phi_j"
        } else {
            "unknown"
        }
    );
    println!("layers {}", h.layer_count);
    println!("parameters {}", c.param_count());
    if let Some(dir) = &a.dump_dir {
        let model = load_model::<f32>(&a.model)?;
        let (s, t) = match (&a.subject, &a.template) {
            (Some(s), Some(t)) => (load_pgm(s)?, load_pgm(t)?),
            _ => probe_pair(c.input_size, a.seed)?,
        };
        let levels = dump_activations(&model, &s, &t, dir)?;
        let files: usize = levels.iter().map(|l| l.channels).sum();
        println!("dumped {files} channel images over {} levels to {}", levels.len(), dir.display());
    }
    Ok(())
}

fn load_pairs(src: &PairSource) -> Res<Vec<EvalPair<f32>>> {
    if src.limit == Some(0) {
        return usage("--limit must be >= 1");
    }
    let ds: Dataset<f32> = load_dataset(&src.dataset)?;
    let split = match src.split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
    };
    let mut pairs = eval_pairs(&ds, split);
    if let Some(n) = src.limit {
        pairs.truncate(n);
    }
    if pairs.is_empty() {
        return Err(CliError::Runtime(Error::Config(format!(
            "no {} pairs in {}",
            split.as_str(),
            src.dataset.display()
        ))));
    }
    Ok(pairs)
}

fn parse_checkpoint(spec: &str) -> Res<(usize, PathBuf)> {
    let (e, p) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--checkpoint expects EPOCH=PATH, got {spec:?}")))?;
    let epoch = e
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("--checkpoint epoch {e:?} is not a number")))?;
    Ok((epoch, PathBuf::from(p)))
}

fn bench(cmd: BenchCommand) -> Res {
    match cmd {
        BenchCommand::Inference {
            model,
            pairs,
            repeats,
            out,
        } => {
            let m = load_model::<f32>(&model)?;
            let pairs = load_pairs(&pairs)?;
            let recs = bench_inference(&m, &pairs, repeats as usize)?;
            if let Some(p) = &out {
                write_csv(&recs, p)?;
            }
            print!("{}", render_report(&summarize(&recs), None));
        }
        BenchCommand::Demons {
            pairs,
            iterations,
            levels,
            model,
            repeats,
            out,
        } => {
            let grid = pre(DemonsGrid::new(iterations, levels))?;
            let pairs = load_pairs(&pairs)?;
            let mut recs = bench_demons_sweep(&pairs, &grid, &DemonsConfig::default())?;
            let mut ratio = None;
            if let Some(path) = &model {
                let m = load_model::<f32>(path)?;
                let inf = bench_inference(&m, &pairs, repeats as usize)?;
                let learned = summarize(&inf).remove(0);
                let all = summarize(&recs);
                if let Some(best) = best_by_ssim(&all, "demons") {
                    ratio = Some(speed_ratio(best, &learned));
                }
                recs.extend(inf);
            }
            if let Some(p) = &out {
                write_csv(&recs, p)?;
            }
            print!("{}", render_report(&summarize(&recs), ratio));
        }
        BenchCommand::Ablation {
            dataset,
            preset,
            arch,
            epochs,
            lr,
            seed,
            out_dir,
        } => {
            let (mut mc, mut tc) = preset_bundle(preset);
            if let Some(e) = epochs {
                tc.epochs = e as usize;
            }
            if let Some(v) = lr {
                tc.lr = v;
            }
            tc.seed = seed;
            pre(tc.validate())?;
            let ds: Dataset<f32> = load_dataset(&dataset)?;
            if arch.size.is_none() {
                mc.input_size = ds.size;
            }
            arch.apply(&mut mc);
            pre(mc.validate())?;
            mkdir(&out_dir)?;
            let runs = run_loss_ablation(&ds, mc, &tc, Some(&out_dir))?;
            println!("loss        val_ssim     val_mse");
            for r in &runs {
                if let Some(last) = r.outcome.history.last() {
                    println!("{:<10} {:>9.4} {:>11.6}", r.mode.as_str(), last.val_ssim, last.val_mse);
                }
            }
        }
        BenchCommand::Progression {
            checkpoints,
            pairs,
            out_dir,
        } => {
            let cks = checkpoints
                .iter()
                .map(|s| parse_checkpoint(s))
                .collect::<Res<Vec<_>>>()?;
            if cks.windows(2).any(|w| w[1].0 < w[0].0) {
                return usage("--checkpoint epochs must be given in increasing order");
            }
            let pairs = load_pairs(&pairs)?;
            if let Some(d) = &out_dir {
                mkdir(d)?;
            }
            let pts = snapshot_progression(&cks, &pairs, out_dir.as_deref())?;
            print!("{}", progression::render_progression(&pts));
        }
    }
    Ok(())
}
