use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use docenhance::data_io::{
    build_window_dataset, load_binary, load_image, save_image, synthesize_corpus, DatasetManifest,
    Split, SynthSpec, DEGRADED_DIR, GT_DIR,
};
use docenhance::metrics::{binarize, format_report, MetricsReport};
use docenhance::model::{init_model, variant};
use docenhance::patching::{extract_windows, pad_to_grid};
use docenhance::training::{format_loss_log, load_checkpoint, save_checkpoint, Trainer};
use docenhance::{Error, TrainConfig};

use crate::args::{
    AttentionArgs, BinarizeArgs, Command, EvaluateArgs, InfoArgs, SynthArgs, TokenSpec, TrainArgs,
};

/// Exit code plus message; 1 for caller mistakes, 2 for runtime faults.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn user(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let user = match &e {
            Error::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ),
            other => other.is_user_error(),
        };
        Failure {
            code: if user { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => train(a),
        Command::Binarize(a) => binarize_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Attention(a) => attention(a),
        Command::Synth(a) => synth(a),
        Command::Info(a) => info(a),
    }
}

fn train(a: TrainArgs) -> Outcome {
    let (mut trainer, fresh) = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if let Some(steps) = a.steps.filter(|&s| s != ckpt.train.total_steps) {
                return Err(Failure::user(format!(
                    "--steps {steps} differs from the checkpoint's schedule of {} steps",
                    ckpt.train.total_steps
                )));
            }
            (Trainer::resume(ckpt)?, false)
        }
        None => {
            let mut cfg = variant(&a.variant, a.patch, a.window)?;
            cfg.layers = a.layers.unwrap_or(cfg.layers);
            cfg.dim = a.dim.unwrap_or(cfg.dim);
            cfg.heads = a.heads.unwrap_or(cfg.heads);
            cfg.validate()?;
            let steps = a.steps.unwrap_or(1000);
            let tc = TrainConfig {
                base_lr: a.lr,
                min_lr: a.min_lr,
                weight_decay: a.weight_decay,
                warmup_steps: a.warmup.unwrap_or(steps / 20),
                grad_clip_norm: a.clip,
                ..TrainConfig::new(steps, a.batch, a.seed)
            };
            (Trainer::new(init_model(&cfg, a.seed)?, tc)?, true)
        }
    };

    let manifest = if a.data.is_dir() {
        DatasetManifest::from_dir(&a.data, Split::Train)?
    } else {
        DatasetManifest::from_file(&a.data, Split::Train)?
    };
    if manifest.is_empty() {
        return Err(Failure::user(format!(
            "no image pairs found in {}",
            a.data.display()
        )));
    }
    let cfg = trainer.weights().config().clone();
    let stride = a.stride.unwrap_or(cfg.window_size / 2);
    let data = build_window_dataset(&manifest, cfg.window_size, stride)?;
    if data.is_empty() {
        return Err(Failure::user("dataset produced no windows"));
    }
    eprintln!(
        "training {} windows from {} pairs, step {} -> {}",
        data.len(),
        manifest.len(),
        trainer.step(),
        trainer.config().total_steps
    );

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.tsv");
        PathBuf::from(p)
    });
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&log_path)
        .map_err(|e| io_fail(&log_path, e))?;

    let until = a
        .stop_after
        .unwrap_or(usize::MAX)
        .min(trainer.config().total_steps);
    let mut io_error = None;
    trainer
        .run(&data, until, |t, loss| {
            if let Err(e) = log.write_all(format_loss_log(t.step(), &[loss]).as_bytes()) {
                io_error = Some(io_fail(&log_path, e));
                return Err(Error::Contract("loss log write failed".into()));
            }
            if a.checkpoint_every > 0 && t.step() % a.checkpoint_every == 0 {
                save_checkpoint(&a.out, &t.checkpoint())?;
            }
            Ok(())
        })
        .map_err(|e| io_error.take().unwrap_or_else(|| e.into()))?;
    save_checkpoint(&a.out, &trainer.checkpoint())?;
    eprintln!("wrote {} (step {})", a.out.display(), trainer.step());
    Ok(())
}

fn binarize_cmd(a: BinarizeArgs) -> Outcome {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let page = load_image(&a.input)?;
    let out = ckpt.weights.enhance_page(&page, a.batch)?;
    if a.no_threshold {
        save_image(&a.out, &out)?;
    } else {
        save_image(&a.out, &binarize(&out, a.threshold))?;
    }
    Ok(())
}

fn images_in(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| io_fail(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| io_fail(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("pgm" | "ppm")) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

fn evaluate(a: EvaluateArgs) -> Outcome {
    let pairs: Vec<(String, PathBuf, PathBuf)> = match (a.pred.is_dir(), a.gt.is_dir()) {
        (true, true) => {
            let preds = images_in(&a.pred)?;
            let mut gts = images_in(&a.gt)?;
            let mut pairs = Vec::new();
            for (stem, p) in preds {
                let g = gts.remove(&stem).ok_or_else(|| {
                    Failure::user(format!("no ground truth for prediction {}", p.display()))
                })?;
                pairs.push((stem, p, g));
            }
            if let Some(g) = gts.values().next() {
                return Err(Failure::user(format!("no prediction for {}", g.display())));
            }
            if pairs.is_empty() {
                return Err(Failure::user("no images to evaluate"));
            }
            pairs
        }
        (false, false) => {
            let stem = a
                .pred
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            vec![(stem.to_string(), a.pred.clone(), a.gt.clone())]
        }
        _ => {
            return Err(Failure::user(
                "--pred and --gt must both be files or both directories",
            ))
        }
    };
    let mut rows = Vec::with_capacity(pairs.len());
    for (name, p, g) in pairs {
        let pred = load_image(&p)?;
        let gt = load_binary(&g)?;
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Failure::user(format!(
                "{} and {} differ in size",
                p.display(),
                g.display()
            )));
        }
        let report = MetricsReport::compute(&binarize(&pred, a.threshold), &gt)
            .map_err(|e| Failure::user(format!("{name}: {e}")))?;
        rows.push((name, report));
    }
    let text = format_report(&rows);
    print!("{text}");
    if let Some(path) = &a.report {
        fs::write(path, &text).map_err(|e| io_fail(path, e))?;
    }
    Ok(())
}

fn attention(a: AttentionArgs) -> Outcome {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let weights = &ckpt.weights;
    let cfg = weights.config();
    let (default_layer, default_head) = weights.default_attention_target();
    let layer = a.layer.unwrap_or(default_layer);
    let head = a.head.unwrap_or(default_head);
    let n = cfg.num_tokens();
    let tokens = match &a.tokens {
        TokenSpec::List(list) => list.clone(),
        TokenSpec::Random(k) => {
            if *k > n {
                return Err(Failure::user(format!("cannot pick {k} of {n} tokens")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut picked = sample(&mut rng, n, *k).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    if let Some(t) = tokens.iter().find(|&&t| t >= n) {
        return Err(Failure::user(format!(
            "token {t} out of range (window has {n} tokens)"
        )));
    }

    let page = load_image(&a.input)?;
    let (padded, grid) = pad_to_grid(&page, cfg.window_size)?;
    let mut windows = extract_windows(&padded, &grid)?;
    if a.window_index >= windows.len() {
        return Err(Failure::user(format!(
            "window {} out of range (page has {})",
            a.window_index,
            windows.len()
        )));
    }
    let window = windows.swap_remove(a.window_index);
    let maps = weights.attention_maps(&window, layer, head, &tokens)?;
    fs::create_dir_all(&a.out).map_err(|e| io_fail(&a.out, e))?;
    for (t, map) in tokens.iter().zip(&maps) {
        let path = a.out.join(format!("tok{t}_L{layer}_H{head}.pgm"));
        save_image(&path, map)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let spec = SynthSpec {
        height: a.size.height,
        width: a.size.width,
        stroke_density: a.density,
        stain: a.stain,
        saltpepper: a.saltpepper,
        blur: a.blur,
        bleed: a.bleed,
        seed: a.seed,
    };
    spec.validate()?;
    let (ddir, gdir) = (a.out.join(DEGRADED_DIR), a.out.join(GT_DIR));
    for d in [&ddir, &gdir] {
        fs::create_dir_all(d).map_err(|e| io_fail(d, e))?;
    }
    let width = a.count.saturating_sub(1).to_string().len().max(4);
    for (i, (degraded, clean)) in synthesize_corpus(&spec, a.count)?.iter().enumerate() {
        let stem = format!("synth_{i:0width$}");
        save_image(ddir.join(format!("{stem}.ppm")), degraded)?;
        save_image(gdir.join(format!("{stem}.pgm")), clean)?;
    }
    eprintln!("wrote {} pairs under {}", a.count, a.out.display());
    Ok(())
}

fn millions(n: usize) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

fn info(a: InfoArgs) -> Outcome {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cfg = ckpt.model_config();
    let t = &ckpt.train;
    println!(
        "model: layers={} dim={} heads={} patch={} window={} mlp_ratio={} head={}",
        cfg.layers,
        cfg.dim,
        cfg.heads,
        cfg.patch_size,
        cfg.window_size,
        cfg.mlp_ratio,
        cfg.output_head
    );
    println!("tokens per window: {}", cfg.num_tokens());
    println!(
        "training: step {} of {}, batch {}, lr {} -> {}, seed {}",
        ckpt.step, t.total_steps, t.batch_size, t.base_lr, t.min_lr, t.seed
    );
    let count = ckpt.weights.param_count();
    match cfg.matching_variant() {
        Some(v) => println!(
            "parameters: {count} ({}), variant {v}, reference nominal: {}",
            millions(count),
            v.nominal_params()
        ),
        None => println!("parameters: {count} ({}), custom size", millions(count)),
    }
    Ok(())
}
