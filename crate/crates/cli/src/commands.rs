
use mcn_core::config::load_config;
use mcn_core::mcn::checkpoint::load_checkpoint;
use mcn_core::mcn::{McnModel, McnOutputs};
use mcn_core::metrics::{psnr, ssim, MetricsReport};
use mcn_core::raw::{
    amplify, gain_at, illumination_map, normalize_black_level, pack, read_raw_frame, rimef_gain,
    Cfa, IlluminationParams,
};
use mcn_core::synth::{build_dataset, load_dataset, write_ppm_preview, SensorModel};
use mcn_core::tensor::io::save_tensor;
use mcn_core::tensor::Tensor;
use mcn_core::train::{self, load_training_set, LoadedPair};
use mcn_core::{Error, Result};

use crate::{EnhanceArgs, EvalArgs, RimefCurveArgs, SynthArgs, TrainArgs};

/// MCN_SEED overrides any configured seed.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("MCN_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Parameter(format!("MCN_SEED '{v}' is not a u64"))),
        Err(_) => Ok(None),
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if args.max_steps.is_some() {
        cfg.train.max_steps = args.max_steps;
    }
    if let Some(v) = args.crop {
        cfg.train.crop = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = args.lr_initial {
        cfg.train.lr_initial = v;
    }
    if let Some(v) = args.lr_late {
        cfg.train.lr_late = v;
    }
    if let Some(v) = args.lambda_r {
        cfg.train.weights.lambda_r = v;
    }
    if let Some(v) = args.lambda_s {
        cfg.train.weights.lambda_s = v;
    }
    if args.no_augment {
        cfg.train.augment = false;
    }
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    let manifest_path = args
        .manifest
        .or(cfg.manifest)
        .ok_or_else(|| Error::Parameter("no manifest: pass --manifest or set [data]".into()))?;
    let out_dir = args
        .out_dir
        .or(cfg.out_dir)
        .ok_or_else(|| Error::Parameter("no output dir: pass --out-dir or set [data]".into()))?;

    let manifest = load_dataset(&manifest_path)?;
    let pairs: Vec<LoadedPair<f32>> = load_training_set(&manifest)?;
    let model: McnModel<f32> = McnModel::init(cfg.model.clone(), cfg.train.seed)?;
    let report = match &args.resume {
        Some(state) => train::resume_train_loop(&model, &cfg.train, &pairs, &out_dir, state)?,
        None => train::train_loop(&model, &cfg.train, &pairs, &out_dir)?,
    };
    let last = report.rows.last();
    println!(
        "trained {} steps; final loss {}; checkpoint {}",
        report.rows.len(),
        last.map(|r| r.loss.to_string()).unwrap_or_default(),
        report.checkpoint.display()
    );
    Ok(())
}

fn illumination_from_flags(
    r: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    beta_one: bool,
    ratio: f64,
) -> Result<IlluminationParams> {
    let mut p = IlluminationParams::hdr(ratio);
    if let Some(v) = r {
        p.r = v;
    }
    if let Some(v) = alpha {
        p.alpha = v;
    }
    if let Some(v) = beta {
        p.beta = v;
    }
    if beta_one {
        p.beta = 1.0;
    }
    p.normalized()
}

fn clamp01(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::from_vec(
        t.shape(),
        t.to_vec().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
    .expect("same shape")
}

/// Half-resolution render of a packed Bayer tensor: (R, mean(G1,G2), B).
fn naive_render(packed: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [n, c, h, w] = match packed.shape() {
        [n, c, h, w] => [*n, *c, *h, *w],
        other => {
            return Err(Error::Dimension(format!(
                "naive render expects packed 4-D input, got {other:?}"
            )))
        }
    };
    if n != 1 || c != 4 {
        return Err(Error::Dimension(
            "naive render supports packed Bayer input (1,4,h,w)".into(),
        ));
    }
    let d = packed.data();
    let plane = h * w;
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        out[i] = d[i];
        out[plane + i] = 0.5 * (d[plane + i] + d[2 * plane + i]);
        out[2 * plane + i] = d[3 * plane + i];
    }
    drop(d);
    Tensor::from_vec(&[3, h, w], out)
}

pub fn enhance(args: EnhanceArgs) -> Result<()> {
    let meta = args
        .meta
        .clone()
        .unwrap_or_else(|| args.input.with_extension("meta"));
    let frame = read_raw_frame(&args.input, &meta)?;
    let ratio = match args.ratio {
        Some(v) => v,
        None => frame.exposure_ratio,
    };
    let params = illumination_from_flags(args.r, args.alpha, args.beta, args.beta_one, ratio)?;

    let normalized = normalize_black_level::<f32>(&frame);
    let gain = rimef_gain(&normalized, &params)?;
    let amplified = amplify(&normalized, &gain)?;
    let packed = pack(&amplified, &frame.cfa)?;

    let rgb = if args.bypass_network {
        naive_render(&packed)?
    } else {
        let config_path = args.config.as_ref().ok_or_else(|| {
            Error::Parameter("network enhancement needs --config (or use --bypass-network)".into())
        })?;
        let checkpoint = args.checkpoint.as_ref().ok_or_else(|| {
            Error::Parameter(
                "network enhancement needs --checkpoint (or use --bypass-network)".into(),
            )
        })?;
        let cfg = load_config(config_path)?;
        if cfg.model.in_channels != frame.cfa.packed_channels() {
            return Err(Error::Parameter(format!(
                "model expects {} input channels but the frame packs into {}",
                cfg.model.in_channels,
                frame.cfa.packed_channels()
            )));
        }
        let model: McnModel<f32> = McnModel::init(cfg.model, 0)?;
        load_checkpoint(checkpoint, &model)?;
        let outputs = model.forward(&packed)?;
        let out = outputs
            .back_output
            .unwrap_or_else(|| outputs.sgn_outputs.last().expect("at least one SGN").clone());
        let [_, c, h, w] = [
            out.shape()[0],
            out.shape()[1],
            out.shape()[2],
            out.shape()[3],
        ];
        clamp01(&out).reshape(&[c, h, w])?
    };
    save_tensor(&args.out, &rgb)?;
    write_ppm_preview(&args.out.with_extension("ppm"), &rgb)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn pick_output<'a>(outputs: &'a McnOutputs<f32>, which: &str) -> Result<&'a Tensor<f32>> {
    match which {
        "back" => outputs
            .back_output
            .as_ref()
            .ok_or_else(|| Error::Parameter("model has no back connection output".into())),
        "plain" => Ok(&outputs.sgn_outputs[0]),
        other => {
            let index: usize = other
                .strip_prefix("sgn")
                .unwrap_or(other)
                .parse()
                .map_err(|_| {
                    Error::Parameter(format!(
                        "--output must be 'back', 'plain' or an SGN index, got '{other}'"
                    ))
                })?;
            outputs.sgn_outputs.get(index - 1).ok_or_else(|| {
                Error::Parameter(format!("model has no SGN {index}"))
            })
        }
    }
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let model: McnModel<f32> = McnModel::init(cfg.model, 0)?;
    load_checkpoint(&args.checkpoint, &model)?;
    let manifest = load_dataset(&args.manifest)?;

    if let Some(dir) = &args.dump_features {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let mut report = MetricsReport::new();
    for entry in &manifest.entries {
        let frame = read_raw_frame(&entry.input, &entry.meta)?;
        let mut params = IlluminationParams::training(frame.exposure_ratio);
        if let Some(beta) = args.beta {
            params.beta = beta;
            params.validate()?;
        }
        let normalized = normalize_black_level::<f32>(&frame);
        let gain = rimef_gain(&normalized, &params)?;
        let amplified = amplify(&normalized, &gain)?;
        let packed = pack(&amplified, &frame.cfa)?;
        let target: Tensor<f32> = mcn_core::tensor::io::load_tensor(&entry.target)?;
        let [c, h, w] = [target.shape()[0], target.shape()[1], target.shape()[2]];
        let target = target.reshape(&[1, c, h, w])?;

        let outputs = model.forward(&packed)?;
        let chosen = clamp01(pick_output(&outputs, &args.output)?);
        let id = entry
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".raw").to_string())
            .unwrap_or_else(|| "sample".into());
        report.push(
            id.clone(),
            psnr(&chosen, &target, 1.0)?,
            ssim(&chosen, &target)?,
        );

        if let Some(dir) = &args.dump_features {
            for (si, feats) in outputs.features.iter().enumerate() {
                for (bi, f) in feats.iter().enumerate() {
                    let name = format!("{id}.sgn{}.block{}.mcnt", si + 1, bi + 1);
                    save_tensor(&dir.join(name), f)?;
                }
            }
            if let Some(back_feats) = &outputs.back_features {
                for (bi, f) in back_feats.iter().enumerate() {
                    let name = format!("{id}.sgn1back.block{}.mcnt", bi + 1);
                    save_tensor(&dir.join(name), f)?;
                }
            }
        }
    }
    std::fs::write(&args.out, report.to_csv())
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!(
        "evaluated {} images: mean psnr {:.3} dB, mean ssim {:.4}",
        report.len(),
        report.mean_psnr(),
        report.mean_ssim()
    );
    Ok(())
}

pub fn rimef_curve(args: RimefCurveArgs) -> Result<()> {
    if args.samples < 2 {
        return Err(Error::Parameter("need at least 2 samples".into()));
    }
    let params = illumination_from_flags(Some(args.r), Some(args.alpha), args.beta, false, args.ratio)?;
    let mut csv = String::from("x,m_f,M\n");
    for k in 0..args.samples {
        let x = k as f64 / (args.samples - 1) as f64;
        let mf = illumination_map(x, params.r, params.alpha);
        let gain = gain_at(x, &params);
        csv.push_str(&format!("{x},{mf},{gain}\n"));
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::io(args.out.display().to_string(), e))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut seed = args.seed;
    if let Some(env) = env_seed()? {
        seed = env;
    }
    let ratios: Vec<f64> = args
        .ratios
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parameter(format!("ratio '{s}' is not a number")))
        })
        .collect::<Result<_>>()?;
    for r in &ratios {
        if *r < 1.0 {
            return Err(Error::Parameter(format!("ratio {r} must be >= 1")));
        }
    }
    let cfa = match args.cfa.as_str() {
        "bayer" => Cfa::bayer_rggb(),
        "xtrans" => Cfa::xtrans_default(),
        other => return Err(Error::Parameter(format!("unknown cfa '{other}'"))),
    };
    let manifest = build_dataset(
        &args.out_dir,
        args.scenes,
        args.size,
        seed,
        &cfa,
        &SensorModel::default(),
        &ratios,
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}
