use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use resqu::checkpoint::Checkpoint;
use resqu::config::RunConfig;
use resqu::dataset::{load_image, save_png, split_dataset, Dataset};
use resqu::load_corpus;
use resqu::pipeline::{
    evaluate, make_pairs, probe_conditioning, run_ablation_steps, run_sr, run_stage, run_training, write_ablation_csv,
    Models, Pair, Stage,
};
use resqu_core::degradation::bicubic_resize;
use resqu_core::metrics::{psnr_y, ssim_y};
use resqu_core::qwt::{energy_profile, qwt_forward, qwt_planes};

/// Overrides the output root of every run.
const OUT_ENV: &str = "RESQU_OUT";

#[derive(Parser)]
#[command(name = "resqu", version, about = "Wavelet-conditioned latent diffusion super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quaternion wavelet planes and sub-band energies of one image.
    Decompose {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value = "decomposition")]
        output: PathBuf,
    },
    /// Writes degraded LR/HR PNG pairs for the corpus.
    MakePairs(Common),
    PretrainQuave(Common),
    PretrainVae(Common),
    /// Diffusion adapter, conditioning encoder and CFW training.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run the embedder and autoencoder stages first.
        #[arg(long)]
        pretrain_all: bool,
    },
    /// Super-resolves one LR image.
    Sample {
        #[command(flatten)]
        common: Common,
        input: PathBuf,
        #[arg(long, default_value = "sr.png")]
        output: PathBuf,
        /// Ground truth for PSNR/SSIM reporting.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Metrics on the held-out split against bicubic upsampling.
    Eval(Common),
    AblateSteps {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "20,50,100,200")]
        steps: Vec<usize>,
    },
    ProbeConditioning {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,100,250,500,750,999")]
        t: Vec<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Desk,
    Full,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Abort on the first undecodable image.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale_factor: Option<usize>,
    #[arg(long)]
    lr_size: Option<usize>,
    #[arg(long)]
    hr_size: Option<usize>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    quave_steps: Option<usize>,
    #[arg(long)]
    vae_steps: Option<usize>,
    #[arg(long)]
    cfw_steps: Option<usize>,
    #[arg(long)]
    sample_steps: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    x0_clip: Option<f64>,
    #[arg(long)]
    cfw_w: Option<f64>,
    #[arg(long)]
    synthetic_count: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(Preset::Desk)) => RunConfig::desk(),
            (None, Some(Preset::Full)) => RunConfig::full(),
            (None, _) => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f.clone() { cfg.$f = v; })*};
        }
        set!(
            out_dir,
            seed,
            scale_factor,
            lr_size,
            hr_size,
            total_steps,
            lr,
            batch_size,
            quave_steps,
            vae_steps,
            cfw_steps,
            sample_steps,
            eta,
            x0_clip,
            cfw_w,
            synthetic_count
        );
        if self.data_dir.is_some() {
            cfg.data_dir = self.data_dir.clone();
        }
        if let Some(root) = std::env::var_os(OUT_ENV) {
            let leaf = cfg.out_dir.file_name().map(PathBuf::from).unwrap_or_else(|| "run".into());
            cfg.out_dir = Path::new(&root).join(leaf);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `(train, validation)` pairs for the configured corpus.
fn pairs(cfg: &RunConfig, strict: bool) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let items = load_corpus(cfg, strict)?;
    let ds = Dataset {
        items,
        skipped: Vec::new(),
    };
    let (train, val) = split_dataset(&ds);
    Ok((make_pairs(cfg, &train)?, make_pairs(cfg, &val)?))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Decompose { input, levels, output } => decompose(&input, levels, &output),
        Cmd::MakePairs(c) => {
            let cfg = c.resolve()?;
            let items = load_corpus(&cfg, c.strict)?;
            let all = make_pairs(&cfg, &items)?;
            for p in &all {
                let stem = Path::new(&p.name).file_stem().and_then(|s| s.to_str()).unwrap_or(&p.name);
                save_png(&cfg.out_dir.join("pairs/hr").join(format!("{stem}.png")), &p.hr)?;
                save_png(&cfg.out_dir.join("pairs/lr").join(format!("{stem}.png")), &p.lr)?;
            }
            cfg.echo(&cfg.out_dir)?;
            println!("wrote {} pairs under {}", all.len(), cfg.out_dir.join("pairs").display());
            Ok(())
        }
        Cmd::PretrainQuave(c) => pretrain(&c, Stage::Quave),
        Cmd::PretrainVae(c) => pretrain(&c, Stage::Vae),
        Cmd::Train { common, pretrain_all } => {
            let cfg = common.resolve()?;
            let (train, _) = pairs(&cfg, common.strict)?;
            let (_, logs) = run_training(&cfg, &train, pretrain_all)?;
            for (stage, log) in logs {
                println!(
                    "{:<9} {:>5} steps  final loss {:.5}  {:.1}s",
                    stage.name(),
                    log.losses.len(),
                    log.smoothed(log.losses.len(), 50),
                    log.wall_time_s
                );
            }
            Ok(())
        }
        Cmd::Sample {
            common,
            input,
            output,
            reference,
        } => {
            let cfg = common.resolve()?;
            let m = Models::load_all(&cfg)?;
            let lr = load_image(&input)?;
            let sr = run_sr(&cfg, &m, &lr, cfg.sample_steps, cfg.seed)?;
            save_png(&output, &sr)?;
            println!("wrote {}x{} image to {}", sr.width(), sr.height(), output.display());
            if let Some(r) = reference {
                let hr = load_image(&r)?;
                let bic = bicubic_resize(&lr, hr.height(), hr.width())?;
                println!("psnr_y {:.4} ssim_y {:.4}", psnr_y(&hr, &sr)?, ssim_y(&hr, &sr)?);
                println!("bicubic psnr_y {:.4} ssim_y {:.4}", psnr_y(&hr, &bic)?, ssim_y(&hr, &bic)?);
            }
            Ok(())
        }
        Cmd::Eval(c) => {
            let cfg = c.resolve()?;
            let m = Models::load_all(&cfg)?;
            let (_, val) = pairs(&cfg, c.strict)?;
            let ev = evaluate(&cfg, &m, &val, cfg.sample_steps, Some(&cfg.out_dir.join("eval")))?;
            let path = cfg.out_dir.join("eval.csv");
            ev.write_csv(&path)?;
            println!(
                "{} images  psnr_y {:.4} (bicubic {:.4})  ssim_y {:.4} (bicubic {:.4})  -> {}",
                val.len(),
                ev.ours.mean_psnr(),
                ev.bicubic.mean_psnr(),
                ev.ours.mean_ssim(),
                ev.bicubic.mean_ssim(),
                path.display()
            );
            Ok(())
        }
        Cmd::AblateSteps { common, steps } => {
            let cfg = common.resolve()?;
            let m = Models::load_all(&cfg)?;
            let (_, val) = pairs(&cfg, common.strict)?;
            let rows = run_ablation_steps(&cfg, &m, &val, &steps)?;
            let path = cfg.out_dir.join("ablation_steps.csv");
            write_ablation_csv(&path, &rows)?;
            for r in &rows {
                println!("{:>4} steps  psnr_y {:.4}  ssim_y {:.4}  {:.2}s", r.steps, r.psnr_y, r.ssim_y, r.wall_time_s);
            }
            Ok(())
        }
        Cmd::ProbeConditioning { common, t } => {
            let cfg = common.resolve()?;
            let m = Models::load_all(&cfg)?;
            let (_, val) = pairs(&cfg, common.strict)?;
            let rows = probe_conditioning(&cfg, &m, &val, &t)?;
            let path = cfg.out_dir.join("probe_conditioning.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "strength"])?;
            for (t, s) in &rows {
                w.write_record([t.to_string(), format!("{s:.9}")])?;
                println!("t {t:>4}  strength {s:.6}");
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn pretrain(c: &Common, stage: Stage) -> Result<()> {
    let cfg = c.resolve()?;
    cfg.echo(&cfg.out_dir)?;
    let (train, _) = pairs(&cfg, c.strict)?;
    let mut m = Models::init(&cfg)?;
    let log = run_stage(&cfg, &mut m, stage, &train)?;
    let path = stage.checkpoint_path(&cfg.out_dir);
    // Read back what was written so a bad file fails here, not later.
    Checkpoint::load(&path)?.expect_kind(stage.name())?;
    println!(
        "{}: {} steps, loss {:.5} -> {:.5}, {:.1}s, checkpoint {}",
        stage.name(),
        log.losses.len(),
        log.smoothed(log.losses.len().min(20), 20),
        log.smoothed(log.losses.len(), 20),
        log.wall_time_s,
        path.display()
    );
    Ok(())
}

fn decompose(input: &Path, levels: usize, out: &Path) -> Result<()> {
    if levels == 0 {
        bail!("levels must be positive");
    }
    let img = load_image(input)?;
    let y = resqu_core::metrics::luma(&img)?;
    let d = qwt_forward(&y, levels).with_context(|| format!("decomposing {}", input.display()))?;
    std::fs::create_dir_all(out)?;
    for level in 1..=levels {
        let planes = qwt_planes(&d, level)?;
        for (k, p) in planes.split_channels().iter().enumerate() {
            let (lo, hi) = p.data().iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            save_png(&out.join(format!("level{level}_plane{k:02}.png")), &p.map(|v| (v - lo) / span))?;
        }
    }
    let e = energy_profile(&d);
    let mut w = csv::Writer::from_path(out.join("energy.csv"))?;
    w.write_record(["level", "band", "quaternion_energy", "real_energy"])?;
    for (i, (q, r)) in e.quaternion.iter().zip(&e.real).enumerate() {
        let band = ["h", "v", "d"][i % 3];
        w.write_record([(i / 3 + 1).to_string(), band.to_string(), format!("{q:.9e}"), format!("{r:.9e}")])?;
    }
    w.flush()?;
    println!("wrote {} levels to {}", levels, out.display());
    Ok(())
}
