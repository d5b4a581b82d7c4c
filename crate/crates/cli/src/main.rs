//! `scnseg`: phantom generation, training, inference, evaluation and
//! architecture inspection for the two-stage segmentation engine.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scnseg::arch::{
    build_scn, build_unet, count_flops, count_parameters, load_weights, plan_memory, Network, SCN_LABELS,
};
use scnseg::config::Config;
use scnseg::metrics::evaluate;
use scnseg::pipeline::infer_with;
use scnseg::train::{generate_phantom, save_training_checkpoint, train_model, Objective, Sample};
use scnseg::volume::{read_labels, read_volume, write_metaimage};
use scnseg::Rng;

/// Reference figures published for the full-size networks.
const PAPER_LOC_PARAMS: usize = 637_474;
const PAPER_SEG_PARAMS: usize = 1_270_090;
/// `(arch, [z, y, x], FLOPs)`.
const PAPER_FLOPS: [(Arch, [usize; 3], u64); 4] = [
    (Arch::Loc, [32, 32, 32], 8_613_207_612),
    (Arch::Loc, [256, 80, 80], 430_660_377_660),
    (Arch::Seg, [32, 32, 32], 8_797_627_020),
    (Arch::Seg, [160, 128, 160], 879_762_672_300),
];

const MANIFEST: &str = "manifest.tsv";

#[derive(Parser)]
#[command(name = "scnseg", version, about = "Two-stage multi-organ CT segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable), e.g. --set train.iterations=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for o in &self.overrides {
            c.set_pair(o)?;
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Loc,
    Seg,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset (image_NNN.mha, label_NNN.mha, manifest.tsv)
    PhantomGen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a network on a phantom-gen style dataset
    Train {
        #[arg(long, value_enum)]
        objective: Arch,
        /// Dataset directory containing manifest.tsv
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoint.scnw and loss.log
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Segment one image with a localization and a segmentation checkpoint
    Infer {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        loc_model: Option<PathBuf>,
        #[arg(long)]
        seg_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tab-separated run statistics
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score predictions against ground truth (matching file names)
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// Directory for report.tsv and report.txt
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter count, FLOPs and the activation memory plan
    Inspect {
        #[arg(long, value_enum)]
        arch: Arch,
        /// Network input size as ZxYxX
        #[arg(long, value_parser = parse_dims)]
        dims: [usize; 3],
        /// Compare with the published parameter and FLOP figures
        #[arg(long)]
        compare_paper: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad dims `{s}`, expected ZxYxX")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        &[z, y, x] if z > 0 && y > 0 && x > 0 => Ok([z, y, x]),
        _ => Err(format!("bad dims `{s}`, expected three positive integers ZxYxX")),
    }
}

fn build(arch: Arch, cfg: &Config) -> Result<Network> {
    Ok(match arch {
        Arch::Loc => build_unet(&cfg.loc_arch)?,
        Arch::Seg => build_scn(&cfg.seg_local, &cfg.seg_spatial, SCN_LABELS)?,
    })
}

fn phantom_gen(count: usize, out_dir: &Path, seed: u64, cfg: &Config) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let root = Rng::new(seed);
    let mut manifest = String::new();
    for i in 0..count {
        let (img, lab) = generate_phantom(&cfg.phantom, &mut root.fork(i as u64))?;
        let (iname, lname) = (format!("image_{i:03}.mha"), format!("label_{i:03}.mha"));
        write_metaimage(&img, out_dir.join(&iname))?;
        write_metaimage(&lab, out_dir.join(&lname))?;
        manifest += &format!("case_{i:03}\t{iname}\t{lname}\n");
    }
    fs::write(out_dir.join(MANIFEST), manifest).with_context(|| format!("cannot write manifest in {}", out_dir.display()))?;
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read dataset manifest {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            ensure!(f.len() == 3, "malformed manifest line `{l}`");
            Ok(Sample { image: read_volume(dir.join(f[1]))?, labels: read_labels(dir.join(f[2]))? })
        })
        .collect()
}

fn train(objective: Arch, data: &Path, out: &Path, cfg: &Config) -> Result<()> {
    let dataset = load_dataset(data)?;
    ensure!(!dataset.is_empty(), "dataset {} has no cases", data.display());
    let mut net = build(objective, cfg)?;
    net.init_he(&mut Rng::new(cfg.train.seed).fork(u64::MAX));
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut log = fs::File::create(out.join("loss.log")).context("cannot create loss.log")?;
    let obj = match objective {
        Arch::Loc => Objective::Localization,
        Arch::Seg => Objective::Segmentation,
    };
    let outcome = train_model(&dataset, &mut net, &cfg.train, obj, Some(&mut log))?;
    log.flush()?;
    save_training_checkpoint(&net, &outcome.ema, &out.join("checkpoint.scnw"))?;
    Ok(())
}

fn infer(image: &Path, loc: Option<&Path>, seg: Option<&Path>, out: &Path, stats: Option<&Path>, cfg: &Config) -> Result<()> {
    let loc = loc.or(cfg.model_loc.as_deref()).context("no localization model (--loc-model or model.loc)")?;
    let seg = seg.or(cfg.model_seg.as_deref()).context("no segmentation model (--seg-model or model.seg)")?;
    let vol = read_volume(image)?;
    let mut loc_net = build(Arch::Loc, cfg)?;
    load_weights(&mut loc_net, loc).with_context(|| format!("loading {}", loc.display()))?;
    let mut seg_net = build(Arch::Seg, cfg)?;
    load_weights(&mut seg_net, seg).with_context(|| format!("loading {}", seg.display()))?;
    let (labels, run) = infer_with(&vol, &loc_net, &seg_net, cfg.pipeline())?;
    write_metaimage(&labels, out)?;
    if let Some(p) = stats {
        fs::write(p, run.to_tsv()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(())
}

fn is_image(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("mha" | "mhd"))
}

/// Ground-truth cases: `label_*` images if the directory has any, else every image.
fn gt_cases(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
        .collect();
    names.sort();
    if names.iter().any(|n| n.starts_with("label_")) {
        names.retain(|n| n.starts_with("label_"));
    }
    Ok(names)
}

fn eval(pred_dir: &Path, gt_dir: &Path, out: Option<&Path>) -> Result<()> {
    let names = gt_cases(gt_dir)?;
    ensure!(!names.is_empty(), "no ground-truth images in {}", gt_dir.display());
    let missing: Vec<&String> = names.iter().filter(|n| !pred_dir.join(n).exists()).collect();
    if !missing.is_empty() {
        bail!("missing predictions for: {}", missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "));
    }
    let cases = names
        .iter()
        .map(|n| Ok((n.clone(), read_labels(gt_dir.join(n))?, read_labels(pred_dir.join(n))?)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&cases)?;
    print!("{}", report.to_text());
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("report.tsv"), report.to_tsv())?;
        fs::write(o.join("report.txt"), report.to_text())?;
    }
    Ok(())
}

fn inspect(arch: Arch, dims: [usize; 3], compare: bool, cfg: &Config) -> Result<()> {
    let net = build(arch, cfg)?;
    let params = count_parameters(&net);
    let flops = count_flops(&net, dims)?;
    let plan = plan_memory(&net, dims)?;
    let name = match arch {
        Arch::Loc => "localization",
        Arch::Seg => "segmentation",
    };
    println!("arch\t{name}");
    println!("dims\t{}x{}x{}", dims[0], dims[1], dims[2]);
    println!("parameters\t{params}");
    println!("flops\t{flops}");
    println!("peak_arena_bytes\t{}", plan.peak_bytes);
    println!("naive_activation_bytes\t{}", plan.naive_bytes);
    println!("arena_ratio\t{:.4}", plan.peak_bytes as f64 / plan.naive_bytes as f64);
    if compare {
        let paper = if arch == Arch::Loc { PAPER_LOC_PARAMS } else { PAPER_SEG_PARAMS };
        println!(
            "paper_parameters\t{paper}\tcomputed\t{params}\tdelta\t{}\trelative\t{:+.4}",
            params as i64 - paper as i64,
            (params as f64 - paper as f64) / paper as f64
        );
        for (a, d, f) in PAPER_FLOPS.iter().filter(|(a, ..)| *a == arch) {
            let ours = count_flops(&build(*a, cfg)?, *d)?;
            println!(
                "paper_flops@{}x{}x{}\t{f}\tcomputed\t{ours}\tratio\t{:.6}",
                d[0],
                d[1],
                d[2],
                ours as f64 / *f as f64
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PhantomGen { count, out_dir, seed, cfg } => phantom_gen(count, &out_dir, seed, &cfg.load()?),
        Command::Train { objective, data, out, cfg } => train(objective, &data, &out, &cfg.load()?),
        Command::Infer { image, loc_model, seg_model, out, stats, cfg } => infer(
            &image,
            loc_model.as_deref(),
            seg_model.as_deref(),
            &out,
            stats.as_deref(),
            &cfg.load()?,
        ),
        Command::Eval { pred_dir, gt_dir, out } => eval(&pred_dir, &gt_dir, out.as_deref()),
        Command::Inspect { arch, dims, compare_paper, cfg } => inspect(arch, dims, compare_paper, &cfg.load()?),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    // Internal assertions (e.g. non-finite activations in debug builds) are
    // runtime errors too: report them and exit 1 rather than aborting with 101.
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        eprintln!("error: {msg}");
    }));
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(1),
    }
}
